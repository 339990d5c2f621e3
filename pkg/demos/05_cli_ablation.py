# %% [markdown]
# # The whole pipeline from the command line
#
# `ptrca` runs every stage from a working directory, from simulated data
# to attribution reports and the embedding comparison.  Artifacts carry hashes of their inputs, so later
# commands reuse what is still valid.  This script drives the commands
# through `ptrca.cli.main`; the shell equivalent is shown in each comment.

# %%
import json
import tempfile
from pathlib import Path

from ptrca.cli import main

work = Path(tempfile.mkdtemp(prefix="ptrca_demo_"))
flags = ["--workdir", str(work), "--seed", "0"]

# %% ptrca simulate --workdir W --seed 0      (800 wafers, one planted culprit)
main(["simulate", *flags])

# %% ptrca ablation --workdir W               (held-out Pearson r per embedding)
main(["ablation", *flags])

# %% ptrca train / ptrca attribute --wafer ...
main(["train", *flags])
wafer = ["W0001"]
main(["attribute", *flags, "--wafer", wafer[0]])
print(json.loads((work / "reports" / f"{wafer[0]}.json").read_text())["prediction"])
print(sorted(p.name for p in work.iterdir()))
