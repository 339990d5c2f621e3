# %% [markdown]
# # From a kernel matrix to token vectors
#
# The eigendecomposition of the kernel matrix gives every token a vector
# whose dot products reproduce the kernel.  Keeping only the leading
# components gives a compact embedding; similar tokens land close together.

# %%
import numpy as np

from ptrca import DEFAULT_SCHEMA, SynthConfig, baseline_embedding, build_dictionary, embed_tokens, generate_fab
from ptrca.kernel import kernel_matrix

data = generate_fab(SynthConfig(n_wafers=80, route_length=(10, 20), recipes_per_family=3, seed=1))
dictionary = build_dictionary(data.trajectories, DEFAULT_SCHEMA)
K = kernel_matrix(dictionary)
print(f"{dictionary.size} distinct tokens")

# %% Spectrum: how much of the kernel the first few components carry.
emb = embed_tokens(K, dim=16)
lam = np.asarray(emb.spectrum)
print("leading eigenvalues:", np.round(lam[:8], 2))
print(f"share of trace in 16 components: {lam[:16].sum() / lam[lam > 0].sum():.1%}")

# %% Nearest neighbours of one token in embedding space.
X = emb.vectors
q = 0
d = np.linalg.norm(X - X[q], axis=1)
print("query:", dictionary.tokens[q])
for i in np.argsort(d)[1:4]:
    print(f"  {d[i]:.3f}  {dictionary.tokens[i]}")

# %% The two baselines used in the ablation.
print("one-hot shape:", baseline_embedding(dictionary, "onehot").vectors.shape)
print("constant shape:", baseline_embedding(dictionary, "constant").vectors.shape)
