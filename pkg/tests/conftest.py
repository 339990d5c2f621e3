import itertools

import numpy as np
import pytest

from ptrca.ingest import DEFAULT_SCHEMA, ProcessStep, Trajectory
from ptrca.synth import SynthConfig, generate_fab


def brute_subseq_kernel(s, t, p, lam):
    """Enumerate every index tuple of length p in both strings."""
    total = 0.0
    for i in itertools.combinations(range(len(s)), p):
        u = "".join(s[a] for a in i)
        for j in itertools.combinations(range(len(t)), p):
            if u == "".join(t[b] for b in j):
                total += lam ** ((i[-1] - i[0] + 1) + (j[-1] - j[0] + 1))
    return total


def make_traj(wafer_id, tokens, hours, t0=1_700_000_000):
    """Trajectory whose steps carry ``eqp`` = token and the given waits (hours) before each step."""
    steps, t = [], t0
    for k, (tok, h) in enumerate(zip(tokens, hours), 1):
        t += int(round(h * 3600))
        attrs = dict.fromkeys(DEFAULT_SCHEMA, "x")
        attrs["eqp"] = tok
        steps.append(ProcessStep(wafer_id, k, t, attrs))
    return Trajectory(wafer_id, steps)


@pytest.fixture(scope="session")
def small_fab():
    return generate_fab(SynthConfig(n_wafers=120, route_length=(8, 16), recipes_per_family=3,
                                    recipe_split_prob=0.2, lot_size=10, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_fab_states(small_fab):
    from ptrca.ingest import build_dictionary
    from ptrca.kernel import kernel_matrix
    from ptrca.proc2vec import embed_tokens
    from ptrca.route2vec import encode_many
    d = build_dictionary(small_fab.trajectories, DEFAULT_SCHEMA)
    emb = embed_tokens(kernel_matrix(d), 8)
    states = encode_many(small_fab.trajectories, emb, DEFAULT_SCHEMA)
    return states, [small_fab.labels[s.wafer_id] for s in states]
