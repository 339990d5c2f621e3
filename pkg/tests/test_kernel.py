import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_subseq_kernel
from ptrca.kernel import (KernelMatrix, KernelParams, blended_kernel, kernel_matrix, normalized_kernel,
                          subseq_kernel_p)
from ptrca.ingest import TokenDictionary


def test_examples():
    assert subseq_kernel_p("ab", "ab", 2, 1.0) == 1.0
    # brute force: "ca" is the only shared length-2 subsequence, span 2 on each side
    assert brute_subseq_kernel("cat", "car", 2, 0.5) == pytest.approx(0.0625, abs=1e-15)
    assert subseq_kernel_p("cat", "car", 2, 0.5) == pytest.approx(0.0625, abs=1e-15)
    assert subseq_kernel_p("abc", "xyz", 1, 0.3) == 0.0


def test_blend_and_normalization_examples():
    oracle = brute_subseq_kernel("cat", "car", 1, 0.5) + brute_subseq_kernel("cat", "car", 2, 0.5)
    assert oracle == pytest.approx(0.5625, abs=1e-15)
    assert blended_kernel("cat", "car", KernelParams(2, 0.5, (1, 1))) == pytest.approx(oracle, abs=1e-15)
    assert blended_kernel("cat", "car", KernelParams(3, 0.7, (1, 0, 0))) == subseq_kernel_p("cat", "car", 1, 0.7)
    params = KernelParams(2, 1.0, (0, 1))
    assert brute_subseq_kernel("cat", "cat", 2, 1.0) == 3
    assert normalized_kernel("cat", "car", params) == pytest.approx(1 / 3, abs=1e-15)
    assert normalized_kernel("cat", "cat", params) == 1.0
    assert normalized_kernel("abc", "xyz", KernelParams()) == 0.0


def test_errors_and_empty():
    with pytest.raises(ValueError):
        subseq_kernel_p("a", "a", 0, 0.5)
    with pytest.raises(ValueError):
        subseq_kernel_p("a", "a", 1, 0.0)
    assert subseq_kernel_p("", "abc", 1, 0.5) == 0.0
    with pytest.raises(ValueError):
        KernelParams(2, 0.5, (0, 0))
    with pytest.raises(ValueError):
        KernelParams(2, 0.5, (1,))


def test_zero_self_kernel_warns():
    params = KernelParams(3, 0.5, (0, 0, 1))
    with pytest.warns(RuntimeWarning):
        assert normalized_kernel("ab", "abc", params) == 0.0
    with pytest.warns(RuntimeWarning):
        assert normalized_kernel("ab", "ab", params) == 1.0


@pytest.mark.parametrize("p", [1, 2, 3])
def test_oracle_small_exhaustive(p):
    words = ["".join(w) for n in range(0, 4) for w in itertools.product("ab", repeat=n)]
    for s in words:
        for t in words:
            assert abs(subseq_kernel_p(s, t, p, 0.6) - brute_subseq_kernel(s, t, p, 0.6)) <= 1e-12


strings = st.text(alphabet="abc", max_size=6)


@given(strings, strings, st.integers(1, 3), st.sampled_from([0.1, 0.5, 0.8, 1.0]))
def test_oracle_equivalence(s, t, p, lam):
    assert abs(subseq_kernel_p(s, t, p, lam) - brute_subseq_kernel(s, t, p, lam)) <= 1e-12


@given(st.text(max_size=12), st.text(max_size=12), st.integers(1, 4), st.floats(0.05, 1.0))
def test_symmetry_bit_exact(s, t, p, lam):
    assert subseq_kernel_p(s, t, p, lam) == subseq_kernel_p(t, s, p, lam)


def test_monotone_in_decay():
    grid = np.round(np.arange(0.1, 1.01, 0.1), 10)
    for s, t in [("axb", "ab"), ("abcab", "acb"), ("E1|R1", "E1|R2")]:
        vals = [blended_kernel(s, t, KernelParams.uniform(3, lam)) for lam in grid]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_matrix_examples():
    K = kernel_matrix(TokenDictionary(("E1|R1",)))
    assert K.values.tolist() == [[1.0]]
    K = kernel_matrix(["E1|R1", "E1|R2", "Z9|Q7"]).values
    assert K[0, 1] > K[0, 2]
    assert np.array_equal(K, K.T)
    assert np.all(np.diag(K) == 1.0)
    assert np.all((K >= 0) & (K <= 1))


def test_matrix_matches_pairwise(small_fab):
    toks = sorted({s.attrs["eqp"] + "|" + s.attrs["recipe"] for t in small_fab.trajectories for s in t.steps})[:40]
    params = KernelParams(3, 0.7, (0.5, 1.0, 2.0))
    K = kernel_matrix(toks, params).values
    ref = np.array([[normalized_kernel(a, b, params) for b in toks] for a in toks])
    assert np.max(np.abs(K - ref)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.lists(st.text(alphabet="abcd|", min_size=1, max_size=10), min_size=1, max_size=30, unique=True),
       st.sampled_from([0.3, 0.8, 1.0]))
def test_psd(tokens, lam):
    K = kernel_matrix(tokens, KernelParams.uniform(3, lam)).values
    ev = np.linalg.eigvalsh(K)
    assert ev.min() >= -1e-8 * ev.max()


def test_csv_roundtrip(tmp_path):
    d = TokenDictionary(("ab|c", "a|bc", "zz|z"))
    K = kernel_matrix(d)
    K.to_csv(tmp_path / "k.csv")
    again = KernelMatrix.from_csv(tmp_path / "k.csv", d)
    assert np.array_equal(again.values, K.values) and again.params == K.params
    with pytest.raises(ValueError, match="different token dictionary"):
        KernelMatrix.from_csv(tmp_path / "k.csv", TokenDictionary(("x",)))
