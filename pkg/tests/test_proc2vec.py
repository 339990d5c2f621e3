import numpy as np
import pytest

from ptrca.ingest import TokenDictionary
from ptrca.kernel import kernel_matrix
from ptrca.proc2vec import EmbeddingTable, baseline_embedding, eigendecompose, embed_tokens


def random_gram(rng, n, rank=None):
    A = rng.normal(size=(n, rank or n))
    return A @ A.T


def test_identity_spectrum():
    eig = eigendecompose(np.eye(3))
    assert np.allclose(eig.eigenvalues, [1, 1, 1])


def test_rank_one():
    eig = eigendecompose(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert eig.eigenvalues == pytest.approx([2.0, 0.0], abs=1e-14)
    assert eig.eigenvectors[:, 0] == pytest.approx([2 ** -0.5, 2 ** -0.5])


def test_random_reconstruction_and_orthonormality(rng):
    K = random_gram(rng, 20)
    eig = eigendecompose(K)
    lam, V = eig.eigenvalues, eig.eigenvectors
    assert np.all(np.diff(lam) <= 0)
    assert np.linalg.norm(K - V @ np.diag(lam) @ V.T) <= 1e-8 * np.linalg.norm(K)
    assert np.max(np.abs(V.T @ V - np.eye(20))) <= 1e-8
    assert np.max(np.abs(K @ V - V * lam)) <= 1e-8 * np.abs(lam).max()


def test_sign_convention(rng):
    V = eigendecompose(random_gram(rng, 12)).eigenvectors
    pivots = V[np.argmax(np.abs(V), axis=0), np.arange(12)]
    assert np.all(pivots >= 0)
    # flipping the input's basis does not change the result
    again = eigendecompose(random_gram(np.random.default_rng(12345), 12)).eigenvectors
    assert np.array_equal(V, again)


def test_rejects_asymmetric():
    with pytest.raises(ValueError, match="symmetric"):
        eigendecompose(np.array([[1.0, 0.5], [0.4, 1.0]]))


def test_embed_examples():
    X = embed_tokens(np.eye(2), 2).vectors
    assert np.allclose(X @ X.T, np.eye(2))
    with pytest.warns(RuntimeWarning):
        X = embed_tokens(np.ones((2, 2)), 2).vectors
    assert X[:, 0] == pytest.approx([1.0, 1.0])
    assert np.all(X[:, 1] == 0.0)
    X1 = embed_tokens(np.ones((2, 2)), 1).vectors
    assert np.abs(X1).ravel() == pytest.approx([1.0, 1.0])
    with pytest.raises(ValueError):
        embed_tokens(np.eye(2), 0)


def test_clamped_reconstruction(rng):
    tokens = [f"E{rng.integers(5)}|R{rng.integers(10)}|T{i % 3}" for i in range(10)]
    tokens = list(dict.fromkeys(tokens))
    K = kernel_matrix(tokens).values
    # oracle: clamp negative eigenvalues, rebuild, compare
    lam, V = np.linalg.eigh(K)
    K_plus = (V * np.clip(lam, 0, None)) @ V.T
    X = embed_tokens(K, len(tokens)).vectors
    assert np.linalg.norm(X @ X.T - K_plus) <= 1e-6 * np.linalg.norm(K_plus)


def test_negative_eigenvalues_clamped():
    K = np.array([[1.0, 0.0], [0.0, -1e-3]])
    with pytest.warns(RuntimeWarning):
        emb = embed_tokens(K, 2)
    assert np.all(np.isfinite(emb.vectors))
    assert np.all(emb.vectors[:, 1] == 0)


def test_distances_follow_similarity(rng):
    tokens = list(dict.fromkeys(f"E{rng.integers(4)}|R{rng.integers(6)}" for _ in range(30)))
    K = kernel_matrix(tokens).values
    X = embed_tokens(K, len(tokens)).vectors
    n = len(tokens)
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    expected = np.diag(K)[:, None] + np.diag(K)[None, :] - 2 * K
    assert np.max(np.abs(d2 - expected)) <= 1e-6
    for i in range(n):
        for j in range(n):
            for l in range(n):
                if K[i, j] > K[i, l] + 1e-6:
                    assert d2[i, j] <= d2[i, l] + 1e-6


def test_baselines():
    d = TokenDictionary(("a", "b", "c"))
    assert np.array_equal(baseline_embedding(d, "onehot").vectors, np.eye(3))
    assert np.array_equal(baseline_embedding(d, "constant").vectors, np.ones((3, 1)))
    assert baseline_embedding(TokenDictionary(("a",)), "onehot").vectors.tolist() == [[1.0]]
    with pytest.raises(ValueError):
        baseline_embedding(d, "kernel")


def test_embedding_csv_roundtrip(tmp_path):
    d = TokenDictionary(("ab|c", "a|bc", "zz|z", "ab|d"))
    emb = embed_tokens(kernel_matrix(d), 3)
    emb.to_csv(tmp_path / "e.csv")
    again = EmbeddingTable.from_csv(tmp_path / "e.csv", d)
    assert np.array_equal(again.vectors, emb.vectors)
    assert again.digest() == emb.digest()
    with pytest.raises(ValueError):
        EmbeddingTable.from_csv(tmp_path / "e.csv", TokenDictionary(("ab|c", "a|bc", "zz|z", "XX")))
