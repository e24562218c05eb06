"""Diffusion maps on a precomputed distance matrix.

The Gaussian kernel ``w_ij = exp(-d_ij^2 / eps^2)`` is normalized to a
row-stochastic Markov operator.  Eigenpairs are computed from its symmetric
conjugate ``D^-1/2 W D^-1/2`` and mapped back to right eigenvectors, which
are scaled to unit norm under the stationary distribution.  The trivial
constant eigenvector is dropped.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from scipy.sparse.csgraph import minimum_spanning_tree


class EmbeddingError(RuntimeError):
    """Degenerate input or eigensolver failure."""


@dataclass(frozen=True)
class DiffusionConfig:
    epsilon: object = "auto"
    n_eigs: int = 10
    normalization: str = "row-stochastic"  # or "density" (alpha = 1)
    knn: int = None
    unique_threshold: float = 0.5
    dense_limit: int = 2000


@dataclass
class Embedding:
    """Diffusion-map coordinates of N items.

    ``coords[:, k] = eigenvalues[k] * eigenvectors[:, k]``; eigenvalues are in
    descending order and exclude the trivial one.
    """

    coords: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    epsilon_used: float
    unique_flags: np.ndarray = None
    residuals: np.ndarray = None

    @property
    def n(self):
        return self.coords.shape[0]

    def unique_coords(self, limit=None):
        flags = self.unique_flags if self.unique_flags is not None else np.ones(self.coords.shape[1], bool)
        idx = np.flatnonzero(flags[:limit])
        return self.coords[:, idx], idx

    def permuted(self, order):
        return replace(self, coords=self.coords[order], eigenvectors=self.eigenvectors[order])


def _check_distances(dist):
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.isfinite(dist).all():
        raise ValueError("distance matrix has non-finite entries")
    if (dist < 0).any():
        raise ValueError("distances must be nonnegative")
    scale = max(float(np.abs(dist).max()), 1e-300)
    if np.abs(dist - dist.T).max() > 1e-10 * scale:
        raise ValueError("distance matrix is not symmetric")
    if np.abs(np.diag(dist)).max() > 1e-12 * scale:
        raise ValueError("distance matrix has a nonzero diagonal")
    return dist


def kernel_matrix(dist, epsilon):
    """Gaussian affinities ``exp(-d^2 / eps^2)``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    dist = np.asarray(dist, dtype=np.float64)
    return np.exp(-(dist / epsilon) ** 2)


def choose_epsilon(dist, k=None):
    """Median over points of the distance to the k-th nearest distinct neighbour.

    ``k`` defaults to ``max(7, ceil(0.01 N))``.  Zero distances (duplicates,
    the diagonal) are excluded; a point with fewer than ``k`` nonzero
    neighbours contributes its farthest one.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if k is None:
        k = max(7, math.ceil(0.01 * n))
    pool = []
    for row in dist:
        nz = np.sort(row[row > 0])
        if nz.size:
            pool.append(nz[min(k, nz.size) - 1])
    if not pool:
        raise EmbeddingError("all pairwise distances are zero")
    return float(np.median(pool))


def connectivity_epsilon(dist):
    """Longest edge of the minimum spanning tree.

    Every point then has a neighbour within one kernel scale, so the
    Gaussian graph cannot split into numerically disconnected pieces.
    """
    dist = np.asarray(dist, dtype=np.float64)
    pos = dist[dist > 0]
    if pos.size == 0:
        return 0.0
    # the graph routine drops explicit zeros; keep duplicates linked
    d = np.where(dist > 0, dist, pos.min() * 1e-12)
    np.fill_diagonal(d, 0.0)
    return float(minimum_spanning_tree(d).max())


def _knn_mask(dist, k):
    n = dist.shape[0]
    order = np.argsort(dist, axis=1, kind="stable")[:, : k + 1]
    mask = np.zeros((n, n), bool)
    mask[np.repeat(np.arange(n), order.shape[1]), order.ravel()] = True
    return mask | mask.T


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


def embed(dist, cfg=DiffusionConfig()):
    """Diffusion-map embedding of the items behind ``dist``.

    With ``epsilon="auto"`` the scale is the k-NN median rule of
    :func:`choose_epsilon`, raised to :func:`connectivity_epsilon` when
    the data are too unevenly spread for the median to keep them connected.
    """
    dist = _check_distances(dist)
    n = dist.shape[0]
    if n < 3:
        raise ValueError("need at least three points to embed")
    if cfg.epsilon in (None, "auto"):
        eps = max(choose_epsilon(dist), connectivity_epsilon(dist))
    else:
        eps = float(cfg.epsilon)
    W = kernel_matrix(dist, eps)
    if cfg.knn:
        W = np.where(_knn_mask(dist, cfg.knn), W, 0.0)
    if cfg.normalization == "density":
        q = W.sum(axis=1)
        W = W / np.outer(q, q)
    elif cfg.normalization != "row-stochastic":
        raise ValueError(f"unknown normalization {cfg.normalization!r}")
    deg = W.sum(axis=1)
    if (deg <= 0).any() or not np.isfinite(deg).all():
        raise EmbeddingError("kernel has empty rows")
    isd = 1.0 / np.sqrt(deg)
    S = W * np.outer(isd, isd)
    S = 0.5 * (S + S.T)
    m = min(cfg.n_eigs + 1, n)
    try:
        if n <= cfg.dense_limit:
            vals, vecs = scipy.linalg.eigh(S, subset_by_index=[n - m, n - 1])
        else:
            vals, vecs = scipy.sparse.linalg.eigsh(S, k=m, which="LA")
    except (np.linalg.LinAlgError, scipy.sparse.linalg.ArpackNoConvergence) as e:
        raise EmbeddingError(
            f"eigensolver failed ({e}); degree range [{deg.min():.3g}, {deg.max():.3g}], eps={eps:.3g}") from e
    order = np.argsort(-vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    psi = vecs * isd[:, None]
    pi = deg / deg.sum()
    psi /= np.sqrt((pi[:, None] * psi ** 2).sum(axis=0))
    psi = _fix_signs(psi[:, 1:])
    vals = vals[1:]
    return Embedding(coords=psi * vals, eigenvalues=vals, eigenvectors=psi, epsilon_used=eps)


def local_linear_loo(X, y, bandwidth=None):
    """Leave-one-out local-linear predictions of ``y`` from ``X``.

    Gaussian weights ``exp(-|x_i - x_j|^2 / bw^2)``; ``bw`` defaults to a
    third of the median pairwise distance of the predictors.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=-1)
    if bandwidth is None:
        bandwidth = np.sqrt(np.median(d2[np.triu_indices(n, 1)])) / 3.0
    if bandwidth <= 0:
        return np.full(n, y.mean())
    K = np.exp(-d2 / bandwidth ** 2)
    np.fill_diagonal(K, 0.0)
    A = np.hstack([np.ones((n, 1)), X])
    # per-point weighted normal equations, solved in one batch
    M = np.einsum("ij,jk,jl->ikl", K, A, A)
    r = np.einsum("ij,jk,j->ik", K, A, y)
    M += 1e-10 * np.trace(M, axis1=1, axis2=2)[:, None, None] / A.shape[1] * np.eye(A.shape[1])
    # isolated points (no weight from any neighbour) predict the global mean
    lonely = K.sum(axis=1) <= 1e-300
    M[lonely] = np.eye(A.shape[1])
    r[lonely] = 0.0
    r[lonely, 0] = y.mean()
    beta = np.linalg.solve(M, r[..., None])[..., 0]
    return (A * beta).sum(axis=1)


def select_unique(e, threshold=0.5, limit=None):
    """Flag coordinates that are not functions of earlier ones.

    Coordinate k is regressed on coordinates 0..k-1 by leave-one-out local
    linear regression; its normalized residual ``r_k`` below ``threshold``
    marks it as a harmonic.  Flags and residuals are also stored on ``e``.
    """
    V = e.eigenvectors if limit is None else e.eigenvectors[:, :limit]
    m = V.shape[1]
    res = np.ones(m)
    for k in range(1, m):
        pred = local_linear_loo(V[:, :k], V[:, k])
        res[k] = np.sqrt(((V[:, k] - pred) ** 2).sum() / (V[:, k] ** 2).sum())
    flags = res >= threshold
    flags[0] = True
    e.unique_flags = flags
    e.residuals = res
    return flags
