"""Derivative features, learned right-hand sides and their time integration."""
from dataclasses import dataclass

import numpy as np

from .mlp import MlpModel, TrainConfig, TrainingError, fit, rhs_architecture, source_architecture


class IntegrationError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


TAG_INTERIOR, TAG_BOUNDARY, TAG_SOURCE = 0, 1, 2


def space_derivatives(c, h):
    """First to fourth derivatives along the last axis at nodes 2..n-3.

    Second-order central stencils for orders 1-2 and the standard 5-point
    stencils for orders 3-4.  Returns shape ``c.shape[:-1] + (n - 4, 4)``.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] < 7:
        raise ValueError("need at least 7 grid points in space")
    m2, m1, z, p1, p2 = (c[..., k:c.shape[-1] - 4 + k] for k in range(5))
    d1 = (p1 - m1) / (2 * h)
    d2 = (p1 - 2 * z + m1) / h ** 2
    d3 = (p2 - 2 * p1 + 2 * m1 - m2) / (2 * h ** 3)
    d4 = (p2 - 4 * p1 + 6 * z - 4 * m1 + m2) / h ** 4
    return np.stack([d1, d2, d3, d4], axis=-1)


def node_features(c, h):
    """(c, c', c'', c''', c'''') at nodes 2..n-3 of profile(s) ``c``."""
    d = space_derivatives(c, h)
    return np.concatenate([c[..., 2:-2, None], d], axis=-1)


def time_derivative(F, h):
    """Second-order central differences in time, one-sided second order at the ends."""
    ct = np.empty_like(F)
    ct[1:-1] = (F[2:] - F[:-2]) / (2 * h)
    ct[0] = (-3 * F[0] + 4 * F[1] - F[2]) / (2 * h)
    ct[-1] = (3 * F[-1] - 4 * F[-2] + F[-3]) / (2 * h)
    return ct


@dataclass
class FeatureSet:
    X: np.ndarray        # (n_t, n_nodes, 5)
    target: np.ndarray   # (n_t, n_nodes), dc/dphi
    nodes: np.ndarray    # psi-grid indices of the feature nodes
    tags: np.ndarray     # per feature node
    psi: np.ndarray      # psi of the feature nodes
    phi: np.ndarray      # time grid


def fd_features(chart):
    """Features and time-derivative targets on every node with a full stencil."""
    F = chart.field
    if F.shape[1] < 7:
        raise ValueError("need at least 7 psi grid points")
    if F.shape[0] < 3:
        raise ValueError("need at least 3 time grid points")
    X = node_features(F, chart.d_psi)
    ct = time_derivative(F, chart.d_phi)
    nodes = np.arange(2, F.shape[1] - 2)
    return FeatureSet(X, ct[:, nodes], nodes, chart.node_tags()[nodes], chart.psi_grid[nodes], chart.phi_grid)


def _split(fs, mask_nodes, n_val):
    n_t = fs.X.shape[0]
    n_val = min(n_val, n_t - 1)
    tr = slice(0, n_t - n_val)
    va = slice(n_t - n_val, n_t)
    pick = lambda s: (fs.X[s][:, mask_nodes].reshape(-1, fs.X.shape[-1]), fs.target[s][:, mask_nodes].reshape(-1))
    return pick(tr), pick(va)


def train_rhs(fs, cfg=TrainConfig(), dims=None, log=None):
    """Fit the autonomous right-hand side on interior nodes outside the source corridor.

    The last ``cfg.n_val_snapshots`` snapshots are held out for validation.
    """
    keep = fs.tags == TAG_INTERIOR
    (X, y), (Xv, yv) = _split(fs, keep, cfg.n_val_snapshots)
    if X.shape[0] < cfg.batch:
        raise TrainingError(f"only {X.shape[0]} training samples, fewer than one batch")
    m = MlpModel(dims or rhs_architecture(), "swish", seed=cfg.seed)
    return fit(m, X, y, cfg, Xv, yv, log=log)


@dataclass
class SourceModel:
    """g(psi, phi) inside the source interval, exactly 0 outside."""

    net: MlpModel
    interval: tuple

    def __call__(self, psi, phi):
        psi = np.asarray(psi, dtype=np.float64)
        phi = np.broadcast_to(np.asarray(phi, dtype=np.float64), psi.shape)
        out = np.zeros(psi.shape)
        lo, hi = self.interval
        inside = (psi >= lo) & (psi <= hi)
        if inside.any():
            out[inside] = self.net.forward(np.stack([psi[inside], phi[inside]], axis=1))
        return out


def train_source(f, fs, chart, cfg=TrainConfig(), log=None):
    """Fit g on the source-corridor residual ``dc/dphi - f(features)``."""
    inside = fs.tags == TAG_SOURCE
    if not inside.any():
        raise TrainingError("source corridor is empty")
    n_t = fs.X.shape[0]
    resid = fs.target - f.forward(fs.X.reshape(-1, fs.X.shape[-1])).reshape(n_t, -1)
    P, T = np.meshgrid(fs.psi, fs.phi)
    inp = np.stack([P, T], axis=-1)
    n_val = min(cfg.n_val_snapshots, n_t - 1)
    tr, va = slice(0, n_t - n_val), slice(n_t - n_val, n_t)
    X = inp[tr][:, inside].reshape(-1, 2)
    y = resid[tr][:, inside].reshape(-1)
    Xv = inp[va][:, inside].reshape(-1, 2)
    yv = resid[va][:, inside].reshape(-1)
    net = MlpModel(source_architecture(), "swish", seed=cfg.seed + 1)
    res = fit(net, X, y, cfg, Xv, yv, log=log)
    return SourceModel(res.model, tuple(chart.source_corridor)), res


# ---------------------------------------------------------------------------
# regularization and integration


def svd_basis(snapshots, energy=0.999):
    """Leading left singular vectors of the (space x snapshot) matrix."""
    S = np.asarray(snapshots, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] < 2:
        raise ValueError("need at least 2 snapshots")
    U, s, _ = np.linalg.svd(S.T, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("snapshot matrix has rank 0")
    e = np.cumsum(s ** 2) / np.sum(s ** 2)
    r = int(np.searchsorted(e, energy - 1e-15) + 1)
    return U[:, :r]


def svd_regularize(snapshots, predicted, energy=0.999):
    """Project ``predicted`` profile(s) onto the truncated snapshot span."""
    U = svd_basis(snapshots, energy)
    p = np.asarray(predicted, dtype=np.float64)
    return (p @ U) @ U.T


@dataclass(frozen=True)
class IntegrateConfig:
    substeps: int = 4
    scheme: str = "rk4"         # or "euler"
    svd_energy: float = 0.999   # None disables projection
    n_svd_snapshots: int = None  # leading snapshots spanning the projection; None = all
    blowup_factor: float = 10.0


def integrate(f, chart, u0=None, source=None, cfg=IntegrateConfig()):
    """Integrate ``dc/dphi = f(features) [+ g]`` across the chart's time grid.

    Boundary-corridor nodes, and source-corridor nodes when ``source`` is
    None, follow the chart data (linear in phi between snapshots) at every
    stage.  Every evaluated rate is projected onto the truncated SVD span of
    the data snapshots, which strips the high-wavenumber noise that the
    fourth-derivative stencil would otherwise amplify.  Returns the
    predicted field on the chart grid.
    """
    F = chart.field
    n_t, n_x = F.shape
    h = chart.d_psi
    dphi = chart.d_phi / cfg.substeps
    data_fixed = chart.boundary_mask() | (chart.source_mask() if source is None else False)
    fixed = np.flatnonzero(data_fixed)
    src_nodes = np.flatnonzero(chart.source_mask() & ~chart.boundary_mask()) if source is not None else None
    u = np.array(F[0] if u0 is None else u0, dtype=np.float64)
    rng = float(F.max() - F.min()) or 1.0
    limit = cfg.blowup_factor * max(rng, float(np.abs(F).max()))
    U = None
    if cfg.svd_energy is not None:
        n_s = n_t if cfg.n_svd_snapshots is None else cfg.n_svd_snapshots
        U = svd_basis(F[:n_s], cfg.svd_energy)

    def data_at(k, frac):
        if frac == 0.0 or k + 1 >= n_t:
            return F[min(k, n_t - 1), fixed]
        return (1.0 - frac) * F[k, fixed] + frac * F[k + 1, fixed]

    def data_rate(k):
        if k + 1 >= n_t:
            return np.zeros(fixed.size)
        return (F[k + 1, fixed] - F[k, fixed]) / chart.d_phi

    def rate(v, k, frac):
        v = v.copy()
        v[fixed] = data_at(k, frac)
        r = np.zeros(n_x)
        r[2:-2] = f.forward(node_features(v, h))
        if source is not None:
            phi = chart.phi_grid[k] + frac * chart.d_phi if k + 1 < n_t else chart.phi_grid[-1]
            r[src_nodes] += source(chart.psi_grid[src_nodes], phi)
        if U is not None:
            # project with the data's own rate on the fixed nodes so the
            # truncated modes see a profile from the snapshot span
            r[fixed] = data_rate(k)
            r = (r @ U) @ U.T
        r[fixed] = 0.0
        return r

    out = np.empty_like(F)
    u[fixed] = F[0, fixed]
    out[0] = u
    step = 0
    for k in range(n_t - 1):
        for s in range(cfg.substeps):
            a = s / cfg.substeps
            b = (s + 1) / cfg.substeps
            if cfg.scheme == "rk4":
                m = 0.5 * (a + b)
                k1 = rate(u, k, a)
                k2 = rate(u + 0.5 * dphi * k1, k, m)
                k3 = rate(u + 0.5 * dphi * k2, k, m)
                k4 = rate(u + dphi * k3, k, b)
                u = u + dphi / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            elif cfg.scheme == "euler":
                u = u + dphi * rate(u, k, a)
            else:
                raise ValueError(f"unknown scheme {cfg.scheme!r}")
            u[fixed] = data_at(k, b) if b < 1 else F[k + 1, fixed]
            step += 1
            if not np.isfinite(u).all() or np.abs(u).max() > limit:
                raise IntegrationError(f"integration blew up at step {step} (phi={chart.phi_grid[k] + b * chart.d_phi:.4g})", step=step)
        out[k + 1] = u
    return out
