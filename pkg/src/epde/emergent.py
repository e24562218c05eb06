"""Emergent 1-D coordinates, regular charts and imputation.

An axis embedding that traces a curve (an open hairpin or a skinny loop) is
reduced to a single arclength coordinate in [0, 1].  Fields indexed by two
such coordinates are resampled on uniform grids with separable cubic
splines, giving an :class:`EmergentChart` ready for derivative features.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.sparse.csgraph import connected_components, shortest_path

from .diffmaps import DiffusionConfig, EmbeddingError, _knn_mask, choose_epsilon, embed
from .tensor import DataTensor


@dataclass(frozen=True)
class EmergentCoordinate:
    values: np.ndarray        # one value per channel, in [0, 1]
    source_coords: tuple      # embedding columns used
    orientation_anchor: int   # channel placed near 0
    closed: bool = False      # True when the curve was treated as a loop


def _euclid(X):
    sq = (X * X).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def _is_loop(psi, graph, ratio):
    """True when ordering by the angle of the leading pair closes a cycle.

    Consecutive points in angle order (including the wrap-around pair) must
    all be close along the neighbour graph; an open curve fails on the pair
    joining its two ends.
    """
    if psi.shape[1] < 2:
        return False, None
    ang = np.arctan2(psi[:, 1], psi[:, 0])
    order = np.argsort(ang, kind="stable")
    geo = shortest_path(graph, directed=False, indices=order)
    nxt = np.roll(order, -1)
    steps = geo[np.arange(order.size), nxt]
    if not np.isfinite(steps).all():
        return False, None
    return bool(steps.max() <= ratio * np.median(steps)), order


def extract_arclength(points, anchor=None, columns=None, knn=4, loop_ratio=8.0):
    """Arclength along the curve traced by ``points`` (N x m), rescaled to [0, 1].

    A second diffusion map on a k-nearest-neighbour kernel orders the points.
    If ordering by the angle of its two leading coordinates walks around a
    cycle of the neighbour graph, the curve is treated as a loop and cut at
    the anchor on the side of the larger gap; otherwise points are ordered
    by the leading coordinate.
    Output values are cumulative Euclidean distances along that order.
    ``anchor`` defaults to the point with the smallest first coordinate.
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n < 4:
        raise ValueError("need at least 4 points")
    if not np.isfinite(X).all():
        raise ValueError("points must be finite")
    if anchor is None:
        anchor = int(np.argmin(X[:, 0]))
    D_full = _euclid(X)
    # coincident points (e.g. mirror-symmetric channels) share one value
    rep = np.argmax(D_full <= 1e-12 * max(D_full.max(), 1e-300), axis=1)
    keep, inverse = np.unique(rep, return_inverse=True)
    if keep.size < 4:
        raise EmbeddingError("fewer than 4 distinct points")
    X_all, X = X, X[keep]
    n = keep.size
    anchor_all, anchor = anchor, int(inverse[anchor])
    D = D_full[np.ix_(keep, keep)]
    if X.shape[1] == 1:
        # a single coordinate already is a monotone parametrization
        return _finish(X, np.argsort(X[:, 0], kind="stable"), anchor, anchor_all, inverse, False, columns)
    # widen the neighbourhood until the graph connects, up to 4x the request
    for k in range(min(knn, n - 1), min(4 * knn, n - 1) + 1):
        mask = _knn_mask(D, k)
        n_comp, _ = connected_components(mask, directed=False)
        if n_comp == 1:
            break
    else:
        raise EmbeddingError(f"nearest-neighbour graph splits into {n_comp} components")
    eps = choose_epsilon(D, k)
    e = embed(D, DiffusionConfig(epsilon=eps, knn=k, n_eigs=min(4, n - 2)))
    psi = e.eigenvectors
    closed, order = _is_loop(psi, np.where(mask, D, 0.0), loop_ratio)
    if closed:
        # anchor first; walk away from it across the smaller gap
        pos = int(np.flatnonzero(order == anchor)[0])
        order = np.roll(order, -pos)
        fwd = np.linalg.norm(X[order[1]] - X[anchor])
        back = np.linalg.norm(X[order[-1]] - X[anchor])
        if back < fwd:
            order = np.concatenate([[anchor], order[1:][::-1]])
    else:
        order = np.argsort(psi[:, 0], kind="stable")
    return _finish(X, order, anchor, anchor_all, inverse, closed, columns)


def _finish(X, order, anchor, anchor_all, inverse, closed, columns):
    seg = np.linalg.norm(np.diff(X[order], axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    vals = np.empty(X.shape[0])
    vals[order] = arc
    span = arc[-1]
    if span <= 0:
        raise EmbeddingError("all points coincide")
    vals /= span
    if not closed and vals[anchor] > 0.5:
        vals = 1.0 - vals
    cols = tuple(range(X.shape[1])) if columns is None else tuple(columns)
    return EmergentCoordinate(vals[inverse], cols, int(anchor_all), closed)


# ---------------------------------------------------------------------------
# resampling


def _merge_nodes(x, Y, tol):
    """Sort by x and average rows of Y whose x values coincide within tol."""
    order = np.argsort(x, kind="stable")
    x, Y = x[order], Y[order]
    groups = np.concatenate([[0], np.cumsum(np.diff(x) > tol)])
    m = groups[-1] + 1
    cnt = np.bincount(groups, minlength=m).astype(float)
    xm = np.bincount(groups, weights=x, minlength=m) / cnt
    Ym = np.zeros((m,) + Y.shape[1:])
    np.add.at(Ym, groups, Y)
    Ym /= cnt.reshape((-1,) + (1,) * (Y.ndim - 1))
    return xm, Ym


def uniform_grid(values, n):
    return np.linspace(float(np.min(values)), float(np.max(values)), n)


def resample(field, coord_a, coord_b, n_a, n_b, tol=1e-9):
    """Resample ``field[a, b]`` onto uniform grids in both coordinates.

    Cubic splines are fitted along ``a`` for every ``b`` column and then along
    ``b``.  Channels whose coordinates agree within ``tol`` (relative to the
    coordinate range) are averaged into one node.  Returns
    ``(grid_a, grid_b, values)`` with ``values`` of shape (n_a, n_b).
    """
    F = np.asarray(field, dtype=np.float64)
    a = np.asarray(getattr(coord_a, "values", coord_a), dtype=np.float64)
    b = np.asarray(getattr(coord_b, "values", coord_b), dtype=np.float64)
    if F.shape != (a.size, b.size):
        raise ValueError("field shape does not match the coordinates")
    ta = tol * max(np.ptp(a), 1e-300)
    tb = tol * max(np.ptp(b), 1e-300)
    a_n, F = _merge_nodes(a, F, ta)
    b_n, Ft = _merge_nodes(b, F.T, tb)
    if a_n.size < 4 or b_n.size < 4:
        raise ValueError("need at least 4 distinct coordinate values per axis")
    ga = uniform_grid(a_n, n_a)
    gb = uniform_grid(b_n, n_b)
    step1 = CubicSpline(a_n, Ft.T, axis=0)(ga)          # (n_a, nb_nodes)
    out = CubicSpline(b_n, step1, axis=1)(gb)           # (n_a, n_b)
    return ga, gb, out


# ---------------------------------------------------------------------------
# imputation


def impute(t, coords):
    """Fill masked entries by cubic interpolation along emergent coordinates.

    ``coords`` maps an axis name to one coordinate value per channel of that
    axis (including the missing ones).  Axes are visited in p, t, s order;
    every 1-D line along the axis with some observed and some missing
    entries is interpolated.  Missing entries outside the observed range
    take the nearest observed value with a warning.
    """
    if t.mask is None or t.mask.all():
        return t
    V = np.where(t.mask, t.values, np.nan)
    M = t.mask.copy()
    for ax_i, ax in enumerate("pts"):
        if ax not in coords or M.all():
            continue
        c = np.asarray(getattr(coords[ax], "values", coords[ax]), dtype=np.float64)
        if c.size != V.shape[ax_i]:
            raise ValueError(f"coordinate length mismatch on axis {ax!r}")
        Vm = np.moveaxis(V, ax_i, -1)
        Mm = np.moveaxis(M, ax_i, -1)
        for idx in np.ndindex(Vm.shape[:-1]):
            obs = Mm[idx]
            if obs.all() or obs.sum() < 2:
                continue
            xo, yo = _merge_nodes(c[obs], Vm[idx][obs], 1e-12 * max(np.ptp(c), 1e-300))
            miss = ~obs
            xm = c[miss]
            inside = (xm >= xo[0]) & (xm <= xo[-1])
            fill = np.empty(xm.size)
            if xo.size >= 2:
                spl = CubicSpline(xo, yo) if xo.size >= 3 else None
                fill[inside] = spl(xm[inside]) if spl is not None else np.interp(xm[inside], xo, yo)
            if (~inside).any():
                warnings.warn(f"axis {ax!r}: missing channel beyond the observed range, using nearest value")
                near = np.abs(xm[~inside][:, None] - xo[None, :]).argmin(axis=1)
                fill[~inside] = yo[near]
            line = Vm[idx]
            line[miss] = fill
            Mm[idx][miss] = True
        V = np.moveaxis(Vm, -1, ax_i)
        M = np.moveaxis(Mm, -1, ax_i)
    V = np.where(M, V, 0.0)
    return DataTensor(V, mask=None if M.all() else M, axis_meta=t.axis_meta)


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class EmergentChart:
    """Field ``c[phi, psi]`` on uniform emergent grids plus corridor geometry."""

    psi_grid: np.ndarray
    phi_grid: np.ndarray
    field: np.ndarray
    source_corridor: tuple      # (lo, hi) in psi; empty when lo > hi
    boundary_corridors: tuple   # ((lo, hi), (lo, hi))

    def __post_init__(self):
        if self.field.shape != (self.phi_grid.size, self.psi_grid.size):
            raise ValueError("field must be (n_phi, n_psi)")
        for g in (self.psi_grid, self.phi_grid):
            if g.size < 2 or not (np.diff(g) > 0).all():
                raise ValueError("grids must be strictly increasing")
        if not np.isfinite(self.field).all():
            raise ValueError("chart field must be finite")

    @property
    def d_psi(self):
        return float(self.psi_grid[1] - self.psi_grid[0])

    @property
    def d_phi(self):
        return float(self.phi_grid[1] - self.phi_grid[0])

    def _in(self, lo, hi):
        tol = 1e-9 * self.d_psi
        return (self.psi_grid >= lo - tol) & (self.psi_grid <= hi + tol)

    def source_mask(self):
        lo, hi = self.source_corridor
        return self._in(lo, hi) if lo <= hi else np.zeros(self.psi_grid.size, bool)

    def boundary_mask(self):
        (a0, a1), (b0, b1) = self.boundary_corridors
        return self._in(a0, a1) | self._in(b0, b1)

    def node_tags(self):
        """0 interior, 1 boundary corridor, 2 source corridor (boundary wins)."""
        tags = np.zeros(self.psi_grid.size, dtype=np.int8)
        tags[self.source_mask()] = 2
        tags[self.boundary_mask()] = 1
        return tags

    def extras(self):
        return {
            "source_corridor": list(map(float, self.source_corridor)),
            "boundary_corridors": [list(map(float, c)) for c in self.boundary_corridors],
        }

    def to_tensor(self):
        return DataTensor.from_matrix(
            self.field, axis_meta={"t": {"phi": self.phi_grid}, "s": {"psi": self.psi_grid}})

    @classmethod
    def from_tensor(cls, t, extras):
        psi = np.asarray(t.axis_meta["s"]["psi"], dtype=np.float64)
        phi = np.asarray(t.axis_meta["t"]["phi"], dtype=np.float64)
        sc = tuple(extras["source_corridor"])
        bc = tuple(tuple(c) for c in extras["boundary_corridors"])
        return cls(psi, phi, t.matrix().copy(), sc, bc)


def source_corridor(psi_grid, field, fraction=0.9, dilate=2, late=0.5):
    """Interval around the peak of the late-time concentration maximum.

    The per-node maximum over the last ``late`` fraction of the snapshots is
    thresholded at ``fraction`` of its peak; the contiguous run containing
    the peak is dilated by ``dilate`` grid cells on each side.
    """
    n_t = field.shape[0]
    prof = field[int(np.floor((1 - late) * (n_t - 1))):].max(axis=0)
    top = int(np.argmax(prof))
    on = prof >= fraction * prof[top]
    lo = top
    while lo > 0 and on[lo - 1]:
        lo -= 1
    hi = top
    while hi < on.size - 1 and on[hi + 1]:
        hi += 1
    lo = max(0, lo - dilate)
    hi = min(on.size - 1, hi + dilate)
    return float(psi_grid[lo]), float(psi_grid[hi])


def boundary_corridors(psi_grid, width=2):
    return ((float(psi_grid[0]), float(psi_grid[width - 1])),
            (float(psi_grid[-width]), float(psi_grid[-1])))


def build_chart(field, phi, psi, n_phi=1500, n_psi=128, corridor_fraction=0.9,
                corridor_dilate=2, boundary_width=2, with_source=True):
    """Resample ``field[time channel, space channel]`` into an EmergentChart."""
    gphi, gpsi, F = resample(field, phi, psi, n_phi, n_psi)
    sc = source_corridor(gpsi, F, corridor_fraction, corridor_dilate) if with_source else (1.0, 0.0)
    return EmergentChart(gpsi, gphi, F, sc, boundary_corridors(gpsi, boundary_width))
