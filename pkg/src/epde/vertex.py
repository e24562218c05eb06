"""Ring-of-cells vertex model of an epithelial cross-section.

``N_c`` quadrilateral cells share lateral edges; apical vertices sit on an
outer circle and basal vertices on an inner one.  The state evolves by
overdamped forward-Euler descent on

    E = sum sigma_a l_a + sum sigma_b l_b + sum sigma_l l_l
        + B sum (A_c - A_c0)^2 + B_Y (A_Y - A_Y0)^2
        + eps sum_k 1 / (R_c - R_k)^n

with the apical tension patterned by the angular position of each apical
edge midpoint (theta = 0 is the lateral edge between the last and first
cell).
"""
import csv
from dataclasses import dataclass, replace

import numpy as np

from . import kernels


class MembraneError(RuntimeError):
    """An apical vertex reached the confining membrane."""


@dataclass(frozen=True)
class MechParams:
    sigma_a0: float = 2.6418
    sigma_b0: float = 2.6418
    sigma_l: float = 1.0
    B: float = 20.0
    A_c0: float = None  # calibrated by init_homogeneous when None
    B_Y: float = 0.01
    A_Y0: float = None
    eps_mem: float = 1e-10
    n_rep: float = 4.0
    R_c: float = None  # 1.05 R_a when None
    P: float = 0.2
    G_width: float = 4.0
    f_basal: float = 0.7
    eta: float = 1.0
    dt: float = 0.002

    def homogeneous(self):
        """Same moduli with the ventral patterning switched off."""
        return replace(self, P=0.0, f_basal=1.0)

    def vector(self):
        if self.A_c0 is None or self.A_Y0 is None or self.R_c is None:
            raise ValueError("A_c0, A_Y0 and R_c must be set (see init_homogeneous)")
        return np.array([
            self.sigma_a0, self.f_basal * self.sigma_b0, self.sigma_l, self.B, self.A_c0,
            self.B_Y, self.A_Y0, self.eps_mem, self.n_rep, self.R_c, self.P, self.G_width,
        ])


@dataclass(frozen=True)
class VertexState:
    positions: np.ndarray  # (2 N_c, 2): apical rows first, then basal

    @property
    def n_cells(self):
        return self.positions.shape[0] // 2

    def cell_index_map(self):
        """Vertex ids of each cell: (apical_i, apical_i+1, basal_i+1, basal_i)."""
        n = self.n_cells
        i = np.arange(n)
        j = (i + 1) % n
        return np.stack([i, j, n + j, n + i], axis=1)

    def apical(self):
        return self.positions[: self.n_cells]

    def basal(self):
        return self.positions[self.n_cells:]


@dataclass(frozen=True)
class HomogeneousGeometry:
    R_a: float
    R_b: float
    l_a: float
    l_b: float
    l_l: float


def homogeneous_geometry(N_c, l_l, R_a):
    if R_a <= l_l:
        raise ValueError("apical radius must exceed the lateral edge length")
    R_b = R_a - l_l
    return HomogeneousGeometry(R_a, R_b, 2 * np.pi * R_a / N_c, 2 * np.pi * R_b / N_c, l_l)


def cell_areas(s):
    X = s.positions
    ids = s.cell_index_map()[:, [3, 0, 1, 2]]  # b_i, a_i, a_i+1, b_i+1
    P = X[ids]
    x, y = P[..., 0], P[..., 1]
    return 0.5 * (x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y).sum(axis=1)


def yolk_area(s):
    b = s.basal()
    b1 = np.roll(b, -1, axis=0)
    return 0.5 * float((b[:, 0] * b1[:, 1] - b1[:, 0] * b[:, 1]).sum())


def init_homogeneous(N_c=80, l_l=3.0, R_a=8.5, params=MechParams()):
    """Ring of identical trapezoids and parameters that make it stationary.

    Vertices are placed on circles of radius ``R_a`` and ``R_a - l_l``.
    Target areas left as ``None`` are calibrated so that the homogeneous
    (unpatterned) energy has zero gradient at this state: by symmetry all
    forces are radial, and the cell and yolk pressure terms are linear in
    the area offsets, giving a 2x2 linear system.
    """
    if N_c < 3:
        raise ValueError("need at least 3 cells")
    geo = homogeneous_geometry(N_c, l_l, R_a)
    th = 2 * np.pi * np.arange(N_c) / N_c
    ring = np.stack([np.cos(th), np.sin(th)], axis=1)
    state = VertexState(np.vstack([geo.R_a * ring, geo.R_b * ring]))
    if params.R_c is None:
        params = replace(params, R_c=1.05 * R_a)
    if params.R_c <= R_a:
        raise ValueError("membrane radius must exceed the apical radius")
    A_c, A_Y = cell_areas(state)[0], yolk_area(state)
    if params.A_c0 is None or params.A_Y0 is None:
        probe = replace(params.homogeneous(), A_c0=A_c, A_Y0=A_Y)
        g0 = _radial(state, kernels.vertex_energy_grad(state.positions, probe.vector())[1])
        # unit pressure responses: d/d(A0) of the gradient is -2 B grad(A)
        gc = _radial(state, kernels.vertex_energy_grad(state.positions, replace(probe, A_c0=A_c - 1.0).vector())[1]) - g0
        gy = _radial(state, kernels.vertex_energy_grad(state.positions, replace(probe, A_Y0=A_Y - 1.0).vector())[1]) - g0
        M = np.array([[gc[0], gy[0]], [gc[1], gy[1]]])
        shift = np.linalg.solve(M, -g0)
        params = replace(
            params,
            A_c0=A_c - shift[0] if params.A_c0 is None else params.A_c0,
            A_Y0=A_Y - shift[1] if params.A_Y0 is None else params.A_Y0,
        )
    return state, params


def _radial(state, g):
    """Radial gradient components of apical vertex 0 and basal vertex 0."""
    n = state.n_cells
    X = state.positions
    ra = X[0] / np.linalg.norm(X[0])
    rb = X[n] / np.linalg.norm(X[n])
    return np.array([g[0] @ ra, g[n] @ rb])


def apical_tension(theta, p):
    theta = np.asarray(theta, dtype=np.float64)
    inside = np.abs(theta) < np.pi / 4
    out = np.where(inside, p.sigma_a0 * (1.0 + p.P * np.exp(-theta ** 2 / p.G_width ** 2)), p.sigma_a0)
    return out if out.ndim else float(out)


def energy(s, p):
    """Total energy; ``inf`` if any apical vertex touches the membrane."""
    return kernels.vertex_energy_grad(s.positions, p.vector(), want_grad=False)[0]


def gradient(s, p, mode="analytic", h=1e-6):
    """dE/dx for every vertex, analytic or by central finite differences."""
    if mode == "analytic":
        return kernels.vertex_energy_grad(s.positions, p.vector())[1]
    if mode != "fd":
        raise ValueError(f"unknown gradient mode {mode!r}")
    prm = p.vector()
    X = s.positions.copy()
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        x0 = X[idx]
        X[idx] = x0 + h
        ep = kernels.vertex_energy_grad(X, prm, want_grad=False)[0]
        X[idx] = x0 - h
        em = kernels.vertex_energy_grad(X, prm, want_grad=False)[0]
        X[idx] = x0
        g[idx] = (ep - em) / (2 * h)
    return g


def step(s, p, mode="analytic", max_halvings=10):
    """One overdamped forward-Euler step ``x += dt/eta * F``.

    If the step pushes an apical vertex through the membrane, ``dt`` is
    halved and the step retried, at most ``max_halvings`` times.
    """
    E0 = energy(s, p)
    if not np.isfinite(E0):
        raise MembraneError("state already penetrates the membrane")
    F = -gradient(s, p, mode)
    dt = p.dt
    for _ in range(max_halvings + 1):
        X = s.positions + (dt / p.eta) * F
        R = np.hypot(X[: s.n_cells, 0], X[: s.n_cells, 1])
        if (R < p.R_c).all():
            return VertexState(X)
        dt *= 0.5
    raise MembraneError(f"membrane penetration persists after {max_halvings} dt halvings")


def run(s, p, n_steps, record_every=0):
    """Integrate ``n_steps``; returns (final_state, energies[, snapshots])."""
    energies = np.empty(n_steps + 1)
    energies[0] = energy(s, p)
    snaps = [s.positions.copy()] if record_every else None
    for k in range(n_steps):
        s = step(s, p)
        energies[k + 1] = energy(s, p)
        if record_every and (k + 1) % record_every == 0:
            snaps.append(s.positions.copy())
    return (s, energies, snaps) if record_every else (s, energies)


def backbone_curve(s, sector=(-np.pi, np.pi)):
    """Lateral-edge midpoints inside ``sector`` ordered by angle.

    Returns (points, arclength).  When the sector spans the full circle the
    polyline is closed, so the last arclength is the full perimeter.
    """
    lo, hi = sector
    n = s.n_cells
    mids = 0.5 * (s.apical() + s.basal())
    ang = np.arctan2(mids[:, 1], mids[:, 0])
    full = hi - lo >= 2 * np.pi - 1e-12
    if full:
        ang = np.mod(ang - lo, 2 * np.pi)
        order = np.argsort(ang, kind="stable")
        pts = mids[order]
        pts = np.vstack([pts, pts[:1]])
    else:
        keep = np.flatnonzero((ang >= lo) & (ang <= hi))
        if keep.size == 0:
            raise ValueError("no lateral edges inside the sector")
        order = keep[np.argsort(ang[keep], kind="stable")]
        pts = mids[order]
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    return pts, arc


def write_snapshot_csv(path, s, concentration=None):
    """One row per vertex: id, kind, x, y; plus per-cell concentrations."""
    n = s.n_cells
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record", "index", "kind", "x", "y", "concentration"])
        for i, (x, y) in enumerate(s.positions):
            w.writerow(["vertex", i, "apical" if i < n else "basal", repr(float(x)), repr(float(y)), ""])
        if concentration is not None:
            for i, c in enumerate(np.asarray(concentration, dtype=float)):
                w.writerow(["cell", i + 1, "", "", "", repr(float(c))])


def render_svg(s, concentration, c_max=None, size=400):
    """Cells as polygons filled red in proportion to scaled concentration."""
    from .svg import Svg

    c = np.asarray(concentration, dtype=float)
    c_max = float(c.max()) if c_max is None else float(c_max)
    X = s.positions
    r = np.abs(X).max() * 1.05
    scale = size / (2 * r)
    doc = Svg(size, size)
    for cell, ids in enumerate(s.cell_index_map()):
        P = X[ids]
        pts = [((x + r) * scale, (r - y) * scale) for x, y in P]
        level = 0.0 if c_max <= 0 else min(1.0, max(0.0, c[cell] / c_max))
        g = int(round(255 * (1 - level)))
        doc.polygon(pts, fill=f"rgb(255,{g},{g})", stroke="black")
    return doc.render()
