"""Ground-truth field generators.

* Chafee-Infante ``u_t = u - u^3 + nu u_xx`` on [0, 1] with ``u = 0`` at both
  ends (method of lines, explicit Euler).
* The ring-of-cells chemical signal: 80 well-mixed cells on a periodic
  lattice with a time-dependent source in a fixed set of cells.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .tensor import DataTensor, rng_for


class SimulationError(RuntimeError):
    """Numerical failure inside a generator (blow-up, NaN, negativity)."""

    def __init__(self, msg, sample=None, step=None):
        super().__init__(msg)
        self.sample = sample
        self.step = step


@dataclass(frozen=True)
class ChafeeInfanteConfig:
    nu: float = 0.16
    n_x: int = 101
    t_end: float = 10.0
    dt: float = None  # default 0.4 dx^2 / nu
    u0: float = 0.1
    n_out: int = 200

    @property
    def dx(self):
        return 1.0 / (self.n_x - 1)


def solve_chafee_infante(cfg=ChafeeInfanteConfig()):
    """Space-time field of the Chafee-Infante equation, shape (1, n_out, n_x).

    The time step is shrunk so an integer number of steps separates the
    ``n_out`` uniform output times.
    """
    if cfg.n_x < 3:
        raise ValueError("n_x must be >= 3")
    dx = cfg.dx
    dt_max = dx * dx / (2.0 * cfg.nu) if cfg.nu > 0 else math.inf
    dt = cfg.dt if cfg.dt is not None else 0.4 * dx * dx / cfg.nu
    if dt > dt_max:
        raise ValueError(f"dt={dt} exceeds explicit stability limit {dt_max}")
    interval = cfg.t_end / (cfg.n_out - 1)
    every = max(1, math.ceil(interval / dt - 1e-9))
    dt = interval / every
    u0 = np.full(cfg.n_x, float(cfg.u0))
    u0[0] = u0[-1] = 0.0
    out, bad = kernels.chafee_infante(u0, cfg.nu, dx, dt, every * (cfg.n_out - 1), every)
    if bad >= 0:
        raise SimulationError(f"Chafee-Infante blew up (|u| > 10) at step {bad}, t={bad * dt:.4g}", step=bad)
    x = np.linspace(0.0, 1.0, cfg.n_x)
    times = np.linspace(0.0, cfg.t_end, cfg.n_out)
    return DataTensor.from_matrix(out, axis_meta={"t": {"time": times}, "s": {"x": x}})


# ---------------------------------------------------------------------------
# ring-of-cells signal

DEFAULT_SOURCES = tuple(range(13, 20)) + tuple(range(61, 68))


@dataclass(frozen=True)
class SignalParams:
    """Parameters of the ring signal ODE.  ``source_cells`` are 1-based."""

    D_e: float = 0.2
    d: float = 0.08
    t_s: float = 40.0
    k: float = 5e-5
    alpha: float = 0.03
    n_cells: int = 80
    source_cells: tuple = DEFAULT_SOURCES
    dt: float = 0.1
    t_end: float = 120.0

    def validate(self):
        for name in ("D_e", "d", "k", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not all(1 <= c <= self.n_cells for c in self.source_cells):
            raise ValueError("source cells must lie in [1, n_cells]")
        if not 0 < self.t_s < self.t_end:
            raise ValueError("t_s must lie in (0, t_end)")
        if self.dt > 1.0 / (2 * self.D_e + self.d):
            raise ValueError(f"dt={self.dt} violates forward-Euler bound 1/(2 D_e + d)")

    def source_mask(self):
        G = np.zeros(self.n_cells)
        G[np.asarray(self.source_cells, dtype=int) - 1] = 1.0
        return G


def production_rate(t, p):
    """Source strength: ``k t^2`` before ``t_s``, exponential decay after."""
    t = np.asarray(t, dtype=np.float64)
    r = np.where(t < p.t_s, p.k * t * t, p.k * p.t_s ** 2 * np.exp(-p.alpha * (t - p.t_s)))
    return r if r.ndim else float(r)


def _record_steps(times, dt):
    steps = np.rint(np.asarray(times, dtype=np.float64) / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 1e-9 * max(1.0, float(np.max(times)))):
        raise ValueError("output times must be integer multiples of dt")
    if np.any(np.diff(steps) < 0):
        raise ValueError("output times must be nondecreasing")
    return steps


def simulate_signal(p, out_times=None, C0=None):
    """Concentrations ``C[t, i]`` at ``out_times`` (default 61 uniform times)."""
    p.validate()
    if out_times is None:
        out_times = np.linspace(0.0, p.t_end, 61)
    steps = _record_steps(out_times, p.dt)
    C0 = np.zeros((1, p.n_cells)) if C0 is None else np.asarray(C0, dtype=np.float64).reshape(1, -1)
    one = lambda v: np.array([v], dtype=np.float64)
    out, bad = kernels.signal_ensemble(
        one(p.D_e), one(p.d), one(p.t_s), one(p.k), one(p.alpha),
        p.source_mask(), C0, p.dt, int(steps[-1]), steps)
    if bad >= 0:
        raise SimulationError("signal simulation produced NaN or negative concentrations", sample=0)
    return out[0]


@dataclass(frozen=True)
class ParameterSample:
    D_e: float
    d: float
    t_s: float


@dataclass(frozen=True)
class SamplingConfig:
    mean_D_e: float = 0.2
    sd_D_e: float = 0.04
    mean_d: float = 0.075
    sd_d: float = 0.005
    n_sd: float = 2.0
    # t_s = clip(ts0 + a (D_e - mean_D_e) + b (d - mean_d), lo, hi)
    ts0: float = 40.0
    ts_slope_D_e: float = 20.0
    ts_slope_d: float = -400.0
    ts_clip: tuple = (35.0, 45.0)

    def t_s_fn(self, D_e, d):
        ts = self.ts0 + self.ts_slope_D_e * (np.asarray(D_e) - self.mean_D_e) \
            + self.ts_slope_d * (np.asarray(d) - self.mean_d)
        return np.clip(ts, *self.ts_clip)


def t_s_fn(D_e, d, cfg=SamplingConfig()):
    return cfg.t_s_fn(D_e, d)


def _truncated_normal(rng, mean, sd, n_sd, n):
    out = rng.normal(mean, sd, n)
    bad = np.abs(out - mean) > n_sd * sd
    while bad.any():
        out[bad] = rng.normal(mean, sd, int(bad.sum()))
        bad = np.abs(out - mean) > n_sd * sd
    return out


def sample_parameters(n, seed=0, cfg=SamplingConfig()):
    """Draw ``n`` (D_e, d) pairs from 2-sigma truncated normals; t_s follows."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_for(seed)
    D_e = _truncated_normal(rng, cfg.mean_D_e, cfg.sd_D_e, cfg.n_sd, n)
    d = _truncated_normal(rng, cfg.mean_d, cfg.sd_d, cfg.n_sd, n)
    ts = cfg.t_s_fn(D_e, d)
    return [ParameterSample(float(a), float(b), float(c)) for a, b, c in zip(D_e, d, ts)]


def cell_arclength(n_cells=80, R_a=8.5, l_l=3.0):
    """Arclength of each cell centre along the mid-height circle, from theta=0."""
    R = R_a - l_l / 2.0
    return (np.arange(n_cells) + 0.5) * 2.0 * np.pi * R / n_cells


def generate_ensemble(samples, base=SignalParams(), n_out_times=61):
    """Simulate every sample and stack into a (N_p, N_t, N_s) tensor."""
    if len(samples) < 1:
        raise ValueError("need at least one parameter sample")
    for i, s in enumerate(samples):
        try:
            replace(base, D_e=s.D_e, d=s.d, t_s=s.t_s).validate()
        except ValueError as e:
            raise SimulationError(f"sample {i}: {e}", sample=i) from e
    times = np.linspace(0.0, base.t_end, n_out_times)
    steps = _record_steps(times, base.dt)
    n_p = len(samples)
    col = lambda name: np.array([getattr(s, name) for s in samples], dtype=np.float64)
    out, bad = kernels.signal_ensemble(
        col("D_e"), col("d"), col("t_s"), np.full(n_p, base.k), np.full(n_p, base.alpha),
        base.source_mask(), np.zeros((n_p, base.n_cells)), base.dt, int(steps[-1]), steps)
    if bad >= 0:
        raise SimulationError(f"sample {bad}: NaN or negative concentration", sample=bad)
    meta = {
        "p": {"D_e": col("D_e"), "d": col("d"), "t_s": col("t_s")},
        "t": {"time": times},
        "s": {"arclength": cell_arclength(base.n_cells), "cell": np.arange(1, base.n_cells + 1)},
    }
    return DataTensor(out, axis_meta=meta)
