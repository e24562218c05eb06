"""Pipeline configuration: YAML file, defaults, validation.

Schema (every key optional; unknown keys are errors)::

    seed: int                      # global seed; EPDE_SEED overrides
    dataset: chafee_infante | signal
    generate:
      chafee_infante: {nu, n_x, t_end, u0, n_out}
      signal: {n_samples, n_out_times}
    scramble: {axes: str, drop: {axis: fraction}, seed_offset: int}
    organize:
      level_weight, threshold_growth, quantile, max_sweeps, tol, unique_limit
      diffusion: {epsilon, n_eigs, knn, normalization, unique_threshold}
      axis_diffusion: {p|t|s: {same keys as diffusion}}
    coords:
      sample: int                  # parameter channel charted (signal data)
      time_anchor: min_mass | max_mass
      n_psi, n_phi, corridor_fraction, corridor_dilate, boundary_width, knn
      columns: {t|s: unique | int}  # unique coordinates, or the n leading ones
    learn: {epochs, batch, lr0, plateau_patience, lr_factor,
            n_val_snapshots, samples_per_epoch, source: bool}
    integrate: {substeps, scheme, svd_energy, blowup_factor}
    plot: {color_by: {p|t|s: metadata column}}
"""
import copy
import os

import yaml

_num = (int, float)
_opt_int = (int, type(None))

DIFFUSION_KEYS = {
    "epsilon": (int, float, str, type(None)),
    "n_eigs": int,
    "knn": _opt_int,
    "normalization": str,
    "unique_threshold": _num,
}

SCHEMA = {
    "seed": int,
    "dataset": str,
    "generate": {
        "chafee_infante": {"nu": _num, "n_x": int, "t_end": _num, "u0": _num, "n_out": int},
        "signal": {"n_samples": int, "n_out_times": int},
    },
    "scramble": {"axes": str, "drop": dict, "seed_offset": int},
    "organize": {
        "level_weight": _num, "threshold_growth": _num, "quantile": _num,
        "max_sweeps": int, "tol": _num, "unique_limit": int,
        "diffusion": DIFFUSION_KEYS,
        "axis_diffusion": dict,
    },
    "coords": {
        "sample": int, "time_anchor": str, "n_psi": int, "n_phi": int,
        "corridor_fraction": _num, "corridor_dilate": int, "boundary_width": int, "knn": int,
        "columns": dict,
    },
    "learn": {
        "epochs": int, "batch": int, "lr0": _num, "plateau_patience": int, "lr_factor": _num,
        "n_val_snapshots": int, "samples_per_epoch": _opt_int, "source": bool,
    },
    "integrate": {"substeps": int, "scheme": str, "svd_energy": (int, float, type(None)), "blowup_factor": _num},
    "plot": {"color_by": dict},
}

DEFAULTS = {
    "seed": 0,
    "dataset": "signal",
    "generate": {
        "chafee_infante": {"nu": 0.16, "n_x": 60, "t_end": 10.0, "u0": 0.1, "n_out": 60},
        "signal": {"n_samples": 200, "n_out_times": 61},
    },
    "scramble": {"axes": "pts", "drop": {}, "seed_offset": 1},
    "organize": {
        "level_weight": 0.5, "threshold_growth": 2.0, "quantile": 25.0,
        "max_sweeps": 6, "tol": 1e-3, "unique_limit": 5,
        "diffusion": {"epsilon": "auto", "n_eigs": 10, "knn": None,
                      "normalization": "row-stochastic", "unique_threshold": 0.5},
        "axis_diffusion": {},
    },
    "coords": {
        "sample": 0, "time_anchor": "min_mass", "n_psi": 128, "n_phi": 1500,
        "corridor_fraction": 0.9, "corridor_dilate": 2, "boundary_width": 2, "knn": 4,
        "columns": {"t": "unique", "s": "unique"},
    },
    "learn": {
        "epochs": 1500, "batch": 128, "lr0": 0.005, "plateau_patience": 75, "lr_factor": 0.5,
        "n_val_snapshots": 10, "samples_per_epoch": None, "source": True,
    },
    "integrate": {"substeps": 4, "scheme": "rk4", "svd_energy": 0.999, "blowup_factor": 10.0},
    "plot": {"color_by": {}},
}

CHOICES = {
    ("dataset",): ("chafee_infante", "signal"),
    ("coords", "time_anchor"): ("min_mass", "max_mass"),
    ("integrate", "scheme"): ("rk4", "euler"),
    ("organize", "diffusion", "normalization"): ("row-stochastic", "density"),
}

POSITIVE = [
    ("generate", "chafee_infante", "n_x"), ("generate", "chafee_infante", "n_out"),
    ("generate", "chafee_infante", "t_end"), ("generate", "signal", "n_samples"),
    ("generate", "signal", "n_out_times"), ("coords", "n_psi"), ("coords", "n_phi"),
    ("learn", "epochs"), ("learn", "batch"), ("learn", "lr0"), ("integrate", "substeps"),
]


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("drop", "axis_diffusion", "color_by", "columns"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check(node, schema, path, problems):
    if not isinstance(node, dict):
        problems.append(f"{'.'.join(path) or '<root>'}: expected a mapping")
        return
    for k, v in node.items():
        where = ".".join(path + [str(k)])
        if k not in schema:
            problems.append(f"{where}: unknown key")
            continue
        want = schema[k]
        if isinstance(want, dict):
            _check(v, want, path + [k], problems)
            continue
        if isinstance(v, bool) and want is not bool and bool not in (want if isinstance(want, tuple) else (want,)):
            problems.append(f"{where}: expected {_tname(want)}, got bool")
        elif not isinstance(v, want):
            problems.append(f"{where}: expected {_tname(want)}, got {type(v).__name__}")


def _tname(t):
    ts = t if isinstance(t, tuple) else (t,)
    return " or ".join("null" if x is type(None) else x.__name__ for x in ts)


def _get(cfg, path):
    for k in path:
        if not isinstance(cfg, dict) or k not in cfg:
            return None
        cfg = cfg[k]
    return cfg


def validate(cfg):
    """Collect every problem in ``cfg``; raise ConfigError listing all of them."""
    problems = []
    _check(cfg, SCHEMA, [], problems)
    for path, allowed in CHOICES.items():
        v = _get(cfg, path)
        if v is not None and v not in allowed:
            problems.append(f"{'.'.join(path)}: {v!r} not in {allowed}")
    for path in POSITIVE:
        v = _get(cfg, path)
        if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
            problems.append(f"{'.'.join(path)}: must be positive")
    sc = cfg.get("scramble", {})
    for ax in str(sc.get("axes", "")):
        if ax not in "pts":
            problems.append(f"scramble.axes: unknown axis {ax!r}")
    for ax, frac in (sc.get("drop") or {}).items() if isinstance(sc.get("drop"), dict) else ():
        if ax not in ("p", "t", "s"):
            problems.append(f"scramble.drop: unknown axis {ax!r}")
        elif not isinstance(frac, (int, float)) or not 0 <= frac < 1:
            problems.append(f"scramble.drop.{ax}: fraction must be in [0, 1)")
    ad = _get(cfg, ("organize", "axis_diffusion"))
    if isinstance(ad, dict):
        for ax, sub in ad.items():
            if ax not in ("p", "t", "s", "rows", "cols"):
                problems.append(f"organize.axis_diffusion: unknown axis {ax!r}")
            else:
                _check(sub, DIFFUSION_KEYS, ["organize", "axis_diffusion", ax], problems)
    cols = _get(cfg, ("coords", "columns"))
    if isinstance(cols, dict):
        for ax, v in cols.items():
            if ax not in ("t", "s"):
                problems.append(f"coords.columns: unknown axis {ax!r}")
            elif v != "unique" and not (isinstance(v, int) and not isinstance(v, bool) and v >= 1):
                problems.append(f"coords.columns.{ax}: expected 'unique' or a positive integer")
    cb = _get(cfg, ("plot", "color_by"))
    if isinstance(cb, dict):
        for ax, col in cb.items():
            if ax not in ("p", "t", "s") or not isinstance(col, str):
                problems.append(f"plot.color_by.{ax}: expected axis p/t/s mapped to a column name")
    if cfg.get("dataset") == "chafee_infante" and _get(cfg, ("learn", "source")):
        problems.append("learn.source: the Chafee-Infante field has no source; set it to false")
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path=None, env=None):
    """Defaults, overlaid with the YAML file at ``path``, then ``EPDE_SEED``."""
    env = os.environ if env is None else env
    user = {}
    if path is not None:
        with open(path) as fh:
            try:
                user = yaml.safe_load(fh) or {}
            except yaml.YAMLError as e:
                raise ConfigError([f"{path}: {e}"]) from e
        if not isinstance(user, dict):
            raise ConfigError([f"{path}: top level must be a mapping"])
        problems = []
        _check(user, SCHEMA, [], problems)
        if problems:
            raise ConfigError(problems)
    if user.get("dataset") == "chafee_infante":
        user = _merge({"learn": {"source": False}}, user)
    cfg = _merge(DEFAULTS, user)
    if env.get("EPDE_SEED", "").strip():
        try:
            cfg["seed"] = int(env["EPDE_SEED"])
        except ValueError as e:
            raise ConfigError([f"EPDE_SEED: not an integer ({env['EPDE_SEED']!r})"]) from e
    return validate(cfg)
