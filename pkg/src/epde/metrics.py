"""Scores comparing recovered organization and fields against ground truth."""
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .diffmaps import local_linear_loo


class UndefinedMetric(ValueError):
    """The metric has no value for this input (e.g. a constant vector)."""


def spearman(a, b):
    """Rank correlation with average ranks for ties."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError("inputs differ in length")
    if a.size < 3:
        raise ValueError("need at least 3 values")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    den = np.sqrt((ra * ra).sum() * (rb * rb).sum())
    if den == 0:
        raise UndefinedMetric("rank correlation is undefined for a constant input")
    return float(np.clip((ra * rb).sum() / den, -1.0, 1.0))


def relative_l2(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    den = np.linalg.norm(truth)
    if den == 0:
        raise UndefinedMetric("truth has zero norm")
    return float(np.linalg.norm(pred - truth) / den)


def local_linear_r2(X, y, bandwidth=None):
    """Leave-one-out R^2 of ``y`` predicted from ``X`` by local-linear regression.

    Clipped below at 0 (a fit worse than the mean counts as no fit).
    """
    y = np.asarray(y, dtype=np.float64)
    ss = ((y - y.mean()) ** 2).sum()
    if ss == 0:
        raise UndefinedMetric("target is constant")
    pred = local_linear_loo(X, y, bandwidth)
    return float(max(0.0, 1.0 - ((y - pred) ** 2).sum() / ss))


@dataclass
class EvalReport:
    """Organization and reconstruction scores; ``None`` where ground truth is absent."""

    spearman: dict = field(default_factory=dict)      # axis -> rho of extracted arclength vs truth
    unique_param_coords: int = None
    param_r2: dict = field(default_factory=dict)      # parameter name -> R^2
    field_rel_l2: float = None
    runtimes: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def rows(self):
        out = [(f"spearman[{k}]", v) for k, v in sorted(self.spearman.items())]
        if self.unique_param_coords is not None:
            out.append(("unique parameter coordinates", self.unique_param_coords))
        out += [(f"R2[{k}]", v) for k, v in sorted(self.param_r2.items())]
        if self.field_rel_l2 is not None:
            out.append(("field relative L2", self.field_rel_l2))
        return out


def safe(fn, *args, notes=None, label=""):
    """Call a metric, returning None (and a note) when it is undefined."""
    try:
        return fn(*args)
    except UndefinedMetric as e:
        if notes is not None:
            notes.append(f"{label}: {e}")
        return None
