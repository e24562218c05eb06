import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epde.metrics import EvalReport, UndefinedMetric, local_linear_r2, relative_l2, safe, spearman


def brute_spearman(a, b):
    """Average ranks by counting, then Pearson on the ranks."""
    def ranks(v):
        out = []
        for x in v:
            below = sum(1 for y in v if y < x)
            equal = sum(1 for y in v if y == x)
            out.append(below + (equal + 1) / 2)
        return out

    ra, rb = ranks(list(a)), ranks(list(b))
    n = len(ra)
    ma, mb = sum(ra) / n, sum(rb) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    den = (sum((x - ma) ** 2 for x in ra) * sum((y - mb) ** 2 for y in rb)) ** 0.5
    return num / den


def brute_local_linear_r2(X, y, bw):
    n = len(y)
    pred = np.empty(n)
    for i in range(n):
        rows, rhs = np.zeros((3, 3)), np.zeros(3)
        for j in range(n):
            if j == i:
                continue
            w = np.exp(-((X[i] - X[j]) ** 2).sum() / bw ** 2)
            a = np.array([1.0, X[j, 0], X[j, 1]])
            rows += w * np.outer(a, a)
            rhs += w * a * y[j]
        beta = np.linalg.solve(rows, rhs)
        pred[i] = beta @ np.array([1.0, X[i, 0], X[i, 1]])
    return max(0.0, 1 - ((y - pred) ** 2).sum() / ((y - y.mean()) ** 2).sum())


def test_spearman_examples():
    a = np.array([3.0, 1.0, 4.0, 1.5, 9.0])
    assert spearman(a, a) == 1.0
    assert spearman(a, -a) == -1.0
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-15)


def test_spearman_ties_use_average_ranks():
    a, b = [1, 2, 2, 3], [1, 2, 3, 4]
    # ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4)
    assert spearman(a, b) == pytest.approx(4.5 / np.sqrt(4.5 * 5.0), abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=3, max_size=25))
def test_spearman_matches_brute_force(pairs):
    a, b = zip(*pairs)
    if len(set(a)) == 1 or len(set(b)) == 1:
        with pytest.raises(UndefinedMetric):
            spearman(a, b)
        return
    rho = spearman(a, b)
    assert -1.0 <= rho <= 1.0
    assert rho == pytest.approx(brute_spearman(a, b), abs=1e-12)


def test_spearman_errors():
    with pytest.raises(UndefinedMetric):
        spearman([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2])
    with pytest.raises(ValueError):
        spearman([1, 2, 3], [1, 2, 3, 4])


def test_relative_l2_examples(rng):
    truth = rng.normal(size=(7, 5))
    assert relative_l2(truth, truth) == 0.0
    assert relative_l2(np.zeros_like(truth), truth) == 1.0
    assert relative_l2(1.1 * truth, truth) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(UndefinedMetric):
        relative_l2(truth, np.zeros_like(truth))
    with pytest.raises(ValueError):
        relative_l2(truth[:3], truth)


def test_local_linear_r2_matches_brute_force(rng):
    X = rng.uniform(size=(60, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + 0.05 * rng.normal(size=60)
    r2 = local_linear_r2(X, y, bandwidth=0.2)
    assert 0.0 <= r2 <= 1.0
    assert r2 == pytest.approx(brute_local_linear_r2(X, y, 0.2), abs=1e-8)


def test_local_linear_r2_linear_target_is_one(rng):
    X = rng.uniform(size=(50, 2))
    assert local_linear_r2(X, 2 * X[:, 0] - X[:, 1]) == pytest.approx(1.0, abs=1e-9)


def test_local_linear_r2_clips_at_zero(rng):
    X = rng.uniform(size=(80, 2))
    assert local_linear_r2(X, rng.normal(size=80), bandwidth=0.05) >= 0.0
    with pytest.raises(UndefinedMetric):
        local_linear_r2(X, np.ones(80))


def test_safe_records_undefined_metrics():
    notes = []
    assert safe(spearman, [1, 1, 1], [1, 2, 3], notes=notes, label="spearman[t]") is None
    assert notes and notes[0].startswith("spearman[t]:")
    assert safe(spearman, [1, 2, 3], [1, 2, 3], notes=notes) == 1.0
    with pytest.raises(ValueError):
        safe(spearman, [1, 2], [1, 2])


def test_eval_report_rows_and_json():
    rep = EvalReport(spearman={"t": 0.99, "s": -0.97}, unique_param_coords=2,
                     param_r2={"d": 0.95, "D_e": 0.5}, field_rel_l2=0.04)
    assert rep.rows() == [("spearman[s]", -0.97), ("spearman[t]", 0.99),
                          ("unique parameter coordinates", 2), ("R2[D_e]", 0.5), ("R2[d]", 0.95),
                          ("field relative L2", 0.04)]
    assert EvalReport(**json.loads(rep.to_json())) == rep
    assert EvalReport().rows() == []
