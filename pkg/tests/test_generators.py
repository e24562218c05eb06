from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epde.generators import (ChafeeInfanteConfig, ParameterSample, SignalParams, SimulationError,
                             generate_ensemble, production_rate, sample_parameters,
                             simulate_signal, solve_chafee_infante, t_s_fn)


def test_chafee_zero_is_a_fixed_point(backend):
    u = solve_chafee_infante(ChafeeInfanteConfig(u0=0.0, n_x=31, n_out=20)).matrix()
    assert not u.any()


def test_chafee_settles_and_step_doubling_agrees(backend):
    cfg = ChafeeInfanteConfig(nu=0.16, u0=0.1, n_out=11)
    u = solve_chafee_infante(cfg).matrix()
    assert np.abs(u[-1] - u[-2]).max() < 1e-3
    half = solve_chafee_infante(replace(cfg, dt=0.2 * cfg.dx ** 2 / cfg.nu)).matrix()
    assert np.abs(half - u).max() < 1e-5


def test_chafee_mirror_symmetry(backend):
    u = solve_chafee_infante(ChafeeInfanteConfig(n_x=41, n_out=15)).matrix()
    assert np.abs(u - u[:, ::-1]).max() <= 1e-12
    assert u.shape == (15, 41)


def test_chafee_rejects_unstable_step():
    with pytest.raises(ValueError):
        solve_chafee_infante(ChafeeInfanteConfig(n_x=11, dt=1.0))
    with pytest.raises(ValueError):
        solve_chafee_infante(ChafeeInfanteConfig(n_x=2))


def test_chafee_blowup_reported(backend):
    with pytest.raises(SimulationError):
        solve_chafee_infante(ChafeeInfanteConfig(u0=50.0, n_x=11, n_out=5, t_end=1.0))


def test_production_rate_examples():
    p = SignalParams()
    assert production_rate(0.0, p) == 0.0
    assert production_rate(40.0, p) == pytest.approx(0.08, rel=1e-12)
    assert p.k * 40.0 ** 2 == pytest.approx(0.08, rel=1e-12)
    assert production_rate(40.0 + 1 / p.alpha, p) == pytest.approx(0.08 / np.e, rel=1e-12)


@given(st.floats(1.0, 100.0), st.floats(1e-6, 1e-3), st.floats(0.0, 1.0))
def test_production_rate_continuous_at_stop(ts, k, alpha):
    p = SignalParams(t_s=ts, k=k, alpha=alpha, t_end=200.0)
    left = production_rate(np.nextafter(ts, 0), p)
    assert production_rate(ts, p) == pytest.approx(k * ts * ts, rel=1e-12)
    assert left == pytest.approx(k * ts * ts, rel=1e-9)


def test_mass_conserved_without_source_or_decay(backend):
    p = SignalParams(d=0.0, k=0.0, t_end=100.0)
    C0 = np.random.default_rng(0).random(p.n_cells)
    C = simulate_signal(p, np.linspace(0, 100, 11), C0=C0)
    drift = np.abs(C.sum(axis=1) - C0.sum()) / C0.sum()
    assert drift.max() <= 1e-12


def test_no_diffusion_keeps_other_cells_empty(backend):
    p = SignalParams(D_e=0.0, source_cells=(5,))
    C = simulate_signal(p)
    assert C[:, 4].max() > 0
    assert not np.delete(C, 4, axis=1).any()


def test_default_run_peaks_after_stop_then_decays(backend):
    times = np.arange(0.0, 120.01, 1.0)
    fine = simulate_signal(replace(SignalParams(), dt=0.01), times)
    finer = simulate_signal(replace(SignalParams(), dt=0.005), times)
    assert np.abs(fine - finer).max() <= 1e-4
    peak = fine.max(axis=1)
    k = int(np.argmax(peak))
    assert times[k] >= 40.0
    assert (np.diff(peak[k:]) <= 0).all()


def test_forward_euler_first_order(backend):
    times = np.arange(0.0, 120.01, 2.0)
    C = [simulate_signal(replace(SignalParams(), dt=dt), times) for dt in (0.1, 0.05, 0.025)]
    ratio = np.abs(C[0] - C[1]).max() / np.abs(C[1] - C[2]).max()
    assert 1.7 <= ratio <= 2.3


def test_reflection_symmetry(backend):
    p = SignalParams(source_cells=(10, 11, 70, 71))
    C = simulate_signal(p)
    assert np.abs(C - C[:, ::-1]).max() <= 1e-12


def test_signal_params_validated():
    for bad in (dict(D_e=-1.0), dict(source_cells=(0,)), dict(t_s=200.0), dict(dt=5.0)):
        with pytest.raises(ValueError):
            simulate_signal(SignalParams(**bad))


def test_sampled_parameters_stay_in_bounds():
    s = sample_parameters(1000, seed=3)
    D = np.array([x.D_e for x in s])
    d = np.array([x.d for x in s])
    assert D.min() >= 0.12 and D.max() <= 0.28
    assert d.min() >= 0.065 and d.max() <= 0.085
    assert sample_parameters(1000, seed=3) == s
    ts = np.array([x.t_s for x in s])
    assert np.array_equal(ts, t_s_fn(D, d))
    with pytest.raises(ValueError):
        sample_parameters(0)


def test_ensemble_shape_and_metadata(backend):
    s = sample_parameters(2, seed=0)
    t = generate_ensemble(s, n_out_times=61)
    assert t.dims == (2, 61, 80)
    np.testing.assert_array_equal(t.axis_meta["p"]["D_e"], [x.D_e for x in s])
    assert t.axis_meta["t"]["time"][-1] == 120.0


def test_duplicate_samples_give_identical_slabs(backend):
    a = ParameterSample(0.2, 0.075, 40.0)
    v = generate_ensemble([a, a], n_out_times=13).values
    assert np.array_equal(v[0], v[1])


def test_larger_decay_gives_smaller_late_concentration(backend):
    t = generate_ensemble([ParameterSample(0.2, 0.07, 40.0), ParameterSample(0.2, 0.08, 40.0)],
                          n_out_times=13)
    late = t.axis_meta["t"]["time"] > 40
    assert (t.values[1][late] < t.values[0][late]).all()


def test_ensemble_matches_single_runs(backend):
    s = sample_parameters(3, seed=9)
    t = generate_ensemble(s, n_out_times=7)
    for i, x in enumerate(s):
        single = simulate_signal(replace(SignalParams(), D_e=x.D_e, d=x.d, t_s=x.t_s),
                                 np.linspace(0, 120, 7))
        np.testing.assert_allclose(t.values[i], single, rtol=0, atol=1e-14)


def test_bad_sample_index_reported():
    with pytest.raises(SimulationError) as e:
        generate_ensemble([ParameterSample(0.2, 0.075, 40.0), ParameterSample(-1.0, 0.075, 40.0)])
    assert e.value.sample == 1
