import warnings
from dataclasses import replace

import numpy as np
import pytest

from isslab import (Scenario, SimMode, dcheck_bound, fit_decay_rate,
                    iss_sweep, linf_series, lyapunov_monitor,
                    transform_consistency)
from isslab.analysis import truncation_G, truncation_g
from isslab.sim import SimTrace, build_resources, simulate


def make_trace(fields, mode=SimMode.TARGET_DIRECT, n=None, dt=1e-3):
    fields = np.asarray(fields, dtype=float)
    n = n or fields.shape[1]
    sc = Scenario(mode=mode, n=n, dt=dt, t_end=dt * max(1, fields.shape[0] - 1),
                  store_every=1)
    times = np.arange(fields.shape[0]) * dt
    return SimTrace(scenario=sc, times=times, fields=fields,
                    control=np.zeros(fields.shape[0]),
                    boundary_output=fields[:, 0],
                    linf=np.max(np.abs(fields), axis=1))


def test_linf_series_trivial():
    tr = make_trace(np.zeros((4, 5)))
    _, norms = linf_series(tr)
    assert np.all(norms == 0.0)
    tr2 = make_trace(np.array([[0.0, -2.0, 1.0]]))
    _, norms2 = linf_series(tr2)
    assert norms2[0] == 2.0


def test_linf_series_selectors():
    tr = make_trace(np.ones((3, 4)))
    with pytest.raises(ValueError):
        linf_series(tr, "secondary")
    with pytest.raises(ValueError):
        linf_series(tr, "nonsense")


def test_fit_decay_exact_exponential():
    t = np.linspace(0, 3, 200)
    assert fit_decay_rate(t, np.exp(-2 * t), (0.2, 2.8)) == pytest.approx(2.0, abs=1e-10)


def test_fit_decay_constant():
    t = np.linspace(0, 3, 100)
    assert fit_decay_rate(t, np.ones_like(t), (0.5, 2.5)) == pytest.approx(0.0, abs=1e-12)


def test_fit_decay_rejects_nonpositive():
    t = np.linspace(0, 1, 10)
    norms = np.linspace(1, -0.1, 10)
    with pytest.raises(ValueError):
        fit_decay_rate(t, norms, (0.0, 1.0))


def test_truncation_functions():
    assert truncation_g(-1.0, 3.0) == 0.0
    assert truncation_g(2.0, 3.0) == 8.0
    assert truncation_G(-5.0, 3.0) == 0.0
    assert truncation_G(2.0, 3.0) == pytest.approx(4.0)


def test_monitor_zero_trace_is_zero():
    sc = Scenario(mode=SimMode.TARGET_DIRECT, n=31, dt=1e-3, t_end=0.01, store_every=1)
    tr = make_trace(np.zeros((5, 31)))
    tr.scenario = sc
    _, vup, vdn = lyapunov_monitor(tr, sigma=0.5, r=3.0, D_check=1.0)
    assert np.all(vup == 0.0) and np.all(vdn == 0.0)


def test_monitor_large_level_kills_everything():
    tr = make_trace(np.random.default_rng(0).normal(size=(6, 31)))
    _, vup, vdn = lyapunov_monitor(tr, sigma=0.5, r=3.0, D_check=1e9)
    assert np.all(vup == 0.0) and np.all(vdn == 0.0)


def test_monitor_domain_checks():
    tr = make_trace(np.zeros((3, 31)))
    with pytest.raises(ValueError):
        lyapunov_monitor(tr, sigma=100.0, r=3.0, D_check=1.0)
    with pytest.raises(ValueError):
        lyapunov_monitor(tr, sigma=0.5, r=0.5, D_check=1.0)
    tr_bad = make_trace(np.zeros((3, 31)), mode=SimMode.OPEN_LOOP)
    with pytest.raises(ValueError):
        lyapunov_monitor(tr_bad, sigma=0.5, r=3.0, D_check=1.0)


def test_transform_consistency_trivial_and_shift(kgrid201):
    n = 201
    zero = make_trace(np.zeros((3, n)))
    assert transform_consistency(zero, zero, kgrid201) == 0.0
    shifted = make_trace(np.zeros((3, n)) + 0.25)
    # a constant offset of the target trace shows up verbatim
    assert transform_consistency(zero, shifted, kgrid201) == pytest.approx(0.25)


def test_transform_consistency_time_mismatch(kgrid201):
    a = make_trace(np.zeros((3, 201)))
    b = make_trace(np.zeros((4, 201)))
    with pytest.raises(ValueError):
        transform_consistency(a, b, kgrid201)


def test_sweep_determinism_and_validation():
    base = Scenario(mode=SimMode.STATE_FEEDBACK, n=51, dt=1e-3, t_end=0.5,
                    store_every=20, A=2.0, A0=1.0, A1=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = iss_sweep(base, [1.0, 1.0], (0.2, 0.5))
    assert res.sup_norms[0] == res.sup_norms[1]
    with pytest.raises(ValueError):
        iss_sweep(base, [3.0, 1.0], (0.2, 0.5))
    with pytest.raises(ValueError):
        iss_sweep(base, [0.0, 1.0], (0.2, 9.0))


def test_sweep_csv(tmp_path):
    base = Scenario(mode=SimMode.STATE_FEEDBACK, n=51, dt=1e-3, t_end=0.4,
                    store_every=20)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = iss_sweep(base, [0.0, 1.0], (0.1, 0.4))
    path = tmp_path / "sweep.csv"
    res.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "scale,sup_norm"
    assert len(lines) == 3


def test_dcheck_bound_respects_sigma_domain():
    sc = Scenario(mode=SimMode.TARGET_DIRECT, n=51, dt=1e-3, t_end=0.5)
    res = build_resources(sc)
    with pytest.raises(ValueError):
        dcheck_bound(sc, res.kgrid, sigma=50.0)
    level = dcheck_bound(sc, res.kgrid, sigma=0.5 * sc.underline_c())
    xs = sc.nodes
    u0 = sc.u0_values(xs)
    assert level >= np.max(np.abs(u0)) - 1e-12
