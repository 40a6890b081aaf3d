import numpy as np
import pytest

from wflow.dynamics import (ConfigurationError, SGFConfig, _Engine,
                            lyapunov_violation, martingale_diagnostics,
                            run_deterministic_flow, run_sgf,
                            stationary_coefficient_stats)
from wflow.energy import entropy_preset, zero_integrand
from wflow.gradient import identity_gamma


def _config(basis, w, **kw):
    defaults = dict(basis=basis, weights=w, F=entropy_preset(),
                    gamma=identity_gamma(), n=4, dt=1e-3, n_steps=500,
                    ensemble=4, seed=0, scheme="mala-ou", record_stride=10)
    defaults.update(kw)
    return SGFConfig(**defaults)


def test_unknown_scheme_rejected(basis8, w8):
    with pytest.raises(ConfigurationError):
        _config(basis8, w8, scheme="leapfrog")


def test_zero_energy_drift_is_linear(basis8, w8):
    cfg = _config(basis8, w8, F=zero_integrand())
    eng = _Engine(cfg)
    c = np.array([[0.01, -0.02, 0.003, 0.0, 0.001, 0.0, 0.0, 0.0]])
    assert np.allclose(eng.drift(c), -w8.b * c, atol=1e-14)


def test_exact_ou_proposal_always_accepted(basis8, w8):
    # with F = 0 the exponential proposal samples the OU transition exactly,
    # so the Metropolis ratio is identically 1
    cfg = _config(basis8, w8, F=zero_integrand(), n=None, n_steps=200)
    res = run_sgf(cfg)
    assert res.acceptance_rate == 1.0
    assert res.rejections == 0


def test_vanilla_mala_step_sanity(basis8, w8):
    # dt = 1e-3 with stiff weights makes the Euler proposal explode
    cfg = _config(basis8, w8, scheme="mala", dt=1e-3)
    with pytest.raises(ConfigurationError):
        run_sgf(cfg)


def test_euler_reflect_accepts_certified_moves(basis8, w8):
    dt = 0.1 / float(w8.b[-1])
    cfg = _config(basis8, w8, scheme="euler-reflect", dt=dt, n_steps=200)
    res = run_sgf(cfg)
    assert res.acceptance_rate > 0.99
    assert res.all_states_certified()


def test_run_sgf_deterministic(basis8, w8):
    cfg = _config(basis8, w8, n_steps=300)
    r1 = run_sgf(cfg)
    r2 = run_sgf(cfg)
    assert np.array_equal(r1.states, r2.states)
    assert np.array_equal(r1.obs_series, r2.obs_series)
    assert r1.acceptance_rate == r2.acceptance_rate


def test_states_remain_certified(basis8, w8):
    res = run_sgf(_config(basis8, w8, n_steps=300))
    assert res.all_states_certified()


def test_recording_shapes(basis8, w8):
    cfg = _config(basis8, w8, n_steps=500, record_stride=10)
    res = run_sgf(cfg)
    assert res.states.shape == (4, 51, 8)
    assert res.obs_series.shape[:2] == (4, 51)
    assert res.times[-1] == pytest.approx(0.5)
    var, se = stationary_coefficient_stats(res)
    assert var.shape == (8,) and se.shape == (8,)


def test_diagnostics_report_structure(basis8, w8):
    res = run_sgf(_config(basis8, w8, n_steps=800))
    rep = martingale_diagnostics(res)
    names = {"tanh", "gausslet", "cos"}
    assert set(rep.stationarity) == names
    assert set(rep.energy_ratio) == names
    assert set(rep.qv_ratio) == names


def test_deterministic_flow_decreases_energy(basis8, w8):
    cfg = _config(basis8, w8)
    res = run_deterministic_flow(cfg, np.zeros(8), T=0.05)
    assert res.completed
    assert lyapunov_violation(res) <= 1e-8


def test_flow_from_perturbed_start_converges_toward_base(basis8, w8):
    # entropy flow with gamma = 1 relaxes phi toward a critical point of W_F
    cfg = _config(basis8, w8)
    c0 = np.zeros(8)
    c0[0] = 0.05
    res = run_deterministic_flow(cfg, c0, T=0.05)
    assert res.completed
    assert res.energies[-1] < res.energies[0]
