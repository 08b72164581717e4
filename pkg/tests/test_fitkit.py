import math

import numpy as np
import pytest
from scipy import optimize

from ca43sim import fitkit, motion
from ca43sim.errors import DegenerateFitError, DomainError
from ca43sim.rng import stream


def _data(model, x, params, sigma=0.01, rng=None):
    y = model(x, params)
    if rng is not None:
        y = y + rng.normal(0, sigma, x.shape)
    return np.column_stack([x, y, np.full(x.shape, sigma)])


def test_noiseless_sin_time_recovered():
    x = np.linspace(0, 200e-6, 41)
    true = np.array([0.97, 65.3e-6, 0.5])
    res = fitkit.fit_family("sin_time", _data(fitkit.SIN_TIME, x, true))
    np.testing.assert_allclose(res.params, true, rtol=1e-8)
    assert res.converged and res.chi2 < 1e-12


def test_noiseless_families_recovered():
    x = np.linspace(0, 2 * math.pi, 30)
    true = np.array([0.9, 0.7, 0.5])
    res = fitkit.fit_family("sin_phase", _data(fitkit.SIN_PHASE, x, true))
    np.testing.assert_allclose(res.params, true, rtol=1e-8)
    t = np.linspace(0, 50e-6, 30)
    true = np.array([0.96, 9e-6, 0.01])
    res = fitkit.fit_family("exp_decay", _data(fitkit.EXP_DECAY, t, true))
    np.testing.assert_allclose(res.params, true, rtol=1e-8)


def test_reported_sigma_matches_bootstrap():
    rng = stream(12)
    x = np.linspace(0, 200e-6, 30)
    true = np.array([0.95, 60e-6, 0.5])
    sigma = 0.03
    fits = []
    for _ in range(1000):
        res = fitkit.fit(fitkit.SIN_TIME, _data(fitkit.SIN_TIME, x, true, sigma, rng), true)
        fits.append(res.params)
    spread = np.std(fits, axis=0, ddof=1)
    assert np.all(np.abs(res.one_sigma / spread - 1) < 0.15)


def test_initial_guesses():
    rng = stream(2)
    x = np.linspace(0, 300e-6, 60)
    true = np.array([0.9, 45e-6, 0.5])
    data = _data(fitkit.SIN_TIME, x, true, 0.03, rng)
    p0, degenerate = fitkit.init_guess("sin_time", data[:, 0], data[:, 1])
    assert not degenerate
    assert p0[1] == pytest.approx(true[1], rel=0.1)
    t = np.linspace(0, 60e-6, 40)
    data = _data(fitkit.EXP_DECAY, t, np.array([0.95, 12e-6, 0.02]), 0.02, rng)
    p0, _ = fitkit.init_guess("exp_decay", data[:, 0], data[:, 1])
    assert p0[1] == pytest.approx(12e-6, rel=0.2)


def test_constant_data_degenerate():
    data = np.column_stack([np.linspace(0, 1, 20), np.full(20, 0.5), np.full(20, 0.01)])
    for fam in ("sin_time", "sin_phase", "exp_decay"):
        assert fitkit.init_guess(fam, data[:, 0], data[:, 1])[1]
        with pytest.raises(DegenerateFitError):
            fitkit.fit_family(fam, data)


def test_input_validation():
    with pytest.raises(DomainError):
        fitkit.fit(fitkit.SIN_TIME, np.ones((5, 2)), [1, 1, 0])
    with pytest.raises(DomainError):
        fitkit.fit(fitkit.SIN_TIME, np.column_stack([np.ones(5), np.ones(5), np.zeros(5)]), [1, 1, 0])
    with pytest.raises(DomainError):
        fitkit.fit(fitkit.SIN_TIME, np.ones((2, 3)), [1, 1, 0])
    with pytest.raises(DomainError):
        fitkit.get_model("lorentzian")


def test_coherence_time_exact():
    taus = np.array([0.05, 0.2, 0.5, 1.0])
    for form, T, p in (("exponential", 6.0, 1), ("gaussian", 2.5, 2)):
        amps = np.exp(-(taus / T) ** p)
        T2, sT2, chi2 = fitkit.coherence_time(np.column_stack([taus, amps, np.full(4, 0.01)]), form)
        assert T2 == pytest.approx(T, rel=1e-6)
        assert sT2 > 0


def test_coherence_time_from_reference_amplitudes():
    pts = np.array([[50e-6, 0.976, 0.02], [0.2, 0.962, 0.03], [1.0, 0.847, 0.05]])
    assert fitkit.coherence_time(pts, "exponential")[0] == pytest.approx(6.0, rel=0.2)
    assert fitkit.coherence_time(pts, "gaussian")[0] == pytest.approx(2.5, rel=0.2)
    with pytest.raises(DomainError):
        fitkit.coherence_time(pts[:1])


def test_scale_equivariance():
    rng = stream(5)
    x = np.linspace(0, 200e-6, 40)
    true = np.array([0.9, 50e-6, 0.4])
    data = _data(fitkit.SIN_TIME, x, true, 0.02, rng)
    base = fitkit.fit(fitkit.SIN_TIME, data, true)
    k = 3.7
    scaled = data * np.array([1, k, k])
    res = fitkit.fit(fitkit.SIN_TIME, scaled, true * np.array([k, 1, k]))
    np.testing.assert_allclose(res.params, base.params * np.array([k, 1, k]), rtol=1e-9)
    np.testing.assert_allclose(res.one_sigma, base.one_sigma * np.array([k, 1, k]), rtol=1e-6)


def test_reorder_invariance():
    rng = stream(6)
    x = np.linspace(0, 200e-6, 40)
    true = np.array([0.9, 50e-6, 0.4])
    data = _data(fitkit.SIN_TIME, x, true, 0.02, rng)
    a = fitkit.fit(fitkit.SIN_TIME, data, true)
    b = fitkit.fit(fitkit.SIN_TIME, data[rng.permutation(len(x))], true)
    np.testing.assert_allclose(a.params, b.params, rtol=1e-9)


def test_linear_model_matches_weighted_least_squares():
    rng = stream(7)
    x = np.linspace(-1, 2, 25)
    sigma = rng.uniform(0.05, 0.2, x.shape)
    y = 0.3 - 1.2 * x + 0.5 * x ** 2 + rng.normal(0, sigma)
    basis = [np.ones_like, lambda v: v, lambda v: v ** 2]
    res = fitkit.fit(fitkit.linear_model(basis), np.column_stack([x, y, sigma]), [0, 0, 0])
    M = np.column_stack([b(x) for b in basis]) / sigma[:, None]
    A = M.T @ M
    coef = np.linalg.solve(A, M.T @ (y / sigma))
    np.testing.assert_allclose(res.params, coef, rtol=1e-10)
    np.testing.assert_allclose(res.covariance, np.linalg.inv(A), rtol=1e-8)


def test_agrees_with_scipy_least_squares():
    rng = stream(9)
    x = np.linspace(0, 60e-6, 35)
    true = np.array([0.95, 10e-6, 0.03])
    data = _data(fitkit.EXP_DECAY, x, true, 0.02, rng)
    ours = fitkit.fit_family("exp_decay", data)
    # parameters scaled to order one so MINPACK's tolerances are meaningful
    ref = optimize.least_squares(
        lambda q: (fitkit.EXP_DECAY(x, q * true) - data[:, 1]) / data[:, 2],
        ours.params / true * 1.05, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    np.testing.assert_allclose(ours.params, ref.x * true, rtol=1e-6)
    assert ours.chi2 == pytest.approx(float(ref.fun @ ref.fun), rel=1e-10)


def test_phase_canonical():
    x = np.linspace(0, 2 * math.pi, 20)
    data = _data(fitkit.SIN_PHASE, x, np.array([0.8, 0.3, 0.5]))
    res = fitkit.fit(fitkit.SIN_PHASE, data, [-0.8, 0.3 + math.pi, 0.5])
    assert res["A"] > 0
    assert -math.pi < res["phi0"] <= math.pi
    assert res["phi0"] == pytest.approx(0.3, abs=1e-8)


def test_thermal_round_trip():
    eta = 0.1
    omega0 = 2 * math.pi * 20e3
    t = np.linspace(0, 300e-6, 40)
    n = 2000
    p = motion.thermal_flop(t, 0.06, eta, omega0, 1)
    rng = stream(10)
    y = rng.binomial(n, p) / n
    model = fitkit.thermal_flop_model(eta, 1)
    res = fitkit.fit_binomial(model, t, y, n, [0.1, omega0 * 1.02])
    assert res["nbar"] == pytest.approx(0.06, abs=0.01)
    assert res["omega0"] == pytest.approx(omega0, rel=0.01)


def test_result_dict():
    x = np.linspace(0, 200e-6, 20)
    res = fitkit.fit_family("sin_time", _data(fitkit.SIN_TIME, x, np.array([0.9, 50e-6, 0.5])))
    d = res.as_dict()
    assert set(d["params"]) == {"A", "tau_pi", "y0"}
    assert d["dof"] == 17
