import math

import numpy as np
import pytest
from scipy import integrate, linalg

from ca43sim import atomic, motion
from ca43sim.errors import DomainError
from ca43sim.motion import BeamGeometry, HarmonicMode, MotionalState, TransportRamp

MASS = atomic.default_constants().mass
AXIAL = HarmonicMode(2 * math.pi * 1.18e6, MASS)
LAMBDA_397 = 396.959e-9


# --- Lamb-Dicke -------------------------------------------------------------


def test_copropagating_eta_is_zero():
    assert motion.lamb_dicke(BeamGeometry.copropagating(LAMBDA_397), AXIAL) == 0.0


def test_right_angle_pair_eta():
    eta = motion.lamb_dicke(BeamGeometry.right_angle_pair(LAMBDA_397), AXIAL)
    k = 2 * math.pi / LAMBDA_397
    direct = math.sqrt(2) * k * math.sqrt(1.054571817e-34 / (2 * MASS * AXIAL.omega))
    assert eta == pytest.approx(direct, rel=1e-6)
    assert eta == pytest.approx(0.223, abs=0.001)
    assert eta == pytest.approx(0.216, rel=0.05)


def test_eta_scales_as_inverse_root_frequency():
    geom = BeamGeometry.right_angle_pair(LAMBDA_397)
    e1 = motion.lamb_dicke(geom, AXIAL)
    e2 = motion.lamb_dicke(geom, HarmonicMode(2 * AXIAL.omega, MASS))
    assert e2 / e1 == pytest.approx(1 / math.sqrt(2), abs=1e-12)


# --- sideband couplings -------------------------------------------------------


def test_sideband_leading_order():
    eta = 0.01
    assert motion.sideband_rabi(0, 1, eta) == pytest.approx(eta, rel=eta ** 2)
    assert motion.sideband_rabi(3, 1, 0.0) == 0.0
    assert motion.sideband_rabi(3, 0, 0.0) == 1.0


@pytest.mark.parametrize("order", [-2, -1, 0, 1, 2])
def test_sideband_matches_matrix_exponential(order):
    eta = 0.216
    for n in range(0, 11):
        if n + order < 0:
            continue
        ours = motion.sideband_rabi(n, order, eta)
        ref = motion.displacement_element(n, n + order, eta)
        assert abs(ours) == pytest.approx(abs(ref), abs=1e-8)


def test_displacement_oracle_is_independent():
    # rebuild the oracle from scratch rather than trusting the helper
    dim, eta = 80, 0.216
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    U = linalg.expm(1j * eta * (a + a.T))
    for n in range(6):
        assert abs(U[n + 1, n]) == pytest.approx(abs(motion.sideband_rabi(n, 1, eta)), abs=1e-10)


def test_sideband_domain():
    with pytest.raises(DomainError):
        motion.sideband_rabi(0, -1, 0.1)


# --- flops -------------------------------------------------------------------


def test_thermal_flop_starts_at_zero():
    assert motion.thermal_flop(0.0, 0.5, 0.05, 1e5) == 0.0


def test_number_state_reduction():
    t = np.linspace(0, 1e-3, 50)
    p = np.zeros(30)
    p[3] = 1.0
    direct = np.sin(abs(motion.sideband_rabi(3, 1, 0.1, 2e4)) * t / 2) ** 2
    assert np.allclose(motion.fock_flop(t, p, 0.1, 2e4, 1), direct, atol=1e-14)


def test_hot_flop_against_direct_sum():
    eta, om, nbar = 0.043, 2 * math.pi * 250e3, 10.0
    t = np.linspace(0, 400e-6, 401)
    n = np.arange(400)
    pn = (nbar / (nbar + 1)) ** n / (nbar + 1)
    ref = np.zeros_like(t)
    for k in n:
        ref += pn[k] * np.sin(abs(motion.sideband_rabi(k, 1, eta, om)) * t / 2) ** 2
    ours = motion.thermal_flop(t, nbar, eta, om)
    assert np.allclose(ours, ref, atol=2e-6)
    # the flop washes out after the first cycle and settles near 1/2
    first, second = ours[t < 100e-6], ours[(t >= 100e-6) & (t < 200e-6)]
    assert np.ptp(second) < 0.2 * np.ptp(first)
    assert second.mean() == pytest.approx(0.5, abs=0.02)


def test_debye_waller_reduces_carrier():
    assert motion.thermal_carrier_rabi(10.0, 0.2) < motion.thermal_carrier_rabi(0.0, 0.2)


# --- heating ---------------------------------------------------------------------


RATE = 1 / 0.370


def test_heating_identity_and_normalization():
    s = MotionalState.thermal(0.3)
    same = motion.apply_heating(s, 0.0, RATE)
    assert np.allclose(same.populations, s.populations, rtol=0, atol=1e-15)
    hot = motion.apply_heating(s, 0.2, RATE)
    assert hot.populations.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(hot.populations >= 0)


def test_heating_linear_in_time():
    g = MotionalState.number(0)
    assert motion.apply_heating(g, 0.370, RATE).mean_n == pytest.approx(1.0, abs=0.01)
    assert motion.apply_heating(g, 0.037, RATE).mean_n == pytest.approx(0.10, abs=0.005)


def test_motional_coherence_limits():
    assert motion.motional_ramsey_coherence(0.0, RATE) == 1.0
    assert motion.motional_ramsey_coherence(1.0, 0.0) == 1.0


def test_motional_coherence_against_ode():
    # integrate the master equation directly on a small Fock space
    dim, tau = 25, 0.32
    a = np.diag(np.sqrt(np.arange(1, dim)), 1).astype(complex)
    ad = a.conj().T.copy()
    ad[dim - 1, dim - 2] = 0.0
    ops = [math.sqrt(RATE) * a, math.sqrt(RATE) * ad]

    def rhs(_, y):
        rho = y.reshape(dim, dim)
        out = np.zeros_like(rho)
        for L in ops:
            LdL = L.conj().T @ L
            out += L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
        return out.ravel()

    rho0 = np.zeros((dim, dim), complex)
    rho0[:2, :2] = 0.5
    sol = integrate.solve_ivp(rhs, (0, tau), rho0.ravel(), rtol=1e-10, atol=1e-12)
    ref = 2 * abs(sol.y[:, -1].reshape(dim, dim)[0, 1])
    assert motion.motional_ramsey_coherence(tau, RATE) == pytest.approx(ref, abs=1e-7)


# --- transport --------------------------------------------------------------------


def _classical_transport(ramp, mode):
    """Integrate the ion in a trap whose centre follows the filtered command."""
    wc = 2 * math.pi * ramp.filter_cutoff
    w = mode.omega
    d, T = ramp.displacement, ramp.duration

    def command(t):
        x = min(max(t / T, 0.0), 1.0)
        return d * x * x * (3 - 2 * x)

    def rhs(t, y):
        z, v, c = y
        return [v, -w * w * (z - c), wc * (command(t) - c)]

    t_end = T + 40 / wc
    sol = integrate.solve_ivp(rhs, (0, t_end), [0.0, 0.0, 0.0], method="DOP853", rtol=1e-11, atol=1e-20,
                              max_step=2 * math.pi / w / 40)
    z, v, c = sol.y[:, -1]
    return ((z - c) ** 2 + (v / w) ** 2) / (4 * mode.ground_state_size ** 2)


@pytest.mark.parametrize("duration", [6e-6, 12e-6])
def test_transport_matches_equation_of_motion(duration):
    ramp = TransportRamp(10e-6, duration, 125e3)
    assert motion.transport_excitation(ramp, AXIAL) == pytest.approx(_classical_transport(ramp, AXIAL), rel=2e-3)


def test_transport_nominal_move_is_adiabatic():
    ramp = TransportRamp(10e-6, 40e-6, 125e3)
    assert motion.transport_excitation(ramp, AXIAL) < 0.05


def test_transport_zero_and_sudden():
    assert motion.transport_excitation(TransportRamp(0.0, 40e-6), AXIAL) == 0.0
    jump = motion.transport_excitation(TransportRamp(10e-6, 0.0, math.inf, "sudden"), AXIAL)
    assert jump == pytest.approx((10e-6 / (2 * AXIAL.ground_state_size)) ** 2, rel=1e-12)
    assert jump > 1


def test_transport_envelope_falls_with_duration():
    # interference zeros make single points non-monotonic; the band maxima fall
    durations = np.geomspace(2e-6, 200e-6, 64)
    exc = np.array([motion.transport_excitation(TransportRamp(10e-6, d, 125e3), AXIAL) for d in durations])
    bands = np.array_split(exc, 8)
    peaks = [b.max() for b in bands]
    assert all(p1 > p2 for p1, p2 in zip(peaks, peaks[1:]))
    assert exc[-1] < 1e-6


# --- states ------------------------------------------------------------------------


def test_thermal_state_normalized():
    for nbar in (0.0, 0.06, 10.0):
        s = MotionalState.thermal(nbar)
        assert s.populations.sum() == pytest.approx(1.0, abs=1e-9)
        assert s.mean_n == pytest.approx(nbar, abs=1e-4 * max(nbar, 1))


def test_invalid_states():
    with pytest.raises(DomainError):
        MotionalState(np.array([0.5, 0.2]))
    with pytest.raises(DomainError):
        MotionalState.thermal(-1.0)
