import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ca43sim import detection, dynamics, fitkit, motion, noise
from ca43sim.atomic import Multipole, TransitionSpec, level
from ca43sim.dynamics import (DOWN, UP, Channel, Envelope, PulseEvent, Readout, Sequence, SystemState, Wait)
from ca43sim.errors import DomainError, StructureError

OMEGA = 2 * math.pi * 50e3


def _pi_pulse(**kw):
    return PulseEvent(Channel.MICROWAVE, "qubit", OMEGA, duration=math.pi / OMEGA, **kw)


# --- single pulses ------------------------------------------------------------


def test_resonant_pi_pulse_inverts():
    out = dynamics.evolve(SystemState.prepare(), _pi_pulse())
    assert out.population(UP) == pytest.approx(1.0, abs=1e-8)
    assert out.norm == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("det_hz,t", [(10e3, 13e-6), (37e3, 40e-6), (-80e3, 7e-6), (200e3, 100e-6)])
def test_off_resonant_matches_rabi_formula(det_hz, t):
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA, detuning_start=det_hz, duration=t)
    got = dynamics.evolve(SystemState.prepare(), ev).population(UP)
    d = 2 * math.pi * det_hz
    gen = math.hypot(OMEGA, d)
    want = OMEGA ** 2 / gen ** 2 * math.sin(gen * t / 2) ** 2
    assert got == pytest.approx(want, abs=1e-6)


def test_two_half_pulses_equal_one_pi_pulse():
    half = dynamics.half_pi_pulse(OMEGA)
    s = dynamics.evolve(SystemState.prepare(), half)
    s = dynamics.evolve(s, half)
    ref = dynamics.evolve(SystemState.prepare(), _pi_pulse())
    fid = abs(np.vdot(ref.amplitudes, s.amplitudes)) ** 2
    assert fid > 1 - 1e-8


@settings(max_examples=60, deadline=None)
@given(rabi=st.floats(0, 2 * math.pi * 200e3), det=st.floats(-300e3, 300e3), chirp=st.floats(-300e3, 300e3),
       phase=st.floats(-math.pi, math.pi), dur=st.floats(0, 60e-6), shaped=st.booleans())
def test_pulses_are_unitary(rabi, det, chirp, phase, dur, shaped):
    ev = PulseEvent(Channel.MICROWAVE, "qubit", rabi, Envelope.COS2 if shaped else Envelope.RECT, det, det + chirp,
                    phase, dur)
    start = SystemState((DOWN, UP), np.array([[0.6], [0.8j]]))
    out = dynamics.evolve(start, ev)
    assert out.norm == pytest.approx(1.0, abs=1e-8)


def test_noisy_pulse_is_unitary():
    model = noise.NoiseModel(line_amp=5e-3, white_B_asd=1e-5)
    tr = noise.sample_trace(model, 200e-6, seed=3)
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA, duration=200e-6)
    out = dynamics.evolve(SystemState.prepare(), ev, tr)
    assert out.norm == pytest.approx(1.0, abs=1e-8)


def test_sideband_pi_pulse_adds_a_phonon():
    eta = 0.05
    spec = TransitionSpec(level("S1/2", 4, 4), level("D5/2", 6, 6), Multipole.E2)
    rabi = 2 * math.pi * 100e3
    t = math.pi / (rabi * abs(motion.sideband_rabi(0, 1, eta)))
    ev = PulseEvent(Channel.QUADRUPOLE, spec, rabi, duration=t, sideband=1, eta=eta)
    start = SystemState.prepare((spec.lower, spec.upper), spec.lower, 0, 3)
    out = dynamics.evolve(start, ev)
    assert abs(out.amplitudes[1, 1]) ** 2 == pytest.approx(1.0, abs=1e-8)
    assert out.motional_populations()[1] == pytest.approx(1.0, abs=1e-8)


# --- validation -------------------------------------------------------------------


def test_channel_rules():
    with pytest.raises(StructureError):
        PulseEvent(Channel.RAMAN_CO, "qubit", 1.0, sideband=1)
    with pytest.raises(StructureError):
        PulseEvent(Channel.MICROWAVE, "qubit", 1.0, sideband=-1)
    with pytest.raises(StructureError):
        PulseEvent(Channel.QUADRUPOLE, "qubit", 1.0)
    off_basis = PulseEvent(Channel.QUADRUPOLE, TransitionSpec(level("S1/2", 4, 0), level("D5/2", 6, 0)), 1.0,
                           duration=1e-6)
    with pytest.raises(StructureError):
        dynamics.evolve(SystemState.prepare(), off_basis)
    with pytest.raises(DomainError):
        PulseEvent(Channel.MICROWAVE, "qubit", -1.0)


def test_sequence_round_trip():
    spec = TransitionSpec(level("S1/2", 4, 4), level("D5/2", 6, 6))
    seq = Sequence((_pi_pulse(phase=0.3), Wait(1e-3),
                    PulseEvent(Channel.QUADRUPOLE, spec, 2.0, Envelope.COS2, 1e3, 2e3, 0.0, 5e-6, 1, 0.04)),
                   line_triggered=False, detuning=12.0)
    again = Sequence.from_dict(seq.to_dict())
    assert again == seq
    assert again.duration == pytest.approx(math.pi / OMEGA + 1e-3 + 5e-6)


# --- rapid adiabatic passage ------------------------------------------------------------


def test_rap_zero_rabi():
    assert dynamics.rap_transfer(0.0, 100e-6, 100e3) == pytest.approx(0.0, abs=1e-15)


def test_rap_chirp_sign_symmetry():
    a = dynamics.rap_transfer(2 * math.pi * 30e3, 100e-6, 100e3)
    b = dynamics.rap_transfer(2 * math.pi * 30e3, 100e-6, -100e3)
    assert a == pytest.approx(b, abs=1e-6)


def test_rap_landau_zener_limit():
    rabi = 2 * math.pi * 10e3
    for a in np.linspace(0.1, 3.0, 8):
        rate = rabi * rabi / a
        span = 200 * rabi
        got = dynamics.rap_transfer(rabi, span / rate, span / (2 * math.pi), envelope=Envelope.RECT)
        want = dynamics.landau_zener(rabi, rate)
        assert got == pytest.approx(want, rel=0.02)


def test_rap_plateau():
    f = np.geomspace(5e3, 400e3, 40)
    y = np.array([dynamics.rap_transfer(2 * math.pi * x, 200e-6, 200e3) for x in f])
    good = f[y > 0.99]
    assert good.size and good.max() / good.min() >= 4
    # contiguous: no dips inside the plateau
    assert np.all(y[(f >= good.min()) & (f <= good.max())] > 0.99)


# --- scans ------------------------------------------------------------------------


def test_rabi_scan_analytic_is_cosine():
    t = np.linspace(0, 100e-6, 21)
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA)
    res = dynamics.rabi_scan(ev, t, shots=None, readout=Readout.ideal(shelved=UP))
    assert np.allclose(res.y, np.sin(OMEGA * t / 2) ** 2, atol=1e-10)


def test_rabi_scan_error_bars_binomial():
    t = np.linspace(0, 40e-6, 11)
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA)
    res = dynamics.rabi_scan(ev, t, shots=50, readout=Readout.ideal(), seed=2)
    expect = np.maximum(np.sqrt(res.y * (1 - res.y) / 50), 0.5 / 50)
    assert np.allclose(res.sigma, expect)
    assert np.all(res.n_shots == 50)


def test_rabi_scan_shot_statistics():
    # dark fraction of a fixed pulse over many points is binomial around the analytic value
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA)
    t = np.full(200, math.pi / (2 * OMEGA))
    res = dynamics.rabi_scan(ev, t, shots=50, readout=Readout.ideal(), seed=5)
    assert res.y.mean() == pytest.approx(0.5, abs=0.01)
    assert res.y.std() == pytest.approx(math.sqrt(0.25 / 50), rel=0.15)


def test_scan_deterministic_across_workers():
    model = noise.NoiseModel(intensity_frac_rms=1e-2)
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA)
    t = np.linspace(0, 60e-6, 9)
    one = dynamics.rabi_scan(ev, t, 40, model, seed=11, workers=1)
    three = dynamics.rabi_scan(ev, t, 40, model, seed=11, workers=3)
    assert one.table().tobytes() == three.table().tobytes()


def test_ramsey_zero_wait_full_amplitude():
    half = dynamics.half_pi_pulse(OMEGA)
    phi = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    res = dynamics.ramsey_scan(0.0, phi, half, shots=None, readout=Readout.ideal())
    fit = fitkit.fit_family("sin_phase", np.column_stack([phi, res.y, np.full(len(phi), 1e-3)]))
    assert fit["A"] == pytest.approx(1.0, abs=1e-6)


def _fringe_phase(tau, detuning, echo):
    half = dynamics.half_pi_pulse(OMEGA)
    phi = np.linspace(0, 2 * math.pi, 24, endpoint=False)
    res = dynamics.ramsey_scan(tau, phi, half, echo=echo, shots=None, readout=Readout.ideal(), detuning=detuning)
    return fitkit.fit_family("sin_phase", np.column_stack([phi, res.y, np.full(len(phi), 1e-3)]))["phi0"]


def test_echo_removes_static_detuning():
    tau = 1e-3
    base = _fringe_phase(tau, 0.0, True)
    for d in (37.0, 120.0):
        shifted = _fringe_phase(tau, d, True)
        # the free evolution cancels exactly; the detuning during the 5 us pulses leaves O((d/Omega)^2)
        assert math.remainder(shifted - base, 2 * math.pi) == pytest.approx(0.0, abs=1e-4)


def test_free_precession_phase_without_echo():
    tau = 1e-3
    # finite pi/2 pulses lengthen the effective precession time by 4 t_half / pi
    t_eff = tau + 4 * dynamics.half_pi_pulse(OMEGA).duration / math.pi
    base = _fringe_phase(tau, 0.0, False)
    for d in (37.0, 120.0):
        shift = math.remainder(_fringe_phase(tau, d, False) - base, 2 * math.pi)
        assert abs(shift) == pytest.approx(abs(math.remainder(2 * math.pi * d * t_eff, 2 * math.pi)), abs=1e-4)


def test_half_pi_pulse_area():
    assert dynamics.half_pi_pulse(OMEGA).area == pytest.approx(math.pi / 2)


# --- Raman drive --------------------------------------------------------------------


def test_raman_scattering_scaling():
    rabi = math.pi / 65.3e-6
    d1, d2 = -10e9, -20e9
    s1 = dynamics.raman_effective_drive(dynamics.RamanBeams(dynamics.beam_rabi_for(rabi, d1)), d1)
    s2 = dynamics.raman_effective_drive(dynamics.RamanBeams(dynamics.beam_rabi_for(rabi, d2)), d2)
    assert s1.rabi == pytest.approx(rabi)
    assert s2.rabi == pytest.approx(rabi)
    assert s2.scattering_rate / s1.scattering_rate == pytest.approx(0.5, rel=1e-12)


def test_raman_default_beams_give_reference_pi_time():
    drive = dynamics.raman_effective_drive(dynamics.RamanBeams(), -10e9)
    assert math.pi / drive.rabi == pytest.approx(65.3e-6, rel=2e-3)


def test_copropagating_raman_has_no_eta():
    lam = 396.959e-9
    beams = dynamics.RamanBeams(geometry=motion.BeamGeometry.copropagating(lam),
                                mode=motion.HarmonicMode(2 * math.pi * 1.18e6, 43 * 1.66e-27))
    assert dynamics.raman_effective_drive(beams, -10e9).eta == 0.0
    with pytest.raises(DomainError):
        dynamics.raman_effective_drive(beams, 0.0)


def test_raman_leak_gives_fringe_centre_drop():
    drive = dynamics.raman_effective_drive(dynamics.RamanBeams(), -10e9)
    lost = -math.expm1(-drive.leak_rate * 3.7e-3)
    centre = 0.488
    assert centre * lost == pytest.approx(0.07, abs=0.02)


def test_scattering_leak_is_drawn_per_shot():
    ev = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA, scattering_rate=200.0)
    t = np.full(4, 4e-3)
    res = dynamics.rabi_scan(ev, t, 2000, readout=Readout.ideal(shelved=None), seed=1)
    # leaked shots never read dark; the D5/2-free basis never does either
    assert np.all(res.y == 0)
    ev2 = PulseEvent(Channel.MICROWAVE, "qubit", OMEGA, scattering_rate=200.0)
    res2 = dynamics.rabi_scan(ev2, [math.pi / OMEGA * 201], 4000, readout=Readout.ideal(shelved=UP), seed=1)
    survive = math.exp(-200.0 * math.pi / OMEGA * 201)
    assert res2.y[0] == pytest.approx(survive, abs=0.03)


def test_readout_validation():
    with pytest.raises(DomainError):
        Readout(prep_fidelity=1.5)
    ro = Readout.ideal()
    assert ro.scheme is None
    assert detection.set_threshold(ro.detection).threshold >= 1
