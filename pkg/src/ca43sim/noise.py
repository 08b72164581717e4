"""Classical noise environment of the qubit.

The magnetic field is B0 plus a slow session drift (reset at every
recalibration), a 50 Hz line component, a quasi-static shot-to-shot offset
and optional white noise.  Laser detuning, beam intensity and the Raman
interferometer phase are drawn per shot.  Everything a shot needs is held
in an :class:`EnvTrace`, drawn from a counter-keyed random stream so that
shot ``i`` is the same no matter who draws it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import optimize

from . import atomic
from .errors import DomainError
from .rng import stream


@dataclass(frozen=True)
class NoiseModel:
    B0: float = 3.4                     # G
    drift_rate: float = 2e-4            # G/h
    recalibration_interval: float = 60.0  # s of session time between line-centre checks
    line_amp: float = 1e-3              # G
    line_freq: float = 50.0             # Hz
    line_phase: float = 0.0             # rad, mains phase at the trigger
    slow_B_rms: float = 7.01e-5         # G, calibrated on the 0.5 G Ramsey pair
    white_B_asd: float = 0.0            # G/sqrt(Hz), one-sided
    laser_offset_rms: float = 200.0     # Hz, 729 nm servo residual
    laser_offset_bound: float = 500.0   # Hz
    intensity_frac_rms: float = 0.0
    path_phase_rms: float = 0.0         # rad
    path_phase_corr: float = 1e-3       # s, interferometer correlation time
    depump_rate: float = 1 / 0.410      # 1/s with the 397 nm beam only AOM-switched
    depump_initial: float = 0.97
    shutter_closed: bool = False
    shot_period: float = 20e-3          # s of overhead per shot (cooling, detection)

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in ("shutter_closed", "line_phase"):
                continue
            if not np.isfinite(v):
                raise DomainError(f"noise parameter {f.name} must be finite")
            if v < 0:
                raise DomainError(f"noise parameter {f.name} must be non-negative")
        if not self.line_freq > 0:
            raise DomainError("line_freq must be positive")
        if not self.recalibration_interval > 0:
            raise DomainError("recalibration_interval must be positive")
        if not self.path_phase_corr > 0:
            raise DomainError("path_phase_corr must be positive")
        if not 0 <= self.depump_initial <= 1:
            raise DomainError("depump_initial must be a probability")
        atomic._check_field(self.B0)

    def quiet(self) -> "NoiseModel":
        """Same operating point with every stochastic process switched off."""
        return replace(self, drift_rate=0.0, line_amp=0.0, slow_B_rms=0.0, white_B_asd=0.0,
                       laser_offset_rms=0.0, intensity_frac_rms=0.0, path_phase_rms=0.0,
                       depump_rate=0.0)


def clock_curvature(B0: float, constants=None) -> float:
    """Half the second field derivative of the clock frequency at B0, Hz/G^2."""
    c = atomic._consts(constants)
    s = c.term(atomic.Term.S1_2)
    dE = c.ground_hfs_splitting
    k = (s.g_J - c.g_I) * atomic.MU_B_HZ_PER_G / dE
    x = k * B0
    return 0.5 * dE * k * k / (1 + x * x) ** 1.5


@dataclass(frozen=True)
class EnvTrace:
    """Noise realization of one shot.

    ``times`` is the grid on which the white-field integral and the
    interferometer phase are stored; the other processes are analytic.
    """

    times: np.ndarray
    B0: float
    b_static: float            # drift + quasi-static offset, G
    line_amp: float
    line_freq: float
    line_phase: float
    white_integral: np.ndarray  # int_0^t of the white field component, G s
    laser_detuning: float      # Hz
    intensity: float           # multiplies Rabi frequencies
    phase_cells: np.ndarray    # interferometer phase per correlation cell, rad
    phase_corr: float

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def line(self, t):
        return self.line_amp * np.sin(2 * math.pi * self.line_freq * np.asarray(t) + self.line_phase)

    def B(self, t):
        """Field at time(s) t; white noise enters as its local mean on the grid."""
        t = np.asarray(t, dtype=float)
        out = self.B0 + self.b_static + self.line(t)
        if np.any(self.white_integral):
            rate = np.diff(self.white_integral) / np.diff(self.times)
            idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(rate) - 1)
            out = out + rate[idx]
        return out

    def phase_offset(self, t):
        idx = np.clip((np.asarray(t) / self.phase_corr).astype(int), 0, len(self.phase_cells) - 1)
        return self.phase_cells[idx]

    def field_moments(self, t0: float, t1: float) -> tuple[float, float]:
        """Integrals of dB and dB^2 over [t0, t1], dB = B - B0.

        The squared white component and its product with the line are left
        out; both are far below the first-order terms for any sensible
        spectrum.
        """
        w = 2 * math.pi * self.line_freq
        dt = t1 - t0
        a, b, ph = self.line_amp, self.b_static, self.line_phase
        line1 = a * (math.cos(w * t0 + ph) - math.cos(w * t1 + ph)) / w
        line2 = a * a * (dt / 2 - (math.sin(2 * (w * t1 + ph)) - math.sin(2 * (w * t0 + ph))) / (4 * w))
        white = float(np.interp(t1, self.times, self.white_integral) - np.interp(t0, self.times, self.white_integral))
        first = b * dt + line1 + white
        second = b * b * dt + 2 * b * line1 + line2 + 2 * b * white
        return first, second

    def clock_phase(self, t0: float, t1: float, constants=None) -> float:
        """Phase (rad) picked up by |up> relative to |down> versus a drive at the nominal B0 frequency."""
        slope = atomic.clock_sensitivity(self.B0, constants).slope
        first, second = self.field_moments(t0, t1)
        return 2 * math.pi * (slope * first + clock_curvature(self.B0, constants) * second)

    def clock_detuning(self, t, constants=None):
        """Instantaneous clock-frequency offset (Hz) at time(s) t."""
        d = self.B(t) - self.B0
        slope = atomic.clock_sensitivity(self.B0, constants).slope
        return slope * d + clock_curvature(self.B0, constants) * d * d


def _truncated_gauss(rng, rms, bound):
    if rms == 0:
        return 0.0
    # rejection keeps the stream cheap; the bound sits at >= 2.5 sigma by default
    while True:
        x = rms * rng.standard_normal()
        if bound <= 0 or abs(x) <= bound:
            return float(x)


def _drift(model: NoiseModel, session_time: float) -> float:
    cycle = session_time % model.recalibration_interval
    return model.drift_rate / 3600.0 * (cycle - model.recalibration_interval / 2)


def sample_trace(model: NoiseModel, duration: float, line_triggered: bool = True, seed: int = 0,
                 shot=0, session_time: float | None = None, grid_points: int = 65) -> EnvTrace:
    """Draw the environment seen by one shot of length ``duration``.

    ``shot`` is an integer or a tuple of counters keying the random stream.
    ``session_time`` places the shot on the lab clock for the drift; by
    default shots are spaced by ``duration + shot_period``.
    """
    if duration < 0:
        raise DomainError("trace duration must be non-negative")
    key = tuple(shot) if isinstance(shot, tuple) else (shot,)
    rng = stream(seed, *key)
    if session_time is None:
        session_time = key[-1] * (duration + model.shot_period)
    times = np.linspace(0.0, duration, max(2, grid_points))
    b_slow = model.slow_B_rms * rng.standard_normal()
    phase = model.line_phase if line_triggered else rng.uniform(0, 2 * math.pi)
    if model.white_B_asd > 0 and duration > 0:
        steps = rng.standard_normal(len(times) - 1) * model.white_B_asd * np.sqrt(np.diff(times) / 2)
        white = np.concatenate([[0.0], np.cumsum(steps)])
    else:
        white = np.zeros(len(times))
    detuning = _truncated_gauss(rng, model.laser_offset_rms, model.laser_offset_bound)
    intensity = 1.0 + model.intensity_frac_rms * rng.standard_normal()
    cells = int(math.floor(duration / model.path_phase_corr)) + 1
    phase_cells = model.path_phase_rms * rng.standard_normal(cells)
    return EnvTrace(times, model.B0, _drift(model, session_time) + b_slow, model.line_amp, model.line_freq,
                    phase, white, detuning, max(intensity, 0.0), phase_cells, model.path_phase_corr)


def null_trace(B0: float = 3.4, duration: float = 0.0) -> EnvTrace:
    """Noise-free environment."""
    times = np.array([0.0, max(duration, 0.0)])
    return EnvTrace(times, B0, 0.0, 0.0, 50.0, 0.0, np.zeros(2), 0.0, 1.0, np.zeros(1), 1.0)


# ---------------------------------------------------------------------------
# Ramsey dephasing


def ramsey_phases(model: NoiseModel, tau, shots: int, seed: int = 0, line_triggered: bool = True,
                  pulse_time: float = 0.0, constants=None) -> np.ndarray:
    """Free-evolution phase per (shot, tau); common random numbers across tau.

    Shot ``i`` uses the same quasi-static offset for every ``tau`` so
    envelopes computed from these phases are smooth in ``tau``.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    if np.any(tau < 0):
        raise DomainError("Ramsey times must be non-negative")
    grid = np.unique(np.concatenate([[0.0], pulse_time + tau]))
    out = np.empty((shots, len(tau)))
    t_end = float(grid[-1])
    for i in range(shots):
        trace = sample_trace(model, t_end, line_triggered, seed, i, session_time=i * (t_end + model.shot_period),
                             grid_points=2)
        if model.white_B_asd > 0:
            trace = _white_on(trace, grid, model.white_B_asd, stream(seed, i, 1))
        for j, t in enumerate(tau):
            out[i, j] = trace.clock_phase(pulse_time, pulse_time + t, constants)
    return out


def _white_on(trace: EnvTrace, grid, asd, rng):
    steps = rng.standard_normal(len(grid) - 1) * asd * np.sqrt(np.diff(grid) / 2)
    white = np.concatenate([[0.0], np.cumsum(steps)])
    return replace(trace, times=grid, white_integral=white)


def dephasing_envelope(model: NoiseModel, tau, B0: float | None = None, shots: int = 2000, seed: int = 0,
                       line_triggered: bool = True, constants=None) -> np.ndarray:
    """Monte Carlo Ramsey fringe amplitude |<exp(i phi)>| per Ramsey time."""
    if B0 is not None:
        model = replace(model, B0=B0)
    phi = ramsey_phases(model, tau, shots, seed, line_triggered, constants=constants)
    return np.abs(np.mean(np.exp(1j * phi), axis=0))


def quasi_static_envelope(tau, B0: float, slow_B_rms: float, constants=None):
    """Exact Ramsey amplitude for a Gaussian static field offset.

    Uses the characteristic function of ``alpha b + beta b^2`` for Gaussian
    ``b`` so both the linear and the quadratic field sensitivity enter.
    """
    tau = np.asarray(tau, dtype=float)
    alpha = 2 * math.pi * atomic.clock_sensitivity(B0, constants).slope * tau
    beta = 2 * math.pi * clock_curvature(B0, constants) * tau
    s2 = slow_B_rms ** 2
    z = 1 - 2j * beta * s2
    val = np.exp(-alpha ** 2 * s2 / (2 * z)) / np.sqrt(z)
    return np.abs(val)


def calibrate_slow_field(taus=(0.2, 1.0), amplitudes=(0.962, 0.847), sigmas=(0.011, 0.021),
                         B0: float = 0.5, contrast: float = 1.0, constants=None) -> float:
    """Quasi-static field rms that best reproduces measured Ramsey amplitudes.

    ``contrast`` is the fringe amplitude at zero Ramsey time (state
    preparation and readout).
    """
    taus, amps, sig = (np.asarray(v, dtype=float) for v in (taus, amplitudes, sigmas))

    def chi2(log_rms):
        model = contrast * quasi_static_envelope(taus, B0, math.exp(log_rms), constants)
        return float(np.sum(((model - amps) / sig) ** 2))

    res = optimize.minimize_scalar(chi2, bounds=(math.log(1e-7), math.log(1e-2)), method="bounded",
                                   options={"xatol": 1e-10})
    return math.exp(res.x)


# ---------------------------------------------------------------------------
# residual-light depumping


def depump_survival(model: NoiseModel, wait):
    """Probability of still being in |down> after ``wait`` seconds."""
    wait = np.asarray(wait, dtype=float)
    if np.any(wait < 0):
        raise DomainError("wait time must be non-negative")
    rate = 0.0 if model.shutter_closed else model.depump_rate
    out = model.depump_initial * np.exp(-rate * wait)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# coherence-time extrapolation


def coherence_extrapolate_inputs(model: NoiseModel, taus=(0.2, 1.0), B0: float = 0.5, contrast: float = 1.0,
                                 shots: int = 4000, seed: int = 0, anchor_sigma: float = 0.004,
                                 sigmas=(0.011, 0.021)) -> dict:
    """Fit the simulated Ramsey amplitudes with exponential and Gaussian envelopes.

    The amplitudes include ``contrast`` and are anchored with 1.0 at zero
    Ramsey time, so they are treated exactly like measured fringe
    amplitudes.  Returns 1/e times and chi^2 of both forms.
    """
    from . import fitkit

    taus = np.asarray(taus, dtype=float)
    amps = contrast * dephasing_envelope(model, taus, B0=B0, shots=shots, seed=seed)
    sig = np.broadcast_to(np.asarray(sigmas, dtype=float), taus.shape)
    x = np.concatenate([[0.0], taus])
    y = np.concatenate([[1.0], amps])
    s = np.concatenate([[anchor_sigma], sig])
    out = {"tau": x, "amplitude": y, "sigma": s}
    for form in ("exponential", "gaussian"):
        t2, err, chi2 = fitkit.coherence_time(np.column_stack([x, y, s]), form)
        out[form] = {"T2": t2, "sigma": err, "chi2": chi2}
    return out
