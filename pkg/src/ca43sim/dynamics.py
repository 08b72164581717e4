"""Coherent pulse sequences on a declared set of levels times a truncated Fock space.

Every pulse drives one transition, so in the rotating frame with the
rotating-wave approximation the Hamiltonian splits into independent 2x2
blocks ``|lower, n> <-> |upper, n + s>`` (``s`` the sideband order).  Each
block is propagated with the closed-form SU(2) exponential on substeps
short enough that ``||H|| dt <= 0.05``; the substep propagators are
multiplied pairwise in a balanced tree.  Pulses whose Hamiltonian does not
change in time are done in a single exact step.

Sign conventions: ``detuning = laser - atom`` (Hz); in the basis
(lower, upper) a block Hamiltonian is
``H = 1/2 [[delta, Omega e^{-i phi}], [Omega e^{i phi}, -delta]]``.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

import numpy as np

from . import atomic, motion, noise
from .atomic import QuantumLevel, Term, TransitionSpec, level
from .detection import DetectionConfig, ShelvingScheme, binomial_sigma, shelving_error, simulate_counts
from .errors import DomainError, StructureError
from .rng import stream

MAX_PHASE_STEP = 0.05  # rad, bound on ||H|| dt per substep
SUBSTEP_BUDGET = 1 << 18  # 2x2 propagators held in memory at once

DOWN = level("S1/2", 4, 0)
UP = level("S1/2", 3, 0)
QUBIT = (DOWN, UP)


class Channel(str, enum.Enum):
    MICROWAVE = "microwave"
    RAMAN_CO = "raman_co"
    RAMAN_COUNTER = "raman_counter"
    QUADRUPOLE = "quadrupole"


class Envelope(str, enum.Enum):
    RECT = "rect"
    COS2 = "cos2"


@dataclass(frozen=True)
class PulseEvent:
    """One drive pulse.

    ``transition`` is ``"qubit"`` or a :class:`TransitionSpec`.  The laser
    detuning sweeps linearly from ``detuning_start`` to ``detuning_end``
    (Hz).  ``sideband`` selects the motional order and ``eta`` the
    Lamb-Dicke parameter of the beam geometry.  ``scattering_rate`` is the
    rate (1/s) at which the drive scatters the ion out of the driven pair.
    """

    channel: Channel = Channel.MICROWAVE
    transition: object = "qubit"
    rabi_peak: float = 0.0
    envelope: Envelope = Envelope.RECT
    detuning_start: float = 0.0
    detuning_end: float | None = None
    phase: float = 0.0
    duration: float = 0.0
    sideband: int = 0
    eta: float = 0.0
    scattering_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "envelope", Envelope(self.envelope))
        if self.detuning_end is None:
            object.__setattr__(self, "detuning_end", self.detuning_start)
        if not self.duration >= 0:
            raise DomainError("pulse duration must be non-negative")
        if self.rabi_peak < 0:
            raise DomainError("rabi_peak must be non-negative")
        if self.eta < 0 or self.scattering_rate < 0:
            raise DomainError("eta and scattering_rate must be non-negative")
        if self.channel is Channel.RAMAN_CO and self.sideband != 0:
            raise StructureError("copropagating Raman beams carry no momentum; sidebands are not driven")
        if self.channel is Channel.MICROWAVE and self.sideband != 0:
            raise StructureError("a microwave field does not couple to the motion")
        lower, upper = self.levels
        if self.channel is Channel.QUADRUPOLE:
            if lower.term is not Term.S1_2 or upper.term is not Term.D5_2:
                raise StructureError("quadrupole pulses drive S1/2 -> D5/2")
            if abs(upper.mF - lower.mF) > 2:
                raise StructureError(f"quadrupole pulse {lower} -> {upper} violates |delta_m| <= 2")
        else:
            if lower.term is not Term.S1_2 or upper.term is not Term.S1_2 or lower.F == upper.F:
                raise StructureError(f"{self.channel.value} drives hyperfine transitions inside S1/2")
            if abs(upper.mF - lower.mF) > 1:
                raise StructureError(f"{lower} -> {upper} violates |delta_m| <= 1")

    @property
    def levels(self) -> tuple[QuantumLevel, QuantumLevel]:
        if isinstance(self.transition, str):
            if self.transition != "qubit":
                raise StructureError(f"unknown transition {self.transition!r}")
            return QUBIT
        return self.transition.lower, self.transition.upper

    @property
    def area(self) -> float:
        """Pulse area at unit coupling, rad."""
        scale = 0.5 if self.envelope is Envelope.COS2 else 1.0
        return self.rabi_peak * self.duration * scale

    def envelope_at(self, x):
        """Envelope factor at fractional time x in [0, 1]."""
        if self.envelope is Envelope.COS2:
            return np.sin(np.pi * x) ** 2
        return np.ones_like(x)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["channel"] = self.channel.value
        out["envelope"] = self.envelope.value
        if not isinstance(self.transition, str):
            t = self.transition
            out["transition"] = {"lower": _level_dict(t.lower), "upper": _level_dict(t.upper)}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PulseEvent":
        data = dict(data)
        tr = data.get("transition", "qubit")
        if isinstance(tr, dict):
            lo, up = _level_from(tr["lower"]), _level_from(tr["upper"])
            mult = atomic.Multipole.E2 if up.term is Term.D5_2 else atomic.Multipole.M1
            data["transition"] = TransitionSpec(lo, up, mult)
        return cls(**data)


def _level_dict(lvl):
    return {"term": lvl.term.value, "F": lvl.F, "mF": lvl.mF}


def _level_from(d):
    return level(d["term"], d["F"], d["mF"])


@dataclass(frozen=True)
class Wait:
    duration: float

    def __post_init__(self):
        if not self.duration >= 0:
            raise DomainError("wait duration must be non-negative")

    def to_dict(self):
        return {"wait": self.duration}


@dataclass(frozen=True)
class Sequence:
    """Time-ordered pulses and free-evolution gaps.

    ``detuning`` (Hz) offsets the drive from the nominal qubit frequency for
    every pulse and for the free evolution in between.
    """

    items: tuple = ()
    line_triggered: bool = True
    detuning: float = 0.0

    def __post_init__(self):
        items = tuple(self.items)
        for item in items:
            if not isinstance(item, (PulseEvent, Wait)):
                raise StructureError(f"sequence item {item!r} is neither a pulse nor a wait")
        object.__setattr__(self, "items", items)

    @property
    def duration(self) -> float:
        return float(sum(i.duration for i in self.items))

    def schedule(self):
        """(start time, item) pairs; items never overlap by construction."""
        t, out = 0.0, []
        for item in self.items:
            out.append((t, item))
            t += item.duration
        return out

    def to_dict(self) -> dict:
        return {"line_triggered": self.line_triggered, "detuning": self.detuning,
                "items": [i.to_dict() for i in self.items]}

    @classmethod
    def from_dict(cls, data: dict) -> "Sequence":
        items = []
        for raw in data.get("items", []):
            if "wait" in raw:
                items.append(Wait(float(raw["wait"])))
            else:
                items.append(PulseEvent.from_dict(raw))
        return cls(tuple(items), bool(data.get("line_triggered", True)), float(data.get("detuning", 0.0)))


@dataclass
class SystemState:
    """Amplitudes over ``basis x {0..n_max}``; ``amplitudes[i, n]``."""

    basis: tuple
    amplitudes: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.basis = tuple(self.basis)
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex)
        if self.amplitudes.ndim != 2 or self.amplitudes.shape[0] != len(self.basis):
            raise StructureError("amplitudes must have shape (len(basis), n_max + 1)")
        if len(set(self.basis)) != len(self.basis):
            raise StructureError("basis levels must be distinct")

    @classmethod
    def prepare(cls, basis=QUBIT, start: QuantumLevel = DOWN, n: int = 0, n_max: int = 0) -> "SystemState":
        basis = tuple(basis)
        if start not in basis:
            raise StructureError(f"{start} is not in the basis")
        if not 0 <= n <= n_max:
            raise DomainError("Fock number outside the truncated space")
        amp = np.zeros((len(basis), n_max + 1), complex)
        amp[basis.index(start), n] = 1.0
        return cls(basis, amp)

    @property
    def n_max(self) -> int:
        return self.amplitudes.shape[1] - 1

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def population(self, lvl: QuantumLevel) -> float:
        return float(np.sum(np.abs(self.amplitudes[self.basis.index(lvl)]) ** 2))

    def motional_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)


# ---------------------------------------------------------------------------
# energy shifts from the environment


@dataclass(frozen=True)
class _Shift:
    """Level shift ``s1 dB + s2 dB^2`` (Hz) plus laser-frame term."""

    s1: float
    s2: float
    optical: bool


def _level_shift(lvl: QuantumLevel, B0: float, constants=None) -> _Shift:
    c = atomic._consts(constants)
    if lvl == UP:
        down = _level_shift(DOWN, B0, c)
        return _Shift(down.s1 + atomic.clock_sensitivity(B0, c).slope,
                      down.s2 + noise.clock_curvature(B0, c), False)
    h = 1e-3
    lo = max(B0 - h, 0.0)
    hi = lo + 2 * h
    mid = lo + h
    e = [float(atomic.level_energy(lvl, b, c)) for b in (lo, mid, hi)]
    s1 = (e[2] - e[0]) / (2 * h)
    s2 = (e[2] - 2 * e[1] + e[0]) / (2 * h * h)
    # re-centre the expansion from ``mid`` onto B0
    s1 += 2 * s2 * (B0 - mid)
    return _Shift(s1, s2, lvl.term is not Term.S1_2)


def _shift_hz(shift: _Shift, dB, laser):
    out = shift.s1 * dB + shift.s2 * dB * dB
    if shift.optical:
        out = out - laser
    return out


class _Frame:
    """Per-basis shift coefficients, cached for one operating point."""

    def __init__(self, basis, B0, constants=None):
        self.shifts = [_level_shift(lvl, B0, constants) for lvl in basis]
        self.B0 = B0


# ---------------------------------------------------------------------------
# propagation


def _su2(omega, delta, phase, dt):
    """exp(-i H dt) for ``H = 1/2 [[delta, W e^{-i phi}], [W e^{i phi}, -delta]]``."""
    gen = np.sqrt(omega * omega + delta * delta)
    theta = gen * dt / 2
    c = np.cos(theta)
    s_over = np.where(gen > 0, np.sin(theta) / np.where(gen > 0, gen, 1.0), dt / 2)
    ep = np.exp(1j * phase)
    U = np.empty(np.broadcast(omega, delta, phase).shape + (2, 2), complex)
    U[..., 0, 0] = c - 1j * s_over * delta
    U[..., 1, 1] = c + 1j * s_over * delta
    U[..., 0, 1] = -1j * s_over * omega * np.conj(ep)
    U[..., 1, 0] = -1j * s_over * omega * ep
    return U


def _tree_product(U):
    """``U[N-1] @ ... @ U[0]`` by pairwise multiplication along axis 0."""
    while U.shape[0] > 1:
        if U.shape[0] % 2:
            eye = np.broadcast_to(np.eye(2, dtype=complex), U.shape[1:])
            U = np.concatenate([U, eye[None]], axis=0)
        U = U[1::2] @ U[0::2]
    return U[0]


def _blocks(event: PulseEvent, basis, n_max):
    lower, upper = event.levels
    if lower not in basis or upper not in basis:
        raise StructureError(f"{lower} -> {upper} is not representable in the declared basis")
    s = event.sideband
    n = np.arange(n_max + 1)
    n = n[(n + s >= 0) & (n + s <= n_max)]
    if len(n) == 0:
        raise StructureError("sideband order leaves no coupled Fock pair in the truncated space")
    if event.eta == 0:
        coupling = np.full(len(n), 1.0 if s == 0 else 0.0)
    else:
        coupling = np.asarray(motion.sideband_rabi(n, s, event.eta), dtype=float)
    return basis.index(lower), basis.index(upper), n, n + s, coupling


def _propagate_pulse(psi, event: PulseEvent, t0, traces, frame: _Frame, basis, sequence_detuning=0.0):
    """Apply one pulse to a batch ``psi`` of shape (B, L, N)."""
    B = psi.shape[0]
    T = event.duration
    if T == 0:
        return psi
    a, b, n_lo, n_up, coup = _blocks(event, basis, psi.shape[2] - 1)
    sh_lo, sh_up = frame.shifts[a], frame.shifts[b]
    raman = event.channel in (Channel.RAMAN_CO, Channel.RAMAN_COUNTER)

    intensity = np.array([tr.intensity for tr in traces])
    laser = np.array([tr.laser_detuning if event.channel is Channel.QUADRUPOLE else 0.0 for tr in traces])
    phase = np.full(B, event.phase, dtype=float)
    if raman:
        phase = phase + np.array([float(tr.phase_offset(t0)) for tr in traces])

    varying_field = any(tr.line_amp > 0 or np.any(tr.white_integral) for tr in traces)
    chirped = event.detuning_end != event.detuning_start
    shaped = event.envelope is Envelope.COS2

    def atom_shift(t):
        """Noise shift of upper minus lower (Hz) at pulse times ``t``, shape (B, len(t))."""
        dB = np.stack([tr.B(t0 + t) for tr in traces]) - frame.B0
        return _shift_hz(sh_up, dB, laser[:, None]) - _shift_hz(sh_lo, dB, laser[:, None])

    if not (varying_field or chirped or shaped):
        steps = 1
    else:
        probe = np.linspace(0, T, 33)
        d_probe = 2 * np.pi * (event.detuning_start + sequence_detuning) - 2 * np.pi * atom_shift(probe)
        d_max = max(abs(2 * np.pi * (event.detuning_end - event.detuning_start)) + float(np.max(np.abs(d_probe))),
                    1e-300)
        w_max = event.rabi_peak * float(np.max(intensity)) * float(np.max(np.abs(coup)))
        norm = 0.5 * math.hypot(w_max, d_max)
        steps = max(1, int(math.ceil(norm * T * 1.05 / MAX_PHASE_STEP)))

    K = len(coup)
    chunk = max(1, SUBSTEP_BUDGET // (B * K))
    U = None
    for lo in range(0, steps, chunk):
        x = (np.arange(lo, min(lo + chunk, steps)) + 0.5) / steps
        tm = x * T
        env = event.envelope_at(x)
        det_drive = 2 * np.pi * (event.detuning_start + (event.detuning_end - event.detuning_start) * x
                                 + sequence_detuning)
        delta = det_drive[None, :] - 2 * np.pi * atom_shift(tm)      # (B, steps)
        omega = event.rabi_peak * intensity[:, None] * env[None, :]   # (B, steps)
        # (steps, B, K)
        Om = (omega.T)[:, :, None] * coup[None, None, :]
        De = np.broadcast_to((delta.T)[:, :, None], Om.shape)
        Ph = np.broadcast_to(phase[None, :, None], Om.shape)
        part = _tree_product(_su2(Om, De, Ph, T / steps))            # (B, K, 2, 2)
        U = part if U is None else part @ U

    g = psi[:, a, n_lo]
    e = psi[:, b, n_up]
    new_g = U[..., 0, 0] * g + U[..., 0, 1] * e
    new_e = U[..., 1, 0] * g + U[..., 1, 1] * e
    out = psi.copy()
    out[:, a, n_lo] = new_g
    out[:, b, n_up] = new_e
    return out


def _free(psi, t0, duration, traces, frame: _Frame, basis, sequence_detuning=0.0):
    """Free evolution: each level picks up the phase of its noise-induced shift."""
    if duration == 0:
        return psi
    phases = np.zeros((psi.shape[0], len(basis)))
    for j, tr in enumerate(traces):
        m1, m2 = tr.field_moments(t0, t0 + duration)
        for k, sh in enumerate(frame.shifts):
            ph = sh.s1 * m1 + sh.s2 * m2
            if sh.optical:
                ph -= tr.laser_detuning * duration
            phases[j, k] = 2 * np.pi * ph
    if UP in basis:
        # the drive frame runs ``sequence_detuning`` above the nominal qubit line
        phases[:, basis.index(UP)] -= 2 * np.pi * sequence_detuning * duration
    return psi * np.exp(-1j * phases)[:, :, None]


def evolve(state: SystemState, event, env_trace: noise.EnvTrace | None = None, constants=None,
           sequence_detuning: float = 0.0) -> SystemState:
    """Propagate ``state`` through one pulse or wait under ``env_trace``."""
    trace = env_trace if env_trace is not None else noise.null_trace()
    frame = _Frame(state.basis, trace.B0, constants)
    psi = state.amplitudes[None]
    if isinstance(event, Wait):
        out = _free(psi, state.time, event.duration, [trace], frame, state.basis, sequence_detuning)
    else:
        out = _propagate_pulse(psi, event, state.time, [trace], frame, state.basis, sequence_detuning)
    return SystemState(state.basis, out[0], state.time + event.duration)


def run_sequence(psi, seq: Sequence, traces, basis, constants=None, rng=None):
    """Run a batch (B, L, N) through ``seq``; returns (psi, leaked flags).

    Pulses with a scattering rate remove a trajectory from the driven pair
    at an exponentially distributed time (drawn from ``rng``); such
    trajectories are only flagged, and the caller treats them as lost.
    """
    frame = _Frame(basis, traces[0].B0 if traces else 3.4, constants)
    leaked = np.zeros(psi.shape[0], bool)
    for t0, item in seq.schedule():
        if isinstance(item, Wait):
            psi = _free(psi, t0, item.duration, traces, frame, basis, seq.detuning)
            continue
        if item.scattering_rate > 0 and rng is not None:
            t_jump = rng.exponential(1 / item.scattering_rate, psi.shape[0])
            leaked |= t_jump < item.duration
        psi = _propagate_pulse(psi, item, t0, traces, frame, basis, seq.detuning)
    return psi, leaked


# ---------------------------------------------------------------------------
# Raman drive


@dataclass(frozen=True)
class RamanBeams:
    """Two beams from one laser, far detuned from S1/2 -> P1/2.

    ``single_beam_rabi`` (rad/s) is the resonant Rabi frequency of each
    beam; ``leak_fraction`` the share of scattering events that leave the
    qubit pair.
    """

    single_beam_rabi: float = 2 * math.pi * 12.375e6
    geometry: motion.BeamGeometry | None = None
    mode: motion.HarmonicMode | None = None
    leak_fraction: float = 1 / 3

    def __post_init__(self):
        if self.single_beam_rabi < 0:
            raise DomainError("single_beam_rabi must be non-negative")
        if not 0 <= self.leak_fraction <= 1:
            raise DomainError("leak_fraction must be a probability")


class RamanDrive(NamedTuple):
    rabi: float            # rad/s, two-photon Rabi frequency
    scattering_rate: float  # 1/s, total photon scattering
    leak_rate: float       # 1/s, scattering out of the qubit pair
    eta: float


def raman_effective_drive(beams: RamanBeams, detuning: float, constants=None) -> RamanDrive:
    """Two-photon Rabi frequency and off-resonant scattering at ``detuning`` (Hz)."""
    if detuning == 0:
        raise DomainError("Raman beams must be detuned from the dipole transition")
    c = atomic._consts(constants)
    gamma = 1 / c.term(Term.P1_2).lifetime_s
    Delta = 2 * math.pi * abs(detuning)
    w = beams.single_beam_rabi
    rabi = w * w / (2 * Delta)
    scatter = 2 * gamma * w * w / (4 * Delta * Delta)
    eta = 0.0
    if beams.geometry is not None and beams.mode is not None:
        eta = motion.lamb_dicke(beams.geometry, beams.mode)
    return RamanDrive(rabi, scatter, beams.leak_fraction * scatter, eta)


def beam_rabi_for(rabi: float, detuning: float) -> float:
    """Single-beam Rabi frequency giving a two-photon Rabi frequency ``rabi``."""
    return math.sqrt(2 * 2 * math.pi * abs(detuning) * rabi)


# ---------------------------------------------------------------------------
# rapid adiabatic passage


def rap_transfer(rabi_peak: float, tau: float, delta_c: float, envelope: Envelope = Envelope.COS2,
                 detuning_center: float = 0.0) -> float:
    """Transfer probability of a chirped pulse on an isolated two-level system.

    The drive sweeps linearly from ``-delta_c/2`` to ``+delta_c/2`` (Hz)
    around ``detuning_center``.
    """
    if not tau > 0:
        raise DomainError("pulse length must be positive")
    event = PulseEvent(Channel.MICROWAVE, "qubit", rabi_peak, envelope, detuning_center - delta_c / 2,
                       detuning_center + delta_c / 2, 0.0, tau)
    state = evolve(SystemState.prepare(), event)
    return state.population(UP)


def landau_zener(rabi: float, sweep_rate: float) -> float:
    """Infinite-time Landau-Zener transfer, sweep rate in rad/s^2."""
    return -math.expm1(-math.pi * rabi * rabi / (2 * abs(sweep_rate)))


# ---------------------------------------------------------------------------
# scans


@dataclass(frozen=True)
class Readout:
    """How a shot becomes a bright/dark decision.

    D5/2 population is dark.  Population in ``shelved`` is moved to D5/2 by
    the shelving scheme first.  ``prep_fidelity`` is the probability that
    the ion starts in the intended level at all; otherwise it sits in an
    undriven S1/2 Zeeman level and reads bright.
    """

    detection: DetectionConfig = DetectionConfig()
    scheme: ShelvingScheme | None = ShelvingScheme()
    shelved: QuantumLevel | None = DOWN
    prep_fidelity: float = 1.0

    def __post_init__(self):
        if not 0 <= self.prep_fidelity <= 1:
            raise DomainError("prep_fidelity must be a probability")

    @classmethod
    def ideal(cls, shelved=DOWN) -> "Readout":
        return cls(DetectionConfig(d52_lifetime=math.inf, snr=1e12), None, shelved, 1.0)


class ScanResult(NamedTuple):
    x: np.ndarray
    y: np.ndarray          # fraction of shots read dark
    sigma: np.ndarray
    n_shots: np.ndarray

    def table(self) -> np.ndarray:
        return np.column_stack([self.x, self.y, self.sigma, self.n_shots])


def _dark_probability(psi, basis, readout: Readout):
    pops = np.sum(np.abs(psi) ** 2, axis=2)  # (B, L)
    dark = np.zeros(psi.shape[0])
    for k, lvl in enumerate(basis):
        if lvl.term is Term.D5_2:
            dark += pops[:, k]
        elif readout.shelved is not None and lvl == readout.shelved:
            keep = 1.0 if readout.scheme is None else 1 - shelving_error(readout.scheme)
            dark += keep * pops[:, k]
    return np.clip(dark, 0.0, 1.0)


@dataclass(frozen=True)
class ShotPlan:
    """Everything needed to run the shots of one scan point."""

    sequence: Sequence
    basis: tuple
    start: QuantumLevel
    n_max: int
    motional: tuple | None         # Fock populations to sample the start state from
    model: noise.NoiseModel | None
    readout: Readout
    B0: float
    shots: int
    seed: int
    point: int
    constants: object = None


def _run_point(plan: ShotPlan):
    """Returns the number of shots read dark."""
    seq = plan.sequence
    rng = stream(plan.seed, plan.point, 0)
    B = plan.shots
    if plan.model is None:
        traces = [noise.null_trace(plan.B0, seq.duration)] * B
    else:
        session = plan.model.shot_period + seq.duration
        traces = [noise.sample_trace(plan.model, seq.duration, seq.line_triggered, plan.seed, (plan.point, i, 1),
                                     session_time=(plan.point * B + i) * session) for i in range(B)]
    psi = np.zeros((B, len(plan.basis), plan.n_max + 1), complex)
    if plan.motional is not None:
        p = np.asarray(plan.motional, float)
        n0 = rng.choice(len(p), size=B, p=p / p.sum())
    else:
        n0 = np.zeros(B, int)
    psi[np.arange(B), plan.basis.index(plan.start), n0] = 1.0
    psi, leaked = run_sequence(psi, seq, traces, plan.basis, plan.constants, rng)
    p_dark = _dark_probability(psi, plan.basis, plan.readout)
    p_dark[leaked] = 0.0
    prepared = rng.random(B) < plan.readout.prep_fidelity
    p_dark[~prepared] = 0.0
    dark_state = rng.random(B) < p_dark
    counts = simulate_counts(dark_state, plan.readout.detection, rng)
    return int(np.sum(counts < plan.readout.detection.resolved_threshold()))


def _run_points(plans, workers: int):
    if workers and workers > 1 and len(plans) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_point, plans))
    return [_run_point(p) for p in plans]


def _analytic_point(seq, basis, start, n_max, motional, readout, B0, constants):
    psi = np.zeros((1, len(basis), n_max + 1), complex)
    if motional is None:
        psi[0, basis.index(start), 0] = 1.0
        weights = None
    else:
        weights = np.asarray(motional, float) / np.sum(motional)
        psi = np.zeros((len(weights), len(basis), n_max + 1), complex)
        psi[np.arange(len(weights)), basis.index(start), np.arange(len(weights))] = 1.0
    traces = [noise.null_trace(B0, seq.duration)] * psi.shape[0]
    psi, _ = run_sequence(psi, seq, traces, basis, constants)
    p = _dark_probability(psi, basis, readout) * readout.prep_fidelity
    return float(p[0] if weights is None else weights @ p)


def _scan(sequences, x, shots, model, readout, basis, start, n_max, motional, B0, seed, workers, constants):
    x = np.asarray(x, dtype=float)
    if shots is None:
        y = np.array([_analytic_point(s, basis, start, n_max, motional, readout, B0, constants)
                      for s in sequences])
        return ScanResult(x, y, np.zeros_like(y), np.full(len(y), np.inf))
    if shots < 1:
        raise DomainError("shots must be at least 1")
    mot = None if motional is None else tuple(np.asarray(motional, float))
    plans = [ShotPlan(s, tuple(basis), start, n_max, mot, model, readout, B0, int(shots), int(seed), k, constants)
             for k, s in enumerate(sequences)]
    dark = np.array(_run_points(plans, workers), dtype=float)
    y = dark / shots
    return ScanResult(x, y, binomial_sigma(y, shots), np.full(len(y), shots))


def rabi_scan(template: PulseEvent, t_grid, shots: int | None = 50, env: noise.NoiseModel | None = None,
              readout: Readout = Readout(), seed: int = 0, basis=None, start: QuantumLevel | None = None,
              motional=None, n_max: int | None = None, line_triggered: bool = True, workers: int = 1,
              constants=None) -> ScanResult:
    """Fraction of shots read dark after ``template`` lasting each time in ``t_grid``.

    ``shots=None`` returns the noise-free expectation instead of sampling.
    ``motional`` gives Fock populations from which each shot draws its
    starting number state.
    """
    lower, upper = template.levels
    basis = tuple(basis) if basis is not None else (lower, upper)
    start = start if start is not None else lower
    if motional is not None:
        motional = np.asarray(motional, float)
        n_max = max(n_max or 0, len(motional) - 1 + max(template.sideband, 0))
        motional = np.pad(motional, (0, n_max + 1 - len(motional)))
    n_max = n_max or 0
    B0 = env.B0 if env is not None else 3.4
    seqs = [Sequence((replace(template, duration=float(t)),), line_triggered) for t in np.asarray(t_grid, float)]
    return _scan(seqs, t_grid, shots, env, readout, basis, start, n_max, motional, B0, seed, workers, constants)


def ramsey_sequence(tau_R: float, phi: float, pulse: PulseEvent, echo: bool = False,
                    line_triggered: bool = True, detuning: float = 0.0) -> Sequence:
    """pi/2 - wait - [pi] - wait - (pi/2)_phi built from a pi/2 ``pulse``."""
    half = pulse
    last = replace(pulse, phase=pulse.phase + phi)
    if echo:
        pi = replace(pulse, duration=2 * pulse.duration)
        items = (half, Wait(tau_R / 2), pi, Wait(tau_R / 2), last)
    else:
        items = (half, Wait(tau_R), last)
    return Sequence(items, line_triggered, detuning)


def ramsey_scan(tau_R: float, phi_grid, pulse: PulseEvent, env: noise.NoiseModel | None = None,
                echo: bool = False, shots: int | None = 50, readout: Readout = Readout(), seed: int = 0,
                line_triggered: bool = True, detuning: float = 0.0, workers: int = 1,
                constants=None) -> ScanResult:
    """Ramsey fringe: dark fraction against the phase of the second pulse."""
    if tau_R < 0:
        raise DomainError("Ramsey time must be non-negative")
    lower, upper = pulse.levels
    B0 = env.B0 if env is not None else 3.4
    seqs = [ramsey_sequence(tau_R, float(p), pulse, echo, line_triggered, detuning) for p in np.asarray(phi_grid)]
    return _scan(seqs, phi_grid, shots, env, readout, (lower, upper), lower, 0, None, B0, seed, workers,
                 constants)


def half_pi_pulse(rabi: float, channel=Channel.MICROWAVE, **kw) -> PulseEvent:
    return PulseEvent(channel, "qubit", rabi, Envelope.RECT, duration=math.pi / (2 * rabi), **kw)
