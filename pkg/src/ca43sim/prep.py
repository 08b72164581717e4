"""State initialization: optical pumping, sideband cooling and transfer
from the stretched state into the clock state |down> = S1/2(F=4, mF=0)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from . import atomic, motion
from .atomic import level
from .errors import DomainError, StructureError


@dataclass(frozen=True)
class PumpingConfig:
    time_constant: float = 1.4e-6
    asymptote: float = 0.98
    pulse_fidelity: float = 0.99
    initial_population: float = 0.35   # stretched-state share after Doppler cooling

    def __post_init__(self):
        if not self.time_constant > 0:
            raise DomainError("pumping time constant must be positive")
        if not 0 < self.asymptote <= 1:
            raise DomainError("pumping asymptote must lie in (0, 1]")
        for name in ("pulse_fidelity", "initial_population"):
            if not 0 <= getattr(self, name) <= 1:
                raise DomainError(f"{name} must be a probability")


@dataclass(frozen=True)
class CoolingConfig:
    doppler_nbar: float = 10.0
    doppler_nbar_spread: float = 5.0
    eta: float = 0.043               # 729 nm beam at 60 degrees, 1.18 MHz mode
    removal_probability: float = 0.5  # n=1 -> 0 per cycle
    recoil_heating: float = 0.029899  # calibrated to nbar = 0.06 after 150 cycles
    cycles: int = 150

    def __post_init__(self):
        for name in ("doppler_nbar", "doppler_nbar_spread", "eta", "removal_probability", "recoil_heating"):
            if getattr(self, name) < 0:
                raise DomainError(f"{name} must be non-negative")
        if self.removal_probability > 1:
            raise DomainError("removal_probability must not exceed 1")


def optical_pumping_curve(t, cfg: PumpingConfig = PumpingConfig()):
    """Population of S1/2(F=4, mF=4) after pumping for time t."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("pumping time must be non-negative")
    decay = np.exp(-t / cfg.time_constant)
    out = cfg.asymptote * (1 - decay) + cfg.initial_population * decay
    return float(out) if out.ndim == 0 else out


def enhanced_pumping(cfg: PumpingConfig = PumpingConfig()) -> float:
    """Success probability of pump / shelve / pump / unshelve / clear-out.

    The first pump leaves ``a`` in the stretched state.  A pi-pulse of
    fidelity ``f`` parks that share in D5/2(6,6); the second pump brings a
    fraction ``a`` of everything left in S1/2 into the stretched state; the
    second pi-pulse exchanges the two again and the 854 nm clear-out returns
    all D5/2(6,6) population to the stretched state.  What is missed is the
    S1/2 population not pumped twice: ``(1 - a)(1 - f a)``.
    """
    a, f = cfg.asymptote, cfg.pulse_fidelity
    s44 = a
    d66 = f * s44
    s44 -= d66
    s_other = 1 - a
    # second pump acts on all S1/2 population
    s_total = s44 + s_other
    s44, s_other = a * s_total, (1 - a) * s_total
    # exchange pulse
    s44, d66 = f * d66 + (1 - f) * s44, f * s44 + (1 - f) * d66
    return s44 + d66


# ---------------------------------------------------------------------------
# sideband cooling


def sideband_cool(initial: motion.MotionalState, cfg: CoolingConfig = CoolingConfig(),
                  cycles: int | None = None) -> motion.MotionalState:
    """Apply pulsed red-sideband cooling cycles as a rate equation.

    Each cycle moves population n -> n-1 with probability
    ``min(1, p_remove * (Omega_{n,n-1}/Omega_{1,0})^2)``, then the
    spontaneous decay that closes the cycle diffuses it: one unit of the
    bath generator with rates ``eps (n+1)`` up and ``eps n`` down.
    """
    cycles = cfg.cycles if cycles is None else cycles
    if cycles < 0:
        raise DomainError("number of cooling cycles must be non-negative")
    p = initial.populations.copy()
    if cycles == 0:
        return motion.MotionalState(p, initial.kind, initial.nbar)
    n = np.arange(len(p))
    rsb = np.zeros(len(p))
    rsb[1:] = motion.sideband_rabi(n[1:], -1, cfg.eta) ** 2
    ref = motion.sideband_rabi(1, -1, cfg.eta) ** 2 if cfg.eta > 0 else 0.0
    remove = np.zeros(len(p)) if ref == 0 else np.minimum(1.0, cfg.removal_probability * rsb / ref)
    heat = _recoil_step(len(p), cfg.recoil_heating)
    for _ in range(cycles):
        moved = remove * p
        p = p - moved
        p[:-1] += moved[1:]
        if heat is not None:
            p = heat @ p
    return motion.MotionalState(p, "general")


def _recoil_step(dim, eps):
    if eps == 0:
        return None
    return linalg.expm(motion._heating_generator(dim, eps).toarray())


def calibrate_recoil(target_nbar: float, cfg: CoolingConfig = CoolingConfig()) -> float:
    """Recoil heating per cycle that makes the cooled state reach ``target_nbar``."""
    start = motion.MotionalState.thermal(cfg.doppler_nbar)

    def miss(eps):
        trial = CoolingConfig(**{**cfg.__dict__, "recoil_heating": eps})
        return sideband_cool(start, trial).mean_n - target_nbar

    return brentq(miss, 0.0, 0.5, xtol=1e-12)


# ---------------------------------------------------------------------------
# transfer to the clock state

DOWN = level("S1/2", 4, 0)
UP = level("S1/2", 3, 0)
STRETCHED = level("S1/2", 4, 4)
TWO_PI_ROUTE = (STRETCHED, level("D5/2", 4, 2), DOWN)


def transfer_two_pi(table=None, pulse_fidelity=0.995, route=TWO_PI_ROUTE) -> float:
    """Success of the two quadrupole pi-pulses S(4,4) -> D5/2 -> S(4,0).

    ``route`` is (start, intermediate, target); both steps must be allowed
    lines of ``table`` (the S1/2 <-> D5/2 table by default).
    ``pulse_fidelity`` may be one number or one per pulse.
    """
    start, mid, end = route
    if table is None:
        table = atomic.transition_table(("S1/2", "D5/2"), 0.5)
    for lo, up in ((start, mid), (end, mid)):
        if abs(up.mF - lo.mF) > 2:
            raise StructureError(f"quadrupole step {lo} -> {up} violates |delta_m| <= 2")
        atomic.find_line(table, lo, up)
    f1, f2 = np.broadcast_to(np.asarray(pulse_fidelity, dtype=float), (2,))
    if not (0 <= f1 <= 1 and 0 <= f2 <= 1):
        raise DomainError("pulse fidelities must be probabilities")
    return float(f1 * f2)


FOUR_STEP_ROUTE = (
    level("S1/2", 4, 4), level("S1/2", 3, 3), level("S1/2", 4, 2), level("S1/2", 3, 1), level("S1/2", 4, 0),
)


def four_step_couplings(omega_ref: float, route=FOUR_STEP_ROUTE) -> np.ndarray:
    """Rabi frequencies of the four hyperfine pi-pulse steps.

    ``omega_ref`` is the Rabi frequency of the clock transition
    (4,0) <-> (3,0); the steps scale with their electron-spin matrix elements.
    """
    ref = atomic.m1_amplitude(DOWN, UP)
    return np.array([omega_ref * atomic.m1_amplitude(a, b) / ref for a, b in zip(route[:-1], route[1:])])


def off_resonant_excitation(omega, delta, t):
    """Two-level excitation probability at detuning ``delta`` (rad/s)."""
    gen = np.hypot(omega, delta)
    return np.where(gen > 0, (omega / np.where(gen > 0, gen, 1)) ** 2 * np.sin(gen * t / 2) ** 2, 0.0)


def transfer_four_step(drive: str, couplings, zeeman_spacing: float, neighbor_couplings=None):
    """Duration and off-resonant error of four sequential hyperfine pi-pulses.

    ``couplings`` are the step Rabi frequencies (rad/s); ``zeeman_spacing``
    (Hz) is the detuning of the nearest unwanted line.  The returned error
    is one minus the product of the per-pulse survival probabilities.
    """
    if drive not in ("raman", "microwave"):
        raise DomainError(f"unknown drive {drive!r}")
    couplings = np.asarray(couplings, dtype=float)
    if couplings.shape != (4,) or np.any(couplings <= 0):
        raise DomainError("four positive step couplings are required")
    neighbors = couplings if neighbor_couplings is None else np.asarray(neighbor_couplings, dtype=float)
    durations = math.pi / couplings
    if math.isinf(zeeman_spacing):
        return float(durations.sum()), 0.0
    delta = 2 * math.pi * zeeman_spacing
    errors = off_resonant_excitation(neighbors, delta, durations)
    survive = np.prod(1 - errors)
    return float(durations.sum()), float(1 - survive)


def s_to_p_pumping_error(scattering_events: float, eta_recoil: float, polarization_leakage: float) -> dict:
    """Error budget for pumping into |down> on the dipole transition.

    Only an estimate: each scattered photon heats with probability
    ``eta_recoil**2`` and a polarization impurity leaks population per event.
    """
    heating = 1 - math.exp(-scattering_events * eta_recoil ** 2)
    leakage = 1 - (1 - polarization_leakage) ** scattering_events
    return {"motional_excitation": heating, "population_leakage": leakage}


def preparation_fidelity(pump: PumpingConfig = PumpingConfig(), transfer_fidelity: float = 0.99) -> float:
    """Probability of starting a qubit experiment in |down>."""
    return enhanced_pumping(pump) * transfer_two_pi(pulse_fidelity=transfer_fidelity)
