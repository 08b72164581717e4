"""Electron-shelving readout.

|down> is shelved into D5/2 before the detection window; |up> scatters on
the 397 nm cycling transition.  A shelved ion that decays during the window
starts to fluoresce at the decay time, so its count is Poisson with mean
``dark_rate * t + bright_rate * (T - t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, stats

from . import atomic
from .atomic import QuantumLevel, level
from .errors import DomainError, StructureError
from .rng import stream


@dataclass(frozen=True)
class DetectionConfig:
    duration: float = 5e-3
    bright_rate: float = 24_000.0   # counts/s with the ion fluorescing
    snr: float = 50.0               # bright_rate / dark_rate
    threshold: int | None = None    # None: pick the overlap-optimal threshold
    d52_lifetime: float = 1.168

    def __post_init__(self):
        if not self.duration > 0:
            raise DomainError("detection duration must be positive")
        if not self.bright_rate > 0:
            raise DomainError("bright_rate must be positive")
        if not self.snr >= 1:
            raise DomainError("snr must be at least 1 (bright_rate >= dark rate)")
        if self.threshold is not None and self.threshold < 0:
            raise DomainError("threshold must be non-negative")
        if not self.d52_lifetime > 0:
            raise DomainError("d52_lifetime must be positive")

    @property
    def dark_rate(self) -> float:
        return self.bright_rate / self.snr

    @property
    def bright_mean(self) -> float:
        return self.bright_rate * self.duration

    @property
    def dark_mean(self) -> float:
        return self.dark_rate * self.duration

    def resolved_threshold(self) -> int:
        return set_threshold(self).threshold if self.threshold is None else int(self.threshold)


@dataclass(frozen=True)
class ShelvingScheme:
    """One or two quadrupole pi-pulses moving |down> into D5/2."""

    fidelities: tuple = (0.99, 0.99)
    targets: tuple = field(default_factory=lambda: (level("D5/2", 6, 0), level("D5/2", 4, 2)))
    source: QuantumLevel = level("S1/2", 4, 0)

    def __post_init__(self):
        fid = tuple(float(f) for f in np.atleast_1d(self.fidelities))
        object.__setattr__(self, "fidelities", fid)
        object.__setattr__(self, "targets", tuple(self.targets))
        if len(fid) not in (1, 2):
            raise DomainError("a shelving scheme has one or two pulses")
        if len(self.targets) != len(fid):
            raise DomainError("one D5/2 target per shelving pulse is required")
        if any(not 0 <= f <= 1 for f in fid):
            raise DomainError("pulse fidelities must be probabilities")
        if len(set(self.targets)) != len(self.targets):
            raise StructureError("the two shelving pulses must address distinct D5/2 levels")
        for target in self.targets:
            if target.term is not atomic.Term.D5_2:
                raise StructureError(f"shelving target {target} is not a D5/2 level")
            if abs(target.mF - self.source.mF) > 2:
                raise StructureError(f"{self.source} -> {target} violates |delta_m| <= 2")
            if atomic.multipole_amplitude(self.source, target, 2) == 0.0:
                raise StructureError(f"{self.source} -> {target} has zero quadrupole strength")


def shelving_error(scheme: ShelvingScheme = ShelvingScheme()) -> float:
    """Probability that |down> is left in S1/2 after all shelving pulses."""
    return float(np.prod([1 - f for f in scheme.fidelities]))


# ---------------------------------------------------------------------------
# thresholds


class ThresholdChoice(NamedTuple):
    threshold: int
    error: float        # mean of the two Poisson misclassification tails
    degenerate: bool    # the two count distributions are indistinguishable


def overlap_error(threshold, bright_mean: float, dark_mean: float):
    """Average misclassification of two Poisson distributions; bright if counts >= threshold."""
    threshold = np.asarray(threshold)
    miss_bright = stats.poisson.cdf(threshold - 1, bright_mean)
    false_bright = stats.poisson.sf(threshold - 1, dark_mean)
    return 0.5 * (miss_bright + false_bright)


def set_threshold(cfg: DetectionConfig) -> ThresholdChoice:
    """Threshold minimizing the Poisson overlap, scanning 0 .. bright mean."""
    mb, md = cfg.bright_mean, cfg.dark_mean
    if math.isclose(mb, md):
        return ThresholdChoice(max(1, int(math.ceil(md))), 0.5, True)
    grid = np.arange(0, int(math.ceil(mb)) + 1)
    err = overlap_error(grid, mb, md)
    best = int(np.argmin(err))
    return ThresholdChoice(int(grid[best]), float(err[best]), False)


# ---------------------------------------------------------------------------
# decay during the window


def decay_probability(cfg: DetectionConfig) -> float:
    """Probability that a shelved ion decays at some point in the window."""
    return -math.expm1(-cfg.duration / cfg.d52_lifetime)


def _decay_mean(t, cfg):
    return cfg.dark_rate * t + cfg.bright_rate * (cfg.duration - t)


def shelved_bright_probability(cfg: DetectionConfig, threshold: int | None = None) -> float:
    """P(counts >= threshold) for a shelved ion, decay during the window included."""
    th = cfg.resolved_threshold() if threshold is None else threshold
    T, tau = cfg.duration, cfg.d52_lifetime
    stay = math.exp(-T / tau) * stats.poisson.sf(th - 1, cfg.dark_mean)
    decayed, _ = integrate.quad(
        lambda t: math.exp(-t / tau) / tau * stats.poisson.sf(th - 1, _decay_mean(t, cfg)),
        0.0, T, epsabs=1e-14, epsrel=1e-10, limit=200)
    return stay + decayed


def decay_misclassification(cfg: DetectionConfig, threshold: int | None = None) -> float:
    """Share of shelved ions read as bright because they decayed in the window."""
    th = cfg.resolved_threshold() if threshold is None else threshold
    return shelved_bright_probability(cfg, th) - math.exp(-cfg.duration / cfg.d52_lifetime) * float(
        stats.poisson.sf(th - 1, cfg.dark_mean))


def shelved_count_pmf(k, cfg: DetectionConfig) -> np.ndarray:
    """Exact count distribution of a shelved ion including in-window decay."""
    k = np.asarray(k)
    T, tau = cfg.duration, cfg.d52_lifetime
    stay = math.exp(-T / tau) * stats.poisson.pmf(k, cfg.dark_mean)
    decayed, _ = integrate.quad_vec(
        lambda t: math.exp(-t / tau) / tau * stats.poisson.pmf(k, _decay_mean(t, cfg)),
        0.0, T, epsabs=1e-14, epsrel=1e-10)
    return stay + decayed


def bright_count_pmf(k, cfg: DetectionConfig) -> np.ndarray:
    return stats.poisson.pmf(np.asarray(k), cfg.bright_mean)


# ---------------------------------------------------------------------------
# Monte Carlo readout


def simulate_counts(shelved, cfg: DetectionConfig, rng: np.random.Generator) -> np.ndarray:
    """Photon counts for an array of ion states (True = shelved)."""
    shelved = np.asarray(shelved, dtype=bool)
    mean = np.full(shelved.shape, cfg.bright_mean)
    n_dark = int(shelved.sum())
    if n_dark:
        if math.isinf(cfg.d52_lifetime):
            t_decay = np.full(n_dark, np.inf)
        else:
            t_decay = rng.exponential(cfg.d52_lifetime, n_dark)
        t_decay = np.minimum(t_decay, cfg.duration)
        mean[shelved] = _decay_mean(t_decay, cfg)
    return rng.poisson(mean)


def simulate_detection(shelved: bool, cfg: DetectionConfig = DetectionConfig(), seed: int = 0):
    """One readout.  Returns ``(counts, 'bright' | 'dark')``."""
    counts = int(simulate_counts(np.array([shelved]), cfg, stream(seed))[0])
    return counts, "bright" if counts >= cfg.resolved_threshold() else "dark"


def simulate_detection_batch(shelved, cfg: DetectionConfig = DetectionConfig(), seed: int = 0,
                             chunk: int = 1024):
    """Counts and bright flags for many shots.

    Shots are processed in fixed chunks keyed by the chunk index, so the
    result does not depend on how the batch is split among workers.
    """
    shelved = np.asarray(shelved, dtype=bool)
    counts = np.empty(shelved.shape, dtype=np.int64)
    for j, start in enumerate(range(0, len(shelved), chunk)):
        sl = slice(start, start + chunk)
        counts[sl] = simulate_counts(shelved[sl], cfg, stream(seed, 7, j))
    return counts, counts >= cfg.resolved_threshold()


def read_out(p_down, cfg: DetectionConfig, scheme: ShelvingScheme | None, rng: np.random.Generator):
    """Projective measurement plus shelving and photon counting.

    ``p_down`` holds the |down> probability of each shot.  Returns True for
    shots classified bright (|up>).
    """
    p_down = np.asarray(p_down, dtype=float)
    down = rng.random(p_down.shape) < p_down
    if scheme is not None:
        down &= rng.random(p_down.shape) >= shelving_error(scheme)
    return simulate_counts(down, cfg, rng) >= cfg.resolved_threshold()


# ---------------------------------------------------------------------------
# budgets and estimates


def error_budget(cfg: DetectionConfig = DetectionConfig(), scheme: ShelvingScheme = ShelvingScheme()) -> dict:
    """Separate detection error contributions at the configured threshold.

    ``decay`` is the probability of a D5/2 decay inside the window;
    ``decay_misclassification`` is the part of it that actually flips the
    readout.  ``total`` adds shelving error, decay misclassification and the
    Poisson overlap.
    """
    th = cfg.resolved_threshold()
    overlap = float(overlap_error(th, cfg.bright_mean, cfg.dark_mean))
    shelve = shelving_error(scheme)
    decay_flip = decay_misclassification(cfg, th)
    return {
        "threshold": th,
        "shelving": shelve,
        "decay": decay_probability(cfg),
        "decay_misclassification": decay_flip,
        "overlap": overlap,
        "total": shelve + decay_flip + overlap,
    }


def error_vs_duration(durations, cfg: DetectionConfig = DetectionConfig(),
                      scheme: ShelvingScheme = ShelvingScheme()) -> np.ndarray:
    """Total misclassification against window length, threshold re-optimized each time."""
    out = []
    for T in np.atleast_1d(durations):
        trial = DetectionConfig(float(T), cfg.bright_rate, cfg.snr, None, cfg.d52_lifetime)
        th = set_threshold(trial).threshold
        shelved_err = shelving_error(scheme) + shelved_bright_probability(trial, th)
        bright_err = float(stats.poisson.cdf(th - 1, trial.bright_mean))
        out.append(0.5 * (shelved_err + bright_err))
    return np.array(out)


def estimate_population(outcomes) -> tuple[float, float]:
    """Bright fraction and binomial standard error, floored at 1/(2N)."""
    outcomes = np.asarray(outcomes)
    if outcomes.dtype.kind in "UO":
        outcomes = outcomes == "bright"
    n = outcomes.size
    if n == 0:
        raise DomainError("no outcomes to estimate from")
    p = float(np.mean(outcomes.astype(bool)))
    return p, binomial_sigma(p, n)


def binomial_sigma(p, n):
    p = np.asarray(p, dtype=float)
    n = np.asarray(n, dtype=float)
    sigma = np.maximum(np.sqrt(p * (1 - p) / n), 0.5 / n)
    return float(sigma) if sigma.ndim == 0 else sigma
