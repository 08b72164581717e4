"""Experiment descriptors, configuration and run reports.

A run takes a descriptor id, an optional YAML config and a seed, produces
plot-ready CSV tables (columns ``x, y, sigma, n_shots``) and a JSON report
that compares fitted quantities against reference targets.

Config sections (all optional)::

    constants:   {path: FILE, overrides: {KEY: VALUE}}
    noise:       NoiseModel fields
    detection:   DetectionConfig fields plus shelving_fidelities: [f1, f2]
    experiment:  descriptor parameters (see ``ca43sim list``), shots, workers
    targets:     {TARGET_NAME: {tolerance: T}} or {TARGET_NAME: {band: [lo, hi]}}
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__, atomic, configfile, detection, dynamics, fitkit, motion, noise, prep
from .atomic import Multipole, TransitionSpec, level
from .errors import ConfigError, DegenerateFitError, DomainError, SimulationError

REPORT_SCHEMA = 1
OUT_ENV = "CA43SIM_OUT"
DEFAULT_OUT = "ca43sim-out"


# ---------------------------------------------------------------------------
# targets


@dataclass
class Target:
    """Reference value with an acceptance window.

    ``provenance`` is ``measured`` (an experimental number), ``derived`` (an
    independent calculation) or ``trivial`` (a limiting case).
    """

    name: str
    target: float
    achieved: float
    provenance: str
    tolerance: float | None = None
    band: tuple | None = None
    relative: bool = False

    @property
    def window(self) -> tuple[float, float]:
        if self.band is not None:
            return float(self.band[0]), float(self.band[1])
        tol = self.tolerance * abs(self.target) if self.relative else self.tolerance
        return self.target - tol, self.target + tol

    @property
    def passed(self) -> bool:
        lo, hi = self.window
        return bool(np.isfinite(self.achieved) and lo <= self.achieved <= hi)

    def as_dict(self) -> dict:
        lo, hi = self.window
        return {
            "name": self.name,
            "target": self.target,
            "tolerance": self.tolerance,
            "relative": self.relative,
            "window": [lo, hi],
            "achieved": float(self.achieved),
            "provenance": self.provenance,
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    constants: atomic.AtomicConstants
    noise: noise.NoiseModel
    detection: detection.DetectionConfig
    scheme: detection.ShelvingScheme
    experiment: dict
    targets: dict
    source: str | None = None


_NOISE_KEYS = {f.name for f in fields(noise.NoiseModel)}
_DETECTION_KEYS = {f.name for f in fields(detection.DetectionConfig)} | {"shelving_fidelities"}
_SECTIONS = ("constants", "noise", "detection", "experiment", "targets")


def _check_number(doc, value, *keys, allow_bool=False):
    if isinstance(value, bool) and not allow_bool:
        raise doc.error(f"'{'.'.join(keys)}' must be a number", *keys)
    if not isinstance(value, (int, float)):
        raise doc.error(f"'{'.'.join(keys)}' must be a number, got {value!r}", *keys)
    return value


def parse_config(doc: configfile.Document, descriptor_id: str | None = None) -> RunConfig:
    data = doc.data
    for key in data:
        if key not in _SECTIONS:
            raise doc.error(f"unknown section '{key}' (expected one of {', '.join(_SECTIONS)})", key)
    for key in _SECTIONS:
        if key in data and data[key] is not None and not isinstance(data[key], dict):
            raise doc.error(f"section '{key}' must be a mapping", key)

    const_sec = data.get("constants") or {}
    for key in const_sec:
        if key not in ("path", "overrides"):
            raise doc.error(f"unknown key '{key}' in constants", "constants", key)
    overrides = const_sec.get("overrides") or {}
    if not isinstance(overrides, dict):
        raise doc.error("constants.overrides must be a mapping", "constants", "overrides")
    path = const_sec.get("path")
    if path is not None and doc.path is not None and not os.path.isabs(path):
        path = str(Path(doc.path).parent / path)
    try:
        consts = atomic.load_constants(path, overrides or None)
    except ConfigError as exc:
        if exc.path is None:
            raise doc.error(str(exc), "constants", "overrides") from None
        raise

    noise_sec = data.get("noise") or {}
    for key, value in noise_sec.items():
        if key not in _NOISE_KEYS:
            raise doc.error(f"unknown noise parameter '{key}'", "noise", key)
        _check_number(doc, value, "noise", key, allow_bool=(key == "shutter_closed"))
    try:
        model = noise.NoiseModel(**noise_sec)
    except DomainError as exc:
        culprit = [k for k in noise_sec if k in str(exc)] or list(noise_sec)[:1]
        raise doc.error(str(exc), "noise", *culprit[:1]) from None

    det_sec = dict(data.get("detection") or {})
    for key, value in det_sec.items():
        if key not in _DETECTION_KEYS:
            raise doc.error(f"unknown detection parameter '{key}'", "detection", key)
        if key == "shelving_fidelities":
            if not isinstance(value, list) or not value:
                raise doc.error("shelving_fidelities must be a list of one or two numbers", "detection", key)
            for i, v in enumerate(value):
                _check_number(doc, v, "detection", key, i)
        elif not (key == "threshold" and value is None):
            _check_number(doc, value, "detection", key)
    fids = det_sec.pop("shelving_fidelities", None)
    if "d52_lifetime" not in det_sec:
        det_sec["d52_lifetime"] = consts.d52_lifetime
    try:
        det = detection.DetectionConfig(**det_sec)
        scheme = detection.ShelvingScheme() if fids is None else _scheme_for(fids)
    except SimulationError as exc:
        culprit = [k for k in det_sec if k in str(exc)] or ["shelving_fidelities"] * (fids is not None)
        raise doc.error(str(exc), "detection", *culprit[:1]) from None

    exp_sec = dict(data.get("experiment") or {})
    if descriptor_id is not None:
        desc = get_descriptor(descriptor_id)
        allowed = set(desc.defaults) | {"shots", "workers"}
        for key, value in exp_sec.items():
            if key not in allowed:
                raise doc.error(f"unknown parameter '{key}' for {descriptor_id} "
                                f"(known: {', '.join(sorted(allowed))})", "experiment", key)
            expected = desc.defaults.get(key, 1)
            if isinstance(expected, bool):
                if not isinstance(value, bool):
                    raise doc.error(f"'{key}' must be true or false", "experiment", key)
            elif isinstance(expected, (int, float)):
                _check_number(doc, value, "experiment", key)
            elif isinstance(expected, (list, tuple)) and not isinstance(value, list):
                raise doc.error(f"'{key}' must be a list", "experiment", key)
        if "shots" in exp_sec and (not isinstance(exp_sec["shots"], int) or exp_sec["shots"] < 1):
            raise doc.error("shots must be a positive integer", "experiment", "shots")

    tgt_sec = data.get("targets") or {}
    targets = {}
    for name, spec in tgt_sec.items():
        if not isinstance(spec, dict):
            raise doc.error(f"target '{name}' must be a mapping", "targets", name)
        for key, value in spec.items():
            if key == "tolerance":
                _check_number(doc, value, "targets", name, key)
                if value < 0:
                    raise doc.error("tolerance must be non-negative", "targets", name, key)
            elif key == "band":
                if not (isinstance(value, list) and len(value) == 2):
                    raise doc.error("band must be [low, high]", "targets", name, key)
                for i, v in enumerate(value):
                    _check_number(doc, v, "targets", name, key, i)
            else:
                raise doc.error(f"unknown key '{key}' in target '{name}'", "targets", name, key)
        targets[name] = spec
    return RunConfig(consts, model, det, scheme, exp_sec, targets, doc.path)


def _scheme_for(fids):
    fids = tuple(float(f) for f in fids)
    base = detection.ShelvingScheme()
    return detection.ShelvingScheme(fids, base.targets[: len(fids)])


def load_config(path=None, descriptor_id: str | None = None) -> RunConfig:
    doc = configfile.load(path) if path is not None else configfile.Document({}, {}, None)
    return parse_config(doc, descriptor_id)


# ---------------------------------------------------------------------------
# descriptors


@dataclass
class Series:
    name: str
    table: np.ndarray  # columns x, y, sigma, n_shots


@dataclass
class Outcome:
    series: list
    fits: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    targets: list = field(default_factory=list)


@dataclass(frozen=True)
class Descriptor:
    id: str
    summary: str
    defaults: dict
    func: Callable
    shots: int = 50


_REGISTRY: dict[str, Descriptor] = {}


def descriptor(id_, summary, shots=50, **defaults):
    def wrap(fn):
        _REGISTRY[id_] = Descriptor(id_, summary, defaults, fn, shots)
        return fn
    return wrap


def get_descriptor(id_: str) -> Descriptor:
    try:
        return _REGISTRY[id_]
    except KeyError:
        raise ConfigError(f"unknown experiment '{id_}' (see 'list')") from None


def descriptors() -> list[Descriptor]:
    return list(_REGISTRY.values())


@dataclass
class Context:
    cfg: RunConfig
    params: dict
    seed: int
    shots: int
    workers: int

    @property
    def constants(self):
        return self.cfg.constants

    def readout(self, shelved=dynamics.DOWN, prep_fidelity=1.0, scheme=True) -> dynamics.Readout:
        return dynamics.Readout(self.cfg.detection, self.cfg.scheme if scheme else None, shelved, prep_fidelity)

    def spam_contrast(self, prep_fidelity) -> float:
        budget = detection.error_budget(self.cfg.detection, self.cfg.scheme)
        return prep_fidelity * (1 - budget["total"])


def _table(x, y, sigma, n):
    x = np.asarray(x, float)
    return np.column_stack([x, np.broadcast_to(y, x.shape), np.broadcast_to(sigma, x.shape),
                            np.broadcast_to(n, x.shape)]).astype(float)


def _grid(spec):
    """[start, stop, n] -> linspace."""
    a, b, n = spec
    return np.linspace(float(a), float(b), int(n))


def _rng_shots(seed, *key):
    from .rng import stream
    return stream(seed, *key)


# --- optical pumping ------------------------------------------------------


@descriptor("fig3_pumping", "optical pumping into S1/2(4,4) against pumping time, plus the enhanced scheme",
            shots=1000,
            time_grid=[0.0, 12e-6, 25], time_constant=1.4e-6, asymptote=0.98, initial_population=0.35,
            pulse_fidelity=0.99)
def _fig3(ctx: Context) -> Outcome:
    p = ctx.params
    pump = prep.PumpingConfig(p["time_constant"], p["asymptote"], p["pulse_fidelity"], p["initial_population"])
    t = _grid(p["time_grid"])
    ideal = prep.optical_pumping_curve(t, pump)
    ro = ctx.readout(shelved=None)
    keep = 1 - detection.shelving_error(ctx.cfg.scheme)
    th = ctx.cfg.detection.resolved_threshold()
    y = np.empty(len(t))
    for k, pk in enumerate(ideal):
        rng = _rng_shots(ctx.seed, k)
        shelved = rng.random(ctx.shots) < pk * keep
        counts = detection.simulate_counts(shelved, ro.detection, rng)
        y[k] = np.mean(counts < th)
    sigma = detection.binomial_sigma(y, ctx.shots)
    fit = fitkit.fit(fitkit.EXP_DECAY, np.column_stack([t, y, sigma]),
                     [pump.initial_population - pump.asymptote, pump.time_constant, pump.asymptote])
    at10 = prep.optical_pumping_curve(10e-6, pump)
    enhanced = prep.enhanced_pumping(pump)
    return Outcome(
        [Series("curve", _table(t, y, sigma, ctx.shots))],
        {"exp_decay": fit.as_dict()},
        {"population_10us": at10, "enhanced": enhanced, "fitted_tau": fit["tau"]},
        [Target("population_10us", 0.98, at10, "measured", band=(0.979, 1.0)),
         Target("enhanced_pumping", 0.992, enhanced, "measured", band=(0.992, 1.0)),
         Target("fitted_time_constant", 1.4e-6, fit["tau"], "measured", tolerance=0.1, relative=True)],
    )


# --- sideband flops -------------------------------------------------------


S44 = level("S1/2", 4, 4)
FOCK_TAIL = 1e-5
D66 = level("D5/2", 6, 6)


@descriptor("fig4_bsb_flops", "blue-sideband flops on S1/2(4,4)-D5/2(6,6) after ground-state cooling; thermal fit",
            time_grid=[0.0, 300e-6, 61], carrier_rabi_hz=250e3, eta=0.043, doppler_nbar=10.0, cycles=150,
            recoil_heating=prep.CoolingConfig().recoil_heating, removal_probability=0.5)
def _fig4(ctx: Context) -> Outcome:
    p = ctx.params
    cool = prep.CoolingConfig(doppler_nbar=p["doppler_nbar"], eta=p["eta"], cycles=int(p["cycles"]),
                              recoil_heating=p["recoil_heating"], removal_probability=p["removal_probability"])
    cooled = prep.sideband_cool(motion.MotionalState.thermal(cool.doppler_nbar), cool)
    # drop the far tail left by the hot start; it carries < 1e-5 of the population
    pops = cooled.populations
    cut = int(np.searchsorted(np.cumsum(pops), 1 - FOCK_TAIL)) + 1
    pops = pops[: max(cut, 4)]
    pops = pops / pops.sum()
    omega0 = 2 * math.pi * p["carrier_rabi_hz"]
    ev = dynamics.PulseEvent(dynamics.Channel.QUADRUPOLE, TransitionSpec(S44, D66, Multipole.E2), omega0,
                             sideband=1, eta=p["eta"])
    prep_f = prep.enhanced_pumping()
    ro = ctx.readout(shelved=None, prep_fidelity=prep_f, scheme=False)
    t = _grid(p["time_grid"])
    res = dynamics.rabi_scan(ev, t, ctx.shots, ctx.cfg.noise, ro, ctx.seed, motional=pops,
                             workers=ctx.workers, constants=ctx.constants)
    contrast = prep_f * (1 - detection.decay_misclassification(ctx.cfg.detection))
    model = fitkit.thermal_flop_model(p["eta"], 1, contrast)
    init, _ = fitkit.init_guess("thermal_flop", res.x, res.y, eta=p["eta"])
    init[0] = 0.1
    fit = fitkit.fit_binomial(model, res.x, res.y, ctx.shots, init)
    return Outcome(
        [Series("flops", res.table())],
        {"thermal_flop": fit.as_dict()},
        {"cooled_mean_n": cooled.mean_n, "fitted_nbar": fit["nbar"]},
        [Target("fitted_nbar", 0.06, fit["nbar"], "measured", tolerance=0.02)],
    )


# --- rapid adiabatic passage ----------------------------------------------


@descriptor("fig5_rap", "chirped cos^2 pulse transfer against Rabi frequency for four (tau, chirp) sets",
            rabi_hz_grid=[5e3, 400e3, 40], taus=[50e-6, 100e-6, 200e-6, 400e-6],
            chirps_hz=[50e3, 100e3, 200e3, 400e3], lz_adiabaticity=[0.1, 3.0, 8])
def _fig5(ctx: Context) -> Outcome:
    p = ctx.params
    rabi_hz = np.geomspace(*p["rabi_hz_grid"][:2], int(p["rabi_hz_grid"][2]))
    series, plateau = [], {}
    for tau, chirp in zip(p["taus"], p["chirps_hz"]):
        y = np.array([dynamics.rap_transfer(2 * math.pi * f, tau, chirp) for f in rabi_hz])
        name = f"tau{tau * 1e6:g}us_chirp{chirp / 1e3:g}kHz"
        series.append(Series(name, _table(rabi_hz, y, 0.0, 0)))
        plateau[name] = _plateau_ratio(rabi_hz, y, 0.99)
    best = max(plateau.values())
    lz = _landau_zener_check(p["lz_adiabaticity"])
    return Outcome(
        series, {}, {"plateau_ratio": plateau, "lz_max_rel_dev": lz},
        [Target("plateau_range_ratio", 4.0, best, "measured", band=(4.0, math.inf)),
         Target("landau_zener_max_rel_dev", 0.0, lz, "derived", tolerance=0.02)],
    )


def _plateau_ratio(x, y, level_):
    """Largest max/min ratio of a contiguous run of x with y >= level."""
    best, start = 0.0, None
    for i, ok in enumerate(list(y >= level_) + [False]):
        if ok and start is None:
            start = i
        elif not ok and start is not None:
            best = max(best, x[i - 1] / x[start])
            start = None
    return float(best)


def _landau_zener_check(adiabaticity_spec) -> float:
    """Largest relative deviation of the integrator from the Landau-Zener formula.

    Constant-amplitude pulses with a chirp span of 200 Rabi frequencies, so
    the finite sweep only perturbs the asymptotic result at the 1e-3 level.
    """
    a_lo, a_hi, n = adiabaticity_spec
    rabi = 2 * math.pi * 10e3
    worst = 0.0
    for a in np.linspace(a_lo, a_hi, int(n)):
        # adiabaticity Omega^2 / |d Delta/dt|
        rate = rabi * rabi / a
        span = 200 * rabi
        tau = span / rate
        got = dynamics.rap_transfer(rabi, tau, span / (2 * math.pi), envelope=dynamics.Envelope.RECT)
        want = dynamics.landau_zener(rabi, rate)
        worst = max(worst, abs(got - want) / want)
    return worst


# --- microwave Rabi -------------------------------------------------------


@descriptor("fig6_mw_rabi", "microwave Rabi flops on the clock qubit at 3.4 G in windows after 0, 50 and 100 ms",
            tau_pi=520.83e-6, window_starts=[0.0, 50e-3, 97.5e-3], window_length=2.5e-3, points_per_window=40,
            B0=3.4, amplitude_noise=2e-4)
def _fig6(ctx: Context) -> Outcome:
    p = ctx.params
    t = np.concatenate([w + np.linspace(0, p["window_length"], int(p["points_per_window"]))
                        for w in p["window_starts"]])
    model = replace(ctx.cfg.noise, B0=p["B0"], intensity_frac_rms=p["amplitude_noise"])
    ev = dynamics.PulseEvent(dynamics.Channel.MICROWAVE, "qubit", math.pi / p["tau_pi"])
    ro = ctx.readout(prep_fidelity=prep.preparation_fidelity())
    res = dynamics.rabi_scan(ev, t, ctx.shots, model, ro, ctx.seed, workers=ctx.workers, constants=ctx.constants)
    fit = fitkit.fit(fitkit.SIN_TIME, res.table()[:, :3], [0.97, p["tau_pi"], 0.49])
    return Outcome(
        [Series("flops", res.table())],
        {"sin_time": fit.as_dict()},
        {"tau_pi": fit["tau_pi"], "A": fit["A"], "y0": fit["y0"]},
        [Target("tau_pi", 520.83e-6, fit["tau_pi"], "measured", tolerance=0.01, relative=True),
         Target("amplitude", 0.974, fit["A"], "measured", band=(0.95, math.inf))],
    )


# --- Raman Rabi -----------------------------------------------------------


@descriptor("fig7_raman_rabi", "copropagating Raman Rabi flops at -10 GHz: early and late fit windows",
            shots=200, tau_pi=65.3e-6, detuning_hz=-10e9, early=[0.0, 600e-6, 61], late=[3.4e-3, 4.0e-3, 61],
            intensity_noise=2.6e-3, leak_fraction=1 / 3, B0=3.4)
def _fig7(ctx: Context) -> Outcome:
    p = ctx.params
    rabi = math.pi / p["tau_pi"]
    beams = dynamics.RamanBeams(dynamics.beam_rabi_for(rabi, p["detuning_hz"]), leak_fraction=p["leak_fraction"])
    drive = dynamics.raman_effective_drive(beams, p["detuning_hz"], ctx.constants)
    ev = dynamics.PulseEvent(dynamics.Channel.RAMAN_CO, "qubit", drive.rabi, scattering_rate=drive.leak_rate)
    model = replace(ctx.cfg.noise, B0=p["B0"], intensity_frac_rms=p["intensity_noise"])
    ro = ctx.readout(prep_fidelity=prep.preparation_fidelity())
    early = dynamics.rabi_scan(ev, _grid(p["early"]), ctx.shots, model, ro, ctx.seed, workers=ctx.workers,
                               constants=ctx.constants)
    late = dynamics.rabi_scan(ev, _grid(p["late"]), ctx.shots, model, ro, ctx.seed + 1, workers=ctx.workers,
                              constants=ctx.constants)
    f1 = fitkit.fit(fitkit.SIN_TIME, early.table()[:, :3], [0.97, p["tau_pi"], 0.49])
    f2 = fitkit.fit(fitkit.SIN_TIME_PHASE, late.table()[:, :3], [0.8, f1["tau_pi"], 0.43, 0.0])
    return Outcome(
        [Series("early", early.table()), Series("late", late.table())],
        {"early": f1.as_dict(), "late": f2.as_dict()},
        {"scattering_rate": drive.scattering_rate, "leak_rate": drive.leak_rate},
        [Target("early_amplitude", 0.97, f1["A"], "measured", tolerance=0.03),
         Target("early_tau_pi", 65.3e-6, f1["tau_pi"], "measured", tolerance=0.02, relative=True),
         Target("late_amplitude", 0.80, f2["A"], "measured", tolerance=0.05),
         Target("late_y0", 0.43, f2["y0"], "measured", tolerance=0.03)],
    )


# --- depumping ------------------------------------------------------------


@descriptor("fig8_depump", "|down> survival against waiting time with the 397 nm beam only AOM-switched",
            shots=2000,
            wait_grid=[0.0, 1.5, 31])
def _fig8(ctx: Context) -> Outcome:
    p = ctx.params
    model = ctx.cfg.noise
    waits = _grid(p["wait_grid"])
    surv = noise.depump_survival(model, waits)
    keep = 1 - detection.shelving_error(ctx.cfg.scheme)
    th = ctx.cfg.detection.resolved_threshold()
    y = np.empty(len(waits))
    for k, s in enumerate(surv):
        rng = _rng_shots(ctx.seed, k)
        shelved = rng.random(ctx.shots) < s * keep
        y[k] = np.mean(detection.simulate_counts(shelved, ctx.cfg.detection, rng) < th)
    sigma = detection.binomial_sigma(y, ctx.shots)
    table = np.column_stack([waits, y, sigma])
    targets, fits, metrics = [], {}, {"mean_population": float(np.mean(y))}
    if model.shutter_closed:
        targets.append(Target("flat_population", 0.97, float(np.mean(y)), "trivial", tolerance=0.01))
        targets.append(Target("max_deviation", 0.0, float(np.max(np.abs(y - 0.97))), "trivial", tolerance=0.03))
    else:
        fit = fitkit.fit(fitkit.EXP_DECAY, table, [0.97, 0.4, 0.0])
        fits["exp_decay"] = fit.as_dict()
        metrics["tau"] = fit["tau"]
        targets.append(Target("decay_time", 0.410, fit["tau"], "measured", tolerance=0.05, relative=True))
        targets.append(Target("initial_population", 0.97, fit["a"] + fit["c"], "measured", tolerance=0.02))
    return Outcome([Series("survival", _table(waits, y, sigma, ctx.shots))], fits, metrics, targets)


# --- Ramsey ---------------------------------------------------------------


def _ramsey_amplitude(ctx, tau, drive, B0, tau_pi, extra=None, series_name=None, seed_offset=0):
    p = ctx.params
    model = replace(ctx.cfg.noise, B0=B0, **(extra or {}))
    channel = dynamics.Channel(drive)
    rabi = math.pi / tau_pi
    leak = 0.0
    if channel is not dynamics.Channel.MICROWAVE:
        beams = dynamics.RamanBeams(dynamics.beam_rabi_for(rabi, p.get("detuning_hz", -10e9)))
        leak = dynamics.raman_effective_drive(beams, p.get("detuning_hz", -10e9), ctx.constants).leak_rate
    pulse = dynamics.PulseEvent(channel, "qubit", rabi, duration=tau_pi / 2, scattering_rate=leak)
    phi = np.linspace(0, 2 * math.pi * p["fringes"], int(p["phase_points"]), endpoint=False)
    ro = ctx.readout(prep_fidelity=prep.preparation_fidelity())
    res = dynamics.ramsey_scan(tau, phi, pulse, model, shots=ctx.shots, readout=ro, seed=ctx.seed + seed_offset,
                               workers=ctx.workers, constants=ctx.constants)
    fit = fitkit.fit_family("sin_phase", res.table()[:, :3])
    return Series(series_name, res.table()), fit


@descriptor("fig9_ramsey_100ms", "Ramsey fringes at 3.4 G, 100 ms wait, with microwave and both Raman geometries",
            shots=400, tau_R=0.1, B0=3.4, drives=["microwave", "raman_co", "raman_counter"], tau_pis=[19e-6, 20e-6, 23e-6],
            path_phase_rms=[0.0, 0.0, 0.0], fringes=2, phase_points=24, detuning_hz=-10e9)
def _fig9(ctx: Context) -> Outcome:
    p = ctx.params
    series, fits, targets = [], {}, []
    for k, (drive, tp, pp) in enumerate(zip(p["drives"], p["tau_pis"], p["path_phase_rms"])):
        s, fit = _ramsey_amplitude(ctx, p["tau_R"], drive, p["B0"], tp, {"path_phase_rms": pp}, drive, k)
        series.append(s)
        fits[drive] = fit.as_dict()
        targets.append(Target(f"amplitude_{drive}", 0.9, fit["A"], "measured", band=(0.85, 0.95)))
    return Outcome(series, fits, {}, targets)


@descriptor("fig10_ramsey_05G", "microwave Ramsey fringes at 0.5 G for 50 us, 200 ms and 1 s waits",
            shots=500, taus=[50e-6, 0.2, 1.0], B0=0.5, tau_pi=19e-6, fringes=2, phase_points=24,
            reference=[0.976, 0.962, 0.847], tolerances=[0.02, 0.03, 0.05])
def _fig10(ctx: Context) -> Outcome:
    p = ctx.params
    series, fits, targets, amps = [], {}, [], {}
    for k, (tau, ref, tol) in enumerate(zip(p["taus"], p["reference"], p["tolerances"])):
        name = f"tau_{tau:g}s"
        s, fit = _ramsey_amplitude(ctx, tau, "microwave", p["B0"], p["tau_pi"], None, name, k)
        series.append(s)
        fits[name] = fit.as_dict()
        amps[name] = fit["A"]
        targets.append(Target(f"amplitude_{name}", ref, fit["A"], "measured", tolerance=tol))
    return Outcome(series, fits, {"amplitudes": amps}, targets)


# --- heating and transport ------------------------------------------------


@descriptor("heating_rate", "mean phonon number and motional Ramsey coherence under the heating bath",
            rate=1 / 0.370, delay_grid=[0.0, 0.5, 26], coherence_time=0.320)
def _heating(ctx: Context) -> Outcome:
    p = ctx.params
    delays = _grid(p["delay_grid"])
    ground = motion.MotionalState.number(0)
    nbar = np.array([motion.apply_heating(ground, d, p["rate"]).mean_n for d in delays])
    coh = np.array([motion.motional_ramsey_coherence(d, p["rate"]) for d in delays])
    n370 = motion.apply_heating(ground, 0.370, p["rate"]).mean_n
    c320 = motion.motional_ramsey_coherence(p["coherence_time"], p["rate"])
    slope = float(np.polyfit(delays, nbar, 1)[0])
    return Outcome(
        [Series("mean_n", _table(delays, nbar, 0.0, 0)), Series("coherence", _table(delays, coh, 0.0, 0))],
        {}, {"rate_fit": slope, "n_at_370ms": n370, "coherence_at_320ms": c320},
        [Target("n_at_370ms", 1.0, n370, "measured", tolerance=0.02),
         Target("motional_coherence_320ms", 1 / math.e, c320, "measured", band=(1 / math.e, 1.0))],
    )


@descriptor("transport", "coherent excitation after a 10 um shuttle through the 125 kHz electrode filter",
            displacement=10e-6, duration_grid=[5e-6, 100e-6, 40], trap_hz=1.18e6, filter_hz=125e3,
            profile="smoothstep")
def _transport(ctx: Context) -> Outcome:
    p = ctx.params
    mode = motion.HarmonicMode(2 * math.pi * p["trap_hz"], ctx.constants.mass)
    durations = _grid(p["duration_grid"])
    exc = np.array([motion.transport_excitation(
        motion.TransportRamp(p["displacement"], d, p["filter_hz"], p["profile"]), mode) for d in durations])
    at40 = motion.transport_excitation(motion.TransportRamp(p["displacement"], 40e-6, p["filter_hz"], p["profile"]),
                                       mode)
    return Outcome(
        [Series("excitation", _table(durations, exc, 0.0, 0))], {}, {"excitation_40us": at40},
        [Target("excitation_40us", 0.0, at40, "derived", band=(0.0, 0.01))],
    )


# --- coherence extrapolation -----------------------------------------------


@descriptor("coherence_extrapolation", "1/e coherence time from simulated 0.5 G Ramsey amplitudes",
            taus=[0.2, 1.0], B0=0.5, mc_shots=4000, sigmas=[0.011, 0.021], anchor_sigma=0.004)
def _coherence(ctx: Context) -> Outcome:
    p = ctx.params
    contrast = ctx.spam_contrast(prep.preparation_fidelity())
    out = noise.coherence_extrapolate_inputs(ctx.cfg.noise, p["taus"], p["B0"], contrast, int(p["mc_shots"]),
                                             ctx.seed, p["anchor_sigma"], p["sigmas"])
    exp_t2, gau_t2 = out["exponential"]["T2"], out["gaussian"]["T2"]
    return Outcome(
        [Series("amplitudes", _table(out["tau"], out["amplitude"], out["sigma"], 0))],
        {"exponential": out["exponential"], "gaussian": out["gaussian"]},
        {"contrast": contrast},
        [Target("T2_exponential", 6.0, exp_t2, "measured", tolerance=0.3, relative=True),
         Target("T2_gaussian", 2.5, gau_t2, "measured", tolerance=0.3, relative=True)],
    )


# ---------------------------------------------------------------------------
# running


@dataclass
class RunReport:
    descriptor: str
    seed: int
    params: dict
    files: list
    fits: dict
    metrics: dict
    targets: list
    wall_time: float
    constants_hash: str

    @property
    def passed(self) -> bool:
        return all(t.passed for t in self.targets)

    def as_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA,
            "package_version": __version__,
            "descriptor": {"id": self.descriptor, "params": _jsonable(self.params)},
            "seed": self.seed,
            "constants_hash": self.constants_hash,
            "data": self.files,
            "fits": _jsonable(self.fits),
            "metrics": _jsonable(self.metrics),
            "targets": [t.as_dict() for t in self.targets],
            "passed": self.passed,
            "wall_time_s": self.wall_time,
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def output_dir(out=None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(table, extra_columns=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = list(extra_columns or []) + ["x", "y", "sigma", "n_shots"]
    writer.writerow(head)
    for row in np.asarray(table):
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _merge_params(desc: Descriptor, cfg: RunConfig, overrides: dict | None):
    params = dict(desc.defaults, shots=desc.shots)
    for key, value in cfg.experiment.items():
        if key != "workers":
            params[key] = value
    for key, value in (overrides or {}).items():
        if key not in params:
            raise ConfigError(f"unknown parameter '{key}' for {desc.id}")
        params[key] = value
    return params


def _apply_target_overrides(targets, cfg: RunConfig):
    for t in targets:
        spec = cfg.targets.get(t.name)
        if not spec:
            continue
        if "band" in spec:
            t.band, t.tolerance = tuple(spec["band"]), None
        if "tolerance" in spec:
            t.tolerance, t.band = float(spec["tolerance"]), None
    return targets


def execute(descriptor_id: str, cfg: RunConfig | None = None, seed: int = 0,
            overrides: dict | None = None) -> tuple[Outcome, dict]:
    """Run a descriptor in memory and return its outcome and parameters."""
    desc = get_descriptor(descriptor_id)
    cfg = cfg or load_config(None, descriptor_id)
    params = _merge_params(desc, cfg, overrides)
    shots = int(params.pop("shots"))
    workers = int(cfg.experiment.get("workers", 1))
    ctx = Context(cfg, params, int(seed), shots, workers)
    try:
        outcome = desc.func(ctx)
    except DegenerateFitError:
        raise
    except (ValueError, ArithmeticError) as exc:
        if isinstance(exc, SimulationError):
            raise
        raise SimulationError(f"{descriptor_id}: {exc}") from exc
    _apply_target_overrides(outcome.targets, cfg)
    params = dict(params, shots=shots, workers=workers)
    return outcome, params


def run(descriptor_id: str, config_path=None, seed: int = 0, out=None, overrides: dict | None = None) -> RunReport:
    """Run a descriptor, write its CSV tables and JSON report, return the report."""
    start = time.perf_counter()
    cfg = load_config(config_path, descriptor_id)
    outcome, params = execute(descriptor_id, cfg, seed, overrides)
    out_dir = output_dir(out)
    files = []
    single = len(outcome.series) == 1
    for s in outcome.series:
        name = f"{descriptor_id}.csv" if single else f"{descriptor_id}-{s.name}.csv"
        atomic_write(out_dir / name, csv_text(s.table))
        files.append({"series": s.name, "file": name})
    report = RunReport(descriptor_id, int(seed), params, files, outcome.fits, outcome.metrics, outcome.targets,
                       time.perf_counter() - start, cfg.constants.source_hash)
    atomic_write(out_dir / f"{descriptor_id}.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    return report


def parse_grid(text: str) -> np.ndarray:
    """'a:b:n' -> n evenly spaced values from a to b."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise ConfigError(f"grid must look like start:stop:count, got {text!r}") from None
    if n < 1:
        raise ConfigError("grid is empty")
    return np.linspace(a, b, n)


def _set_param(cfg: RunConfig, param: str, value, desc: Descriptor):
    """Return (config, experiment overrides) with ``param`` set to ``value``."""
    if param.startswith("noise."):
        key = param.split(".", 1)[1]
        if key not in _NOISE_KEYS:
            raise ConfigError(f"unknown noise parameter '{key}'")
        return replace(cfg, noise=replace(cfg.noise, **{key: value})), {}
    if param.startswith("detection."):
        key = param.split(".", 1)[1]
        if key not in _DETECTION_KEYS - {"shelving_fidelities"}:
            raise ConfigError(f"unknown detection parameter '{key}'")
        return replace(cfg, detection=replace(cfg.detection, **{key: value})), {}
    key = param.split(".", 1)[1] if param.startswith("experiment.") else param
    if key not in desc.defaults:
        raise ConfigError(f"unknown parameter '{param}' for {desc.id}")
    return cfg, {key: value}


def scan(descriptor_id: str, param: str, grid, config_path=None, seed: int = 0, out=None):
    """One run per grid value; returns (merged table, per-point outcomes).

    The merged table has the scanned value as an extra leading column.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if grid.size == 0:
        raise ConfigError("grid is empty")
    desc = get_descriptor(descriptor_id)
    base = load_config(config_path, descriptor_id)
    rows, outcomes = [], []
    for value in grid:
        cfg, overrides = _set_param(base, param, float(value), desc)
        try:
            outcome, _ = execute(descriptor_id, cfg, seed, overrides)
        except DomainError as exc:
            raise SimulationError(f"{param}={value:g}: {exc}") from exc
        outcomes.append(outcome)
        for s in outcome.series:
            rows.append(np.column_stack([np.full(len(s.table), value), s.table]))
    table = np.vstack(rows)
    out_dir = output_dir(out)
    safe = param.replace(".", "_")
    atomic_write(out_dir / f"{descriptor_id}-scan-{safe}.csv", csv_text(table, [param]))
    summary = {
        "schema_version": REPORT_SCHEMA,
        "descriptor": descriptor_id,
        "parameter": param,
        "grid": grid.tolist(),
        "seed": int(seed),
        "data": f"{descriptor_id}-scan-{safe}.csv",
        "points": [{"value": float(v), "metrics": _jsonable(o.metrics),
                    "targets": [t.as_dict() for t in o.targets]} for v, o in zip(grid, outcomes)],
    }
    atomic_write(out_dir / f"{descriptor_id}-scan-{safe}.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return table, outcomes


def validate(config_path, descriptor_id: str | None = None) -> RunConfig:
    doc = configfile.load(config_path)
    if descriptor_id is None:
        exp = doc.data.get("experiment") if isinstance(doc.data, dict) else None
        if isinstance(exp, dict) and "id" in exp:
            raise doc.error("the experiment id is given on the command line, not in the file", "experiment", "id")
    return parse_config(doc, descriptor_id)
