"""Static level structure of 43Ca+.

Energies and frequencies are in Hz (not angular), magnetic fields in gauss.
The S1/2 manifold uses the closed-form Breit-Rabi solution; every other term
gets a hyperfine A/B offset plus the linear Zeeman shift ``g_F m_F muB B``.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import NamedTuple

import numpy as np
from scipy.constants import atomic_mass, physical_constants

from . import configfile
from .errors import ConfigError, DomainError, StructureError
from .wigner import clebsch_gordan, wigner_3j, wigner_6j

#: Bohr magneton over Planck's constant, Hz per gauss.
MU_B_HZ_PER_G = physical_constants["Bohr magneton in Hz/T"][0] * 1e-4

NUCLEAR_SPIN = 3.5
B_MAX_GAUSS = 10.0


class Term(enum.Enum):
    S1_2 = "S1/2"
    P1_2 = "P1/2"
    P3_2 = "P3/2"
    D3_2 = "D3/2"
    D5_2 = "D5/2"

    @property
    def J(self) -> float:
        return float(self.value[1:].split("/")[0]) / 2

    @classmethod
    def parse(cls, label) -> "Term":
        if isinstance(label, cls):
            return label
        try:
            return cls(label)
        except ValueError:
            raise StructureError(f"unknown term {label!r}") from None


def f_range(J: float, I: float = NUCLEAR_SPIN) -> range:
    return range(int(round(abs(I - J))), int(round(I + J)) + 1)


@dataclass(frozen=True, order=True)
class QuantumLevel:
    term: Term
    F: int
    mF: int

    def __post_init__(self):
        term = Term.parse(self.term)
        object.__setattr__(self, "term", term)
        if self.F not in f_range(term.J):
            raise StructureError(f"F={self.F} not allowed in {term.value}")
        if abs(self.mF) > self.F:
            raise StructureError(f"|mF|={abs(self.mF)} exceeds F={self.F}")

    def __str__(self):
        return f"{self.term.value}(F={self.F},mF={self.mF:+d})"


def level(term, F, mF) -> QuantumLevel:
    """Shorthand constructor accepting a term label string."""
    return QuantumLevel(Term.parse(term), int(F), int(mF))


def enumerate_levels(terms=tuple(Term)) -> list[QuantumLevel]:
    """All Zeeman sublevels of the given terms."""
    out = []
    for term in terms:
        term = Term.parse(term)
        for F in f_range(term.J):
            out.extend(QuantumLevel(term, F, m) for m in range(-F, F + 1))
    return out


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class TermConstants:
    J: float
    g_J: float
    A_hz: float
    B_hz: float
    lifetime_s: float

    @property
    def linewidth_hz(self) -> float:
        """Natural linewidth Gamma/2pi."""
        return 1.0 / (2 * math.pi * self.lifetime_s)


@dataclass(frozen=True)
class AtomicConstants:
    nuclear_spin: float
    mass: float
    g_I: float
    terms: MappingProxyType
    wavelengths: MappingProxyType
    source_hash: str = ""

    def __reduce__(self):
        # mapping proxies do not pickle; worker processes need a copy
        return _rebuild_constants, (self.nuclear_spin, self.mass, self.g_I, dict(self.terms),
                                    dict(self.wavelengths), self.source_hash)

    def term(self, term) -> TermConstants:
        t = Term.parse(term)
        try:
            return self.terms[t]
        except KeyError:
            raise StructureError(f"term {t.value} missing from constants") from None

    @property
    def ground_hfs_splitting(self) -> float:
        """Zero-field S1/2 F=3 to F=4 splitting, Hz (positive)."""
        return abs(self.term(Term.S1_2).A_hz) * (self.nuclear_spin + 0.5)

    @property
    def d52_lifetime(self) -> float:
        return self.term(Term.D5_2).lifetime_s

    @property
    def p_level_linewidths(self) -> dict:
        return {t.value: self.term(t).linewidth_hz for t in (Term.P1_2, Term.P3_2)}

    def wavelength(self, transition: str) -> float:
        try:
            return self.wavelengths[transition]
        except KeyError:
            raise StructureError(f"no wavelength for {transition!r}") from None


def _rebuild_constants(nuclear_spin, mass, g_I, terms, wavelengths, source_hash):
    return AtomicConstants(nuclear_spin, mass, g_I, MappingProxyType(terms), MappingProxyType(wavelengths),
                           source_hash)


_TERM_KEYS = {
    "J": True,           # must be positive
    "g_J": False,
    "A_hz": False,
    "B_hz": False,
    "lifetime_s": True,
}


def _number(doc, value, *keys, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise doc.error(f"'{'.'.join(map(str, keys))}' must be a number, got {value!r}", *keys)
    if math.isnan(value):
        raise doc.error(f"'{'.'.join(map(str, keys))}' is NaN", *keys)
    if positive and not value > 0:
        raise doc.error(f"'{'.'.join(map(str, keys))}' must be positive, got {value!r}", *keys)
    return float(value)


def constants_from_document(doc: configfile.Document, overrides: dict | None = None) -> AtomicConstants:
    """Validate a parsed constants document and build :class:`AtomicConstants`."""
    data = doc.data
    for key in ("nuclear_spin", "ion_mass_u", "g_I", "terms"):
        if key not in data:
            raise doc.error(f"missing required entry '{key}'")
    spin = _number(doc, data["nuclear_spin"], "nuclear_spin", positive=True)
    if spin != NUCLEAR_SPIN:
        raise doc.error(f"nuclear_spin must be {NUCLEAR_SPIN} for 43Ca+", "nuclear_spin")
    mass_u = _number(doc, data["ion_mass_u"], "ion_mass_u", positive=True)
    g_I = _number(doc, data["g_I"], "g_I")
    terms_raw = data["terms"]
    if not isinstance(terms_raw, dict):
        raise doc.error("'terms' must be a mapping", "terms")
    terms = {}
    for label, entry in terms_raw.items():
        try:
            t = Term(label)
        except ValueError:
            raise doc.error(f"unknown term '{label}'", "terms", label) from None
        if not isinstance(entry, dict):
            raise doc.error(f"term '{label}' must be a mapping", "terms", label)
        values = {}
        for key, positive in _TERM_KEYS.items():
            if key not in entry:
                raise doc.error(f"term '{label}' is missing '{key}'", "terms", label)
            values[key] = _number(doc, entry[key], "terms", label, key, positive=positive)
        unknown = set(entry) - set(_TERM_KEYS)
        if unknown:
            key = sorted(unknown)[0]
            raise doc.error(f"unknown key '{key}' in term '{label}'", "terms", label, key)
        if values["J"] != t.J:
            raise doc.error(f"J of {label} must be {t.J}", "terms", label, "J")
        terms[t] = TermConstants(**values)
    missing = [t.value for t in Term if t not in terms]
    if missing:
        raise doc.error(f"terms missing: {', '.join(missing)}", "terms")
    wavelengths = {}
    for name, value in (data.get("wavelengths_m") or {}).items():
        wavelengths[name] = _number(doc, value, "wavelengths_m", name, positive=True)
    if overrides:
        terms, g_I, mass_u = _apply_overrides(terms, g_I, mass_u, overrides)
    consts = AtomicConstants(
        nuclear_spin=spin,
        mass=mass_u * atomic_mass,
        g_I=g_I,
        terms=MappingProxyType(terms),
        wavelengths=MappingProxyType(wavelengths),
        source_hash=doc.data.get("_hash", ""),
    )
    split = consts.ground_hfs_splitting
    if abs(split - 3.2e9) > 0.01 * 3.2e9:
        raise doc.error(f"ground hyperfine splitting {split:.6g} Hz is not within 1% of 3.2 GHz",
                        "terms", "S1/2", "A_hz")
    return consts


def _apply_overrides(terms, g_I, mass_u, overrides):
    terms = dict(terms)
    for key, value in overrides.items():
        if key == "g_I":
            g_I = float(value)
        elif key == "ion_mass_u":
            if value <= 0:
                raise ConfigError("ion_mass_u override must be positive")
            mass_u = float(value)
        elif "." in key:
            label, field = key.split(".", 1)
            t = Term.parse(label)
            if field not in _TERM_KEYS:
                raise ConfigError(f"unknown constants override '{key}'")
            if _TERM_KEYS[field] and not value > 0:
                raise ConfigError(f"constants override '{key}' must be positive")
            old = terms[t]
            terms[t] = TermConstants(**{**old.__dict__, field: float(value)})
        else:
            raise ConfigError(f"unknown constants override '{key}'")
    return terms, g_I, mass_u


def load_constants(path=None, overrides: dict | None = None) -> AtomicConstants:
    """Load and validate a constants file; the packaged file by default."""
    if path is None:
        text = resources.files("ca43sim").joinpath("data/constants.yaml").read_text()
        name = "constants.yaml"
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read constants file: {exc.strerror}", path=str(path)) from None
        name = str(path)
    doc = configfile.loads(text, name)
    doc.data["_hash"] = hashlib.sha256(text.encode()).hexdigest()
    return constants_from_document(doc, overrides)


@lru_cache(maxsize=1)
def default_constants() -> AtomicConstants:
    return load_constants()


def _consts(constants):
    return default_constants() if constants is None else constants


# ---------------------------------------------------------------------------
# g-factors and Zeeman shifts


def lande_g_F(F, J, I, g_J, g_I) -> float:
    FF, JJ, II = F * (F + 1), J * (J + 1), I * (I + 1)
    return g_J * (FF - II + JJ) / (2 * FF) + g_I * (FF + II - JJ) / (2 * FF)


def g_factor(lvl: QuantumLevel, constants: AtomicConstants | None = None) -> float:
    """Hyperfine Landé factor g_F of ``lvl`` including the nuclear term."""
    c = _consts(constants)
    tc = c.term(lvl.term)
    if lvl.F == 0:
        return 0.0
    return lande_g_F(lvl.F, tc.J, c.nuclear_spin, tc.g_J, c.g_I)


def _check_field(B):
    if not np.all(np.isfinite(B)) or np.any(np.asarray(B) < 0) or np.any(np.asarray(B) > B_MAX_GAUSS):
        raise DomainError(f"field {B!r} G outside validity window [0, {B_MAX_GAUSS}] G")


def breit_rabi(F: int, mF: int, B, constants: AtomicConstants | None = None):
    """S1/2 energy relative to the hyperfine centroid, Hz.

    Works on scalar or array ``B``.  The stretched states are handled
    separately because the square root in the closed form loses the sign of
    ``1 - x`` there.
    """
    c = _consts(constants)
    s = c.term(Term.S1_2)
    I = c.nuclear_spin
    if F not in (I - 0.5, I + 0.5) or abs(mF) > F:
        raise StructureError(f"no S1/2 level F={F}, mF={mF}")
    B = np.asarray(B, dtype=float)
    dE = s.A_hz * (I + 0.5)
    if abs(mF) == I + 0.5:
        sign = 1 if mF > 0 else -1
        out = s.A_hz * I / 2 + sign * MU_B_HZ_PER_G * B * (s.g_J / 2 + c.g_I * I)
        return out if out.ndim else float(out)
    x = (s.g_J - c.g_I) * MU_B_HZ_PER_G * B / dE
    branch = 1 if F == I + 0.5 else -1
    out = -dE / (2 * (2 * I + 1)) + c.g_I * MU_B_HZ_PER_G * mF * B \
        + branch * dE / 2 * np.sqrt(1 + 4 * mF * x / (2 * I + 1) + x * x)
    return out if out.ndim else float(out)


def zeeman_frequency(lvl: QuantumLevel, B, constants: AtomicConstants | None = None):
    """Field-induced offset of ``lvl`` from its zero-field hyperfine level, Hz.

    Exact Breit-Rabi for S1/2, first-order ``g_F mF muB B`` otherwise.
    """
    _check_field(B)
    c = _consts(constants)
    if lvl.term is Term.S1_2:
        return breit_rabi(lvl.F, lvl.mF, B, c) - breit_rabi(lvl.F, lvl.mF, 0.0, c)
    out = g_factor(lvl, c) * lvl.mF * MU_B_HZ_PER_G * np.asarray(B, dtype=float)
    return float(out) if out.ndim == 0 else out


class ClockSensitivity(NamedTuple):
    shift: float   # Hz, relative to the zero-field splitting
    slope: float   # Hz/G


def clock_frequency(B, constants: AtomicConstants | None = None):
    """|down> = (F=4,0) to |up> = (F=3,0) transition frequency, Hz."""
    c = _consts(constants)
    I = c.nuclear_spin
    return breit_rabi(I - 0.5, 0, B, c) - breit_rabi(I + 0.5, 0, B, c)


def clock_sensitivity(B, constants: AtomicConstants | None = None) -> ClockSensitivity:
    """Second-order Zeeman shift of the clock transition and its field slope."""
    _check_field(B)
    c = _consts(constants)
    s = c.term(Term.S1_2)
    dE = c.ground_hfs_splitting
    k = (s.g_J - c.g_I) * MU_B_HZ_PER_G / dE
    x = k * np.asarray(B, dtype=float)
    root = np.sqrt(1 + x * x)
    # written as x^2/(1+root) to avoid cancellation at small fields
    shift = dE * x * x / (1 + root)
    slope = dE * k * x / root
    if np.ndim(shift) == 0:
        return ClockSensitivity(float(shift), float(slope))
    return ClockSensitivity(shift, slope)


def hyperfine_offset(term, F: int, constants: AtomicConstants | None = None) -> float:
    """Zero-field hyperfine shift of level F from the term centroid, Hz."""
    c = _consts(constants)
    t = Term.parse(term)
    tc = c.term(t)
    I, J = c.nuclear_spin, tc.J
    K = F * (F + 1) - I * (I + 1) - J * (J + 1)
    out = tc.A_hz * K / 2
    if I > 0.5 and J > 0.5:
        out += tc.B_hz * (1.5 * K * (K + 1) - 2 * I * (I + 1) * J * (J + 1)) / (
            4 * I * (2 * I - 1) * J * (2 * J - 1))
    return out


def level_energy(lvl: QuantumLevel, B, constants: AtomicConstants | None = None) -> float:
    """Energy of ``lvl`` relative to its term centroid at field B, Hz."""
    _check_field(B)
    c = _consts(constants)
    if lvl.term is Term.S1_2:
        return breit_rabi(lvl.F, lvl.mF, B, c)
    return hyperfine_offset(lvl.term, lvl.F, c) + g_factor(lvl, c) * lvl.mF * MU_B_HZ_PER_G * B


# ---------------------------------------------------------------------------
# transitions


class Multipole(enum.Enum):
    E1 = 1
    M1 = 1.5
    E2 = 2

    @property
    def rank(self) -> int:
        return 2 if self is Multipole.E2 else 1


@dataclass(frozen=True)
class TransitionSpec:
    lower: QuantumLevel
    upper: QuantumLevel
    multipole: Multipole = Multipole.E2

    def __post_init__(self):
        if abs(self.delta_m) > self.multipole.rank:
            raise StructureError(
                f"{self.multipole.name} forbids delta_m={self.delta_m} ({self.lower} -> {self.upper})")

    @property
    def delta_m(self) -> int:
        return self.upper.mF - self.lower.mF


@dataclass(frozen=True)
class QuadrupoleGeometry:
    """Laser direction and linear polarization relative to the field axis.

    ``angle_k`` is the angle between wave vector and magnetic field,
    ``angle_pol`` the angle between polarization and the plane spanned by
    field and wave vector.
    """

    angle_k: float = math.pi / 4
    angle_pol: float = 0.0

    def weights(self) -> dict:
        """|coupling|^2 of each delta_m component, normalized to the largest."""
        k = np.array([math.sin(self.angle_k), 0.0, math.cos(self.angle_k)])
        in_plane = np.array([math.cos(self.angle_k), 0.0, -math.sin(self.angle_k)])
        perp = np.array([0.0, 1.0, 0.0])
        eps = math.cos(self.angle_pol) * in_plane + math.sin(self.angle_pol) * perp
        comp = {q: abs(_rank2_component(eps, k, q)) ** 2 for q in range(-2, 3)}
        top = max(comp.values())
        return {q: v / top for q, v in comp.items()}


def _spherical(v):
    x, y, z = v
    return {1: -(x + 1j * y) / math.sqrt(2), 0: z + 0j, -1: (x - 1j * y) / math.sqrt(2)}


def _rank2_component(eps, k, q):
    e, kk = _spherical(eps), _spherical(k)
    return sum(clebsch_gordan(1, mu, 1, q - mu, 2, q) * e[mu] * kk[q - mu]
               for mu in (-1, 0, 1) if abs(q - mu) <= 1)


class TransitionLine(NamedTuple):
    spec: TransitionSpec
    frequency: float          # Hz, relative to the centroid-to-centroid line
    relative_strength: float  # |coupling|^2, stretched line = 1


def multipole_amplitude(lower: QuantumLevel, upper: QuantumLevel, rank: int,
                        constants: AtomicConstants | None = None) -> float:
    """Angular part of ``<upper| T^rank_q |lower>`` for hyperfine levels.

    Wigner-Eckart theorem followed by decoupling of the nuclear spin; the
    electronic reduced matrix element is dropped (common to all lines).
    """
    c = _consts(constants)
    I = c.nuclear_spin
    J, Jp = lower.term.J, upper.term.J
    F, Fp, m, mp = lower.F, upper.F, lower.mF, upper.mF
    q = mp - m
    three_j = wigner_3j(Fp, rank, F, -mp, q, m)
    if three_j == 0.0:
        return 0.0
    six_j = wigner_6j(Jp, Fp, I, F, J, rank)
    phase = (-1) ** int(round(Fp - mp + Jp + I + F + rank))
    return phase * three_j * math.sqrt((2 * F + 1) * (2 * Fp + 1)) * six_j


_PAIRS = {("S1/2", "D5/2"): Multipole.E2, ("S1/2", "D3/2"): Multipole.E2}


def transition_table(pair=("S1/2", "D5/2"), B: float = 0.0, geometry: QuadrupoleGeometry | None = None,
                     lower_F: int | None = 4, constants: AtomicConstants | None = None,
                     include_forbidden: bool = False) -> list[TransitionLine]:
    """Zeeman-resolved lines between two terms with relative strengths.

    Without ``geometry`` all delta_m components are weighted equally, which
    is the orientation average.  Strengths are normalized to the stretched
    line (F=4,mF=4) -> (F=Fmax,mF=Fmax).  Absolute frequencies depend on the
    configured upper-term A/B constants; Zeeman spacings and strengths do
    not.
    """
    _check_field(B)
    c = _consts(constants)
    key = tuple(Term.parse(p).value for p in pair)
    if key not in _PAIRS:
        raise StructureError(f"unsupported manifold pair {key}")
    multipole = _PAIRS[key]
    lo_term, up_term = (Term.parse(p) for p in key)
    rank = multipole.rank
    weights = geometry.weights() if geometry is not None else {q: 1.0 for q in range(-rank, rank + 1)}
    lower_Fs = [lower_F] if lower_F is not None else list(f_range(lo_term.J))
    up_F_max = max(f_range(up_term.J))
    stretched = multipole_amplitude(level(lo_term, max(f_range(lo_term.J)), max(f_range(lo_term.J))),
                                    level(up_term, up_F_max, up_F_max), rank, c) ** 2 * weights[rank]
    if stretched == 0.0:
        raise StructureError("geometry suppresses the stretched reference line")
    lines = []
    for F in lower_Fs:
        for m in range(-F, F + 1):
            lo = QuantumLevel(lo_term, F, m)
            e_lo = level_energy(lo, B, c)
            for Fp in f_range(up_term.J):
                for mp in range(-Fp, Fp + 1):
                    if abs(mp - m) > rank:
                        continue
                    up = QuantumLevel(up_term, Fp, mp)
                    amp = multipole_amplitude(lo, up, rank, c)
                    strength = amp * amp * weights[mp - m] / stretched
                    if strength == 0.0 and not include_forbidden:
                        continue
                    freq = level_energy(up, B, c) - e_lo
                    lines.append(TransitionLine(TransitionSpec(lo, up, multipole), freq, strength))
    return lines


def find_line(table, lower: QuantumLevel, upper: QuantumLevel) -> TransitionLine:
    for line in table:
        if line.spec.lower == lower and line.spec.upper == upper:
            return line
    raise StructureError(f"{lower} -> {upper} is not an allowed line")


class NeighborSpacing(NamedTuple):
    d_spacing: float   # Hz, adjacent mF in D5/2(F=4)
    s_spacing: float   # Hz, adjacent mF in S1/2(F=4)
    ratio: float


def dstate_neighbor_spacing(B, constants: AtomicConstants | None = None) -> NeighborSpacing:
    """Adjacent-mF spacings of D5/2(F=4) and S1/2(F=4) and their ratio.

    The ratio is the g-factor ratio, which is also its B -> 0 limit.
    """
    _check_field(B)
    c = _consts(constants)
    d = abs(zeeman_frequency(level("D5/2", 4, 1), B, c) - zeeman_frequency(level("D5/2", 4, 0), B, c))
    s = abs(zeeman_frequency(level("S1/2", 4, 1), B, c) - zeeman_frequency(level("S1/2", 4, 0), B, c))
    ratio = abs(g_factor(level("D5/2", 4, 0), c) / g_factor(level("S1/2", 4, 0), c))
    return NeighborSpacing(float(d), float(s), ratio)


def m1_amplitude(lower: QuantumLevel, upper: QuantumLevel, constants: AtomicConstants | None = None) -> float:
    """Relative magnetic-dipole coupling inside S1/2 via the electron spin.

    Returns ``|<upper| S_q |lower>|`` built from explicit decoupled-basis
    expansion, q = delta_m.  Used for microwave and Raman hyperfine steps.
    """
    c = _consts(constants)
    if lower.term is not Term.S1_2 or upper.term is not Term.S1_2:
        raise StructureError("M1 couplings are only tabulated inside S1/2")
    q = upper.mF - lower.mF
    if abs(q) > 1:
        raise StructureError(f"M1 forbids delta_m={q}")
    I = c.nuclear_spin
    total = 0.0
    for ms in (-0.5, 0.5):
        mi = lower.mF - ms
        if abs(mi) > I:
            continue
        a = clebsch_gordan(0.5, ms, I, mi, lower.F, lower.mF)
        ms2 = ms + q
        if abs(ms2) > 0.5:
            continue
        b = clebsch_gordan(0.5, ms2, I, mi, upper.F, upper.mF)
        if q == 0:
            s_elem = ms
        else:
            # spherical S_{+1} = -S_+/sqrt2, S_{-1} = S_-/sqrt2 on spin-1/2
            s_elem = (-1 if q == 1 else 1) / math.sqrt(2)
        total += a * b * s_elem
    return abs(total)
