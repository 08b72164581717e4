"""Axial center-of-mass mode: Fock distributions, sideband couplings,
heating and transport.

Angular frequencies are in rad/s, times in s, lengths in m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, linalg, sparse
from scipy.constants import hbar
from scipy.sparse.linalg import expm_multiply
from scipy.special import eval_genlaguerre, gammaln

from .errors import DomainError

TAIL_TOL = 1e-6
N_MIN = 20


@dataclass(frozen=True)
class HarmonicMode:
    omega: float
    mass: float
    axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not self.omega > 0:
            raise DomainError("trap frequency must be positive")
        ax = np.asarray(self.axis, dtype=float)
        norm = np.linalg.norm(ax)
        if norm == 0:
            raise DomainError("mode axis must be non-zero")
        object.__setattr__(self, "axis", tuple(ax / norm))

    @property
    def ground_state_size(self) -> float:
        """Zero-point extent sqrt(hbar / 2 M omega), m."""
        return math.sqrt(hbar / (2 * self.mass * self.omega))


@dataclass(frozen=True)
class BeamGeometry:
    """Wave vectors of the two fields driving a (Raman) transition.

    For single-beam drives set ``k_minus`` to zero.
    """

    k_plus: tuple
    k_minus: tuple = (0.0, 0.0, 0.0)
    polarizations: tuple = ("", "")

    @classmethod
    def from_angles(cls, wavelength, theta_plus, theta_minus=None, wavelength_minus=None):
        """Beams in the x-z plane at angles (rad) from the mode axis z."""
        k = 2 * math.pi / wavelength
        kp = (k * math.sin(theta_plus), 0.0, k * math.cos(theta_plus))
        if theta_minus is None:
            return cls(kp)
        km_mag = 2 * math.pi / (wavelength_minus or wavelength)
        km = (km_mag * math.sin(theta_minus), 0.0, km_mag * math.cos(theta_minus))
        return cls(kp, km)

    @classmethod
    def right_angle_pair(cls, wavelength):
        """Two beams enclosing 90 degrees, difference vector along the axis."""
        return cls.from_angles(wavelength, math.pi / 4, -math.pi / 4 + math.pi)

    @classmethod
    def copropagating(cls, wavelength, theta=math.pi / 4):
        return cls.from_angles(wavelength, theta, theta)


def lamb_dicke(geom: BeamGeometry, mode: HarmonicMode) -> float:
    """eta = (k+ - k-) . e_z sqrt(hbar / 2 M omega)."""
    dk = np.subtract(geom.k_plus, geom.k_minus)
    return float(abs(np.dot(dk, mode.axis)) * mode.ground_state_size)


# ---------------------------------------------------------------------------
# Fock-space couplings


def sideband_rabi(n, order: int, eta: float, omega0: float = 1.0):
    """Rabi frequency of |n> -> |n+order> in units of ``omega0``.

    Exact Debye-Waller/Laguerre expression
    ``exp(-eta^2/2) eta^|s| sqrt(n<!/n>!) L_{n<}^{|s|}(eta^2)``.  The sign of
    the Laguerre polynomial is kept; take ``abs`` for flopping frequencies.
    """
    n = np.asarray(n)
    if np.any(n < 0) or np.any(n + order < 0):
        raise DomainError(f"Fock index out of range: n={n}, order={order}")
    s = abs(order)
    n_lo = n if order >= 0 else n + order
    if eta == 0.0:
        out = np.where(order == 0, 1.0, 0.0) * np.ones_like(n, dtype=float)
    else:
        log_ratio = 0.5 * (gammaln(n_lo + 1) - gammaln(n_lo + s + 1))
        out = math.exp(-eta * eta / 2) * eta ** s * np.exp(log_ratio) * eval_genlaguerre(n_lo, s, eta * eta)
    out = omega0 * out
    return float(out) if np.ndim(out) == 0 else out


def displacement_element(n: int, m: int, eta: float, dim: int | None = None) -> complex:
    """``<m| exp(i eta (a + a^dag)) |n>`` by matrix exponential on a truncated space.

    Reference path for :func:`sideband_rabi`; the truncation is pushed well
    past both indices.
    """
    dim = dim or max(n, m) + 60
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    x = a + a.T
    U = linalg.expm(1j * eta * x)
    return complex(U[m, n])


# ---------------------------------------------------------------------------
# motional states


@dataclass
class MotionalState:
    populations: np.ndarray
    kind: str = "general"
    nbar: float | None = None

    def __post_init__(self):
        p = np.asarray(self.populations, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise DomainError("populations must be a non-empty 1-D array")
        if np.any(p < -1e-15):
            raise DomainError("populations must be non-negative")
        p = np.clip(p, 0.0, None)
        total = p.sum()
        if abs(total - 1) > 1e-6:
            raise DomainError(f"populations sum to {total}, expected 1")
        self.populations = p / total

    @property
    def mean_n(self) -> float:
        return float(np.dot(np.arange(len(self.populations)), self.populations))

    @property
    def n_max(self) -> int:
        return len(self.populations) - 1

    @classmethod
    def thermal(cls, nbar: float, n_max: int | None = None) -> "MotionalState":
        if nbar < 0:
            raise DomainError("nbar must be non-negative")
        n_max = n_max if n_max is not None else thermal_cutoff(nbar)
        n = np.arange(n_max + 1)
        p = thermal_distribution(nbar, n)
        return cls(p / p.sum(), "thermal", nbar)

    @classmethod
    def number(cls, n: int, n_max: int | None = None) -> "MotionalState":
        n_max = max(n_max or 0, n, N_MIN)
        p = np.zeros(n_max + 1)
        p[n] = 1.0
        return cls(p, "number")

    def padded(self, n_max: int) -> np.ndarray:
        out = np.zeros(max(n_max, self.n_max) + 1)
        out[: self.n_max + 1] = self.populations
        return out


def thermal_distribution(nbar, n):
    n = np.asarray(n)
    if nbar == 0:
        return (n == 0).astype(float)
    r = nbar / (nbar + 1)
    return np.exp(n * math.log(r)) / (nbar + 1)


def thermal_cutoff(nbar: float, tail: float = TAIL_TOL) -> int:
    """Smallest n_max with thermal tail mass below ``tail`` (floor N_MIN)."""
    if nbar <= 0:
        return N_MIN
    r = nbar / (nbar + 1)
    # tail beyond n_max is r^(n_max+1)
    n_max = math.ceil(math.log(tail) / math.log(r)) - 1
    return max(N_MIN, n_max)


def thermal_flop(t, nbar: float, eta: float, omega0: float, order: int = 1):
    """Excitation probability after driving sideband ``order`` for time t
    on a thermal state of mean occupation ``nbar``."""
    n = np.arange(thermal_cutoff(nbar) + 1)
    return fock_flop(t, thermal_distribution(nbar, n), eta, omega0, order)


def fock_flop(t, populations, eta: float, omega0: float, order: int = 1):
    """Excitation probability for an arbitrary Fock distribution."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    p = np.asarray(populations, dtype=float)
    n = np.arange(len(p))
    valid = n + order >= 0
    rabi = np.zeros(len(p))
    rabi[valid] = np.abs(sideband_rabi(n[valid], order, eta, omega0))
    out = np.sin(np.multiply.outer(t, rabi) / 2) ** 2 @ p
    return float(out) if out.ndim == 0 else out


def thermal_carrier_rabi(nbar: float, eta: float, omega0: float = 1.0) -> float:
    """Population-weighted carrier Rabi frequency on a thermal state."""
    n = np.arange(thermal_cutoff(nbar) + 1)
    p = thermal_distribution(nbar, n)
    return float(np.dot(p, np.abs(sideband_rabi(n, 0, eta, omega0))) / p.sum())


# ---------------------------------------------------------------------------
# heating


def _heating_generator(dim: int, rate: float):
    """Rate matrix for coupling to an infinite-temperature bath.

    Up and down rates are ``rate*(n+1)`` and ``rate*n``, so d<n>/dt = rate
    exactly.  The top level has no upward channel, which keeps the truncated
    generator probability conserving.
    """
    n = np.arange(dim, dtype=float)
    up = rate * (n + 1)
    up[-1] = 0.0
    down = rate * n
    diag = -(up + down)
    G = sparse.diags([diag, up[:-1], down[1:]], [0, -1, 1], format="csc")
    return G


def apply_heating(state: MotionalState, duration: float, rate: float) -> MotionalState:
    """Evolve a Fock distribution for ``duration`` at ``rate`` quanta/s."""
    if rate < 0 or duration < 0:
        raise DomainError("heating rate and duration must be non-negative")
    if duration == 0 or rate == 0:
        return MotionalState(state.populations.copy(), state.kind, state.nbar)
    gained = rate * duration
    n_max = max(state.n_max, int(state.mean_n + 30 * (gained + 1) + 20))
    p = state.padded(n_max)
    p = expm_multiply(_heating_generator(len(p), rate) * duration, p)
    p = np.clip(p, 0.0, None)
    return MotionalState(p / p.sum(), "general")


def motional_ramsey_coherence(tau, rate: float, dim: int = 40) -> float:
    """Coherence 2|rho_01| of (|0> + |1>)/sqrt2 after heating for ``tau``.

    Full Lindblad evolution with jump operators sqrt(rate) a and
    sqrt(rate) a^dag on a truncated Fock space.
    """
    if tau < 0 or rate < 0:
        raise DomainError("tau and rate must be non-negative")
    if tau == 0 or rate == 0:
        return 1.0
    dim = max(dim, int(rate * tau * 20) + 20)
    psi = np.zeros(dim, dtype=complex)
    psi[:2] = 1 / math.sqrt(2)
    rho = np.outer(psi, psi.conj())
    L = _heating_liouvillian(dim, rate)
    out = expm_multiply(L * tau, rho.reshape(-1)).reshape(dim, dim)
    return float(2 * abs(out[0, 1]))


def _heating_liouvillian(dim: int, rate: float):
    a = sparse.diags(np.sqrt(np.arange(1, dim)), 1, format="csr")
    ad = a.T.tocsr()
    # the last level gets no raising so the truncation stays trace preserving
    ad = ad.tolil()
    ad[dim - 1, dim - 2] = 0.0
    ad = ad.tocsr()
    eye = sparse.identity(dim, format="csr")
    out = sparse.csr_matrix((dim * dim, dim * dim), dtype=complex)
    for op in (a, ad):
        op = math.sqrt(rate) * op
        opd = op.conj().T
        ndn = (opd @ op)
        # row-major vec: vec(A X B) = (A kron B^T) vec(X)
        out = out + sparse.kron(op, op.conj()) - 0.5 * sparse.kron(ndn, eye) - 0.5 * sparse.kron(eye, ndn.T)
    return out.tocsc()


# ---------------------------------------------------------------------------
# transport


@dataclass(frozen=True)
class TransportRamp:
    displacement: float
    duration: float
    filter_cutoff: float = 125e3
    profile: str = "smoothstep"

    def __post_init__(self):
        if self.duration < 0:
            raise DomainError("ramp duration must be non-negative")
        if not math.isfinite(self.displacement):
            raise DomainError("displacement must be finite")
        if self.profile not in ("smoothstep", "linear", "sudden"):
            raise DomainError(f"unknown ramp profile {self.profile!r}")
        if self.profile != "sudden" and self.duration == 0:
            object.__setattr__(self, "profile", "sudden")

    def velocity(self, t):
        """Commanded electrode-center velocity before the filter, m/s."""
        t = np.asarray(t, dtype=float)
        if self.profile == "sudden":
            raise DomainError("sudden ramp has no finite velocity")
        x = t / self.duration
        inside = (x >= 0) & (x <= 1)
        if self.profile == "linear":
            v = np.ones_like(x)
        else:
            v = 6 * x * (1 - x)
        return np.where(inside, v * self.displacement / self.duration, 0.0)


def _filtered_velocity_spectrum(ramp: TransportRamp, omega: float, steps_per_period: int = 64) -> complex:
    """Fourier component at ``omega`` of the low-pass filtered velocity.

    The single-pole filter multiplies every spectral component by
    ``wc / (wc + i omega)``; the unfiltered component is integrated with
    composite Simpson on a grid resolving both the ramp and the trap period.
    """
    wc = 2 * math.pi * ramp.filter_cutoff
    H = wc / (wc + 1j * omega) if math.isfinite(wc) else 1.0
    if ramp.profile == "sudden":
        return ramp.displacement * H
    period = 2 * math.pi / omega
    n = max(2048, int(steps_per_period * ramp.duration / period))
    n += n % 2
    t = np.linspace(0.0, ramp.duration, n + 1)
    f = ramp.velocity(t) * np.exp(-1j * omega * t)
    return integrate.simpson(f, x=t) * H


def transport_excitation(ramp: TransportRamp, mode: HarmonicMode) -> float:
    """Mean number of coherent quanta |alpha|^2 left after the move."""
    if ramp.displacement == 0:
        return 0.0
    spec = _filtered_velocity_spectrum(ramp, mode.omega)
    return float(abs(spec) ** 2 / (4 * mode.ground_state_size ** 2))
