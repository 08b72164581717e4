"""Weighted nonlinear least squares for the fringe, decay and flop models.

A small Levenberg-Marquardt loop is used instead of a library call so the
damping schedule and stopping rules are fixed and reproducible:

* initial damping ``1e-3 * max(diag(J^T W J))``, added to the diagonal;
* damping x10 after a rejected step and /3 after an accepted one;
* stop when the relative chi^2 change drops below 1e-10 or the step norm
  below 1e-12 (relative to the parameter norm), at most 500 iterations;
* up to 5 undamped Gauss-Newton steps polish the result;
* covariance is the inverse normal matrix at the optimum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import signal

from . import motion
from .errors import DegenerateFitError, DomainError

MAX_ITER = 500
REL_CHI2_TOL = 1e-10
STEP_TOL = 1e-12
POLISH_STEPS = 5


@dataclass(frozen=True)
class Model:
    """A fit function ``f(x, params)`` with named parameters.

    ``jac`` returns the (n_points, n_params) derivative matrix; when absent a
    central-difference Jacobian is used.  ``angles`` lists parameters that
    are wrapped to (-pi, pi] after the fit.
    """

    family: str
    names: tuple
    func: Callable
    jac: Callable | None = None
    angles: tuple = ()
    fixed: dict = field(default_factory=dict)

    def __call__(self, x, params):
        return self.func(np.asarray(x, dtype=float), np.asarray(params, dtype=float))

    def jacobian(self, x, params):
        x = np.asarray(x, dtype=float)
        params = np.asarray(params, dtype=float)
        if self.jac is not None:
            return self.jac(x, params)
        cols = []
        for i, p in enumerate(params):
            h = 1e-6 * max(abs(p), 1e-6)
            up, dn = params.copy(), params.copy()
            up[i] += h
            dn[i] -= h
            cols.append((self.func(x, up) - self.func(x, dn)) / (2 * h))
        return np.column_stack(cols)


@dataclass
class FitResult:
    model: Model
    params: np.ndarray
    one_sigma: np.ndarray
    covariance: np.ndarray
    chi2: float
    dof: int
    converged: bool
    iterations: int

    @property
    def names(self):
        return self.model.names

    def __getitem__(self, name):
        return float(self.params[self.names.index(name)])

    def error(self, name):
        return float(self.one_sigma[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "family": self.model.family,
            "params": {n: float(v) for n, v in zip(self.names, self.params)},
            "one_sigma": {n: float(v) for n, v in zip(self.names, self.one_sigma)},
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
        }


# ---------------------------------------------------------------------------
# model families


def _sin_time(x, p):
    A, tau, y0 = p
    return A / 2 * np.cos(np.pi * x / tau) + y0


def _sin_time_jac(x, p):
    A, tau, y0 = p
    arg = np.pi * x / tau
    return np.column_stack([np.cos(arg) / 2, A / 2 * np.sin(arg) * np.pi * x / tau ** 2, np.ones_like(x)])


def _sin_time_phase(x, p):
    A, tau, y0, phi = p
    return A / 2 * np.cos(np.pi * x / tau + phi) + y0


def _sin_time_phase_jac(x, p):
    A, tau, y0, phi = p
    arg = np.pi * x / tau + phi
    return np.column_stack([np.cos(arg) / 2, A / 2 * np.sin(arg) * np.pi * x / tau ** 2,
                            np.ones_like(x), -A / 2 * np.sin(arg)])


def _sin_phase(x, p):
    A, phi0, y0 = p
    return A / 2 * np.sin(x + phi0) + y0


def _sin_phase_jac(x, p):
    A, phi0, y0 = p
    return np.column_stack([np.sin(x + phi0) / 2, A / 2 * np.cos(x + phi0), np.ones_like(x)])


def _exp_decay(x, p):
    a, tau, c = p
    return a * np.exp(-x / tau) + c


def _exp_decay_jac(x, p):
    a, tau, c = p
    e = np.exp(-x / tau)
    return np.column_stack([e, a * e * x / tau ** 2, np.ones_like(x)])


SIN_TIME = Model("sin_time", ("A", "tau_pi", "y0"), _sin_time, _sin_time_jac)
SIN_TIME_PHASE = Model("sin_time_phase", ("A", "tau_pi", "y0", "phi"), _sin_time_phase, _sin_time_phase_jac,
                       angles=("phi",))
SIN_PHASE = Model("sin_phase", ("A", "phi0", "y0"), _sin_phase, _sin_phase_jac, angles=("phi0",))
EXP_DECAY = Model("exp_decay", ("a", "tau", "c"), _exp_decay, _exp_decay_jac)


def thermal_flop_model(eta: float, order: int = 1, contrast: float = 1.0, offset: float = 0.0) -> Model:
    """Sideband flop on a thermal state, parameters (nbar, omega0).

    The flop is scaled as ``offset + contrast * P(t)`` to absorb state
    preparation and readout imperfections that are known independently.
    """

    # |nbar| keeps the model smooth through zero; the sign is dropped after the fit
    def f(x, p):
        nbar, omega0 = p
        return offset + contrast * motion.thermal_flop(x, abs(nbar), eta, omega0, order)

    return Model("thermal_flop", ("nbar", "omega0"), f,
                 fixed={"eta": eta, "order": order, "contrast": contrast, "offset": offset})


def coherence_model(form: str) -> Model:
    if form not in ("exponential", "gaussian"):
        raise DomainError(f"unknown envelope form {form!r}")
    power = 1 if form == "exponential" else 2

    def f(x, p):
        return np.exp(-(x / p[0]) ** power)

    def jac(x, p):
        T = p[0]
        return (np.exp(-(x / T) ** power) * power * (x / T) ** power / T)[:, None]

    return Model(form, ("T2",), f, jac)


FAMILIES = {m.family: m for m in (SIN_TIME, SIN_TIME_PHASE, SIN_PHASE, EXP_DECAY)}


def get_model(family: str, **fixed) -> Model:
    if family == "thermal_flop":
        keys = ("eta", "order", "contrast", "offset")
        return thermal_flop_model(**{k: v for k, v in fixed.items() if k in keys})
    if family in ("exponential", "gaussian"):
        return coherence_model(family)
    try:
        return FAMILIES[family]
    except KeyError:
        raise DomainError(f"unknown model family {family!r}") from None


# ---------------------------------------------------------------------------
# the optimizer


def _as_data(data, y=None, sigma=None):
    if y is None:
        arr = np.asarray(data, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise DomainError("data must be an (n, 3) array of x, y, sigma")
        x, y, sigma = arr.T
    else:
        x = data
    x, y, sigma = (np.asarray(v, dtype=float).ravel() for v in (x, y, sigma))
    if not (len(x) == len(y) == len(sigma)):
        raise DomainError("x, y and sigma lengths differ")
    if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
        raise DomainError("all sigma must be positive")
    if np.any(~np.isfinite(x)) or np.any(~np.isfinite(y)):
        raise DomainError("data contain non-finite values")
    return x, y, sigma


def _normal(model, x, params, sigma):
    J = model.jacobian(x, params) / sigma[:, None]
    return J, J.T @ J


def _invert(A):
    if not np.all(np.isfinite(A)):
        raise DegenerateFitError("normal matrix is not finite")
    d = np.sqrt(np.diag(A))
    if np.any(d == 0):
        raise DegenerateFitError("a parameter has no influence on the model")
    scaled = A / np.outer(d, d)
    if np.linalg.cond(scaled) > 1e14:
        raise DegenerateFitError("normal matrix is singular")
    return np.linalg.inv(scaled) / np.outer(d, d)


def fit(model: Model, data, init, y=None, sigma=None) -> FitResult:
    """Weighted least-squares fit of ``model`` to ``(x, y, sigma)`` data."""
    x, y, sigma = _as_data(data, y, sigma)
    p = np.asarray(init, dtype=float).copy()
    if p.shape != (len(model.names),):
        raise DomainError(f"{model.family} takes {len(model.names)} parameters, got {p.size}")
    if len(x) < len(p):
        raise DomainError(f"{len(x)} points cannot determine {len(p)} parameters")
    r = (y - model(x, p)) / sigma
    chi2 = float(r @ r)
    J, A = _normal(model, x, p, sigma)
    lam = 1e-3 * float(np.max(np.diag(A))) if np.max(np.diag(A)) > 0 else 1e-3
    converged = chi2 == 0.0
    it = 0
    while not converged and it < MAX_ITER:
        it += 1
        g = J.T @ r
        try:
            step = np.linalg.solve(A + lam * np.eye(len(p)), g)
        except np.linalg.LinAlgError:
            raise DegenerateFitError("damped normal matrix is singular") from None
        trial = p + step
        r_new = (y - model(x, trial)) / sigma
        chi2_new = float(r_new @ r_new)
        if np.isfinite(chi2_new) and chi2_new <= chi2:
            small_step = np.linalg.norm(step) <= STEP_TOL * (np.linalg.norm(p) + STEP_TOL)
            small_change = (chi2 - chi2_new) <= REL_CHI2_TOL * chi2
            p, r, chi2 = trial, r_new, chi2_new
            J, A = _normal(model, x, p, sigma)
            lam /= 3
            converged = small_step or small_change or chi2 == 0.0
        else:
            lam *= 10
            if np.linalg.norm(step) <= STEP_TOL * (np.linalg.norm(p) + STEP_TOL):
                converged = True
    # the chi^2 rule can fire while damping still shortens the steps; finish
    # with undamped Gauss-Newton steps for as long as they help
    for _ in range(POLISH_STEPS):
        try:
            step = np.linalg.lstsq(J, r, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        trial = p + step
        r_new = (y - model(x, trial)) / sigma
        chi2_new = float(r_new @ r_new)
        # near the optimum chi^2 is flat to rounding, so allow that much slack
        if not (np.isfinite(chi2_new) and chi2_new <= chi2 * (1 + 1e-12)):
            break
        p, r, chi2 = trial, r_new, chi2_new
        J, A = _normal(model, x, p, sigma)
        if np.linalg.norm(step) <= STEP_TOL * (np.linalg.norm(p) + STEP_TOL):
            break
    cov = _invert(A)
    p = _canonical(model, p)
    return FitResult(model, p, np.sqrt(np.clip(np.diag(cov), 0, None)), cov, chi2,
                     len(x) - len(p), bool(converged), it)


def _wrap(phi):
    """Map to (-pi, pi]."""
    out = math.remainder(phi, 2 * math.pi)
    return math.pi if out == -math.pi else out


def _canonical(model, p):
    p = p.copy()
    names = model.names
    if model.family in ("sin_phase", "sin_time_phase") and p[0] < 0:
        p[0] = -p[0]
        k = names.index(model.angles[0])
        p[k] += math.pi
    if model.family == "thermal_flop":
        p[0] = abs(p[0])
    if "tau_pi" in names and model.family == "sin_time":
        k = names.index("tau_pi")
        p[k] = abs(p[k])
    for name in model.angles:
        k = names.index(name)
        p[k] = _wrap(p[k])
    return p


# ---------------------------------------------------------------------------
# starting values


def _dominant_frequency(x, y):
    """Cyclic frequency of the strongest periodic component (Lomb-Scargle)."""
    order = np.argsort(x)
    x, y = x[order], y[order]
    span = x[-1] - x[0]
    if span <= 0:
        return 0.0
    steps = np.diff(x)
    steps = steps[steps > 0]
    f_max = 0.5 / np.min(steps)
    f_min = 0.5 / span
    freqs = np.linspace(f_min, f_max, max(2000, 20 * len(x)))
    power = signal.lombscargle(x, y - y.mean(), 2 * np.pi * freqs)
    k = int(np.argmax(power))
    # parabolic refinement of the peak
    if 0 < k < len(freqs) - 1:
        a, b, c = power[k - 1:k + 2]
        den = a - 2 * b + c
        if den != 0:
            return float(freqs[k] + 0.5 * (a - c) / den * (freqs[1] - freqs[0]))
    return float(freqs[k])


def _linear_sinusoid(x, y, omega, w=None):
    """Least-squares ``c cos(omega x) + s sin(omega x) + y0``."""
    M = np.column_stack([np.cos(omega * x), np.sin(omega * x), np.ones_like(x)])
    if w is not None:
        M, y = M * w[:, None], y * w
    coef, *_ = np.linalg.lstsq(M, y, rcond=None)
    return coef


def init_guess(family: str, x, y, **fixed) -> tuple[np.ndarray, bool]:
    """Starting parameters and a flag telling whether the data are degenerate."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    span = float(np.ptp(y)) if y.size else 0.0
    flat = span <= 1e-12 * max(1.0, float(np.max(np.abs(y))) if y.size else 1.0)
    if family in ("sin_time", "sin_time_phase"):
        if flat:
            p = [0.0, float(np.ptp(x)) or 1.0, float(np.mean(y))]
            return np.array(p + [0.0] * (family == "sin_time_phase")), True
        f = _dominant_frequency(x, y)
        c, s, y0 = _linear_sinusoid(x, y, 2 * math.pi * f)
        tau = 1 / (2 * f)
        if family == "sin_time":
            return np.array([2 * c, tau, y0]), False
        amp = 2 * math.hypot(c, s)
        return np.array([amp, tau, y0, math.atan2(s, c)]), False
    if family == "sin_phase":
        if flat:
            return np.array([0.0, 0.0, float(np.mean(y))]), True
        c, s, y0 = _linear_sinusoid(x, y, 1.0)
        # c cos + s sin = R sin(x + phi0) with R cos phi0 = s, R sin phi0 = c
        return np.array([2 * math.hypot(c, s), math.atan2(c, s), y0]), False
    if family == "exp_decay":
        if flat:
            return np.array([0.0, float(np.ptp(x)) or 1.0, float(np.mean(y))]), True
        return _exp_guess(x, y), False
    if family == "thermal_flop":
        eta = fixed.get("eta")
        order = fixed.get("order", 1)
        if eta is None:
            raise DomainError("thermal_flop needs the Lamb-Dicke parameter")
        if flat:
            return np.array([0.0, 1.0]), True
        f = _dominant_frequency(x, y)
        ground = float(motion.sideband_rabi(0, order, eta)) if order >= 0 else float(motion.sideband_rabi(1, order, eta))
        return np.array([fixed.get("nbar", 0.1), 2 * math.pi * f / ground]), False
    if family in ("exponential", "gaussian"):
        keep = (y > 0) & (y < 1) & (x > 0)
        if not np.any(keep):
            return np.array([float(np.max(x)) or 1.0]), True
        power = 1 if family == "exponential" else 2
        T = np.median(x[keep] / (-np.log(y[keep])) ** (1 / power))
        return np.array([float(T)]), False
    raise DomainError(f"unknown model family {family!r}")


def _exp_guess(x, y):
    """Log-linear regression of ``y - c`` over a scan of trial offsets ``c``."""
    span = float(np.ptp(y))
    decreasing = np.polyfit(x, y, 1)[0] < 0
    edge = np.min(y) if decreasing else np.max(y)
    sign = 1.0 if decreasing else -1.0
    best = None
    for c in edge - sign * span * np.concatenate([np.geomspace(1e-4, 2.0, 60)]):
        z = sign * (y - c)
        keep = z > 0
        if keep.sum() < 2:
            continue
        slope, icpt = np.polyfit(x[keep], np.log(z[keep]), 1)
        if slope >= 0:
            continue
        pred = sign * np.exp(icpt + slope * x) + c
        cost = float(np.sum((pred - y) ** 2))
        if best is None or cost < best[0]:
            best = (cost, sign * math.exp(icpt), -1 / slope, c)
    if best is None:
        return np.array([y[0] - y[-1], float(np.ptp(x)) or 1.0, float(y[-1])])
    return np.array(best[1:])


def fit_family(family: str, data, init=None, **fixed) -> FitResult:
    """Fit a named family, using :func:`init_guess` when no start is given."""
    x, y, sigma = _as_data(data)
    model = get_model(family, **fixed)
    if init is None:
        init, degenerate = init_guess(family, x, y, **fixed)
        if degenerate:
            raise DegenerateFitError(f"data carry no information for a {family} fit")
    return fit(model, np.column_stack([x, y, sigma]), init)


def coherence_time(amplitudes, form: str = "exponential") -> tuple[float, float, float]:
    """1/e time of ``A(tau) = exp(-(tau/T2)^p)``; returns ``(T2, sigma_T2, chi2)``."""
    arr = np.asarray(amplitudes, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DomainError("amplitudes must be (tau, A, sigma) rows")
    if len(arr) < 2:
        raise DomainError("a coherence time needs at least two amplitudes (underdetermined)")
    res = fit_family(form, arr)
    return abs(res["T2"]), res.error("T2"), res.chi2


def linear_model(basis: Sequence[Callable], names=None) -> Model:
    """Model that is linear in its parameters: ``sum p_i * basis_i(x)``."""
    names = tuple(names or (f"c{i}" for i in range(len(basis))))

    def f(x, p):
        return sum(pi * b(x) for pi, b in zip(p, basis))

    def jac(x, p):
        return np.column_stack([b(x) * np.ones_like(x) for b in basis])

    return Model("linear", names, f, jac)


def fit_binomial(model: Model, x, y, n_shots, init, rounds: int = 3) -> FitResult:
    """Fit shot-noise-limited fractions with weights from the fitted curve.

    Weights from the observed fractions favour points that fluctuated
    towards 0 or 1; after a first pass the binomial sigma is recomputed from
    the model prediction (floored at half a count) and the fit repeated.
    """
    from .detection import binomial_sigma

    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    n_shots = np.broadcast_to(np.asarray(n_shots, dtype=float), x.shape)
    res = fit(model, np.column_stack([x, y, binomial_sigma(y, n_shots)]), init)
    for _ in range(rounds):
        p = np.clip(model(x, res.params), 0.0, 1.0)
        res = fit(model, np.column_stack([x, y, binomial_sigma(p, n_shots)]), res.params)
    return res
