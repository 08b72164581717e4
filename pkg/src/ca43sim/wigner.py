"""Wigner 3j and 6j symbols and Clebsch-Gordan coefficients.

Arguments may be integers, half-integers given as floats, or Fractions.
Everything is converted to doubled integers first so parity and triangle
checks are exact; the Racah sums then run over exact integer factorials.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import factorial, sqrt


def _twice(x) -> int:
    d = Fraction(x).limit_denominator(2) * 2
    if d.denominator != 1 or abs(float(d) - 2 * float(x)) > 1e-9:
        raise ValueError(f"{x!r} is not an integer or half-integer")
    return int(d)


def _triangle(a2, b2, c2):
    """Triangle coefficient Delta(abc) squared, from doubled arguments."""
    return Fraction(
        factorial((a2 + b2 - c2) // 2) * factorial((a2 - b2 + c2) // 2) * factorial((-a2 + b2 + c2) // 2),
        factorial((a2 + b2 + c2) // 2 + 1),
    )


def _is_triad(a2, b2, c2):
    return (
        c2 <= a2 + b2
        and c2 >= abs(a2 - b2)
        and (a2 + b2 + c2) % 2 == 0
    )


@lru_cache(maxsize=65536)
def _wigner_3j2(j1, j2, j3, m1, m2, m3) -> float:
    if m1 + m2 + m3 != 0:
        return 0.0
    for j, m in ((j1, m1), (j2, m2), (j3, m3)):
        if abs(m) > j or (j - m) % 2:
            return 0.0
    if not _is_triad(j1, j2, j3):
        return 0.0
    # Racah formula with all quantities halved back to integers
    a = (j1 + j2 - j3) // 2
    b = (j1 - m1) // 2
    c = (j2 + m2) // 2
    d = (j3 - j2 + m1) // 2
    e = (j3 - j1 - m2) // 2
    kmin = max(0, -d, -e)
    kmax = min(a, b, c)
    total = 0
    for k in range(kmin, kmax + 1):
        denom = (
            factorial(k) * factorial(a - k) * factorial(b - k)
            * factorial(c - k) * factorial(d + k) * factorial(e + k)
        )
        total += Fraction((-1) ** k, denom)
    pref = _triangle(j1, j2, j3) * (
        factorial((j1 + m1) // 2) * factorial((j1 - m1) // 2)
        * factorial((j2 + m2) // 2) * factorial((j2 - m2) // 2)
        * factorial((j3 + m3) // 2) * factorial((j3 - m3) // 2)
    )
    sign = -1 if ((j1 - j2 - m3) // 2) % 2 else 1
    return sign * float(total) * sqrt(pref)


def wigner_3j(j1, j2, j3, m1, m2, m3) -> float:
    """Wigner 3j symbol ``(j1 j2 j3; m1 m2 m3)``; zero when not allowed."""
    return _wigner_3j2(*(_twice(x) for x in (j1, j2, j3, m1, m2, m3)))


@lru_cache(maxsize=65536)
def _wigner_6j2(j1, j2, j3, j4, j5, j6) -> float:
    triads = ((j1, j2, j3), (j1, j5, j6), (j4, j2, j6), (j4, j5, j3))
    if not all(_is_triad(*t) for t in triads):
        return 0.0
    s = [sum(t) // 2 for t in triads]
    p = [(j1 + j2 + j4 + j5) // 2, (j2 + j3 + j5 + j6) // 2, (j3 + j1 + j6 + j4) // 2]
    total = 0
    for k in range(max(s), min(p) + 1):
        denom = factorial(k - s[0]) * factorial(k - s[1]) * factorial(k - s[2]) * factorial(k - s[3])
        denom *= factorial(p[0] - k) * factorial(p[1] - k) * factorial(p[2] - k)
        total += Fraction((-1) ** k * factorial(k + 1), denom)
    pref = 1
    for t in triads:
        pref *= _triangle(*t)
    return float(total) * sqrt(pref)


def wigner_6j(j1, j2, j3, j4, j5, j6) -> float:
    """Wigner 6j symbol ``{j1 j2 j3; j4 j5 j6}``; zero when not allowed."""
    return _wigner_6j2(*(_twice(x) for x in (j1, j2, j3, j4, j5, j6)))


def clebsch_gordan(j1, m1, j2, m2, j, m) -> float:
    """``<j1 m1; j2 m2 | j m>`` in the Condon-Shortley convention."""
    if _twice(m1) + _twice(m2) != _twice(m):
        return 0.0
    phase2 = _twice(j1) - _twice(j2) + _twice(m)
    sign = -1.0 if (phase2 // 2) % 2 else 1.0
    return sign * sqrt(_twice(j) + 1) * wigner_3j(j1, j2, j, m1, m2, -Fraction(m))
