"""Clebsch-Gordan coefficients for half-integer angular momenta.

Arguments are passed as ``Fraction`` (or anything ``Fraction`` accepts) so that
half-integers stay exact; the result is a float.
"""
from fractions import Fraction
from math import factorial, sqrt


def _as_int(x: Fraction) -> int:
    if x.denominator != 1:
        raise ValueError(f"expected an integer combination of momenta, got {x}")
    return int(x)


def _is_valid(j, m) -> bool:
    return j >= 0 and abs(m) <= j and (j - m).denominator == 1


def clebsch_gordan(j1, m1, j2, m2, j, m) -> float:
    """<j1 m1; j2 m2 | j m> in the Condon-Shortley phase convention (Racah formula)."""
    j1, m1, j2, m2, j, m = (Fraction(x) for x in (j1, m1, j2, m2, j, m))
    if m1 + m2 != m:
        return 0.0
    if not (_is_valid(j1, m1) and _is_valid(j2, m2) and _is_valid(j, m)):
        return 0.0
    if j < abs(j1 - j2) or j > j1 + j2 or (j1 + j2 + j).denominator != 1:
        return 0.0

    a = _as_int(j1 + j2 - j)
    b = _as_int(j1 - j2 + j)
    c = _as_int(-j1 + j2 + j)
    d = _as_int(j1 + j2 + j + 1)
    prefactor = (2 * j + 1) * Fraction(
        factorial(a) * factorial(b) * factorial(c), factorial(d)
    )
    prefactor *= (
        factorial(_as_int(j1 + m1)) * factorial(_as_int(j1 - m1))
        * factorial(_as_int(j2 + m2)) * factorial(_as_int(j2 - m2))
        * factorial(_as_int(j + m)) * factorial(_as_int(j - m))
    )

    total = Fraction(0)
    for k in range(0, a + 1):
        terms = (
            k,
            a - k,
            _as_int(j1 - m1) - k,
            _as_int(j2 + m2) - k,
            _as_int(j - j2 + m1) + k,
            _as_int(j - j1 - m2) + k,
        )
        if min(terms) < 0:
            continue
        denom = 1
        for t in terms:
            denom *= factorial(t)
        total += Fraction((-1) ** k, denom)

    return float(total) * sqrt(float(prefactor))
