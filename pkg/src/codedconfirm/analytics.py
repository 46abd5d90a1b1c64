"""Committee-failure analytics.

The probability that a uniformly sampled committee of size lambda has a
Byzantine majority, with each member independently Byzantine with
probability 1/3, is

    sum_{i = floor(lambda/2 + 1)}^{lambda} C(lambda, i) (1/3)^i (2/3)^(lambda-i).

The sum is a single rational number: the numerator is
sum C(lambda, i) 2^(lambda-i) and the denominator 3^lambda, so we can
evaluate it exactly at any lambda. The high-precision mode rounds that
exact ratio with interval arithmetic and reports a certified upper bound
plus its log2.

An exact hypergeometric variant (committee drawn without replacement
from N nodes of which f are Byzantine) is provided for comparison; the
binomial form above is itself an upper-bound simplification.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import comb

from mpmath import iv, mpf

from .errors import InvalidConfig

EXACT_MODE_MAX_LAMBDA = 64


def _majority_start(lam: int) -> int:
    # floor(lambda/2 + 1)
    return lam // 2 + 1


def failure_bound_exact(lam: int) -> Fraction:
    """Exact rational value of the majority-Byzantine bound."""
    if lam < 1:
        raise InvalidConfig("lambda must be >= 1")
    numerator = sum(
        comb(lam, i) * (2 ** (lam - i)) for i in range(_majority_start(lam), lam + 1)
    )
    return Fraction(numerator, 3**lam)


@dataclass(frozen=True)
class CertifiedBound:
    lam: int
    upper: mpf  # certified upper bound on the probability
    log2_upper: mpf
    precision_bits: int


def failure_bound_highprec(lam: int, precision_bits: int = 512) -> CertifiedBound:
    """Round the exact ratio at the requested precision with directed
    (interval) rounding; the reported value can only overestimate."""
    if lam < 1:
        raise InvalidConfig("lambda must be >= 1")
    if precision_bits < 16:
        raise InvalidConfig("precision too low to certify anything")
    exact = failure_bound_exact(lam)
    with iv.workprec(precision_bits):
        interval = iv.mpf(exact.numerator) / iv.mpf(exact.denominator)
        log2_interval = iv.log(interval) / iv.log(2)
        upper = interval.b
        log2_upper = log2_interval.b
    return CertifiedBound(lam, mpf(upper), mpf(log2_upper), precision_bits)


def committee_failure_prob(
    lam: int, precision_bits: int = 512, mode: str = "auto"
) -> Fraction | mpf:
    """Exact rational for small lambda, certified upper bound above."""
    if mode not in ("auto", "exact", "highprec"):
        raise InvalidConfig(f"unknown mode {mode!r}")
    if mode == "exact" or (mode == "auto" and lam <= EXACT_MODE_MAX_LAMBDA):
        return failure_bound_exact(lam)
    return failure_bound_highprec(lam, precision_bits).upper


def hypergeometric_failure_prob(n: int, f: int, lam: int) -> Fraction:
    """Exact majority-Byzantine probability for a committee drawn without
    replacement from n nodes of which f are Byzantine."""
    if not 0 <= f <= n or not 1 <= lam <= n:
        raise InvalidConfig("need 0 <= f <= n and 1 <= lambda <= n")
    total = comb(n, lam)
    bad = sum(
        comb(f, i) * comb(n - f, lam - i)
        for i in range(_majority_start(lam), min(f, lam) + 1)
    )
    return Fraction(bad, total)
