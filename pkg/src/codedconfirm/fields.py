"""Prime-field arithmetic, Lagrange encoding of block parts, and
error-tolerant Reed-Solomon decoding of coded-computation results.

Everything here is pure and operates on plain Python ints reduced mod q.
The production field is the Mersenne prime 2^61 - 1; tests use small primes
such as 11 or 101 so expected values stay hand-checkable.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

from .errors import (
    DecodeFailure,
    DivisionByZero,
    DuplicatePoint,
    InvalidConfig,
    ShapeMismatch,
)

# 2^61 - 1, prime. Fits in a 64-bit word; products fit comfortably in
# Python ints.
M61 = (1 << 61) - 1


class PrimeField:
    """Arithmetic mod a prime q. Elements are ints in [0, q)."""

    __slots__ = ("modulus",)

    def __init__(self, modulus: int):
        if modulus < 2 or pow(2, modulus, modulus) != 2 % modulus:
            # Fermat check base 2: cheap filter, catches every non-prime
            # anyone would plausibly pass in.
            raise InvalidConfig(f"{modulus} does not look prime")
        self.modulus = modulus

    def element(self, x: int) -> int:
        return x % self.modulus

    def add(self, a: int, b: int) -> int:
        return (a + b) % self.modulus

    def sub(self, a: int, b: int) -> int:
        return (a - b) % self.modulus

    def mul(self, a: int, b: int) -> int:
        return (a * b) % self.modulus

    def pow(self, a: int, e: int) -> int:
        return pow(a, e, self.modulus)

    def inv(self, a: int) -> int:
        a %= self.modulus
        if a == 0:
            raise DivisionByZero("inverse of zero")
        return pow(a, -1, self.modulus)

    def div(self, a: int, b: int) -> int:
        return self.mul(a, self.inv(b))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrimeField) and other.modulus == self.modulus

    def __hash__(self) -> int:
        return hash(("PrimeField", self.modulus))

    def __repr__(self) -> str:
        return f"PrimeField({self.modulus})"


@dataclass(frozen=True)
class Polynomial:
    """Coefficients lowest-degree first, trailing zeros stripped.

    The zero polynomial has an empty coefficient tuple and degree -1.
    """

    field: PrimeField
    coeffs: tuple[int, ...]

    @classmethod
    def make(cls, field: PrimeField, coeffs: Sequence[int]) -> "Polynomial":
        cs = [c % field.modulus for c in coeffs]
        while cs and cs[-1] == 0:
            cs.pop()
        return cls(field, tuple(cs))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def evaluate(self, x: int) -> int:
        acc = 0
        for c in reversed(self.coeffs):
            acc = (acc * x + c) % self.field.modulus
        return acc

    def __call__(self, x: int) -> int:
        return self.evaluate(x)


def lagrange_interpolate(
    field: PrimeField, points: Sequence[tuple[int, int]]
) -> Polynomial:
    """Unique polynomial of degree < len(points) through the given points."""
    xs = [x % field.modulus for x, _ in points]
    ys = [y % field.modulus for _, y in points]
    if len(set(xs)) != len(xs):
        raise DuplicatePoint("x-coordinates must be pairwise distinct")

    # Master zero polynomial prod (X - x_i), then peel one root off per
    # point by synthetic division; classic O(n^2) construction.
    root = [1]
    for x in xs:
        root = [0] + root
        for j in range(len(root) - 1):
            root[j] = (root[j] - root[j + 1] * x) % field.modulus

    acc = [0] * max(len(xs), 1)
    for x, y in zip(xs, ys):
        num = [0] * (len(root) - 2) + [1]
        for j in range(len(root) - 2, 0, -1):
            num[j - 1] = (root[j] + num[j] * x) % field.modulus
        denom = _eval(field, num, x)
        scale = field.div(y, denom)
        for j, c in enumerate(num):
            acc[j] = (acc[j] + c * scale) % field.modulus
    return Polynomial.make(field, acc)


def _eval(field: PrimeField, coeffs: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % field.modulus
    return acc


@dataclass(frozen=True)
class EvalDomain:
    """Evaluation points realising the generator matrix: data points
    omega_1..omega_K carry the uncoded parts, node points beta_1..beta_N
    carry the coded shares."""

    field: PrimeField
    data_points: tuple[int, ...]
    node_points: tuple[int, ...]

    def __post_init__(self):
        pts = list(self.data_points) + list(self.node_points)
        if len(set(pts)) != len(pts):
            raise InvalidConfig("evaluation points must be pairwise distinct")

    @classmethod
    def default(cls, field: PrimeField, n: int, k: int) -> "EvalDomain":
        """omega_k = k-1, beta_i = K+i-1: the first N+K naturals."""
        if field.modulus <= n + k:
            raise InvalidConfig("field too small for N + K distinct points")
        return cls(
            field,
            tuple(range(k)),
            tuple(range(k, k + n)),
        )


@dataclass(frozen=True)
class CodeParams:
    """System dimensioning: N nodes, K block parts, up to f Byzantine
    nodes, hash polynomial of degree d_hash."""

    n: int
    k: int
    f: int
    d_hash: int = 1

    def __post_init__(self):
        if self.k < 1 or self.f < 0 or self.d_hash < 1:
            raise InvalidConfig("need K >= 1, f >= 0, d_hash >= 1")
        if self.n < 3 * self.f + 1 + (self.k - 1) * self.d_hash:
            raise InvalidConfig(
                f"N={self.n} violates N >= 3f+1+(K-1)d_hash "
                f"with K={self.k}, f={self.f}, d_hash={self.d_hash}"
            )


def decode_threshold(params: CodeParams, p_degree: int) -> int:
    """Minimal number of results R for error-tolerant decoding of a
    degree-p polynomial of the data: (K-1)deg(p) + 2f + 1."""
    if p_degree < 0:
        raise InvalidConfig("polynomial degree must be nonnegative")
    return (params.k - 1) * p_degree + 2 * params.f + 1


def lagrange_basis_matrix(domain: EvalDomain) -> list[list[int]]:
    """B[k][i] = L_k(beta_i) where L_k is the Lagrange basis over the
    data points. Row k of the generator matrix."""
    field = domain.field
    omegas = domain.data_points
    denoms = []
    for k, wk in enumerate(omegas):
        d = 1
        for j, wj in enumerate(omegas):
            if j != k:
                d = d * (wk - wj) % field.modulus
        denoms.append(field.inv(d))
    matrix = []
    for k, wk in enumerate(omegas):
        row = []
        for beta in domain.node_points:
            num = 1
            for j, wj in enumerate(omegas):
                if j != k:
                    num = num * (beta - wj) % field.modulus
            row.append(num * denoms[k] % field.modulus)
        matrix.append(row)
    return matrix


def encode_parts(
    parts: Sequence[Sequence[int]], domain: EvalDomain
) -> list[list[int]]:
    """Encode K equal-length part vectors into N coded share vectors.

    Coordinate j of share i is u_j(beta_i), where u_j is the degree-(K-1)
    polynomial through {(omega_k, parts[k][j])}.
    """
    k = len(domain.data_points)
    if len(parts) != k:
        raise ShapeMismatch(f"expected {k} parts, got {len(parts)}")
    if not parts:
        raise ShapeMismatch("no parts to encode")
    m = len(parts[0])
    if any(len(p) != m for p in parts):
        raise ShapeMismatch("all parts must have equal length")

    q = domain.field.modulus
    basis = lagrange_basis_matrix(domain)
    coded: list[list[int]] = []
    for i in range(len(domain.node_points)):
        col = [basis[kk][i] for kk in range(k)]
        share = [0] * m
        for kk in range(k):
            b = col[kk]
            if b == 0:
                continue
            pk = parts[kk]
            for j in range(m):
                share[j] += b * pk[j]
        coded.append([v % q for v in share])
    return coded


def _solve_linear(
    field: PrimeField, rows: list[list[int]], rhs: list[int]
) -> list[int] | None:
    """Solve rows * x = rhs over the field by Gauss-Jordan elimination.

    Returns one solution (free variables set to zero), or None if the
    system is inconsistent.
    """
    q = field.modulus
    n_rows = len(rows)
    n_cols = len(rows[0]) if rows else 0
    aug = [list(r) + [b] for r, b in zip(rows, rhs)]

    pivot_cols: list[int] = []
    rank = 0
    for col in range(n_cols):
        pivot = next((r for r in range(rank, n_rows) if aug[r][col] % q), None)
        if pivot is None:
            continue
        aug[rank], aug[pivot] = aug[pivot], aug[rank]
        inv = field.inv(aug[rank][col])
        aug[rank] = [v * inv % q for v in aug[rank]]
        for r in range(n_rows):
            if r != rank and aug[r][col] % q:
                factor = aug[r][col]
                aug[r] = [
                    (v - factor * p) % q for v, p in zip(aug[r], aug[rank])
                ]
        pivot_cols.append(col)
        rank += 1
        if rank == n_rows:
            break

    for r in range(rank, n_rows):
        if aug[r][n_cols] % q:
            return None

    solution = [0] * n_cols
    for r, col in enumerate(pivot_cols):
        solution[col] = aug[r][n_cols]
    return solution


def _poly_divmod(
    field: PrimeField, num: list[int], den: list[int]
) -> tuple[list[int], list[int]]:
    q = field.modulus
    num = [c % q for c in num]
    den = [c % q for c in den]
    while den and den[-1] == 0:
        den.pop()
    if not den:
        raise DivisionByZero("polynomial division by zero")
    quot = [0] * max(len(num) - len(den) + 1, 0)
    rem = list(num)
    inv_lead = field.inv(den[-1])
    for i in range(len(quot) - 1, -1, -1):
        coeff = rem[i + len(den) - 1] * inv_lead % q
        quot[i] = coeff
        if coeff:
            for j, d in enumerate(den):
                rem[i + j] = (rem[i + j] - coeff * d) % q
    while rem and rem[-1] == 0:
        rem.pop()
    return quot, rem


def decode_with_errors(
    field: PrimeField,
    results: Sequence[tuple[int, int]],
    degree: int,
    max_errors: int,
) -> Polynomial:
    """Berlekamp-Welch decoding: recover the unique polynomial of degree
    <= `degree` that agrees with all but at most `max_errors` of the
    (point, value) results.

    Raises DecodeFailure when no such polynomial exists, i.e. the
    adversary corrupted more values than the error budget allows.
    """
    r = len(results)
    if r < degree + 2 * max_errors + 1:
        raise InvalidConfig(
            f"need at least deg+2e+1 = {degree + 2 * max_errors + 1} "
            f"results, got {r}"
        )
    xs = [x % field.modulus for x, _ in results]
    ys = [y % field.modulus for _, y in results]
    if len(set(xs)) != len(xs):
        raise DuplicatePoint("result points must be distinct")

    q = field.modulus
    e = max_errors
    nq = degree + e + 1  # unknown coefficients of Q
    # Q(x_i) - y_i * (E(x_i) - x_i^e) = y_i * x_i^e  with E monic of deg e.
    rows = []
    rhs = []
    for x, y in zip(xs, ys):
        powers = [1] * (nq if nq > e else e)
        for j in range(1, len(powers)):
            powers[j] = powers[j - 1] * x % q
        row = [powers[j] if j < nq else 0 for j in range(nq)]
        row += [(-y * powers[j]) % q for j in range(e)]
        rows.append(row)
        rhs.append(y * pow(x, e, q) % q)

    sol = _solve_linear(field, rows, rhs)
    if sol is None:
        raise DecodeFailure("no consistent error locator within budget")
    q_coeffs = sol[:nq]
    e_coeffs = sol[nq:] + [1]  # monic
    p_coeffs, rem = _poly_divmod(field, q_coeffs, e_coeffs)
    if rem:
        raise DecodeFailure("error locator does not divide Q")

    poly = Polynomial.make(field, p_coeffs)
    if poly.degree > degree:
        raise DecodeFailure("recovered polynomial exceeds target degree")
    agree = sum(1 for x, y in zip(xs, ys) if poly.evaluate(x) == y)
    if agree < r - max_errors:
        raise DecodeFailure(
            f"only {agree}/{r} results agree; more than {max_errors} errors"
        )
    return poly


def decode_by_subset_search(
    field: PrimeField,
    results: Sequence[tuple[int, int]],
    degree: int,
    max_errors: int,
) -> Polynomial:
    """Exhaustive reference decoder: try every error-position subset and
    interpolate the rest. Exponential; only for cross-checking the
    Berlekamp-Welch path on small instances.
    """
    r = len(results)
    candidates: list[Polynomial] = []
    for n_err in range(max_errors + 1):
        for bad in combinations(range(r), n_err):
            keep = [results[i] for i in range(r) if i not in bad]
            fit = lagrange_interpolate(field, keep[: degree + 1])
            if fit.degree > degree:
                continue
            if all(fit.evaluate(x) == y % field.modulus for x, y in keep):
                if not any(fit == c for c in candidates):
                    candidates.append(fit)
        if candidates:
            break
    if len(candidates) != 1:
        raise DecodeFailure(
            f"subset search found {len(candidates)} consistent polynomials"
        )
    return candidates[0]
