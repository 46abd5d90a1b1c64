"""Simulation-grade cryptographic primitives.

Signatures and threshold signatures are keyed sha256 tags: the registry is
a trusted harness component holding every key, so verification simply
recomputes the tag. The interfaces mirror real schemes (V, V_t, COM /
PROVE / VER) so a hardened implementation could be swapped in without
touching the protocol.

The vector commitment is a binary hash tree with log-size inclusion
proofs, not a constant-size pairing scheme; the bit-accounting layer
reports the log-factor separately.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    EmptyInput,
    IndexOutOfRange,
    InsufficientShares,
    InvalidConfig,
    MessageMismatch,
    UnknownSigner,
)
from .fields import PrimeField

TAG_BYTES = 32


def _h(*parts: bytes) -> bytes:
    digest = hashlib.sha256()
    for p in parts:
        digest.update(len(p).to_bytes(4, "big"))
        digest.update(p)
    return digest.digest()


def _id8(node: int) -> bytes:
    return node.to_bytes(8, "big")


@dataclass(frozen=True)
class Signature:
    signer: int
    tag: bytes


@dataclass(frozen=True)
class PartialSignature:
    signer: int
    tag: bytes


@dataclass(frozen=True)
class CombinedSignature:
    """Constant width for a fixed N: signer bitmap plus one folded tag."""

    n: int
    signers: frozenset[int]
    tag: bytes

    def to_bytes(self) -> bytes:
        bitmap = 0
        for s in self.signers:
            bitmap |= 1 << (s - 1)
        width = (self.n + 7) // 8
        return (
            self.n.to_bytes(2, "big")
            + bitmap.to_bytes(width, "big")
            + self.tag
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "CombinedSignature":
        if len(raw) < 2:
            raise ValueError("combined signature too short")
        n = int.from_bytes(raw[:2], "big")
        width = (n + 7) // 8
        if len(raw) != 2 + width + TAG_BYTES:
            raise ValueError("combined signature length mismatch")
        bitmap = int.from_bytes(raw[2 : 2 + width], "big")
        signers = frozenset(
            i + 1 for i in range(n) if bitmap & (1 << i)
        )
        return cls(n, signers, raw[2 + width :])

    def wire_bytes(self) -> int:
        return 2 + (self.n + 7) // 8 + TAG_BYTES


class KeyRegistry:
    """Per-node signing keys and threshold key shares, derived
    deterministically from one setup seed. Immutable after construction;
    all operations are pure."""

    def __init__(self, n: int, seed: bytes):
        if n < 1:
            raise InvalidConfig("registry needs at least one node")
        self.n = n
        self.t = n // 2
        self._sign_keys = {i: _h(b"sign-key", seed, _id8(i)) for i in range(1, n + 1)}
        self._threshold_keys = {
            i: _h(b"threshold-key", seed, _id8(i)) for i in range(1, n + 1)
        }
        self.threshold_public = _h(b"threshold-public", seed)

    def _sign_key(self, signer: int) -> bytes:
        try:
            return self._sign_keys[signer]
        except KeyError:
            raise UnknownSigner(f"node {signer} not registered") from None

    def _threshold_key(self, signer: int) -> bytes:
        try:
            return self._threshold_keys[signer]
        except KeyError:
            raise UnknownSigner(f"node {signer} not registered") from None

    # -- plain signatures ---------------------------------------------

    def sign(self, signer: int, message: bytes) -> Signature:
        return Signature(signer, _h(b"sig", self._sign_key(signer), message))

    def verify(self, message: bytes, sig: Signature, signer: int) -> bool:
        if sig.signer != signer or signer not in self._sign_keys:
            return False
        expected = _h(b"sig", self._sign_keys[signer], message)
        return hmac.compare_digest(expected, sig.tag)

    # -- threshold signatures -----------------------------------------

    def threshold_sign(self, signer: int, message: bytes) -> PartialSignature:
        return PartialSignature(
            signer, _h(b"partial", self._threshold_key(signer), message)
        )

    def verify_partial(self, message: bytes, partial: PartialSignature) -> bool:
        if partial.signer not in self._threshold_keys:
            return False
        expected = _h(
            b"partial", self._threshold_keys[partial.signer], message
        )
        return hmac.compare_digest(expected, partial.tag)

    def _fold(self, message: bytes, signers: Iterable[int]) -> bytes:
        acc = hashlib.sha256()
        acc.update(_h(b"combined", self.threshold_public, message))
        for s in sorted(signers):
            acc.update(_id8(s))
            acc.update(
                _h(b"partial", self._threshold_keys[s], message)
            )
        return acc.digest()

    def combine(
        self, message: bytes, partials: Sequence[PartialSignature]
    ) -> CombinedSignature:
        """Combine >= t+1 distinct valid partials into one certificate."""
        for p in partials:
            if not self.verify_partial(message, p):
                raise MessageMismatch(
                    f"partial from node {p.signer} does not verify over message"
                )
        signers = frozenset(p.signer for p in partials)
        if len(signers) < self.t + 1:
            raise InsufficientShares(
                f"{len(signers)} distinct signers, need {self.t + 1}"
            )
        return CombinedSignature(self.n, signers, self._fold(message, signers))

    def threshold_verify(self, message: bytes, combined: CombinedSignature) -> bool:
        if combined.n != self.n:
            return False
        if len(combined.signers) < self.t + 1:
            return False
        if not all(1 <= s <= self.n for s in combined.signers):
            return False
        expected = self._fold(message, combined.signers)
        return hmac.compare_digest(expected, combined.tag)


# -- polynomial hashing ------------------------------------------------


@dataclass(frozen=True)
class HashParams:
    """Public per-round hash randomness. alpha is drawn from the beacon
    after coded parts are distributed; the hash is linear (degree 1) in
    the data, which is what lets hashes of coded shares be decoded."""

    alpha: int
    d_hash: int = 1

    def __post_init__(self):
        if self.alpha == 0:
            raise InvalidConfig("alpha must be nonzero")
        if self.d_hash != 1:
            raise InvalidConfig("only the linear hash (d_hash = 1) is implemented")


def poly_hash(field: PrimeField, values: Sequence[int], params: HashParams) -> int:
    """sum_j values[j] * alpha^j for j = 1..m, mod q."""
    if len(values) == 0:
        raise EmptyInput("cannot hash an empty vector")
    q = field.modulus
    acc = 0
    power = 1
    for v in values:
        power = power * params.alpha % q
        acc = (acc + v * power) % q
    return acc


# -- vector commitment (binary hash tree) -------------------------------


_PAD_LEAF = hashlib.sha256(b"\x02").digest()


def _leaf(message: bytes) -> bytes:
    return hashlib.sha256(b"\x00" + message).digest()


def _node(left: bytes, right: bytes) -> bytes:
    return hashlib.sha256(b"\x01" + left + right).digest()


@dataclass(frozen=True)
class Commitment:
    root: bytes
    length: int

    def to_bytes(self) -> bytes:
        return self.root + self.length.to_bytes(4, "big")

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Commitment":
        if len(raw) != TAG_BYTES + 4:
            raise ValueError("commitment must be 36 bytes")
        return cls(raw[:TAG_BYTES], int.from_bytes(raw[TAG_BYTES:], "big"))


@dataclass(frozen=True)
class InclusionProof:
    """1-based index plus the authentication path, leaf level first."""

    index: int
    path: tuple[bytes, ...]

    def to_bytes(self) -> bytes:
        return (
            self.index.to_bytes(4, "big")
            + len(self.path).to_bytes(1, "big")
            + b"".join(self.path)
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "InclusionProof":
        if len(raw) < 5:
            raise ValueError("proof too short")
        index = int.from_bytes(raw[:4], "big")
        depth = raw[4]
        if len(raw) != 5 + depth * TAG_BYTES:
            raise ValueError("proof length mismatch")
        path = tuple(
            raw[5 + i * TAG_BYTES : 5 + (i + 1) * TAG_BYTES]
            for i in range(depth)
        )
        return cls(index, path)

    def wire_bytes(self) -> int:
        return 5 + len(self.path) * TAG_BYTES


def _tree_levels(messages: Sequence[bytes]) -> list[list[bytes]]:
    g = len(messages)
    width = 1 if g <= 1 else 1 << (g - 1).bit_length()
    level = [_leaf(m) for m in messages] + [_PAD_LEAF] * (width - g)
    levels = [level]
    while len(level) > 1:
        level = [
            _node(level[i], level[i + 1]) for i in range(0, len(level), 2)
        ]
        levels.append(level)
    return levels


def commit(messages: Sequence[bytes]) -> Commitment:
    if not messages:
        raise EmptyInput("cannot commit to an empty vector")
    return Commitment(_tree_levels(messages)[-1][0], len(messages))


def prove(messages: Sequence[bytes], index: int) -> InclusionProof:
    """Inclusion proof for 1-based `index`."""
    if not 1 <= index <= len(messages):
        raise IndexOutOfRange(f"index {index} not in [1, {len(messages)}]")
    levels = _tree_levels(messages)
    pos = index - 1
    path = []
    for level in levels[:-1]:
        path.append(level[pos ^ 1])
        pos //= 2
    return InclusionProof(index, tuple(path))


def commit_with_proofs(
    messages: Sequence[bytes],
) -> tuple[Commitment, list[InclusionProof]]:
    """Commitment plus one proof per message, sharing one tree build."""
    if not messages:
        raise EmptyInput("cannot commit to an empty vector")
    levels = _tree_levels(messages)
    proofs = []
    for index in range(1, len(messages) + 1):
        pos = index - 1
        path = []
        for level in levels[:-1]:
            path.append(level[pos ^ 1])
            pos //= 2
        proofs.append(InclusionProof(index, tuple(path)))
    return Commitment(levels[-1][0], len(messages)), proofs


def verify_inclusion(
    commitment: Commitment,
    message: bytes,
    index: int,
    proof: InclusionProof,
) -> bool:
    """VER: tolerant of garbage (returns False rather than raising), since
    clients feed it data from untrusted nodes."""
    g = commitment.length
    if g < 1 or not 1 <= index <= g or proof.index != index:
        return False
    width = 1 if g <= 1 else 1 << (g - 1).bit_length()
    expected_depth = (width - 1).bit_length()
    if len(proof.path) != expected_depth:
        return False
    acc = _leaf(message)
    pos = index - 1
    for sibling in proof.path:
        if len(sibling) != TAG_BYTES:
            return False
        if pos & 1:
            acc = _node(sibling, acc)
        else:
            acc = _node(acc, sibling)
        pos //= 2
    return hmac.compare_digest(acc, commitment.root)
