"""Transactions, block assembly, K-way partitioning, and canonical
serialization into field-element vectors.

Canonical byte layout (used for commitment hashing):
sender (8) | receiver (8) | amount (8) | nonce (8) | payload digest (32),
all big-endian, 72 bytes total.

Field-element layout: one element per scalar field, then the 256-bit
digest in five big-endian limbs of at most 60 bits, so every element fits
under the production modulus 2^61 - 1. Sender id 0 is reserved, which
makes the all-zero vector invalid and zero-padding of parts unambiguous.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import EmptyBlock, InvalidConfig, MalformedTransaction
from .fields import PrimeField

TX_BYTES = 72
DIGEST_BYTES = 32

SCALAR_LIMIT = 1 << 60  # sender/receiver/amount/nonce must stay below this
_LIMB_BITS = 60
_LIMB_MASK = (1 << _LIMB_BITS) - 1
_N_LIMBS = 5  # ceil(256 / 60)

TX_ELEMENTS = 4 + _N_LIMBS
MIN_SERIALIZATION_MODULUS = (1 << 61) - 1


@dataclass(frozen=True)
class Transaction:
    sender: int
    receiver: int
    amount: int
    nonce: int
    payload_digest: bytes

    def __post_init__(self):
        if not 1 <= self.sender < SCALAR_LIMIT:
            raise MalformedTransaction("sender id must be in [1, 2^60)")
        if not 1 <= self.receiver < SCALAR_LIMIT:
            raise MalformedTransaction("receiver id must be in [1, 2^60)")
        if not 0 <= self.amount < SCALAR_LIMIT:
            raise MalformedTransaction("amount out of range")
        if not 0 <= self.nonce < SCALAR_LIMIT:
            raise MalformedTransaction("nonce out of range")
        if len(self.payload_digest) != DIGEST_BYTES:
            raise MalformedTransaction("payload digest must be 32 bytes")

    def to_bytes(self) -> bytes:
        return (
            self.sender.to_bytes(8, "big")
            + self.receiver.to_bytes(8, "big")
            + self.amount.to_bytes(8, "big")
            + self.nonce.to_bytes(8, "big")
            + self.payload_digest
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Transaction":
        if len(raw) != TX_BYTES:
            raise MalformedTransaction(f"expected {TX_BYTES} bytes, got {len(raw)}")
        return cls(
            sender=int.from_bytes(raw[0:8], "big"),
            receiver=int.from_bytes(raw[8:16], "big"),
            amount=int.from_bytes(raw[16:24], "big"),
            nonce=int.from_bytes(raw[24:32], "big"),
            payload_digest=raw[32:72],
        )


@dataclass(frozen=True)
class Block:
    block_num: int
    transactions: tuple[Transaction, ...]

    @property
    def g(self) -> int:
        return len(self.transactions)


@dataclass(frozen=True)
class BlockPart:
    index: int  # 1-based part number
    data: tuple[int, ...]


@dataclass(frozen=True)
class CodedPart:
    node: int
    data: tuple[int, ...]


def _check_field(field: PrimeField) -> None:
    if field.modulus < MIN_SERIALIZATION_MODULUS:
        raise InvalidConfig(
            "transaction serialization needs a field of at least 2^61 - 1"
        )


def serialize_tx(field: PrimeField, tx: Transaction) -> list[int]:
    _check_field(field)
    digest = int.from_bytes(tx.payload_digest, "big")
    limbs = []
    for i in range(_N_LIMBS):
        shift = _LIMB_BITS * (_N_LIMBS - 1 - i)
        limbs.append((digest >> shift) & _LIMB_MASK)
    return [tx.sender, tx.receiver, tx.amount, tx.nonce] + limbs


def deserialize_tx(field: PrimeField, vector: list[int] | tuple[int, ...]) -> Transaction:
    _check_field(field)
    if len(vector) != TX_ELEMENTS:
        raise MalformedTransaction(
            f"expected {TX_ELEMENTS} elements, got {len(vector)}"
        )
    if any(not 0 <= v < field.modulus for v in vector):
        raise MalformedTransaction("element out of field range")
    limbs = vector[4:]
    # The top limb carries 256 - 4*60 = 16 bits.
    if limbs[0] >= 1 << (256 - _LIMB_BITS * (_N_LIMBS - 1)):
        raise MalformedTransaction("digest limb overflow")
    if any(l > _LIMB_MASK for l in limbs):
        raise MalformedTransaction("digest limb overflow")
    digest = 0
    for l in limbs:
        digest = (digest << _LIMB_BITS) | l
    return Transaction(
        sender=vector[0],
        receiver=vector[1],
        amount=vector[2],
        nonce=vector[3],
        payload_digest=digest.to_bytes(DIGEST_BYTES, "big"),
    )


def serialize_block(field: PrimeField, block: Block) -> list[int]:
    out: list[int] = []
    for tx in block.transactions:
        out.extend(serialize_tx(field, tx))
    return out


def partition_block(field: PrimeField, block: Block, k: int) -> list[BlockPart]:
    """Split into K contiguous chunks of ceil(g/K) transactions each,
    serialized and zero-padded to a common element count."""
    if k < 1:
        raise InvalidConfig("need K >= 1")
    g = block.g
    if g == 0:
        raise EmptyBlock("cannot partition a block with no transactions")
    chunk = -(-g // k)  # ceil(g / k)
    m = chunk * TX_ELEMENTS
    parts = []
    for i in range(k):
        txs = block.transactions[i * chunk : (i + 1) * chunk]
        data: list[int] = []
        for tx in txs:
            data.extend(serialize_tx(field, tx))
        data.extend([0] * (m - len(data)))
        parts.append(BlockPart(i + 1, tuple(data)))
    return parts


def reassemble(
    field: PrimeField, parts: list[BlockPart], g: int, block_num: int
) -> Block:
    """Inverse of partition_block given the original transaction count."""
    flat: list[int] = []
    for part in sorted(parts, key=lambda p: p.index):
        flat.extend(part.data)
    needed = g * TX_ELEMENTS
    if len(flat) < needed:
        raise MalformedTransaction("parts too short for g transactions")
    txs = [
        deserialize_tx(field, flat[i * TX_ELEMENTS : (i + 1) * TX_ELEMENTS])
        for i in range(g)
    ]
    return Block(block_num, tuple(txs))


def random_transaction(rng: random.Random, num_clients: int) -> Transaction:
    sender = rng.randint(1, num_clients)
    receiver = rng.randint(1, num_clients)
    return Transaction(
        sender=sender,
        receiver=receiver,
        amount=rng.randrange(1 << 32),
        nonce=rng.randrange(1 << 32),
        payload_digest=rng.randbytes(DIGEST_BYTES),
    )


def random_block(
    rng: random.Random, g: int, block_num: int, num_clients: int
) -> Block:
    return Block(
        block_num,
        tuple(random_transaction(rng, num_clients) for _ in range(g)),
    )
