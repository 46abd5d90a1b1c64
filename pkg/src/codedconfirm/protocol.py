"""Per-role logic of the transaction-confirmation round.

A round runs eight stages on top of the base coded chain:

1. beacon announces leader, committee of size lambda, and the hash
   randomness alpha (alpha only becomes known after coded parts are out);
2. the leader commits to the block and broadcasts the commitment;
3. the leader reveals the uncoded block plus every inclusion proof to the
   committee, which checks all proofs against the commitment;
4. every node sends the polynomial hash of its coded share to the
   committee, which decodes the hashes of the uncoded parts and compares
   them with hashes of the revealed block;
5. committee members broadcast signed yes/no votes on the commitment;
6. once every vote broadcast resolves and the base round terminates,
   nodes either reject or send partial threshold signatures over
   commitment || block number to the committee;
7. a committee member holding N/2+1 partials combines them and sends each
   transaction's proof bundle to its sender and receiver;
8. clients verify bundles, considering at most one per node and
   transaction.

NodeMachine implements 2-7 as a message/timer-driven state machine that
returns Action objects; the simulator interprets them. The standalone
check functions mirror the individual protocol operations and are what
the state machine (and the unit tests) call.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass
from typing import Any, Sequence

from . import blockdata, crypto
from .blockdata import Block, Transaction
from .broadcast import LEADER_FAULTY, echo_timeout, ideal_timeout
from .crypto import (
    CombinedSignature,
    Commitment,
    HashParams,
    InclusionProof,
    KeyRegistry,
    PartialSignature,
    Signature,
)
from .errors import DecodeFailure, InvalidConfig
from .fields import (
    M61,
    CodeParams,
    EvalDomain,
    PrimeField,
    decode_with_errors,
)

BROADCAST_MODES = ("ideal", "echo")
BASE_POLICIES = ("accept", "reject", "coin")

COMMITMENT_PLACEHOLDER = b"\x00" * 36  # "no" votes cast without a known C


@dataclass(frozen=True)
class RoundConfig:
    """Static parameters of one protocol round (and its re-elections)."""

    n: int
    k: int
    f: int
    lam: int
    g: int
    num_clients: int = 8
    d_hash: int = 1
    modulus: int = M61
    delta: int = 2
    gst: int = 0
    tau3: int | None = None
    base_latency: int | None = None
    base_policy: str = "accept"
    broadcast_mode: str = "ideal"
    re_elect: bool = True
    max_rounds: int = 8

    def __post_init__(self):
        CodeParams(self.n, self.k, self.f, self.d_hash)  # raises if invalid
        if self.d_hash != 1:
            raise InvalidConfig("protocol rounds require d_hash = 1")
        if self.lam % 2 == 0 or not 1 <= self.lam <= self.n:
            raise InvalidConfig("lambda must be odd and in [1, N]")
        if self.g < 1:
            raise InvalidConfig("need at least one transaction")
        if self.num_clients < 1:
            raise InvalidConfig("need at least one client")
        if self.delta < 1 or self.gst < 0:
            raise InvalidConfig("delta >= 1 and GST >= 0 required")
        if self.tau3 is not None and self.tau3 < 2 * self.delta:
            raise InvalidConfig("tau3 must be at least 2*delta")
        if self.base_policy not in BASE_POLICIES:
            raise InvalidConfig(f"unknown base policy {self.base_policy!r}")
        if self.broadcast_mode not in BROADCAST_MODES:
            raise InvalidConfig(f"unknown broadcast mode {self.broadcast_mode!r}")
        if self.max_rounds < 1:
            raise InvalidConfig("max_rounds >= 1 required")
        if self.modulus <= self.n + self.k:
            raise InvalidConfig("field too small for the evaluation domain")

    @property
    def code_params(self) -> CodeParams:
        return CodeParams(self.n, self.k, self.f, self.d_hash)

    @property
    def step3_timeout(self) -> int:
        return self.tau3 if self.tau3 is not None else 2 * self.delta

    @property
    def base_round_latency(self) -> int:
        return (
            self.base_latency if self.base_latency is not None else 3 * self.delta
        )

    @property
    def broadcast_bound(self) -> int:
        """Published T_bb of the configured broadcast implementation."""
        if self.broadcast_mode == "ideal":
            return ideal_timeout(self.delta)
        return echo_timeout(self.delta)

    @property
    def round_bound(self) -> int:
        """Published T_round: every honest node is terminal within this
        many ticks of max(round start, GST)."""
        return (
            max(
                self.base_round_latency,
                self.delta + self.step3_timeout + self.broadcast_bound,
            )
            + 2 * self.delta
            + 2
        )


# -- committee selection and leader election ----------------------------


def _seed_rng(seed: bytes) -> random.Random:
    return random.Random(int.from_bytes(hashlib.sha256(seed).digest(), "big"))


def select_committee(seed: bytes, n: int, lam: int) -> tuple[int, ...]:
    """Deterministic, uniform without replacement in a uniform seed;
    every honest node derives the identical roster."""
    if lam > n:
        raise InvalidConfig("committee cannot exceed the node count")
    return tuple(_seed_rng(seed).sample(range(1, n + 1), lam))


def elect_leader(seed: bytes, n: int) -> int:
    return _seed_rng(seed).randint(1, n)


@dataclass(frozen=True)
class RoundInfo:
    """What the beacon announces at the start of an iteration."""

    round_num: int
    leader: int
    committee: tuple[int, ...]
    alpha: int


# -- wire payloads -------------------------------------------------------

_FIELD_ELEMENT_BYTES = 8  # production modulus is 61 bits


def element_bytes(modulus: int) -> int:
    return max((modulus.bit_length() + 7) // 8, 1)


@dataclass(frozen=True)
class BeaconMsg:
    info: RoundInfo
    seed: bytes

    def wire_bytes(self) -> int:
        return 48


@dataclass(frozen=True)
class RevealMsg:
    block_num: int
    block: Block
    proofs: tuple[InclusionProof, ...] | None

    def wire_bytes(self) -> int:
        total = 8 + self.block.g * blockdata.TX_BYTES
        if self.proofs:
            total += sum(p.wire_bytes() for p in self.proofs)
        return total

    def path_bits(self) -> int:
        if not self.proofs:
            return 0
        return sum(len(p.path) * crypto.TAG_BYTES for p in self.proofs) * 8


@dataclass(frozen=True)
class HashMsg:
    round_num: int
    value: int
    element_bytes: int = _FIELD_ELEMENT_BYTES

    def wire_bytes(self) -> int:
        return self.element_bytes


@dataclass(frozen=True)
class PartialMsg:
    block_num: int
    partial: PartialSignature

    def wire_bytes(self) -> int:
        return 8 + 4 + crypto.TAG_BYTES


@dataclass(frozen=True)
class ProofBundle:
    """Client-facing confirmation: commitment, inclusion proof, and the
    node-majority threshold certificate over commitment || block number."""

    block_num: int
    index: int
    tx: Transaction
    commitment: Commitment
    proof: InclusionProof
    sigma: CombinedSignature

    def to_bytes(self) -> bytes:
        return (
            self.block_num.to_bytes(8, "big")
            + self.index.to_bytes(4, "big")
            + self.tx.to_bytes()
            + self.commitment.to_bytes()
            + self.proof.to_bytes()
            + self.sigma.to_bytes()
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ProofBundle":
        if len(raw) < 8 + 4 + blockdata.TX_BYTES + 36 + 5 + 2:
            raise ValueError("bundle too short")
        block_num = int.from_bytes(raw[0:8], "big")
        index = int.from_bytes(raw[8:12], "big")
        off = 12
        tx = Transaction.from_bytes(raw[off : off + blockdata.TX_BYTES])
        off += blockdata.TX_BYTES
        commitment = Commitment.from_bytes(raw[off : off + 36])
        off += 36
        depth = raw[off + 4]
        proof_len = 5 + depth * crypto.TAG_BYTES
        proof = InclusionProof.from_bytes(raw[off : off + proof_len])
        off += proof_len
        sigma = CombinedSignature.from_bytes(raw[off:])
        return cls(block_num, index, tx, commitment, proof, sigma)

    def wire_bytes(self) -> int:
        return (
            8 + 4 + blockdata.TX_BYTES + 36
            + self.proof.wire_bytes()
            + self.sigma.wire_bytes()
        )

    def path_bits(self) -> int:
        return len(self.proof.path) * crypto.TAG_BYTES * 8


# -- votes ---------------------------------------------------------------


def vote_body(bit: int, commitment_bytes: bytes) -> bytes:
    return bytes([bit]) + commitment_bytes


def make_vote_value(
    registry: KeyRegistry, member: int, bit: int, commitment_bytes: bytes
) -> bytes:
    sig = registry.sign(member, vote_body(bit, commitment_bytes))
    return bytes([bit]) + commitment_bytes + sig.signer.to_bytes(4, "big") + sig.tag


def parse_vote_value(value: bytes) -> tuple[int, bytes, Signature] | None:
    if len(value) != 1 + 36 + 4 + crypto.TAG_BYTES:
        return None
    bit = value[0]
    if bit not in (0, 1):
        return None
    commitment_bytes = value[1:37]
    signer = int.from_bytes(value[37:41], "big")
    return bit, commitment_bytes, Signature(signer, value[41:])


def effective_vote(
    registry: KeyRegistry,
    member: int,
    outcome: bytes | None,
    my_commitment: bytes | None,
) -> int:
    """Resolve a vote broadcast outcome to 0/1 as a node counts it.

    Anything that is not a correctly signed "yes" over this node's
    accepted commitment counts as "no": leader-faulty broadcasts,
    malformed values, wrong or unknown commitments, bad signatures.
    """
    if outcome is LEADER_FAULTY or my_commitment is None:
        return 0
    parsed = parse_vote_value(outcome)
    if parsed is None:
        return 0
    bit, commitment_bytes, sig = parsed
    if bit != 1 or commitment_bytes != my_commitment:
        return 0
    if sig.signer != member:
        return 0
    if not registry.verify(vote_body(1, commitment_bytes), sig, member):
        return 0
    return 1


def decide_output(yes: int, no: int, lam: int, base_accepted: bool) -> str:
    """Step 6 terminal rule: accept iff the base round accepted and the
    committee voted yes by majority. With odd lambda and all broadcasts
    resolved, exactly one of the two vote thresholds holds."""
    assert yes + no == lam
    if no >= -(-lam // 2):  # ceil(lam/2)
        return "reject"
    if yes > lam // 2:
        return "accept" if base_accepted else "reject"
    raise AssertionError("unreachable for odd lambda")


# -- protocol checks -----------------------------------------------------


def leader_commit(
    block: Block,
) -> tuple[Commitment, list[InclusionProof]]:
    """Step 2: commitment to the ordered transaction list plus one
    inclusion proof per transaction."""
    messages = [tx.to_bytes() for tx in block.transactions]
    return crypto.commit_with_proofs(messages)


def check_uncoded(
    commitment: Commitment,
    block: Block,
    proofs: Sequence[InclusionProof] | None,
) -> bool:
    """Step 3 committee check: every transaction's proof verifies at its
    index. Missing or short material fails."""
    if proofs is None or len(proofs) != block.g or commitment.length != block.g:
        return False
    for i, (tx, proof) in enumerate(zip(block.transactions, proofs), start=1):
        if not crypto.verify_inclusion(commitment, tx.to_bytes(), i, proof):
            return False
    return True


def consistency_check(
    field: PrimeField,
    domain: EvalDomain,
    params: CodeParams,
    hash_params: HashParams,
    received: dict[int, int],
    revealed_block: Block,
) -> bool:
    """Step 4 committee check: decode the coded-share hashes and compare
    with locally computed hashes of the revealed block's parts.

    `received` maps node id -> hash value; needs at least N - f entries.
    A decode failure means the adversary exceeded its budget or the
    leader was inconsistent, and resolves to a "no" verdict.
    """
    if len(received) < params.n - params.f:
        return False
    points = [
        (domain.node_points[node - 1], value)
        for node, value in sorted(received.items())
    ]
    degree = (params.k - 1) * params.d_hash
    try:
        decoded = decode_with_errors(field, points, degree, params.f)
    except DecodeFailure:
        return False
    parts = blockdata.partition_block(field, revealed_block, params.k)
    for part, omega in zip(parts, domain.data_points):
        local = crypto.poly_hash(field, part.data, hash_params)
        if decoded.evaluate(omega) != local:
            return False
    return True


def verify_bundle(registry: KeyRegistry, bundle: ProofBundle) -> bool:
    """Step 8 client checks: inclusion proof against the commitment, then
    the threshold certificate over commitment || block number."""
    if not crypto.verify_inclusion(
        bundle.commitment, bundle.tx.to_bytes(), bundle.index, bundle.proof
    ):
        return False
    message = bundle.commitment.to_bytes() + bundle.block_num.to_bytes(8, "big")
    return registry.threshold_verify(message, bundle.sigma)


# -- adversary-facing knobs ----------------------------------------------


@dataclass(frozen=True)
class BehaviorFlags:
    """Per-node deviations; everything honest by default."""

    force_vote: int | None = None  # committee member votes this bit
    invert_vote: bool = False  # committee member votes opposite its verdict
    bad_hash: int | None = None  # send this value instead of the real hash
    withhold_signature: bool = False


HONEST = BehaviorFlags()


# -- actions returned by the state machine --------------------------------


@dataclass(frozen=True)
class Send:
    dst: int  # node id, or negative client id
    kind: str
    step: int
    payload: Any


@dataclass(frozen=True)
class StartBroadcast:
    instance: str
    value: bytes | None  # None: stay silent (Byzantine initiator)
    per_recipient: dict[int, bytes] | None = None  # echo-mode equivocation


@dataclass(frozen=True)
class ArmTimer:
    at: int
    label: str
    data: tuple = ()


@dataclass(frozen=True)
class Output:
    value: str


Action = Send | StartBroadcast | ArmTimer | Output


class NodeMachine:
    """Sequential per-node state machine executing one round iteration.

    Every handler takes the current tick and returns a list of Actions.
    The terminal output is written at most once.
    """

    def __init__(
        self,
        cfg: RoundConfig,
        registry: KeyRegistry,
        field: PrimeField,
        domain: EvalDomain,
        me: int,
        coded_part: tuple[int, ...],
        flags: BehaviorFlags = HONEST,
        leader_material: "LeaderMaterial | None" = None,
    ):
        self.cfg = cfg
        self.registry = registry
        self.field = field
        self.domain = domain
        self.me = me
        self.coded_part = coded_part
        self.flags = flags
        self.leader_material = leader_material

        self.info: RoundInfo | None = None
        self.is_leader = False
        self.is_committee = False

        self.commitment_bytes: bytes | None = None
        self.commit_resolved = False
        self.reveal: RevealMsg | None = None
        self.hashes: dict[int, int] = {}
        self.verdict_uncoded: bool | None = None
        self.verdict_coded: bool | None = None
        self.vote_cast = False
        self.vote_results: dict[int, bytes | None] = {}
        self.base_accepted: bool | None = None
        self.partials: dict[int, PartialSignature] = {}
        self.aggregated = False
        self.output: str | None = None
        self.output_time: int | None = None
        self.transitions: list[tuple[int, str]] = []

    # -- helpers --

    def _note(self, now: int, what: str) -> None:
        self.transitions.append((now, what))

    def _vote_instance(self, member: int) -> str:
        assert self.info is not None
        return f"vote/{self.info.round_num}/{member}"

    def _commit_instance(self) -> str:
        assert self.info is not None
        return f"commit/{self.info.round_num}"

    # -- event handlers --

    def on_beacon(self, now: int, msg: BeaconMsg) -> list[Action]:
        info = msg.info
        self.info = info
        self.is_leader = info.leader == self.me
        self.is_committee = self.me in info.committee
        actions: list[Action] = []

        # Step 4 duty of every node: hash the coded share for the committee.
        value = crypto.poly_hash(
            self.field, self.coded_part, HashParams(info.alpha)
        )
        if self.flags.bad_hash is not None:
            value = self.flags.bad_hash
            self._note(now, f"adversary bad-hash {value}")
        hash_msg = HashMsg(
            info.round_num, value, element_bytes(self.field.modulus)
        )
        for member in info.committee:
            actions.append(Send(member, "hash", 4, hash_msg))

        # Deadline after which missing step-2/3 material means "vote no",
        # measured from this node's view of step-1 completion.
        actions.append(
            ArmTimer(now + self.cfg.step3_timeout, "step3-deadline")
        )
        for member in info.committee:
            actions.append(
                ArmTimer(
                    now + self.cfg.step3_timeout + self.cfg.broadcast_bound,
                    "bb-deadline",
                    (self._vote_instance(member),),
                )
            )
        actions.append(
            ArmTimer(now + self.cfg.step3_timeout, "bb-deadline",
                     (self._commit_instance(),))
        )

        if self.is_leader:
            actions.extend(self._leader_actions(now))
        return actions

    def _leader_actions(self, now: int) -> list[Action]:
        material = self.leader_material
        assert material is not None, "leader machine needs leader material"
        if material.silent:
            self._note(now, "adversary leader-stall")
            return [StartBroadcast(self._commit_instance(), None)]
        commitment, proofs = leader_commit(material.announced_block)
        actions: list[Action] = [
            StartBroadcast(self._commit_instance(), commitment.to_bytes())
        ]
        reveal = RevealMsg(
            material.announced_block.block_num,
            material.announced_block,
            None if material.withhold_proofs else tuple(proofs),
        )
        if material.withhold_proofs:
            self._note(now, "adversary withhold-proofs")
        assert self.info is not None
        for member in self.info.committee:
            actions.append(Send(member, "reveal", 3, reveal))
        return actions

    def on_reveal(self, now: int, msg: RevealMsg) -> list[Action]:
        if not self.is_committee or self.reveal is not None:
            return []
        self.reveal = msg
        return self._try_checks(now)

    def on_hash(self, now: int, src: int, msg: HashMsg) -> list[Action]:
        if not self.is_committee or src in self.hashes:
            return []
        self.hashes[src] = msg.value
        return self._try_checks(now)

    def on_bb_resolved(
        self, now: int, instance: str, outcome: bytes | None
    ) -> list[Action]:
        assert self.info is not None
        actions: list[Action] = []
        if instance == self._commit_instance():
            if not self.commit_resolved:
                self.commit_resolved = True
                self.commitment_bytes = (
                    outcome if isinstance(outcome, bytes) else None
                )
                self._note(now, "commitment " + (
                    "accepted" if self.commitment_bytes else "leader-faulty"))
                actions.extend(self._try_checks(now))
        else:
            member = int(instance.rsplit("/", 1)[1])
            if member not in self.vote_results:
                self.vote_results[member] = outcome
                actions.extend(self._try_step6(now))
        return actions

    def on_base_outcome(self, now: int, accepted: bool) -> list[Action]:
        if self.base_accepted is None:
            self.base_accepted = accepted
            self._note(now, f"base round {'accepted' if accepted else 'rejected'}")
        return self._try_step6(now)

    def on_timer(self, now: int, label: str, data: tuple) -> list[Action]:
        if label == "step3-deadline":
            return self._on_step3_deadline(now)
        return []

    def _on_step3_deadline(self, now: int) -> list[Action]:
        if not self.is_committee or self.vote_cast:
            return []
        if self.verdict_uncoded is None:
            self.verdict_uncoded = False
            self._note(now, "step3 timeout: material incomplete")
        if self.verdict_coded is None:
            self.verdict_coded = False
            self._note(now, "step4 timeout: not enough hashes")
        return self._cast_vote(now)

    # -- committee checks --

    def _try_checks(self, now: int) -> list[Action]:
        if not self.is_committee or self.vote_cast:
            return []
        if (
            self.verdict_uncoded is None
            and self.commit_resolved
            and self.reveal is not None
        ):
            if self.commitment_bytes is None:
                self.verdict_uncoded = False
            else:
                commitment = Commitment.from_bytes(self.commitment_bytes)
                ok = check_uncoded(commitment, self.reveal.block, self.reveal.proofs)
                self.verdict_uncoded = ok
            self._note(now, f"step3 verdict {self.verdict_uncoded}")
        if (
            self.verdict_coded is None
            and self.reveal is not None
            and len(self.hashes) >= self.cfg.n - self.cfg.f
        ):
            assert self.info is not None
            self.verdict_coded = consistency_check(
                self.field,
                self.domain,
                self.cfg.code_params,
                HashParams(self.info.alpha),
                self.hashes,
                self.reveal.block,
            )
            self._note(now, f"step4 verdict {self.verdict_coded}")
        if self.verdict_uncoded is not None and self.verdict_coded is not None:
            return self._cast_vote(now)
        return []

    def _cast_vote(self, now: int) -> list[Action]:
        if self.vote_cast:
            return []
        self.vote_cast = True
        verdict = bool(self.verdict_uncoded) and bool(self.verdict_coded)
        bit = 1 if verdict else 0
        if self.flags.invert_vote:
            bit = 1 - bit
            self._note(now, f"adversary inverts vote to {bit}")
        elif self.flags.force_vote is not None:
            bit = self.flags.force_vote
            self._note(now, f"adversary forces vote {bit}")
        commitment_bytes = self.commitment_bytes or COMMITMENT_PLACEHOLDER
        value = make_vote_value(self.registry, self.me, bit, commitment_bytes)
        self._note(now, f"vote {bit}")
        return [StartBroadcast(self._vote_instance(self.me), value)]

    # -- step 6: tally, sign, output --

    def _try_step6(self, now: int) -> list[Action]:
        assert self.info is not None
        if self.output is not None or self.base_accepted is None:
            return []
        if len(self.vote_results) < len(self.info.committee):
            return []
        yes = sum(
            effective_vote(
                self.registry, m, self.vote_results[m], self.commitment_bytes
            )
            for m in self.info.committee
        )
        no = self.cfg.lam - yes
        decision = decide_output(yes, no, self.cfg.lam, self.base_accepted)
        self.output = decision
        self.output_time = now
        self._note(now, f"output {decision} (yes={yes}, no={no})")
        actions: list[Action] = [Output(decision)]
        if decision == "accept" and not self.flags.withhold_signature:
            assert self.commitment_bytes is not None
            message = (
                self.commitment_bytes
                + self.info.round_num.to_bytes(8, "big")
            )
            partial = self.registry.threshold_sign(self.me, message)
            msg = PartialMsg(self.info.round_num, partial)
            for member in self.info.committee:
                actions.append(Send(member, "partial", 6, msg))
        elif self.flags.withhold_signature and decision == "accept":
            self._note(now, "adversary withholds partial signature")
        return actions

    # -- step 7: aggregate and distribute --

    def on_partial(self, now: int, src: int, msg: PartialMsg) -> list[Action]:
        if not self.is_committee or self.aggregated:
            return []
        assert self.info is not None
        if self.commitment_bytes is None or msg.block_num != self.info.round_num:
            return []
        message = self.commitment_bytes + self.info.round_num.to_bytes(8, "big")
        if msg.partial.signer != src:
            return []
        if not self.registry.verify_partial(message, msg.partial):
            return []
        self.partials[src] = msg.partial
        if len(self.partials) < self.registry.t + 1:
            return []
        if self.reveal is None or self.reveal.proofs is None:
            return []  # nothing to distribute without step-3 material
        self.aggregated = True
        sigma = self.registry.combine(message, list(self.partials.values()))
        self._note(now, f"combined {len(self.partials)} partials")
        commitment = Commitment.from_bytes(self.commitment_bytes)
        actions: list[Action] = []
        for i, tx in enumerate(self.reveal.block.transactions, start=1):
            bundle = ProofBundle(
                self.info.round_num, i, tx, commitment,
                self.reveal.proofs[i - 1], sigma,
            )
            for client in {tx.sender, tx.receiver}:
                actions.append(Send(-client, "bundle", 7, bundle))
        return actions


@dataclass(frozen=True)
class LeaderMaterial:
    """What the round leader commits to and reveals. The announced block
    equals the encoded block for an honest leader; adversary strategies
    substitute a mutated block, drop proofs, or stay silent."""

    announced_block: Block
    withhold_proofs: bool = False
    silent: bool = False


class ClientBox:
    """Step 8 client state: per (sending node, transaction index), only
    the first bundle is ever considered; the rest are counted and
    dropped."""

    def __init__(self, client_id: int):
        self.client_id = client_id
        self.considered: dict[tuple[int, int], ProofBundle] = {}
        self.ignored = 0
        self.received = 0

    def on_bundle(self, src: int, bundle: ProofBundle) -> None:
        self.received += 1
        key = (src, bundle.index)
        if key in self.considered:
            self.ignored += 1
            return
        self.considered[key] = bundle

    def confirmed_indices(self, registry: KeyRegistry) -> set[int]:
        out = set()
        for (_, index), bundle in self.considered.items():
            if index not in out and verify_bundle(registry, bundle):
                out.add(index)
        return out

    def verification_attempts(self) -> int:
        return len(self.considered)
