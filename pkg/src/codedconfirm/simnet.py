"""Deterministic discrete-event simulator for confirmation rounds.

Time is integer ticks. Message delivery is adversary-controlled before
GST (within a bounded policy menu) and takes at most delta ticks after.
A simulation is a pure function of (config, adversary spec, seed): the
whole trace, bit for bit, replays on identical inputs.

Node ids are 1..N; clients are addressed as negative ids; id 0 is the
system (beacon) source.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import time as _time
from dataclasses import dataclass, replace
from typing import Any

from . import blockdata, protocol
from .broadcast import (
    LEADER_FAULTY,
    BBEcho,
    BBVal,
    BroadcastCostModel,
    EchoNode,
    make_val,
)
from .crypto import KeyRegistry
from .errors import DuplicateInstance, HarnessViolation, InvalidConfig
from .fields import EvalDomain, PrimeField, encode_parts
from .protocol import (
    ArmTimer,
    BeaconMsg,
    BehaviorFlags,
    ClientBox,
    LeaderMaterial,
    NodeMachine,
    Output,
    RoundConfig,
    RoundInfo,
    Send,
    StartBroadcast,
)

ENVELOPE_OVERHEAD_BYTES = 64

ADVERSARY_CATALOG = (
    "honest",
    "leader-equivocate",
    "leader-withhold-proofs",
    "leader-stall",
    "committee-false-vote",
    "node-bad-hash",
    "node-withhold-signature",
    "combined",
)

PRE_GST_POLICIES = ("fast", "gst-release", "hold-protocol", "lag")

_LEADER_STRATEGIES = (
    "leader-equivocate",
    "leader-withhold-proofs",
    "leader-stall",
    "combined",
)


def _derive(seed: int, *labels: bytes) -> bytes:
    h = hashlib.sha256()
    h.update(seed.to_bytes(16, "big", signed=True))
    for label in labels:
        h.update(b"\x00")
        h.update(label)
    return h.digest()


def _rng(seed: int, *labels: bytes) -> random.Random:
    return random.Random(int.from_bytes(_derive(seed, *labels), "big"))


@dataclass(frozen=True)
class AdversarySpec:
    """Which nodes misbehave and how the network is abused before GST.

    targeting "prescient" lets the adversary read the round's beacon
    draws before corrupting (it knows who will lead), which is the
    harshest single-round test; "prior" corrupts blind, before the draws,
    matching the non-adaptive model and making leader re-election
    effective. "auto" picks prescient for targeted strategies.
    """

    strategy: str = "honest"
    targeting: str = "auto"
    pre_gst_policy: str = "fast"
    lag: int = 4

    def __post_init__(self):
        if self.strategy not in ADVERSARY_CATALOG:
            raise InvalidConfig(f"unknown adversary strategy {self.strategy!r}")
        if self.targeting not in ("auto", "prescient", "prior"):
            raise InvalidConfig(f"unknown targeting {self.targeting!r}")
        if self.pre_gst_policy not in PRE_GST_POLICIES:
            raise InvalidConfig(f"unknown pre-GST policy {self.pre_gst_policy!r}")

    @property
    def effective_targeting(self) -> str:
        if self.targeting != "auto":
            return self.targeting
        return "prescient"


@dataclass(slots=True)
class Envelope:
    seq: int
    src: int
    dst: int
    kind: str
    step: int
    send_time: int
    deliver_time: int
    wire_bits: int
    payload: Any
    path_bits: int = 0


@dataclass(slots=True)
class BBInstanceRecord:
    instance: str
    step: int
    initiator: int
    value_bytes: int
    modeled_bits: int
    mode: str


@dataclass
class Beacon:
    """Shared randomness sequence; every honest node derives the same
    values, so leader, committee, and alpha need no coordination."""

    seed: bytes

    def draw(self, round_num: int, label: bytes) -> bytes:
        h = hashlib.sha256()
        h.update(self.seed)
        h.update(round_num.to_bytes(8, "big"))
        h.update(label)
        return h.digest()

    def round_info(self, round_num: int, cfg: RoundConfig, field: PrimeField) -> RoundInfo:
        leader = protocol.elect_leader(self.draw(round_num, b"leader"), cfg.n)
        committee = protocol.select_committee(
            self.draw(round_num, b"committee"), cfg.n, cfg.lam
        )
        alpha = (
            int.from_bytes(self.draw(round_num, b"alpha"), "big")
            % (field.modulus - 1)
        ) + 1
        return RoundInfo(round_num, leader, committee, alpha)


class AdversaryController:
    """Chooses the corrupted set prior to each round iteration (within
    the f budget), assigns behavior flags, and fixes pre-GST delays."""

    def __init__(self, spec: AdversarySpec, cfg: RoundConfig, seed: int):
        self.spec = spec
        self.cfg = cfg
        self._rng = _rng(seed, b"adversary")
        self.events: list[tuple[int, str]] = []

    def corrupted_for_round(
        self, iteration: int, leader: int, committee: tuple[int, ...]
    ) -> tuple[int, ...]:
        cfg, spec = self.cfg, self.spec
        if spec.strategy == "honest" or cfg.f == 0:
            return ()
        committee_cap = (cfg.lam - 1) // 2
        if spec.effective_targeting == "prior":
            # Blind draw before the beacon reveals the round's roles.
            chosen = sorted(self._rng.sample(range(1, cfg.n + 1), cfg.f))
            return tuple(chosen)

        chosen: list[int] = []
        in_committee = 0
        if spec.strategy in _LEADER_STRATEGIES:
            chosen.append(leader)
            if leader in committee:
                in_committee += 1
        if spec.strategy in ("committee-false-vote", "combined"):
            for member in sorted(committee):
                if len(chosen) >= cfg.f or in_committee >= committee_cap:
                    break
                if member not in chosen:
                    chosen.append(member)
                    in_committee += 1
        if spec.strategy in ("node-bad-hash", "node-withhold-signature", "combined"):
            for node in range(1, cfg.n + 1):
                if len(chosen) >= cfg.f:
                    break
                if node != leader and node not in committee and node not in chosen:
                    chosen.append(node)
        if len(chosen) > cfg.f:
            raise HarnessViolation(
                f"attempted to corrupt {len(chosen)} nodes with f={cfg.f}"
            )
        return tuple(sorted(chosen))

    def behavior(
        self,
        node: int,
        corrupted: tuple[int, ...],
        leader: int,
        committee: tuple[int, ...],
        field: PrimeField,
    ) -> BehaviorFlags:
        if node not in corrupted:
            return protocol.HONEST
        strategy = self.spec.strategy
        force_vote = None
        invert_vote = False
        if node in committee:
            if strategy in _LEADER_STRATEGIES:
                force_vote = 1  # push the bad leader's commitment through
            elif strategy == "committee-false-vote":
                invert_vote = True
        bad_hash = None
        if strategy in ("node-bad-hash", "combined"):
            bad_hash = self._rng.randrange(field.modulus)
        withhold_signature = strategy == "node-withhold-signature"
        return BehaviorFlags(
            force_vote=force_vote,
            invert_vote=invert_vote,
            bad_hash=bad_hash,
            withhold_signature=withhold_signature,
        )

    def leader_material(
        self, block: blockdata.Block, leader: int, corrupted: tuple[int, ...]
    ) -> LeaderMaterial:
        if leader not in corrupted:
            return LeaderMaterial(block)
        strategy = self.spec.strategy
        if strategy in ("leader-equivocate", "combined"):
            first = block.transactions[0]
            mutated = replace(first, amount=first.amount + 1)
            announced = blockdata.Block(
                block.block_num, (mutated,) + block.transactions[1:]
            )
            return LeaderMaterial(announced)
        if strategy == "leader-withhold-proofs":
            return LeaderMaterial(block, withhold_proofs=True)
        if strategy == "leader-stall":
            return LeaderMaterial(block, silent=True)
        return LeaderMaterial(block)

    def delivery_time(self, rng: random.Random, kind: str, send_time: int) -> int:
        cfg, spec = self.cfg, self.spec
        if send_time >= cfg.gst:
            return send_time + rng.randint(1, cfg.delta)
        policy = spec.pre_gst_policy
        if policy == "fast":
            deliver = send_time + rng.randint(1, cfg.delta)
        elif policy == "gst-release":
            deliver = cfg.gst + rng.randint(1, cfg.delta)
        elif policy == "hold-protocol":
            if kind == "beacon":
                deliver = send_time + rng.randint(1, cfg.delta)
            else:
                deliver = cfg.gst + rng.randint(1, cfg.delta)
        else:  # lag
            deliver = send_time + max(1, spec.lag)
        return max(send_time + 1, min(deliver, cfg.gst + cfg.delta))


@dataclass
class RoundRecord:
    iteration: int
    t_start: int
    leader: int
    committee: tuple[int, ...]
    corrupted: tuple[int, ...]
    alpha: int
    block: blockdata.Block
    base_accepted: bool
    commitment_hex: str
    announced_differs: bool
    outputs: dict[int, str]
    output_times: dict[int, int]
    envelopes: list[Envelope]
    bb_instances: list[BBInstanceRecord]
    clients: dict[int, ClientBox]
    adversary_events: list[tuple[int, str]]
    transitions: dict[int, list[tuple[int, str]]]
    end_time: int

    def honest_nodes(self) -> list[int]:
        corrupt = set(self.corrupted)
        return [n for n in sorted(self.outputs) if n not in corrupt]

    def honest_outputs(self) -> set[str]:
        return {self.outputs[n] for n in self.honest_nodes()}

    @property
    def accepted(self) -> bool:
        return self.honest_outputs() == {"accept"}


@dataclass
class RoundTrace:
    config: RoundConfig
    adversary: AdversarySpec
    seed: int
    key_seed: bytes
    rounds: list[RoundRecord]
    wall_clock_s: float = 0.0

    @property
    def final(self) -> RoundRecord:
        return self.rounds[-1]

    @property
    def accepted(self) -> bool:
        return self.final.accepted

    def iterations(self) -> int:
        return len(self.rounds)

    def to_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")

    def jsonl_lines(self) -> list[str]:
        lines = []
        head = {
            "type": "trace",
            "seed": self.seed,
            "strategy": self.adversary.strategy,
            "n": self.config.n,
            "k": self.config.k,
            "f": self.config.f,
            "lambda": self.config.lam,
            "g": self.config.g,
            "iterations": self.iterations(),
        }
        lines.append(json.dumps(head, sort_keys=True))
        for rec in self.rounds:
            lines.append(json.dumps({
                "type": "round",
                "iteration": rec.iteration,
                "start": rec.t_start,
                "leader": rec.leader,
                "committee": list(rec.committee),
                "corrupted": list(rec.corrupted),
                "alpha": rec.alpha,
                "base_accepted": rec.base_accepted,
                "commitment": rec.commitment_hex,
                "end": rec.end_time,
            }, sort_keys=True))
            for env in rec.envelopes:
                lines.append(json.dumps({
                    "type": "deliver",
                    "iteration": rec.iteration,
                    "seq": env.seq,
                    "src": env.src,
                    "dst": env.dst,
                    "kind": env.kind,
                    "step": env.step,
                    "sent": env.send_time,
                    "at": env.deliver_time,
                    "bits": env.wire_bits,
                }, sort_keys=True))
            for inst in rec.bb_instances:
                lines.append(json.dumps({
                    "type": "broadcast",
                    "iteration": rec.iteration,
                    "instance": inst.instance,
                    "step": inst.step,
                    "initiator": inst.initiator,
                    "modeled_bits": inst.modeled_bits,
                    "mode": inst.mode,
                }, sort_keys=True))
            for node, items in sorted(rec.transitions.items()):
                for t, what in items:
                    lines.append(json.dumps({
                        "type": "transition", "iteration": rec.iteration,
                        "node": node, "at": t, "what": what,
                    }, sort_keys=True))
            for node in sorted(rec.outputs):
                lines.append(json.dumps({
                    "type": "output", "iteration": rec.iteration,
                    "node": node, "value": rec.outputs[node],
                    "at": rec.output_times.get(node),
                }, sort_keys=True))
            for t, what in rec.adversary_events:
                lines.append(json.dumps({
                    "type": "adversary", "iteration": rec.iteration,
                    "at": t, "what": what,
                }, sort_keys=True))
        return lines


class _BroadcastManager:
    """Routes both broadcast implementations and enforces the ideal
    functionality's agreement: one global outcome per instance.

    An instance a node gives up on before anyone started it is marked
    dead for everyone; a started instance resolves to its single recorded
    value at every node (on delivery or at the node's deadline,
    whichever is first)."""

    def __init__(self, sim: "_Iteration"):
        self.sim = sim
        self.mode = sim.cfg.broadcast_mode
        self.cost_model = BroadcastCostModel()
        self.instances: dict[str, dict] = {}
        self.dead: set[str] = set()
        self.resolved: dict[tuple[int, str], bytes | None] = {}
        self.echo_nodes: dict[tuple[int, str], EchoNode] = {}

    @staticmethod
    def _step_of(instance: str) -> int:
        return 2 if instance.startswith("commit/") else 5

    def start(self, now: int, initiator: int, action: StartBroadcast) -> None:
        if action.instance in self.instances:
            raise DuplicateInstance(f"instance {action.instance} reused")
        step = self._step_of(action.instance)
        values = {}
        if action.per_recipient is not None:
            values = dict(action.per_recipient)
        elif action.value is not None:
            values = {node: action.value for node in range(1, self.sim.cfg.n + 1)}
        value_bytes = max((len(v) for v in values.values()), default=0)
        modeled = (
            self.cost_model.modeled_bits(self.sim.cfg.n, value_bytes)
            if values else 0
        )
        self.instances[action.instance] = {
            "initiator": initiator,
            "value": action.value,
            "started": now,
        }
        self.sim.bb_instances.append(BBInstanceRecord(
            action.instance, step, initiator, value_bytes, modeled, self.mode
        ))
        if action.instance in self.dead or not values:
            return
        if self.mode == "ideal":
            if action.per_recipient is not None:
                raise HarnessViolation(
                    "ideal broadcast cannot deliver per-recipient values"
                )
            for node in range(1, self.sim.cfg.n + 1):
                self.sim.send(
                    initiator, node, "bb-deliver", step,
                    _BBDeliver(action.instance, action.value), wire_bits=0,
                )
        else:
            registry = self.sim.registry
            for node in range(1, self.sim.cfg.n + 1):
                value = values.get(node)
                if value is None:
                    continue
                msg = make_val(registry, action.instance, initiator, value)
                self.sim.send(initiator, node, "bb-val", step, msg)

    def _machine(self, node: int, instance: str, initiator: int) -> EchoNode:
        key = (node, instance)
        if key not in self.echo_nodes:
            self.echo_nodes[key] = EchoNode(
                self.sim.registry, self.sim.cfg.n, self.sim.cfg.f,
                instance, node, initiator,
            )
        return self.echo_nodes[key]

    def on_deliver(self, now: int, node: int, env: Envelope) -> None:
        if env.kind == "bb-deliver":
            payload: _BBDeliver = env.payload
            if payload.instance in self.dead:
                return
            self._resolve(now, node, payload.instance, payload.value)
            return
        msg = env.payload
        machine = self._machine(node, msg.instance, msg.initiator)
        if isinstance(msg, BBVal):
            step = self._step_of(msg.instance)
            for echo in machine.on_val(msg):
                for dst in range(1, self.sim.cfg.n + 1):
                    self.sim.send(node, dst, "bb-echo", step, echo)
        elif isinstance(msg, BBEcho):
            machine.on_echo(msg)
        if machine.resolved:
            self._resolve(now, node, msg.instance, machine.outcome)

    def on_deadline(self, now: int, node: int, instance: str) -> None:
        if (node, instance) in self.resolved:
            return
        if self.mode == "ideal":
            inst = self.instances.get(instance)
            if (
                inst is not None
                and inst["value"] is not None
                and instance not in self.dead
            ):
                self._resolve(now, node, instance, inst["value"])
            else:
                self.dead.add(instance)
                self._resolve(now, node, instance, LEADER_FAULTY)
            return
        machine = self.echo_nodes.get((node, instance))
        if machine is None:
            self._resolve(now, node, instance, LEADER_FAULTY)
            return
        machine.on_deadline()
        self._resolve(now, node, instance, machine.outcome)

    def _resolve(
        self, now: int, node: int, instance: str, outcome: bytes | None
    ) -> None:
        key = (node, instance)
        if key in self.resolved:
            return
        self.resolved[key] = outcome
        actions = self.sim.machines[node].on_bb_resolved(now, instance, outcome)
        self.sim.apply_actions(now, node, actions)


@dataclass(frozen=True)
class _BBDeliver:
    instance: str
    value: bytes

    def wire_bytes(self) -> int:
        return len(self.value)


class _Iteration:
    """One protocol iteration (one leader, one committee, one block)."""

    def __init__(
        self,
        cfg: RoundConfig,
        registry: KeyRegistry,
        field: PrimeField,
        domain: EvalDomain,
        beacon: Beacon,
        controller: AdversaryController,
        seed: int,
        iteration: int,
        t_start: int,
    ):
        self.cfg = cfg
        self.registry = registry
        self.field = field
        self.domain = domain
        self.controller = controller
        self.iteration = iteration
        self.t_start = t_start

        self.rng_delay = _rng(seed, b"delay", iteration.to_bytes(4, "big"))
        rng_block = _rng(seed, b"block", iteration.to_bytes(4, "big"))
        rng_base = _rng(seed, b"base", iteration.to_bytes(4, "big"))

        self.info = beacon.round_info(iteration, cfg, field)
        self.corrupted = controller.corrupted_for_round(
            iteration, self.info.leader, self.info.committee
        )
        self.block = blockdata.random_block(
            rng_block, cfg.g, iteration, cfg.num_clients
        )
        parts = blockdata.partition_block(field, self.block, cfg.k)
        coded = encode_parts([p.data for p in parts], domain)

        if cfg.base_policy == "accept":
            self.base_accepted = True
        elif cfg.base_policy == "reject":
            self.base_accepted = False
        else:
            self.base_accepted = rng_base.random() < 0.5

        material = controller.leader_material(
            self.block, self.info.leader, self.corrupted
        )
        self.announced_differs = material.announced_block != self.block
        commitment_hex = ""
        if not material.silent:
            commitment, _ = protocol.leader_commit(material.announced_block)
            commitment_hex = commitment.root.hex()
        self.commitment_hex = commitment_hex

        self.machines: dict[int, NodeMachine] = {}
        for node in range(1, cfg.n + 1):
            flags = controller.behavior(
                node, self.corrupted, self.info.leader, self.info.committee, field
            )
            self.machines[node] = NodeMachine(
                cfg, registry, field, domain, node,
                tuple(coded[node - 1]), flags,
                material if node == self.info.leader else None,
            )

        self.clients: dict[int, ClientBox] = {}
        self.outputs: dict[int, str] = {}
        self.output_times: dict[int, int] = {}
        self.envelopes: list[Envelope] = []
        self.bb_instances: list[BBInstanceRecord] = []
        self.manager = _BroadcastManager(self)

        self._heap: list[tuple[int, int, str, tuple]] = []
        self._seq = 0
        self.now = t_start
        self.end_time = t_start

    # -- scheduling --

    def _push(self, at: int, kind: str, data: tuple) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (at, self._seq, kind, data))

    def send(
        self,
        src: int,
        dst: int,
        kind: str,
        step: int,
        payload: Any,
        wire_bits: int | None = None,
    ) -> None:
        if wire_bits is None:
            wire_bits = (payload.wire_bytes() + ENVELOPE_OVERHEAD_BYTES) * 8
        deliver = self.controller.delivery_time(self.rng_delay, kind, self.now)
        path_bits = payload.path_bits() if hasattr(payload, "path_bits") else 0
        self._seq += 1
        env = Envelope(
            self._seq, src, dst, kind, step, self.now, deliver,
            wire_bits, payload, path_bits,
        )
        self.envelopes.append(env)
        heapq.heappush(self._heap, (deliver, self._seq, "env", (env,)))

    def apply_actions(self, now: int, node: int, actions) -> None:
        for action in actions:
            if isinstance(action, Send):
                self.send(node, action.dst, action.kind, action.step, action.payload)
            elif isinstance(action, StartBroadcast):
                self.manager.start(now, node, action)
            elif isinstance(action, ArmTimer):
                self._push(action.at, "timer", (node, action.label, action.data))
            elif isinstance(action, Output):
                if node not in self.outputs:
                    self.outputs[node] = action.value
                    self.output_times[node] = now

    # -- run --

    def run(self) -> RoundRecord:
        cfg = self.cfg
        for node in range(1, cfg.n + 1):
            self.send(
                0, node, "beacon", 1,
                BeaconMsg(self.info, _derive(self.iteration, b"beacon-wire")),
            )
        base_at = max(self.t_start, cfg.gst) + cfg.base_round_latency
        for node in range(1, cfg.n + 1):
            self._push(base_at, "base", (node,))

        valve = max(self.t_start, cfg.gst) + cfg.round_bound + 20 * cfg.delta + 50
        while self._heap:
            at, _, kind, data = heapq.heappop(self._heap)
            if at > valve:
                raise HarnessViolation(
                    f"simulation ran past its bound (t={at}); deadlock?"
                )
            self.now = at
            self.end_time = max(self.end_time, at)
            if kind == "env":
                (env,) = data
                self._dispatch(env)
            elif kind == "timer":
                node, label, tdata = data
                if label == "bb-deadline":
                    self.manager.on_deadline(at, node, tdata[0])
                else:
                    actions = self.machines[node].on_timer(at, label, tdata)
                    self.apply_actions(at, node, actions)
            elif kind == "base":
                (node,) = data
                actions = self.machines[node].on_base_outcome(
                    at, self.base_accepted
                )
                self.apply_actions(at, node, actions)

        transitions = {
            node: machine.transitions for node, machine in self.machines.items()
        }
        return RoundRecord(
            iteration=self.iteration,
            t_start=self.t_start,
            leader=self.info.leader,
            committee=self.info.committee,
            corrupted=self.corrupted,
            alpha=self.info.alpha,
            block=self.block,
            base_accepted=self.base_accepted,
            commitment_hex=self.commitment_hex,
            announced_differs=self.announced_differs,
            outputs=self.outputs,
            output_times=self.output_times,
            envelopes=self.envelopes,
            bb_instances=self.bb_instances,
            clients=self.clients,
            adversary_events=list(self.controller.events),
            transitions=transitions,
            end_time=self.end_time,
        )

    def _dispatch(self, env: Envelope) -> None:
        now = env.deliver_time
        if env.dst < 0:
            box = self.clients.setdefault(-env.dst, ClientBox(-env.dst))
            box.on_bundle(env.src, env.payload)
            return
        if env.kind in ("bb-deliver", "bb-val", "bb-echo"):
            self.manager.on_deliver(now, env.dst, env)
            return
        machine = self.machines[env.dst]
        if env.kind == "beacon":
            actions = machine.on_beacon(now, env.payload)
        elif env.kind == "reveal":
            actions = machine.on_reveal(now, env.payload)
        elif env.kind == "hash":
            actions = machine.on_hash(now, env.src, env.payload)
        elif env.kind == "partial":
            actions = machine.on_partial(now, env.src, env.payload)
        else:
            raise HarnessViolation(f"unroutable envelope kind {env.kind!r}")
        self.apply_actions(now, env.dst, actions)


def run_round(
    cfg: RoundConfig,
    adversary: AdversarySpec | None = None,
    seed: int = 0,
) -> RoundTrace:
    """Execute a full confirmation round, re-electing on rejection when
    configured, and return the complete deterministic trace."""
    adversary = adversary or AdversarySpec()
    started = _time.perf_counter()
    field = PrimeField(cfg.modulus)
    domain = EvalDomain.default(field, cfg.n, cfg.k)
    key_seed = _derive(seed, b"keys")
    registry = KeyRegistry(cfg.n, key_seed)
    beacon = Beacon(_derive(seed, b"beacon"))
    controller = AdversaryController(adversary, cfg, seed)

    rounds: list[RoundRecord] = []
    t_start = 0
    for iteration in range(cfg.max_rounds):
        record = _Iteration(
            cfg, registry, field, domain, beacon, controller,
            seed, iteration, t_start,
        ).run()
        rounds.append(record)
        if record.accepted or not cfg.re_elect:
            break
        t_start = record.end_time + cfg.delta
    trace = RoundTrace(cfg, adversary, seed, key_seed, rounds)
    trace.wall_clock_s = _time.perf_counter() - started
    return trace
