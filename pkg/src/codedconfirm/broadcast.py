"""Partially synchronous Byzantine broadcast.

Two interchangeable implementations:

* the IDEAL functionality (default): the simulator records the
  initiator's single value and delivers it to every honest node, so
  agreement / validity / termination hold by construction and the bit
  cost is charged from a model, matching how the protocol analysis
  treats broadcast as an assumed service;

* a concrete signed-echo protocol used to validate that nothing above
  relies on super-natural broadcast powers: the initiator signs its
  value, every node echoes the first valid value it sees, a node accepts
  a value on N-f matching echoes, and proof of initiator equivocation or
  a deadline expiry resolves the instance as leader-faulty.

A resolution outcome is either the accepted value (bytes) or
LEADER_FAULTY (None).
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import KeyRegistry, Signature

LEADER_FAULTY = None

_INSTANCE_ID_BYTES = 16
_SIG_BYTES = 4 + 32  # signer id + tag


def ideal_timeout(delta: int) -> int:
    """Worst-case ticks from an instance's latest protocol-mandated start
    until resolution at every honest node, ideal implementation."""
    return 2 * delta


def echo_timeout(delta: int) -> int:
    """As ideal_timeout, for the signed-echo implementation: one hop for
    the value, one for the echoes, one tick-slack hop."""
    return 3 * delta


@dataclass(frozen=True)
class BroadcastCostModel:
    """Modeled bit cost of one broadcast instance: c1*|value| plus
    c2 * N * ceil(log2 N)^2, the view-change-style polylog term."""

    value_coeff_bits_per_byte: int = 8
    node_coeff_bits: int = 768

    def modeled_bits(self, n: int, value_bytes: int) -> int:
        log_n = max(1, (n - 1).bit_length())
        return (
            self.value_coeff_bits_per_byte * value_bytes
            + self.node_coeff_bits * n * log_n * log_n
        )


def _val_body(instance: str, value: bytes) -> bytes:
    return b"bb-val\x00" + instance.encode() + b"\x00" + value


def _echo_body(instance: str, initiator: int, value: bytes) -> bytes:
    return (
        b"bb-echo\x00"
        + instance.encode()
        + initiator.to_bytes(4, "big")
        + value
    )


@dataclass(frozen=True)
class BBVal:
    instance: str
    initiator: int
    value: bytes
    init_sig: Signature

    def wire_bytes(self) -> int:
        return _INSTANCE_ID_BYTES + 4 + len(self.value) + _SIG_BYTES


@dataclass(frozen=True)
class BBEcho:
    instance: str
    initiator: int
    value: bytes
    init_sig: Signature
    echoer: int
    echo_sig: Signature

    def wire_bytes(self) -> int:
        return _INSTANCE_ID_BYTES + 8 + len(self.value) + 2 * _SIG_BYTES


def make_val(
    registry: KeyRegistry, instance: str, initiator: int, value: bytes
) -> BBVal:
    return BBVal(
        instance, initiator, value,
        registry.sign(initiator, _val_body(instance, value)),
    )


def make_echo(registry: KeyRegistry, node: int, val: BBVal) -> BBEcho:
    return BBEcho(
        val.instance,
        val.initiator,
        val.value,
        val.init_sig,
        node,
        registry.sign(node, _echo_body(val.instance, val.initiator, val.value)),
    )


@dataclass
class EchoNode:
    """Per-(node, instance) state machine of the signed-echo protocol.

    Callers fan emitted echoes out to all nodes and invoke on_deadline
    when the instance's view timer fires. Transitions are idempotent and
    the terminal status is written at most once.
    """

    registry: KeyRegistry
    n: int
    f: int
    instance: str
    me: int
    initiator: int

    resolved: bool = False
    outcome: bytes | None = None
    _echoed: bool = field(default=False, repr=False)
    _echoes: dict[bytes, set[int]] = field(default_factory=dict, repr=False)
    _seen_values: dict[bytes, Signature] = field(default_factory=dict, repr=False)

    def _init_sig_ok(self, value: bytes, sig: Signature) -> bool:
        return self.registry.verify(
            _val_body(self.instance, value), sig, self.initiator
        )

    def _note_value(self, value: bytes, sig: Signature) -> None:
        self._seen_values.setdefault(value, sig)
        if len(self._seen_values) > 1 and not self.resolved:
            # Two initiator-signed values: equivocation proof.
            self.resolved = True
            self.outcome = LEADER_FAULTY

    def _count(self, value: bytes, echoer: int) -> None:
        self._echoes.setdefault(value, set()).add(echoer)
        if (
            not self.resolved
            and len(self._echoes[value]) >= self.n - self.f
        ):
            self.resolved = True
            self.outcome = value

    def on_val(self, msg: BBVal) -> list[BBEcho]:
        """Returns the echo to fan out to every node, if any."""
        if msg.instance != self.instance or msg.initiator != self.initiator:
            return []
        if not self._init_sig_ok(msg.value, msg.init_sig):
            return []
        self._note_value(msg.value, msg.init_sig)
        if self.resolved and self.outcome is LEADER_FAULTY:
            return []
        # The initiator's own signed value counts as its echo.
        self._count(msg.value, msg.initiator)
        if self._echoed:
            return []
        self._echoed = True
        return [make_echo(self.registry, self.me, msg)]

    def on_echo(self, msg: BBEcho) -> None:
        if msg.instance != self.instance or msg.initiator != self.initiator:
            return
        if not self._init_sig_ok(msg.value, msg.init_sig):
            return
        if not self.registry.verify(
            _echo_body(self.instance, self.initiator, msg.value),
            msg.echo_sig,
            msg.echoer,
        ):
            return
        self._note_value(msg.value, msg.init_sig)
        if self.resolved:
            return
        self._count(msg.value, msg.echoer)
        self._count(msg.value, self.initiator)

    def on_deadline(self) -> None:
        if not self.resolved:
            self.resolved = True
            self.outcome = LEADER_FAULTY
