"""Host and accessory pairing state machines.

A session is driven one message at a time through :meth:`PairingSession.step`.
Its :class:`PolicyConfig` selects between the hardened behaviour and an
emulation of the published implementation flaws, which surface as
:class:`FaultReport` values instead of real crashes.

State flow (host / accessory)::

    host:      Idle --start/Ping--> AwaitRatchet --RatchetAesSiv--> AwaitStatus --Status--> Complete
    accessory: Idle --Ping sent--> AwaitHint --Hint--> AwaitAesSiv --AesSiv--> Complete

Any error moves the session to Failed.
"""

from __future__ import annotations

import copy
import enum
import time
from dataclasses import dataclass, field, fields, replace

from magicpair import crypto
from magicpair.codec import (
    DecodeError, KeyType, Message, MsgType, StatusCode)
from magicpair.keystore import AccessoryKeyRecord, EntropySource, Keystore, system_entropy

KDF_BUDGET = 1 << 20


class Role(enum.Enum):
    HOST = "host"
    ACCESSORY = "accessory"


class State(enum.Enum):
    IDLE = "Idle"
    AWAIT_HINT = "AwaitHint"
    AWAIT_RATCHET = "AwaitRatchet"
    AWAIT_AES_SIV = "AwaitAesSiv"
    AWAIT_STATUS = "AwaitStatus"
    COMPLETE = "Complete"
    FAILED = "Failed"


class Outcome(enum.Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"
    FAULT = "Fault"


class FaultKind(enum.Enum):
    INVALID_ACCESS = "InvalidAccess"  # MP1-MP5
    ABORT = "Abort"  # MP6
    RATCHET_LOOP_ENGAGED = "RatchetLoopEngaged"  # MP7
    LOCKOUT_COMMITTED = "LockoutCommitted"  # MP8
    ZERO_LENGTH_FRAME = "ZeroLengthFrame"  # L2CAP1, raised by the frame layer


@dataclass(frozen=True)
class FaultReport:
    kind: FaultKind
    detail: str
    # wall-clock measurements; excluded from equality so evidence stays reproducible
    metrics: dict = field(default_factory=dict, compare=False)


@dataclass(frozen=True)
class TraceEvent:
    state: State
    msg_type: int
    outcome: Outcome

    def as_tuple(self) -> tuple[str, int, str]:
        return (self.state.value, self.msg_type, self.outcome.value)


@dataclass
class SessionOutput:
    messages: list[Message] = field(default_factory=list)
    derived_link_key: bytes | None = None
    fault: FaultReport | None = None
    outcome: Outcome = Outcome.ACCEPTED
    kdf_steps: int = 0
    reason: str = ""


@dataclass(frozen=True)
class PolicyConfig:
    """Mitigation switches.  ``None`` means unbounded / disabled."""

    lookup_checked: bool = True
    max_ratchet_delta: int | None = 1024
    commit_on_verify: bool = True
    ratchet_budget_per_message: int | None = KDF_BUDGET
    accessory_ratchet_discrepancy_threshold: int | None = 8
    parse_abort: bool = False
    # responder keys the lookup on the link address and ignores the hint entry
    trust_connection_address: bool = False
    # frame layer faults on an empty L2CAP frame
    empty_frame_fault: bool = False
    # an unbounded ratchet loop is halted (and reported) after this many steps
    loop_halt_steps: int = KDF_BUDGET
    siv_empty_ad_component: bool = False

    @classmethod
    def hardened(cls) -> "PolicyConfig":
        return cls()

    @classmethod
    def flawed(cls) -> "PolicyConfig":
        return cls(
            lookup_checked=False,
            max_ratchet_delta=None,
            commit_on_verify=False,
            ratchet_budget_per_message=None,
            accessory_ratchet_discrepancy_threshold=None,
            parse_abort=True,
            trust_connection_address=True,
            empty_frame_fault=True,
        )

    @classmethod
    def preset(cls, name: str) -> "PolicyConfig":
        if name == "hardened":
            return cls.hardened()
        if name == "flawed":
            return cls.flawed()
        raise ValueError(f"unknown policy preset {name!r}")

    def with_flags(self, **flags) -> "PolicyConfig":
        return replace(self, **flags)

    def with_flag_strings(self, assignments: list[str]) -> "PolicyConfig":
        """Apply ``NAME=VALUE`` overrides as given on the command line."""
        types = {f.name: f.type for f in fields(self)}
        updates = {}
        for item in assignments:
            name, sep, raw = item.partition("=")
            name = name.strip().replace("-", "_")
            if not sep or name not in types:
                raise ValueError(f"unknown policy flag {item!r}")
            updates[name] = _parse_flag(types[name], raw.strip())
        return replace(self, **updates)


def _parse_flag(type_name, raw: str):
    if "bool" in str(type_name):
        if raw.lower() in ("1", "true", "on", "yes"):
            return True
        if raw.lower() in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if raw.lower() in ("none", "unbounded", "off") and "None" in str(type_name):
        return None
    return int(raw, 0)


class PairingSession:
    """One side of one MagicPairing exchange.

    ``peer_addr`` is the address at the other end of the link.  For the
    accessory, ``own_addr`` is echoed inside its AES-SIV value; it defaults to
    the address of the key record it selects.
    """

    def __init__(self, role: Role, peer_addr: bytes, keystore: Keystore,
                 policy: PolicyConfig | None = None,
                 entropy: EntropySource = system_entropy,
                 own_addr: bytes | None = None):
        self.role = role
        self.peer_addr = bytes(peer_addr)
        self.keystore = keystore
        self.policy = policy or PolicyConfig.hardened()
        self.entropy = entropy
        self.own_addr = own_addr
        self.state = State.IDLE
        self.nonce_host: bytes | None = None
        self.rand_host: bytes | None = None
        self.rand_acc: bytes | None = None
        self.hint: bytes | None = None
        self.record_addr: bytes | None = None
        self.working_acc_key: bytes | None = None
        self.working_ratchet: int | None = None
        self.siv_key: crypto.SivKey | None = None
        self.link_key: bytes | None = None
        self.last_status: int | None = None
        self.trace: list[TraceEvent] = []

    def __repr__(self) -> str:
        return (f"PairingSession({self.role.value}, peer={crypto.format_bdaddr(self.peer_addr)}, "
                f"state={self.state.value})")

    def clone(self, keystore: Keystore | None = None) -> "PairingSession":
        other = object.__new__(PairingSession)
        other.__dict__.update(self.__dict__)
        other.keystore = keystore if keystore is not None else self.keystore.clone()
        other.trace = list(self.trace)
        # seeded sources are bound Random methods; copy their state too
        other.entropy = copy.deepcopy(self.entropy)
        return other

    # --- entry points --------------------------------------------------

    def start_host(self) -> SessionOutput:
        """Initiate pairing by sending a Hint."""
        self._require_role(Role.HOST)
        record = self.keystore.lookup_by_address(self.peer_addr)
        if record is None and self.keystore.credentials is not None:
            record = self.keystore.create_record(self.peer_addr)
        if record is None:
            return self._fail(StatusCode.UNKNOWN_DEVICE, Outcome.REJECTED, "unknown device")
        return self._send_hint(record)

    def start_accessory(self) -> SessionOutput:
        """Ask the peer to begin pairing by sending a Ping."""
        self._require_role(Role.ACCESSORY)
        self.state = State.AWAIT_HINT
        return SessionOutput([Message.ping()])

    def step(self, incoming: Message | DecodeError) -> SessionOutput:
        """Process one received message (or a decode failure)."""
        before = self.state
        if isinstance(incoming, DecodeError):
            msg_type = incoming.msg_type if incoming.msg_type is not None else 0
            out = self._handle_decode_error(incoming)
        else:
            msg_type = incoming.msg_type
            out = self._dispatch(incoming)
        if out.fault is not None:
            self.state = State.FAILED
        self.trace.append(TraceEvent(before, msg_type, out.outcome))
        return out

    # --- dispatch ------------------------------------------------------

    def _dispatch(self, msg: Message) -> SessionOutput:
        if self.state is State.COMPLETE:
            return SessionOutput(outcome=Outcome.REJECTED, reason="session complete")
        t = msg.msg_type
        if self.role is Role.HOST:
            if t == MsgType.PING:
                return self.handle_ping(msg)
            if t == MsgType.RATCHET_AES_SIV:
                return self.host_handle_ratchet_aes_siv(msg)
            if t == MsgType.STATUS:
                return self.host_handle_status(msg)
        else:
            if t == MsgType.HINT:
                return self.accessory_handle_hint(msg)
            if t == MsgType.AES_SIV:
                return self.accessory_handle_aes_siv(msg)
            if t == MsgType.STATUS and self.state is State.AWAIT_HINT:
                self.last_status = msg.data
                self.state = State.FAILED
                return SessionOutput(reason=f"peer status {msg.data:02x}")
        return SessionOutput(outcome=Outcome.REJECTED,
                             reason=f"{msg.type_name} not handled by {self.role.value} in {self.state.value}")

    def _handle_decode_error(self, err: DecodeError) -> SessionOutput:
        if (self.policy.parse_abort and err.msg_type == MsgType.RATCHET_AES_SIV
                and err.reason in ("truncated", "overflow")):
            return SessionOutput(
                outcome=Outcome.FAULT,
                fault=FaultReport(FaultKind.ABORT, f"Ratcheting parser assertion: {err}"))
        return SessionOutput(outcome=Outcome.REJECTED, reason=f"decode error: {err}")

    # --- host ----------------------------------------------------------

    def handle_ping(self, msg: Message) -> SessionOutput:
        """Answer a Ping with a Hint; the data byte is ignored."""
        if self.state not in (State.IDLE, State.FAILED, State.AWAIT_RATCHET):
            return SessionOutput(outcome=Outcome.REJECTED, reason="Ping during handshake")
        record = self.keystore.lookup_by_address(self.peer_addr)
        if record is None:
            return self._fail(StatusCode.UNKNOWN_DEVICE, Outcome.ACCEPTED, "unknown device",
                              state=State.IDLE)
        return self._send_hint(record)

    def _send_hint(self, record: AccessoryKeyRecord) -> SessionOutput:
        self._reset()
        self.record_addr = record.peer_addr
        self.hint = record.acc_hint
        self.nonce_host = self.entropy(16)
        self.state = State.AWAIT_RATCHET
        return SessionOutput([Message.hint(record.acc_hint, self.nonce_host, record.ratchet)])

    def host_handle_ratchet_aes_siv(self, msg: Message) -> SessionOutput:
        record = self.keystore.lookup_by_address(self.peer_addr)
        if record is None:
            if not self.policy.lookup_checked:
                return self._invalid_access(msg)
            return self._fail(StatusCode.UNKNOWN_DEVICE, Outcome.REJECTED, "unknown device")
        if self.state is not State.AWAIT_RATCHET:
            return SessionOutput(outcome=Outcome.REJECTED, reason="unexpected Ratcheting message")

        ratchet = msg.ratchet_value()
        siv_entry = msg.entry(KeyType.AES_SIV)
        if ratchet is None or siv_entry is None or len(siv_entry.value) < 17:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "missing entries")

        delta = ratchet - record.ratchet
        if delta < 0:
            if self.policy.commit_on_verify:
                return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "ratchet went backwards")
            delta = 0
        out = SessionOutput()
        refused = self._bound_delta(delta, out)
        if refused is not None:
            return refused
        key, fault = self._run_ratchet(record.acc_key, delta, out)
        if fault is not None:
            return fault
        self.working_acc_key = key
        self.working_ratchet = record.ratchet + delta
        self.siv_key = crypto.derive_siv_key(key)

        committed = False
        if not self.policy.commit_on_verify:
            # flawed order: the rotation is stored before anything is authenticated
            self.keystore.commit_ratchet(record.peer_addr, self.working_ratchet, key)
            committed = True

        try:
            plaintext = self._siv_decrypt(siv_entry.value)
        except crypto.AuthenticationError:
            if committed:
                failed = self._fail(StatusCode.INTERNAL_ERROR, Outcome.FAULT, "AES-SIV did not verify")
                failed.kdf_steps = out.kdf_steps
                failed.fault = FaultReport(
                    FaultKind.LOCKOUT_COMMITTED,
                    f"ratchet {record.ratchet} -> {self.working_ratchet} stored despite failed AES-SIV")
                return failed
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "AES-SIV did not verify",
                              steps=out.kdf_steps)

        if (len(plaintext) != 38 or plaintext[16:32] != self.nonce_host
                or plaintext[32:38] != self.peer_addr):
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "AES-SIV content mismatch",
                              steps=out.kdf_steps)
        self.rand_acc = plaintext[:16]
        if self.policy.commit_on_verify:
            self.keystore.commit_ratchet(record.peer_addr, self.working_ratchet, key)

        self.rand_host = self.entropy(16)
        sealed = self._siv_encrypt(self.nonce_host + self.rand_host + self.rand_acc + self.hint)
        self.state = State.AWAIT_STATUS
        out.messages.append(Message.aes_siv(sealed))
        return out

    def host_handle_status(self, msg: Message) -> SessionOutput:
        # the accessory may abort with an error Status instead of Ratcheting
        aborting = self.state is State.AWAIT_RATCHET and msg.data != StatusCode.SUCCESS
        if self.state is not State.AWAIT_STATUS and not aborting:
            return SessionOutput(outcome=Outcome.REJECTED, reason="unexpected Status")
        self.last_status = msg.data
        if msg.data != StatusCode.SUCCESS:
            self.state = State.FAILED
            return SessionOutput(reason=f"peer status {msg.data:02x}")
        self.link_key = crypto.derive_link_key(self.rand_host, self.rand_acc)
        self.state = State.COMPLETE
        return SessionOutput(derived_link_key=self.link_key)

    # --- accessory -----------------------------------------------------

    def accessory_handle_hint(self, msg: Message) -> SessionOutput:
        if self.state not in (State.IDLE, State.AWAIT_HINT):
            return SessionOutput(outcome=Outcome.REJECTED, reason="unexpected Hint")
        hint_entry = msg.entry(KeyType.HINT)
        if self.policy.trust_connection_address:
            record = self.keystore.lookup_by_address(self.peer_addr)
        else:
            record = None if hint_entry is None else self.keystore.lookup_by_hint(hint_entry.value)
        if record is None:
            if not self.policy.lookup_checked:
                return self._invalid_access(msg)
            return self._fail(StatusCode.UNKNOWN_DEVICE, Outcome.REJECTED, "unknown device")

        nonce_entry = msg.entry(KeyType.NONCE)
        ratchet = msg.ratchet_value()
        if nonce_entry is None or ratchet is None:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "missing entries")

        delta = max(0, ratchet - record.ratchet)
        threshold = self.policy.accessory_ratchet_discrepancy_threshold
        if threshold is not None and delta > threshold:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED,
                              f"ratchet discrepancy {delta} exceeds {threshold}")
        out = SessionOutput()
        refused = self._bound_delta(delta, out)
        if refused is not None:
            return refused
        key, fault = self._run_ratchet(record.acc_key, delta, out)
        if fault is not None:
            return fault

        self._reset()
        self.record_addr = record.peer_addr
        self.hint = record.acc_hint
        self.nonce_host = nonce_entry.value
        self.working_acc_key = key
        self.working_ratchet = record.ratchet + delta
        self.siv_key = crypto.derive_siv_key(key)
        if not self.policy.commit_on_verify:
            self.keystore.commit_ratchet(record.peer_addr, self.working_ratchet, key)

        own = self.own_addr if self.own_addr is not None else record.peer_addr
        self.rand_acc = self.entropy(16)
        sealed = self._siv_encrypt(self.rand_acc + self.nonce_host + own)
        self.state = State.AWAIT_AES_SIV
        out.messages.append(Message.ratchet_aes_siv(self.working_ratchet, sealed))
        return out

    def accessory_handle_aes_siv(self, msg: Message) -> SessionOutput:
        if self.state is not State.AWAIT_AES_SIV:
            return SessionOutput(outcome=Outcome.REJECTED, reason="unexpected AES-SIV")
        entry = msg.entry(KeyType.AES_SIV)
        if entry is None or len(entry.value) < 17:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "missing entries")
        try:
            plaintext = self._siv_decrypt(entry.value)
        except crypto.AuthenticationError:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "AES-SIV did not verify")
        if (len(plaintext) != 64 or plaintext[:16] != self.nonce_host
                or plaintext[32:48] != self.rand_acc or plaintext[48:64] != self.hint):
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED, "AES-SIV content mismatch")
        self.rand_host = plaintext[16:32]
        if self.policy.commit_on_verify:
            self.keystore.commit_ratchet(self.record_addr, self.working_ratchet, self.working_acc_key)
        self.link_key = crypto.derive_link_key(self.rand_host, self.rand_acc)
        self.state = State.COMPLETE
        return SessionOutput([Message.status(StatusCode.SUCCESS)], derived_link_key=self.link_key)

    # --- helpers -------------------------------------------------------

    def _require_role(self, role: Role) -> None:
        if self.role is not role:
            raise ValueError(f"operation needs a {role.value} session")

    def _reset(self) -> None:
        self.nonce_host = self.rand_host = self.rand_acc = self.hint = None
        self.working_acc_key = self.working_ratchet = self.siv_key = None
        self.link_key = None

    def _fail(self, code: int, outcome: Outcome, reason: str, *, state: State = State.FAILED,
              steps: int = 0) -> SessionOutput:
        self.state = state
        return SessionOutput([Message.status(code)], outcome=outcome, reason=reason, kdf_steps=steps)

    def _invalid_access(self, msg: Message) -> SessionOutput:
        # the first key entry decides which record field the handler touches
        first = msg.entries[0].key_type if msg.entries else None
        try:
            field_name = KeyType(first).name if first is not None else "none"
        except ValueError:
            field_name = f"key_{first:02x}"
        return SessionOutput(outcome=Outcome.FAULT, fault=FaultReport(
            FaultKind.INVALID_ACCESS,
            f"{msg.type_name} from unknown {crypto.format_bdaddr(self.peer_addr)}: "
            f"absent record dereferenced at {field_name} field"))

    def _bound_delta(self, delta: int, out: SessionOutput) -> SessionOutput | None:
        limit = self.policy.max_ratchet_delta
        budget = self.policy.ratchet_budget_per_message
        if limit is not None and delta > limit:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED,
                              f"ratchet delta {delta} exceeds {limit}")
        if budget is not None and delta > budget:
            return self._fail(StatusCode.INTERNAL_ERROR, Outcome.REJECTED,
                              f"ratchet work {delta} exceeds budget {budget}")
        return None

    def _run_ratchet(self, key: bytes, delta: int, out: SessionOutput):
        halt = self.policy.loop_halt_steps
        if delta <= halt:
            out.kdf_steps += delta
            return crypto.ratchet_key(key, delta), None
        # an unbounded loop: execute `halt` steps, measure, and stop there
        start = time.perf_counter()
        crypto.ratchet_key(key, halt)
        elapsed = time.perf_counter() - start
        rate = halt / elapsed if elapsed > 0 else float("inf")
        out.kdf_steps += halt
        out.outcome = Outcome.FAULT
        out.fault = FaultReport(
            FaultKind.RATCHET_LOOP_ENGAGED,
            f"ratchet loop of {delta} steps engaged; halted after {halt}",
            metrics={"steps_executed": halt, "steps_requested": delta,
                     "elapsed_s": elapsed, "steps_per_second": rate,
                     "extrapolated_s": delta / rate if rate else float("inf")})
        return None, out

    def _siv_encrypt(self, plaintext: bytes) -> bytes:
        return crypto.siv_encrypt(self.siv_key, plaintext,
                                  empty_ad_component=self.policy.siv_empty_ad_component)

    def _siv_decrypt(self, sealed: bytes) -> bytes:
        return crypto.siv_decrypt(self.siv_key, sealed,
                                  empty_ad_component=self.policy.siv_empty_ad_component)


def start_host(keystore: Keystore, peer_addr: bytes, policy: PolicyConfig | None = None,
               entropy: EntropySource = system_entropy) -> tuple[PairingSession, SessionOutput]:
    session = PairingSession(Role.HOST, peer_addr, keystore, policy, entropy)
    return session, session.start_host()


def new_accessory(keystore: Keystore, peer_addr: bytes, policy: PolicyConfig | None = None,
                  entropy: EntropySource = system_entropy,
                  own_addr: bytes | None = None) -> PairingSession:
    return PairingSession(Role.ACCESSORY, peer_addr, keystore, policy, entropy, own_addr)
