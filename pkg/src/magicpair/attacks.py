"""Scripted reproductions of the MagicPairing and L2CAP vulnerabilities.

Each attack only sends frames over the simulated link.  It runs once against
a target configured with the flawed-emulation policy and once against the
hardened policy, and reports both outcomes.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field

from magicpair.codec import (
    ACCESSORY_SIV_SIZE, FIXED_CID, KeyEntry, KeyType, L2capFrame, Message, MsgType,
    StatusCode, decode_frame, decode_message, encode_frame, encode_message)
from magicpair.device import Delivery, Device
from magicpair.keystore import seeded_entropy
from magicpair.pairing import Account, make_account, pair_account
from magicpair.session import (
    KDF_BUDGET, FaultKind, PairingSession, PolicyConfig, Role)
from magicpair.transport import Endpoint, Link

ATTACK_IDS = ("MP1", "MP2", "MP3", "MP4", "MP5", "MP6", "MP7", "MP8", "L2CAP1")

LOCKOUT_DELTA = 10
LOOP_RATCHET = 0xFFFFFFFF


class FlawedOutcome(enum.Enum):
    REPRODUCED = "FaultReproduced"
    NOT_REPRODUCED = "NotReproduced"


class HardenedOutcome(enum.Enum):
    MITIGATED = "Mitigated"
    VULNERABLE = "VulnerabilityPresent"


@dataclass
class AttackVerdict:
    attack_id: str
    against_flawed: FlawedOutcome
    against_hardened: HardenedOutcome
    evidence: list[str] = field(default_factory=list)
    # timing figures; not part of the reproducible evidence
    measurements: dict = field(default_factory=dict, compare=False)

    @property
    def expected(self) -> bool:
        return (self.against_flawed is FlawedOutcome.REPRODUCED
                and self.against_hardened is HardenedOutcome.MITIGATED)

    def to_line(self) -> str:
        return (f"{self.attack_id} flawed={self.against_flawed.value} "
                f"hardened={self.against_hardened.value}")


class Attacker:
    """Endpoint A of a link whose endpoint B is the target device."""

    def __init__(self, target: PairingSession):
        self.link = Link()
        self.target = Device(target, self.link, Endpoint.B)
        self.log: list[str] = []

    @property
    def session(self) -> PairingSession:
        return self.target.session

    def send_payload(self, payload: bytes, label: str = "") -> tuple[Delivery, list[Message]]:
        return self.send_frame(encode_frame(L2capFrame(FIXED_CID, payload)), label)

    def send(self, msg: Message, label: str = "") -> tuple[Delivery, list[Message]]:
        return self.send_payload(encode_message(msg), label or msg.type_name)

    def send_frame(self, raw: bytes, label: str = "") -> tuple[Delivery, list[Message]]:
        self.link.send(Endpoint.A, raw)
        deliveries = self.target.pump()
        delivery = deliveries[-1] if deliveries else Delivery(raw, valid=False)
        replies = []
        while (reply := self.link.recv(Endpoint.A)) is not None:
            replies.append(decode_message(decode_frame(reply).payload))
        self.log.append(_evidence_line(label or raw.hex(), delivery, replies, self.session))
        return delivery, replies


def _evidence_line(label: str, d: Delivery, replies: list[Message], session: PairingSession) -> str:
    outcome = d.output.outcome.value if d.output is not None else ("Fault" if d.fault else "-")
    parts = [f"sent {label}", f"outcome={outcome}", f"state={session.state.value}"]
    if replies:
        parts.append("replies=" + ",".join(r.describe() for r in replies))
    if d.fault is not None:
        parts.append(f"fault={d.fault.kind.value}: {d.fault.detail}")
    if d.output is not None and d.output.kdf_steps:
        parts.append(f"kdf_steps={d.output.kdf_steps}")
    return " ".join(parts)


def _status_codes(replies: list[Message]) -> list[int]:
    return [r.data for r in replies if r.msg_type == MsgType.STATUS]


def _unknown_addr(seed: int, account: Account) -> bytes:
    rng = random.Random(seed ^ 0x5EED)
    while True:
        addr = rng.randbytes(6)
        if addr not in (account.host_addr, account.accessory_addr):
            return addr


# --- MP1-MP5 -----------------------------------------------------------------

# (message variant, entry order) per identifier; the entry order decides which
# record field the unchecked handler touches first
UNKNOWN_PEER_VARIANTS = {
    "MP1": ("ratcheting", (KeyType.RATCHET, KeyType.AES_SIV)),
    "MP2": ("hint", (KeyType.HINT, KeyType.NONCE, KeyType.RATCHET)),
    "MP3": ("ratcheting", (KeyType.AES_SIV, KeyType.RATCHET)),
    "MP4": ("hint", (KeyType.RATCHET, KeyType.NONCE, KeyType.HINT)),
    "MP5": ("ratcheting", (KeyType.AES_SIV,)),
}


def _forged_entries(order, rng: random.Random, ratchet: int) -> tuple[KeyEntry, ...]:
    values = {
        KeyType.HINT: rng.randbytes(16),
        KeyType.NONCE: rng.randbytes(16),
        KeyType.RATCHET: KeyEntry.ratchet(ratchet).value,
        KeyType.AES_SIV: rng.randbytes(ACCESSORY_SIV_SIZE),
    }
    return tuple(KeyEntry(k, values[k]) for k in order)


def attack_unknown_peer(variant: str = "ratcheting", order=None, *, seed: int = 0,
                        attack_id: str = "MP1") -> AttackVerdict:
    """Ping, then a Hint or Ratcheting message, from an address with no record."""
    if order is None:
        order = UNKNOWN_PEER_VARIANTS["MP1" if variant == "ratcheting" else "MP2"][1]
    msg_type = MsgType.RATCHET_AES_SIV if variant == "ratcheting" else MsgType.HINT
    role = Role.HOST if variant == "ratcheting" else Role.ACCESSORY

    def run(policy: PolicyConfig):
        account = make_account(seed)
        attacker_addr = _unknown_addr(seed, account)
        rng = random.Random(seed)
        target = PairingSession(role, attacker_addr, account.host_keystore, policy,
                                seeded_entropy(seed + 1))
        att = Attacker(target)
        _, ping_replies = att.send(Message.ping(), "Ping")
        msg = Message(msg_type, entries=_forged_entries(order, rng, rng.randrange(1, 64)))
        delivery, replies = att.send(msg, f"{msg.type_name}{[KeyType(k).name for k in order]}")
        return att, delivery, ping_replies + replies

    att_f, d_f, _ = run(PolicyConfig.flawed())
    att_h, d_h, replies_h = run(PolicyConfig.hardened())
    flawed = (FlawedOutcome.REPRODUCED
              if d_f.fault is not None and d_f.fault.kind is FaultKind.INVALID_ACCESS
              else FlawedOutcome.NOT_REPRODUCED)
    hardened = (HardenedOutcome.MITIGATED
                if not att_h.target.faults and StatusCode.UNKNOWN_DEVICE in _status_codes(replies_h)
                else HardenedOutcome.VULNERABLE)
    return AttackVerdict(attack_id, flawed, hardened,
                         [f"flawed: {line}" for line in att_f.log]
                         + [f"hardened: {line}" for line in att_h.log])


# --- MP6 ---------------------------------------------------------------------

def truncated_ratcheting(rng: random.Random) -> bytes:
    """A Ratcheting message whose AES-SIV entry declares more bytes than follow."""
    body = bytes((MsgType.RATCHET_AES_SIV, 0, 2, KeyType.RATCHET, 4)) + rng.randbytes(4)
    return body + bytes((KeyType.AES_SIV, ACCESSORY_SIV_SIZE)) + rng.randbytes(7)


def attack_parse_abort(*, seed: int = 0) -> AttackVerdict:
    def run(policy: PolicyConfig):
        account = make_account(seed)
        rng = random.Random(seed)
        # spoofing the accessory address gets the target into AwaitRatchet
        target = PairingSession(Role.HOST, account.accessory_addr, account.host_keystore,
                                policy, seeded_entropy(seed + 1))
        att = Attacker(target)
        att.send(Message.ping(), "Ping")
        d, _ = att.send_payload(truncated_ratcheting(rng), "truncated Ratcheting")
        alive = None
        if att.target.crashed is None:
            _, replies = att.send(Message.ping(), "Ping (liveness)")
            alive = any(r.msg_type == MsgType.HINT for r in replies)
        return att, d, alive

    att_f, d_f, _ = run(PolicyConfig.flawed())
    att_h, d_h, alive = run(PolicyConfig.hardened())
    flawed = (FlawedOutcome.REPRODUCED if d_f.fault is not None and d_f.fault.kind is FaultKind.ABORT
              else FlawedOutcome.NOT_REPRODUCED)
    hardened = (HardenedOutcome.MITIGATED
                if d_h.fault is None and d_h.error is not None and alive
                else HardenedOutcome.VULNERABLE)
    return AttackVerdict("MP6", flawed, hardened,
                         [f"flawed: {line}" for line in att_f.log]
                         + [f"hardened: {line}" for line in att_h.log])


# --- MP7 ---------------------------------------------------------------------

def sniff_hint(account: Account, seed: int) -> bytes:
    """Passively capture the (static, plaintext) hint from a genuine pairing."""
    scratch = make_account(seed)
    result = pair_account(scratch, seed)
    for line in result.transcript:
        msg = decode_message(decode_frame(line.frame).payload)
        if msg.msg_type == MsgType.HINT:
            return msg.entry(KeyType.HINT).value
    raise RuntimeError("no Hint observed")


def attack_ratchet_loop(ratchet_value: int = LOOP_RATCHET, *, seed: int = 0,
                        halt_steps: int = KDF_BUDGET) -> AttackVerdict:
    """Hint with a forged ratchet sent to a responder, spoofing the accessory."""

    def run(policy: PolicyConfig):
        policy = policy.with_flags(loop_halt_steps=halt_steps)
        account = make_account(seed)
        hint = sniff_hint(account, seed)
        target = PairingSession(Role.ACCESSORY, account.accessory_addr, account.host_keystore,
                                policy, seeded_entropy(seed + 1), own_addr=account.host_addr)
        att = Attacker(target)
        nonce = random.Random(seed).randbytes(16)
        d, replies = att.send(Message.hint(hint, nonce, ratchet_value),
                              f"Hint ratchet=0x{ratchet_value:08x}")
        return att, d, replies

    att_f, d_f, _ = run(PolicyConfig.flawed())
    att_h, d_h, replies_h = run(PolicyConfig.hardened())
    measurements = {}
    flawed = FlawedOutcome.NOT_REPRODUCED
    if d_f.fault is not None and d_f.fault.kind is FaultKind.RATCHET_LOOP_ENGAGED:
        m = d_f.fault.metrics
        if m["steps_executed"] >= halt_steps:
            flawed = FlawedOutcome.REPRODUCED
        measurements = dict(m, reference_steps_per_second=7000)
    steps_h = d_h.output.kdf_steps if d_h.output is not None else 0
    hardened = (HardenedOutcome.MITIGATED
                if d_h.fault is None and steps_h <= KDF_BUDGET
                and StatusCode.INTERNAL_ERROR in _status_codes(replies_h)
                else HardenedOutcome.VULNERABLE)
    evidence = ([f"flawed: {line}" for line in att_f.log]
                + [f"hardened: {line}" for line in att_h.log]
                + [f"hardened kdf_steps={steps_h}"])
    return AttackVerdict("MP7", flawed, hardened, evidence, measurements)


# --- MP8 ---------------------------------------------------------------------

def attack_lockout(delta: int = LOCKOUT_DELTA, *, seed: int = 0) -> AttackVerdict:
    """Spoof the accessory, read the host ratchet, push a forged higher one.

    Afterwards the genuine accessory tries to pair with the victim host.
    """

    def run(host_policy: PolicyConfig):
        account = make_account(seed)
        # one genuine pairing first so the pairing is established
        warmup = pair_account(account, seed, host_policy=host_policy)
        evidence = [f"warm-up pairing complete={warmup.complete}"]
        victim = PairingSession(Role.HOST, account.accessory_addr, account.host_keystore,
                                host_policy, seeded_entropy(seed + 7))
        att = Attacker(victim)
        before = account.host_keystore.lookup_by_address(account.accessory_addr).ratchet
        _, replies = att.send(Message.ping(), "Ping")
        leaked = next(r.ratchet_value() for r in replies if r.msg_type == MsgType.HINT)
        forged = Message.ratchet_aes_siv(leaked + delta,
                                         random.Random(seed).randbytes(ACCESSORY_SIV_SIZE))
        d, replies = att.send(forged, f"Ratcheting ratchet={leaked}+{delta} random AES-SIV")
        after = account.host_keystore.lookup_by_address(account.accessory_addr).ratchet
        evidence += att.log
        evidence.append(f"host ratchet {before} -> {after}")
        genuine = pair_account(account, seed + 1, host_policy=host_policy,
                               accessory_policy=PolicyConfig.hardened())
        evidence += [f"re-pair {line.sender}: {line.summary}" for line in genuine.transcript]
        evidence.append(f"re-pair complete={genuine.complete}")
        return d, genuine, before, after, evidence

    d_f, genuine_f, _, _, ev_f = run(PolicyConfig.flawed())
    d_h, genuine_h, before_h, after_h, ev_h = run(PolicyConfig.hardened())
    lockout = d_f.fault is not None and d_f.fault.kind is FaultKind.LOCKOUT_COMMITTED
    flawed = (FlawedOutcome.REPRODUCED if lockout and not genuine_f.complete
              else FlawedOutcome.NOT_REPRODUCED)
    hardened = (HardenedOutcome.MITIGATED
                if d_h.fault is None and before_h == after_h and genuine_h.complete
                else HardenedOutcome.VULNERABLE)
    return AttackVerdict("MP8", flawed, hardened,
                         [f"flawed: {e}" for e in ev_f] + [f"hardened: {e}" for e in ev_h])


# --- L2CAP1 ------------------------------------------------------------------

EMPTY_FRAME = encode_frame(L2capFrame(FIXED_CID, b""))


def attack_zero_length(*, seed: int = 0) -> AttackVerdict:
    def run(policy: PolicyConfig):
        account = make_account(seed)
        target = PairingSession(Role.ACCESSORY, account.host_addr, account.accessory_keystore,
                                policy, seeded_entropy(seed + 1))
        att = Attacker(target)
        d, _ = att.send_frame(EMPTY_FRAME, "empty L2CAP frame")
        follow = None
        if att.target.crashed is None:
            follow, _ = att.send_frame(encode_frame(L2capFrame(FIXED_CID, b"\x01")),
                                       "1-byte frame")
        return att, d, follow

    att_f, d_f, _ = run(PolicyConfig.flawed())
    att_h, d_h, follow_h = run(PolicyConfig.hardened())
    flawed = (FlawedOutcome.REPRODUCED
              if d_f.fault is not None and d_f.fault.kind is FaultKind.ZERO_LENGTH_FRAME
              else FlawedOutcome.NOT_REPRODUCED)
    hardened = (HardenedOutcome.MITIGATED
                if d_h.fault is None and d_h.valid and follow_h is not None and follow_h.fault is None
                else HardenedOutcome.VULNERABLE)
    return AttackVerdict("L2CAP1", flawed, hardened,
                         [f"flawed: {line}" for line in att_f.log]
                         + [f"hardened: {line}" for line in att_h.log])


def run_attack(attack_id: str, *, seed: int = 0) -> AttackVerdict:
    attack_id = attack_id.upper()
    if attack_id in UNKNOWN_PEER_VARIANTS:
        variant, order = UNKNOWN_PEER_VARIANTS[attack_id]
        return attack_unknown_peer(variant, order, seed=seed, attack_id=attack_id)
    if attack_id == "MP6":
        return attack_parse_abort(seed=seed)
    if attack_id == "MP7":
        return attack_ratchet_loop(seed=seed)
    if attack_id == "MP8":
        return attack_lockout(seed=seed)
    if attack_id == "L2CAP1":
        return attack_zero_length(seed=seed)
    raise ValueError(f"unknown attack {attack_id!r}; choose from {', '.join(ATTACK_IDS)} or ALL")


def run_all(*, seed: int = 0) -> list[AttackVerdict]:
    return [run_attack(a, seed=seed) for a in ATTACK_IDS]


def format_report(verdicts: list[AttackVerdict]) -> str:
    return "".join(v.to_line() + "\n" for v in verdicts)
