"""Generation-based and coverage-guided mutation fuzzing of the pairing sessions.

The generation fuzzer behaves like an unpaired device in radio range: it
sends generated payloads over a :class:`~magicpair.transport.Link`,
reconnects when the link drops, and restarts the target after each fault.
The mutation fuzzer calls :meth:`PairingSession.step` directly on snapshots
taken along an honest handshake.  It uses FSM trace tuples as its coverage
signal.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from magicpair.codec import (
    ACCESSORY_SIV_SIZE, FIXED_CID, FIXED_KEY_LENGTHS, HOST_SIV_SIZE, KEY_TYPES, SHORT_TYPES,
    DecodeError, KeyType, L2capFrame, Message, MsgType, StatusCode, decode_message,
    encode_frame, encode_message)
from magicpair.device import Device
from magicpair.keystore import seeded_entropy
from magicpair.pairing import make_account
from magicpair.session import FaultKind, PairingSession, PolicyConfig, Role
from magicpair.transport import Endpoint, Link, LinkConfig, LinkDown

# flawed ratchet loops are cut short so a campaign stays fast
FUZZ_LOOP_HALT = 4096

ATTACKER_ADDR = bytes.fromhex("c0ffee000001")

TraceTuple = tuple[str, int, str]


def fuzz_policy(name: str) -> PolicyConfig:
    return PolicyConfig.preset(name).with_flags(loop_halt_steps=FUZZ_LOOP_HALT)


# --- generation ----------------------------------------------------------------

GENERATOR_CLASSES = ("well-formed", "boundary-tlv", "wrong-count", "length-overflow", "raw")
_VARIANTS = (MsgType.PING, MsgType.STATUS, MsgType.HINT, MsgType.RATCHET_AES_SIV, MsgType.AES_SIV)
_KEY_MSGS = (MsgType.HINT, MsgType.RATCHET_AES_SIV, MsgType.AES_SIV)


def generator_class(seed: int) -> str:
    return GENERATOR_CLASSES[seed % len(GENERATOR_CLASSES)]


def _ratchet(rng: random.Random) -> int:
    return rng.randrange(16) if rng.random() < 0.7 else rng.getrandbits(32)


def _well_formed(msg_type: int, rng: random.Random) -> Message:
    if msg_type == MsgType.PING:
        return Message.ping(rng.randrange(256) if rng.random() < 0.2 else 0)
    if msg_type == MsgType.STATUS:
        return Message.status(rng.choice((0, 1, 2, rng.randrange(256))))
    if msg_type == MsgType.HINT:
        return Message.hint(rng.randbytes(16), rng.randbytes(16), _ratchet(rng))
    if msg_type == MsgType.RATCHET_AES_SIV:
        return Message.ratchet_aes_siv(_ratchet(rng), rng.randbytes(ACCESSORY_SIV_SIZE))
    if msg_type == MsgType.AES_SIV:
        return Message.aes_siv(rng.randbytes(HOST_SIV_SIZE))
    # unused type: opaque body
    return Message(msg_type, raw=rng.randbytes(rng.randrange(24)))


def _boundary_entry(rng: random.Random) -> bytes:
    key_type = rng.choice((*KeyType, 0, 5, 0xFF))
    want = FIXED_KEY_LENGTHS.get(key_type)
    choices = [0, 1, 255, ACCESSORY_SIV_SIZE, HOST_SIV_SIZE]
    if want is not None:
        choices += [want, want - 1, want + 1]
    length = rng.choice(choices)
    return bytes((key_type, length)) + rng.randbytes(length)


def generate_message(seed: int) -> bytes:
    """Deterministic payload for ``seed``; ``seed % 5`` picks the generator class."""
    rng = random.Random(seed)
    kind = generator_class(seed)
    if kind == "well-formed":
        msg_type = _VARIANTS[(seed // len(GENERATOR_CLASSES)) % len(_VARIANTS)]
        return encode_message(_well_formed(msg_type, rng))
    if kind == "boundary-tlv":
        entries = [_boundary_entry(rng) for _ in range(rng.randint(1, 3))]
        return bytes((rng.choice((*_KEY_MSGS, MsgType.RATCHET_UNUSED)), 0, len(entries))) + b"".join(entries)
    if kind == "wrong-count":
        body = bytearray(encode_message(_well_formed(rng.choice(_KEY_MSGS), rng)))
        actual = body[2]
        body[2] = rng.choice([c for c in (0, actual + 1, actual + 2, 255, max(actual - 1, 0))
                              if c != actual])
        return bytes(body)
    if kind == "length-overflow":
        body = bytearray(encode_message(_well_formed(rng.choice(_KEY_MSGS), rng)))
        spans = entry_spans(bytes(body))
        start, end = spans[-1]
        if rng.random() < 0.5:
            # declared length exceeds what is left
            body[start + 1] = min(255, body[start + 1] + rng.randint(1, 64))
        else:
            del body[start + 2 + rng.randrange(end - start - 2 or 1):]
        return bytes(body)
    n = rng.randrange(0, 48)
    raw = bytearray(rng.randbytes(n))
    if n and rng.random() < 0.8:
        raw[0] = rng.choice((*MsgType, 0, 7, 0xFF))
    return bytes(raw)


# --- mutation ------------------------------------------------------------------

OPERATORS = ("bitflip", "substitute", "truncate", "extend", "splice", "length")
_INTERESTING = (0x00, 0x01, 0x04, 0x10, 0x36, 0x50, 0x7F, 0x80, 0xFF)


def entry_spans(data: bytes) -> list[tuple[int, int]]:
    """(start, end) of each complete TLV entry, scanning leniently from offset 3."""
    if len(data) < 3 or data[0] not in KEY_TYPES:
        return []
    spans = []
    pos = 3
    while pos + 2 <= len(data):
        end = pos + 2 + data[pos + 1]
        if end > len(data):
            break
        spans.append((pos, end))
        pos = end
    return spans


def mutate(data: bytes, seed: int, op: str | None = None) -> bytes:
    if not data:
        raise ValueError("mutate needs a non-empty input")
    rng = random.Random(seed)
    op = op or rng.choice(OPERATORS)
    buf = bytearray(data)
    if op == "bitflip":
        i = rng.randrange(len(buf) * 8)
        buf[i // 8] ^= 1 << (i % 8)
    elif op == "substitute":
        i = rng.randrange(len(buf))
        value = rng.choice(_INTERESTING) if rng.random() < 0.5 else rng.randrange(256)
        buf[i] = value if value != buf[i] else value ^ 0xFF
    elif op == "truncate":
        del buf[rng.randrange(len(buf)):]
    elif op == "extend":
        buf += rng.randbytes(rng.randint(1, 16))
    elif op == "splice":
        spans = entry_spans(data)
        if spans:
            start, end = rng.choice(spans)
            if rng.random() < 0.5:
                piece = bytes(data[start:end])
            else:
                piece = _boundary_entry(rng)
            at = rng.choice([s for s, _ in spans] + [spans[-1][1]])
            buf[at:at] = piece
        else:
            at = rng.randint(min(2, len(buf)), len(buf))
            buf[at:at] = rng.randbytes(rng.randint(1, 8))
    elif op == "length":
        spans = entry_spans(data)
        if spans:
            pos = rng.choice(spans)[0] + 1
        else:
            pos = min(2, len(buf) - 1)
        buf[pos] = rng.choice(_INTERESTING) if rng.random() < 0.5 else rng.randrange(256)
    else:
        raise ValueError(f"unknown mutation operator {op!r}")
    return bytes(buf)


def fixup(data: bytes) -> bytes:
    """Repair the entry count and the last entry length; leave anything else alone."""
    if len(data) < 2:
        return data
    if data[0] in SHORT_TYPES:
        return data[:3] if len(data) > 3 else data.ljust(3, b"\x00")
    if data[0] not in KEY_TYPES or len(data) < 5:
        return data
    buf = bytearray(data)
    count = 0
    pos = 3
    while pos + 2 <= len(buf):
        remaining = len(buf) - pos - 2
        if buf[pos + 1] > remaining:
            if remaining > 0xFF:
                return data
            buf[pos + 1] = remaining
        pos += 2 + buf[pos + 1]
        count += 1
    del buf[pos:]  # a single dangling byte cannot start an entry
    if count == 0 or count > 0xFF:
        return data
    buf[2] = count
    return bytes(buf)


# --- corpus & snapshots ----------------------------------------------------------

class Corpus:
    def __init__(self, entries=()):
        self.entries: list[bytes] = []
        self._seen: set[bytes] = set()
        for e in entries:
            self.add(e)

    def add(self, data: bytes) -> bool:
        data = bytes(data)
        if data in self._seen:
            return False
        self._seen.add(data)
        self.entries.append(data)
        return True

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, data) -> bool:
        return bytes(data) in self._seen


@dataclass
class Snapshots:
    """Sessions captured along an honest handshake, keyed by name."""

    sessions: dict[str, PairingSession]
    seed_messages: list[bytes]

    def fresh(self, name: str) -> PairingSession:
        return self.sessions[name].clone()

    def names(self) -> list[str]:
        return list(self.sessions)


def honest_snapshots(policy: PolicyConfig, seed: int = 0) -> Snapshots:
    """Run one hardened handshake and clone each side before each message.

    The clones then get ``policy``, so a flawed target starts from the same
    reachable states as a hardened one.
    """
    account = make_account(seed)
    base = PolicyConfig.hardened()
    host = PairingSession(Role.HOST, account.accessory_addr, account.host_keystore, base,
                          seeded_entropy(seed * 2 + 1))
    acc = PairingSession(Role.ACCESSORY, account.host_addr, account.accessory_keystore, base,
                         seeded_entropy(seed * 2 + 2), own_addr=account.accessory_addr)
    unknown = PairingSession(Role.HOST, ATTACKER_ADDR, account.host_keystore.clone(), base,
                             seeded_entropy(seed * 2 + 3))
    snaps = {"host-idle": host.clone(), "host-idle-unknown": unknown,
             "accessory-idle": acc.clone()}

    ping = Message.ping()
    acc.start_accessory()
    snaps["accessory-await-hint"] = acc.clone()
    hint = host.step(ping).messages[0]
    snaps["host-await-ratchet"] = host.clone()
    ratchet = acc.step(hint).messages[0]
    snaps["accessory-await-aes-siv"] = acc.clone()
    aes_siv = host.step(ratchet).messages[0]
    snaps["host-await-status"] = host.clone()
    status = acc.step(aes_siv).messages[0]

    for s in snaps.values():
        s.policy = policy
        s.trace = []
    messages = [ping, hint, ratchet, aes_siv, status,
                Message.status(StatusCode.UNKNOWN_DEVICE), Message.status(StatusCode.INTERNAL_ERROR)]
    return Snapshots(snaps, [encode_message(m) for m in messages])


def seed_corpus(snapshots: Snapshots) -> Corpus:
    return Corpus(snapshots.seed_messages)


# --- reports -------------------------------------------------------------------

@dataclass
class Finding:
    seq: int
    data: bytes
    kind: FaultKind
    state: str
    msg_type: int
    target: str
    iteration: int
    detail: str = ""

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.kind.value, self.state, self.msg_type)

    def to_line(self) -> str:
        return (f"finding seq={self.seq} kind={self.kind.value} state={self.state} "
                f"msg_type={self.msg_type} target={self.target} iteration={self.iteration} "
                f"input={self.data.hex()}")


@dataclass
class FuzzCampaignReport:
    mode: str
    policy: str
    seed: int
    iterations: int = 0
    coverage: set = field(default_factory=set)
    coverage_history: list[int] = field(default_factory=list)
    findings: list[Finding] = field(default_factory=list)
    reconnects: int = 0
    corpus_size: int = 0
    faults_total: int = 0
    log: list[str] = field(default_factory=list)

    def fault_kinds(self) -> set[FaultKind]:
        return {f.kind for f in self.findings}

    def summary_line(self) -> str:
        return (f"mode={self.mode} policy={self.policy} seed={self.seed} "
                f"iterations={self.iterations} coverage={len(self.coverage)} "
                f"findings={len(self.findings)} faults={self.faults_total} "
                f"reconnects={self.reconnects} corpus={self.corpus_size}")

    def to_lines(self) -> list[str]:
        lines = [self.summary_line()]
        lines += [f"coverage state={s} msg_type={t} outcome={o}" for s, t, o in sorted(self.coverage)]
        lines += [f.to_line() for f in self.findings]
        return lines

    def write(self, directory: str | os.PathLike) -> Path:
        """Write ``campaign.log`` and one raw input file per finding."""
        out = Path(directory)
        found = out / "findings"
        found.mkdir(parents=True, exist_ok=True)
        (out / "campaign.log").write_text("\n".join(self.log + self.to_lines()) + "\n")
        for f in self.findings:
            (found / str(f.seq)).write_bytes(f.data)
        return out


def _record(report: FuzzCampaignReport, seen: set, data: bytes, fault, state: str,
            msg_type: int, target: str, iteration: int) -> None:
    report.faults_total += 1
    finding = Finding(len(report.findings), data, fault.kind, state, msg_type, target,
                      iteration, fault.detail)
    if finding.key in seen:
        return
    seen.add(finding.key)
    report.findings.append(finding)
    report.log.append(f"iter={iteration} new {finding.to_line()}")


# --- generation campaign -------------------------------------------------------

def unknown_peer_target(policy: PolicyConfig, seed: int = 0) -> Callable[[], PairingSession]:
    """Factory for a host that has never seen the fuzzing device."""
    account = make_account(seed)

    def factory() -> PairingSession:
        return PairingSession(Role.HOST, ATTACKER_ADDR, account.host_keystore.clone(), policy,
                              seeded_entropy(seed + 17))
    return factory


def run_generation_campaign(target_factory: Callable[[], PairingSession], iterations: int,
                            seed: int = 0, *, policy_name: str = "",
                            link_config: LinkConfig | None = None) -> FuzzCampaignReport:
    report = FuzzCampaignReport("generation", policy_name, seed)
    link = Link(link_config or LinkConfig(seed=seed))
    device = Device(target_factory(), link, Endpoint.B)
    seen: set = set()
    for i in range(iterations):
        payload = generate_message(seed * 1_000_003 + i)
        raw = encode_frame(L2capFrame(FIXED_CID, payload))
        if not link.connected:
            link.reconnect()
            report.reconnects += 1
        try:
            link.send(Endpoint.A, raw)
        except LinkDown:
            continue
        session = device.session
        for d in device.pump():
            report.coverage.update(e.as_tuple() for e in session.trace[-1:])
            if d.fault is not None:
                msg_type = payload[0] if payload else 0
                state = session.trace[-1].state.value if d.output is not None else session.state.value
                _record(report, seen, payload, d.fault, state, msg_type, "generation-target", i)
                device.restart(target_factory())
        while link.recv(Endpoint.A) is not None:
            pass
        link.events(Endpoint.A)
        report.coverage_history.append(len(report.coverage))
        report.iterations += 1
    return report


# --- mutation campaign -----------------------------------------------------------

def execute(session: PairingSession, data: bytes):
    """One in-process call: decode then step.  Returns the step output."""
    try:
        incoming: Message | DecodeError = decode_message(data)
    except DecodeError as err:
        incoming = err
    return session.step(incoming)


def run_mutation_campaign(session_factory: Snapshots, corpus: Corpus, iterations: int,
                          seed: int = 0, *, policy_name: str = "",
                          fixup_rate: float = 0.5) -> FuzzCampaignReport:
    """Pick a corpus entry and a mutation seed, run it against every snapshot."""
    if not len(corpus):
        raise ValueError("corpus must not be empty")
    report = FuzzCampaignReport("mutation", policy_name, seed)
    rng = random.Random(seed)
    seen: set = set()
    names = session_factory.names()

    def run_input(data: bytes, i: int) -> bool:
        grew = False
        for name in names:
            session = session_factory.fresh(name)
            out = execute(session, data)
            event = session.trace[-1].as_tuple()
            if event not in report.coverage:
                report.coverage.add(event)
                grew = True
            if out.fault is not None:
                _record(report, seen, data, out.fault, event[0], event[1], name, i)
        return grew

    for data in list(corpus):
        run_input(data, -1)
    report.log.append(f"seed corpus: {len(corpus)} entries, coverage={len(report.coverage)}")

    for i in range(iterations):
        parent = corpus.entries[rng.randrange(len(corpus))]
        mutated = mutate(parent, rng.getrandbits(32)) if parent else generate_message(i)
        data = mutated
        if rng.random() < fixup_rate:
            data = fixup(mutated)
            if data != mutated:
                report.log.append(f"iter={i} fixup {mutated.hex()} -> {data.hex()}")
        if run_input(data, i) and corpus.add(data):
            report.log.append(f"iter={i} corpus+ {data.hex()} coverage={len(report.coverage)}")
        report.coverage_history.append(len(report.coverage))
        report.iterations += 1
    report.corpus_size = len(corpus)
    return report


def replay_finding(finding: Finding, snapshots: Snapshots) -> FaultKind | None:
    out = execute(snapshots.fresh(finding.target), finding.data)
    return out.fault.kind if out.fault is not None else None


def replay_over_link(finding: Finding, snapshots: Snapshots) -> FaultKind | None:
    """Deliver a mutation finding as an L2CAP frame, as the generation fuzzer would."""
    link = Link()
    device = Device(snapshots.fresh(finding.target), link, Endpoint.B)
    link.send(Endpoint.A, encode_frame(L2capFrame(FIXED_CID, finding.data)))
    faults = [d.fault for d in device.pump() if d.fault is not None]
    return faults[0].kind if faults else None


def campaign(mode: str, policy_name: str, iterations: int, seed: int = 0) -> FuzzCampaignReport:
    """Convenience entry point used by the CLI."""
    policy = fuzz_policy(policy_name)
    if mode == "generation":
        return run_generation_campaign(unknown_peer_target(policy, seed), iterations, seed,
                                       policy_name=policy_name)
    if mode == "mutation":
        snaps = honest_snapshots(policy, seed)
        return run_mutation_campaign(snaps, seed_corpus(snaps), iterations, seed,
                                     policy_name=policy_name)
    raise ValueError(f"unknown fuzz mode {mode!r}")
