"""Run complete pairings between two devices over a simulated link."""

from __future__ import annotations

from dataclasses import dataclass, field

import threading

from magicpair import crypto
from magicpair.codec import FIXED_CID, DecodeError, decode_frame, decode_message
from magicpair.device import Device
from magicpair.keystore import EntropySource, Keystore, seeded_entropy
from magicpair.session import PairingSession, PolicyConfig, Role, State
from magicpair.transport import Endpoint, Link, LinkConfig, LoopbackCarrier

DEFAULT_HOST_ADDR = bytes.fromhex("f0989d1a2b3c")
DEFAULT_ACCESSORY_ADDR = bytes.fromhex("01020304050b")


@dataclass
class Account:
    """Host and accessory key state after the initial (out-of-scope) setup."""

    host_keystore: Keystore
    accessory_keystore: Keystore
    host_addr: bytes
    accessory_addr: bytes


def make_account(seed: int, host_addr: bytes = DEFAULT_HOST_ADDR,
                 accessory_addr: bytes = DEFAULT_ACCESSORY_ADDR) -> Account:
    """Provision master credentials and give both sides the accessory record."""
    host_ks = Keystore()
    creds = host_ks.provision_master(seeded_entropy(seed))
    host_ks.create_record(accessory_addr)
    acc_ks = Keystore(creds)
    acc_ks.create_record(accessory_addr)
    return Account(host_ks, acc_ks, bytes(host_addr), bytes(accessory_addr))


@dataclass
class TranscriptLine:
    sender: str
    frame: bytes
    summary: str

    def render(self) -> str:
        return f"{self.sender:>9} {self.frame.hex()}  {self.summary}"


@dataclass
class PairingResult:
    host: PairingSession
    accessory: PairingSession
    transcript: list[TranscriptLine] = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return self.host.state is State.COMPLETE and self.accessory.state is State.COMPLETE

    @property
    def keys_match(self) -> bool:
        return self.complete and self.host.link_key == self.accessory.link_key


def run_pairing(host: PairingSession, accessory: PairingSession, *,
                link: Link | None = None, max_frames: int = 32,
                channel_id: int = FIXED_CID) -> PairingResult:
    """Drive a host-initiated handshake to its end."""
    link = link or Link(LinkConfig(channel_id=channel_id))
    result = PairingResult(host, accessory)
    host_dev = Device(host, link, Endpoint.A, channel_id,
                      on_send=_capture(result, "host", link, Endpoint.A))
    acc_dev = Device(accessory, link, Endpoint.B, channel_id,
                     on_send=_capture(result, "accessory", link, Endpoint.B))

    host_dev.send_output(host.start_host())
    for _ in range(max_frames):
        if not (acc_dev.pump() or host_dev.pump()):
            break
    return result


def _capture(result: PairingResult, sender: str, link: Link, endpoint: Endpoint):
    def send(raw: bytes) -> None:
        result.transcript.append(TranscriptLine(sender, raw, _summary(raw)))
        if link.connected:
            link.send(endpoint, raw)
    return send


def run_pairing_loopback(host: PairingSession, accessory: PairingSession, *, port: int,
                         channel_id: int = FIXED_CID, max_frames: int = 32) -> PairingResult:
    """Same handshake, with every frame crossing a local TCP connection."""
    result = PairingResult(host, accessory)
    server = LoopbackCarrier.listen(port)
    accepted: list[LoopbackCarrier] = []
    t = threading.Thread(target=lambda: accepted.append(LoopbackCarrier.accept(server)))
    t.start()
    host_side = LoopbackCarrier.dial(server.getsockname()[1])
    t.join()
    acc_side = accepted[0]

    def sender(name: str, carrier: LoopbackCarrier):
        def send(raw: bytes) -> None:
            result.transcript.append(TranscriptLine(name, raw, _summary(raw)))
            carrier.send(raw)
        return send

    host_dev = Device(host, None, Endpoint.A, channel_id, on_send=sender("host", host_side))
    acc_dev = Device(accessory, None, Endpoint.B, channel_id,
                     on_send=sender("accessory", acc_side))
    try:
        pending = len(host_dev.send_output(host.start_host()))
        receivers = [(acc_dev, acc_side), (host_dev, host_side)]
        turn = 0
        for _ in range(max_frames):
            if not pending:
                break
            dev, carrier = receivers[turn]
            replies = 0
            for _ in range(pending):
                raw = carrier.recv()
                if raw is None:
                    break
                replies += len(dev.handle_frame(raw).sent)
            pending = replies
            turn ^= 1
    finally:
        host_side.close()
        acc_side.close()
        server.close()
    return result


def _summary(raw: bytes) -> str:
    try:
        return decode_message(decode_frame(raw).payload).describe()
    except DecodeError as err:
        return f"<undecodable: {err}>"


def pair_account(account: Account, seed: int, *, host_policy: PolicyConfig | None = None,
                 accessory_policy: PolicyConfig | None = None,
                 link: Link | None = None) -> PairingResult:
    """One genuine pairing with entropy drawn from ``seed``."""
    host_entropy: EntropySource = seeded_entropy(seed * 2 + 1)
    acc_entropy: EntropySource = seeded_entropy(seed * 2 + 2)
    host = PairingSession(Role.HOST, account.accessory_addr, account.host_keystore,
                          host_policy, host_entropy)
    accessory = PairingSession(Role.ACCESSORY, account.host_addr, account.accessory_keystore,
                               accessory_policy, acc_entropy, own_addr=account.accessory_addr)
    return run_pairing(host, accessory, link=link)


def describe_record(ks: Keystore, addr: bytes) -> str:
    record = ks.lookup_by_address(addr)
    if record is None:
        return f"no record for {crypto.format_bdaddr(addr)}"
    return record.to_line()
