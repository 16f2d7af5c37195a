"""Per-account key state: master credentials and the Accessory Key table.

The on-disk format stands in for cloud synchronisation and is plaintext::

    magicpair-keystore v1
    master <hex32 master key> <hex32 master hint>
    acc <aa:bb:cc:dd:ee:ff> <hex32 key> <hex32 hint> <decimal ratchet>
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator

from magicpair import crypto

FORMAT_HEADER = "magicpair-keystore v1"

EntropySource = Callable[[int], bytes]


class KeystoreError(Exception):
    pass


class AlreadyProvisioned(KeystoreError):
    pass


class MissingCredentials(KeystoreError):
    pass


class DuplicateRecord(KeystoreError):
    pass


class UnknownPeer(KeystoreError):
    pass


class RatchetRegression(KeystoreError):
    pass


class KeystoreFormatError(KeystoreError):
    def __init__(self, lineno: int, message: str):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


def seeded_entropy(seed: int) -> EntropySource:
    """Deterministic byte source for tests and ``--seed`` runs."""
    return random.Random(seed).randbytes


def system_entropy(n: int) -> bytes:
    return os.urandom(n)


@dataclass(frozen=True)
class MasterCredentials:
    master_key: bytes
    master_hint: bytes


@dataclass(frozen=True)
class AccessoryKeyRecord:
    peer_addr: bytes
    acc_key: bytes
    acc_hint: bytes
    ratchet: int = 0

    def to_line(self) -> str:
        return (f"acc {crypto.format_bdaddr(self.peer_addr)} {self.acc_key.hex()} "
                f"{self.acc_hint.hex()} {self.ratchet}")


class Keystore:
    """Master credentials plus at most one record per address and per hint.

    Lookups return ``None`` for unknown peers; callers have to handle it.
    """

    def __init__(self, credentials: MasterCredentials | None = None):
        self.credentials = credentials
        self._by_addr: dict[bytes, AccessoryKeyRecord] = {}
        self._by_hint: dict[bytes, bytes] = {}

    def __len__(self) -> int:
        return len(self._by_addr)

    def __iter__(self) -> Iterator[AccessoryKeyRecord]:
        return iter(self._by_addr.values())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Keystore):
            return NotImplemented
        return self.credentials == other.credentials and self._by_addr == other._by_addr

    def clone(self) -> "Keystore":
        ks = Keystore(self.credentials)
        ks._by_addr = dict(self._by_addr)
        ks._by_hint = dict(self._by_hint)
        return ks

    def provision_master(self, entropy: EntropySource = system_entropy,
                         overwrite: bool = False) -> MasterCredentials:
        if self.credentials is not None and not overwrite:
            raise AlreadyProvisioned("master credentials already exist")
        key = entropy(crypto.KEY_SIZE)
        hint = entropy(crypto.KEY_SIZE)
        self.credentials = MasterCredentials(key, hint)
        return self.credentials

    def derive_record(self, peer_addr: bytes) -> AccessoryKeyRecord:
        """The record any device of this account derives for ``peer_addr``."""
        if self.credentials is None:
            raise MissingCredentials("no master credentials provisioned")
        return AccessoryKeyRecord(
            peer_addr=bytes(peer_addr),
            acc_key=crypto.derive_accessory_key(self.credentials.master_key, peer_addr),
            acc_hint=crypto.derive_accessory_hint(self.credentials.master_hint, peer_addr),
        )

    def create_record(self, peer_addr: bytes) -> AccessoryKeyRecord:
        record = self.derive_record(peer_addr)
        self.add_record(record)
        return record

    def add_record(self, record: AccessoryKeyRecord) -> None:
        if record.peer_addr in self._by_addr:
            raise DuplicateRecord(f"record for {crypto.format_bdaddr(record.peer_addr)} exists")
        if record.acc_hint in self._by_hint:
            raise DuplicateRecord(f"hint {record.acc_hint.hex()} already in use")
        self._by_addr[record.peer_addr] = record
        self._by_hint[record.acc_hint] = record.peer_addr

    def lookup_by_address(self, addr: bytes) -> AccessoryKeyRecord | None:
        return self._by_addr.get(bytes(addr))

    def lookup_by_hint(self, hint: bytes) -> AccessoryKeyRecord | None:
        addr = self._by_hint.get(bytes(hint))
        return None if addr is None else self._by_addr[addr]

    def commit_ratchet(self, peer_addr: bytes, new_ratchet: int, new_key: bytes) -> AccessoryKeyRecord:
        """Atomically store a rotated key.  A lower ratchet is refused."""
        record = self._by_addr.get(bytes(peer_addr))
        if record is None:
            raise UnknownPeer(f"no record for {crypto.format_bdaddr(peer_addr)}")
        if new_ratchet < record.ratchet:
            raise RatchetRegression(f"ratchet {new_ratchet} < stored {record.ratchet}")
        if not 0 <= new_ratchet <= crypto.RATCHET_MAX or len(new_key) != crypto.KEY_SIZE:
            raise ValueError("ratchet or key out of range")
        updated = replace(record, ratchet=new_ratchet, acc_key=bytes(new_key))
        self._by_addr[record.peer_addr] = updated
        return updated

    # --- persistence ---------------------------------------------------

    def dumps(self) -> str:
        lines = [FORMAT_HEADER]
        if self.credentials is not None:
            lines.append(f"master {self.credentials.master_key.hex()} "
                         f"{self.credentials.master_hint.hex()}")
        lines.extend(r.to_line() for r in self._by_addr.values())
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Keystore":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines:
            raise KeystoreFormatError(1, "empty file")
        if lines[0] != FORMAT_HEADER:
            if lines[0].startswith("magicpair-keystore "):
                raise KeystoreFormatError(1, f"unsupported version {lines[0].split()[-1]!r}")
            raise KeystoreFormatError(1, f"expected {FORMAT_HEADER!r}")
        ks = cls()
        for lineno, line in enumerate(lines[1:], start=2):
            fields = line.split(" ")
            try:
                if fields[0] == "master" and len(fields) == 3:
                    if ks.credentials is not None or len(ks):
                        raise ValueError("master line must come once, before records")
                    ks.credentials = MasterCredentials(_hex16(fields[1]), _hex16(fields[2]))
                elif fields[0] == "acc" and len(fields) == 5:
                    ratchet = int(fields[4], 10)
                    if not fields[4].isdigit() or ratchet > crypto.RATCHET_MAX:
                        raise ValueError(f"bad ratchet {fields[4]!r}")
                    ks.add_record(AccessoryKeyRecord(
                        crypto.parse_bdaddr(fields[1]), _hex16(fields[2]),
                        _hex16(fields[3]), ratchet))
                else:
                    raise ValueError(f"unrecognised line {line!r}")
            except (ValueError, DuplicateRecord) as exc:
                raise KeystoreFormatError(lineno, str(exc)) from None
        return ks

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.dumps(), encoding="ascii", newline="\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Keystore":
        return cls.loads(Path(path).read_text(encoding="ascii"))


def _hex16(text: str) -> bytes:
    if len(text) != 32 or text != text.lower():
        raise ValueError(f"expected 32 lowercase hex digits, got {text!r}")
    return bytes.fromhex(text)


def save(ks: Keystore, path: str | os.PathLike) -> None:
    ks.save(path)


def load(path: str | os.PathLike) -> Keystore:
    return Keystore.load(path)
