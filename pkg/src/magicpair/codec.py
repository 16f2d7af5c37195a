"""Wire format for MagicPairing messages and the L2CAP frame carrying them.

Message layout::

    type(1) version(1) | key message:   count(1) (ktype(1) klen(1) value)*count
                       | short message: data(1)

Frame layout (basic L2CAP header)::

    length(2, LE) channel_id(2, LE) payload

Type codes are centrally tabled below; multi-byte integers are little-endian.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

FIXED_CID = 0x0030
# connectionless (formerly group) channel; never routed to MagicPairing
GROUP_CID = 0x0002

HEADER_SIZE = 2
FRAME_HEADER_SIZE = 4
MAX_FRAME_PAYLOAD = 0xFFFF

ACCESSORY_SIV_SIZE = 0x36  # rand(16) nonce(16) addr(6) + 16-byte IV
HOST_SIV_SIZE = 0x50  # nonce(16) rand(16) rand(16) hint(16) + 16-byte IV


class MsgType(enum.IntEnum):
    PING = 0x01
    STATUS = 0x02
    HINT = 0x03
    RATCHET_AES_SIV = 0x04
    AES_SIV = 0x05
    RATCHET_UNUSED = 0x06


class KeyType(enum.IntEnum):
    HINT = 0x01
    NONCE = 0x02
    RATCHET = 0x03
    AES_SIV = 0x04


class StatusCode(enum.IntEnum):
    SUCCESS = 0x00
    UNKNOWN_DEVICE = 0x01
    INTERNAL_ERROR = 0x02


SHORT_TYPES = frozenset({MsgType.PING, MsgType.STATUS})
KEY_TYPES = frozenset({MsgType.HINT, MsgType.RATCHET_AES_SIV, MsgType.AES_SIV})

FIXED_KEY_LENGTHS = {KeyType.HINT: 16, KeyType.NONCE: 16, KeyType.RATCHET: 4}


class DecodeError(ValueError):
    """Malformed bytes.  Always returned to the caller, never fatal.

    ``reason`` is one of ``truncated``, ``overflow``, ``count-mismatch``,
    ``trailing``, ``bad-length``, ``length-mismatch`` or ``reserved-channel``.
    ``msg_type`` is the header type when the header itself was readable.
    """

    def __init__(self, reason: str, offset: int, detail: str = "", msg_type: int | None = None):
        self.reason = reason
        self.offset = offset
        self.detail = detail
        self.msg_type = msg_type
        super().__init__(f"{reason} at offset {offset}" + (f": {detail}" if detail else ""))


class EncodeError(ValueError):
    pass


@dataclass(frozen=True)
class KeyEntry:
    key_type: int
    value: bytes

    @property
    def length(self) -> int:
        return len(self.value)

    def check(self) -> None:
        if not 0 <= self.key_type <= 0xFF:
            raise EncodeError(f"key type out of range: {self.key_type}")
        if len(self.value) > 0xFF:
            raise EncodeError(f"key value too long: {len(self.value)}")
        want = FIXED_KEY_LENGTHS.get(self.key_type)
        if want is not None and len(self.value) != want:
            raise EncodeError(
                f"{KeyType(self.key_type).name} entry must be {want} bytes, got {len(self.value)}")

    @classmethod
    def ratchet(cls, value: int) -> "KeyEntry":
        return cls(KeyType.RATCHET, struct.pack("<I", value))


@dataclass(frozen=True)
class Message:
    """A decoded MagicPairing message.

    Short messages (Ping, Status) use ``data``; key messages use ``entries``;
    RatchetUnused and unknown types keep their body in ``raw``.
    """

    msg_type: int
    version: int = 0
    data: int | None = None
    entries: tuple[KeyEntry, ...] = ()
    raw: bytes = b""

    @classmethod
    def ping(cls, data: int = 0) -> "Message":
        return cls(MsgType.PING, data=data)

    @classmethod
    def status(cls, code: int) -> "Message":
        return cls(MsgType.STATUS, data=int(code))

    @classmethod
    def hint(cls, hint: bytes, nonce: bytes, ratchet: int) -> "Message":
        return cls(MsgType.HINT, entries=(
            KeyEntry(KeyType.HINT, hint),
            KeyEntry(KeyType.NONCE, nonce),
            KeyEntry.ratchet(ratchet),
        ))

    @classmethod
    def ratchet_aes_siv(cls, ratchet: int, aes_siv: bytes) -> "Message":
        return cls(MsgType.RATCHET_AES_SIV, entries=(
            KeyEntry.ratchet(ratchet),
            KeyEntry(KeyType.AES_SIV, aes_siv),
        ))

    @classmethod
    def aes_siv(cls, aes_siv: bytes) -> "Message":
        return cls(MsgType.AES_SIV, entries=(KeyEntry(KeyType.AES_SIV, aes_siv),))

    def entry(self, key_type: int) -> KeyEntry | None:
        for e in self.entries:
            if e.key_type == key_type:
                return e
        return None

    def ratchet_value(self) -> int | None:
        e = self.entry(KeyType.RATCHET)
        return None if e is None else struct.unpack("<I", e.value)[0]

    @property
    def type_name(self) -> str:
        try:
            return MsgType(self.msg_type).name
        except ValueError:
            return f"UNKNOWN_{self.msg_type:02x}"

    def describe(self) -> str:
        if self.msg_type == MsgType.PING:
            return f"Ping data={self.data:02x}"
        if self.msg_type == MsgType.STATUS:
            try:
                label = StatusCode(self.data).name.lower().replace("_", "-")
            except ValueError:
                label = "reserved"
            return f"Status code={self.data:02x} ({label})"
        if self.msg_type in KEY_TYPES:
            parts = []
            for e in self.entries:
                try:
                    name = KeyType(e.key_type).name
                except ValueError:
                    name = f"key_{e.key_type:02x}"
                parts.append(f"{name}[{e.length}]={e.value.hex()}")
            return f"{self.type_name} version={self.version:02x} " + " ".join(parts)
        return f"{self.type_name} version={self.version:02x} opaque={self.raw.hex()}"


def encode_message(msg: Message) -> bytes:
    if not (0 <= msg.msg_type <= 0xFF and 0 <= msg.version <= 0xFF):
        raise EncodeError("header fields must fit in one byte")
    out = bytearray((msg.msg_type, msg.version))
    if msg.msg_type in SHORT_TYPES:
        if msg.data is None or not 0 <= msg.data <= 0xFF:
            raise EncodeError(f"{msg.type_name} needs one data byte")
        out.append(msg.data)
    elif msg.msg_type in KEY_TYPES:
        if not msg.entries:
            raise EncodeError(f"{msg.type_name} needs at least one key entry")
        if len(msg.entries) > 0xFF:
            raise EncodeError("too many key entries")
        out.append(len(msg.entries))
        for e in msg.entries:
            e.check()
            out += bytes((e.key_type, len(e.value)))
            out += e.value
    else:
        out += msg.raw
    return bytes(out)


def decode_message(data: bytes) -> Message:
    """Parse one message.  Raises :class:`DecodeError`; never reads past ``data``."""
    data = bytes(data)
    n = len(data)
    if n < HEADER_SIZE:
        raise DecodeError("truncated", n, "header needs 2 bytes")
    msg_type, version = data[0], data[1]

    if msg_type in SHORT_TYPES:
        if n < 3:
            raise DecodeError("truncated", n, "short message needs a data byte", msg_type)
        if n > 3:
            raise DecodeError("trailing", 3, f"{n - 3} extra bytes", msg_type)
        return Message(msg_type, version, data=data[2])

    if msg_type not in KEY_TYPES:
        return Message(msg_type, version, raw=data[2:])

    if n < 3:
        raise DecodeError("truncated", n, "missing key count", msg_type)
    count = data[2]
    if count == 0:
        raise DecodeError("count-mismatch", 2, "key message with zero entries", msg_type)
    pos = 3
    entries = []
    for i in range(count):
        if pos + 2 > n:
            raise DecodeError("truncated", pos, f"entry {i} of {count} missing", msg_type)
        key_type, length = data[pos], data[pos + 1]
        if pos + 2 + length > n:
            raise DecodeError("overflow", pos + 1,
                              f"entry declares {length} bytes, {n - pos - 2} remain", msg_type)
        want = FIXED_KEY_LENGTHS.get(key_type)
        if want is not None and length != want:
            raise DecodeError("bad-length", pos + 1,
                              f"{KeyType(key_type).name} entry of {length} bytes", msg_type)
        entries.append(KeyEntry(key_type, data[pos + 2:pos + 2 + length]))
        pos += 2 + length
    if pos != n:
        raise DecodeError("count-mismatch", pos, f"{n - pos} bytes after {count} entries", msg_type)
    return Message(msg_type, version, entries=tuple(entries))


@dataclass(frozen=True)
class L2capFrame:
    channel_id: int
    payload: bytes = field(default=b"")

    @property
    def length(self) -> int:
        return len(self.payload)


def encode_frame(frame: L2capFrame) -> bytes:
    if len(frame.payload) > MAX_FRAME_PAYLOAD:
        raise EncodeError(f"payload too long for one frame: {len(frame.payload)}")
    if not 0 <= frame.channel_id <= 0xFFFF:
        raise EncodeError(f"channel id out of range: {frame.channel_id}")
    return struct.pack("<HH", len(frame.payload), frame.channel_id) + frame.payload


def decode_frame(data: bytes) -> L2capFrame:
    """Parse a frame.  A zero-length frame with no payload is valid and empty."""
    data = bytes(data)
    if len(data) < FRAME_HEADER_SIZE:
        raise DecodeError("truncated", len(data), "frame header needs 4 bytes")
    length, cid = struct.unpack_from("<HH", data)
    if length != len(data) - FRAME_HEADER_SIZE:
        raise DecodeError("length-mismatch", 0,
                          f"declared {length}, carried {len(data) - FRAME_HEADER_SIZE}")
    return L2capFrame(cid, data[FRAME_HEADER_SIZE:])


def check_channel(frame: L2capFrame, expected_cid: int = FIXED_CID) -> None:
    """Reject frames that must not reach the MagicPairing handler.

    Group-channel payloads are refused outright instead of being dispatched
    through a handler table.
    """
    if frame.channel_id == GROUP_CID:
        raise DecodeError("reserved-channel", 2, "group/connectionless channel 0x0002")
    if frame.channel_id != expected_cid:
        raise DecodeError("reserved-channel", 2,
                          f"channel 0x{frame.channel_id:04x} is not 0x{expected_cid:04x}")
