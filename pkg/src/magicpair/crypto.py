"""Key material derivations for MagicPairing.

Every ``enc_ECB(k, m)`` in the protocol is a single AES-128 block encryption
with ``k`` as the key.  Keys are plain 16-byte ``bytes`` values.
"""

from __future__ import annotations

import hmac
from typing import NamedTuple, Sequence

from magicpair import kernels

KEY_SIZE = 16
ADDR_SIZE = 6
RATCHET_MAX = 0xFFFFFFFF

SIV_AUTH_CONSTANT = b"bt_aessivauthent"
SIV_ENC_CONSTANT = b"bt_aessivencrypt"

_ZERO_BLOCK = bytes(16)
_MASK128 = (1 << 128) - 1
# RFC 5297 clears the 31st and 63rd bits of the counter block
_CTR_CLEAR = _MASK128 ^ ((1 << 63) | (1 << 31))


class AuthenticationError(Exception):
    """The synthetic IV of an AES-SIV ciphertext did not verify."""


class SivKey(NamedTuple):
    auth_part: bytes
    enc_part: bytes

    def __bytes__(self) -> bytes:
        return self.auth_part + self.enc_part

    @classmethod
    def from_bytes(cls, data: bytes) -> "SivKey":
        if len(data) != 2 * KEY_SIZE:
            raise ValueError(f"SIV key must be 32 bytes, got {len(data)}")
        return cls(bytes(data[:16]), bytes(data[16:]))


def _check(name: str, value: bytes, size: int = KEY_SIZE) -> bytes:
    if len(value) != size:
        raise ValueError(f"{name} must be {size} bytes, got {len(value)}")
    return bytes(value)


def parse_bdaddr(text: str) -> bytes:
    """``"aa:bb:cc:dd:ee:ff"`` -> 6 bytes, index 0 is the first printed octet."""
    parts = text.strip().split(":")
    if len(parts) != ADDR_SIZE or not all(len(p) == 2 for p in parts):
        raise ValueError(f"malformed Bluetooth address: {text!r}")
    return bytes(int(p, 16) for p in parts)


def format_bdaddr(addr: bytes) -> str:
    return ":".join(f"{b:02x}" for b in _check("address", addr, ADDR_SIZE))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b, strict=True))


def aes_encrypt_block(key: bytes, block: bytes) -> bytes:
    return kernels.encrypt_block(_check("key", key), _check("block", block))


def derive_address_blob(addr: bytes) -> bytes:
    """Expand a 6-byte address into the 16-byte AES plaintext.

    Layout: byte 0 zero, bytes 1-6 the reversed address, bytes 7-10 the XOR of
    adjacent address octets, bytes 11-15 zero.
    """
    addr = _check("address", addr, ADDR_SIZE)
    blob = bytearray(16)
    blob[1:7] = addr[::-1]
    for i in range(1, 5):
        blob[6 + i] = addr[i] ^ addr[i - 1]
    return bytes(blob)


def derive_accessory_key(master_key: bytes, addr: bytes) -> bytes:
    return aes_encrypt_block(master_key, derive_address_blob(addr))


def derive_accessory_hint(master_hint: bytes, addr: bytes) -> bytes:
    return aes_encrypt_block(master_hint, derive_address_blob(addr))


def ratchet_key(acc_key: bytes, steps: int) -> bytes:
    """Rotate the chain key ``steps`` times: k <- AES_k(0^16)."""
    if not 0 <= steps <= RATCHET_MAX:
        raise ValueError(f"ratchet steps out of range: {steps}")
    return kernels.ratchet(_check("accessory key", acc_key), steps)


def derive_siv_key(acc_key: bytes) -> SivKey:
    acc_key = _check("accessory key", acc_key)
    # ECB over the 32-byte constant is two independent block encryptions
    both = kernels.encrypt_blocks(acc_key, SIV_AUTH_CONSTANT + SIV_ENC_CONSTANT)
    return SivKey(both[:16], both[16:])


def derive_link_key(rand_host: bytes, rand_acc: bytes) -> bytes:
    pre1 = aes_encrypt_block(rand_host, rand_acc)
    pre2 = aes_encrypt_block(rand_acc, _ZERO_BLOCK)
    return xor_bytes(pre1, pre2)


# --- AES-SIV (RFC 5297) -----------------------------------------------------

def _dbl(block: int) -> int:
    block <<= 1
    if block >> 128:
        block = (block & _MASK128) ^ 0x87
    return block


def _cmac_subkeys(key: bytes) -> tuple[int, int]:
    k1 = _dbl(int.from_bytes(kernels.encrypt_block(key, _ZERO_BLOCK), "big"))
    return k1, _dbl(k1)


def aes_cmac(key: bytes, message: bytes) -> bytes:
    """AES-CMAC (RFC 4493)."""
    key = _check("CMAC key", key)
    k1, k2 = _cmac_subkeys(key)
    if message and len(message) % 16 == 0:
        body, last = message[:-16], int.from_bytes(message[-16:], "big") ^ k1
    else:
        cut = len(message) - len(message) % 16
        body, tail = message[:cut], message[cut:]
        last = int.from_bytes(tail + b"\x80" + bytes(15 - len(tail)), "big") ^ k2
    state = 0
    for i in range(0, len(body), 16):
        state ^= int.from_bytes(body[i:i + 16], "big")
        state = int.from_bytes(
            kernels.encrypt_block(key, state.to_bytes(16, "big")), "big")
    return kernels.encrypt_block(key, (state ^ last).to_bytes(16, "big"))


def _s2v(key: bytes, components: Sequence[bytes], plaintext: bytes) -> bytes:
    d = int.from_bytes(aes_cmac(key, _ZERO_BLOCK), "big")
    for component in components:
        d = _dbl(d) ^ int.from_bytes(aes_cmac(key, component), "big")
    if len(plaintext) >= 16:
        tail = int.from_bytes(plaintext[-16:], "big") ^ d
        t = plaintext[:-16] + tail.to_bytes(16, "big")
    else:
        padded = plaintext + b"\x80" + bytes(15 - len(plaintext))
        t = (_dbl(d) ^ int.from_bytes(padded, "big")).to_bytes(16, "big")
    return aes_cmac(key, t)


def _ctr(key: bytes, iv: bytes, data: bytes) -> bytes:
    counter = int.from_bytes(iv, "big") & _CTR_CLEAR
    nblocks = (len(data) + 15) // 16
    counters = b"".join(((counter + i) & _MASK128).to_bytes(16, "big")
                        for i in range(nblocks))
    stream = kernels.encrypt_blocks(key, counters)
    return xor_bytes(data, stream[:len(data)])


def _ad_components(associated_data, empty_ad_component):
    components = list(associated_data)
    if empty_ad_component and not components:
        components = [b""]
    return components


def siv_encrypt(key: SivKey, plaintext: bytes, associated_data: Sequence[bytes] = (),
                *, empty_ad_component: bool = False) -> bytes:
    """Deterministic AES-SIV.  Output is the 16-byte IV followed by ciphertext.

    MagicPairing uses no associated data at all, i.e. S2V sees only the
    plaintext.  ``empty_ad_component`` feeds one empty header instead.
    """
    if not plaintext:
        raise ValueError("AES-SIV plaintext must not be empty")
    auth, enc = _check("SIV auth key", key[0]), _check("SIV enc key", key[1])
    iv = _s2v(auth, _ad_components(associated_data, empty_ad_component), plaintext)
    return iv + _ctr(enc, iv, plaintext)


def siv_decrypt(key: SivKey, ciphertext: bytes, associated_data: Sequence[bytes] = (),
                *, empty_ad_component: bool = False) -> bytes:
    """Inverse of :func:`siv_encrypt`; raises :class:`AuthenticationError`."""
    if len(ciphertext) < 17:
        raise ValueError(f"AES-SIV ciphertext too short: {len(ciphertext)} bytes")
    auth, enc = _check("SIV auth key", key[0]), _check("SIV enc key", key[1])
    iv, body = bytes(ciphertext[:16]), bytes(ciphertext[16:])
    plaintext = _ctr(enc, iv, body)
    expected = _s2v(auth, _ad_components(associated_data, empty_ad_component), plaintext)
    if not hmac.compare_digest(expected, iv):
        raise AuthenticationError("AES-SIV synthetic IV mismatch")
    return plaintext

