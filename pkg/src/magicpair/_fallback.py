"""Pure-Python kernels, used when the compiled extension is unavailable."""

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

_ZERO = bytes(16)


def _ecb(key):
    return Cipher(algorithms.AES(bytes(key)), modes.ECB()).encryptor()


def encrypt_block(key, block):
    if len(key) != 16 or len(block) != 16:
        raise ValueError("AES-128 needs a 16-byte key and a 16-byte block")
    return _ecb(key).update(bytes(block))


def encrypt_blocks(key, data):
    if len(key) != 16 or len(data) % 16:
        raise ValueError("need a 16-byte key and a multiple of 16 bytes")
    return _ecb(key).update(bytes(data))


def ratchet(key, steps):
    if len(key) != 16:
        raise ValueError("ratchet key must be 16 bytes")
    k = bytes(key)
    for _ in range(steps):
        k = _ecb(k).update(_ZERO)
    return k
