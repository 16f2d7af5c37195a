# cython: language_level=3, boundscheck=False, wraparound=False
"""AES-128 block kernels backed by OpenSSL's libcrypto.

The ratchet loop re-keys AES on every step, so it is dominated by key setup;
keeping the whole loop in C avoids one Python object allocation per step.
"""

from libc.string cimport memcpy, memset

cdef extern from "openssl/aes.h":
    ctypedef struct AES_KEY:
        unsigned int rd_key[60]
        int rounds
    int AES_set_encrypt_key(const unsigned char *userKey, const int bits,
                            AES_KEY *key) nogil
    void AES_encrypt(const unsigned char *inp, unsigned char *out,
                     const AES_KEY *key) nogil


def encrypt_block(const unsigned char[:] key, const unsigned char[:] block):
    if key.shape[0] != 16 or block.shape[0] != 16:
        raise ValueError("AES-128 needs a 16-byte key and a 16-byte block")
    cdef AES_KEY schedule
    cdef unsigned char out[16]
    AES_set_encrypt_key(&key[0], 128, &schedule)
    AES_encrypt(&block[0], out, &schedule)
    return <bytes>out[:16]


def encrypt_blocks(const unsigned char[:] key, const unsigned char[:] data):
    """ECB over a whole number of blocks under one key."""
    cdef Py_ssize_t n = data.shape[0]
    if key.shape[0] != 16 or n % 16:
        raise ValueError("need a 16-byte key and a multiple of 16 bytes")
    cdef AES_KEY schedule
    cdef bytearray out = bytearray(n)
    cdef unsigned char *dst = out
    cdef Py_ssize_t i
    AES_set_encrypt_key(&key[0], 128, &schedule)
    with nogil:
        for i in range(0, n, 16):
            AES_encrypt(&data[i], dst + i, &schedule)
    return bytes(out)


def ratchet(const unsigned char[:] key, unsigned long long steps):
    """Apply k <- AES_k(0^16) `steps` times."""
    if key.shape[0] != 16:
        raise ValueError("ratchet key must be 16 bytes")
    cdef AES_KEY schedule
    cdef unsigned char k[16]
    cdef unsigned char zero[16]
    cdef unsigned long long i
    memcpy(k, &key[0], 16)
    memset(zero, 0, 16)
    with nogil:
        for i in range(steps):
            AES_set_encrypt_key(k, 128, &schedule)
            AES_encrypt(zero, k, &schedule)
    return <bytes>k[:16]
