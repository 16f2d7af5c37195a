"""Slow, independent reference implementations used to check the package.

Nothing here imports magicpair or OpenSSL.  AES-128 is a straight table-free
transcription of FIPS-197; CMAC/S2V/CTR follow RFC 4493 and RFC 5297 using
Python integers for the 128-bit arithmetic.
"""


def _xtime(b):
    b <<= 1
    if b & 0x100:
        b ^= 0x11B
    return b


def _gmul(a, b):
    r = 0
    while b:
        if b & 1:
            r ^= a
        a = _xtime(a)
        b >>= 1
    return r


def _build_sbox():
    sbox = [0] * 256
    for x in range(256):
        # multiplicative inverse by brute force, 0 maps to 0
        inv = 0
        if x:
            for y in range(1, 256):
                if _gmul(x, y) == 1:
                    inv = y
                    break
        s = inv
        for shift in range(1, 5):
            s ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
        sbox[x] = s ^ 0x63
    return sbox


SBOX = _build_sbox()


def _expand_key(key):
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    rcon = 1
    for i in range(4, 44):
        temp = list(words[i - 1])
        if i % 4 == 0:
            temp = temp[1:] + temp[:1]
            temp = [SBOX[b] for b in temp]
            temp[0] ^= rcon
            rcon = _xtime(rcon)
        words.append([a ^ b for a, b in zip(words[i - 4], temp)])
    return [sum(words[r * 4:r * 4 + 4], []) for r in range(11)]


def aes128_encrypt(key, block):
    assert len(key) == 16 and len(block) == 16
    round_keys = _expand_key(key)
    # state is column-major: state[c*4 + r]
    s = [b ^ k for b, k in zip(block, round_keys[0])]
    for rnd in range(1, 11):
        s = [SBOX[b] for b in s]
        s = [s[((c + r) % 4) * 4 + r] for c in range(4) for r in range(4)]
        if rnd != 10:
            mixed = []
            for c in range(4):
                a0, a1, a2, a3 = s[c * 4:c * 4 + 4]
                mixed += [
                    _gmul(a0, 2) ^ _gmul(a1, 3) ^ a2 ^ a3,
                    a0 ^ _gmul(a1, 2) ^ _gmul(a2, 3) ^ a3,
                    a0 ^ a1 ^ _gmul(a2, 2) ^ _gmul(a3, 3),
                    _gmul(a0, 3) ^ a1 ^ a2 ^ _gmul(a3, 2),
                ]
            s = mixed
        s = [b ^ k for b, k in zip(s, round_keys[rnd])]
    return bytes(s)


# --- key derivations, written from the protocol description ---------------

def address_blob(addr):
    blob = [0] * 16
    for i in range(6):
        blob[1 + i] = addr[5 - i]
    for i in range(1, 5):
        blob[6 + i] = addr[i] ^ addr[i - 1]
    return bytes(blob)


def accessory_key(master_key, addr):
    return aes128_encrypt(master_key, address_blob(addr))


def ratchet(key, steps):
    for _ in range(steps):
        key = aes128_encrypt(key, b"\x00" * 16)
    return key


def siv_key(acc_key):
    return (aes128_encrypt(acc_key, b"bt_aessivauthent"),
            aes128_encrypt(acc_key, b"bt_aessivencrypt"))


def link_key(rand_host, rand_acc):
    a = int.from_bytes(aes128_encrypt(rand_host, rand_acc), "big")
    b = int.from_bytes(aes128_encrypt(rand_acc, b"\x00" * 16), "big")
    return (a ^ b).to_bytes(16, "big")


# --- RFC 4493 / RFC 5297 ----------------------------------------------------

_MASK128 = (1 << 128) - 1


def _dbl(x):
    x <<= 1
    if x >> 128:
        x = (x & _MASK128) ^ 0x87
    return x


def cmac(key, msg):
    L = int.from_bytes(aes128_encrypt(key, bytes(16)), "big")
    k1 = _dbl(L)
    k2 = _dbl(k1)
    n = max(1, (len(msg) + 15) // 16)
    complete = len(msg) > 0 and len(msg) % 16 == 0
    last = msg[(n - 1) * 16:]
    if complete:
        last_int = int.from_bytes(last, "big") ^ k1
    else:
        padded = last + b"\x80" + bytes(15 - len(last))
        last_int = int.from_bytes(padded, "big") ^ k2
    x = 0
    for i in range(n - 1):
        y = x ^ int.from_bytes(msg[i * 16:(i + 1) * 16], "big")
        x = int.from_bytes(aes128_encrypt(key, y.to_bytes(16, "big")), "big")
    y = x ^ last_int
    return aes128_encrypt(key, y.to_bytes(16, "big"))


def s2v(key, strings):
    d = int.from_bytes(cmac(key, bytes(16)), "big")
    for s in strings[:-1]:
        d = _dbl(d) ^ int.from_bytes(cmac(key, s), "big")
    last = strings[-1]
    if len(last) >= 16:
        tail = int.from_bytes(last[-16:], "big") ^ d
        t = last[:-16] + tail.to_bytes(16, "big")
    else:
        padded = last + b"\x80" + bytes(15 - len(last))
        t = (_dbl(d) ^ int.from_bytes(padded, "big")).to_bytes(16, "big")
    return cmac(key, t)


def _ctr(key, iv, data):
    q = int.from_bytes(iv, "big") & ~((1 << 63) | (1 << 31)) & _MASK128
    out = bytearray()
    for i in range(0, len(data), 16):
        ks = aes128_encrypt(key, ((q + i // 16) & _MASK128).to_bytes(16, "big"))
        out += bytes(a ^ b for a, b in zip(data[i:i + 16], ks))
    return bytes(out)


def siv_encrypt(k_auth, k_enc, plaintext, associated_data=()):
    v = s2v(k_auth, list(associated_data) + [plaintext])
    return v + _ctr(k_enc, v, plaintext)


def siv_decrypt(k_auth, k_enc, ciphertext, associated_data=()):
    v, c = ciphertext[:16], ciphertext[16:]
    p = _ctr(k_enc, v, c)
    if s2v(k_auth, list(associated_data) + [p]) != v:
        return None
    return p
