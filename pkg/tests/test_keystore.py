import random

import pytest
from hypothesis import given, settings, strategies as st

from magicpair import crypto
from magicpair.keystore import (
    AlreadyProvisioned, DuplicateRecord, Keystore, KeystoreFormatError, MasterCredentials,
    MissingCredentials, RatchetRegression, UnknownPeer, load, save, seeded_entropy)

ADDR = bytes.fromhex("010203040506")


@pytest.fixture
def ks():
    store = Keystore()
    store.provision_master(seeded_entropy(1))
    return store


def test_record_matches_derivations(ks):
    rec = ks.create_record(ADDR)
    assert rec.acc_key == crypto.derive_accessory_key(ks.credentials.master_key, ADDR)
    assert rec.acc_hint == crypto.derive_accessory_hint(ks.credentials.master_hint, ADDR)
    assert rec.ratchet == 0
    assert ks.lookup_by_address(ADDR) == rec
    assert ks.lookup_by_hint(rec.acc_hint) == rec


def test_unknown_lookups_return_none(ks):
    assert ks.lookup_by_address(ADDR) is None
    assert ks.lookup_by_hint(bytes(16)) is None


def test_provisioning_rules():
    store = Keystore()
    with pytest.raises(MissingCredentials):
        store.create_record(ADDR)
    first = store.provision_master(seeded_entropy(2))
    with pytest.raises(AlreadyProvisioned):
        store.provision_master(seeded_entropy(3))
    assert store.provision_master(seeded_entropy(3), overwrite=True) != first


def test_seeded_provisioning_is_deterministic():
    a, b = Keystore(), Keystore()
    assert a.provision_master(seeded_entropy(9)) == b.provision_master(seeded_entropy(9))


def test_duplicate_record(ks):
    ks.create_record(ADDR)
    with pytest.raises(DuplicateRecord):
        ks.create_record(ADDR)


def test_commit_ratchet(ks):
    ks.create_record(ADDR)
    new_key = crypto.ratchet_key(ks.lookup_by_address(ADDR).acc_key, 3)
    rec = ks.commit_ratchet(ADDR, 3, new_key)
    assert rec.ratchet == 3 and rec.acc_key == new_key
    assert ks.lookup_by_hint(rec.acc_hint).ratchet == 3
    with pytest.raises(RatchetRegression):
        ks.commit_ratchet(ADDR, 2, new_key)
    with pytest.raises(UnknownPeer):
        ks.commit_ratchet(b"\x00" * 6, 1, new_key)


def test_multi_device_property():
    creds = Keystore().provision_master(seeded_entropy(4))
    phone, laptop = Keystore(creds), Keystore(creds)
    for addr in (ADDR, bytes.fromhex("a0b0c0d0e0f0")):
        assert phone.create_record(addr) == laptop.create_record(addr)


def test_save_load_round_trip(ks, tmp_path):
    ks.create_record(ADDR)
    ks.create_record(bytes.fromhex("aabbccddeeff"))
    ks.commit_ratchet(ADDR, 12, bytes(range(16)))
    path = tmp_path / "ks.txt"
    save(ks, path)
    text = path.read_bytes()
    again = load(path)
    assert again == ks
    save(again, path)
    assert path.read_bytes() == text


def test_file_format(ks):
    ks.create_record(ADDR)
    lines = ks.dumps().splitlines()
    assert lines[0] == "magicpair-keystore v1"
    assert lines[1].startswith("master ")
    assert lines[2].startswith("acc 01:02:03:04:05:06 ")
    assert lines[2].endswith(" 0")


@pytest.mark.parametrize("text,lineno", [
    ("", 1),
    ("magicpair-keystore v2\n", 1),
    ("something else\n", 1),
    ("magicpair-keystore v1\nmaster 00 11\n", 2),
    ("magicpair-keystore v1\nbogus\n", 2),
])
def test_malformed_files(text, lineno):
    with pytest.raises(KeystoreFormatError) as exc:
        Keystore.loads(text)
    assert exc.value.lineno == lineno


def test_bad_ratchet_field(ks):
    ks.create_record(ADDR)
    text = ks.dumps().replace(" 0\n", " -1\n")
    with pytest.raises(KeystoreFormatError):
        Keystore.loads(text)


def test_clone_is_independent(ks):
    ks.create_record(ADDR)
    copy = ks.clone()
    copy.commit_ratchet(ADDR, 5, bytes(16))
    assert ks.lookup_by_address(ADDR).ratchet == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(0, 3000), min_size=1, max_size=30))
def test_ratchet_never_decreases(seed, proposals):
    store = Keystore(MasterCredentials(bytes(16), bytes(range(16))))
    store.create_record(ADDR)
    rng = random.Random(seed)
    for proposal in proposals:
        before = store.lookup_by_address(ADDR).ratchet
        try:
            store.commit_ratchet(ADDR, proposal, rng.randbytes(16))
        except RatchetRegression:
            assert proposal < before
        after = store.lookup_by_address(ADDR).ratchet
        assert after >= before
