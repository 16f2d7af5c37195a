import random

import pytest

from magicpair import crypto
from magicpair.codec import (
    ACCESSORY_SIV_SIZE, HOST_SIV_SIZE, DecodeError, KeyEntry, KeyType, Message, MsgType, StatusCode,
    decode_message)
from magicpair.keystore import seeded_entropy
from magicpair.pairing import make_account, pair_account
from magicpair.session import (
    KDF_BUDGET, FaultKind, Outcome, PairingSession, PolicyConfig, Role, State)

FLAWED = PolicyConfig.flawed().with_flags(loop_halt_steps=2048)
HARDENED = PolicyConfig.hardened()
STRANGER = bytes.fromhex("0a0b0c0d0e0f")


def host(account, policy=HARDENED, peer=None, seed=1):
    return PairingSession(Role.HOST, peer or account.accessory_addr, account.host_keystore,
                          policy, seeded_entropy(seed))


def accessory(account, policy=HARDENED, peer=None, seed=2):
    return PairingSession(Role.ACCESSORY, peer or account.host_addr, account.accessory_keystore,
                          policy, seeded_entropy(seed), own_addr=account.accessory_addr)


def handshake(h, a):
    hint = h.step(Message.ping()).messages[0]
    r = a.step(hint).messages[0]
    s = h.step(r).messages[0]
    st = a.step(s).messages[0]
    h.step(st)
    return hint, r, s, st


def test_full_handshake_agrees():
    acct = make_account(0)
    h, a = host(acct), accessory(acct)
    hint, r, s, st = handshake(h, a)
    assert h.state is State.COMPLETE and a.state is State.COMPLETE
    assert h.link_key == a.link_key == crypto.derive_link_key(h.rand_host, h.rand_acc)
    assert len(r.entry(KeyType.AES_SIV).value) == ACCESSORY_SIV_SIZE
    assert len(s.entry(KeyType.AES_SIV).value) == HOST_SIV_SIZE
    assert st == Message.status(StatusCode.SUCCESS)


def test_trace_records_every_step():
    acct = make_account(0)
    h, a = host(acct), accessory(acct)
    handshake(h, a)
    assert [e.as_tuple() for e in h.trace] == [
        ("Idle", MsgType.PING, "Accepted"),
        ("AwaitRatchet", MsgType.RATCHET_AES_SIV, "Accepted"),
        ("AwaitStatus", MsgType.STATUS, "Accepted"),
    ]
    assert [e.state.value for e in a.trace] == ["Idle", "AwaitAesSiv"]


def test_start_host_and_start_accessory():
    acct = make_account(1)
    h, a = host(acct), accessory(acct)
    assert a.start_accessory().messages == [Message.ping()]
    assert a.state is State.AWAIT_HINT
    out = h.start_host()
    assert out.messages[0].msg_type == MsgType.HINT
    r = a.step(out.messages[0])
    assert r.messages[0].msg_type == MsgType.RATCHET_AES_SIV


def test_pairings_repeat_with_fresh_keys():
    acct = make_account(3)
    keys = set()
    for seed in range(5):
        result = pair_account(acct, seed)
        assert result.keys_match
        keys.add(result.host.link_key)
    assert len(keys) == 5


def test_accessory_follows_host_ratchet_ahead():
    acct = make_account(4)
    rec = acct.host_keystore.lookup_by_address(acct.accessory_addr)
    acct.host_keystore.commit_ratchet(rec.peer_addr, 3, crypto.ratchet_key(rec.acc_key, 3))
    h, a = host(acct), accessory(acct)
    handshake(h, a)
    assert h.link_key == a.link_key
    assert acct.accessory_keystore.lookup_by_address(acct.accessory_addr).ratchet == 3


def test_accessory_rejects_discrepancy_over_threshold():
    acct = make_account(4)
    rec = acct.host_keystore.lookup_by_address(acct.accessory_addr)
    acct.host_keystore.commit_ratchet(rec.peer_addr, 9, crypto.ratchet_key(rec.acc_key, 9))
    h, a = host(acct), accessory(acct)
    hint = h.step(Message.ping()).messages[0]
    out = a.step(hint)
    assert out.messages == [Message.status(StatusCode.INTERNAL_ERROR)]
    assert h.step(out.messages[0]).outcome is Outcome.ACCEPTED
    assert h.state is State.FAILED and h.last_status == StatusCode.INTERNAL_ERROR


def test_host_unknown_peer_ping():
    acct = make_account(0)
    for policy in (FLAWED, HARDENED):
        h = host(acct, policy, peer=STRANGER)
        out = h.step(Message.ping())
        assert out.messages == [Message.status(StatusCode.UNKNOWN_DEVICE)]
        assert h.state is State.IDLE


@pytest.mark.parametrize("order", [
    (KeyType.RATCHET, KeyType.AES_SIV), (KeyType.AES_SIV, KeyType.RATCHET), (KeyType.AES_SIV,)])
def test_ratcheting_from_unknown_peer(order):
    acct = make_account(0)
    values = {KeyType.RATCHET: bytes(4), KeyType.AES_SIV: bytes(54)}
    msg = Message(MsgType.RATCHET_AES_SIV, entries=tuple(KeyEntry(k, values[k]) for k in order))
    out = host(acct, FLAWED, peer=STRANGER).step(msg)
    assert out.fault.kind is FaultKind.INVALID_ACCESS
    assert KeyType(order[0]).name in out.fault.detail
    h = host(acct, HARDENED, peer=STRANGER)
    out = h.step(msg)
    assert out.fault is None
    assert out.messages == [Message.status(StatusCode.UNKNOWN_DEVICE)]


def test_hint_from_unknown_peer():
    acct = make_account(0)
    hint = Message.hint(bytes(16), bytes(16), 0)
    flawed = accessory(acct, FLAWED, peer=STRANGER)
    assert flawed.step(hint).fault.kind is FaultKind.INVALID_ACCESS
    assert flawed.state is State.FAILED
    out = accessory(acct, HARDENED, peer=STRANGER).step(hint)
    assert out.fault is None and out.messages == [Message.status(StatusCode.UNKNOWN_DEVICE)]


def test_parse_abort_only_when_flawed():
    err = DecodeError("overflow", 10, "short", MsgType.RATCHET_AES_SIV)
    acct = make_account(0)
    assert host(acct, FLAWED).step(err).fault.kind is FaultKind.ABORT
    out = host(acct, HARDENED).step(err)
    assert out.fault is None and out.outcome is Outcome.REJECTED
    other = DecodeError("overflow", 4, "short", MsgType.HINT)
    assert host(acct, FLAWED).step(other).fault is None


def test_ratchet_loop_halted_and_measured():
    acct = make_account(0)
    hint = Message.hint(acct.host_keystore.lookup_by_address(acct.accessory_addr).acc_hint,
                        bytes(16), 0xFFFFFFFF)
    responder = PairingSession(Role.ACCESSORY, acct.accessory_addr, acct.host_keystore, FLAWED,
                               seeded_entropy(5))
    out = responder.step(hint)
    assert out.fault.kind is FaultKind.RATCHET_LOOP_ENGAGED
    assert out.kdf_steps == 2048
    assert out.fault.metrics["steps_requested"] == 0xFFFFFFFF
    assert out.fault.metrics["steps_per_second"] > 0


def test_hardened_bounds_ratchet_delta():
    acct = make_account(0)
    h = host(acct)
    h.step(Message.ping())
    out = h.step(Message.ratchet_aes_siv(5000, bytes(54)))
    assert out.fault is None and out.kdf_steps == 0
    assert out.messages == [Message.status(StatusCode.INTERNAL_ERROR)]


def test_lockout_commit_semantics():
    acct = make_account(0)
    for policy, committed in ((FLAWED, 10), (HARDENED, 0)):
        acct = make_account(0)
        h = host(acct, policy)
        h.step(Message.ping())
        out = h.step(Message.ratchet_aes_siv(10, bytes(54)))
        assert out.messages == [Message.status(StatusCode.INTERNAL_ERROR)]
        assert (out.fault is not None) == (policy is FLAWED)
        assert acct.host_keystore.lookup_by_address(acct.accessory_addr).ratchet == committed


def test_host_tampered_siv_rejected_without_commit():
    acct = make_account(0)
    h, a = host(acct), accessory(acct)
    hint = h.step(Message.ping()).messages[0]
    r = a.step(hint).messages[0]
    siv = bytearray(r.entry(KeyType.AES_SIV).value)
    siv[0] ^= 0x80
    out = h.step(Message.ratchet_aes_siv(r.ratchet_value(), bytes(siv)))
    assert out.outcome is Outcome.REJECTED
    assert h.state is State.FAILED


def test_out_of_state_messages_rejected():
    acct = make_account(0)
    h = host(acct)
    assert h.step(Message.status(0)).outcome is Outcome.REJECTED
    assert h.step(Message.aes_siv(bytes(80))).outcome is Outcome.REJECTED
    a = accessory(acct)
    assert a.step(Message.ping()).outcome is Outcome.REJECTED
    assert a.step(Message.aes_siv(bytes(80))).outcome is Outcome.REJECTED
    assert h.state is State.IDLE and a.state is State.IDLE


def test_complete_session_rejects_further_input():
    acct = make_account(0)
    h, a = host(acct), accessory(acct)
    handshake(h, a)
    assert h.step(Message.ping()).outcome is Outcome.REJECTED


def test_policy_presets_and_flags():
    assert HARDENED.lookup_checked and HARDENED.max_ratchet_delta == 1024
    f = PolicyConfig.flawed()
    assert not f.lookup_checked and f.max_ratchet_delta is None and f.parse_abort
    g = HARDENED.with_flag_strings(["parse_abort=true", "max-ratchet-delta=none",
                                     "accessory_ratchet_discrepancy_threshold=3"])
    assert g.parse_abort and g.max_ratchet_delta is None
    assert g.accessory_ratchet_discrepancy_threshold == 3
    with pytest.raises(ValueError):
        HARDENED.with_flag_strings(["no_such_flag=1"])
    with pytest.raises(ValueError):
        HARDENED.with_flag_strings(["parse_abort=maybe"])
    with pytest.raises(ValueError):
        PolicyConfig.preset("medium")


def test_clone_is_independent():
    acct = make_account(0)
    h = host(acct)
    h.step(Message.ping())
    c = h.clone()
    c.step(Message.ratchet_aes_siv(10, bytes(54)))
    assert h.state is State.AWAIT_RATCHET
    assert len(h.trace) == 1


@pytest.mark.slow
def test_hardened_never_faults_over_random_sequences():
    from magicpair.fuzz import generate_message, honest_snapshots
    snaps = honest_snapshots(HARDENED, 0)
    names = snaps.names()
    rng = random.Random(11)
    sessions = {n: snaps.fresh(n) for n in names}
    for i in range(100_000):
        name = names[i % len(names)]
        data = generate_message(rng.getrandbits(40))
        try:
            incoming = decode_message(data)
        except DecodeError as err:
            incoming = err
        out = sessions[name].step(incoming)
        assert out.fault is None, (name, data.hex())
        assert out.kdf_steps <= KDF_BUDGET
        if i % 50 == 49:
            sessions[name] = snaps.fresh(name)
