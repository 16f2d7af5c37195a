import pytest

from magicpair import attacks
from magicpair.attacks import FlawedOutcome, HardenedOutcome


@pytest.mark.parametrize("attack_id", ["MP1", "MP2", "MP3", "MP4", "MP5", "MP6", "MP8", "L2CAP1"])
def test_expected_verdict(attack_id):
    v = attacks.run_attack(attack_id, seed=0)
    assert v.against_flawed is FlawedOutcome.REPRODUCED
    assert v.against_hardened is HardenedOutcome.MITIGATED
    assert v.to_line() == f"{attack_id} flawed=FaultReproduced hardened=Mitigated"


def test_ratchet_loop_small_halt():
    v = attacks.attack_ratchet_loop(seed=0, halt_steps=4096)
    assert v.expected
    assert v.measurements["steps_executed"] == 4096
    assert v.measurements["reference_steps_per_second"] == 7000


def test_ratchet_loop_small_delta_not_reproduced():
    v = attacks.attack_ratchet_loop(3, seed=0, halt_steps=4096)
    assert v.against_flawed is FlawedOutcome.NOT_REPRODUCED


def test_lockout_needs_delta_over_threshold():
    assert attacks.attack_lockout(10).expected
    # within the accessory's tolerance the genuine re-pairing still works
    assert attacks.attack_lockout(1).against_flawed is FlawedOutcome.NOT_REPRODUCED


def test_lockout_evidence():
    v = attacks.attack_lockout(10)
    assert "flawed: host ratchet 0 -> 10" in v.evidence
    assert "hardened: host ratchet 0 -> 0" in v.evidence
    assert any("re-pair accessory: Status code=02" in e for e in v.evidence if e.startswith("flawed"))
    assert "hardened: re-pair complete=True" in v.evidence


def test_unknown_peer_evidence_names_field():
    mp1 = attacks.run_attack("MP1")
    mp3 = attacks.run_attack("MP3")
    assert any("at RATCHET field" in e for e in mp1.evidence)
    assert any("at AES_SIV field" in e for e in mp3.evidence)


def test_parse_abort_liveness():
    v = attacks.run_attack("MP6")
    assert any("Ping (liveness) outcome=Accepted" in e for e in v.evidence)


def test_deterministic_evidence():
    for attack_id in ("MP2", "MP6", "MP8"):
        assert attacks.run_attack(attack_id, seed=3) == attacks.run_attack(attack_id, seed=3)


def test_unknown_attack_id():
    with pytest.raises(ValueError):
        attacks.run_attack("MP9")


def test_report_format():
    v = attacks.run_attack("L2CAP1")
    assert attacks.format_report([v, v]) == (v.to_line() + "\n") * 2
