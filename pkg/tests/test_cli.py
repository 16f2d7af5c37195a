import pytest

from magicpair.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_keygen_provision_then_create(tmp_path, capsys):
    ks = str(tmp_path / "ks")
    code, out, _ = run(capsys, "keygen", "--keystore", ks, "--seed", "3", "--provision",
                       "--create", "01:02:03:04:05:06")
    assert code == 0
    assert out.splitlines()[-1].startswith("acc 01:02:03:04:05:06 ")
    assert out.splitlines()[-1].endswith(" 0")


def test_keygen_deterministic_with_seed(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        _, out, _ = run(capsys, "keygen", "--keystore", str(tmp_path / name), "--seed", "5",
                        "--provision", "--create", "aa:bb:cc:dd:ee:ff", "--output", "lines")
        outs.append(out)
    assert outs[0] == outs[1]
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_keygen_errors(tmp_path, capsys):
    ks = str(tmp_path / "ks")
    code, _, err = run(capsys, "keygen", "--keystore", ks, "--create", "01:02:03:04:05:06")
    assert code == 1 and "no master credentials" in err
    run(capsys, "keygen", "--keystore", ks, "--provision", "--create", "01:02:03:04:05:06")
    code, _, err = run(capsys, "keygen", "--keystore", ks, "--create", "01:02:03:04:05:06")
    assert code == 1 and "exists" in err
    code, _, err = run(capsys, "keygen", "--keystore", ks, "--provision")
    assert code == 1 and "already" in err


def test_parse(capsys):
    assert run(capsys, "parse", "010000")[:2] == (0, "Ping data=00\n")
    code, out, _ = run(capsys, "parse", "0400010436aa")
    assert code == 1 and "overflow at offset 4" in out
    code, out, _ = run(capsys, "parse", "09000102")
    assert code == 0 and "opaque=0102" in out
    code, out, _ = run(capsys, "parse", "--frame", "00003000")
    assert code == 0 and "empty frame" in out


def test_parse_file(tmp_path, capsys):
    p = tmp_path / "msg.bin"
    p.write_bytes(bytes.fromhex("020001"))
    code, out, _ = run(capsys, "parse", "--file", str(p))
    assert code == 0 and "unknown-device" in out


def test_pair_default(capsys):
    code, out, _ = run(capsys, "pair", "--seed", "1")
    assert code == 0 and out.rstrip().endswith("link keys MATCH")
    assert run(capsys, "pair", "--seed", "1")[1] == out


def test_pair_lines_output(capsys):
    code, out, _ = run(capsys, "pair", "--seed", "1", "--output", "lines")
    frames = [l for l in out.splitlines() if l.startswith("frame ")]
    assert len(frames) == 4
    assert all(l.split()[2] == l.split()[2].lower() for l in frames)


def test_pair_mismatched_keystores(tmp_path, capsys):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    run(capsys, "keygen", "--keystore", a, "--seed", "1", "--provision")
    run(capsys, "keygen", "--keystore", b, "--seed", "2", "--provision")
    code, out, _ = run(capsys, "pair", "--keystore", a, "--accessory-keystore", b, "--seed", "1")
    assert code == 1 and "unknown-device" in out


def test_pair_over_loopback(capsys):
    code, out, _ = run(capsys, "pair", "--seed", "4", "--port", "0")
    assert code == 0 and "link keys MATCH" in out
    assert out == run(capsys, "pair", "--seed", "4")[1]


def test_pair_custom_channel(capsys):
    code, out, _ = run(capsys, "pair", "--seed", "1", "--channel-id", "0041", "--output", "lines")
    assert code == 0
    assert out.splitlines()[0].split()[2][4:8] == "4100"


def test_attack_single_and_all(capsys):
    code, out, _ = run(capsys, "attack", "MP8", "--output", "lines")
    assert code == 0 and out == "MP8 flawed=FaultReproduced hardened=Mitigated\n"
    code, out, _ = run(capsys, "attack", "ALL", "--output", "lines")
    assert code == 0 and len(out.splitlines()) == 9


def test_attack_text_shows_mp7_rate(capsys):
    code, out, _ = run(capsys, "attack", "MP7")
    assert code == 0 and "reference figure ~7000/s" in out


def test_attack_unknown(capsys):
    code, _, err = run(capsys, "attack", "MP0")
    assert code == 1 and "unknown attack" in err


def test_fuzz(capsys, tmp_path):
    code, out, _ = run(capsys, "fuzz", "mutation", "-n", "200", "--seed", "7")
    assert code == 0 and "findings=0" in out
    assert run(capsys, "fuzz", "mutation", "-n", "200", "--seed", "7")[1] == out
    code, out, _ = run(capsys, "fuzz", "generation", "-n", "500", "--policy", "flawed",
                       "--findings-dir", str(tmp_path))
    assert code == 0 and "kind=InvalidAccess" in out and "hardened mode=generation" in out
    assert (tmp_path / "findings" / "0").exists()


def test_policy_flag_errors(capsys):
    code, _, err = run(capsys, "pair", "--policy-flag", "bogus=1")
    assert code == 1 and "unknown policy flag" in err


def test_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fuzz", "sideways"])
    assert exc.value.code == 2
