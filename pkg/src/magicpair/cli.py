"""Command-line driver: keygen, parse, pair, attack, fuzz.

Exit status is 0 when the command's expectation holds (matching link keys,
every attack FaultReproduced+Mitigated, zero hardened fuzz findings).
Failures exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from magicpair import attacks, crypto, fuzz
from magicpair.codec import (
    FIXED_CID, DecodeError, StatusCode, decode_frame, decode_message)
from magicpair.keystore import Keystore, KeystoreError, seeded_entropy, system_entropy
from magicpair.pairing import (
    DEFAULT_ACCESSORY_ADDR, DEFAULT_HOST_ADDR, make_account, run_pairing, run_pairing_loopback)
from magicpair.session import PairingSession, PolicyConfig, Role
from magicpair.transport import Link, LinkConfig


def _hex_int(text: str) -> int:
    return int(text, 16)


def _bdaddr(text: str) -> bytes:
    try:
        return crypto.parse_bdaddr(text)
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--keystore", type=Path, help="keystore file")
    p.add_argument("--seed", type=int, default=None, help="seed for all randomness")
    p.add_argument("--policy", choices=("hardened", "flawed"), default="hardened")
    p.add_argument("--policy-flag", action="append", default=[], metavar="NAME=VALUE",
                   help="override one policy field (repeatable)")
    p.add_argument("--channel-id", type=_hex_int, default=FIXED_CID, metavar="HEX")
    p.add_argument("--output", choices=("text", "lines"), default="text")
    p.add_argument("--port", type=int, default=None, help="run over a loopback TCP carrier")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="magicpair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", parents=[common], help="provision credentials / create records")
    p.add_argument("--provision", action="store_true", help="create master key and hint")
    p.add_argument("--overwrite", action="store_true", help="replace existing credentials")
    p.add_argument("--create", type=_bdaddr, action="append", default=[], metavar="ADDR",
                   help="derive a record for this address")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("parse", parents=[common], help="decode a message or frame")
    p.add_argument("hex", nargs="?", help="hex-encoded bytes")
    p.add_argument("--file", type=Path, help="read raw bytes from a file")
    p.add_argument("--frame", action="store_true", help="input is an L2CAP frame")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("pair", parents=[common], help="simulate one host/accessory pairing")
    p.add_argument("--accessory-keystore", type=Path,
                   help="separate accessory keystore (default: same credentials as --keystore)")
    p.add_argument("--host-addr", type=_bdaddr, default=DEFAULT_HOST_ADDR)
    p.add_argument("--accessory-addr", type=_bdaddr, default=DEFAULT_ACCESSORY_ADDR)
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("attack", parents=[common], help="run attack scripts")
    p.add_argument("attack_id", help=f"one of {', '.join(attacks.ATTACK_IDS)} or ALL")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("fuzz", parents=[common], help="run a fuzz campaign")
    p.add_argument("mode", choices=("generation", "mutation"))
    p.add_argument("-n", "--iterations", type=int, default=10_000)
    p.add_argument("--findings-dir", type=Path, help="write campaign.log and findings/ here")
    p.set_defaults(func=cmd_fuzz)
    return parser


def _entropy(args):
    return seeded_entropy(args.seed) if args.seed is not None else system_entropy


def _policy(args) -> PolicyConfig:
    return PolicyConfig.preset(args.policy).with_flag_strings(args.policy_flag)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


# --- commands ----------------------------------------------------------------

def cmd_keygen(args) -> int:
    if args.keystore is None:
        return _fail("--keystore is required")
    if not (args.provision or args.create):
        return _fail("nothing to do; pass --provision and/or --create ADDR")
    try:
        ks = Keystore.load(args.keystore) if args.keystore.exists() else Keystore()
        entropy = _entropy(args)
        if args.provision:
            creds = ks.provision_master(entropy, overwrite=args.overwrite)
            if args.output == "lines":
                print(f"master {creds.master_key.hex()} {creds.master_hint.hex()}")
            else:
                print(f"provisioned master credentials in {args.keystore}")
        for addr in args.create:
            record = ks.create_record(addr)
            print(record.to_line())
        ks.save(args.keystore)
    except KeystoreError as err:
        return _fail(str(err))
    return 0


def _read_input(args) -> bytes:
    if args.file is not None:
        return args.file.read_bytes()
    if args.hex is None:
        raise ValueError("give hex bytes or --file")
    return bytes.fromhex(args.hex.replace(" ", "").replace(":", ""))


def cmd_parse(args) -> int:
    try:
        data = _read_input(args)
    except (ValueError, OSError) as err:
        return _fail(str(err))
    try:
        if args.frame:
            frame = decode_frame(data)
            print(f"frame length={frame.length} cid=0x{frame.channel_id:04x}")
            if frame.length == 0:
                print("empty frame")
                return 0
            data = frame.payload
        msg = decode_message(data)
    except DecodeError as err:
        print(f"decode error: {err.reason} at offset {err.offset}: {err.detail}")
        return 1
    print(msg.describe())
    return 0


def _pair_keystores(args):
    """Host and accessory keystores for ``pair``."""
    if args.keystore is None:
        account = make_account(args.seed or 0, args.host_addr, args.accessory_addr)
        return account.host_keystore, account.accessory_keystore
    host_ks = Keystore.load(args.keystore)
    if host_ks.credentials is None:
        raise KeystoreError(f"{args.keystore} has no master credentials")
    if args.accessory_keystore is not None:
        acc_ks = Keystore.load(args.accessory_keystore)
    else:
        acc_ks = Keystore(host_ks.credentials)
    if acc_ks.lookup_by_address(args.accessory_addr) is None and acc_ks.credentials is not None:
        acc_ks.create_record(args.accessory_addr)
    return host_ks, acc_ks


def cmd_pair(args) -> int:
    try:
        host_ks, acc_ks = _pair_keystores(args)
        policy = _policy(args)
    except (KeystoreError, ValueError, OSError) as err:
        return _fail(str(err))
    seed = args.seed or 0
    entropy_h = seeded_entropy(seed * 2 + 1) if args.seed is not None else system_entropy
    entropy_a = seeded_entropy(seed * 2 + 2) if args.seed is not None else system_entropy
    host = PairingSession(Role.HOST, args.accessory_addr, host_ks, policy, entropy_h)
    acc = PairingSession(Role.ACCESSORY, args.host_addr, acc_ks, policy, entropy_a,
                         own_addr=args.accessory_addr)
    if args.port is not None:
        result = run_pairing_loopback(host, acc, port=args.port, channel_id=args.channel_id)
    else:
        link = Link(LinkConfig(channel_id=args.channel_id))
        result = run_pairing(host, acc, link=link, channel_id=args.channel_id)

    for line in result.transcript:
        if args.output == "lines":
            print(f"frame {line.sender} {line.frame.hex()}")
        else:
            print(line.render())
    for name, s in (("host", host), ("accessory", acc)):
        key = s.link_key.hex() if s.link_key else "-"
        print(f"{name} state={s.state.value} link_key={key}")
    if result.keys_match:
        print("link keys MATCH")
        return 0
    print(f"pairing failed: {_failure_reason(host, acc)}")
    return 1


def _failure_reason(host: PairingSession, acc: PairingSession) -> str:
    for name, s in (("accessory", acc), ("host", host)):
        if s.last_status not in (None, StatusCode.SUCCESS):
            try:
                label = StatusCode(s.last_status).name.lower().replace("_", "-")
            except ValueError:
                label = f"0x{s.last_status:02x}"
            # last_status is what this side received from its peer
            peer = "host" if name == "accessory" else "accessory"
            return f"{peer} status {label}"
    return f"host {host.state.value}, accessory {acc.state.value}"


def cmd_attack(args) -> int:
    seed = args.seed or 0
    try:
        if args.attack_id.upper() == "ALL":
            verdicts = attacks.run_all(seed=seed)
        else:
            verdicts = [attacks.run_attack(args.attack_id, seed=seed)]
    except ValueError as err:
        return _fail(str(err))
    for v in verdicts:
        print(v.to_line())
        if args.output == "text":
            for line in v.evidence:
                print(f"    {line}")
            m = v.measurements
            if m:
                print(f"    measured {m['steps_per_second']:.0f} KDF steps/s "
                      f"(reference figure ~{m['reference_steps_per_second']}/s); "
                      f"full loop would take ~{m['extrapolated_s']:.0f} s here")
    return 0 if all(v.expected for v in verdicts) else 1


def cmd_fuzz(args) -> int:
    seed = args.seed or 0
    if args.iterations < 0:
        return _fail("iterations must be non-negative")
    report = fuzz.campaign(args.mode, args.policy, args.iterations, seed)
    lines = report.to_lines() if args.output == "lines" else [report.summary_line()] + [
        f.to_line() for f in report.findings]
    print("\n".join(lines))
    if args.findings_dir is not None:
        report.write(args.findings_dir)
    if args.policy == "hardened":
        return 0 if not report.findings else 1
    hardened = fuzz.campaign(args.mode, "hardened", args.iterations, seed)
    print(f"hardened {hardened.summary_line()}")
    return 0 if not hardened.findings else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1


if __name__ == "__main__":
    sys.exit(main())
