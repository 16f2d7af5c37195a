"""Compare the compiled AES kernel with the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--steps N]
"""

import argparse
import time

from magicpair import _fallback

try:
    from magicpair import _speedups
except ImportError:
    _speedups = None

KEY = bytes(range(16))


def bench(impl, steps: int, blocks: int) -> dict:
    t = time.perf_counter()
    out = impl.ratchet(KEY, steps)
    ratchet_s = time.perf_counter() - t

    t = time.perf_counter()
    for i in range(blocks):
        impl.encrypt_block(KEY, i.to_bytes(16, "little"))
    block_s = time.perf_counter() - t
    return {"ratchet_steps_per_s": steps / ratchet_s, "blocks_per_s": blocks / block_s,
            "result": out.hex()}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--steps", type=int, default=1 << 18)
    parser.add_argument("--blocks", type=int, default=20_000)
    args = parser.parse_args()

    results = {"python": bench(_fallback, args.steps, args.blocks)}
    if _speedups is not None:
        results["cython"] = bench(_speedups, args.steps, args.blocks)
    else:
        print("compiled kernel not built; showing the fallback only")

    for name, r in results.items():
        print(f"{name:>7}: {r['ratchet_steps_per_s']:>12,.0f} ratchet steps/s  "
              f"{r['blocks_per_s']:>10,.0f} single blocks/s")
    if len(results) == 2:
        assert results["python"]["result"] == results["cython"]["result"]
        speedup = results["cython"]["ratchet_steps_per_s"] / results["python"]["ratchet_steps_per_s"]
        print(f"ratchet speedup: {speedup:.1f}x (outputs identical)")


if __name__ == "__main__":
    main()
