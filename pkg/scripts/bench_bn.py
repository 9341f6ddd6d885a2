"""Time BN, SBN and BinaryBN over batch sizes and feature-map sizes.

Writes bench.csv (one row per variant, batch and map size) and bench_plot.json
with per-variant series and the reference-architecture storage lines.
"""

import argparse
import json
from pathlib import Path

from sbnn.bench import BenchResult, plot_data, run_bench, sign_agreement_gate
from sbnn.io import atomic_write_bytes, write_csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--sizes", default="32,64,128,256", help="square map sides")
    p.add_argument("--batches", default="1,2,4,8")
    p.add_argument("--trials", type=int, default=30)
    p.add_argument("--out-dir", default="runs/bench")
    args = p.parse_args()
    if not sign_agreement_gate():
        raise SystemExit("variants disagree on sign bits with power-of-two parameters")
    batches = [int(b) for b in args.batches.split(",")]
    results = []
    for side in (int(s) for s in args.sizes.split(",")):
        rs = run_bench(dims=(args.channels, side, side), batch_sizes=batches, trials=args.trials)
        by = {(r.variant, r.batch_size): r for r in rs}
        for n in batches:
            bn, bb = by["BN", n], by["BinaryBN", n]
            print(f"{side}x{side} batch={n}: BN {bn.median_ns / 1e6:.3f} ms, SBN {by['SBN', n].median_ns / 1e6:.3f} ms, "
                  f"BinaryBN {bb.median_ns / 1e6:.3f} ms ({bn.median_ns / bb.median_ns:.1f}x), "
                  f"output {bn.output_bytes / bb.output_bytes:.0f}x smaller")
        results += rs
    out = Path(args.out_dir)
    write_csv(out / "bench.csv", BenchResult.CSV_FIELDS, [r.row() for r in results])
    atomic_write_bytes(out / "bench_plot.json", json.dumps(plot_data(results), indent=1).encode())


if __name__ == "__main__":
    main()
