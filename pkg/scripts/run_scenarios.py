"""Run every scenario in scenarios/ and write reports to an output directory.

    python3 scripts/run_scenarios.py --out out/ [--reps 10] [--workers 2]
"""
import argparse
import time
from pathlib import Path

from leaksafe import lab

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    ap.add_argument("--reps", type=int, help="override each scenario's repetition count")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted((ROOT / "scenarios").glob("*.dsl")):
        scenario = lab.load_scenario(path)
        start = time.perf_counter()
        if scenario.kind == "batch":
            report = lab.run_batch_probe(scenario)
        else:
            report = lab.run_pair(scenario, reps=args.reps, workers=args.workers)
        lab.emit_report(report, out / f"{path.stem}.txt")
        lab.emit_report(report, out / f"{path.stem}.csv", "delimited")
        print(f"== {scenario.name} ({time.perf_counter() - start:.1f}s)")
        print(lab.format_report(report))


if __name__ == "__main__":
    main()
