"""Run every shipped config and print one line per run.

    python scripts/run_acceptance.py [--out runs] [--workers N] [--only c01 c08]
"""
import argparse
import time
from pathlib import Path

from fklab import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=ROOT / "runs")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=None, help="config name prefixes")
    args = ap.parse_args()
    failed = 0
    for cfg in sorted((ROOT / "configs").glob("*.toml")):
        if args.only and not any(cfg.stem.startswith(p) for p in args.only):
            continue
        t0 = time.time()
        code, _ = cli.run_config(cli.load_config(cfg), args.out / cfg.stem, workers=args.workers)
        status = {0: "pass", 1: "FAIL", 2: "CONFIG ERROR"}[code]
        print(f"{cfg.stem:24s} {status:12s} {time.time() - t0:7.1f} s")
        failed += code != 0
    return 1 if failed else 0


if __name__ == "__main__":
    raise SystemExit(main())
