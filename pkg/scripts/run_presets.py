"""Run one or more preset INI files and collect the aligned tables.

    python scripts/run_presets.py configs/logistic_srs_grid.ini --threads 4
"""

import argparse
import time
from pathlib import Path

from rcsandwich.cli import load_scenarios
from rcsandwich.simulation import run_study

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("configs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=ROOT / "results")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--reps", type=int, default=None, help="override reps for a quick pass")
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.configs:
        for cfg in load_scenarios(path):
            if args.reps:
                from dataclasses import replace
                cfg = replace(cfg, reps=args.reps)
            t0 = time.perf_counter()
            rep = run_study(cfg, threads=args.threads)
            rep.to_csv(args.out / f"{cfg.name}.csv")
            text = rep.to_text()
            (args.out / f"{cfg.name}.txt").write_text(text)
            print(text + f"({time.perf_counter() - t0:.1f} s)\n", flush=True)


if __name__ == "__main__":
    main()
