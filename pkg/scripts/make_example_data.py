"""Write one simulated SRS replicate (logistic outcome) to data/example_srs.csv."""

import argparse
from pathlib import Path

from rcsandwich.dataio import write_dataset_csv
from rcsandwich.simulation import ScenarioConfig, gen_srs_dataset

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=ROOT / "data" / "example_srs.csv")
    p.add_argument("--rep", type=int, default=0)
    args = p.parse_args()
    cfg = ScenarioConfig(name="example", sigma2=0.25, r=0.3, reps=1)
    write_dataset_csv(gen_srs_dataset(cfg, args.rep), args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
