"""Observed event rates of the logistic and Cox generators, and the logistic
intercept that would give a target rate under the same covariate law."""

import argparse

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from rcsandwich.simulation import ScenarioConfig, generate


def rate(cfg, reps):
    out = []
    for r in range(reps):
        data, _ = generate(cfg, r)
        out.append(data.y.mean() if data.y is not None else data.survival.status.mean())
    return float(np.mean(out))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--target", type=float, default=0.38)
    args = p.parse_args()
    for outcome in ("logistic", "cox"):
        for sampling in ("srs", "survey"):
            cfg = ScenarioConfig(outcome=outcome, sampling=sampling, reps=args.reps)
            print(f"{outcome:<9}{sampling:<8}{rate(cfg, args.reps):.4f}")
    cfg = ScenarioConfig()
    rng = np.random.default_rng(0)
    xz = rng.multivariate_normal([0, 0], [[1, cfg.r], [cfg.r, 1]], size=400_000)
    lin = cfg.beta_x * xz[:, 0] + cfg.beta_z * xz[:, 1]
    b0 = brentq(lambda b: expit(b + lin).mean() - args.target, -5, 5)
    print(f"logistic intercept giving rate {args.target}: {b0:.3f}")


if __name__ == "__main__":
    main()
