"""Compare the exact widget-cost density with a forward-sampling estimate."""

import argparse
from dataclasses import dataclass

import numpy as np

from gauss_plp import answer_query, library_source, parse_program
from gauss_plp.algebra import evaluate
from gauss_plp.oracle import mc_density


@dataclass(frozen=True)
class CompareConfig:
    samples: int = 100_000
    seed: int = 0
    lo: float = 0.5
    hi: float = 5.5
    points: int = 11
    bandwidth: float = 0.05


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=CompareConfig.samples)
    ap.add_argument("--seed", type=int, default=CompareConfig.seed)
    args = ap.parse_args()
    cfg = CompareConfig(samples=args.samples, seed=args.seed)
    program = parse_program(library_source("mixture"))
    psi = answer_query(program, "widget(X).").success_function
    print(psi.format())
    grid = np.linspace(cfg.lo, cfg.hi, cfg.points)
    est = mc_density(program, "widget(X).", "X", grid, cfg.samples, cfg.seed, cfg.bandwidth)
    print(f"{'x':>6} {'exact':>10} {'sampled':>10} {'std err':>9} {'z':>6}")
    for x, e in zip(grid, est):
        exact = evaluate(psi, {"X": float(x)})
        print(f"{x:>6.2f} {exact:>10.6f} {e.mean:>10.6f} {e.std_error:>9.2e} {(e.mean - exact) / e.std_error:>6.2f}")


if __name__ == "__main__":
    main()
