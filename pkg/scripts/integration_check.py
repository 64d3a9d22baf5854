"""Closed-form integration of random Gaussian products against adaptive quadrature."""

import argparse
import random
from dataclasses import dataclass

from gauss_plp.algebra import (
    GaussianFactor,
    LinearForm,
    PPDFTerm,
    SuccessFunction,
    count_ops,
    evaluate,
    integrate_out,
    make_term,
)
from gauss_plp.oracle import QuadratureSpec, quad_integrate


@dataclass(frozen=True)
class CheckConfig:
    terms: int = 200
    probes: int = 5
    max_factors: int = 4
    seed: int = 0


def random_term(rng: random.Random, k: int) -> PPDFTerm:
    gs = []
    for _ in range(k):
        coeffs = {"V": rng.uniform(0.5, 2.0) * rng.choice((-1.0, 1.0))}
        for other in ("X1", "X2"):
            if rng.random() < 0.6:
                coeffs[other] = rng.uniform(-2.0, 2.0)
        arg = LinearForm.of(coeffs, rng.uniform(-2.0, 2.0))
        gs.append(GaussianFactor(arg, rng.uniform(-2.0, 2.0), rng.uniform(0.1, 4.0)))
    return PPDFTerm(rng.uniform(0.1, 2.0), (), tuple(gs))


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--terms", type=int, default=CheckConfig.terms)
    ap.add_argument("--seed", type=int, default=CheckConfig.seed)
    args = ap.parse_args()
    cfg = CheckConfig(terms=args.terms, seed=args.seed)
    rng = random.Random(cfg.seed)
    worst = {k: 0.0 for k in range(1, cfg.max_factors + 1)}
    with count_ops() as ops:
        for _ in range(cfg.terms):
            k = rng.randint(1, cfg.max_factors)
            term = random_term(rng, k)
            psi = integrate_out(SuccessFunction.of([make_term(term.coeff, (), term.gaussians)]), "V")
            for _ in range(cfg.probes):
                xs = {"X1": rng.uniform(-2, 2), "X2": rng.uniform(-2, 2)}
                want = quad_integrate(QuadratureSpec(term, "V", assignment=xs))
                got = evaluate(psi, {v: xs[v] for v in psi.vars})
                worst[k] = max(worst[k], abs(got - want) / want if want else abs(got))
    print("factors  max relative error")
    for k, err in worst.items():
        print(f"{k:>7}  {err:.2e}")
    print("operation counts:", dict(sorted(ops.items())))


if __name__ == "__main__":
    main()
