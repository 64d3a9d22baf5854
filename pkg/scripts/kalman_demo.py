"""Filter a simulated random walk with the symbolic engine and the textbook recursion."""

import argparse
from dataclasses import dataclass

import numpy as np

from gauss_plp import answer_query, library_source, parse_program
from gauss_plp.oracle import kalman_reference


@dataclass(frozen=True)
class DemoConfig:
    steps: int = 10
    mu0: float = 0.0
    s0: float = 1.0
    ss: float = 1.0
    sv: float = 1.0
    seed: int = 0


def program_text(cfg: DemoConfig, obs) -> str:
    lines = [ln for ln in library_source("kalman").splitlines() if not ln.startswith((":- set_sw", "obs("))]
    lines += [f":- set_sw(init, norm({cfg.mu0!r}, {cfg.s0!r})).",
              f":- set_sw(trans_err, norm(0.0, {cfg.ss!r})).",
              f":- set_sw(obs_err, norm(0.0, {cfg.sv!r})).",
              *(f"obs({i}, {v!r})." for i, v in enumerate(obs, start=1))]
    return "\n".join(lines) + "\n"


def simulate(cfg: DemoConfig):
    rng = np.random.default_rng(cfg.seed)
    s = rng.normal(cfg.mu0, np.sqrt(cfg.s0))
    states, obs = [], []
    for _ in range(cfg.steps):
        s = s + rng.normal(0.0, np.sqrt(cfg.ss))
        states.append(float(s))
        obs.append(float(round(s + rng.normal(0.0, np.sqrt(cfg.sv)), 6)))
    return states, obs


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=DemoConfig.steps)
    ap.add_argument("--seed", type=int, default=DemoConfig.seed)
    args = ap.parse_args()
    cfg = DemoConfig(steps=args.steps, seed=args.seed)
    states, obs = simulate(cfg)
    program = parse_program(program_text(cfg, obs))
    print(f"{'n':>3} {'state':>9} {'obs':>9} {'engine mean':>12} {'engine var':>11} {'recursion':>10} {'|diff|':>9}")
    for n in range(1, cfg.steps + 1):
        psi = answer_query(program, f"kf({n}, T).", normalize=True).success_function
        g = psi.terms[0].term.gaussians[0]
        m, v = kalman_reference(cfg.mu0, cfg.s0, cfg.ss, cfg.sv, obs[:n])
        diff = max(abs(g.mean - m), abs(g.variance - v))
        print(f"{n:>3} {states[n - 1]:>9.4f} {obs[n - 1]:>9.4f} {g.mean:>12.6f} {g.variance:>11.6f} {m:>10.6f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
