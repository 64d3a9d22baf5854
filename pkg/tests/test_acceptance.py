"""Acceptance criteria; each test prints one PASS/FAIL line.

Run standalone with ``python tests/test_acceptance.py`` for just the summary lines.
"""

import os
import random
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from gauss_plp import algebra as alg, library_source  # noqa: E402
from gauss_plp.algebra import integrate_out  # noqa: E402
from gauss_plp.engine import answer_query  # noqa: E402
from gauss_plp.oracle import (  # noqa: E402
    QuadratureSpec,
    enumerate_discrete,
    kalman_reference,
    mc_density,
    quad_integrate,
)
from gauss_plp.program import parse_program  # noqa: E402

from helpers import (  # noqa: E402
    as_function,
    assert_valid,
    kalman_source,
    random_discrete_program,
    random_ppdf,
)


def _gauss_params(t):
    (g,) = t.term.gaussians
    return t.term.coeff, g.mean, g.variance


def criterion_1():
    """Mixture golden answer, under one second."""
    start = time.perf_counter()
    psi = answer_query(parse_program(library_source("mixture")), "widget(X).").success_function
    elapsed = time.perf_counter() - start
    terms = sorted(_gauss_params(t) for t in psi.terms if len(t.term.gaussians) == 1)
    want = [(0.3, 2.5, 1.1), (0.7, 3.5, 1.1)]
    ok = len(psi) == 2 and len(terms) == 2 and all(
        abs(a - b) <= 1e-9 for got, w in zip(terms, want) for a, b in zip(got, w))
    ok = ok and all(t.term.gaussians[0].arg == alg.LinearForm.var("X") for t in psi.terms)
    ok = ok and elapsed < 1.0
    return ok, f"{psi.format()} in {elapsed:.3f}s"


def criterion_2():
    """Discrete q(Y) answer at 1, 2, 3."""
    psi = answer_query(parse_program(library_source("q")), "q(Y).").success_function
    got = [alg.evaluate(psi, {"Y": y}) for y in (1.0, 2.0, 3.0)]
    err = max(abs(g - w) for g, w in zip(got, (0.3, 1.0, 0.7)))
    return err <= 1e-12, f"values {got}, max error {err:.2e}"


def criterion_3():
    """Kalman one step, normalized posterior N(5/3, 2/3)."""
    psi = answer_query(parse_program(library_source("kalman")), "kf(1, T).", normalize=True).success_function
    if len(psi) != 1 or len(psi.D(0).gaussians) != 1:
        return False, f"unexpected shape {psi.format()}"
    c, m, v = _gauss_params(psi.terms[0])
    err = max(abs(c - 1.0), abs(m - 5 / 3), abs(v - 2 / 3))
    return err <= 1e-9, f"N(T; {m:.12g}, {v:.12g}), max error {err:.2e}"


def criterion_4(seed: int = 2024):
    """Kalman n = 2..10 against the textbook recursion, under five seconds in total."""
    rng = np.random.default_rng(seed)
    worst, elapsed = 0.0, 0.0
    for n in range(2, 11):
        obs = [float(x) for x in rng.normal(0.0, 2.0, n)]
        src = kalman_source(obs)
        start = time.perf_counter()
        psi = answer_query(parse_program(src), f"kf({n}, T).", normalize=True).success_function
        elapsed += time.perf_counter() - start
        _, m, v = _gauss_params(psi.terms[0])
        rm, rv = kalman_reference(0.0, 1.0, 1.0, 1.0, obs)
        worst = max(worst, abs(m - rm), abs(v - rv))
    return worst <= 1e-8 and elapsed < 5.0, f"max error {worst:.2e}, engine time {elapsed:.3f}s"


def criterion_5(count: int = 500, seed: int = 5):
    """Closed-form integration against quadrature on random terms."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(count):
        term = random_ppdf(rng, kmin=1, kmax=4)
        psi = integrate_out(as_function(term), "V")
        try:
            assert_valid(psi)
        except AssertionError as e:
            return False, f"invalid result structure: {e}"
        for _ in range(5):
            xs = {"X1": rng.uniform(-2, 2), "X2": rng.uniform(-2, 2)}
            want = quad_integrate(QuadratureSpec(term, "V", assignment=xs))
            got = alg.evaluate(psi, {k: v for k, v in xs.items() if k in psi.vars})
            worst = max(worst, abs(got - want) / abs(want) if want else abs(got))
    return worst <= 1e-8, f"{count} terms x 5 probes, max relative error {worst:.2e}"


def criterion_6(count: int = 50, seed: int = 6):
    """Discrete-only programs against exhaustive enumeration."""
    rng = random.Random(seed)
    worst, answers = 0.0, 0
    for _ in range(count):
        src, query = random_discrete_program(rng)
        program = parse_program(src)
        exact = enumerate_discrete(program, query)
        result = answer_query(program, query)
        psi = result.success_function
        qvars = result.query_vars
        keys = set(exact)
        for t in psi.terms:
            d = {x.var: x.value for x in t.term.deltas}
            keys.add(tuple(d.get(v) for v in qvars))
        for key in keys:
            if any(k is None for k in key):
                return False, f"non-ground engine answer for {query}"
            got = alg.evaluate(psi, dict(zip(qvars, key)))
            worst = max(worst, abs(got - exact.get(key, 0.0)))
            answers += 1
    return worst <= 1e-12, f"{count} programs, {answers} answers, max error {worst:.2e}"


def criterion_7():
    """Per-goal size bound on the mixture and Kalman derivations."""
    cases = [("mixture", library_source("mixture"), "widget(X)."),
             ("kf(1)", library_source("kalman"), "kf(1, T)."),
             ("kf(5)", kalman_source([0.4, 1.1, 2.0, 1.7, 2.6]), "kf(5, T).")]
    details = []
    ok = True
    for name, src, q in cases:
        tree = answer_query(parse_program(src), q).tree
        gmax = cmax = 0
        for n in tree.walk():
            k = len(n.vc)
            g, c = alg.max_gaussians(n.psi), alg.max_constraints(n.psi)
            gmax, cmax = max(gmax, g - k), max(cmax, c - k)
            ok = ok and g <= k and c <= k
        details.append(f"{name}: max excess over |Vc| gaussians {gmax}, constraints {cmax}")
    return ok, ", ".join(details)


def criterion_8():
    """Hybrid structure density with real-valued point masses."""
    psi = answer_query(parse_program(library_source("hybrid")), "structure(Z).").success_function
    dens, points = [], {}
    for t in psi.terms:
        if t.term.gaussians:
            dens.append(_gauss_params(t))
        else:
            (d,) = t.term.deltas
            points[d.value] = t.term.coeff
    ok = len(psi) == 3 and len(dens) == 1 and set(points) == {1.0, 2.0}
    if ok:
        c, m, v = dens[0]
        ok = (abs(c - 0.3) <= 1e-12 and abs(m - 2.0) <= 1e-12 and abs(v - 1.0) <= 1e-12
              and abs(points[1.0] - 0.35) <= 1e-12 and abs(points[2.0] - 0.35) <= 1e-12)
    return ok, psi.format()


def criterion_9(n: int = 100_000, seed: int = 9):
    """Mixture density against forward sampling at nine grid points."""
    program = parse_program(library_source("mixture"))
    psi = answer_query(program, "widget(X).").success_function
    grid = list(np.linspace(1.0, 5.0, 9))
    est = mc_density(program, "widget(X).", "X", grid, n=n, seed=seed)
    z = [abs(alg.evaluate(psi, {"X": float(x)}) - e.mean) / e.std_error for x, e in zip(grid, est)]
    return max(z) <= 3.0, f"n={n}, seed={seed}, max |z| {max(z):.2f}"


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


def _line(i: int, ok: bool, detail: str) -> str:
    return f"acceptance {i}: {'PASS' if ok else 'FAIL'} {CRITERIA[i - 1].__doc__.strip()} ({detail})"


@pytest.mark.parametrize("i", range(1, len(CRITERIA) + 1))
def test_acceptance(i, capsys):
    ok, detail = CRITERIA[i - 1]()
    with capsys.disabled():
        print("\n" + _line(i, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    failed = 0
    for i, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        failed += not ok
        print(_line(i, ok, detail))
    sys.exit(1 if failed else 0)
