"""gauss-plp command line: run a query against a program file."""

from __future__ import annotations

import argparse
import io
import json
import sys
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import algebra as alg
from .engine import DEFAULT_DEPTH, QueryResult, answer_query
from .errors import GaussPLPError
from .oracle import enumerate_discrete, mc_density
from .program import Program, parse_program, parse_query
from .terms import format_value

EXIT_OK, EXIT_ZERO, EXIT_ERROR = 0, 1, 2
CHECK_SAMPLES = 20_000
CHECK_BANDWIDTH = 0.05
CHECK_MATCH_TOL = 0.05


@dataclass(frozen=True)
class RunConfig:
    program_path: str
    query: str
    normalize: bool = False
    grid: Optional[Tuple[str, float, float, int]] = None
    output_format: str = "text"
    depth_limit: int = DEFAULT_DEPTH
    seed: int = 0
    check: bool = False

    def __post_init__(self):
        if self.grid is not None and self.grid[3] < 2:
            raise ValueError("grid needs at least 2 steps")
        if self.depth_limit < 1:
            raise ValueError("depth limit must be at least 1")
        if self.output_format not in ("text", "json", "csv"):
            raise ValueError(f"unknown format {self.output_format}")


def parse_grid(text: str) -> Tuple[str, float, float, int]:
    parts = text.split(":")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("grid must look like VAR:LO:HI:STEPS")
    var, lo, hi, steps = parts
    try:
        lo_f, hi_f, n = float(lo), float(hi), int(steps)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {e}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("grid needs at least 2 steps")
    if not lo_f < hi_f:
        raise argparse.ArgumentTypeError("grid needs LO < HI")
    return var, lo_f, hi_f, n


def _real(x: float) -> float:
    return float(f"{x:.12g}")


def grid_rows(psi: alg.SuccessFunction, grid) -> List[Tuple[float, float]]:
    var, lo, hi, n = grid
    extra = [v for v in psi.vars if v != var]
    if extra:
        raise GaussPLPError(f"grid variable {var} does not cover free variables {', '.join(extra)}")
    return [(float(x), alg.evaluate(psi, {var: float(x)})) for x in np.linspace(lo, hi, n)]


def delta_table(result: QueryResult) -> Optional[List[Tuple[tuple, float]]]:
    """Rows (values, mass) when every term is a product of ground deltas on the query variables."""
    psi = result.success_function
    if psi.is_zero:
        return None
    qvars = [v for v in result.query_vars if v in set(psi.vars)]
    if not qvars:
        return None
    rows = []
    for t in psi.terms:
        d = {x.var: x.value for x in t.term.deltas}
        if t.term.gaussians or t.constraints.rows or set(d) != set(qvars):
            return None
        if any(isinstance(v, alg.VarRef) for v in d.values()):
            return None
        rows.append((tuple(d[v] for v in qvars), t.term.coeff))
    return rows


def run_check(program: Program, result: QueryResult, cfg: RunConfig) -> dict:
    """Cross-check the exact answer with an oracle; returns a report."""
    psi = result.success_function
    if not program.has_continuous:
        exact = enumerate_discrete(program, cfg.query)
        qvars = list(result.query_vars)
        dev = 0.0
        keys = set(exact)
        for row, mass in delta_table(result) or []:
            keys.add(row)
        for key in keys:
            assignment = dict(zip(qvars, key))
            got = alg.evaluate(psi, assignment) if set(psi.vars) <= set(assignment) else 0.0
            dev = max(dev, abs(got - exact.get(key, 0.0)))
        return {"oracle": "enumeration", "answers": len(exact), "max_deviation": dev,
                "passed": dev <= 1e-12}
    conts = [v for v in psi.vars if alg.is_continuous_in(psi, v)]
    if len(psi.vars) != 1 or len(conts) != 1:
        return {"oracle": "none", "reason": "sampling check needs one continuous query variable"}
    var = conts[0]
    if cfg.grid is not None:
        xs = list(np.linspace(cfg.grid[1], cfg.grid[2], cfg.grid[3]))
    else:
        xs = sorted({g.mean for t in psi.terms for g in t.term.gaussians if g.vars == (var,)})
    mass = alg.total_mass(psi)
    est = mc_density(program, cfg.query, var, xs, CHECK_SAMPLES, cfg.seed, CHECK_BANDWIDTH,
                     CHECK_MATCH_TOL, normalized=True)
    dev, zmax = 0.0, 0.0
    for x, e in zip(xs, est):
        want = alg.evaluate(psi, {var: float(x)}) / mass
        dev = max(dev, abs(want - e.mean))
        if e.std_error > 0:
            zmax = max(zmax, abs(want - e.mean) / e.std_error)
    return {"oracle": "sampling", "samples": CHECK_SAMPLES, "max_deviation": dev,
            "max_z": zmax, "passed": zmax <= 4.0}


def render_text(result: QueryResult, rows, check) -> str:
    out = io.StringIO()
    out.write(result.success_function.format() + "\n")
    table = delta_table(result)
    if table is not None:
        qvars = [v for v in result.query_vars if v in set(result.success_function.vars)]
        out.write("\n" + "\t".join(qvars + ["probability"]) + "\n")
        for key, mass in table:
            out.write("\t".join([format_value(v) for v in key] + [f"{mass:.12g}"]) + "\n")
    if rows is not None:
        out.write("\n" + render_csv(rows))
    if check is not None:
        out.write("\n" + _check_text(check) + "\n")
    return out.getvalue()


def _check_text(check: dict) -> str:
    if check["oracle"] == "none":
        return f"check: skipped ({check['reason']})"
    status = "PASS" if check["passed"] else "FAIL"
    text = f"check: {check['oracle']} max deviation {check['max_deviation']:.3g}"
    if "max_z" in check:
        text += f", max z {check['max_z']:.3g}"
    return f"{text} {status}"


def render_csv(rows) -> str:
    lines = ["value,density"] + [f"{x:.12g},{y:.12g}" for x, y in rows]
    return "\n".join(lines) + "\n"


def emit_json(result: QueryResult, rows=None, check=None) -> str:
    doc = {
        "terms": alg.to_json_terms(result.success_function),
        "meta": {"derivations": result.derivation_count, "depth": result.depth_reached},
    }
    if rows is not None:
        doc["grid"] = [{"value": _real(x), "density": _real(y)} for x, y in rows]
    if check is not None:
        doc["check"] = {k: (_real(v) if isinstance(v, float) else v) for k, v in check.items()}
    return json.dumps(doc) + "\n"


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        with open(cfg.program_path, encoding="utf-8") as fh:
            source = fh.read()
    except OSError as e:
        stderr.write(f"[io] cannot read {cfg.program_path}: {e.strerror or e}\n")
        return EXIT_ERROR
    try:
        program = parse_program(source)
        parse_query(cfg.query)
        result = answer_query(program, cfg.query, normalize=cfg.normalize, depth_limit=cfg.depth_limit)
        rows = grid_rows(result.success_function, cfg.grid) if cfg.grid is not None else None
        check = run_check(program, result, cfg) if cfg.check else None
    except GaussPLPError as e:
        stderr.write(f"{e}\n")
        return EXIT_ERROR
    if cfg.output_format == "json":
        stdout.write(emit_json(result, rows, check))
    elif cfg.output_format == "csv":
        if rows is None:
            table = delta_table(result)
            if table is None:
                stderr.write("[output] csv output needs --grid or a discrete answer\n")
                return EXIT_ERROR
            rows = [(key[0] if len(key) == 1 else key, mass) for key, mass in table]
            stdout.write("value,density\n" + "".join(
                f"{format_value(v) if not isinstance(v, tuple) else ' '.join(map(format_value, v))},{m:.12g}\n"
                for v, m in rows))
        else:
            stdout.write(render_csv(rows))
    else:
        stdout.write(render_text(result, rows, check))
    return EXIT_ZERO if result.success_function.is_zero else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gauss-plp", description="Exact inference for logic programs "
                                 "with discrete and Gaussian switches and linear equalities.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="answer a query against a program file")
    r.add_argument("program", help="program file")
    r.add_argument("-q", "--query", required=True, help='query such as "widget(X)."')
    r.add_argument("--normalize", action="store_true", help="rescale the answer to total mass 1")
    r.add_argument("--grid", type=parse_grid, help="evaluate on VAR:LO:HI:STEPS (inclusive)")
    r.add_argument("--format", choices=("text", "json", "csv"), default="text")
    r.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="derivation depth limit")
    r.add_argument("--seed", type=int, default=0, help="seed for sampling checks")
    r.add_argument("--check", action="store_true", help="cross-check with an oracle")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.depth < 1:
        sys.stderr.write("[usage] --depth must be at least 1\n")
        return EXIT_ERROR
    query = args.query.strip()
    if not query.endswith("."):
        query += "."
    cfg = RunConfig(args.program, query, args.normalize, args.grid, args.format,
                    args.depth, args.seed, args.check)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
