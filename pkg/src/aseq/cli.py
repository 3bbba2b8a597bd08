"""Command-line interface.

Subcommands: validate, divergence, region, simulate, exponents. Data goes to
files or stdout; diagnostics go to stderr. Exit codes: 0 success, 1 validation
or data error, 2 usage error. All randomness flows from --seed, so repeated
invocations produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import modelio, sim
from .divergence import build_instance_table
from .errors import ModelFormatError
from .model import validate_model
from .region import (TuncelOptions, build_polytope, compute_region,
                     decision_risk_exponents, individual_hypothesis_region_slice,
                     nonadaptive_slice, tuncel_slice)

USAGE_EXIT = 2
DATA_EXIT = 1


class SystemExit2(Exception):
    """Usage-level failure; main() maps it to exit code 2."""


def _load(path: str):
    p = Path(path)
    if not p.exists():
        raise SystemExit2(f"model file not found: {path}")
    return modelio.load_instance(p)


def _fmt_subset(s: tuple[int, ...]) -> str:
    return "+".join(str(j) for j in s) if s else "-"


def cmd_validate(args) -> int:
    inst = _load(args.model)
    report = validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    if args.dump_normalized:
        modelio.dump_instance(inst, args.dump_normalized)
    print(f"llr_bound {report.llr_bound!r}")
    print(f"assumption2_ok {str(report.assumption2_ok).lower()}")
    print(f"assumption3_ok {str(report.assumption3_ok).lower()}")
    return 0


def cmd_divergence(args) -> int:
    inst = _load(args.model)
    validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    table = build_instance_table(inst)
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["action", "z", "m", "theta", "kl_nats"])
        for ai, a in enumerate(inst.actions.actions):
            for zi, z in enumerate(inst.avail.sets):
                for m in range(inst.model.M):
                    for t in range(inst.model.M):
                        if t == m:
                            continue
                        w.writerow([_fmt_subset(a), _fmt_subset(z), m, t,
                                    repr(float(table.table[ai, zi, m, t]))])
    finally:
        if args.out:
            out.close()
    return 0


def _parse_slice(expr: str) -> tuple[int, float]:
    try:
        name, value = expr.split("=")
        if not name.startswith("e"):
            raise ValueError
        return int(name[1:]), float(value)
    except ValueError:
        raise SystemExit2(f"bad slice argument {expr!r}; expected like e2=0.1")


def cmd_region(args) -> int:
    inst = _load(args.model)
    validate_model(inst.model, inst.avail, inst.actions, inst.budgets)
    table = build_instance_table(inst)
    poly = build_polytope(inst.avail, inst.actions, inst.budgets)
    region = compute_region(table, poly)
    gamma, _ = decision_risk_exponents(table, poly)

    if args.slice:
        k, v = _parse_slice(args.slice)
        rows: list[tuple[float, float, str]] = []
        adaptive = individual_hypothesis_region_slice(region, {k: v})
        rows += [(float(x), float(y), "adaptive") for x, y in adaptive.points]
        na = nonadaptive_slice(table, poly, {k: v}, step=args.grid_step)
        rows += [(float(x), float(y), "nonadaptive") for x, y in na.points]
        try:
            beta_sources = np.array([float(t) for t in args.beta_sources.split(",")])
            tc = tuncel_slice(inst.model, beta_sources, {k: v},
                              options=TuncelOptions(grid_step=0.1, descent_starts=3,
                                                    descent_iters=120))
            rows += [(float(x), float(y), "tuncel") for x, y in tc.points]
        except ValueError as exc:
            print(f"skipping tuncel family: {exc}", file=sys.stderr)
        out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
        try:
            w = csv.writer(out)
            w.writerow(["x", "y", "family"])
            for x, y, fam in rows:
                w.writerow([repr(x), repr(y), fam])
        finally:
            if args.out:
                out.close()
        return 0

    payload = {
        "gamma": [float(g) for g in gamma],
        "per_m": [
            {"declared": sub.declared,
             "thetas": list(sub.thetas),
             "corners": sub.corners.tolist(),
             "vertices": sub.vertices.tolist(),
             "facets": None if sub.facets is None else
             [{"normal": list(n), "offset": b} for n, b in sub.facets]}
            for sub in region.per_m
        ],
    }
    text = json.dumps(payload, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_simulate(args) -> int:
    inst = _load(args.model)
    T_grid = tuple(float(t) for t in args.T.split(","))
    if args.beta == "auto":
        betas = "auto"
    else:
        betas = tuple(modelio.load_betas(args.beta, inst))
    truths = None if args.truth == "all" else (int(args.truth),)
    config = sim.ExperimentConfig(
        instance=inst, T_grid=T_grid, trials=args.trials, seed=args.seed,
        betas=betas, ci_level=args.ci, truths=truths, max_steps=args.max_steps,
        epsilon=args.epsilon)
    report = sim.estimate_errors(config)
    sim.write_report_csv(report, args.out)
    summary_path = args.summary or (str(Path(args.out).with_suffix("")) + "_summary.json")
    Path(summary_path).write_text(
        json.dumps(sim.summary_dict(report), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {args.out} and {summary_path}", file=sys.stderr)
    return 0


def cmd_exponents(args) -> int:
    cells: dict[tuple[float, int], dict[int, int]] = {}
    with open(args.infile, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = (float(row["T"]), int(row["truth"]))
            cells.setdefault(key, {})[int(row["declared"])] = int(row["count"])
    if not cells:
        raise SystemExit2("results file has no rows")
    fits = _fit_from_counts(cells, args.ci)
    text = json.dumps(fits, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def _fit_from_counts(cells, ci_level: float):
    import math

    M = 1 + max(m for counts in cells.values() for m in counts)
    out = []
    truths = sorted({truth for _, truth in cells})
    for m in range(M):
        for truth in truths:
            if truth == m:
                continue
            xs, ys, bound = [], [], -np.inf
            for (T, tr), counts in sorted(cells.items()):
                if tr != truth:
                    continue
                n = sum(counts.values())
                k = counts.get(m, 0)
                if n == 0:
                    continue
                bound = max(bound, math.log(n / (k + 1)) / T)
                if k == 0:
                    continue
                lo, hi = sim.wilson_interval(k, n, ci_level)
                if hi - lo >= k / n:
                    continue
                xs.append(T)
                ys.append(-math.log(k / n))
            if len(xs) >= 3:
                x, y = np.array(xs), np.array(ys)
                xc = x - x.mean()
                slope = float(xc @ (y - y.mean()) / (xc @ xc))
                resid = y - y.mean() - slope * xc
                stderr = float(np.sqrt((resid @ resid) / (len(xs) - 2) / (xc @ xc)))
                out.append({"declared": m, "truth": truth, "kind": "fit",
                            "slope": slope, "stderr": stderr, "n_points": len(xs)})
            elif np.isfinite(bound):
                out.append({"declared": m, "truth": truth, "kind": "lower_bound",
                            "slope": float(bound), "stderr": None, "n_points": len(xs)})
            else:
                out.append({"declared": m, "truth": truth, "kind": "insufficient",
                            "slope": None, "stderr": None, "n_points": 0})
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aseq",
                                description="Active sequential multi-hypothesis "
                                            "testing: regions, policy, simulation.")
    subs = p.add_subparsers(dest="cmd", required=True)

    v = subs.add_parser("validate", help="check a model file, print diagnostics")
    v.add_argument("--model", required=True)
    v.add_argument("--dump-normalized", default=None, metavar="OUT")
    v.set_defaults(fn=cmd_validate)

    d = subs.add_parser("divergence", help="dump the pairwise divergence table as CSV")
    d.add_argument("--model", required=True)
    d.add_argument("--out", default=None)
    d.set_defaults(fn=cmd_divergence)

    r = subs.add_parser("region", help="exponent region as JSON, or 2-D slices as CSV")
    r.add_argument("--model", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--slice", default=None, metavar="eK=V")
    r.add_argument("--beta-sources", default=None,
                   help="per-source proportions for the fixed-length family "
                        "(comma list; default uniform)")
    r.add_argument("--grid-step", type=float, default=0.01)
    r.set_defaults(fn=cmd_region)

    s = subs.add_parser("simulate", help="Monte Carlo error estimation")
    s.add_argument("--model", required=True)
    s.add_argument("--T", required=True, help="comma-separated budgets")
    s.add_argument("--beta", default="auto", help="'auto' or a frequency file")
    s.add_argument("--truth", default="all")
    s.add_argument("--trials", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-steps", type=int, default=None)
    s.add_argument("--epsilon", type=float, default=None,
                   help="exploration probability override (0 disables exploration "
                        "and forfeits the finite-budget regime guarantee)")
    s.add_argument("--ci", type=float, default=0.95)
    s.add_argument("--out", required=True)
    s.add_argument("--summary", default=None)
    s.set_defaults(fn=cmd_simulate)

    e = subs.add_parser("exponents", help="fit decay rates from a results CSV")
    e.add_argument("--in", dest="infile", required=True)
    e.add_argument("--ci", type=float, default=0.95)
    e.add_argument("--out", default=None)
    e.set_defaults(fn=cmd_exponents)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_EXIT if exc.code not in (0, None) else 0
    try:
        if args.cmd == "region" and args.beta_sources is None:
            inst = _load(args.model)
            args.beta_sources = ",".join(["%g" % (1.0 / inst.model.n)] * inst.model.n)
        return args.fn(args)
    except SystemExit2 as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (ModelFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    raise SystemExit(main())
