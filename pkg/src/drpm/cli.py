"""Command line interface.

Subcommands: sample, pmf, bounds-ablation, gradcheck, fit.  Data goes to
CSV or JSON with floats at 17 significant digits; the two report
commands also render a figure next to their CSV.  Reruns with identical
flags produce byte-identical outputs.

Exit codes: 0 success, 1 unreadable or unwritable files, 2 invalid
arguments or file content, 3 an enumeration guard tripped, 4 a gradient
check failed.  DRPM_THREADS caps Monte-Carlo workers without changing
results.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .errors import CapacityError, ValidationError
from .estimate import (
    ABLATION_CONFIGS,
    ablation_params,
    bounds_report,
    decile_medians,
    mc_pmf_estimate,
)
from .grad import (
    OBJECTIVES,
    FixedNoise,
    ObjectiveContext,
    ParamPoint,
    TIE_MARGIN,
    draw_point,
    gradcheck,
)
from .learn import FitConfig, SupervisedTarget, fit_supervised
from .mvhg import MvhgParams
from .partition import (
    AssignmentMatrix,
    DrpmParams,
    partition_log_pmf_exact,
    partition_pmf_bounds,
    sample_partition_hard,
    sample_partition_relaxed,
)
from .permutation import PlScores
from .plots import render_bounds_figure, render_fit_figure


def fmt(x: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return f"{float(x):.17g}"


def _load_json(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from None


def load_params(path: str) -> DrpmParams:
    """Read a parameter file: omega, scores, optional m and beta."""
    raw = _load_json(path)
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    try:
        omega = raw["omega"]
        scores = raw["scores"]
    except KeyError as e:
        raise ValidationError(f"{path}: missing key {e}") from None
    mvhg = MvhgParams(
        omega=tuple(float(w) for w in omega),
        n=len(scores),
        m=tuple(int(c) for c in raw["m"]) if "m" in raw else None,
    )
    return DrpmParams(
        mvhg=mvhg,
        scores=PlScores(
            tuple(float(s) for s in scores), beta=float(raw.get("beta", 1.0))
        ),
    )


def _parse_partition(params: DrpmParams, text: str) -> AssignmentMatrix:
    assignment = AssignmentMatrix.from_string(text)
    if assignment.n != params.n or assignment.K != params.K:
        raise ValidationError(
            f"partition is {assignment.K}x{assignment.n}, "
            f"parameters are K={params.K}, n={params.n}"
        )
    return assignment


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# subcommands ----------------------------------------------------------


def cmd_sample(args) -> int:
    params = load_params(args.params)
    if args.mode == "relaxed" and args.tau is None:
        raise ValidationError("relaxed mode needs --tau")
    if args.num < 1:
        raise ValidationError("--num must be positive")
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if args.mode == "hard":
            writer.writerow(["index", "partition"])
            for i in range(args.num):
                rng = np.random.default_rng(np.random.SeedSequence([args.seed, i]))
                writer.writerow([i, sample_partition_hard(params, rng).canonical()])
        else:
            header = ["index", "partition"]
            header += [
                f"y{k}_{j}" for k in range(params.K) for j in range(params.n)
            ]
            writer.writerow(header)
            for i in range(args.num):
                rng = np.random.default_rng(np.random.SeedSequence([args.seed, i]))
                relaxed = sample_partition_relaxed(params, args.tau, rng)
                flat = [fmt(x) for row in relaxed.matrix for x in row]
                writer.writerow([i, relaxed.hard.canonical()] + flat)
    return 0


def cmd_pmf(args) -> int:
    params = load_params(args.params)
    assignment = _parse_partition(params, args.partition)
    if args.method == "exact":
        lp = partition_log_pmf_exact(params, assignment)
        _print_json({"log_pmf": lp, "pmf": math.exp(lp) if lp > -math.inf else 0.0})
    elif args.method == "bounds":
        lo, up = partition_pmf_bounds(params, assignment)
        _print_json(
            {
                "log_lower": lo,
                "log_upper": up,
                "lower": math.exp(lo) if lo > -math.inf else 0.0,
                "upper": math.exp(up) if up > -math.inf else 0.0,
            }
        )
    else:
        if args.samples is None:
            raise ValidationError("mc method needs --samples")
        hist = mc_pmf_estimate(params, args.samples, args.seed)
        p_hat = hist.freq(assignment.canonical())
        stderr = math.sqrt(p_hat * (1.0 - p_hat) / hist.total)
        _print_json({"estimate": p_hat, "stderr": stderr, "samples": hist.total})
    return 0


def cmd_bounds_ablation(args) -> int:
    params = ablation_params(args.config, args.n, args.k, args.seed)
    rows = bounds_report(params, args.M, args.seed)
    os.makedirs(args.out, exist_ok=True)
    stem = f"bounds_{args.config}"
    csv_path = os.path.join(args.out, stem + ".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["partition", "count", "freq", "exact", "log_lower", "log_upper"]
        )
        for r in rows:
            writer.writerow(
                [r.partition, r.count, fmt(r.freq), fmt(r.exact),
                 fmt(r.log_lower), fmt(r.log_upper)]
            )
    render_bounds_figure(
        rows,
        os.path.join(args.out, stem + ".png"),
        f"bounds, config={args.config}, n={args.n}, K={args.k}, M={args.M}",
    )
    # a hair of slack absorbs float rounding when a bound is exactly tight
    ok = sum(
        1
        for r in rows
        if r.log_lower - 1e-9 <= _safe_log(r.exact) <= r.log_upper + 1e-9
    )
    print(f"config={args.config} n={args.n} K={args.k} M={args.M}")
    print(f"sandwich_fraction {ok / len(rows):.3f}")
    for d, ratio in decile_medians(rows, denominator="freq"):
        print(f"decile {d} median_upper_ratio {ratio:.6g}")
    return 0


def _safe_log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def cmd_gradcheck(args) -> int:
    params = load_params(args.params)
    if args.objective not in OBJECTIVES:
        names = ", ".join(sorted(OBJECTIVES))
        raise ValidationError(
            f"unknown objective {args.objective!r}; registered: {names}"
        )
    if args.trials < 1:
        raise ValidationError("--trials must be positive")
    base = ParamPoint.from_params(params)
    ctx = ObjectiveContext(
        m=params.mvhg.m, n=params.n, beta=params.scores.beta
    )
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(
        ["trial", "objective", "tau", "value", "max_abs_err", "max_rel_err",
         "tie_margin", "redraws", "passed"]
    )
    all_passed = True
    for t in range(args.trials):
        rng = np.random.default_rng(np.random.SeedSequence([args.seed, t]))
        redraws = 0
        while True:
            if t == 0 and redraws == 0:
                point = base.copy()
            else:
                jitter = draw_point(rng, base.K, base.n, spread=0.5)
                point = ParamPoint(
                    base.log_omega + jitter.log_omega,
                    base.log_scores + jitter.log_scores,
                )
            noise = FixedNoise.from_rng(rng, ctx.m, ctx.n)
            report = gradcheck(args.objective, point, noise, args.tau, ctx)
            if report.tie_margin >= TIE_MARGIN or redraws >= 100:
                break
            redraws += 1
        all_passed &= report.passed
        writer.writerow(
            [t, report.objective, fmt(report.tau), fmt(report.value),
             fmt(report.max_abs_err), fmt(report.max_rel_err),
             fmt(report.tie_margin), redraws, report.passed]
        )
    return 0 if all_passed else 4


def cmd_fit(args) -> int:
    raw = _load_json(args.target)
    if not isinstance(raw, dict) or "partition" not in raw:
        raise ValidationError(f"{args.target}: expected a JSON object with 'partition'")
    target = SupervisedTarget.from_string(str(raw["partition"]))
    if "n" in raw and int(raw["n"]) != target.n:
        raise ValidationError(f"n={raw['n']} does not match partition width {target.n}")
    if "K" in raw and int(raw["K"]) != target.K:
        raise ValidationError(f"K={raw['K']} does not match partition rows {target.K}")
    config = FitConfig(steps=args.steps, seed=args.seed)
    result = fit_supervised(target, config)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "trace.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "tau", "loss", "l1", "l2"])
        for row in result.trace:
            writer.writerow(
                [row.step, fmt(row.tau), fmt(row.loss), fmt(row.l1), fmt(row.l2)]
            )
    with open(os.path.join(args.out, "final_params.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "log_omega": [float(x) for x in result.point.log_omega],
                "log_scores": [float(x) for x in result.point.log_scores],
                "final_partition": result.final_partition.canonical(),
                "target": target.assignment.canonical(),
                "recovered": result.recovered,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    render_fit_figure(
        result.trace,
        os.path.join(args.out, "trace.png"),
        f"fit, target={target.assignment.canonical()}, seed={args.seed}",
    )
    print(f"recovered {str(result.recovered).lower()}")
    print(f"final_partition {result.final_partition.canonical()}")
    print(f"final_loss {fmt(result.trace[-1].loss)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drpm",
        description="Two-stage random partitions: sampling, PMFs, bounds, "
        "gradient checks, and fitting.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw partitions to a CSV")
    p.add_argument("--params", required=True, help="parameter JSON file")
    p.add_argument("--num", type=int, required=True, help="number of draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=("hard", "relaxed"), default="hard")
    p.add_argument("--tau", type=float, default=None, help="relaxation temperature")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("pmf", help="probability of one partition")
    p.add_argument("--params", required=True)
    p.add_argument("--partition", required=True, help="canonical string, e.g. 110,001")
    p.add_argument("--method", choices=("exact", "bounds", "mc"), default="exact")
    p.add_argument("--samples", type=int, default=None, help="draws for mc")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pmf)

    p = sub.add_parser("bounds-ablation", help="bound tightness report")
    p.add_argument("--n", type=int, default=5)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--M", type=int, default=1_000_000, help="Monte-Carlo draws")
    p.add_argument("--config", choices=ABLATION_CONFIGS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_bounds_ablation)

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--params", required=True)
    p.add_argument("--objective", required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fit", help="recover parameters for a target partition")
    p.add_argument("--target", required=True, help="JSON with n, K, partition")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fit)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CapacityError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
