"""Command-line interface: scenario ingestion, task orchestration, reports.

    gensolv run --scenario path [--out dir] [--seed N] [--strict]
    gensolv <task> --scenario path ...     (run a single task from the file)
    gensolv schema                         (print the report schema)

Each task writes <task>.report.json into the output directory (plus CSV
field dumps where the task produces fields).  Exit code 0 means every
verdict-bearing task passed; an error expected by the scenario's [expect]
table counts as a pass.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bpk, bptype, compare, fundsol, nets, parametrix, psdo, reports, scenario
from .errors import GensolvError, ParseError, TaskError
from .grids import write_field_csv
from .nets import GenNumber


def _classify_task(sc, cfg, out_dir, seed):
    details = {"nets": {}}
    for name, net in sorted(sc.nets.items()):
        rep = nets.classify(net)
        details["nets"][name] = {
            "classification": reports.moderateness_details(rep),
            "valuation": nets.valuation(net),
            "ultra_norm": nets.ultra_norm(net),
        }
    return details, True, []


def _compare_task(sc, cfg, out_dir, seed):
    q_name, p_name = cfg.get("q"), cfg.get("p")
    if q_name not in sc.symbols or p_name not in sc.symbols:
        raise ParseError(f"compare needs symbols 'q' and 'p'; got {q_name!r}, {p_name!r}")
    rep = compare.is_stronger(sc.symbols[q_name], sc.symbols[p_name])
    details = {
        "q": q_name,
        "p": p_name,
        "verdict": rep.verdict,
        "indeterminate": rep.indeterminate,
        "diverging": rep.diverging,
        "radius_slope": rep.radius_slope,
        "lambda": np.abs(rep.lambda_net.samples),
        "lambda_class": reports.moderateness_details(rep.lambda_class),
        "witnesses": rep.witnesses,
    }
    return details, rep.verdict, []


def _ellipticity_task(sc, cfg, out_dir, seed):
    name = cfg.get("symbol")
    if name not in sc.symbols:
        raise ParseError(f"ellipticity needs 'symbol'; got {name!r}")
    P = sc.symbols[name]
    ell = compare.is_g_elliptic(P)
    pt = compare.is_principal_type(P)
    details = {
        "symbol": name,
        "verdict": ell.verdict,
        "c": ell.c,
        "a": ell.a,
        "gradient": False,
        "inf_net": np.abs(ell.inf_net.samples),
        "principal_type_verdict": pt.verdict,
    }
    expect_elliptic = cfg.get("expect_elliptic", True)
    return details, ell.verdict == expect_elliptic, []


def _fundsol_task(sc, cfg, out_dir, seed):
    name = cfg.get("symbol")
    if name not in sc.symbols:
        raise ParseError(f"fundsol needs 'symbol'; got {name!r}")
    P = sc.symbols[name]
    fs = fundsol.fundamental_solution(P, sc.grid)
    delta0 = float(cfg.get("delta0", sc.grid.period / 16.0))
    _, trunc = fs.truncated(delta0)
    details = {
        "symbol": name,
        "theta": fs.theta,
        "residuals": fs.residuals,
        "min_symbol": np.abs(fs.min_symbol.samples),
        "e_norms": sc.grid.l2_norm(fs.E.values),
        "energy_class": reports.moderateness_details(fs.energy_class),
        "uniform_weight_constants": fs.uniform_weight_constant(),
        "truncated_weight_constants": trunc,
    }
    tol = float(cfg.get("tolerance", 1e-10))
    return details, bool(np.all(fs.residuals <= tol)), []


def _solve_bp_task(sc, cfg, out_dir, seed):
    if sc.operator is None or sc.rhs is None:
        raise ParseError("solve-bp needs [operator] and [rhs] blocks")
    bp = sc.operator
    solver = sc.solver
    mode = solver.get("mode", "h6")
    k = bpk.WeightFn.bracket_power(float(solver.get("weight", 0.0)))
    fs = fundsol.fundamental_solution(bp.p0, sc.grid)
    hyp = bptype.check_hypotheses(bp, sc.grid, mode=mode, p=float(solver.get("p", 2)))
    search = bptype.find_delta(
        bp,
        sc.grid,
        fs,
        k=k,
        nu=float(solver.get("nu", 1.0)),
        variant=solver.get("variant", "generalized" if mode != "h4" else "smooth"),
        delta0=solver.get("delta0"),
        truncate_f0=bool(solver.get("truncate_f0", False)),
    )
    rep = bptype.solve_local(bp, sc.grid, fs, sc.rhs, search, hyp)
    tol = float(solver.get("tolerance", 1e-6))
    acc = rep.accepted
    csv_name = "solve-bp.solution.csv"
    idx = [int(i) for i in np.linspace(rep.eps1_index, len(sc.eps) - 1, 3)]
    write_field_csv(
        Path(out_dir) / csv_name,
        sc.grid,
        rep.solution.values[idx],
        eps_values=sc.eps.values[idx],
    )
    details = {
        "delta": rep.delta,
        "eps1_index": rep.eps1_index,
        "eps1": sc.eps.values[rep.eps1_index],
        "contraction_factor": rep.contraction_factor,
        "iterations": int(rep.iterations),
        "residuals": rep.residual,
        "convergence_ratios": rep.convergence_ratios,
        "accepted": [bool(b) for b in acc],
        "hypotheses": {
            "h1": rep.hypotheses.vanishing_at_x0,
            "h2": rep.hypotheses.weight_invertible,
            "h3": [r.verdict for r in rep.hypotheses.stronger],
            "mode": rep.hypotheses.mode,
            "mode_ok": bool(rep.hypotheses.verdict),
            "verdict": bool(rep.hypotheses.verdict),
        },
        "solution_csv": csv_name,
    }
    passed = bool(rep.hypotheses.verdict and np.all(rep.residual[acc] <= tol))
    return details, passed, [csv_name]


def _parametrix_task(sc, cfg, out_dir, seed):
    name = cfg.get("symbol")
    if name not in sc.var_symbols:
        raise ParseError(f"parametrix needs 'symbol' naming a [varsymbols.*] block")
    P, prof_cfg = sc.var_symbols[name]
    if prof_cfg is None:
        prof = parametrix.profile_from_ellipticity(P, sc.grid, sc.eps)
    else:
        cand = parametrix.HypoProfile(
            a=float(prof_cfg["a"]),
            a_prime=float(prof_cfg.get("a_prime", prof_cfg["a"])),
            m_prime=float(prof_cfg.get("m_prime", P.order)),
            R=float(prof_cfg.get("R", 1.0)),
            c=0.0,
        )
        prof, _ = parametrix.check_profile(P, cand, sc.grid, sc.eps)
    par = parametrix.Parametrix(P, prof, sc.grid, sc.eps, J=int(cfg.get("terms", 4)))
    res = parametrix.compose_remainder(P, par, sc.grid, sc.eps)
    tele = par.telescoping_residual(par.bank)
    solve_block = None
    passed = res.remainder_bounded
    if sc.rhs is not None:
        srep = parametrix.solve_via_parametrix(
            P, par, res, sc.rhs, sc.grid, sc.eps
        )
        tol = float(sc.solver.get("tolerance", 1e-6))
        solve_block = {
            "delta": srep.delta,
            "eps1_index": srep.eps1_index,
            "residuals": srep.residual,
            "operator_norms": srep.operator_norms,
        }
        passed = passed and bool(np.all(srep.residual[srep.accepted] <= tol))
    details = {
        "profile": {
            "a": prof.a,
            "a_prime": prof.a_prime,
            "m_prime": prof.m_prime,
            "R": prof.R,
            "c": prof.c,
            "route": prof.route,
            "R_capped": prof.R_capped,
        },
        "term_radii": par.term_radii,
        "term_decay": par.term_order_fits(),
        "term_exponents": par.term_moderateness(),
        "telescoping": {str(k): v for k, v in tele.items()},
        "remainder_exponents": {str(k): v for k, v in res.remainder_exponents.items()},
        "remainder_bounded": res.remainder_bounded,
        "kernel_sup": res.kernel_sup,
        "solve": solve_block,
    }
    return details, passed, []


def _quantized_from_scenario(sc, cfg):
    name = cfg.get("symbol")
    if name not in sc.var_symbols:
        raise ParseError(f"task needs 'symbol' naming a [varsymbols.*] block")
    P, _ = sc.var_symbols[name]
    return psdo.quantize(P, sc.grid, sc.eps)


def _sobolev_check_task(sc, cfg, out_dir, seed):
    op = _quantized_from_scenario(sc, cfg)
    s = float(cfg.get("s", sc.solver.get("weight", 1.0)))
    delta = float(cfg.get("delta", sc.grid.period / 8.0))
    rep = psdo.check_inv_sob(op, delta=delta, s=s)
    details = {
        "s": s,
        "delta": delta,
        "verdict": rep.verdict,
        "certified_on_battery": rep.certified_on_battery,
        "small_support_ok": rep.small_support_ok,
        "battery_size": rep.battery_size,
        "lambda": np.abs(rep.lambda_net.samples),
        "lambda_class": reports.moderateness_details(rep.lambda_class),
    }
    return details, rep.verdict and rep.small_support_ok, []


def _solve_weak_task(sc, cfg, out_dir, seed):
    if sc.rhs is None:
        raise ParseError("solve-weak needs an [rhs] block")
    op = _quantized_from_scenario(sc, cfg)
    s = float(cfg.get("s", 1.0))
    delta = float(cfg.get("delta", sc.grid.period / 8.0))
    inv = psdo.check_inv_sob(op, delta=delta, s=s)
    rep = psdo.weak_solve(op, sc.rhs, delta=delta, s=s, inv_sob=inv)
    csv_name = "solve-weak.solution.csv"
    idx = [0, len(sc.eps) - 1]
    write_field_csv(
        Path(out_dir) / csv_name,
        sc.grid,
        rep.solution.values[idx],
        eps_values=sc.eps.values[idx],
    )
    tol = float(cfg.get("tolerance", 1e-8))
    details = {
        "s": s,
        "delta": delta,
        "dim_V": rep.dim_V,
        "weak_residual": rep.weak_residual,
        "strong_residual": rep.strong_residual,
        "condition_numbers": rep.condition_numbers,
        "solution_class": reports.moderateness_details(rep.solution_class),
        "bound_ok": rep.bound_ok,
        "solution_csv": csv_name,
    }
    passed = bool(np.all(rep.weak_residual <= tol))
    return details, passed, [csv_name]


_TASK_RUNNERS = {
    "classify": _classify_task,
    "compare": _compare_task,
    "ellipticity": _ellipticity_task,
    "fundsol": _fundsol_task,
    "solve-bp": _solve_bp_task,
    "parametrix": _parametrix_task,
    "sobolev-check": _sobolev_check_task,
    "solve-weak": _solve_weak_task,
}


def run_scenario(sc, out_dir, seed=None, strict=False, only_tasks=None):
    """Execute the scenario's tasks; returns (all_passed, report paths)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = sc.seed if seed is None else int(seed)
    np.random.seed(seed)  # batteries use default_rng(seed) internally anyway
    tasks = sc.tasks if only_tasks is None else [t for t in only_tasks]
    all_passed = True
    paths = []
    for task in tasks:
        cfg = sc.task_config.get(task, {})
        name = cfg.get("name", task)
        expected_error = sc.expect.get(task, {}).get("error")
        try:
            details, passed, _extras = _TASK_RUNNERS[task](sc, cfg, out, seed)
            if expected_error:
                # the scenario promised a failure that did not happen
                passed = False
                details = {
                    "error": "none",
                    "message": f"expected {expected_error} but the task succeeded",
                    "expected": False,
                }
                report = reports.envelope("error", name, passed, seed, details)
            else:
                report = reports.envelope(task, name, passed, seed, details)
        except GensolvError as exc:
            kind = type(exc).__name__
            matched = expected_error == kind
            report = reports.envelope(
                "error",
                name,
                matched,
                seed,
                {"error": kind, "message": str(exc), "expected": matched},
            )
            passed = matched
            if not matched:
                sys.stderr.write(f"task {task} failed: {kind}: {exc}\n")
        if strict:
            reports.validate_report(report)
        path = out / f"{task}.report.json"
        path.write_text(reports.dumps(report), encoding="utf-8")
        paths.append(path)
        all_passed = all_passed and passed
    return all_passed, paths


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="gensolv",
        description="solvability analysis for eps-parameterized operators",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run_like = ["run"] + list(_TASK_RUNNERS)
    for cmd in run_like:
        p = sub.add_parser(cmd)
        p.add_argument("--scenario", required=True, help="scenario file path")
        p.add_argument("--out", default="reports", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument(
            "--strict", action="store_true", help="validate reports against the schema"
        )
    sub.add_parser("schema")
    args = parser.parse_args(argv)
    if args.command == "schema":
        json.dump(reports.report_schema(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    try:
        sc = scenario.load_scenario(args.scenario)
    except ParseError as exc:
        sys.stderr.write(f"scenario error: {exc}\n")
        return 2
    only = None if args.command == "run" else [args.command]
    if only is not None:
        for t in only:
            if t not in sc.tasks and t not in sc.task_config:
                sc.task_config.setdefault(t, {})
    try:
        ok, _ = run_scenario(
            sc, args.out, seed=args.seed, strict=args.strict, only_tasks=only
        )
    except ParseError as exc:
        sys.stderr.write(f"scenario error: {exc}\n")
        return 2
    except TaskError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
