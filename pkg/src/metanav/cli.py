"""Command-line front end: run, compare, suite, sweep-alpha, generate."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .coordinator import Mode, NumericalFault, SimConfig, prepare_alpha, run
from .core import ScenarioFormatError, Scenario, load_scenario, save_scenario, validate_scenario
from .criticality import SearchOptions, UnconfinableError
from .export import dumps_report, write_run, write_text
from .metrics import kappa, run_metrics
from .potentials import SingularityError
from .scenario import GeneratorSpec, InfeasibleSpecError, generate, table1_suite, table2_suite

log = logging.getLogger("metanav")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


def _add_sim_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulation")
    g.add_argument("--gamma", type=float, help="step size factor (overrides the scenario's)")
    g.add_argument("--epsilon", type=float, help="convergence distance (default 1e-3 x diagonal)")
    g.add_argument("--alpha-cap", type=float, default=1e6)
    g.add_argument("--grid-density", type=int, default=80, help="critical-point seed grid per side")
    g.add_argument("--max-steps", type=int, default=4000)
    g.add_argument("--resolve-alpha-each-step", action="store_true")
    g.add_argument("--dnf-k", type=float, default=3.0, help="baseline tuning exponent")
    g.add_argument("--dnf-step", choices=("direction", "gradient"), default="direction")
    g.add_argument("--stall-window", type=int, default=50, help="0 disables alpha escalation")
    g.add_argument("--sequential", action="store_true", help="plan agents one at a time")
    g.add_argument("--plots", action="store_true", help="also write SVG plots")
    g.add_argument("--seed", type=int, default=0)


def _config(args, mode: str | Mode) -> SimConfig:
    if args.grid_density < 4:
        raise UsageError("--grid-density must be >= 4")
    return SimConfig(
        mode=Mode(mode),
        max_steps=args.max_steps,
        convergence_epsilon=args.epsilon,
        gamma=args.gamma,
        resolve_alpha_each_step=args.resolve_alpha_each_step,
        sequential=args.sequential,
        dnf_k=args.dnf_k,
        dnf_step=args.dnf_step,
        alpha_cap=args.alpha_cap,
        stall_window=args.stall_window or None,
        search=SearchOptions(grid=args.grid_density, seed=args.seed),
    )


def _load(path: str) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"scenario not found: {path}")
    sc = load_scenario(p)
    check = validate_scenario(sc)
    if not check.ok:
        raise UsageError("invalid scenario:\n  " + "\n  ".join(check.violations))
    return sc


def _scenario_from_args(args) -> Scenario:
    if args.scenario:
        return _load(args.scenario)
    if args.agents is None:
        raise UsageError("give --scenario or a generator spec (--agents/--obstacles/--area)")
    spec = GeneratorSpec(
        args.agents, args.obstacles, tuple(args.area), seed=args.seed, coalitions=args.coalitions
    )
    return generate(spec)


def _report(result, baseline=None, extra=None) -> dict:
    d = run_metrics(result, baseline).to_dict()
    d["epsilon"] = result.epsilon
    d["escalations"] = {str(k): v for k, v in result.escalations.items()}
    if extra:
        d.update(extra)
    return d


def cmd_run(args) -> int:
    sc = _scenario_from_args(args)
    cfg = _config(args, args.mode)
    res = run(sc, cfg)
    write_run(res, Path(args.out), _report(res), plots=args.plots)
    print(f"{cfg.mode.value}: {res.completed:.0%} converged; results in {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    sc = _scenario_from_args(args)
    out = Path(args.out)
    m = run(sc, _config(args, Mode.MNF))
    d = run(sc, _config(args, Mode.DNF))
    k, reason = kappa(m.convergence_steps, d.convergence_steps)
    write_run(m, out, _report(m, d), plots=args.plots, prefix="mnf_")
    write_run(d, out, _report(d), plots=args.plots, prefix="dnf_")
    summary = {"kappa": k, "kappa_reason": reason, "mnf_completed": m.completed, "dnf_completed": d.completed}
    write_text(out / "compare.json", dumps_report(summary))
    print(f"kappa = {k:.4f}" if k is not None else f"kappa = none ({reason})")
    return EXIT_OK


def _fmt(v, spec=".3f"):
    return "-" if v is None else format(v, spec)


def cmd_suite(args) -> int:
    make = table1_suite if args.suite == "table1" else table2_suite
    gamma = args.gamma if args.gamma is not None else 0.02
    entries = make(seed=args.seed, scale=args.scale, gamma=gamma)
    out = Path(args.out)
    rows = []
    for n, e in enumerate(entries):
        row = {"label": e.label, "density": e.spec.density, "n_agents": e.spec.n_agents,
               "n_obstacles": e.spec.n_obstacles, "coalitions": e.spec.coalitions}
        try:
            sc = generate(e.spec, e.params)
            m = run(sc, _config(args, Mode.MNF))
            d = run(sc, _config(args, Mode.DNF))
        except (SingularityError, NumericalFault, UnconfinableError, InfeasibleSpecError) as exc:
            log.error("suite entry %s failed: %s", e.label, exc)
            row["error"] = str(exc)
            rows.append(row)
            continue
        k, reason = kappa(m.convergence_steps, d.convergence_steps)
        rep = run_metrics(m, d)
        row.update(
            kappa=k, kappa_reason=reason, alpha_dagger=rep.scenario_alpha,
            alpha_dagger_mean=rep.to_dict()["alpha_dagger_mean"],
            mnf_max_steps=rep.max_time, dnf_max_steps=run_metrics(d).max_time,
            mnf_completed=m.completed, dnf_completed=d.completed,
            min_clearance=min(m.min_obstacle_clearance, d.min_obstacle_clearance),
        )
        rows.append(row)
        sub = out / f"entry{n}"
        write_run(m, sub, _report(m, d), plots=args.plots, prefix="mnf_")
        write_run(d, sub, _report(d), plots=args.plots, prefix="dnf_")
        save_scenario(sc, sub / "scenario.json")
    write_text(out / "suite.json", dumps_report({"suite": args.suite, "seed": args.seed, "scale": args.scale, "entries": rows}))
    table = _table(rows)
    write_text(out / "suite.txt", table)
    print(table, end="")
    return EXIT_OK


def _table(rows) -> str:
    head = ["", *(r["label"] for r in rows)]
    lines = [
        ["density", *(_fmt(r["density"], ".4f") for r in rows)],
        ["kappa", *(_fmt(r.get("kappa")) for r in rows)],
        ["alpha_dagger", *(_fmt(r.get("alpha_dagger")) for r in rows)],
        ["mnf steps", *(_fmt(r.get("mnf_max_steps"), "d") for r in rows)],
        ["dnf steps", *(_fmt(r.get("dnf_max_steps"), "d") for r in rows)],
    ]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *lines)]
    fmt = lambda cells: "  ".join(str(c).rjust(w) for c, w in zip(cells, widths)).rstrip() + "\n"
    return fmt(head) + "".join(fmt(l) for l in lines)


def cmd_sweep_alpha(args) -> int:
    try:
        mults = [float(x) for x in args.multipliers.split(",") if x.strip()]
    except ValueError:
        raise UsageError("--multipliers must be a comma-separated list of numbers") from None
    if not mults:
        raise UsageError("--multipliers must not be empty")
    if any(m < 1 for m in mults):
        raise UsageError("multipliers must be >= 1")
    sc = _scenario_from_args(args)
    cfg = _config(args, Mode.MNF)
    alphas, _, _ = prepare_alpha(sc, cfg)
    rows = []
    for m in mults:
        res = run(sc, replace(cfg, alpha_scale=m), alpha_dagger=alphas)
        steps = [v for v in res.convergence_steps.values() if v is not None]
        rows.append({
            "multiplier": m,
            "completed": res.completed,
            "max_steps": max(steps) if steps else None,
            "total_steps": sum(steps) if res.all_converged else None,
        })
    out = Path(args.out)
    write_text(out / "sweep.json", dumps_report({"alpha_dagger": {str(k): v for k, v in alphas.items()}, "sweep": rows}))
    lines = ["multiplier,completed,max_steps,total_steps"]
    lines += [f"{r['multiplier']!r},{r['completed']!r},{r['max_steps']},{r['total_steps']}" for r in rows]
    write_text(out / "sweep.csv", "\n".join(lines) + "\n")
    for r in rows:
        print(f"x{r['multiplier']:g}: total={r['total_steps']} max={r['max_steps']} completed={r['completed']:.0%}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = GeneratorSpec(args.agents, args.obstacles, tuple(args.area), seed=args.seed, coalitions=args.coalitions)
    save_scenario(generate(spec), Path(args.out))
    return EXIT_OK


def _add_source(p):
    p.add_argument("--scenario", help="scenario file (.json or .toml)")
    p.add_argument("--agents", type=int)
    p.add_argument("--obstacles", type=int, default=0)
    p.add_argument("--area", type=float, nargs=2, default=(30.0, 15.0), metavar=("W", "H"))
    p.add_argument("--coalitions", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metanav", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    _add_source(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="mnf")
    p.add_argument("--out", required=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="MNF vs DNF on one scenario, with kappa")
    _add_source(p)
    p.add_argument("--out", required=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("suite", help="total/partial association suites")
    p.add_argument("suite", choices=("table1", "table2"))
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=1.0, help="count/area factor at equal density")
    _add_sim_flags(p)
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("sweep-alpha", help="convergence time vs multiples of alpha-dagger")
    _add_source(p)
    p.add_argument("--multipliers", default="1,2,4")
    p.add_argument("--out", required=True)
    _add_sim_flags(p)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("generate", help="write a random scenario file")
    p.add_argument("--agents", type=int, required=True)
    p.add_argument("--obstacles", type=int, default=0)
    p.add_argument("--area", type=float, nargs=2, default=(30.0, 15.0), metavar=("W", "H"))
    p.add_argument("--coalitions", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ScenarioFormatError, InfeasibleSpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularityError, NumericalFault, UnconfinableError, ArithmeticError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
