"""Command line interface.

Exit codes: 0 success, 1 infeasible problem, 2 bad configuration or
arguments, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import harness, sysid, tempo
from .config import load_scenario
from .errors import ConfigError, InfeasibleError, NumericalError
from .plant import PlantState, simulate
from .tables import write_keyvalues


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--format", default="csv", help="table format (only csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modru",
        description="Model reduction based planning and control toolchain")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in [
            ("simulate", "run the open-loop excitation experiment"),
            ("estimate", "generate data and fit the reduced model"),
            ("plan", "solve the timing problem and resample the reference"),
            ("control", "full pipeline, reporting closed-loop tracking"),
            ("pipeline", "full pipeline with all artifacts written"),
            ("compare-slope", "pipeline with and without slope knowledge"),
            ("robustness", "controller design sweep over plant parasitics")]:
        p = sub.add_parser(name, help=descr)
        _add_common(p)
        if name == "robustness":
            p.add_argument("--taus", default="0.2,0.1,0.05,0.02,0.01,0",
                           help="comma separated parasitic time constants")
            p.add_argument("--methods", default="model-based,model-free")
    return parser


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else Path("out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run(args) -> int:
    if args.format != "csv":
        raise ConfigError(f"unsupported table format: {args.format!r}")

    if args.command == "robustness":
        taus = [float(s) for s in args.taus.split(",") if s.strip() != ""]
        methods = tuple(s.strip() for s in args.methods.split(",") if s.strip())
        out = _out_dir(args)
        rows = harness.run_robustness(taus, methods=methods,
                                      seed=args.seed if args.seed is not None else 0,
                                      out_csv=out / "robustness.csv")
        for r in rows:
            print(f"tau={r.tau:g} {r.method}: t_r={r.t_r:.3f} "
                  f"M_S={r.M_S:.3f} M_T={r.M_T:.3f} Q_u={r.Q_u:.3e}")
        return 0

    sc = load_scenario(args.config, seed=args.seed)
    out = _out_dir(args)

    if args.command == "simulate":
        data = harness.stage_dataset(sc)
        data.to_csv(out / "dataset.csv")
        print(f"wrote {out / 'dataset.csv'} ({len(data.t)} samples)")
        return 0

    if args.command == "estimate":
        data = harness.stage_dataset(sc)
        model, eff, fit = harness.stage_estimate(sc, data)
        data.to_csv(out / "dataset.csv")
        sysid.save_theta(out / "theta.txt", model, eff)
        print(f"converged={fit.converged} iters={fit.n_iter} rms={fit.rms:.6g}")
        for i, th in enumerate(model.theta):
            print(f"theta{i + 1} = {th:.8g}")
        return 0

    if args.command == "plan":
        data = harness.stage_dataset(sc)
        model, eff, _ = harness.stage_estimate(sc, data)
        problem, sol, ref = harness.stage_plan(sc, model, eff)
        sol.to_csv(out / "to_solution.csv", problem)
        ref.to_csv(out / "reference.csv")
        print(f"E = {sol.E:.6g}, t_end = {sol.t[-1]:.3f} (budget {sc.T_f:g})")
        return 0

    if args.command in ("control", "pipeline"):
        report, artifacts = harness.run_pipeline(sc, out_dir=out)
        for key, val in report.to_items().items():
            print(f"{key} = {val}")
        return 0

    if args.command == "compare-slope":
        results = harness.compare_slope_knowledge(sc, out_dir=out)
        for key, val in results["summary"].items():
            print(f"{key} = {val}")
        return 0

    raise ConfigError(f"unknown command: {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
