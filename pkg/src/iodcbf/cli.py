"""Command-line pipeline: data -> model -> safe set -> closed loop -> checks.

Every subcommand reads the shared ``--config`` file, writes into ``--out``
and records its artifacts in ``manifest.json`` together with the schema
and config hashes.  Inputs default to the artifacts of the previous stage
in the same output directory.

Exit codes: 0 success, 2 validation, 3 numerical/infeasible,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import TrajectoryDataset, check_pe, excitation_signal, partition
from .errors import (
    IODCBFError,
    NotConverged,
    PersistencyOfExcitationError,
    ValidationError,
)
from .filter import filter_batch, h_value
from .geometry import (
    Polytope,
    coordinate_names,
    export_vertices_csv,
    extended_constraints,
    invariant_set,
    project,
)
from .model import DataDrivenModel, build_extended_dynamics, fit_predictor
from .sim import config_hash, run_closed_loop, simulate_open_loop
from .verify import verify_all

log = logging.getLogger("iodcbf")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 2, 3, 4

DATASET_FILE = "dataset.csv"
PE_REPORT_FILE = "pe_report.json"
MODEL_FILE = "model.json"
SET_FILE = "safe_set.json"
SET_REPORT_FILE = "invariant_report.json"
SIMLOG_FILE = "simlog.csv"
SUMMARY_FILE = "summary.json"
VERIFY_FILE = "verification.json"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _record(out: Path, cfg: dict, command: str, files: list, seed) -> None:
    """Add provenance for ``command`` to the directory manifest."""
    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest["schema_hash"] = cfgmod.schema_hash()
    manifest[command] = {"config_hash": config_hash(cfg), "seed": seed, "files": sorted(files)}
    _write_json(path, manifest)


def _artifact(arg, out: Path, default: str) -> Path:
    path = Path(arg) if arg else out / default
    if not path.exists():
        raise ValidationError(f"missing input file {path}")
    return path


def _problem_sets(cfg: dict, model: DataDrivenModel):
    u_set, y_set = cfgmod.make_sets(cfg)
    if u_set.dim != model.m or y_set.dim != model.p:
        raise ValidationError("constraint bounds do not match the model dimensions")
    return u_set, extended_constraints(u_set, y_set, model.t_ini)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(args, cfg, out: Path) -> int:
    plant = cfgmod.make_plant(cfg)
    exc = cfg["excitation"]
    u = excitation_signal(int(cfg["dataset_length"]), plant.m, exc["seed"], float(exc["scale"]))
    ds = TrajectoryDataset(u, simulate_open_loop(plant, u))
    ds.to_csv(out / DATASET_FILE)
    report = check_pe(ds, int(cfg["t_ini"]))
    report.save(out / PE_REPORT_FILE)
    _record(out, cfg, "generate-data", [DATASET_FILE, PE_REPORT_FILE], exc["seed"])
    print(f"wrote {ds.n_samples} samples; stacked Hankel rank {report.stacked_rank}, "
          f"input rank {report.input_hankel_rank}/{ds.m * report.required_order}")
    if not report.satisfied:
        raise PersistencyOfExcitationError("input is not persistently exciting; see "
                                           f"{out / PE_REPORT_FILE}")
    return EXIT_OK


def cmd_build_model(args, cfg, out: Path) -> int:
    ds = TrajectoryDataset.from_csv(_artifact(args.dataset, out, DATASET_FILE))
    t_ini = int(args.t_ini if args.t_ini is not None else cfg["t_ini"])
    r, residual = fit_predictor(partition(ds, t_ini))
    model = build_extended_dynamics(r, ds.m, ds.p, t_ini, residual)
    model.save(out / MODEL_FILE)
    _record(out, cfg, "build-model", [MODEL_FILE], None)
    print(f"predictor residual {residual:.3e}; r = {np.array2string(model.r.ravel(), precision=4)}")
    return EXIT_OK


def _export_projections(safe_set: Polytope, model: DataDrivenModel, out: Path) -> list:
    """Project onto the most recent outputs (2-D and, if possible, 3-D)."""
    names = coordinate_names(model.m, model.p, model.t_ini)
    n = model.n_xi
    # last output of each lag, newest first
    recent = [n - model.p * k - 1 for k in range(model.t_ini)]
    files = []
    for count in (2, 3):
        if len(recent) < count:
            break
        dims = recent[:count]
        fname = f"projection_{count}d.csv"
        export_vertices_csv(project(safe_set, dims), out / fname, [names[d] for d in dims])
        files.append(fname)
    return files


def cmd_invariant_set(args, cfg, out: Path) -> int:
    model = DataDrivenModel.load(_artifact(args.model, out, MODEL_FILE))
    u_set, ambient = _problem_sets(cfg, model)
    opts = cfg["invariant_set"]
    try:
        rep = invariant_set(ambient, model, u_set, int(opts["max_iter"]), float(opts["tol"]))
    except NotConverged as exc:
        # keep the partial result for inspection
        if exc.report is not None:
            exc.report.set.save(out / SET_FILE)
            _write_json(out / SET_REPORT_FILE, exc.report.to_dict())
        raise
    rep.set.save(out / SET_FILE)
    _write_json(out / SET_REPORT_FILE, rep.to_dict())
    files = [SET_FILE, SET_REPORT_FILE] + _export_projections(rep.set, model, out)
    _record(out, cfg, "invariant-set", files, None)
    print(f"converged after {rep.iterations} iterations; {rep.set.n_rows} inequalities")
    return EXIT_OK


def cmd_simulate(args, cfg, out: Path) -> int:
    if args.scenario:
        cfg = cfgmod.load_config(args.config, json.loads(Path(args.scenario).read_text()))
        if args.seed is not None:
            cfg = cfgmod.apply_seed(cfg, args.seed)
    if args.lambda_min is not None:
        cfg["filter"]["lambda_min"] = float(args.lambda_min)
        cfgmod.validate(cfg)
    model = DataDrivenModel.load(_artifact(args.model, out, MODEL_FILE))
    safe_set = Polytope.load(_artifact(args.set, out, SET_FILE))
    if safe_set.dim != model.n_xi:
        raise ValidationError("safe set and model dimensions differ")
    plant = cfgmod.make_plant(cfg)
    xi0 = np.zeros(model.n_xi)  # origin with a zero warm-up history
    if h_value(safe_set, xi0) < 0:
        raise ValidationError("the initial extended state is outside the safe set")
    schedule = cfgmod.make_schedule(cfg["scenario"]["schedule"])
    steps = schedule.n_steps if args.steps is None else int(args.steps)
    meta = {"seed": args.seed, "config_hash": config_hash(cfg),
            "schema_hash": cfgmod.schema_hash()}
    try:
        sim = run_closed_loop(plant, model, safe_set, cfgmod.make_filter_config(cfg), schedule,
                              steps, xi0, ts=float(cfg["scenario"]["sample_time"]), metadata=meta)
    except IODCBFError as exc:
        partial = getattr(exc, "log", None)
        if partial is not None:
            partial.to_csv(out / SIMLOG_FILE)
            _write_json(out / SUMMARY_FILE, {**partial.summary(), **meta})
        raise
    sim.to_csv(out / SIMLOG_FILE)
    summary = {**sim.summary(), **meta, "lambda_min": cfg["filter"]["lambda_min"]}
    _write_json(out / SUMMARY_FILE, summary)
    _record(out, cfg, "simulate", [SIMLOG_FILE, SUMMARY_FILE], args.seed)
    min_h = "n/a" if summary["min_h"] is None else f"{summary['min_h']:.3e}"
    print(f"{summary['steps']} steps; max|y| {summary['max_abs_y']:.6f}, "
          f"max|u| {summary['max_abs_u']:.6f}, min h {min_h}")
    return EXIT_OK


def cmd_verify(args, cfg, out: Path) -> int:
    model = DataDrivenModel.load(_artifact(args.model, out, MODEL_FILE))
    safe_set = Polytope.load(_artifact(args.set, out, SET_FILE))
    u_set, ambient = _problem_sets(cfg, model)
    seed = 0 if args.seed is None else args.seed
    report = verify_all(model, safe_set, ambient, u_set, seed=seed, n_invariance=args.samples)
    _write_json(out / VERIFY_FILE, report.to_dict())
    _record(out, cfg, "verify", [VERIFY_FILE], seed)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  (max violation {c.max_violation:.3g})")
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def cmd_filter_batch(args, cfg, out: Path) -> int:
    model = DataDrivenModel.load(_artifact(args.model, out, MODEL_FILE))
    safe_set = Polytope.load(_artifact(args.set, out, SET_FILE))
    target = Path(args.output) if args.output else out / "filtered.csv"
    n = filter_batch(model, safe_set, cfgmod.make_filter_config(cfg), Path(args.input), target)
    print(f"filtered {n} rows into {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults to the built-in benchmark)")
    common.add_argument("--seed", type=int, help="seed for the excitation and random schedules")
    common.add_argument("--out", help="output directory (default: config output_dir)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="iodcbf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", parents=[common], help="simulate the excitation dataset")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("build-model", parents=[common], help="fit the one-step predictor")
    p.add_argument("--dataset")
    p.add_argument("--t-ini", type=int, dest="t_ini")
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("invariant-set", parents=[common], help="compute the safe set")
    p.add_argument("--model")
    p.set_defaults(func=cmd_invariant_set)

    p = sub.add_parser("simulate", parents=[common], help="run the filtered closed loop")
    p.add_argument("--model")
    p.add_argument("--set")
    p.add_argument("--scenario", help="partial config JSON merged over --config")
    p.add_argument("--lambda-min", type=float, dest="lambda_min")
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="run the property checks")
    p.add_argument("--model")
    p.add_argument("--set")
    p.add_argument("--samples", type=int, default=1000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("filter-batch", parents=[common], help="filter (xi, u_nominal) rows of a CSV")
    p.add_argument("input")
    p.add_argument("--model")
    p.add_argument("--set")
    p.add_argument("--output")
    p.set_defaults(func=cmd_filter_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        if args.seed is not None:
            cfg = cfgmod.apply_seed(cfg, args.seed)
        out = Path(args.out or cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg, out)
    except IODCBFError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
