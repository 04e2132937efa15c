"""Command-line front end.

Subcommands:

- ``simulate``  draw one data matrix and write it with a manifest
- ``predict``   deterministic outlier/support/bias predictions for a model
- ``estimate``  run the de-aliasing sweep on a data file (or a fresh draw)
- ``locus``     emit the observed and population loci as CSV
- ``reproduce`` run a registered Monte Carlo table and compare to reference

Exit codes: 0 success, 1 failed reproduction tolerance, 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .covmodel import model_from_json, sigma_hat, simulate, spike_subspace
from .datafiles import read_data, write_data
from .design import (
    design_from_json,
    design_to_json,
    manova_coefficients,
    mean_squares,
)
from .errors import NumericalError
from .estimator import SweepConfig, estimate_spikes, observed_locus
from .harness import default_threads
from .mp_law import mp_context, support
from .spike_theory import (
    population_locus,
    predicted_outliers,
    taylor_biases_oneway,
)
from .tables import registered_tables, reproduce_table

EXIT_OK = 0
EXIT_TOLERANCE = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


def _read_arg_json(value: str) -> str:
    """Accept inline JSON or a path to a JSON file."""
    text = value.strip()
    if text.startswith("{"):
        return text
    return Path(value).read_text()


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, args, started: float, outputs: list[str],
                    extra: dict | None = None) -> None:
    manifest = {
        "version": __version__,
        "command": args.command,
        "argv": sys.argv[1:],
        "config": {k: v for k, v in vars(args).items()
                   if k not in ("command", "func") and v is not None},
        "outputs": outputs,
        "wall_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str))


def _cmd_simulate(args) -> int:
    started = time.perf_counter()
    design_json = _read_arg_json(args.design)
    design = design_from_json(design_json)
    model = model_from_json(_read_arg_json(args.model))
    y = simulate(design, model, args.seed)
    out = _out_dir(args) or Path(".")
    data_path = out / "data.bin"
    write_data(data_path, y, design_to_json(design), seed=args.seed)
    outputs = [str(data_path), str(data_path) + ".json"]
    if args.format == "csv":
        csv_path = out / "data.csv"
        np.savetxt(csv_path, y, delimiter=",")
        outputs.append(str(csv_path))
    _write_manifest(out, args, started, outputs,
                    extra={"design": json.loads(design_json)})
    print(f"wrote {data_path} ({y.shape[0]} x {y.shape[1]})")
    return EXIT_OK


def _prediction_payload(design, model, r: int, delta_inner: float) -> dict:
    sub = spike_subspace(model)
    a = manova_coefficients(design, r)
    ctx = mp_context(design, a, model.sigma2, N=model.p - sub.L)
    sup = support(ctx)
    preds = predicted_outliers(ctx, sub, delta_inner=delta_inner, sup=sup)
    payload = {
        "component": r,
        "coefficients": [float(x) for x in a],
        "support": {
            "intervals": [[float(lo), float(hi)] for lo, hi in sup.intervals],
            "has_zero_atom": sup.has_zero_atom,
            "degenerate": sup.degenerate,
        },
        "outliers": [q.to_dict() for q in preds],
    }
    if design.kind == "oneway":
        comp1, comp2 = model.components
        theta1 = comp1.spikes[0][0] if comp1.spikes else 0.0
        theta2 = comp2.spikes[0][0] if comp2.spikes else 0.0
        rho = 0.0
        if comp1.spikes and comp2.spikes:
            rho = float(abs(comp1.spikes[0][1] @ comp2.spikes[0][1]))
        if theta1 > 0.0 or theta2 > 0.0:
            payload["taylor"] = taylor_biases_oneway(
                design, model.sigma2, theta1, theta2, rho, N=model.p - sub.L
            )
    return payload


def _cmd_predict(args) -> int:
    started = time.perf_counter()
    design = design_from_json(_read_arg_json(args.design))
    model = model_from_json(_read_arg_json(args.model))
    payload = _prediction_payload(design, model, args.component, args.delta_inner)
    text = json.dumps(payload, indent=1)
    print(text)
    out = _out_dir(args)
    if out is not None:
        (out / "predict.json").write_text(text)
        _write_manifest(out, args, started, [str(out / "predict.json")])
    return EXIT_OK


def _load_or_simulate(args, design):
    if args.data is not None:
        y, _ = read_data(Path(args.data))
        if y.shape[0] != design.n:
            raise ValueError(
                f"data has {y.shape[0]} rows but the design expects {design.n}"
            )
        return y
    if args.model is None:
        raise ValueError("provide a data file or --model to simulate from")
    model = model_from_json(_read_arg_json(args.model))
    return simulate(design, model, args.seed)


def _estimates_csv(path: Path, estimates, k: int) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (["mu_hat", "lambda_hat"]
                  + [f"a_{i + 1}" for i in range(k)]
                  + [f"t_{i + 1}" for i in range(k)]
                  + [f"s_{i + 1}" for i in range(k)])
        writer.writerow(header)
        for e in estimates:
            writer.writerow([e.mu_hat, e.lambda_hat, *e.a, *e.t_at_solution,
                             *e.s_point])


def _cmd_estimate(args) -> int:
    started = time.perf_counter()
    design = design_from_json(_read_arg_json(args.design))
    y = _load_or_simulate(args, design)
    ms = mean_squares(y, design)
    cfg = SweepConfig(r=args.component, delta=args.delta, grid=args.grid)
    estimates = estimate_spikes(ms, design, cfg)
    payload = [{
        "mu_hat": e.mu_hat,
        "lambda_hat": e.lambda_hat,
        "a": [float(x) for x in e.a],
        "t": [float(x) for x in e.t_at_solution],
        "s": [float(x) for x in e.s_point],
    } for e in estimates]
    print(json.dumps(payload, indent=1))
    out = _out_dir(args)
    if out is not None:
        (out / "estimates.json").write_text(json.dumps(payload, indent=1))
        outputs = [str(out / "estimates.json")]
        if args.format == "csv":
            _estimates_csv(out / "estimates.csv", estimates, design.k)
            outputs.append(str(out / "estimates.csv"))
        if estimates:
            vhat = np.vstack([e.v_hat for e in estimates]).astype("<f8")
            (out / "vhat.bin").write_bytes(vhat.tobytes())
            outputs.append(str(out / "vhat.bin"))
        _write_manifest(out, args, started, outputs)
    return EXIT_OK


def _cmd_locus(args) -> int:
    started = time.perf_counter()
    design = design_from_json(_read_arg_json(args.design))
    y = _load_or_simulate(args, design)
    ms = mean_squares(y, design)
    cfg = SweepConfig(r=args.component, delta=args.delta, grid=args.grid)
    locus = observed_locus(ms, design, cfg)
    out = _out_dir(args) or Path(".")
    k = design.k
    lhat_path = out / "locus_observed.csv"
    with open(lhat_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"a_{i + 1}" for i in range(k)] + ["lambda_hat"]
                        + [f"s_{i + 1}" for i in range(k)])
        for a, lam, s in locus.points:
            writer.writerow([*a, lam, *s])
    outputs = [str(lhat_path)]
    if args.model is not None:
        model = model_from_json(_read_arg_json(args.model))
        sub = spike_subspace(model)
        if sub.L > 0:
            pts = population_locus(sub, grid=max(args.grid, 360))
            ltrue_path = out / "locus_population.csv"
            with open(ltrue_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow([f"s_{i + 1}" for i in range(k)])
                writer.writerows(pts.tolist())
            outputs.append(str(ltrue_path))
    _write_manifest(out, args, started, outputs)
    print(f"wrote {', '.join(outputs)}")
    return EXIT_OK


def _cmd_reproduce(args) -> int:
    started = time.perf_counter()
    report = reproduce_table(args.table, reps=args.reps, seed=args.seed,
                             threads=args.threads)
    for line in report.summary_lines():
        print(line)
    out = _out_dir(args)
    if out is not None:
        path = out / f"report_{args.table}.json"
        path.write_text(json.dumps(report.to_dict(), indent=1))
        _write_manifest(out, args, started, [str(path)])
    if not report.passed and not report.soft:
        return EXIT_TOLERANCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcspectra",
        description="Spectral predictions and de-aliased spike estimation "
                    "for variance-components estimators.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_required: bool):
        p.add_argument("--design", required=True,
                       help="design JSON (inline or path)")
        p.add_argument("--model", required=model_required,
                       help="model JSON (inline or path)")

    p_sim = sub.add_parser("simulate", help="draw one data matrix")
    common(p_sim, model_required=True)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--out", default=".")
    p_sim.add_argument("--format", choices=("json", "csv"), default="json")
    p_sim.set_defaults(func=_cmd_simulate)

    p_pred = sub.add_parser("predict", help="deterministic outlier predictions")
    common(p_pred, model_required=True)
    p_pred.add_argument("--component", type=int, required=True)
    p_pred.add_argument("--delta-inner", type=float, default=1e-3,
                        dest="delta_inner")
    p_pred.add_argument("--out")
    p_pred.add_argument("--format", choices=("json", "csv"), default="json")
    p_pred.set_defaults(func=_cmd_predict)

    p_est = sub.add_parser("estimate", help="run the de-aliasing sweep")
    p_est.add_argument("data", nargs="?", default=None,
                       help="data file from `simulate` (optional with --model)")
    common(p_est, model_required=False)
    p_est.add_argument("--component", type=int, required=True)
    p_est.add_argument("--delta", type=float, default=0.5)
    p_est.add_argument("--grid", type=int, default=200)
    p_est.add_argument("--seed", type=int, default=0)
    p_est.add_argument("--out")
    p_est.add_argument("--format", choices=("json", "csv"), default="csv")
    p_est.set_defaults(func=_cmd_estimate)

    p_loc = sub.add_parser("locus", help="emit observed and population loci")
    p_loc.add_argument("data", nargs="?", default=None)
    common(p_loc, model_required=False)
    p_loc.add_argument("--component", type=int, default=1)
    p_loc.add_argument("--delta", type=float, default=0.5)
    p_loc.add_argument("--grid", type=int, default=200)
    p_loc.add_argument("--seed", type=int, default=0)
    p_loc.add_argument("--out", default=".")
    p_loc.set_defaults(func=_cmd_locus)

    p_rep = sub.add_parser("reproduce", help="reproduce a registered table")
    p_rep.add_argument("--table", required=True,
                       help=f"one of: {', '.join(registered_tables())}")
    p_rep.add_argument("--reps", type=int, default=None)
    p_rep.add_argument("--seed", type=int, default=1)
    p_rep.add_argument("--threads", type=int, default=default_threads())
    p_rep.add_argument("--out")
    p_rep.set_defaults(func=_cmd_reproduce)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
