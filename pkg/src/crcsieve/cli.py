"""Command-line interface.

Four subcommands cover the workflow:

* ``fit``      — estimate the model from a CSV file; writes a coefficient
                 table, per-coefficient function grids, a JSON fit record,
                 figures, and a manifest.
* ``bands``    — ``fit`` plus wild-bootstrap confidence bands on the grids.
* ``cv``       — cross-validated basis-size selection report.
* ``simulate`` — Monte Carlo study for a built-in design; writes the
                 bias/SE/RMSE/MASE table, the basis-size choice histogram,
                 studentized draws, figures, and a manifest.

Every artifact is deterministic given the seed: no timestamps are written,
floats are rendered with shortest round-trip repr, and rerunning a command
with identical inputs reproduces identical bytes. Failures print a single
machine-parsable line ``error: <ErrorClass>: <message>`` and exit nonzero.
"""

from __future__ import annotations

import argparse
import os
import sys
from collections import Counter
from dataclasses import asdict, replace

import numpy as np

from .dataio import (
    BOOTSTRAP_WEIGHT_LAWS,
    RunConfig,
    build_manifest,
    load_csv,
    save_fit_result,
    write_csv,
    write_manifest,
)
from .design import build_design
from .errors import CrcsieveError
from .estimator import FunctionEstimate, evaluate_b, profile_fit
from .montecarlo import run_study
from .selection import cross_validate

_CONFIG_KEYS = (
    "family",
    "k",
    "k_grid",
    "folds",
    "n_draws",
    "level",
    "weights",
    "seed",
    "ginv_tol",
    "grid_points",
)

# candidate basis sizes when fitting a CSV file without --k or --k-grid
_DEFAULT_K_GRID = [1, 2, 3, 4, 5, 6]


def _add_data_arguments(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--data", required=True, help="input CSV file (header required)")
    sub.add_argument("--y", required=True, help="outcome column name")
    sub.add_argument("--x", required=True, nargs="+", help="regressor column names")
    sub.add_argument("--z", nargs="*", default=None, help="control column names")


def _add_config_arguments(sub: argparse.ArgumentParser, *, bands: bool) -> None:
    sub.add_argument("--config", default=None, help="JSON file with run settings")
    sub.add_argument("--family", choices=("polynomial", "bspline"), default=None)
    sub.add_argument("--k", type=int, default=None,
                     help="basis size; omit to select by cross-validation")
    sub.add_argument("--k-grid", type=int, nargs="+", default=None, dest="k_grid",
                     help="candidate basis sizes for cross-validation")
    sub.add_argument("--cv-folds", type=int, default=None, dest="folds")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--grid-points", type=int, default=None, dest="grid_points",
                     help="evaluation points per regressor")
    if bands:
        sub.add_argument("--B", type=int, default=None, dest="n_draws",
                         help="bootstrap draws")
        sub.add_argument("--level", type=float, default=None,
                         help="band coverage level in (0, 1)")
        sub.add_argument("--weights", choices=BOOTSTRAP_WEIGHT_LAWS, default=None,
                         help="wild bootstrap multiplier law")
    sub.add_argument("--out", default=".", help="output directory")
    sub.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crcsieve",
        description=(
            "Sieve estimation of linear models with regressor-correlated "
            "random coefficients"
        ),
    )
    subs = parser.add_subparsers(dest="command", required=True)

    fit = subs.add_parser("fit", help="estimate the model from a CSV file")
    _add_data_arguments(fit)
    _add_config_arguments(fit, bands=False)

    bands = subs.add_parser("bands", help="fit plus wild-bootstrap bands")
    _add_data_arguments(bands)
    _add_config_arguments(bands, bands=True)

    cv = subs.add_parser("cv", help="cross-validated basis-size selection")
    _add_data_arguments(cv)
    _add_config_arguments(cv, bands=False)

    sim = subs.add_parser("simulate", help="Monte Carlo study of a built-in design")
    sim.add_argument("--design", required=True,
                     choices=("d1_uni", "d1_biv", "d2_uni", "d2_biv", "d3_iv"))
    sim.add_argument("--n", type=int, required=True, help="sample size per replication")
    sim.add_argument("--reps", type=int, required=True, help="number of replications")
    sim.add_argument("--rho-x", type=float, default=0.0, dest="rho_x",
                     help="regressor correlation (bivariate designs)")
    sim.add_argument("--jobs", type=int, default=1, help="worker processes")
    sim.add_argument("--config", default=None, help="JSON file with run settings")
    sim.add_argument("--k", type=int, default=None,
                     help="fixed basis size; omit for per-replication selection")
    sim.add_argument("--k-grid", type=int, nargs="+", default=None, dest="k_grid")
    sim.add_argument("--cv-folds", type=int, default=None, dest="folds")
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--out", default=".", help="output directory")
    sim.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    return parser


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    overrides = {
        key: getattr(args, key) for key in _CONFIG_KEYS if hasattr(args, key)
    }
    cfg = base.merged(**overrides)
    if getattr(args, "k", None) is not None:
        # an explicit size on the command line beats any grid in the config
        cfg = replace(cfg, k=args.k)
    return cfg


def _evaluation_grid(x: np.ndarray, points: int) -> list[np.ndarray]:
    return [
        np.linspace(float(x[:, j].min()), float(x[:, j].max()), points)
        for j in range(x.shape[1])
    ]


def _coefficient_rows(fit) -> list[list]:
    rows = []
    for label, est, se in fit.coefficient_table():
        rows.append([label, float(est), "" if se is None else float(se), fit.k])
    return rows


def _write_grid_files(out: str, est: FunctionEstimate) -> list[str]:
    paths = []
    with_bands = est.lower is not None and est.upper is not None
    for j in range(len(est.grid)):
        name = f"b{j + 1}_grid.csv"
        header = ["xi", "b_hat"] + (["lower", "upper"] if with_bands else [])
        rows = []
        for g in range(est.grid[j].size):
            row = [float(est.grid[j][g]), float(est.aggregate[j][g])]
            if with_bands:
                row += [float(est.lower[j][g]), float(est.upper[j][g])]
            rows.append(row)
        write_csv(os.path.join(out, name), header, rows)
        paths.append(name)
    return paths


def _print_fit_summary(ds, fit, cv_report, pi_norm: float, written: list[str]) -> None:
    print(f"n = {ds.n} observations, p = {ds.x.shape[1]} regressor(s)"
          + (f", {len(ds.z_names)} control(s)" if ds.z_names else ""))
    if cv_report is not None:
        scores = ", ".join(
            f"K={k}: {s:.6g}" if np.isfinite(s) else f"K={k}: failed"
            for k, s in zip(cv_report.k_grid, cv_report.scores)
        )
        print(f"cross-validation over {cv_report.folds} folds ({scores})")
        print(f"selected basis size K = {fit.k}")
    else:
        print(f"basis size K = {fit.k} (fixed)")
    print("coefficients (sandwich standard errors):")
    for label, est, se in fit.coefficient_table():
        se_txt = "" if se is None else f"  (se {se:.6g})"
        print(f"  {label:>10}  {est: .6g}{se_txt}")
    print(f"diagnostics: pi_hat norm = {pi_norm:.6g}"
          + ("  [~0: no detectable slope heterogeneity]" if pi_norm < 1e-6 else ""))
    print("wrote: " + ", ".join(written))


def _cmd_fit(args: argparse.Namespace, *, with_bands: bool) -> int:
    cfg = _resolve_config(args)
    ds = load_csv(args.data, args.y, args.x, args.z)
    os.makedirs(args.out, exist_ok=True)

    cv_report = None
    k = cfg.k
    if k is None:
        cv_report = cross_validate(
            ds.y, ds.x, z_matrix=ds.z, k_grid=cfg.k_grid or _DEFAULT_K_GRID,
            family=cfg.family, folds=cfg.folds, seed=cfg.seed,
        )
        k = cv_report.chosen_k
    design = build_design(
        ds.y, ds.x, z_matrix=ds.z, family=cfg.family, k=k, z_labels=ds.z_names or None,
    )
    fit = profile_fit(design, ginv_tol=cfg.ginv_tol)
    grid = _evaluation_grid(ds.x, cfg.grid_points)
    est = evaluate_b(fit, design.bases, grid)

    if with_bands:
        from .selection import wild_bootstrap_bands

        bb = wild_bootstrap_bands(
            fit, design, grid, n_draws=cfg.n_draws, level=cfg.level,
            weights=cfg.weights, seed=cfg.seed,
        )
        est = FunctionEstimate(
            grid=est.grid, values=est.values, aggregate=est.aggregate,
            lower=bb.lower, upper=bb.upper, level=bb.level,
        )

    written = ["coefficients.csv"]
    write_csv(
        os.path.join(args.out, "coefficients.csv"),
        ["term", "estimate", "se", "k"],
        _coefficient_rows(fit),
    )
    written += _write_grid_files(args.out, est)
    save_fit_result(fit, os.path.join(args.out, "fit.json"))
    written.append("fit.json")

    pi_norm = float(np.linalg.norm(fit.pi_hat))
    diagnostics = {
        "pi_hat_norm": pi_norm,
        "rank_s": int(fit.rank_s),
        "n_obs": int(fit.n_obs),
        "k": int(fit.k),
    }
    if cv_report is not None:
        diagnostics["cv_scores"] = {
            str(kk): (None if not np.isfinite(s) else float(s))
            for kk, s in zip(cv_report.k_grid, cv_report.scores)
        }
    config_record = asdict(cfg)
    config_record.update(
        {"data": os.path.basename(args.data), "y": args.y, "x": list(args.x),
         "z": list(args.z or []), "command": "bands" if with_bands else "fit"}
    )
    manifest = build_manifest(
        command="bands" if with_bands else "fit",
        config=config_record, seed=cfg.seed, data_path=args.data,
        diagnostics=diagnostics,
    )
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    written.append("manifest.json")

    if not args.no_plots:
        from . import plots

        plots.plot_function_estimate(
            est, os.path.join(args.out, "estimates.png"),
            title="estimated slope heterogeneity",
        )
        written.append("estimates.png")
        if cv_report is not None:
            plots.plot_cv_curve(
                cv_report.k_grid, cv_report.scores, cv_report.chosen_k,
                os.path.join(args.out, "cv.png"),
            )
            written.append("cv.png")

    _print_fit_summary(ds, fit, cv_report, pi_norm, written)
    return 0


def _cmd_cv(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    ds = load_csv(args.data, args.y, args.x, args.z)
    os.makedirs(args.out, exist_ok=True)
    report = cross_validate(
        ds.y, ds.x, z_matrix=ds.z, k_grid=cfg.k_grid or _DEFAULT_K_GRID,
        family=cfg.family, folds=cfg.folds, seed=cfg.seed,
    )
    rows = [
        [k, float(s) if np.isfinite(s) else "", report.failures.get(k, "")]
        for k, s in zip(report.k_grid, report.scores)
    ]
    write_csv(os.path.join(args.out, "cv.csv"), ["k", "score", "failed"], rows)
    config_record = asdict(cfg)
    config_record.update(
        {"data": os.path.basename(args.data), "y": args.y, "x": list(args.x),
         "z": list(args.z or []), "command": "cv"}
    )
    manifest = build_manifest(
        command="cv", config=config_record, seed=cfg.seed, data_path=args.data,
        diagnostics={"chosen_k": int(report.chosen_k), "folds": report.folds},
    )
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    written = ["cv.csv", "manifest.json"]
    if not args.no_plots:
        from . import plots

        plots.plot_cv_curve(
            report.k_grid, report.scores, report.chosen_k,
            os.path.join(args.out, "cv.png"),
        )
        written.append("cv.png")
    print(f"cross-validated {len(report.k_grid)} basis sizes on {report.n_obs} rows "
          f"({report.folds} folds)")
    for k, s in zip(report.k_grid, report.scores):
        status = f"{s:.6g}" if np.isfinite(s) else f"failed: {report.failures.get(k)}"
        marker = "  <- selected" if k == report.chosen_k else ""
        print(f"  K={k}: {status}{marker}")
    print("wrote: " + ", ".join(written))
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    os.makedirs(args.out, exist_ok=True)
    study = run_study(
        args.design, args.n, args.reps, seed=cfg.seed, rho_x=args.rho_x,
        k=cfg.k, k_grid=cfg.k_grid, folds=cfg.folds, jobs=args.jobs,
    )

    header = ["estimator", "parameter", "truth", "bias", "se", "rmse", "mase"]
    rows = []
    for r in study.summary_rows():
        if r["parameter"].startswith("mase_b"):
            j = r["parameter"].removeprefix("mase_")
            rows.append([r["estimator"], j, "", "", "", "", r["rmse"]])
        else:
            rows.append([r["estimator"], r["parameter"], r["truth"], r["bias"],
                         r["se"], r["rmse"], ""])
    write_csv(os.path.join(args.out, "summary.csv"), header, rows)

    counts = Counter(int(k) for k in study.chosen_k)
    write_csv(
        os.path.join(args.out, "k_choice.csv"), ["k", "count"],
        [[k, counts[k]] for k in sorted(counts)],
    )
    stud_cols = {
        label: study.studentized(j) for j, label in enumerate(study.labels)
        if np.all(np.isfinite(study.snp_se[:, j])) and study.snp_se[:, j].min() > 0
    }
    stud_rows = (
        np.column_stack(list(stud_cols.values())).tolist() if stud_cols else []
    )
    write_csv(os.path.join(args.out, "studentized.csv"), list(stud_cols), stud_rows)

    config_record = asdict(cfg)
    config_record.update(
        {"design": args.design, "n": args.n, "reps": args.reps,
         "rho_x": args.rho_x, "command": "simulate"}
    )
    manifest = build_manifest(
        command="simulate", config=config_record, seed=cfg.seed,
        diagnostics={
            "dropped_replications": len(study.dropped),
            "k_choice": {str(k): counts[k] for k in sorted(counts)},
        },
    )
    write_manifest(manifest, os.path.join(args.out, "manifest.json"))
    written = ["summary.csv", "k_choice.csv", "studentized.csv", "manifest.json"]

    if not args.no_plots:
        from . import plots

        for j in range(1, study.p + 1):
            label = study.labels[j] if j < len(study.labels) else f"x{j}"
            name = f"studentized_{label.replace(':', '_')}.png"
            plots.plot_studentized_density(
                study.studentized(j), os.path.join(args.out, name), label=label,
            )
            written.append(name)

    print(f"design {study.design}: n = {study.n}, {study.reps} replications "
          f"(seed {study.seed}, {len(study.dropped)} dropped)")
    ktxt = ", ".join(f"K={k}: {counts[k]}" for k in sorted(counts))
    print(f"basis size choices: {ktxt}")
    print(f"{'estimator':>9} {'parameter':>10} {'truth':>9} {'bias':>9} "
          f"{'se':>8} {'rmse':>8} {'mase':>8}")
    for row in rows:
        cells = [
            f"{v:.4f}" if isinstance(v, float) else str(v) for v in row
        ]
        print(f"{cells[0]:>9} {cells[1]:>10} {cells[2]:>9} {cells[3]:>9} "
              f"{cells[4]:>8} {cells[5]:>8} {cells[6]:>8}")
    print("wrote: " + ", ".join(written))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return _cmd_fit(args, with_bands=False)
        if args.command == "bands":
            return _cmd_fit(args, with_bands=True)
        if args.command == "cv":
            return _cmd_cv(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        parser.error(f"unknown command {args.command!r}")
    except (CrcsieveError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
