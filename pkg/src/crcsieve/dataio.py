"""Data ingestion, run configuration, and result serialization.

CSV files are read with the standard library reader: a header row is
required, declared columns must exist, and every used cell must parse as a
finite number — violations carry the row and column so bad files are easy
to fix. Fit results serialize to JSON with full float round-tripping (the
shortest-repr encoding reproduces every bit on reload). Run manifests record
versions, seed, configuration, and a content hash of the input data, and
contain no timestamps so identical runs produce identical artifacts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from dataclasses import dataclass, fields, asdict

import numpy as np

from .errors import (
    DataError,
    EmptyInputError,
    ParseError,
    SchemaError,
    ShapeError,
)
from .estimator import FitResult

BOOTSTRAP_WEIGHT_LAWS = ("rademacher", "mammen")


@dataclass
class Dataset:
    """A typed numeric table extracted from a delimited file."""

    y_name: str
    x_names: list[str]
    z_names: list[str]
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None
    source: str

    @property
    def n(self) -> int:
        return self.y.shape[0]


def load_csv(
    path: str,
    y: str,
    x: list[str] | str,
    z: list[str] | str | None = None,
) -> Dataset:
    """Read the named columns from a headered CSV file.

    Column names are matched exactly against the header. Missing columns
    raise SchemaError; cells that do not parse as numbers raise ParseError
    with their row and column; empty or non-finite cells in used columns
    raise DataError listing the offending rows.
    """
    x_names = [x] if isinstance(x, str) else list(x)
    z_names = [z] if isinstance(z, str) else list(z or [])
    if not y or not x_names:
        raise SchemaError("need an outcome column and at least one regressor column")
    used = [y] + x_names + z_names
    if len(set(used)) != len(used):
        raise SchemaError(f"duplicate column selection in {used}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        missing = [c for c in used if c not in header]
        if missing:
            raise SchemaError(
                f"column(s) {', '.join(missing)} not in header {header}"
            )
        idx = {c: header.index(c) for c in used}
        rows = []
        bad_rows = []
        for r, row in enumerate(reader, start=2):  # row 1 is the header
            if not row or all(not cell.strip() for cell in row):
                continue
            vals = []
            for c in used:
                if idx[c] >= len(row):
                    bad_rows.append(r)
                    vals = None
                    break
                cell = row[idx[c]].strip()
                if cell == "":
                    bad_rows.append(r)
                    vals = None
                    break
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {r}, column {c!r}: {cell!r} is not a number"
                    ) from None
                vals.append(v)
            if vals is not None:
                rows.append(vals)
    if bad_rows:
        raise DataError(
            f"missing values in used columns at row(s) {sorted(set(bad_rows))}"
        )
    if not rows:
        raise EmptyInputError(f"{path} has a header but no data rows")
    table = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(table)):
        bad = sorted(set((np.where(~np.isfinite(table))[0] + 2).tolist()))
        raise DataError(f"non-finite values in used columns at row(s) {bad}")
    ky = used.index(y)
    kx = [used.index(c) for c in x_names]
    kz = [used.index(c) for c in z_names]
    return Dataset(
        y_name=y,
        x_names=x_names,
        z_names=z_names,
        y=table[:, ky],
        x=table[:, kx],
        z=table[:, kz] if kz else None,
        source=str(path),
    )


@dataclass
class RunConfig:
    """Estimation settings shared by the command-line entry points."""

    family: str = "polynomial"
    k: int | None = None
    k_grid: list[int] | None = None
    folds: int = 10
    n_draws: int = 500
    level: float = 0.95
    weights: str = "rademacher"
    seed: int = 0
    ginv_tol: float = 1e-10
    grid_points: int = 101

    def __post_init__(self):
        if not 0.0 < self.level < 1.0:
            raise ShapeError(f"level must be in (0, 1), got {self.level}")
        if self.ginv_tol <= 0.0:
            raise ShapeError("ginv_tol must be positive")
        if self.weights not in BOOTSTRAP_WEIGHT_LAWS:
            raise ShapeError(
                f"weights must be one of {BOOTSTRAP_WEIGHT_LAWS}, got {self.weights!r}"
            )
        if self.grid_points < 2:
            raise ShapeError("need at least two grid points")
        if self.k is not None and self.k < 1:
            raise ShapeError(f"basis size must be >= 1, got {self.k}")
        if self.k_grid is not None:
            if not self.k_grid:
                raise ShapeError("candidate basis-size grid must be non-empty")
            if any(int(k) < 1 for k in self.k_grid):
                raise ShapeError(f"basis sizes must be >= 1, got {self.k_grid}")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise SchemaError(f"{path} must contain a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise SchemaError(
                f"unknown config key(s) {sorted(unknown)}; expected {sorted(known)}"
            )
        return cls(**raw)

    def merged(self, **overrides) -> "RunConfig":
        vals = asdict(self)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig(**vals)


def fit_result_to_dict(fit: FitResult) -> dict:
    """JSON-ready view of a fit; floats keep their exact values via repr."""
    return {
        "delta_hat": fit.delta_hat.tolist(),
        "pi_hat": fit.pi_hat.tolist(),
        "k": int(fit.k),
        "rank_s": int(fit.rank_s),
        "labels": list(fit.labels),
        "n_obs": int(fit.n_obs),
        "se_delta": None if fit.se_delta is None else fit.se_delta.tolist(),
        "vcov_delta": None if fit.vcov_delta is None else fit.vcov_delta.tolist(),
        "residuals": fit.residuals.tolist(),
        "fitted": fit.fitted.tolist(),
    }


def fit_result_from_dict(payload: dict) -> FitResult:
    resid = np.asarray(payload["residuals"], dtype=float)
    return FitResult(
        delta_hat=np.asarray(payload["delta_hat"], dtype=float),
        pi_hat=np.asarray(payload["pi_hat"], dtype=float),
        k=int(payload["k"]),
        residuals=resid,
        fitted=np.asarray(payload["fitted"], dtype=float),
        sigma2_hat=resid**2,
        rank_s=int(payload["rank_s"]),
        labels=list(payload["labels"]),
        vcov_delta=(
            None
            if payload.get("vcov_delta") is None
            else np.asarray(payload["vcov_delta"], dtype=float)
        ),
        se_delta=(
            None
            if payload.get("se_delta") is None
            else np.asarray(payload["se_delta"], dtype=float)
        ),
        n_obs=int(payload["n_obs"]),
    )


def save_fit_result(fit: FitResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_result_to_dict(fit), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_fit_result(path: str) -> FitResult:
    with open(path, encoding="utf-8") as fh:
        return fit_result_from_dict(json.load(fh))


def sha256_of_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(
    *,
    command: str,
    config: dict,
    seed: int,
    data_path: str | None = None,
    diagnostics: dict | None = None,
) -> dict:
    """Reproducibility record: versions, seed, config hash, data hash.

    Deliberately free of timestamps so identical runs write identical bytes.
    """
    from . import __version__

    cfg_json = json.dumps(config, sort_keys=True)
    manifest = {
        "command": command,
        "seed": seed,
        "config": config,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "versions": {
            "crcsieve": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
    }
    if data_path is not None:
        manifest["data_sha256"] = sha256_of_file(data_path)
        manifest["data_path"] = str(data_path)
    if diagnostics:
        manifest["diagnostics"] = diagnostics
    return manifest


def write_manifest(manifest: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path: str, header: list[str], rows) -> None:
    """Deterministic CSV writer: floats use shortest round-trip repr."""

    def fmt(v):
        if isinstance(v, float) or isinstance(v, np.floating):
            return repr(float(v))
        return str(v)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def synthetic_regional_dataset(
    n: int = 1000, seed: int = 0
) -> tuple[list[str], np.ndarray]:
    """Synthetic cross-regional dataset with an outcome change, a bounded
    exposure index, and regional indicator columns.

    The outcome is centered near 0.02 with spread about 0.12 inside
    [-0.30, 0.76]; the exposure index lives on [0, 1.13]; two of three
    regional groups get indicator columns. Header and rows are returned so
    callers can write or consume the table directly.
    """
    if n < 10:
        raise ShapeError(f"need n >= 10 rows, got {n}")
    rng = np.random.default_rng(seed)
    exposure = 1.13 * rng.beta(1.3, 2.2, size=n)
    region = rng.integers(0, 3, size=n)
    slope = 0.06 + 0.05 * rng.standard_normal(n)
    outcome = 0.0 + exposure * slope + 0.10 * rng.standard_normal(n)
    outcome += 0.01 * (region == 1) - 0.01 * (region == 2)
    outcome = np.clip(outcome, -0.30, 0.76)
    header = ["outcome_change", "exposure_index", "region_1", "region_2"]
    table = np.column_stack(
        [
            outcome,
            exposure,
            (region == 1).astype(float),
            (region == 2).astype(float),
        ]
    )
    return header, table


def write_synthetic_regional_csv(path: str, n: int = 1000, seed: int = 0) -> None:
    header, table = synthetic_regional_dataset(n, seed)
    write_csv(path, header, table.tolist())
