"""Simulation designs and the replication study harness.

Five data generating processes exercise the estimator: slope heterogeneity
correlated with one regressor (d1_uni) or two (d1_biv), exogenous random
slopes in one or two regressors (d2_uni, d2_biv), and an endogenous-slope
design with an instrument (d3_iv) where the sieve fit competes against OLS
and a control function.

True reduced-form parameters that are not pinned down analytically come from
Gauss-Legendre quadrature against the (truncated) sampling law, so every
summary is compared to a derived truth rather than a hard-coded table value.

Replications are independent: replication r of a study seeded with s draws
from `default_rng([s, r])`, so results are identical no matter how the work
is split across processes.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri

from .comparators import fit_control_function, fit_ols
from .design import build_design
from .errors import (
    CrcsieveError,
    DegenerateTruncationError,
    ReplicationError,
    ShapeError,
)
from .estimator import evaluate_b, profile_fit
from .selection import cross_validate, wild_bootstrap_bands

DESIGNS = ("d1_uni", "d1_biv", "d2_uni", "d2_biv", "d3_iv")

DEFAULT_GRID = np.linspace(-0.99, 0.99, 101)

# Var of a standard normal truncated to [-1, 1]
_PHI1 = np.exp(-0.5) / np.sqrt(2.0 * np.pi)
_MASS1 = float(2.0 * ndtr(1.0) - 1.0)
TRUNCNORM_VAR = 1.0 - 2.0 * _PHI1 / _MASS1


def sample_truncnorm(
    rng: np.random.Generator,
    n: int,
    lo: float = -1.0,
    hi: float = 1.0,
    mean: float = 0.0,
    sd: float = 1.0,
) -> np.ndarray:
    """Normal(mean, sd) conditioned to [lo, hi], drawn by inverse CDF."""
    if not lo < hi:
        raise ShapeError(f"need lo < hi, got [{lo}, {hi}]")
    a = float(ndtr((lo - mean) / sd))
    b = float(ndtr((hi - mean) / sd))
    if b - a < 1e-12:
        raise DegenerateTruncationError(
            f"interval [{lo}, {hi}] carries mass {b - a:.2e}"
        )
    u = rng.uniform(a, b, size=n)
    return mean + sd * ndtri(u)


def sample_truncnorm_bivariate(
    rng: np.random.Generator,
    n: int,
    rho: float = 0.0,
    lo: float = -1.0,
    hi: float = 1.0,
    return_rate: bool = False,
):
    """Standard bivariate normal with correlation rho, accept-reject to the box.

    With `return_rate` the realized acceptance rate of the rejection sampler
    is returned alongside the draws.
    """
    if not abs(rho) < 1.0:
        raise DegenerateTruncationError(f"|rho| must be < 1, got {rho}")
    out = np.empty((n, 2))
    filled = 0
    proposed = 0
    accepted = 0
    batch = max(2 * n, 256)
    while filled < n:
        z = rng.standard_normal((batch, 2))
        draws = np.column_stack([z[:, 0], rho * z[:, 0] + np.sqrt(1 - rho**2) * z[:, 1]])
        keep = draws[
            (draws[:, 0] >= lo)
            & (draws[:, 0] <= hi)
            & (draws[:, 1] >= lo)
            & (draws[:, 1] <= hi)
        ]
        proposed += batch
        accepted += keep.shape[0]
        if proposed >= 4096 and accepted < 1e-3 * proposed:
            raise DegenerateTruncationError(
                f"acceptance rate {accepted / proposed:.2e} below 1e-3"
            )
        take = min(n - filled, keep.shape[0])
        out[filled : filled + take] = keep[:take]
        filled += take
    if return_rate:
        return out, accepted / proposed
    return out


def _gl_nodes(order: int, lo: float, hi: float):
    x, w = np.polynomial.legendre.leggauss(order)
    mid, half = (hi + lo) / 2.0, (hi - lo) / 2.0
    return mid + half * x, half * w


def _norm_pdf(x):
    return np.exp(-0.5 * x**2) / np.sqrt(2.0 * np.pi)


@lru_cache(maxsize=None)
def _tn_moments_1d(order: int = 80):
    """E[X^2], E[X^3], E[e^X], E[X e^X] of the standard normal on [-1, 1]."""
    x, w = _gl_nodes(order, -1.0, 1.0)
    dens = _norm_pdf(x)
    mass = np.sum(w * dens)
    def m(g):
        return float(np.sum(w * dens * g) / mass)
    return {
        "x2": m(x**2),
        "x3": m(x**3),
        "ex": m(np.exp(x)),
        "xex": m(x * np.exp(x)),
    }


@lru_cache(maxsize=None)
def _biv_tn_moments(rho: float, order: int = 64):
    """Joint moments of the standard bivariate TN on the box, by tensor quadrature.

    Returns the pieces of the reduced-form truth for d1_biv: means, variances,
    and covariances of X with the two slope mean functions.
    """
    x, w = _gl_nodes(order, -1.0, 1.0)
    x1 = x[:, None]
    x2 = x[None, :]
    ww = w[:, None] * w[None, :]
    det = 1.0 - rho**2
    dens = np.exp(-(x1**2 - 2 * rho * x1 * x2 + x2**2) / (2 * det)) / (
        2.0 * np.pi * np.sqrt(det)
    )
    wd = ww * dens
    mass = float(np.sum(wd))

    def m(g):
        return float(np.sum(wd * g) / mass)

    f1 = 1.5 * (x1**2 + x2**2)
    f2 = np.exp(x1) + np.exp(x2)
    e_x1 = m(x1 * np.ones_like(x2))
    e_x2 = m(x2 * np.ones_like(x1))
    v_x1 = m(x1**2 * np.ones_like(x2)) - e_x1**2
    v_x2 = m(x2**2 * np.ones_like(x1)) - e_x2**2
    return {
        "e_x1": e_x1,
        "e_x2": e_x2,
        "v_x1": v_x1,
        "v_x2": v_x2,
        "e_f1": m(f1),
        "e_f2": m(f2),
        "cov_x2_f1": m(x2 * f1) - e_x2 * m(f1),
        "cov_x1_f2": m(x1 * f2) - e_x1 * m(f2),
    }


@dataclass(frozen=True)
class TruthSpec:
    """Population values the replication summaries are judged against.

    `b_true` maps each regressor index to the true aggregate heterogeneity
    function evaluated on a grid, under the convention that a bivariate grid
    point is (xi, xi) on the diagonal of the box.
    """

    labels: tuple[str, ...]
    delta: np.ndarray
    b_true: dict  # regressor index -> callable grid -> values
    has_z: bool = False


def d3_conditional_zeta(xi: np.ndarray, order: int = 120) -> np.ndarray:
    """E[zeta | X = x] for X = 1.5 Z + zeta, Z ~ TN[-1,1], zeta ~ N(1,1).

    One-dimensional quadrature over z after the substitution zeta = x - 1.5 z;
    the truncation normalizer of Z cancels in the ratio.
    """
    xi = np.asarray(xi, dtype=float)
    z, w = _gl_nodes(order, -1.0, 1.0)
    zeta = xi[:, None] - 1.5 * z[None, :]
    weight = w[None, :] * _norm_pdf(zeta - 1.0) * _norm_pdf(z)[None, :]
    num = np.sum(weight * zeta, axis=1)
    den = np.sum(weight, axis=1)
    return num / den


@lru_cache(maxsize=None)
def make_truth(design: str, rho_x: float = 0.0) -> TruthSpec:
    """Derived reduced-form truths for one design at the configured rho_x."""
    if design == "d1_uni":
        m2 = _tn_moments_1d()["x2"]
        return TruthSpec(
            ("const", "x1"),
            np.array([0.0, 2.0 * m2]),
            {0: lambda g: 2.0 * np.asarray(g) ** 2 - 2.0 * m2},
        )
    if design == "d1_biv":
        mom = _biv_tn_moments(rho_x)
        a12 = mom["cov_x2_f1"] / mom["v_x2"]
        a21 = mom["cov_x1_f2"] / mom["v_x1"]
        d1 = mom["e_f1"] - a12 * mom["e_x2"]
        d2 = mom["e_f2"] - a21 * mom["e_x1"]
        return TruthSpec(
            ("const", "x1", "x2", "x1:x2"),
            np.array([0.0, d1, d2, a12 + a21]),
            {
                0: lambda g: 3.0 * np.asarray(g) ** 2 - d1 - a12 * np.asarray(g),
                1: lambda g: 2.0 * np.exp(np.asarray(g)) - d2 - a21 * np.asarray(g),
            },
        )
    if design == "d2_uni":
        return TruthSpec(
            ("const", "x1"),
            np.array([0.0, 0.835]),
            {0: lambda g: np.zeros_like(np.asarray(g, dtype=float))},
        )
    if design == "d2_biv":
        zero = lambda g: np.zeros_like(np.asarray(g, dtype=float))
        return TruthSpec(
            ("const", "x1", "x2", "x1:x2"),
            np.array([0.0, 0.835, 2.291, 0.0]),
            {0: zero, 1: zero},
        )
    if design == "d3_iv":
        return TruthSpec(
            ("const", "x1"),
            np.array([0.0, 1.0]),
            {0: lambda g: 0.4 * (d3_conditional_zeta(np.asarray(g)) - 1.0)},
            has_z=True,
        )
    raise ShapeError(f"unknown design {design!r}; expected one of {DESIGNS}")


def generate_data(
    design: str,
    n: int,
    rng: np.random.Generator,
    rho_x: float = 0.0,
    x_fixed: np.ndarray | None = None,
):
    """One simulated dataset (y, x, z) for the named design.

    `x_fixed` reuses a regressor draw across replications (fixed-design mode);
    it is not available for d3_iv, whose regressor is endogenous and must be
    drawn jointly with the slopes.
    """
    if n < 1:
        raise ShapeError(f"need n >= 1, got {n}")
    if design == "d1_uni":
        x = sample_truncnorm(rng, n) if x_fixed is None else np.asarray(x_fixed)
        noise = rng.standard_normal(n) * np.exp(0.25 * x)
        y = 2.0 * x**3 + x * noise
        return y, x[:, None], None
    if design == "d1_biv":
        x = (
            sample_truncnorm_bivariate(rng, n, rho_x)
            if x_fixed is None
            else np.asarray(x_fixed)
        )
        x1, x2 = x[:, 0], x[:, 1]
        s = x1 + x2
        sig1 = np.exp(0.125 * s)
        sig2 = 0.5 * np.abs(s)
        r = x1 * x2
        z1 = rng.standard_normal(n)
        z2 = rng.standard_normal(n)
        e1 = sig1 * z1
        e2 = sig2 * (r * z1 + np.sqrt(np.maximum(1.0 - r**2, 0.0)) * z2)
        f1 = 1.5 * (x1**2 + x2**2)
        f2 = np.exp(x1) + np.exp(x2)
        y = x1 * (f1 + e1) + x2 * (f2 + e2)
        return y, x, None
    if design == "d2_uni":
        x = sample_truncnorm(rng, n) if x_fixed is None else np.asarray(x_fixed)
        beta = 0.835 + 0.835 * rng.standard_normal(n)
        return x * beta, x[:, None], None
    if design == "d2_biv":
        x = (
            sample_truncnorm_bivariate(rng, n, rho_x)
            if x_fixed is None
            else np.asarray(x_fixed)
        )
        b1 = 0.835 + 0.835 * rng.standard_normal(n)
        b2 = 2.291 + 2.291 * rng.standard_normal(n)
        return x[:, 0] * b1 + x[:, 1] * b2, x, None
    if design == "d3_iv":
        if x_fixed is not None:
            raise ShapeError("d3_iv regressors are endogenous; fixed-x unsupported")
        z = sample_truncnorm(rng, n)
        cov = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.4], [0.0, 0.4, 1.0]])
        chol = np.linalg.cholesky(cov)
        latent = np.array([0.0, 1.0, 1.0]) + rng.standard_normal((n, 3)) @ chol.T
        eta, beta, zeta = latent.T
        x = 1.5 * z + zeta
        y = x * beta + 0.25 * eta
        return y, x[:, None], z[:, None]
    raise ShapeError(f"unknown design {design!r}; expected one of {DESIGNS}")


def default_k_grid(design: str) -> list[int]:
    # the bivariate sieve has roughly four times the columns per K, so its
    # candidate grid stops earlier
    return [1, 2, 3, 4, 5] if design in ("d1_biv", "d2_biv") else [1, 2, 3, 4, 5, 6]


def _one_rep(args) -> dict:
    (design, n, rho_x, seed, rep, k, k_grid, folds, grid, x_fixed) = args
    rng = np.random.default_rng([seed, rep])
    try:
        y, x, z = generate_data(design, n, rng, rho_x, x_fixed=x_fixed)
        # The sieve fit sees (y, x) only; the instrument feeds the control
        # function comparator. Bounded designs use the known support so the
        # evaluation grid is always inside the basis domain.
        domain = None if design == "d3_iv" else (-1.0, 1.0)
        if k is None:
            report = cross_validate(
                y,
                x,
                k_grid=k_grid,
                domain=domain,
                folds=folds,
                seed=[seed, rep, 1],
            )
            chosen_k = report.chosen_k
        else:
            chosen_k = k
        d = build_design(y, x, k=chosen_k, domain=domain)
        fit = profile_fit(d)
        p = x.shape[1]
        fe = evaluate_b(fit, d.bases, [grid] * p)
        record = {
            "rep": rep,
            "ok": True,
            "k": chosen_k,
            "delta": fit.delta_hat,
            "se": fit.se_delta,
            "b_hat": np.stack([fe.aggregate[j] for j in range(p)]),
        }
        ols = fit_ols(y, x)
        record["ols"] = ols.coef
        if z is not None:
            cf = fit_control_function(y, x, z)
            record["cf"] = cf.coef[: 1 + p]
        return record
    except CrcsieveError as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class StudyResult:
    """Stacked per-replication estimates plus the truths to judge them by."""

    design: str
    n: int
    reps: int
    seed: int
    rho_x: float
    labels: list[str]
    delta_true: np.ndarray
    grid: np.ndarray
    b_true: np.ndarray  # (p, len(grid))
    snp: np.ndarray  # (R_ok, d)
    snp_se: np.ndarray
    chosen_k: np.ndarray
    ols: np.ndarray
    cf: np.ndarray | None
    ase: np.ndarray  # (R_ok, p) grid-average squared error per slope function
    dropped: list

    @property
    def p(self) -> int:
        return self.b_true.shape[0]

    def mase(self) -> np.ndarray:
        return self.ase.mean(axis=0)

    def studentized(self, j: int) -> np.ndarray:
        return (self.snp[:, j] - self.delta_true[j]) / self.snp_se[:, j]

    def estimator_tables(self) -> dict[str, np.ndarray]:
        tables = {"snp": self.snp, "ols": self.ols}
        if self.cf is not None:
            tables["cf"] = self.cf
        return tables

    def summary_rows(self) -> list[dict]:
        """One row per (estimator, parameter): truth, bias, SE, RMSE."""
        rows = []
        for name, est in self.estimator_tables().items():
            for j in range(est.shape[1]):
                truth = self.delta_true[j]
                err = est[:, j] - truth
                rows.append(
                    {
                        "estimator": name,
                        "parameter": self.labels[j],
                        "truth": truth,
                        "bias": float(err.mean()),
                        "se": float(est[:, j].std(ddof=0)),
                        "rmse": float(np.sqrt(np.mean(err**2))),
                    }
                )
        for j in range(self.p):
            rows.append(
                {
                    "estimator": "snp",
                    "parameter": f"mase_b{j + 1}",
                    "truth": 0.0,
                    "bias": float("nan"),
                    "se": float("nan"),
                    "rmse": float(self.mase()[j]),
                }
            )
        return rows


def run_study(
    design: str,
    n: int,
    reps: int,
    *,
    seed: int = 0,
    rho_x: float = 0.0,
    k: int | None = None,
    k_grid=None,
    folds: int = 10,
    jobs: int = 1,
    fixed_x: bool = False,
    grid: np.ndarray = DEFAULT_GRID,
    max_failures: float = 0.02,
) -> StudyResult:
    """Replication study: fresh data, CV-selected (or fixed) K, all estimators.

    Per-replication failures are collected rather than fatal; the study
    aborts with ReplicationError when more than `max_failures` of the
    replications fail. Results are independent of `jobs`.
    """
    if design not in DESIGNS:
        raise ShapeError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if reps < 1:
        raise ShapeError(f"need reps >= 1, got {reps}")
    if n < 50:
        raise ShapeError(f"study sample size must be >= 50, got {n}")
    truth = make_truth(design, rho_x)
    if k_grid is None:
        k_grid = default_k_grid(design)
    x_fixed = None
    if fixed_x:
        if design == "d3_iv":
            raise ShapeError("d3_iv regressors are endogenous; fixed-x unsupported")
        x_fixed = generate_data(design, n, np.random.default_rng([seed]), rho_x)[1]
        if x_fixed.shape[1] == 1:
            x_fixed = x_fixed[:, 0]
    grid = np.asarray(grid, dtype=float)
    arglist = [
        (design, n, rho_x, seed, rep, k, list(k_grid), folds, grid, x_fixed)
        for rep in range(reps)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_one_rep, arglist, chunksize=16))
    else:
        records = [_one_rep(a) for a in arglist]
    records.sort(key=lambda r: r["rep"])

    dropped = [(r["rep"], r["error"]) for r in records if not r["ok"]]
    if len(dropped) > max_failures * reps:
        raise ReplicationError(
            f"{len(dropped)} of {reps} replications failed; first: {dropped[0][1]}"
        )
    ok = [r for r in records if r["ok"]]
    p = len(truth.b_true)
    b_true = np.stack([np.asarray(truth.b_true[j](grid)) for j in range(p)])
    b_hat = np.stack([r["b_hat"] for r in ok])  # (R_ok, p, G)
    ase = np.mean((b_hat - b_true[None, :, :]) ** 2, axis=2)
    cf = None
    if truth.has_z:
        cf = np.stack([r["cf"] for r in ok])
    return StudyResult(
        design=design,
        n=n,
        reps=reps,
        seed=seed,
        rho_x=rho_x,
        labels=list(truth.labels),
        delta_true=truth.delta,
        grid=grid,
        b_true=b_true,
        snp=np.stack([r["delta"] for r in ok]),
        snp_se=np.stack([r["se"] for r in ok]),
        chosen_k=np.array([r["k"] for r in ok]),
        ols=np.stack([r["ols"] for r in ok]),
        cf=cf,
        ase=ase,
        dropped=dropped,
    )


def _one_coverage_rep(args) -> dict:
    (design, n, rho_x, seed, rep, k, k_grid, folds, grid,
     n_draws, level, weights) = args
    try:
        rng = np.random.default_rng([seed, 29, rep])
        y, x, _ = generate_data(design, n, rng, rho_x)
        domain = None if design == "d3_iv" else (-1.0, 1.0)
        if k is None:
            report = cross_validate(
                y, x, k_grid=k_grid, domain=domain, folds=folds,
                seed=[seed, 29, rep, 1],
            )
            chosen_k = report.chosen_k
        else:
            chosen_k = k
        d = build_design(y, x, k=chosen_k, domain=domain)
        fit = profile_fit(d, vcov=False)
        band_seed = int(
            np.random.SeedSequence([seed, 29, rep, 2]).generate_state(1)[0]
        )
        bands = wild_bootstrap_bands(
            fit, d, [grid] * x.shape[1], n_draws=n_draws, level=level,
            weights=weights, seed=band_seed,
        )
        p = x.shape[1]
        return {
            "rep": rep,
            "ok": True,
            "k": chosen_k,
            "lower": np.stack([bands.lower[j] for j in range(p)]),
            "upper": np.stack([bands.upper[j] for j in range(p)]),
        }
    except CrcsieveError as exc:
        return {"rep": rep, "ok": False, "error": f"{type(exc).__name__}: {exc}"}


@dataclass
class CoverageResult:
    """Pointwise band coverage of the true heterogeneity functions."""

    design: str
    n: int
    reps: int
    seed: int
    rho_x: float
    level: float
    n_draws: int
    grid: np.ndarray
    b_true: np.ndarray  # (p, G)
    coverage: np.ndarray  # (p, G) share of replications whose band covers truth
    width: np.ndarray  # (p, G) average band width
    chosen_k: np.ndarray
    dropped: list


def band_coverage_study(
    design: str,
    n: int,
    reps: int,
    *,
    seed: int = 0,
    rho_x: float = 0.0,
    k: int | None = None,
    k_grid=None,
    folds: int = 10,
    n_draws: int = 300,
    level: float = 0.95,
    weights: str = "rademacher",
    jobs: int = 1,
    grid: np.ndarray = DEFAULT_GRID,
    max_failures: float = 0.02,
) -> CoverageResult:
    """How often wild-bootstrap bands cover the true functions, pointwise.

    Each replication draws a fresh dataset, selects the basis size (unless
    fixed), fits, and builds level-`level` bands from `n_draws` bootstrap
    refits; the result records, at every grid point, the share of
    replications whose band contains the true aggregate function there.
    """
    if design not in DESIGNS:
        raise ShapeError(f"unknown design {design!r}; expected one of {DESIGNS}")
    if reps < 1:
        raise ShapeError(f"need reps >= 1, got {reps}")
    if n < 50:
        raise ShapeError(f"study sample size must be >= 50, got {n}")
    truth = make_truth(design, rho_x)
    if k_grid is None:
        k_grid = default_k_grid(design)
    grid = np.asarray(grid, dtype=float)
    arglist = [
        (design, n, rho_x, seed, rep, k, list(k_grid), folds, grid,
         n_draws, level, weights)
        for rep in range(reps)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_one_coverage_rep, arglist, chunksize=4))
    else:
        records = [_one_coverage_rep(a) for a in arglist]
    records.sort(key=lambda r: r["rep"])

    dropped = [(r["rep"], r["error"]) for r in records if not r["ok"]]
    if len(dropped) > max_failures * reps:
        raise ReplicationError(
            f"{len(dropped)} of {reps} replications failed; first: {dropped[0][1]}"
        )
    ok = [r for r in records if r["ok"]]
    p = len(truth.b_true)
    b_true = np.stack([np.asarray(truth.b_true[j](grid)) for j in range(p)])
    lower = np.stack([r["lower"] for r in ok])  # (R_ok, p, G)
    upper = np.stack([r["upper"] for r in ok])
    covered = (lower <= b_true[None]) & (b_true[None] <= upper)
    return CoverageResult(
        design=design,
        n=n,
        reps=reps,
        seed=seed,
        rho_x=rho_x,
        level=level,
        n_draws=n_draws,
        grid=grid,
        b_true=b_true,
        coverage=covered.mean(axis=0),
        width=(upper - lower).mean(axis=0),
        chosen_k=np.array([r["k"] for r in ok]),
        dropped=dropped,
    )
