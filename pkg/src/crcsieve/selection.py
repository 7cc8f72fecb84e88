"""Basis-size selection by cross-validation and wild-bootstrap bands.

Cross-validation scores each candidate basis size K by the out-of-fold mean
squared prediction error of the full reduced-form fit, rebuilding the
constrained bases on every training fold. Basis domains are fixed from the
full sample before splitting so held-out points always evaluate in-domain.

The wild bootstrap resamples Y* = fitted + w * residual with mean-zero unit
weights and refits on the fixed design (same K, same bases: the regressors
do not change). Bands are studentized: at each grid point the half-width is
a bootstrap quantile of the absolute studentized refits times the robust
standard error of the function estimate there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .design import DesignMatrices, build_control_design, default_specs
from .errors import (
    BootstrapInstabilityError,
    CrcsieveError,
    SelectionError,
    ShapeError,
)
from .estimator import (
    GINV_TOL,
    FitResult,
    _cross_values,
    _sym_pinv,
    evaluate_b,
    predict,
    profile_fit,
)


@dataclass
class CvReport:
    """Out-of-fold prediction error per candidate basis size."""

    k_grid: list[int]
    scores: np.ndarray  # mean squared out-of-fold error; NaN where the fit failed
    chosen_k: int
    folds: int
    n_obs: int
    failures: dict[int, str]


def _fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cross_validate(
    y: np.ndarray,
    x_matrix: np.ndarray,
    *,
    z_matrix: np.ndarray | None = None,
    k_grid,
    family: str = "polynomial",
    domain=None,
    folds: int = 10,
    seed: int = 0,
    drop_tol: float = 1e-8,
) -> CvReport:
    """Score each K by K-fold out-of-fold MSE and pick the best.

    Ties go to the smaller K. A candidate whose fit fails on any fold (basis
    fully annihilated, unidentified block, too few rows) is recorded in
    `failures` and skipped; if every candidate fails, SelectionError.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = np.asarray(x_matrix, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = y.shape[0]
    if x.shape[0] != n:
        raise ShapeError(f"y has {n} rows, x has {x.shape[0]}")
    z = None
    if z_matrix is not None:
        z = np.asarray(z_matrix, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != n:
            raise ShapeError(f"z has {z.shape[0]} rows, y has {n}")
    k_grid = sorted({int(k) for k in np.atleast_1d(k_grid)})
    if not k_grid:
        raise SelectionError("empty basis-size grid")
    if not 2 <= folds <= n:
        raise ShapeError(f"folds must be between 2 and n={n}, got {folds}")

    # freeze evaluation domains from the full sample
    domains = [s.domain for s in default_specs(x, family, k_grid[0], domain=domain)]

    fold_idx = _fold_indices(n, folds, seed)
    scores = np.full(len(k_grid), np.nan)
    failures: dict[int, str] = {}
    for ki, k in enumerate(k_grid):
        sq_errors = np.empty(n)
        try:
            specs = default_specs(x, family, k, domain=domains)
            for test in fold_idx:
                mask = np.ones(n, dtype=bool)
                mask[test] = False
                d_train = build_control_design(
                    y[mask],
                    x[mask],
                    z[mask] if z is not None else None,
                    specs,
                    drop_tol=drop_tol,
                )
                fit = profile_fit(d_train, vcov=False)
                pred = predict(
                    fit, d_train, x[test], z[test] if z is not None else None
                )
                sq_errors[test] = (y[test] - pred) ** 2
        except CrcsieveError as exc:
            failures[k] = f"{type(exc).__name__}: {exc}"
            continue
        scores[ki] = sq_errors.mean()

    if not np.any(np.isfinite(scores)):
        raise SelectionError(
            "every candidate basis size failed cross-validation: "
            + "; ".join(f"K={k} ({msg})" for k, msg in failures.items())
        )
    finite = np.where(np.isfinite(scores), scores, np.inf)
    chosen = k_grid[int(np.argmin(finite))]  # argmin takes the first, so the
    # ascending grid order resolves ties toward the smaller K
    return CvReport(k_grid, scores, chosen, folds, n, failures)


def cv_select_k(y, x_matrix, **kwargs) -> int:
    """Convenience wrapper returning only the selected basis size."""
    return cross_validate(y, x_matrix, **kwargs).chosen_k


WEIGHT_LAWS = ("rademacher", "mammen")

_GOLDEN = (np.sqrt(5.0) + 1.0) / 2.0


def bootstrap_weights(law: str, n: int, rng: np.random.Generator) -> np.ndarray:
    """Mean-zero, unit-variance multiplier draws for the wild bootstrap."""
    if law == "rademacher":
        return rng.integers(0, 2, size=n) * 2.0 - 1.0
    if law == "mammen":
        # two-point law with third moment one
        prob_low = _GOLDEN / np.sqrt(5.0)
        low, high = 1.0 - _GOLDEN, _GOLDEN
        return np.where(rng.random(n) < prob_low, low, high)
    raise ValueError(f"unknown weight law {law!r}; use one of {WEIGHT_LAWS}")


@dataclass
class BootstrapBands:
    """Pointwise wild-bootstrap bands for the heterogeneity functions."""

    grid: list[np.ndarray]
    level: float
    aggregate: dict[int, np.ndarray]
    lower: dict[int, np.ndarray]
    upper: dict[int, np.ndarray]
    component: dict[tuple[int, int], np.ndarray]
    component_lower: dict[tuple[int, int], np.ndarray]
    component_upper: dict[tuple[int, int], np.ndarray]
    n_draws: int
    n_dropped: int
    weights: str


def wild_bootstrap_bands(
    fit: FitResult,
    design: DesignMatrices,
    grid,
    *,
    n_draws: int = 500,
    level: float = 0.90,
    weights: str = "rademacher",
    seed: int = 0,
) -> BootstrapBands:
    """Pointwise studentized wild-bootstrap bands for the heterogeneity
    functions.

    Each draw perturbs the fitted values with weighted residuals and refits
    on the unchanged design, so the constraint geometry is identical across
    draws. The band at a grid point is symmetric around the point estimate
    with half-width q * se, where se is the heteroskedasticity-robust
    standard error of the estimated function value there and q is a
    conservative bootstrap quantile of the absolute studentized refits;
    studentizing keeps the band calibrated where the function is weakly
    identified (small |x| carries little information about b(x)). Draw b
    uses its own spawn of the seed, which makes the result independent of
    any batching of the loop. More than 5% unusable refits aborts with
    BootstrapInstabilityError.
    """
    if not 0.0 < level < 1.0:
        raise ShapeError(f"level must be in (0, 1), got {level}")
    if n_draws < 2:
        raise ShapeError("need at least two bootstrap draws")
    if weights not in WEIGHT_LAWS:
        raise ValueError(f"unknown weight law {weights!r}; use one of {WEIGHT_LAWS}")

    point = evaluate_b(fit, design.bases, grid)
    arrs = point.grid
    n_g = arrs[0].size
    p = design.p
    n = design.n

    # grid operators: per component, values = op @ pi_block
    ops = []
    start = 0
    for arg in range(p):
        for coef in range(p):
            basis = design.bases.get((coef, arg))
            if basis is None or basis.n_effective == 0:
                continue
            stop = start + basis.n_effective
            vals = basis.evaluate(arrs[arg], cross=_cross_values(basis, arrs))
            ops.append(((coef, arg), start, stop, vals))
            start = stop

    zeros = np.zeros(n_g)
    comp_lower = {(c, a): zeros.copy() for a in range(p) for c in range(p)}
    comp_upper = {(c, a): zeros.copy() for a in range(p) for c in range(p)}
    if not ops:  # every component annihilated: degenerate zero bands
        return BootstrapBands(
            grid=arrs,
            level=level,
            aggregate=point.aggregate,
            lower={j: zeros.copy() for j in range(p)},
            upper={j: zeros.copy() for j in range(p)},
            component=point.values,
            component_lower=comp_lower,
            component_upper=comp_upper,
            n_draws=n_draws,
            n_dropped=0,
            weights=weights,
        )

    # One least-squares refit is a fixed linear map of the response, so the
    # refitted function values on the grid are T @ y*; everything downstream
    # is matrix algebra over batches of draws.
    big_g = np.column_stack([design.parametric(), design.nonparametric()])
    d_par = design.parametric().shape[1]
    a_map = _sym_pinv(big_g.T @ big_g, GINV_TOL)[0] @ big_g.T
    targets = []  # (kind, key-or-coef, T, center)
    agg_t = {j: np.zeros((n_g, n)) for j in range(p)}
    for key, lo, hi, op in ops:
        t_mat = op @ a_map[d_par + lo : d_par + hi, :]
        targets.append(("component", key, t_mat, t_mat @ design.y))
        agg_t[key[0]] += t_mat
    for j in range(p):
        targets.append(("aggregate", j, agg_t[j], agg_t[j] @ design.y))

    se0 = [np.sqrt((t_mat**2) @ fit.residuals**2) for _, _, t_mat, _ in targets]
    tabs = [np.empty((n_draws, n_g)) for _ in targets]
    finite = np.empty(n_draws, dtype=bool)

    block = max(1, min(n_draws, int(2e7 // max(n, 1))))
    w_block = np.empty((n, block))
    for b0 in range(0, n_draws, block):
        b1 = min(b0 + block, n_draws)
        wm = w_block[:, : b1 - b0]
        for b in range(b0, b1):
            wm[:, b - b0] = bootstrap_weights(
                weights, n, np.random.default_rng([seed, b])
            )
        y_star = fit.fitted[:, None] + wm * fit.residuals[:, None]
        theta = a_map @ y_star
        resid2 = (y_star - big_g @ theta) ** 2
        finite[b0:b1] = np.isfinite(theta).all(axis=0)
        for i, (_, _, t_mat, center) in enumerate(targets):
            b_star = t_mat @ y_star
            se_star = np.sqrt((t_mat**2) @ resid2)
            tabs[i][b0:b1] = (
                np.abs(b_star - center[:, None]) / np.maximum(se_star, 1e-300)
            ).T

    n_kept = int(finite.sum())
    dropped = n_draws - n_kept
    if dropped > 0.05 * n_draws or n_kept < 2:
        raise BootstrapInstabilityError(
            f"{dropped} of {n_draws} bootstrap refits failed"
        )

    lower = {}
    upper = {}
    for i, (kind, key, _, _) in enumerate(targets):
        q = np.quantile(tabs[i][finite], level, axis=0, method="higher")
        half = q * se0[i]
        if kind == "component":
            center = point.values[key]
            comp_lower[key] = center - half
            comp_upper[key] = center + half
        else:
            center = point.aggregate[key]
            lower[key] = center - half
            upper[key] = center + half

    return BootstrapBands(
        grid=arrs,
        level=level,
        aggregate=point.aggregate,
        lower=lower,
        upper=upper,
        component=point.values,
        component_lower=comp_lower,
        component_upper=comp_upper,
        n_draws=n_draws,
        n_dropped=dropped,
        weights=weights,
    )
