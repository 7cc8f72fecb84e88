"""Benchmark estimators: plain OLS and the instrument-based control function.

Both report HC0 standard errors. The control function targets the random
slope setting: stage one regresses each regressor on the instruments, stage
two adds the first-stage residuals and their interactions with the
regressors. When slopes covary with the first-stage error, the interaction
coefficient picks that covariance up and the slope coefficient stays
consistent, which is exactly what the instrument-free estimator is being
compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    CollinearityError,
    DataError,
    ShapeError,
    WeakInstrumentError,
)


@dataclass
class OlsResult:
    coef: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    fitted: np.ndarray
    labels: list[str]


@dataclass
class ControlFunctionResult:
    coef: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    labels: list[str]
    first_stage_r2: np.ndarray
    v_hat: np.ndarray


def _design_matrix(x, name) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"{name} must be a nonempty 1-d or 2-d array")
    if not np.all(np.isfinite(x)):
        raise DataError(f"non-finite values in {name}")
    return x


def _ols_core(xmat: np.ndarray, y: np.ndarray, labels) -> OlsResult:
    n = xmat.shape[0]
    gram = xmat.T @ xmat
    w_eig = np.linalg.eigvalsh((gram + gram.T) / 2.0)
    if w_eig[-1] <= 0.0 or w_eig[0] <= 1e-12 * w_eig[-1]:
        raise CollinearityError("regressor matrix is rank deficient")
    gram_inv = np.linalg.inv(gram)
    coef = gram_inv @ (xmat.T @ y)
    fitted = xmat @ coef
    resid = y - fitted
    meat = (xmat * resid[:, None] ** 2).T @ xmat
    vcov = gram_inv @ meat @ gram_inv
    vcov = (vcov + vcov.T) / 2.0
    se = np.sqrt(np.diag(vcov))
    return OlsResult(coef, se, vcov, resid, fitted, list(labels))


def fit_ols(y: np.ndarray, x_matrix: np.ndarray) -> OlsResult:
    """OLS of y on [1, X] with HC0 covariance."""
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite values in outcome")
    x = _design_matrix(x_matrix, "x_matrix")
    n, p = x.shape
    if y.shape[0] != n:
        raise ShapeError(f"y has {y.shape[0]} rows, x has {n}")
    if n <= p + 1:
        raise ShapeError(f"need n > {p + 1}, got n={n}")
    xmat = np.column_stack([np.ones(n), x])
    labels = ["const"] + [f"x{j + 1}" for j in range(p)]
    return _ols_core(xmat, y, labels)


def fit_control_function(
    y: np.ndarray, x_matrix: np.ndarray, z_matrix: np.ndarray
) -> ControlFunctionResult:
    """Two-stage control function for random slopes with instruments.

    Stage one: X_j on [1, Z], saving residuals v_j and R-squared. Stage two:
    OLS of y on [1, X, v, X_j * v_j] with HC0 covariance. Raises
    WeakInstrumentError when a first stage explains nothing (zero fitted
    variation) or everything (residuals numerically zero), since either way
    the control term is unusable.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite values in outcome")
    x = _design_matrix(x_matrix, "x_matrix")
    z = _design_matrix(z_matrix, "z_matrix")
    n, p = x.shape
    if z.shape[0] != n or y.shape[0] != n:
        raise ShapeError("y, x, and z must share their row count")
    if z.shape[1] < p:
        raise ShapeError(
            f"need at least as many instruments as regressors ({z.shape[1]} < {p})"
        )

    zmat = np.column_stack([np.ones(n), z])
    coef_z, *_ = np.linalg.lstsq(zmat, x, rcond=None)
    fitted_x = zmat @ coef_z
    v_hat = x - fitted_x
    r2 = np.empty(p)
    for j in range(p):
        tss = np.sum((x[:, j] - x[:, j].mean()) ** 2)
        ess = np.sum((fitted_x[:, j] - x[:, j].mean()) ** 2)
        scale = max(tss, 1e-300)
        if ess <= 1e-12 * scale:
            raise WeakInstrumentError(
                f"first stage for x{j + 1} has no explanatory power"
            )
        if np.sum(v_hat[:, j] ** 2) <= 1e-12 * scale:
            raise WeakInstrumentError(
                f"first-stage residuals for x{j + 1} are numerically zero"
            )
        r2[j] = ess / tss

    cols = [np.ones(n), x, v_hat]
    labels = (
        ["const"]
        + [f"x{j + 1}" for j in range(p)]
        + [f"v{j + 1}" for j in range(p)]
        + [f"x{j + 1}:v{j + 1}" for j in range(p)]
    )
    xmat = np.column_stack(cols + [x * v_hat])
    ols = _ols_core(xmat, y, labels)
    return ControlFunctionResult(
        ols.coef, ols.se, ols.vcov, ols.residuals, labels, r2, v_hat
    )
