"""Profile least squares for the varying-coefficient reduced form.

The reduced form is Y = [W, Z] delta + [S, Z-sieve] pi + U. Profiling out the
sieve coefficients with a generalized inverse of the sieve Gram matrix leaves
a small linear system for delta; pi follows by projecting the delta residual
back onto the sieve space. When the sieve block has full rank this reproduces
the corresponding sub-vector of one joint least-squares fit (Frisch-Waugh).

Standard errors come from the heteroskedasticity-robust sandwich built on
W residualized against the sieve space: the influence of delta runs through
the part of [W, Z] the varying coefficients cannot absorb.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import ConstrainedBasis
from .design import DesignMatrices
from .errors import IdentificationError, ShapeError

GINV_TOL = 1e-10


def _sym_pinv(mat: np.ndarray, tol: float) -> tuple[np.ndarray, int, float]:
    """Spectral pseudo-inverse of a symmetric PSD matrix.

    Eigenvalues below tol * lambda_max are zeroed. Returns the pseudo-inverse,
    the retained rank, and lambda_max.
    """
    if mat.shape[0] == 0:
        return mat.copy(), 0, 0.0
    w, v = np.linalg.eigh((mat + mat.T) / 2.0)
    lam_max = float(w[-1]) if w.size else 0.0
    if lam_max <= 0.0:
        return np.zeros_like(mat), 0, lam_max
    keep = w >= tol * lam_max
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    return (v * inv_w) @ v.T, int(keep.sum()), lam_max


class ProfileSolver:
    """Precomputed profile-least-squares maps for one design.

    Construction does all the O(n) work (Gram blocks, pseudo-inverse,
    identification check); `solve` is then linear in a new outcome vector,
    which is what makes wild bootstrap refits on the same design cheap while
    staying numerically identical to a fresh fit.
    """

    def __init__(self, design: DesignMatrices, ginv_tol: float = GINV_TOL):
        wz = design.parametric()
        sb = design.nonparametric()
        n, d_w = wz.shape
        d_s = sb.shape[1]
        if n <= d_w + d_s:
            raise ShapeError(
                f"need n > {d_w + d_s} (parametric + sieve columns), got n={n}"
            )
        self.n = n
        self.wz = wz
        self.sb = sb
        self.ginv_tol = ginv_tol

        p_hat = sb.T @ sb / n
        self.p_inv, self.rank_s, _ = _sym_pinv(p_hat, ginv_tol)
        m_ws = wz.T @ sb / n
        m_ww = wz.T @ wz / n
        a = m_ww - m_ws @ self.p_inv @ m_ws.T
        a = (a + a.T) / 2.0
        w_eig = np.linalg.eigvalsh(a)
        if w_eig[-1] <= 0.0 or w_eig[0] <= ginv_tol * w_eig[-1]:
            raise IdentificationError(
                "profiled parametric block is singular beyond tolerance "
                f"(eigenvalue ratio {w_eig[0] / max(w_eig[-1], 1e-300):.2e})"
            )
        self.a_inv = np.linalg.inv(a)
        self.m_ws = m_ws

    def solve(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """delta and pi for outcome y on the stored design."""
        n = self.n
        m_wy = self.wz.T @ y / n
        m_sy = self.sb.T @ y / n
        delta = self.a_inv @ (m_wy - self.m_ws @ (self.p_inv @ m_sy))
        pi = self.p_inv @ (m_sy - self.m_ws.T @ delta)
        return delta, pi


@dataclass
class SandwichPieces:
    """Ingredients of the robust covariance of delta."""

    w_tilde: np.ndarray  # [W, Z] residualized on the sieve space
    phi_hat: np.ndarray
    omega_hat: np.ndarray
    vcov: np.ndarray


@dataclass
class FitResult:
    """Profile least-squares fit of the reduced form."""

    delta_hat: np.ndarray
    pi_hat: np.ndarray
    k: int
    residuals: np.ndarray
    fitted: np.ndarray
    sigma2_hat: np.ndarray  # squared residuals, the conditional-variance proxy
    rank_s: int
    labels: list[str]
    vcov_delta: np.ndarray | None = None
    se_delta: np.ndarray | None = None
    n_obs: int = 0
    cv_report: object = None

    def coefficient_table(self) -> list[tuple[str, float, float]]:
        ses = self.se_delta if self.se_delta is not None else [float("nan")] * len(self.delta_hat)
        return [
            (lbl, float(est), float(se))
            for lbl, est, se in zip(self.labels, self.delta_hat, ses)
        ]


def sandwich_vcov(
    fit: FitResult,
    design: DesignMatrices,
    *,
    ginv_tol: float = GINV_TOL,
    dof_correction: bool = False,
    solver: ProfileSolver | None = None,
) -> SandwichPieces:
    """Heteroskedasticity-robust covariance of delta_hat.

    W (and Z) are residualized on the sieve space; Phi is the Gram of the
    residualized block, Omega weights it by squared fit residuals. No
    degrees-of-freedom correction by default; `dof_correction` rescales
    Omega by n / (n - dim(delta) - rank_s).
    """
    if solver is None:
        solver = ProfileSolver(design, ginv_tol)
    wz = solver.wz
    sb = solver.sb
    n = solver.n
    w_v = sb @ (solver.p_inv @ (sb.T @ wz / n))
    w_tilde = wz - w_v
    phi = w_tilde.T @ w_tilde / n
    u2 = fit.residuals**2
    omega = (w_tilde * u2[:, None]).T @ w_tilde / n
    if dof_correction:
        dof = n - wz.shape[1] - solver.rank_s
        if dof <= 0:
            raise ShapeError("no residual degrees of freedom for correction")
        omega = omega * (n / dof)
    w_eig = np.linalg.eigvalsh((phi + phi.T) / 2.0)
    if w_eig[-1] <= 0.0 or w_eig[0] <= ginv_tol * w_eig[-1]:
        raise IdentificationError("residualized parametric Gram is singular")
    phi_inv = np.linalg.inv(phi)
    vcov = phi_inv @ omega @ phi_inv / n
    vcov = (vcov + vcov.T) / 2.0
    return SandwichPieces(w_tilde, phi, omega, vcov)


def profile_fit(
    design: DesignMatrices,
    *,
    ginv_tol: float = GINV_TOL,
    vcov: bool = True,
    dof_correction: bool = False,
    solver: ProfileSolver | None = None,
) -> FitResult:
    """Fit the reduced form by profile least squares.

    Returns delta (intercept, slopes, interaction coefficients, control
    coefficients), the sieve coefficients pi, residuals, and by default the
    sandwich covariance of delta.
    """
    if solver is None:
        solver = ProfileSolver(design, ginv_tol)
    y = design.y
    delta, pi = solver.solve(y)
    fitted = solver.wz @ delta + solver.sb @ pi
    resid = y - fitted
    k = design.specs[0].k if design.specs else 0
    fit = FitResult(
        delta_hat=delta,
        pi_hat=pi,
        k=k,
        residuals=resid,
        fitted=fitted,
        sigma2_hat=resid**2,
        rank_s=solver.rank_s,
        labels=design.parametric_labels(),
        n_obs=solver.n,
    )
    if vcov:
        pieces = sandwich_vcov(
            fit, design, ginv_tol=ginv_tol, dof_correction=dof_correction,
            solver=solver,
        )
        fit.vcov_delta = pieces.vcov
        fit.se_delta = np.sqrt(np.diag(pieces.vcov))
    return fit


@dataclass
class FunctionEstimate:
    """Estimated slope-heterogeneity components on a grid.

    `grid` holds one array of evaluation points per regressor, all the same
    length; entry g of the aggregate for coefficient j' is the additive sum
    of the components evaluated at (grid_1[g], ..., grid_p[g]).
    """

    grid: list[np.ndarray]
    values: dict[tuple[int, int], np.ndarray]
    aggregate: dict[int, np.ndarray]
    lower: dict[int, np.ndarray] | None = None
    upper: dict[int, np.ndarray] | None = None
    level: float | None = None

    def component_label(self, coef: int, arg: int) -> str:
        return f"b[{coef + 1},{arg + 1}]"


def _normalize_grid(grid, p: int) -> list[np.ndarray]:
    if isinstance(grid, (list, tuple)):
        arrs = [np.asarray(g, dtype=float).ravel() for g in grid]
    else:
        arrs = [np.asarray(grid, dtype=float).ravel()] * p
    if len(arrs) != p:
        raise ShapeError(f"need one grid per regressor, got {len(arrs)} for p={p}")
    sizes = {a.size for a in arrs}
    if len(sizes) != 1:
        raise ShapeError("per-regressor grids must share a length")
    if arrs[0].size == 0:
        raise ShapeError("empty evaluation grid")
    return arrs


def evaluate_b(
    fit: FitResult,
    bases: dict[tuple[int, int], ConstrainedBasis],
    grid,
) -> FunctionEstimate:
    """Evaluate the fitted heterogeneity components and their aggregates.

    `bases` is the design's component dictionary; pi blocks are matched to it
    in the canonical argument-major order used by the sieve assembly.
    """
    p = max(max(c, a) for c, a in bases.keys()) + 1
    arrs = _normalize_grid(grid, p)
    n_g = arrs[0].size
    values: dict[tuple[int, int], np.ndarray] = {}
    aggregate = {coef: np.zeros(n_g) for coef in range(p)}
    start = 0
    for arg in range(p):
        for coef in range(p):
            basis = bases.get((coef, arg))
            if basis is None or basis.n_effective == 0:
                values[(coef, arg)] = np.zeros(n_g)
                continue
            stop = start + basis.n_effective
            block = fit.pi_hat[start:stop]
            vals = basis.evaluate(arrs[arg], cross=_cross_values(basis, arrs)) @ block
            values[(coef, arg)] = vals
            aggregate[coef] += vals
            start = stop
    return FunctionEstimate(arrs, values, aggregate)


def _cross_values(basis: ConstrainedBasis, arrs: list[np.ndarray]) -> np.ndarray | None:
    """Constraint regressors' values at the evaluation points, or None."""
    if not basis.needs_cross:
        return None
    idx = basis.constraints.regressor_indices
    return np.column_stack([arrs[m] for m in idx])


def predict(
    fit: FitResult,
    design: DesignMatrices,
    x_new: np.ndarray,
    z_new: np.ndarray | None = None,
) -> np.ndarray:
    """Fitted conditional mean at new regressor values.

    Bases and coefficient layout come from the estimation design; new points
    must lie inside the basis domains.
    """
    from .design import build_w  # local import to avoid a cycle at module load

    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim == 1:
        x_new = x_new[:, None]
    if x_new.shape[1] != design.p:
        raise ShapeError(f"x_new has {x_new.shape[1]} columns, design has {design.p}")
    w_new, _ = build_w(x_new)
    parts = [w_new]
    if design.z is not None:
        if z_new is None:
            raise ShapeError("design has controls; z_new is required")
        z_new = np.asarray(z_new, dtype=float)
        if z_new.ndim == 1:
            z_new = z_new[:, None]
        parts.append(z_new)
    para = np.column_stack(parts)
    yhat = para @ fit.delta_hat

    x_cols = [x_new[:, j] for j in range(design.p)]
    cols = []
    for arg in range(design.p):
        for coef in range(design.p):
            basis = design.bases.get((coef, arg))
            if basis is None or basis.n_effective == 0:
                continue
            vals = basis.evaluate(x_new[:, arg], cross=_cross_values(basis, x_cols))
            cols.append(x_new[:, [coef]] * vals)
    if design.z_sieve is not None and design.c_bases:
        for arg in range(design.p):
            cb = design.c_bases[(0, arg)]
            for qi in range(design.z.shape[1]):
                cols.append(z_new[:, [qi]] * cb.evaluate(x_new[:, arg]))
    if cols:
        s_new = np.column_stack(cols)
        yhat = yhat + s_new @ fit.pi_hat
    return yhat
