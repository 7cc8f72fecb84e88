"""Univariate sieve bases and the moment constraints that make them identifiable.

The slope heterogeneity in the model is an additive function of the regressors,
one univariate component per (coefficient, regressor) pair. Each component is
approximated on a polynomial or B-spline dictionary, but the raw dictionary is
not identified: the intercept and the parametric slopes already absorb constant
and cross-linear directions. `constrain_basis` removes those directions by
residualizing, in the sample L2 geometry, every dictionary column on the span
of the constraint moment vectors (the ones column and the other regressors),
so that every surviving column has exact zero sample mean and zero sample
cross-moment with each constraint regressor.

Each constrained column is an affine combination of the raw dictionary minus
small multiples of the other regressors: the constant part of the subtraction
folds into `ConstrainedBasis.projection` (acting on [1, raw]) and the
cross-regressor multiples are stored in `ConstrainedBasis.cross_coef`, so the
columns are reusable at new points given the other regressors' values there.
The subtracted cross pieces are linear in the other regressors, directions the
parametric interaction block spans anyway, so the constraints cost nothing
beyond the annihilated linear-in-own-argument direction of off-diagonal
components.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import (
    DegenerateBasisError,
    DomainError,
    EmptyInputError,
    ShapeError,
)

FAMILIES = ("polynomial", "bspline")

# Columns whose residual keeps less than this fraction of their norm after
# constraining are treated as annihilated.
DROP_TOL = 1e-8


@dataclass(frozen=True)
class BasisSpec:
    """Dictionary description for one univariate component.

    Parameters
    ----------
    family : str
        "polynomial" (powers x, x^2, ..., x^K, no constant) or "bspline".
    k : int
        Basis dimension. For B-splines this counts the columns kept after the
        redundant partition-of-unity direction is dropped, so the underlying
        spline space has dimension k + 1.
    domain : tuple of float
        Closed interval on which evaluation is legal. Points outside raise
        DomainError; there is no clamping.
    knots : tuple of float, optional
        Interior knots for the bspline family. Defaults to uniform placement
        on the domain. Must have length k - degree.
    degree : int
        Spline degree (cubic by default). Ignored for polynomials.
    """

    family: str
    k: int
    domain: tuple[float, float]
    knots: tuple[float, ...] | None = None
    degree: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown basis family {self.family!r}")
        if self.k < 1:
            raise ValueError(f"basis order must be >= 1, got {self.k}")
        lo, hi = self.domain
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"domain must be a finite interval, got {self.domain}")
        if self.family == "bspline":
            if self.k < self.degree:
                raise ValueError(
                    f"bspline order k={self.k} needs k >= degree ({self.degree})"
                )
            if self.knots is not None and len(self.knots) != self.k - self.degree:
                raise ShapeError(
                    f"expected {self.k - self.degree} interior knots, "
                    f"got {len(self.knots)}"
                )

    def interior_knots(self) -> np.ndarray:
        lo, hi = self.domain
        if self.knots is not None:
            return np.asarray(self.knots, dtype=float)
        # uniform placement, k - degree interior points
        return np.linspace(lo, hi, self.k - self.degree + 2)[1:-1]


def _check_eval_points(spec: BasisSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    if x.size == 0:
        raise EmptyInputError("no evaluation points")
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite evaluation point")
    lo, hi = spec.domain
    if x.min() < lo or x.max() > hi:
        bad = x[(x < lo) | (x > hi)][0]
        raise DomainError(f"evaluation point {bad} outside domain [{lo}, {hi}]")
    return x


def spline_knot_vector(spec: BasisSpec) -> np.ndarray:
    """Clamped knot vector for the full (k + 1)-dimensional spline space."""
    lo, hi = spec.domain
    return np.concatenate(
        [np.full(spec.degree + 1, lo), spec.interior_knots(), np.full(spec.degree + 1, hi)]
    )


def build_raw_basis(spec: BasisSpec, x: np.ndarray) -> np.ndarray:
    """Evaluate the raw dictionary at points `x`.

    Returns an (n, k) matrix. Polynomial column j is x**(j+1); there is no
    constant column because the model intercept lives in the parametric block.
    For B-splines the full clamped basis of k + 1 functions is evaluated (its
    rows sum to one) and the first function is dropped, which removes the same
    constant direction.
    """
    x = _check_eval_points(spec, x)
    if spec.family == "polynomial":
        return x[:, None] ** np.arange(1, spec.k + 1)
    t = spline_knot_vector(spec)
    full = BSpline.design_matrix(x, t, spec.degree, extrapolate=False).toarray()
    return full[:, 1:]


@dataclass(frozen=True)
class ConstraintSet:
    """Moment vectors a constrained component must be orthogonal to.

    For the component of coefficient j' as a function of regressor j the
    moment vectors are the ones column and every sample regressor column
    X_m with m != j'. X_{j'} itself is never a constraint: the part of the
    component linear in the own regressor stays identified. When j != j'
    the set contains X_j, which is what annihilates the linear-in-x_j
    direction of off-diagonal components.
    """

    coef_index: int
    arg_index: int
    moments: np.ndarray  # (n, n_constraints), first column is the ones column
    labels: tuple[str, ...]
    regressor_indices: tuple[int, ...] = ()  # regressor index per non-const column

    def __post_init__(self):
        m = self.moments
        if m.ndim != 2 or m.shape[1] != len(self.labels):
            raise ShapeError("constraint moments and labels disagree")
        if not np.allclose(m[:, 0], 1.0):
            raise ShapeError("first constraint column must be the ones column")
        if len(self.regressor_indices) != len(self.labels) - 1:
            raise ShapeError("need one regressor index per non-const constraint")


def build_constraints(x_matrix: np.ndarray, coef_index: int, arg_index: int) -> ConstraintSet:
    """Assemble the constraint set for component (coef_index, arg_index).

    Indices are 0-based. The moment vectors are the ones column plus every
    regressor column except the coefficient's own regressor.
    """
    x_matrix = np.asarray(x_matrix, dtype=float)
    if x_matrix.ndim != 2:
        raise ShapeError("x_matrix must be 2-d")
    n, p = x_matrix.shape
    if n == 0:
        raise EmptyInputError("empty sample")
    if not (0 <= coef_index < p and 0 <= arg_index < p):
        raise ShapeError(f"component ({coef_index}, {arg_index}) out of range for p={p}")
    cols = [np.ones(n)]
    labels = ["const"]
    indices = []
    for m in range(p):
        if m == coef_index:
            continue
        cols.append(x_matrix[:, m])
        labels.append(f"x{m + 1}")
        indices.append(m)
    return ConstraintSet(
        coef_index, arg_index, np.column_stack(cols), tuple(labels), tuple(indices)
    )


@dataclass
class ConstrainedBasis:
    """A dictionary after moment constraints, with its reusable evaluation map.

    `columns` are the constrained sample evaluations (unit sample standard
    deviation each). `projection` maps the augmented raw evaluation
    [1, psi_1(xi), ..., psi_K(xi)] at any point xi to the constrained columns.
    Cross-regressor moment constraints are enforced by subtracting multiples
    of the other regressors themselves; those multiples are recorded in
    `cross_coef` (one row per non-const constraint), so evaluating off-sample
    needs the other regressors' values at the evaluation points whenever
    `cross_coef` is nonempty. The subtracted pieces are linear in X_m, which
    the parametric interaction columns absorb, so no dictionary direction is
    lost to a cross constraint. `n_effective` counts the surviving columns; it
    drops below k exactly when constraint vectors annihilate dictionary
    directions (the linear-in-own-argument direction of every off-diagonal
    component).
    """

    spec: BasisSpec | None
    constraints: ConstraintSet
    columns: np.ndarray  # (n, n_effective)
    projection: np.ndarray  # (k + 1, n_effective), acts on [1, raw]
    n_effective: int
    kept: tuple[int, ...]  # raw column indices that survived
    moment_violation: float = field(default=0.0)
    cross_coef: np.ndarray | None = None  # (n_constraints - 1, n_effective)

    @property
    def needs_cross(self) -> bool:
        return self.cross_coef is not None and self.cross_coef.shape[0] > 0

    def evaluate(self, xi: np.ndarray, cross: np.ndarray | None = None) -> np.ndarray:
        """Constrained basis at new points; needs a spec-backed basis.

        `cross` supplies the values of the constraint regressors (one column
        per non-const constraint, in `constraints.regressor_indices` order)
        at the evaluation points; required whenever the basis carries
        cross-regressor corrections.
        """
        if self.spec is None:
            raise ValueError("basis was built from a bare matrix; cannot evaluate off-sample")
        xi = np.asarray(xi, dtype=float).ravel()
        raw = build_raw_basis(self.spec, xi)
        aug = np.column_stack([np.ones(xi.size), raw])
        vals = aug @ self.projection
        if self.needs_cross:
            if cross is None:
                raise ShapeError(
                    "basis has cross-regressor corrections; pass the constraint "
                    "regressors' values via `cross`"
                )
            cross = np.asarray(cross, dtype=float)
            if cross.ndim == 1:
                cross = cross[:, None]
            if cross.shape != (xi.size, self.cross_coef.shape[0]):
                raise ShapeError(
                    f"cross values must be {(xi.size, self.cross_coef.shape[0])}, "
                    f"got {cross.shape}"
                )
            vals = vals - cross @ self.cross_coef
        return vals


def constrain_basis(
    raw: np.ndarray,
    constraints: ConstraintSet,
    *,
    spec: BasisSpec | None = None,
    drop_tol: float = DROP_TOL,
    on_empty: str = "error",
) -> ConstrainedBasis:
    """Project raw dictionary columns onto the constraint-satisfying subspace.

    Every raw column is first rescaled to unit sample standard deviation
    (conditioning), then residualized directly on the moment vectors, which
    zeroes every constrained sample moment at once. Surviving columns are
    rescaled to unit standard deviation again, which makes the operation
    exactly idempotent. Columns
    whose residual norm falls below `drop_tol` times the original norm are
    treated as annihilated and dropped, as are columns that become numerically
    dependent on earlier survivors.

    Parameters
    ----------
    raw : ndarray
        (n, k) dictionary evaluations on the sample.
    constraints : ConstraintSet
        Output of `build_constraints` on the same sample.
    spec : BasisSpec, optional
        When given, the result can be evaluated at new points.
    on_empty : str
        "error" raises DegenerateBasisError when every column is annihilated;
        "allow" returns an empty basis instead. Off-diagonal components with
        k = 1 legitimately collapse, so the design builder passes "allow"
        for those.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ShapeError("raw basis must be 2-d")
    n, k = raw.shape
    if n == 0 or k == 0:
        raise EmptyInputError("empty raw basis")
    C = constraints.moments
    if C.shape[0] != n:
        raise ShapeError(
            f"constraints built on {C.shape[0]} rows, raw basis has {n}"
        )
    if n <= k + C.shape[1]:
        raise ShapeError(
            f"need n > k + #constraints = {k + C.shape[1]} rows, got {n}"
        )
    if on_empty not in ("error", "allow"):
        raise ValueError(f"on_empty must be 'error' or 'allow', got {on_empty!r}")

    sd = raw.std(axis=0)
    scale = 1.0 / np.where(sd > 1e-12, sd, 1.0)
    r_s = raw * scale

    # Residualize each raw column directly on the moment vectors themselves
    # (least-squares projection onto their orthogonal complement in sample).
    # The subtracted piece is const + linear-in-X_m, so evaluating off-sample
    # stays exact: the constant folds into the [1, raw] projection and the
    # X_m multiples are recorded in cross_coef. One refinement pass pushes
    # the residual orthogonality to machine precision.
    theta, *_ = np.linalg.lstsq(C, r_s, rcond=None)
    resid = r_s - C @ theta
    theta_fix, *_ = np.linalg.lstsq(C, resid, rcond=None)
    theta = theta + theta_fix
    resid = r_s - C @ theta

    # Coefficients of the residualized columns on the unscaled augmented basis
    # [1, raw]: the constant constraint column is aug's first column.
    coefs = np.zeros((k + 1, k))
    coefs[0, :] = -theta[0, :]
    coefs[1:, :] = np.diag(scale)

    orig_norm = np.linalg.norm(r_s, axis=0)
    res_norm = np.linalg.norm(resid, axis=0)
    kept: list[int] = []
    q_basis: list[np.ndarray] = []
    for j in range(k):
        if res_norm[j] < drop_tol * max(orig_norm[j], 1e-300):
            continue
        v = resid[:, j].copy()
        for q in q_basis:
            v -= (q @ v) * q
        if np.linalg.norm(v) < drop_tol * orig_norm[j]:
            continue  # numerically dependent on earlier survivors
        q_basis.append(v / np.linalg.norm(v))
        kept.append(j)

    n_cross = C.shape[1] - 1
    if not kept:
        if on_empty == "error":
            raise DegenerateBasisError(
                "all basis columns annihilated by the moment constraints"
            )
        return ConstrainedBasis(
            spec,
            constraints,
            np.empty((n, 0)),
            np.empty((k + 1, 0)),
            0,
            (),
            cross_coef=np.empty((n_cross, 0)),
        )

    cols = resid[:, kept]
    out_sd = cols.std(axis=0)
    cols = cols / out_sd
    proj = coefs[:, kept] / out_sd
    cross = theta[1:, kept] / out_sd

    viol = float(np.max(np.abs(C.T @ cols) / (
        np.linalg.norm(C, axis=0)[:, None] * np.linalg.norm(cols, axis=0)[None, :]
    )))
    return ConstrainedBasis(
        spec, constraints, cols, proj, len(kept), tuple(kept), viol, cross_coef=cross
    )


@dataclass(frozen=True)
class BlockInfo:
    coef_index: int
    arg_index: int
    start: int
    stop: int

    @property
    def label(self) -> str:
        return f"b[{self.coef_index + 1},{self.arg_index + 1}]"


@dataclass(frozen=True)
class SieveBlock:
    """Stacked sieve regressors X_{j'} * psi_tilde_{j'j}(X_j) with layout."""

    matrix: np.ndarray
    layout: tuple[BlockInfo, ...]

    @property
    def width(self) -> int:
        return self.matrix.shape[1]

    def block(self, coef_index: int, arg_index: int) -> np.ndarray:
        for info in self.layout:
            if info.coef_index == coef_index and info.arg_index == arg_index:
                return self.matrix[:, info.start:info.stop]
        raise KeyError((coef_index, arg_index))


def assemble_sieve_block(
    x_matrix: np.ndarray,
    bases: dict[tuple[int, int], ConstrainedBasis],
) -> SieveBlock:
    """Stack the varying-coefficient regressors in canonical block order.

    Block (j', j) holds X_{j'} elementwise-times the constrained columns of
    component (j', j). Blocks are ordered with the argument index j outermost,
    so for p = 2 the order is (1,1), (2,1), (1,2), (2,2).
    """
    x_matrix = np.asarray(x_matrix, dtype=float)
    if x_matrix.ndim != 2:
        raise ShapeError("x_matrix must be 2-d")
    n, p = x_matrix.shape
    pieces = []
    layout = []
    start = 0
    for arg in range(p):
        for coef in range(p):
            basis = bases.get((coef, arg))
            if basis is None:
                continue
            if basis.columns.shape[0] != n:
                raise ShapeError(
                    f"basis ({coef}, {arg}) built on {basis.columns.shape[0]} rows, "
                    f"x has {n}"
                )
            block = x_matrix[:, [coef]] * basis.columns
            pieces.append(block)
            stop = start + block.shape[1]
            layout.append(BlockInfo(coef, arg, start, stop))
            start = stop
    matrix = np.column_stack(pieces) if pieces else np.empty((n, 0))
    return SieveBlock(matrix, tuple(layout))
