"""Design assembly: parametric block, sieve block, and optional controls.

The reduced form regresses the outcome on a parametric block W containing the
intercept, the regressors, and all pairwise interactions, plus the sieve block
of constrained varying-coefficient regressors. Exogenous controls Z, when
present, join the parametric block and contribute their own sieve rows
Z_q * psi_c(X_j), where the c basis is centered only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisSpec,
    BlockInfo,
    ConstrainedBasis,
    ConstraintSet,
    SieveBlock,
    assemble_sieve_block,
    build_constraints,
    build_raw_basis,
    constrain_basis,
)
from .errors import CollinearityError, DataError, EmptyInputError, ShapeError


def _as_matrix(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 1-d or 2-d")
    if a.shape[0] == 0:
        raise EmptyInputError(f"{name} is empty")
    return a


def _check_rank(block: np.ndarray, labels: list[str], context: str) -> None:
    # incremental QR diagnostic: the first column that adds no new direction
    # names the collinearity
    _, r = np.linalg.qr(block)
    diag = np.abs(np.diag(r))
    norms = np.linalg.norm(block, axis=0)
    bad = np.where(diag <= 1e-10 * np.maximum(norms, 1e-300))[0]
    if bad.size:
        raise CollinearityError(
            f"{context} is rank deficient at column {labels[bad[0]]!r}"
        )


def build_w(x_matrix: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Parametric block [1, X_1..X_p, X_j*X_l for l > j] with labels.

    Raises DataError on non-finite entries and CollinearityError when the
    block is rank deficient (for example a constant regressor column).
    """
    x = _as_matrix(x_matrix, "x_matrix")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite values in regressor matrix")
    n, p = x.shape
    cols = [np.ones(n)]
    labels = ["const"]
    for j in range(p):
        cols.append(x[:, j])
        labels.append(f"x{j + 1}")
    for j in range(p):
        for l in range(j + 1, p):
            cols.append(x[:, j] * x[:, l])
            labels.append(f"x{j + 1}:x{l + 1}")
    w = np.column_stack(cols)
    _check_rank(w, labels, "parametric block")
    return w, labels


def centered_constraints(x_matrix: np.ndarray, arg_index: int) -> ConstraintSet:
    """Ones-only constraint set (used for the control-function c basis)."""
    x = _as_matrix(x_matrix, "x_matrix")
    return ConstraintSet(-1, arg_index, np.ones((x.shape[0], 1)), ("const",))


@dataclass
class DesignMatrices:
    """Everything `profile_fit` needs, plus the bases for later evaluation."""

    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    w_labels: list[str]
    s: SieveBlock
    bases: dict[tuple[int, int], ConstrainedBasis]
    z: np.ndarray | None = None
    z_labels: list[str] | None = None
    z_sieve: SieveBlock | None = None
    c_bases: dict[tuple[int, int], ConstrainedBasis] | None = None
    specs: list[BasisSpec] | None = None  # per regressor

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def parametric(self) -> np.ndarray:
        """[W, Z] block whose coefficient vector is delta."""
        if self.z is None:
            return self.w
        return np.column_stack([self.w, self.z])

    def parametric_labels(self) -> list[str]:
        if self.z is None:
            return list(self.w_labels)
        return list(self.w_labels) + list(self.z_labels)

    def nonparametric(self) -> np.ndarray:
        """[S, Z-sieve] block whose coefficient vector is pi."""
        if self.z_sieve is None or self.z_sieve.width == 0:
            return self.s.matrix
        return np.column_stack([self.s.matrix, self.z_sieve.matrix])


def build_bases(
    x_matrix: np.ndarray,
    specs: list[BasisSpec],
    *,
    drop_tol: float = 1e-8,
) -> dict[tuple[int, int], ConstrainedBasis]:
    """Constrained bases for every (coefficient, argument) component.

    Off-diagonal components may legitimately collapse to zero columns (their
    linear direction is not identified), so those are built with
    on_empty="allow"; a diagonal collapse raises DegenerateBasisError.
    """
    x = _as_matrix(x_matrix, "x_matrix")
    p = x.shape[1]
    if len(specs) != p:
        raise ShapeError(f"need one BasisSpec per regressor, got {len(specs)} for p={p}")
    bases: dict[tuple[int, int], ConstrainedBasis] = {}
    for arg in range(p):
        raw = build_raw_basis(specs[arg], x[:, arg])
        for coef in range(p):
            cs = build_constraints(x, coef, arg)
            policy = "error" if coef == arg else "allow"
            bases[(coef, arg)] = constrain_basis(
                raw, cs, spec=specs[arg], drop_tol=drop_tol, on_empty=policy
            )
    return bases


def build_control_design(
    y: np.ndarray,
    x_matrix: np.ndarray,
    z_matrix: np.ndarray | None,
    specs: list[BasisSpec],
    *,
    z_labels: list[str] | None = None,
    drop_tol: float = 1e-8,
) -> DesignMatrices:
    """Full design with optional exogenous controls.

    Z columns join the parametric block (their coefficients are part of
    delta) and get their own sieve rows Z_q * psi_c(X_j) built from the
    centered-only version of each regressor basis. [W, Z] must have full
    column rank.
    """
    y = np.asarray(y, dtype=float).ravel()
    x = _as_matrix(x_matrix, "x_matrix")
    n, p = x.shape
    if y.shape[0] != n:
        raise ShapeError(f"y has {y.shape[0]} rows, x has {n}")
    if not np.all(np.isfinite(y)):
        raise DataError("non-finite values in outcome")

    w, w_labels = build_w(x)
    bases = build_bases(x, specs, drop_tol=drop_tol)
    s = assemble_sieve_block(x, bases)

    if z_matrix is None:
        return DesignMatrices(y, x, w, w_labels, s, bases, specs=list(specs))

    z = _as_matrix(z_matrix, "z_matrix")
    if z.shape[0] != n:
        raise ShapeError(f"z has {z.shape[0]} rows, x has {n}")
    if not np.all(np.isfinite(z)):
        raise DataError("non-finite values in control matrix")
    q = z.shape[1]
    if z_labels is None:
        z_labels = [f"z{i + 1}" for i in range(q)]
    _check_rank(np.column_stack([w, z]), w_labels + list(z_labels), "[W, Z] block")

    c_bases: dict[tuple[int, int], ConstrainedBasis] = {}
    for arg in range(p):
        raw = build_raw_basis(specs[arg], x[:, arg])
        cs = centered_constraints(x, arg)
        c_bases[(0, arg)] = constrain_basis(
            raw, cs, spec=specs[arg], drop_tol=drop_tol, on_empty="error"
        )

    # rows Z_q * psi_c(X_j), argument-major like the main sieve block
    pieces = []
    layout = []
    start = 0
    for arg in range(p):
        cb = c_bases[(0, arg)]
        for qi in range(q):
            block = z[:, [qi]] * cb.columns
            pieces.append(block)
            stop = start + block.shape[1]
            layout.append(BlockInfo(qi, arg, start, stop))
            start = stop
    z_sieve = SieveBlock(
        np.column_stack(pieces) if pieces else np.empty((n, 0)), tuple(layout)
    )
    return DesignMatrices(
        y, x, w, w_labels, s, bases, z, list(z_labels), z_sieve, c_bases, list(specs)
    )


def default_specs(
    x_matrix: np.ndarray,
    family: str,
    k: int,
    *,
    domain: tuple[float, float] | list[tuple[float, float]] | None = None,
) -> list[BasisSpec]:
    """One BasisSpec per regressor; domain defaults to the empirical range."""
    x = _as_matrix(x_matrix, "x_matrix")
    p = x.shape[1]
    if domain is None:
        domains = [(float(x[:, j].min()), float(x[:, j].max())) for j in range(p)]
    elif isinstance(domain, tuple) and np.isscalar(domain[0]):
        domains = [domain] * p
    else:
        domains = list(domain)
        if len(domains) != p:
            raise ShapeError(f"need one domain per regressor, got {len(domains)}")
    return [BasisSpec(family, k, d) for d in domains]


def build_design(
    y: np.ndarray,
    x_matrix: np.ndarray,
    *,
    z_matrix: np.ndarray | None = None,
    family: str = "polynomial",
    k: int = 3,
    domain=None,
    z_labels: list[str] | None = None,
    drop_tol: float = 1e-8,
) -> DesignMatrices:
    """Convenience wrapper: specs from (family, k, domain), then full design."""
    specs = default_specs(x_matrix, family, k, domain=domain)
    return build_control_design(
        y, x_matrix, z_matrix, specs, z_labels=z_labels, drop_tol=drop_tol
    )
