"""Bilinear quadrilateral finite elements on the structured grid.

Because every element is the same unit square, the per-Gauss-point stiffness
contributions are computed once and reused for the whole mesh; assembly then
reduces to scaling those matrices by the per-element interpolation
coefficient and summing triplets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import DofTable, StructuredGrid


class SolveFailure(RuntimeError):
    """Linear solve did not produce a solution within tolerance."""


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss-Legendre rule on the parent square [-1,1]^2."""

    points: np.ndarray   # (n, 2) columns (xi, eta)
    weights: np.ndarray  # (n,), sums to 4


def gauss_rule(n: int) -> QuadratureRule:
    """1-, 4-, or 36-point tensor Gauss-Legendre rule."""
    if n not in (1, 4, 36):
        raise ValueError(f"unsupported quadrature size {n}; expected 1, 4, or 36")
    n1d = {1: 1, 4: 2, 36: 6}[n]
    x, w = np.polynomial.legendre.leggauss(n1d)
    XI, ETA = np.meshgrid(x, x, indexing="xy")
    W = np.outer(w, w)
    return QuadratureRule(
        points=np.column_stack([XI.ravel(), ETA.ravel()]),
        weights=W.ravel(),
    )


def shape_values(point) -> np.ndarray:
    """Bilinear shape values at a parent point, anticlockwise from left-bottom."""
    xi, eta = point
    return 0.25 * np.array(
        [
            (1 - xi) * (1 - eta),
            (1 + xi) * (1 - eta),
            (1 + xi) * (1 + eta),
            (1 - xi) * (1 + eta),
        ]
    )


def _parent_gradients(point) -> np.ndarray:
    xi, eta = point
    return 0.25 * np.array(
        [
            [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
            [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
        ]
    )


# unit square element: J = diag(1/2, 1/2) regardless of the point
_DETJ = 0.25


def cartesian_gradients(point) -> tuple[np.ndarray, float]:
    """Cartesian shape-function derivatives (2x4) and detJ for a unit square."""
    return 2.0 * _parent_gradients(point), _DETJ


def strain_displacement(point) -> tuple[np.ndarray, float]:
    """Engineering-strain B matrix (3x8) and detJ at a parent point."""
    grad, detj = cartesian_gradients(point)
    B = np.zeros((3, 8))
    B[0, 0::2] = grad[0]
    B[1, 1::2] = grad[1]
    B[2, 0::2] = grad[1]
    B[2, 1::2] = grad[0]
    return B, detj


# analytic Laplacian stiffness and mass matrices of the unit square element
KE_LAP = np.array(
    [[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]], dtype=float
) / 6.0
ME_LAP = np.array(
    [[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]], dtype=float
) / 36.0


@dataclass(frozen=True)
class ElementKit:
    """Precomputed element matrices shared by the whole mesh.

    KE_gp[i] is the i-th Gauss point's weighted contribution
    w_i * detJ * B_i^T C B_i, so KE = sum(KE_gp). KE_cut is the
    single-central-point sub-integrated matrix used for elements bisected
    by the zero level of psi.
    """

    n_unkn: int
    C: np.ndarray
    KE_gp: tuple
    KE: np.ndarray
    KE_cut: np.ndarray
    KE_lap: np.ndarray
    ME_lap: np.ndarray
    N_T: np.ndarray  # shape values at the 4-point rule, nodes x points

    @property
    def ndof_e(self) -> int:
        return 4 * self.n_unkn


def _point_matrix(C: np.ndarray, n_unkn: int, point) -> np.ndarray:
    if n_unkn == 2:
        B, detj = strain_displacement(point)
    else:
        B, detj = cartesian_gradients(point)
    return detj * B.T @ C @ B


def element_kit(C: np.ndarray, n_unkn: int) -> ElementKit:
    """Build the per-Gauss-point, full, and cut element stiffness matrices."""
    C = np.asarray(C, dtype=float)
    expected = {2: (3, 3), 1: (2, 2)}.get(n_unkn)
    if expected is None:
        raise ValueError(f"n_unkn must be 1 or 2, got {n_unkn}")
    if C.shape != expected:
        raise ValueError(f"constitutive matrix must be {expected} for n_unkn={n_unkn}")
    if not np.allclose(C, C.T, rtol=1e-12, atol=1e-14):
        raise ValueError("constitutive matrix must be symmetric")
    if np.linalg.eigvalsh(C).min() <= 0:
        raise ValueError("constitutive matrix must be positive definite")

    rule = gauss_rule(4)
    KE_gp = tuple(
        w * _point_matrix(C, n_unkn, p) for p, w in zip(rule.points, rule.weights)
    )
    KE = np.sum(KE_gp, axis=0)
    center = gauss_rule(1)
    KE_cut = center.weights[0] * _point_matrix(C, n_unkn, center.points[0])
    N_T = np.column_stack([shape_values(p) for p in rule.points])
    return ElementKit(
        n_unkn=n_unkn,
        C=C,
        KE_gp=KE_gp,
        KE=KE,
        KE_cut=KE_cut,
        KE_lap=KE_LAP.copy(),
        ME_lap=ME_LAP.copy(),
        N_T=N_T,
    )


@dataclass
class SparseSystem:
    """Assembled linear system K u = F with a fixed/free DOF partition."""

    matrix: sp.csc_matrix
    loads: np.ndarray      # (n_dofs, n_states)
    fixed_dofs: np.ndarray
    prescribed: np.ndarray | None = None  # values on fixed DOFs, zero if None

    def __post_init__(self):
        self.fixed_dofs = np.asarray(self.fixed_dofs, dtype=np.int64)
        if self.loads.ndim == 1:
            self.loads = self.loads[:, None]

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]

    @property
    def free_dofs(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n_dofs), self.fixed_dofs)


def assemble_stiffness(
    grid: StructuredGrid,
    dofs: DofTable,
    kit: ElementKit,
    chi: np.ndarray,
    law,
    cut_flags: np.ndarray,
    springs=(),
) -> sp.csc_matrix:
    """Assemble K = sum_e coeff_e * (KE or KE_cut) plus port springs.

    coeff_e is the stiffness-mode interpolation of chi_e; elements flagged
    as cut use the sub-integrated matrix. Springs are diagonal additions
    applied after the topology-dependent part and never scaled by chi.
    """
    from .material import interp_property

    chi = np.asarray(chi, dtype=float)
    coeff = np.asarray(interp_property(chi, law, "stiffness"))
    vals = np.where(
        np.asarray(cut_flags, dtype=bool)[:, None],
        kit.KE_cut.ravel()[None, :],
        kit.KE.ravel()[None, :],
    ) * coeff[:, None]
    n = dofs.n_dofs
    rows, cols = dofs.scatter_rows, dofs.scatter_cols
    data = vals.ravel()
    if springs:
        sdofs = np.array([d for d, _ in springs], dtype=np.int64)
        svals = np.array([k for _, k in springs], dtype=float)
        if sdofs.size and (sdofs.min() < 0 or sdofs.max() >= n):
            raise ValueError("spring DOF index out of range")
        rows = np.concatenate([rows, sdofs])
        cols = np.concatenate([cols, sdofs])
        data = np.concatenate([data, svals])
    K = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsc()
    return K


def _default_rtol() -> float:
    return 1e-8


def _krylov_solve(A, b, M, rtol, maxiter, restart=50):
    """Preconditioned restarted GMRES; ``maxiter`` caps total inner
    iterations (converted to restart cycles)."""
    cycles = max(1, -(-maxiter // restart))
    try:
        x, info = spla.gmres(
            A, b, M=M, rtol=rtol, atol=0.0, restart=restart, maxiter=cycles
        )
    except TypeError:  # older scipy spells the tolerance 'tol'
        x, info = spla.gmres(
            A, b, M=M, tol=rtol, atol=0.0, restart=restart, maxiter=cycles
        )
    return x, info


def solve_linear(system: SparseSystem, strategy: str = "direct") -> np.ndarray:
    """Solve for all load columns; returns the full (n_dofs, n_states) array.

    direct factorizes the free-free block once and back-substitutes each
    column; iterative runs minimum-residual Krylov iterations (restarted
    GMRES) per column with relative tolerance 1e-8 and at most 10*n_dofs
    inner iterations. The equilibrium residual is checked after either
    path.
    """
    if strategy not in ("direct", "iterative"):
        raise ValueError(f"unknown solver strategy {strategy!r}")
    K, F = system.matrix, system.loads
    n, m = K.shape[0], F.shape[1]
    fixed = system.fixed_dofs
    free = system.free_dofs
    U = np.zeros((n, m))
    if system.prescribed is not None:
        U[fixed] = np.asarray(system.prescribed, dtype=float).reshape(-1, 1)
    if free.size == 0:
        return U

    Kr = K.tocsr()[free]
    Kff = Kr[:, free].tocsc()
    rhs = F[free] - Kr[:, fixed] @ U[fixed] if fixed.size else F[free].copy()

    if strategy == "direct":
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:  # exactly singular factor
            raise SolveFailure(
                f"direct factorization failed ({exc}); the model is likely "
                "under-constrained (rigid-body modes not fixed)"
            ) from exc
        X = lu.solve(rhs)
    else:
        # solve slightly below the contract tolerance; the check below is on
        # the true residual, not the preconditioned one minres monitors
        rtol = 0.1 * _default_rtol()
        maxiter = 10 * n
        # incomplete factorization of a diagonally compensated copy: the
        # 0.1*diag shift keeps the factor well-conditioned on high-contrast
        # topologies (void elements are ~1e-5 times stiffer than solid ones),
        # and the symmetric ordering preserves the structure minres relies on
        try:
            comp = (Kff + 0.1 * sp.diags(Kff.diagonal())).tocsc()
            ilu = spla.spilu(comp, drop_tol=1e-3, permc_spec="MMD_AT_PLUS_A")
            M = spla.LinearOperator(Kff.shape, ilu.solve)
        except RuntimeError:
            dinv = 1.0 / Kff.diagonal()
            M = spla.LinearOperator(Kff.shape, lambda v: dinv * v)
        X = np.empty_like(rhs)
        for j in range(m):
            x, info = _krylov_solve(Kff, rhs[:, j], M, rtol, maxiter)
            if info != 0:
                raise SolveFailure(
                    f"iterative solve did not converge for load column {j} (info={info})"
                )
            # belt-and-braces: refine against the true residual until the
            # contract tolerance holds
            b_norm = max(np.linalg.norm(rhs[:, j]), 1e-300)
            for _ in range(5):
                r = rhs[:, j] - Kff @ x
                if np.linalg.norm(r) / b_norm <= _default_rtol():
                    break
                dx, info = _krylov_solve(Kff, r, M, rtol, maxiter)
                if info != 0:
                    break
                x = x + dx
            X[:, j] = x

    # equilibrium residual is asserted, not assumed
    res = np.linalg.norm(Kff @ X - rhs, axis=0)
    scale = np.maximum(np.linalg.norm(rhs, axis=0), 1e-300)
    tol = 1e-6 if strategy == "direct" else _default_rtol()
    bad = res / scale > tol
    if np.any(~np.isfinite(X)) or np.any(bad):
        raise SolveFailure(
            f"equilibrium residual check failed (rel. residuals {res / scale}); "
            "the free-free block may be singular or severely ill-conditioned"
        )
    U[free] = X
    return U
