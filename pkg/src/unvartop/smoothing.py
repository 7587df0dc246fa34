"""Laplacian regularization of the modified energy density.

The left-hand-side operator ``M + (tau*h_e)**2 * K_lap`` depends only on the
mesh, so it is assembled and factorized once; each optimization iteration
assembles a Gauss-point right-hand side and solves for the smooth nodal
field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import ElementKit, SolveFailure, _default_rtol, _krylov_solve
from .grid import StructuredGrid

__all__ = ["LaplacianOperator", "build_laplacian", "smooth"]


@dataclass(frozen=True)
class LaplacianOperator:
    """Factorized nodal smoothing operator for one mesh.

    Attributes
    ----------
    tau : float
        Dimensionless regularization parameter.
    h_e : float
        Element size.
    lhs : scipy.sparse.csc_matrix
        ``M + (tau*h_e)**2 * K_lap``; symmetric positive definite.
    scatter : ndarray
        (n_elems, 4) global node indices per element-node slot.
    n_nodes : int
    N_T : ndarray
        (4, 4) shape values, nodes x quadrature points.
    strategy : str
        ``direct`` or ``iterative``.
    """

    tau: float
    h_e: float
    lhs: sp.csc_matrix
    scatter: np.ndarray
    n_nodes: int
    N_T: np.ndarray
    strategy: str
    _solve: Callable[[np.ndarray], np.ndarray] = field(repr=False)


def build_laplacian(
    grid: StructuredGrid, tau: float, kit: ElementKit, strategy: str = "direct"
) -> LaplacianOperator:
    """Assemble and factorize the smoothing operator.

    The per-element matrix is ``ME_lap + (tau*h_e)**2 * KE_lap``; identical
    for every element of the structured mesh, so the sparse triplets are a
    tiling of one 4x4 block.
    """
    if tau < 0:
        raise ValueError(f"tau must be non-negative, got {tau}")
    if strategy not in ("direct", "iterative"):
        raise ValueError(f"unknown solver strategy {strategy!r}")
    conn = grid.connect
    n_nodes = grid.n_nodes
    lhs_e = kit.ME_lap + (tau * grid.h_e) ** 2 * kit.KE_lap
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    data = np.tile(lhs_e.ravel(), grid.n_elems)
    lhs = sp.coo_matrix((data, (rows, cols)), shape=(n_nodes, n_nodes)).tocsc()

    if strategy == "direct":
        lu = spla.splu(lhs)

        def solve(rhs: np.ndarray) -> np.ndarray:
            return lu.solve(rhs)

    else:
        # same compensated incomplete factorization as the state solver
        try:
            comp = (lhs + 0.1 * sp.diags(lhs.diagonal())).tocsc()
            ilu = spla.spilu(comp, drop_tol=1e-3, permc_spec="MMD_AT_PLUS_A")
            M = spla.LinearOperator(lhs.shape, ilu.solve)
        except RuntimeError:
            dinv = 1.0 / lhs.diagonal()
            M = spla.LinearOperator(lhs.shape, lambda v: dinv * v)
        maxiter = 10 * n_nodes

        def solve(rhs: np.ndarray) -> np.ndarray:
            x, info = _krylov_solve(lhs, rhs, M, 0.1 * _default_rtol(), maxiter)
            if info != 0:
                raise SolveFailure(f"smoothing solve did not converge (info={info})")
            b_norm = max(np.linalg.norm(rhs), 1e-300)
            for _ in range(5):
                r = rhs - lhs @ x
                if np.linalg.norm(r) / b_norm <= _default_rtol():
                    break
                dx, info = _krylov_solve(lhs, r, M, 0.1 * _default_rtol(), maxiter)
                if info != 0:
                    break
                x = x + dx
            return x

    return LaplacianOperator(
        tau=float(tau),
        h_e=grid.h_e,
        lhs=lhs,
        scatter=conn,
        n_nodes=n_nodes,
        N_T=kit.N_T,
        strategy=strategy,
        _solve=solve,
    )


def smooth(
    op: LaplacianOperator,
    energy_gp: np.ndarray,
    chi: np.ndarray,
    shift: float,
    norm: float,
) -> np.ndarray:
    """Project the shifted, normalized Gauss-point energy onto smooth nodes.

    Parameters
    ----------
    energy_gp : ndarray
        (n_elems, 4) energy density at the quadrature points.
    chi : ndarray
        (n_elems,) relaxed characteristic values multiplying ``shift``.
    shift, norm : float
        Affine rescaling; ``norm`` must be positive.

    Returns
    -------
    ndarray
        Nodal field of length n_nodes.
    """
    if norm <= 0:
        raise ValueError(f"norm must be positive, got {norm}")
    energy_gp = np.asarray(energy_gp, dtype=float)
    chi = np.asarray(chi, dtype=float)
    n_elems = op.scatter.shape[0]
    if energy_gp.shape != (n_elems, 4):
        raise ValueError(
            f"energy_gp must have shape ({n_elems}, 4), got {energy_gp.shape}"
        )
    if chi.shape != (n_elems,):
        raise ValueError(f"chi must have shape ({n_elems},), got {chi.shape}")
    xi_hat = (energy_gp - shift * chi[:, None]) / norm
    # weight * |J| = 1/4 per point slot on unit elements
    rhs_els = 0.25 * xi_hat @ op.N_T.T
    rhs = np.bincount(op.scatter.ravel(), weights=rhs_els.ravel(), minlength=op.n_nodes)
    out = op._solve(rhs)
    if not np.all(np.isfinite(out)):
        raise SolveFailure("smoothing produced non-finite values")
    return out
