"""Outer optimization loop with closed-form topology updates.

A pseudo-time schedule advances the target void fraction.  Each iteration
solves the state problem, turns the pseudo-energy into a smooth nodal field,
and thresholds that field at a level ``lambda`` chosen so the volume
constraint holds — either exactly, by bracketed root finding
(cutting & bisection), or approximately, by an augmented-Lagrangian
multiplier update.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .fem import element_kit, gauss_rule, shape_values, assemble_stiffness, SparseSystem, solve_linear
from .grid import StructuredGrid, build_grid, dof_table
from .material import ThermalMaterial, conductivity, constitutive
from .smoothing import build_laplacian, smooth

__all__ = [
    "ConstraintInfeasible",
    "DegenerateField",
    "TimeSchedule",
    "Normalization",
    "LambdaResult",
    "ConvergenceLimits",
    "RunOptions",
    "IterationRecord",
    "StepSnapshot",
    "RunHistory",
    "time_steps",
    "shift_normalize",
    "compute_volume",
    "apply_node_constraints",
    "find_lambda",
    "check_convergence",
    "augmented_update",
    "run",
]

VOLUME_TOL = 1e-4
ROOTFIND_METHODS = ("bisection", "regula-falsi", "anderson-bjorck")


class ConstraintInfeasible(RuntimeError):
    """The target void fraction cannot be met within the search bracket."""


class DegenerateField(ValueError):
    """The first-iteration energy field admits no positive normalization."""


@dataclass(frozen=True)
class TimeSchedule:
    """Monotone sequence of target void fractions.

    Attributes
    ----------
    vol0 : float
        Initial void fraction in [0, 1).
    vol_final : float
        Final target in (0, 1].
    nsteps : int
        Number of increments.
    k : float
        Curvature; 0 gives equally spaced targets, negative front-loads
        them.
    """

    vol0: float
    vol_final: float
    nsteps: int
    k: float = 0.0

    def __post_init__(self):
        if not 0 <= self.vol0 < 1:
            raise ValueError(f"vol0 must lie in [0, 1), got {self.vol0}")
        if not 0 < self.vol_final <= 1:
            raise ValueError(f"vol_final must lie in (0, 1], got {self.vol_final}")
        if self.vol0 >= self.vol_final:
            raise ValueError(
                f"vol0 ({self.vol0}) must be smaller than vol_final ({self.vol_final})"
            )
        if int(self.nsteps) != self.nsteps or self.nsteps <= 0:
            raise ValueError(f"nsteps must be a positive integer, got {self.nsteps}")


def time_steps(s: TimeSchedule) -> np.ndarray:
    """Target void fractions t_1..t_nsteps, strictly increasing, ending
    exactly at vol_final."""
    i = np.arange(1, s.nsteps + 1, dtype=float)
    span = s.vol_final - s.vol0
    if s.k == 0:
        t = s.vol0 + i * span / s.nsteps
    else:
        t = s.vol0 + span * (1.0 - np.exp(s.k * i / s.nsteps)) / (1.0 - np.exp(s.k))
    t[-1] = s.vol_final
    return t


@dataclass(frozen=True)
class Normalization:
    """Affine rescaling of the pseudo-energy, frozen at the first iteration."""

    shift: float
    norm: float

    def __post_init__(self):
        if not self.norm > 0:
            raise ValueError(f"norm must be positive, got {self.norm}")


def shift_normalize(xi0: np.ndarray) -> Normalization:
    """shift = min(0, min xi0); norm = max(range, max xi0).

    Raises
    ------
    DegenerateField
        If the normalization denominator would be non-positive (all values
        equal and ≤ 0).
    """
    xi0 = np.asarray(xi0, dtype=float)
    if xi0.size == 0:
        raise ValueError("cannot normalize an empty field")
    lo = float(xi0.min())
    hi = float(xi0.max())
    shift = min(0.0, lo)
    norm = max(hi - lo, hi)
    if norm <= 0:
        raise DegenerateField(
            "energy field admits no positive normalization "
            f"(min={lo}, max={hi}); the state solution is likely degenerate"
        )
    return Normalization(shift=shift, norm=norm)


# 36-point rule on the parent square, cached with the bilinear shape values
# evaluated at every point (36 x 4); used to integrate H(psi) on cut elements
_RULE36 = gauss_rule(36)
_N36 = np.array([shape_values(p) for p in _RULE36.points])
_W36 = _RULE36.weights


def compute_volume(grid: StructuredGrid, psi: np.ndarray):
    """Void fraction and relaxed characteristic function of a nodal field.

    Uncut elements get chi in {0, 1} from the nodal signs; cut elements are
    integrated with 36 quadrature points on the bilinear interpolant.  A
    nodal (or quadrature-point) value of exactly zero counts as material.

    Returns
    -------
    (vol, chi, cut_flags)
        vol = 1 - sum(chi)/n_elems; chi per element in [0, 1]; cut_flags
        boolean per element.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (grid.n_nodes,):
        raise ValueError(f"psi must have shape ({grid.n_nodes},), got {psi.shape}")
    P = psi[grid.connect]  # (n_elems, 4)
    material = P >= 0.0
    n_mat = material.sum(axis=1)
    chi = np.zeros(grid.n_elems)
    chi[n_mat == 4] = 1.0
    cut_flags = (n_mat > 0) & (n_mat < 4)
    if np.any(cut_flags):
        psi_q = P[cut_flags] @ _N36.T  # (n_cut, 36)
        heavi = (psi_q >= 0.0).astype(float)
        # the weights sum to 4 only up to rounding, so pin the quadrature
        # average into [0, 1]
        chi[cut_flags] = np.clip((heavi @ _W36) / 4.0, 0.0, 1.0)
    vol = 1.0 - chi.sum() / grid.n_elems
    return float(vol), chi, cut_flags


def apply_node_constraints(
    psi: np.ndarray,
    active: Optional[np.ndarray],
    passive: Optional[np.ndarray],
    alpha0: float,
) -> np.ndarray:
    """Pin psi to +alpha0 on active nodes and -alpha0 on passive nodes.

    Returns a new array; the input is not modified.
    """
    active = np.asarray(active, dtype=np.int64) if active is not None else np.empty(0, np.int64)
    passive = np.asarray(passive, dtype=np.int64) if passive is not None else np.empty(0, np.int64)
    if active.size and passive.size and np.intersect1d(active, passive).size:
        raise ValueError("active and passive node sets overlap")
    out = np.array(psi, dtype=float, copy=True)
    out[active] = alpha0
    out[passive] = -alpha0
    return out


@dataclass(frozen=True)
class LambdaResult:
    """Topology produced by one threshold search."""

    lam: float
    psi: np.ndarray
    chi: np.ndarray
    cut_flags: np.ndarray
    vol: float
    n_evals: int


def find_lambda(
    xi_nodal: np.ndarray,
    t_ref: float,
    lambda_prev: Optional[float] = None,
    method: str = "bisection",
    constraints=None,
    alpha0: float = 1e-3,
    grid: StructuredGrid = None,
) -> LambdaResult:
    """Find the threshold level enforcing the volume constraint.

    The constraint C(lambda) = t_ref - vol(xi_nodal - lambda) is
    non-increasing; the search brackets [min xi, max xi] and iterates the
    chosen method until |C| <= 1e-4.  lambda_prev, when inside the bracket,
    is tried first as a replacement endpoint to shrink the interval.

    Raises
    ------
    ConstraintInfeasible
        After 1000 constraint evaluations without meeting the tolerance
        (e.g. active/passive sets cap the attainable volume away from
        t_ref).
    """
    if grid is None:
        raise ValueError("grid is required")
    if method not in ROOTFIND_METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {ROOTFIND_METHODS}")
    xi_nodal = np.asarray(xi_nodal, dtype=float)
    if not np.all(np.isfinite(xi_nodal)):
        raise ValueError("xi_nodal contains non-finite values")
    if not 0.0 <= t_ref <= 1.0:
        raise ValueError(f"t_ref must lie in [0, 1], got {t_ref}")
    active, passive = constraints if constraints is not None else (None, None)

    state = {"n": 0}

    def evaluate(lam: float):
        state["n"] += 1
        psi = apply_node_constraints(xi_nodal - lam, active, passive, alpha0)
        vol, chi, cut = compute_volume(grid, psi)
        return t_ref - vol, psi, chi, cut, vol

    def result(lam, payload):
        c, psi, chi, cut, vol = payload
        return LambdaResult(
            lam=float(lam), psi=psi, chi=chi, cut_flags=cut, vol=vol, n_evals=state["n"]
        )

    l1 = float(xi_nodal.min())
    l2 = float(xi_nodal.max())
    p1 = evaluate(l1)
    if abs(p1[0]) <= VOLUME_TOL:
        return result(l1, p1)
    p2 = evaluate(l2)
    if abs(p2[0]) <= VOLUME_TOL:
        return result(l2, p2)
    c1, c2 = p1[0], p2[0]

    # the previous multiplier often lies close to the new root: use it to
    # replace the endpoint whose constraint has the same sign
    if lambda_prev is not None and l1 < lambda_prev < l2:
        pp = evaluate(lambda_prev)
        if abs(pp[0]) <= VOLUME_TOL:
            return result(lambda_prev, pp)
        if (pp[0] > 0) == (c1 > 0):
            l1, c1 = float(lambda_prev), pp[0]
        else:
            l2, c2 = float(lambda_prev), pp[0]

    max_evals = 1000
    last = None
    while state["n"] < max_evals:
        if method == "bisection":
            x = 0.5 * (l1 + l2)
        elif method == "regula-falsi":
            denom = c2 - c1
            x = (l1 * c2 - l2 * c1) / denom if denom != 0 else 0.5 * (l1 + l2)
        else:  # anderson-bjorck: secant through the bracket, scaling the
            # retained endpoint's value when it survives a replacement
            denom = c2 - c1
            x = (l1 * c2 - l2 * c1) / denom if denom != 0 else 0.5 * (l1 + l2)
        if not (min(l1, l2) < x < max(l1, l2)) or x == last:
            x = 0.5 * (l1 + l2)
        px = evaluate(x)
        cx = px[0]
        if abs(cx) <= VOLUME_TOL:
            return result(x, px)
        if method == "anderson-bjorck":
            if cx * c2 < 0:
                l1, c1 = l2, c2
                l2, c2 = x, cx
            else:
                g = 1.0 - cx / c2 if c2 != 0 else 0.5
                if g <= 0:
                    g = 0.5
                c1 *= g
                l2, c2 = x, cx
        else:
            if (cx > 0) == (c1 > 0):
                l1, c1 = x, cx
            else:
                l2, c2 = x, cx
        last = x

    raise ConstraintInfeasible(
        f"volume target {t_ref} not met within {max_evals} constraint "
        "evaluations; the target may be unattainable under the node "
        "constraints"
    )


@dataclass(frozen=True)
class ConvergenceLimits:
    """Iteration caps and tolerances for the in-step convergence test."""

    iter_min_step: int = 4
    iter_max_step: int = 20
    iter_max: int = 500
    chi_tol: float = 0.1
    lambda_tol: float = 0.1
    vol_tol: float = VOLUME_TOL
    constraint_tol: float = 1e-3


DEFAULT_LIMITS = ConvergenceLimits()


def check_convergence(
    chi_prev: np.ndarray,
    chi: np.ndarray,
    lambda_prev: float,
    lam: float,
    vol: float,
    t_ref: float,
    iter_step: int,
    limits: ConvergenceLimits = DEFAULT_LIMITS,
    global_iter: Optional[int] = None,
    al_constraint: Optional[float] = None,
) -> str:
    """Status of the current in-step iterate: converged, iterate, or abort.

    Converged requires iter_min_step <= iter_step <= iter_max_step, the
    L2 norm of the chi change below chi_tol, the relative lambda change
    below lambda_tol, and the volume gate: |vol - t_ref| <= vol_tol, or
    |al_constraint| <= constraint_tol when the multiplier is updated by the
    augmented-Lagrangian rule (which cannot hit the root-finding
    tolerance).
    """
    if iter_step > limits.iter_max_step:
        return "abort"
    if global_iter is not None and global_iter > limits.iter_max:
        return "abort"
    if iter_step < limits.iter_min_step:
        return "iterate"
    d_chi = float(np.linalg.norm(np.asarray(chi) - np.asarray(chi_prev)))
    d_lam = abs(lam - lambda_prev)
    if d_lam == 0:
        rel_lam = 0.0
    elif lambda_prev == 0:
        rel_lam = np.inf
    else:
        rel_lam = d_lam / abs(lambda_prev)
    if al_constraint is not None:
        vol_ok = abs(al_constraint) <= limits.constraint_tol
    else:
        vol_ok = abs(vol - t_ref) <= limits.vol_tol
    if d_chi < limits.chi_tol and rel_lam < limits.lambda_tol and vol_ok:
        return "converged"
    return "iterate"


def augmented_update(
    lam: float,
    rho: float,
    C: float,
    C_prev: Optional[float],
    rho0: float,
) -> tuple:
    """One augmented-Lagrangian multiplier/penalty update.

    lambda' = lambda + rho*C; the penalty grows by 2% (capped at 100*rho0)
    whenever the constraint has stalled, |C - C_prev| < 1e-3.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    lam_new = lam + rho * C
    if C_prev is not None and abs(C - C_prev) < 1e-3:
        rho_new = min(1.02 * rho, 100.0 * rho0)
    else:
        rho_new = rho
    return lam_new, rho_new


@dataclass(frozen=True)
class RunOptions:
    """Knobs of the optimization loop.

    Attributes
    ----------
    tau : float
        Regularization parameter of the energy smoothing.
    solver : str
        Linear solver strategy, ``direct`` or ``iterative``.
    rootfind : str
        Threshold search method: ``bisection``, ``regula-falsi``, or
        ``anderson-bjorck``.
    constraint : str
        ``bisection`` enforces the volume exactly per iteration;
        ``augmented`` updates the multiplier incrementally.
    alpha0 : float
        Magnitude prescribed on active/passive nodes and the initial psi.
    rho0 : float
        Initial augmented-Lagrangian penalty.
    limits : ConvergenceLimits
    sensitivity_scale : float
        Constant factor on the pseudo-energy before normalization; the
        converged topology is invariant to it.
    """

    tau: float = 0.5
    solver: str = "direct"
    rootfind: str = "bisection"
    constraint: str = "bisection"
    alpha0: float = 1e-3
    rho0: float = 1.0
    limits: ConvergenceLimits = field(default_factory=ConvergenceLimits)
    sensitivity_scale: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.solver not in ("direct", "iterative"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.rootfind not in ROOTFIND_METHODS:
            raise ValueError(f"unknown rootfind method {self.rootfind!r}")
        if self.constraint not in ("bisection", "augmented"):
            raise ValueError(f"unknown constraint mode {self.constraint!r}")
        if self.rho0 <= 0:
            raise ValueError(f"rho0 must be positive, got {self.rho0}")


@dataclass(frozen=True)
class IterationRecord:
    """One optimization iteration, as serialized into the history table."""

    step: int
    iter_in_step: int
    t_ref: float
    j_norm: float
    vol: float
    lam: float
    converged: bool
    delta_chi: float = np.nan
    delta_lambda_rel: float = np.nan


@dataclass(frozen=True)
class StepSnapshot:
    """Fields stored at the convergence of one pseudo-time step."""

    step: int
    t_ref: float
    psi: np.ndarray
    chi: np.ndarray
    u: np.ndarray
    vol: float
    lam: float


@dataclass
class RunHistory:
    """Everything an optimization run produced.

    ``snapshots`` holds one entry per converged step; the ``final_*``
    fields always hold the last iterate, so callers can inspect the end
    state even when the closing step hit its iteration cap.
    """

    records: list
    snapshots: list
    normalization: Optional[Normalization]
    j_ref: Optional[float]
    n_constraint_evals: int = 0
    warnings: list = field(default_factory=list)
    aborted: bool = False
    final_psi: Optional[np.ndarray] = None
    final_chi: Optional[np.ndarray] = None
    final_u: Optional[np.ndarray] = None
    final_vol: Optional[float] = None
    final_lam: Optional[float] = None

    @property
    def completed(self) -> bool:
        """True when the run finished the schedule with a converged last
        step and no iteration-cap warnings."""
        return (
            not self.aborted
            and not self.warnings
            and bool(self.records)
            and self.records[-1].converged
        )


def _relative_change(new: float, prev: float) -> float:
    d = abs(new - prev)
    if d == 0:
        return 0.0
    if prev == 0:
        return np.inf
    return d / abs(prev)


def run(problem, schedule: TimeSchedule, options: Optional[RunOptions] = None) -> RunHistory:
    """Execute the optimization loop for one problem definition.

    Starts from a fully solid topology (psi = +alpha0, passive nodes
    -alpha0), then advances the void-fraction target along the schedule.
    Per iteration: assemble and solve the state equation on the current
    topology, evaluate the cost (normalized by the first iteration's),
    evaluate the pseudo-energy, smooth it, and re-threshold.

    A step that exhausts its in-step iteration cap is recorded with a
    warning and the schedule moves on to the next target (the volume
    constraint is enforced at every iterate, so the state stays usable);
    only the global iteration cap ends the run early, with
    ``history.aborted`` set.  Solver and infeasibility errors propagate.
    """
    from . import problems as _problems

    options = options or RunOptions()
    grid = build_grid(problem.nelx, problem.nely)
    n_unkn = 1 if problem.kind == "thermal" else 2
    dofs = dof_table(grid, n_unkn)
    if isinstance(problem.material, ThermalMaterial):
        C = conductivity(problem.material)
    else:
        C = constitutive(problem.material)
    kit = element_kit(C, n_unkn)
    law = problem.law
    lap = build_laplacian(grid, options.tau, kit, strategy="direct")
    loads = np.asarray(problem.loads, dtype=float)
    if loads.ndim == 1:
        loads = loads[:, None]

    psi = np.full(grid.n_nodes, options.alpha0)
    psi = apply_node_constraints(
        psi, problem.active_nodes, problem.passive_nodes, options.alpha0
    )
    vol, chi, cut_flags = compute_volume(grid, psi)

    t_refs = time_steps(schedule)
    history = RunHistory(records=[], snapshots=[], normalization=None, j_ref=None)
    augmented = options.constraint == "augmented"
    lam = 0.0
    lam_aug = 0.0
    rho = options.rho0
    C_last = None
    C_prev = None
    global_iter = 0

    for step_idx, t_ref in enumerate(t_refs, start=1):
        if augmented:
            C_last = t_ref - vol
        iter_step = 0
        while True:
            iter_step += 1
            global_iter += 1

            K = assemble_stiffness(
                grid, dofs, kit, chi, law, cut_flags, problem.springs
            )
            system = SparseSystem(
                matrix=K, loads=loads, fixed_dofs=problem.fixed_dofs
            )
            U = solve_linear(system, options.solver)

            J = _problems.cost(problem, U, loads)
            if history.j_ref is None:
                j_ref = abs(J) if problem.kind == "mechanism" else J
                history.j_ref = j_ref if j_ref != 0 else 1.0
            j_norm = J / history.j_ref

            xi = _problems.sensitivity(problem, U, dofs, kit, chi, cut_flags, law)
            if options.sensitivity_scale != 1.0:
                xi = xi * options.sensitivity_scale
            if history.normalization is None:
                history.normalization = shift_normalize(xi)
            norm = history.normalization
            xi_tau = smooth(lap, xi, chi, norm.shift, norm.norm)

            al_C = None
            if augmented:
                lam_aug, rho = augmented_update(
                    lam_aug, rho, C_last, C_prev, options.rho0
                )
                # the volume constraint's variation carries a 1/|domain|
                # factor that is absorbed into the multiplier, so the
                # threshold applied to the field is the multiplier divided
                # by the domain measure
                lam_new = lam_aug / grid.n_elems
                psi = apply_node_constraints(
                    xi_tau - lam_new,
                    problem.active_nodes,
                    problem.passive_nodes,
                    options.alpha0,
                )
                vol_new, chi_new, cut_new = compute_volume(grid, psi)
                C_prev = C_last
                C_last = t_ref - vol_new
                al_C = C_last
            else:
                res = find_lambda(
                    xi_tau,
                    t_ref,
                    lambda_prev=lam,
                    method=options.rootfind,
                    constraints=(problem.active_nodes, problem.passive_nodes),
                    alpha0=options.alpha0,
                    grid=grid,
                )
                history.n_constraint_evals += res.n_evals
                lam_new, psi = res.lam, res.psi
                vol_new, chi_new, cut_new = res.vol, res.chi, res.cut_flags

            status = check_convergence(
                chi,
                chi_new,
                lam,
                lam_new,
                vol_new,
                t_ref,
                iter_step,
                limits=options.limits,
                global_iter=global_iter,
                al_constraint=al_C,
            )
            history.records.append(
                IterationRecord(
                    step=step_idx,
                    iter_in_step=iter_step,
                    t_ref=float(t_ref),
                    j_norm=float(j_norm),
                    vol=float(vol_new),
                    lam=float(lam_new),
                    converged=status == "converged",
                    delta_chi=float(np.linalg.norm(chi_new - chi)),
                    delta_lambda_rel=_relative_change(lam_new, lam),
                )
            )
            chi, cut_flags, vol, lam = chi_new, cut_new, vol_new, lam_new

            if status == "converged":
                history.snapshots.append(
                    StepSnapshot(
                        step=step_idx,
                        t_ref=float(t_ref),
                        psi=psi.copy(),
                        chi=chi.copy(),
                        u=U.copy(),
                        vol=vol,
                        lam=lam,
                    )
                )
                break
            if status == "abort":
                if global_iter > options.limits.iter_max:
                    reason = (
                        f"global iteration cap {options.limits.iter_max} "
                        f"exceeded at step {step_idx}"
                    )
                    history.aborted = True
                else:
                    reason = (
                        f"step {step_idx} hit the "
                        f"{options.limits.iter_max_step}-iteration in-step cap "
                        "without converging; advancing to the next target"
                    )
                history.warnings.append(reason)
                warnings.warn(reason, RuntimeWarning, stacklevel=2)
                break
        if history.aborted:
            break
    history.final_psi = psi.copy()
    history.final_chi = chi.copy()
    history.final_u = U.copy()
    history.final_vol = float(vol)
    history.final_lam = float(lam)
    return history
