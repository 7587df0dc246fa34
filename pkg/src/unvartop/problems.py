"""Problem-specific costs, pseudo-energy sensitivities, and the example
library of benchmark boundary conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import ElementKit
from .grid import DofTable, build_grid, select_nodes
from .material import InterpolationLaw, Isotropic2D, ThermalMaterial, interp_property

__all__ = [
    "ProblemDefinition",
    "cost",
    "sensitivity",
    "sensitivity_compliance",
    "sensitivity_multiload",
    "sensitivity_mechanism",
    "sensitivity_thermal",
    "example_library",
    "EXAMPLE_NAMES",
    "matlab_round",
]

KINDS = ("compliance", "multiload", "mechanism", "thermal")


def matlab_round(x: float) -> int:
    """Round half away from zero (for non-negative arguments), matching the
    reference convention rather than banker's rounding."""
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class ProblemDefinition:
    """Loads, supports, and node constraints of one optimization problem.

    Attributes
    ----------
    kind : str
        One of compliance, multiload, mechanism, thermal.
    nelx, nely : int
        Grid dimensions.
    loads : ndarray
        (n_dofs, n_states) force columns.  Mechanisms carry exactly two:
        the physical input load and the dummy unit load at the output
        port.
    fixed_dofs : ndarray
        Prescribed (homogeneous) DOF indices.
    active_nodes, passive_nodes : ndarray
        Nodes pinned to material / void.
    springs : tuple
        (dof, stiffness) pairs added to the stiffness diagonal.
    material : Isotropic2D or ThermalMaterial
    law : InterpolationLaw
    """

    kind: str
    nelx: int
    nely: int
    loads: np.ndarray
    fixed_dofs: np.ndarray
    active_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    passive_nodes: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    springs: tuple = ()
    material: object = field(default_factory=Isotropic2D)
    law: InterpolationLaw = field(default_factory=lambda: InterpolationLaw(m=5, alpha=1e-5))

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}; expected one of {KINDS}")
        loads = np.asarray(self.loads, dtype=float)
        if loads.ndim == 1:
            loads = loads[:, None]
        object.__setattr__(self, "loads", loads)
        object.__setattr__(
            self, "fixed_dofs", np.asarray(self.fixed_dofs, dtype=np.int64)
        )
        object.__setattr__(
            self, "active_nodes", np.asarray(self.active_nodes, dtype=np.int64)
        )
        object.__setattr__(
            self, "passive_nodes", np.asarray(self.passive_nodes, dtype=np.int64)
        )
        if np.intersect1d(self.active_nodes, self.passive_nodes).size:
            raise ValueError("active and passive node sets overlap")
        if np.any(loads[self.fixed_dofs] != 0.0):
            raise ValueError("loads must vanish on fixed DOFs")
        if self.kind == "mechanism":
            if loads.shape[1] != 2:
                raise ValueError(
                    "mechanism problems need exactly 2 load columns "
                    f"(physical + dummy), got {loads.shape[1]}"
                )
            spring_dofs = np.array([d for d, _ in self.springs], dtype=np.int64)
            for port in (0, 1):
                port_dofs = np.flatnonzero(loads[:, port])
                if not np.intersect1d(spring_dofs, port_dofs).size:
                    raise ValueError(
                        f"mechanism load column {port + 1} has no spring on its port"
                    )


def cost(problem: ProblemDefinition, solutions: np.ndarray, loads: np.ndarray) -> float:
    """Scalar objective from the solved state(s).

    compliance: f^T u; multiload: sum of per-state compliances; mechanism:
    -(dummy load)^T u1 (maximizing the output displacement along the dummy
    direction); thermal: (1/2) f^T theta.
    """
    solutions = np.asarray(solutions, dtype=float)
    loads = np.asarray(loads, dtype=float)
    if solutions.ndim == 1:
        solutions = solutions[:, None]
    if loads.ndim == 1:
        loads = loads[:, None]
    if solutions.shape != loads.shape:
        raise ValueError(
            f"solutions {solutions.shape} and loads {loads.shape} must match"
        )
    if problem.kind in ("compliance", "multiload"):
        return float(np.sum(loads * solutions))
    if problem.kind == "mechanism":
        return float(-loads[:, 1] @ solutions[:, 0])
    if problem.kind == "thermal":
        return float(0.5 * loads[:, 0] @ solutions[:, 0])
    raise ValueError(f"unknown problem kind {problem.kind!r}")


def _energy_field(
    u_left: np.ndarray,
    u_right: np.ndarray,
    dofs: DofTable,
    kit: ElementKit,
    chi: np.ndarray,
    cut_flags: np.ndarray,
    law: InterpolationLaw,
    sign: float,
) -> np.ndarray:
    """sign * gamma1 * (u_left^T KE_gp[i] u_right) per element and point;
    cut elements evaluate the central-point matrix once and replicate it."""
    gamma1 = interp_property(np.asarray(chi, dtype=float), law, "sensitivity")
    L = u_left[dofs.rows]  # (n_elems, ndof_e)
    R = u_right[dofs.rows]
    n_elems = dofs.rows.shape[0]
    xi = np.empty((n_elems, 4))
    for i, KE_i in enumerate(kit.KE_gp):
        xi[:, i] = np.einsum("ej,jk,ek->e", L, KE_i, R)
    cut = np.asarray(cut_flags, dtype=bool)
    if cut.any():
        e_cut = np.einsum("ej,jk,ek->e", L[cut], kit.KE_cut, R[cut])
        xi[cut] = e_cut[:, None]
    return sign * gamma1[:, None] * xi


def sensitivity_compliance(u, dofs, kit, chi, cut_flags, law) -> np.ndarray:
    """Pseudo-energy of the minimum-compliance problem; non-negative."""
    u = np.asarray(u, dtype=float).ravel()
    return _energy_field(u, u, dofs, kit, chi, cut_flags, law, sign=1.0)


def sensitivity_multiload(us, dofs, kit, chi, cut_flags, law) -> np.ndarray:
    """Sum of per-state compliance pseudo-energies."""
    us = list(us)
    if not us:
        raise ValueError("multiload sensitivity needs at least one solution")
    total = sensitivity_compliance(us[0], dofs, kit, chi, cut_flags, law)
    for u in us[1:]:
        total = total + sensitivity_compliance(u, dofs, kit, chi, cut_flags, law)
    return total


def sensitivity_mechanism(u1, u2, dofs, kit, chi, cut_flags, law) -> np.ndarray:
    """Mixed pseudo-energy of the two mechanism states; may be negative."""
    u1 = np.asarray(u1, dtype=float).ravel()
    u2 = np.asarray(u2, dtype=float).ravel()
    return _energy_field(u2, u1, dofs, kit, chi, cut_flags, law, sign=-1.0)


def sensitivity_thermal(theta, dofs, kit, chi, cut_flags, law) -> np.ndarray:
    """Pseudo-energy of the thermal-compliance problem; non-negative."""
    theta = np.asarray(theta, dtype=float).ravel()
    return _energy_field(theta, theta, dofs, kit, chi, cut_flags, law, sign=1.0)


def sensitivity(problem, U, dofs, kit, chi, cut_flags, law) -> np.ndarray:
    """Dispatch the pseudo-energy evaluation on the problem kind."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if problem.kind == "compliance":
        return sensitivity_compliance(U[:, 0], dofs, kit, chi, cut_flags, law)
    if problem.kind == "multiload":
        return sensitivity_multiload(
            [U[:, j] for j in range(U.shape[1])], dofs, kit, chi, cut_flags, law
        )
    if problem.kind == "mechanism":
        return sensitivity_mechanism(U[:, 0], U[:, 1], dofs, kit, chi, cut_flags, law)
    if problem.kind == "thermal":
        return sensitivity_thermal(U[:, 0], dofs, kit, chi, cut_flags, law)
    raise ValueError(f"unknown problem kind {problem.kind!r}")


EXAMPLE_NAMES = (
    "cantilever",
    "cantilever-mid",
    "mbb",
    "lshape",
    "bridge",
    "gripper",
    "michell-multiload",
    "inverter",
)

_COMPLIANCE_LAW = InterpolationLaw(m=5, alpha=1e-5)
_MECHANISM_LAW = InterpolationLaw(m=3, alpha=1e-2)


def example_library(
    name: str,
    nelx: int,
    nely: int,
    model: str = "plane-stress",
    spring_stiffness: float = 0.01,
) -> ProblemDefinition:
    """Benchmark boundary conditions parameterized by the grid size.

    Loads scale with nelx; coordinates in the predicates below are node
    coordinates with the origin at the bottom-left corner.
    """
    if name not in EXAMPLE_NAMES:
        raise KeyError(
            f"unknown example {name!r}; valid names: {', '.join(EXAMPLE_NAMES)}"
        )
    g = build_grid(nelx, nely)
    mat = Isotropic2D(E=1.0, nu=0.3, model=model)
    n_dofs = 2 * g.n_nodes

    def xdof(nodes):
        return 2 * np.asarray(nodes, dtype=np.int64)

    def ydof(nodes):
        return 2 * np.asarray(nodes, dtype=np.int64) + 1

    def sel(pred):
        return select_nodes(g, pred)

    empty = np.empty(0, np.int64)

    if name == "cantilever":
        # vertical point load at the bottom-right corner; left edge clamped
        F = np.zeros((n_dofs, 1))
        F[ydof(sel(lambda x, y: (x == nelx) & (y == 0))), 0] = -0.01 * nelx
        fixed = np.sort(
            np.concatenate([xdof(sel(lambda x, y: x == 0)), ydof(sel(lambda x, y: x == 0))])
        )
        return ProblemDefinition(
            kind="compliance", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "cantilever-mid":
        # vertical point load at mid-height of the right edge; left edge clamped
        F = np.zeros((n_dofs, 1))
        row = matlab_round(0.5 * nely)
        F[ydof(sel(lambda x, y: (x == nelx) & (y == row))), 0] = -0.01 * nelx
        fixed = np.sort(
            np.concatenate([xdof(sel(lambda x, y: x == 0)), ydof(sel(lambda x, y: x == 0))])
        )
        return ProblemDefinition(
            kind="compliance", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "mbb":
        # half MBB beam: symmetry on the left edge, roller at the
        # bottom-right corner, vertical load at the top-left corner
        F = np.zeros((n_dofs, 1))
        F[ydof(sel(lambda x, y: (x == 0) & (y == nely))), 0] = -0.01 * nelx
        fixed = np.sort(
            np.concatenate(
                [
                    xdof(sel(lambda x, y: x == 0)),
                    ydof(sel(lambda x, y: (x == nelx) & (y == 0))),
                ]
            )
        )
        return ProblemDefinition(
            kind="compliance", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "lshape":
        # hook-like domain: void block prescribed in the top-right area,
        # top edge clamped left of it, vertical load on the right side
        F = np.zeros((n_dofs, 1))
        row = matlab_round(0.2 * nely)
        F[ydof(sel(lambda x, y: (x == nelx) & (y == row))), 0] = -0.01 * nelx
        clamped = sel(lambda x, y: (x <= 0.4 * nelx) & (y == nely))
        fixed = np.sort(np.concatenate([xdof(clamped), ydof(clamped)]))
        passive = sel(
            lambda x, y: (x > math.ceil(nelx * 0.4)) & (y > math.ceil(nely * 0.4))
        )
        return ProblemDefinition(
            kind="compliance", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            passive_nodes=passive, material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "bridge":
        # half bridge: distributed deck load, symmetry on the left edge,
        # bearing near the bottom-right corner, deck pinned vertically at
        # the right edge; the deck band stays material
        F = np.zeros((n_dofs, 1))
        deck_row = math.floor(nely * 1.6 / 5)
        F[ydof(sel(lambda x, y: y == deck_row)), 0] = -0.01 * nelx
        support = sel(lambda x, y: (x >= 5.75 / 6 * nelx) & (y == 0))
        fixed = np.sort(
            np.concatenate(
                [
                    xdof(sel(lambda x, y: x == 0)),
                    xdof(support),
                    ydof(support),
                    ydof(
                        sel(
                            lambda x, y: (x == nelx)
                            & (y == math.floor(nely * 1.5 / 5))
                        )
                    ),
                ]
            )
        )
        active = sel(lambda x, y: (y >= nely * 1.5 / 5) & (y <= nely * 1.6 / 5))
        return ProblemDefinition(
            kind="compliance", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            active_nodes=active, material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "gripper":
        # half gripper: symmetry on the top edge, support on the lower
        # left edge, horizontal input at the top-left, vertical jaw output
        # near the top-right, jaw gap kept void
        F = np.zeros((n_dofs, 2))
        in_nodes = sel(lambda x, y: (y >= 0.9 * nely) & (x == 0))
        out_row = matlab_round(0.9 * nely)
        out_nodes = sel(lambda x, y: (y == out_row) & (x >= 0.9 * nelx))
        F[xdof(in_nodes), 0] = 0.0001 * nelx
        F[ydof(out_nodes), 1] = 0.0001 * nelx
        support = sel(lambda x, y: (x == 0) & (y <= 0.1 * nely))
        fixed = np.sort(
            np.concatenate(
                [ydof(sel(lambda x, y: y == nely)), xdof(support), ydof(support)]
            )
        )
        active = np.concatenate(
            [
                sel(lambda x, y: (y > 0.9 * nely) & (x < 0.05 * nelx)),
                sel(
                    lambda x, y: (y > 0.9 * nely)
                    & (y <= 0.95 * nely)
                    & (x >= 0.9 * nelx)
                ),
            ]
        )
        passive = np.concatenate(
            [
                sel(
                    lambda x, y: (x > 0.8 * nelx)
                    & (x < 0.9 * nelx)
                    & (y > 0.8 * nely)
                ),
                sel(lambda x, y: (x >= 0.9 * nelx) & (y > 0.95 * nely)),
            ]
        )
        springs = tuple((int(d), spring_stiffness) for d in xdof(in_nodes)) + tuple(
            (int(d), spring_stiffness) for d in ydof(out_nodes)
        )
        return ProblemDefinition(
            kind="mechanism", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            active_nodes=active, passive_nodes=passive, springs=springs,
            material=mat, law=_MECHANISM_LAW,
        )

    if name == "michell-multiload":
        # two inclined loads at the bottom midpoint, applied as separate
        # states; both bottom corners pinned
        F = np.zeros((n_dofs, 2))
        mid = sel(lambda x, y: (y == 0) & (x == matlab_round(nelx / 2)))
        F[xdof(mid), 0] = -0.01 * nelx
        F[ydof(mid), 0] = -2 * 0.01 * nelx
        F[xdof(mid), 1] = 0.01 * nelx
        F[ydof(mid), 1] = -2 * 0.01 * nelx
        corners = sel(lambda x, y: ((x == 0) & (y == 0)) | ((x == nelx) & (y == 0)))
        fixed = np.sort(np.concatenate([xdof(corners), ydof(corners)]))
        return ProblemDefinition(
            kind="multiload", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            material=mat, law=_COMPLIANCE_LAW,
        )

    if name == "inverter":
        # displacement inverter on the half domain: symmetry on the top
        # edge, support on the lower left edge, horizontal input segment at
        # the top-left, output segment at the top-right with the dummy load
        # opposing the input direction; stiff pads keep both ports attached
        F = np.zeros((n_dofs, 2))
        in_nodes = sel(lambda x, y: (x == 0) & (y >= 0.9 * nely))
        out_nodes = sel(lambda x, y: (x == nelx) & (y >= 0.9 * nely))
        F[xdof(in_nodes), 0] = 0.0001 * nelx
        F[xdof(out_nodes), 1] = -0.0001 * nelx
        support = sel(lambda x, y: (x == 0) & (y <= 0.1 * nely))
        fixed = np.sort(
            np.concatenate(
                [ydof(sel(lambda x, y: y == nely)), xdof(support), ydof(support)]
            )
        )
        active = np.concatenate(
            [
                sel(lambda x, y: (x < 0.05 * nelx) & (y > 0.9 * nely)),
                sel(lambda x, y: (x > 0.95 * nelx) & (y > 0.9 * nely)),
            ]
        )
        springs = tuple((int(d), spring_stiffness) for d in xdof(in_nodes)) + tuple(
            (int(d), spring_stiffness) for d in xdof(out_nodes)
        )
        return ProblemDefinition(
            kind="mechanism", nelx=nelx, nely=nely, loads=F, fixed_dofs=fixed,
            active_nodes=active, springs=springs, material=mat, law=_MECHANISM_LAW,
        )

    raise KeyError(name)
