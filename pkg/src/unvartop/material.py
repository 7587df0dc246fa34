"""Constitutive matrices and relaxed material interpolation.

Void regions are modeled as a soft ersatz material: the characteristic
function chi is relaxed from {0,1} to [beta,1] with beta = alpha^(1/m), so
interpolated stiffness never drops below the contrast factor alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PLANE_STRESS = "plane-stress"
PLANE_STRAIN = "plane-strain"


@dataclass(frozen=True)
class Isotropic2D:
    """Isotropic linear-elastic material under a 2D modeling assumption."""

    E: float = 1.0
    nu: float = 0.3
    model: str = PLANE_STRESS

    def __post_init__(self):
        if self.E <= 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if self.model not in (PLANE_STRESS, PLANE_STRAIN):
            raise ValueError(f"unknown 2D model {self.model!r}")
        hi = 0.5 if self.model == PLANE_STRAIN else 1.0
        if not -1.0 < self.nu < hi:
            raise ValueError(f"Poisson ratio {self.nu} outside (-1, {hi}) for {self.model}")


def _default_anisotropy():
    return np.eye(2)


@dataclass(frozen=True)
class ThermalMaterial:
    """Scalar conductivity with an optional symmetric anisotropy factor."""

    kappa: float = 1.0
    anisotropy: np.ndarray = field(default_factory=_default_anisotropy)

    def __post_init__(self):
        a = np.asarray(self.anisotropy, dtype=float)
        if a.shape != (2, 2) or not np.allclose(a, a.T):
            raise ValueError("anisotropy must be a symmetric 2x2 matrix")
        object.__setattr__(self, "anisotropy", a)


@dataclass(frozen=True)
class InterpolationLaw:
    """Exponential interpolation of material properties in chi.

    Parameters
    ----------
    m : float
        Exponential factor, > 1.
    alpha : float
        Stiffness contrast of the ersatz material, in (0, 1).
    """

    m: float
    alpha: float

    def __post_init__(self):
        if not self.m > 1:
            raise ValueError(f"exponential factor must exceed 1, got {self.m}")
        if not 0 < self.alpha < 1:
            raise ValueError(f"contrast factor must lie in (0,1), got {self.alpha}")

    @property
    def beta(self) -> float:
        return self.alpha ** (1.0 / self.m)


def constitutive(mat: Isotropic2D) -> np.ndarray:
    """3x3 constitutive matrix for the engineering-strain vector."""
    E, nu = mat.E, mat.nu
    if mat.model == PLANE_STRESS:
        return (E / (1 - nu**2)) * np.array(
            [[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]
        )
    # deliberate: (1-nu)(1-2nu) prefactor, not the textbook (1+nu)(1-2nu)
    return (E / ((1 - nu) * (1 - 2 * nu))) * np.array(
        [[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, (1 - 2 * nu) / 2]]
    )


def conductivity(mat: ThermalMaterial) -> np.ndarray:
    """2x2 conductivity matrix kappa * anisotropy; must be SPD."""
    out = mat.kappa * mat.anisotropy
    if np.linalg.eigvalsh(out).min() <= 0:
        raise ValueError("conductivity matrix is not positive definite")
    return out


def interp_property(chi, law: InterpolationLaw, mode: str):
    """Interpolated stiffness coefficient, or its derivative in chi.

    stiffness mode: (chi + (1-chi)*beta)^m, ranging over [alpha, 1];
    sensitivity mode: m*(chi + (1-chi)*beta)^(m-1)*(1-beta), the exact
    chi-derivative of the stiffness mode.

    Accepts scalars or arrays.
    """
    chi = np.asarray(chi, dtype=float)
    if np.any(chi < 0) or np.any(chi > 1):
        raise ValueError("chi must lie in [0, 1]")
    beta = law.beta
    chi_b = chi + (1 - chi) * beta
    if mode == "stiffness":
        out = chi_b**law.m
    elif mode == "sensitivity":
        out = law.m * chi_b ** (law.m - 1) * (1 - beta)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    return out if out.ndim else float(out)
