"""Constitutive matrices and the chi interpolation law."""

import numpy as np
import pytest

from unvartop.material import (
    Isotropic2D,
    ThermalMaterial,
    InterpolationLaw,
    constitutive,
    conductivity,
    interp_property,
)

# ((0.5 + 0.5*0.001**0.2))**5 evaluated with mpmath at 50 digits
CHI_HALF_M5_A1EM3 = 0.09582172618777404


class TestConstitutive:
    def test_plane_stress_decoupled(self):
        C = constitutive(Isotropic2D(E=1.0, nu=0.0))
        np.testing.assert_allclose(C, np.diag([1.0, 1.0, 0.5]))

    def test_plane_stress_nu03(self):
        C = constitutive(Isotropic2D(E=1.0, nu=0.3))
        expected = (1 / 0.91) * np.array([[1, 0.3, 0], [0.3, 1, 0], [0, 0, 0.35]])
        np.testing.assert_allclose(C, expected, rtol=1e-15)

    def test_plane_strain_nu0_matches_plane_stress(self):
        C = constitutive(Isotropic2D(E=1.0, nu=0.0, model="plane-strain"))
        np.testing.assert_allclose(C, np.diag([1.0, 1.0, 0.5]))

    @pytest.mark.parametrize("model,nu", [("plane-stress", 0.45), ("plane-strain", 0.3),
                                          ("plane-stress", -0.2), ("plane-strain", -0.2)])
    def test_spd_for_admissible_parameters(self, model, nu):
        C = constitutive(Isotropic2D(E=2.3, nu=nu, model=model))
        np.testing.assert_allclose(C, C.T)
        assert np.linalg.eigvalsh(C).min() > 0

    def test_poles_rejected(self):
        with pytest.raises(ValueError):
            Isotropic2D(nu=1.0)
        with pytest.raises(ValueError):
            Isotropic2D(nu=0.5, model="plane-strain")
        with pytest.raises(ValueError):
            Isotropic2D(E=0.0)


class TestConductivity:
    def test_identity(self):
        np.testing.assert_array_equal(conductivity(ThermalMaterial()), np.eye(2))

    def test_scaling(self):
        np.testing.assert_array_equal(conductivity(ThermalMaterial(kappa=2.0)), 2 * np.eye(2))

    def test_anisotropic_spd(self):
        mat = ThermalMaterial(kappa=1.0, anisotropy=np.array([[2.0, 1.0], [1.0, 2.0]]))
        K = conductivity(mat)
        np.testing.assert_allclose(np.linalg.eigvalsh(K), [1.0, 3.0])

    def test_indefinite_rejected(self):
        mat = ThermalMaterial(kappa=1.0, anisotropy=np.array([[1.0, 2.0], [2.0, 1.0]]))
        with pytest.raises(ValueError):
            conductivity(mat)

    def test_nonsymmetric_rejected(self):
        with pytest.raises(ValueError):
            ThermalMaterial(anisotropy=np.array([[1.0, 0.5], [0.1, 1.0]]))


class TestInterpolationLaw:
    def test_beta_definition(self):
        law = InterpolationLaw(m=5, alpha=1e-5)
        assert law.beta == 1e-5 ** (1 / 5)
        assert 0 < law.beta < 1

    def test_solid_is_identity(self):
        law = InterpolationLaw(m=5, alpha=1e-5)
        assert interp_property(1.0, law, "stiffness") == 1.0

    def test_void_is_alpha(self):
        for m, alpha in [(5, 1e-5), (3, 1e-2)]:
            law = InterpolationLaw(m=m, alpha=alpha)
            assert interp_property(0.0, law, "stiffness") == pytest.approx(alpha, rel=1e-12)

    def test_frozen_midpoint_value(self):
        law = InterpolationLaw(m=5, alpha=1e-3)
        got = interp_property(0.5, law, "stiffness")
        assert got == pytest.approx(CHI_HALF_M5_A1EM3, rel=1e-14)

    def test_stiffness_bounds_and_monotonicity(self):
        law = InterpolationLaw(m=3, alpha=1e-2)
        chi = np.linspace(0, 1, 101)
        s = interp_property(chi, law, "stiffness")
        assert np.all(s >= law.alpha * (1 - 1e-12)) and np.all(s <= 1 + 1e-12)
        assert np.all(np.diff(s) > 0)

    @pytest.mark.parametrize("m", [3, 5])
    def test_sensitivity_is_stiffness_derivative(self, m):
        # central finite difference of the stiffness mode
        law = InterpolationLaw(m=m, alpha=1e-4)
        h = 1e-7
        for chi in np.arange(0.1, 0.95, 0.1):
            fd = (
                interp_property(chi + h, law, "stiffness")
                - interp_property(chi - h, law, "stiffness")
            ) / (2 * h)
            sens = interp_property(chi, law, "sensitivity")
            assert sens == pytest.approx(fd, rel=1e-6)
            assert sens > 0

    def test_rejects_out_of_range_chi(self):
        law = InterpolationLaw(m=5, alpha=1e-5)
        with pytest.raises(ValueError):
            interp_property(-0.1, law, "stiffness")
        with pytest.raises(ValueError):
            interp_property(1.1, law, "stiffness")
        with pytest.raises(ValueError):
            interp_property(0.5, law, "slope")

    def test_rejects_bad_law_parameters(self):
        with pytest.raises(ValueError):
            InterpolationLaw(m=1.0, alpha=1e-5)
        with pytest.raises(ValueError):
            InterpolationLaw(m=5, alpha=0.0)
        with pytest.raises(ValueError):
            InterpolationLaw(m=5, alpha=1.0)

    def test_vectorized_matches_scalar(self):
        law = InterpolationLaw(m=5, alpha=1e-5)
        chi = np.array([0.0, 0.25, 0.5, 1.0])
        vec = interp_property(chi, law, "sensitivity")
        scl = [interp_property(c, law, "sensitivity") for c in chi]
        np.testing.assert_allclose(vec, scl, rtol=0, atol=0)
