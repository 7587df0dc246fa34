"""Quadrature, element matrices, assembly, and linear solves."""

import numpy as np
import pytest

from unvartop.fem import (
    KE_LAP,
    ME_LAP,
    SolveFailure,
    SparseSystem,
    assemble_stiffness,
    cartesian_gradients,
    element_kit,
    gauss_rule,
    shape_values,
    solve_linear,
    strain_displacement,
)
from unvartop.grid import build_grid, dof_table, select_nodes
from unvartop.material import InterpolationLaw, Isotropic2D, constitutive

C_REF = constitutive(Isotropic2D(E=1.0, nu=0.3))
LAW_REF = InterpolationLaw(m=5, alpha=1e-5)


def kit_ref():
    return element_kit(C_REF, 2)


class TestGaussRule:
    def test_single_point(self):
        r = gauss_rule(1)
        np.testing.assert_allclose(r.points, [[0.0, 0.0]])
        np.testing.assert_allclose(r.weights, [4.0])

    def test_four_point(self):
        r = gauss_rule(4)
        a = 1 / np.sqrt(3)
        assert sorted(map(tuple, np.round(r.points, 12))) == sorted(
            [(-round(a, 12), -round(a, 12)), (-round(a, 12), round(a, 12)),
             (round(a, 12), -round(a, 12)), (round(a, 12), round(a, 12))]
        )
        np.testing.assert_allclose(r.weights, np.ones(4))
        # 2-point Gauss-Legendre integrates cubics exactly
        integral = np.sum(r.weights * r.points[:, 0] ** 2)
        assert integral == pytest.approx(4 / 3, rel=1e-15)

    def test_36_point_high_order_monomial(self):
        r = gauss_rule(36)
        assert r.weights.sum() == pytest.approx(4.0, rel=1e-14)
        integral = np.sum(r.weights * r.points[:, 0] ** 10 * r.points[:, 1] ** 8)
        assert integral == pytest.approx(4 / 99, rel=1e-13)

    def test_rejects_unsupported_size(self):
        with pytest.raises(ValueError):
            gauss_rule(9)


class TestShapeFunctions:
    def test_centroid(self):
        np.testing.assert_allclose(shape_values((0.0, 0.0)), [0.25] * 4)

    def test_nodal_interpolation(self):
        np.testing.assert_allclose(shape_values((-1.0, -1.0)), [1, 0, 0, 0])
        np.testing.assert_allclose(shape_values((1.0, -1.0)), [0, 1, 0, 0])
        np.testing.assert_allclose(shape_values((1.0, 1.0)), [0, 0, 1, 0])
        np.testing.assert_allclose(shape_values((-1.0, 1.0)), [0, 0, 0, 1])

    def test_partition_of_unity_at_gauss_point(self):
        a = 1 / np.sqrt(3)
        vals = shape_values((a, -a))
        assert vals.sum() == pytest.approx(1.0, rel=1e-15)
        assert np.all(vals > 0)


class TestStrainDisplacement:
    def test_rigid_translation(self):
        u = np.array([1, 0, 1, 0, 1, 0, 1, 0], dtype=float)
        for p in gauss_rule(4).points:
            B, _ = strain_displacement(p)
            np.testing.assert_allclose(B @ u, 0, atol=1e-15)

    def test_uniform_stretch_patch(self):
        # nodal x-coordinates of the parent square mapped to the unit square
        xs = [0.0, 1.0, 1.0, 0.0]
        u = np.zeros(8)
        u[0::2] = xs
        for p in gauss_rule(4).points:
            B, _ = strain_displacement(p)
            np.testing.assert_allclose(B @ u, [1, 0, 0], atol=1e-14)

    def test_detj(self):
        for p in gauss_rule(4).points:
            _, detj = strain_displacement(p)
            assert detj == 0.25

    def test_thermal_gradient_of_linear_field(self):
        theta = np.array([0.0, 1.0, 1.0, 0.0])  # theta = x
        for p in gauss_rule(4).points:
            grad, detj = cartesian_gradients(p)
            np.testing.assert_allclose(grad @ theta, [1, 0], atol=1e-14)
            assert detj == 0.25


class TestElementKit:
    def test_laplacian_matrices_exact(self):
        kit = kit_ref()
        expected_k = np.array(
            [[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]
        ) / 6
        expected_m = np.array(
            [[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]
        ) / 36
        assert np.array_equal(kit.KE_lap, expected_k)
        assert np.array_equal(kit.ME_lap, expected_m)
        assert np.array_equal(KE_LAP, expected_k) and np.array_equal(ME_LAP, expected_m)

    def test_laplacian_matrices_match_quadrature(self):
        # 2x2 Gauss is exact for the biquadratic integrands of both matrices
        r = gauss_rule(4)
        K = np.zeros((4, 4))
        M = np.zeros((4, 4))
        for p, w in zip(r.points, r.weights):
            grad, detj = cartesian_gradients(p)
            N = shape_values(p)
            K += w * detj * grad.T @ grad
            M += w * detj * np.outer(N, N)
        np.testing.assert_allclose(K, KE_LAP, atol=1e-14)
        np.testing.assert_allclose(M, ME_LAP, atol=1e-15)

    def test_elastic_ke_structure(self):
        kit = kit_ref()
        KE = kit.KE
        np.testing.assert_allclose(KE, KE.T, atol=1e-15)
        ev = np.linalg.eigvalsh(KE)
        assert ev.min() > -1e-14
        assert np.sum(ev > 1e-10) == 5  # rank 5: 3 rigid-body modes removed
        # rigid rotation about the element center (0.5, 0.5)
        corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        rot = np.column_stack(
            [-(corners[:, 1] - 0.5), corners[:, 0] - 0.5]
        ).ravel()
        np.testing.assert_allclose(KE @ rot, 0, atol=1e-14)

    def test_ke_against_high_order_quadrature(self):
        kit = kit_ref()
        r = gauss_rule(36)
        KE36 = np.zeros((8, 8))
        for p, w in zip(r.points, r.weights):
            B, detj = strain_displacement(p)
            KE36 += w * detj * B.T @ C_REF @ B
        np.testing.assert_allclose(kit.KE, KE36, atol=1e-12)

    def test_gp_decomposition(self):
        kit = kit_ref()
        assert len(kit.KE_gp) == 4
        np.testing.assert_allclose(np.sum(kit.KE_gp, axis=0), kit.KE, atol=1e-15)
        for A in kit.KE_gp:
            np.testing.assert_allclose(A, A.T, atol=1e-15)
            assert np.linalg.eigvalsh(A).min() > -1e-14

    def test_cut_matrix(self):
        kit = kit_ref()
        B0, detj = strain_displacement((0.0, 0.0))
        np.testing.assert_allclose(kit.KE_cut, 4 * detj * B0.T @ C_REF @ B0, atol=1e-15)
        assert np.linalg.eigvalsh(kit.KE_cut).min() > -1e-14

    def test_thermal_kit(self):
        kit = element_kit(np.eye(2), 1)
        # with unit conductivity the element matrix is the Laplacian one
        np.testing.assert_allclose(kit.KE, KE_LAP, atol=1e-14)
        assert kit.KE_cut.shape == (4, 4)

    def test_n_t_layout(self):
        kit = kit_ref()
        assert kit.N_T.shape == (4, 4)
        r = gauss_rule(4)
        for i, p in enumerate(r.points):
            np.testing.assert_allclose(kit.N_T[:, i], shape_values(p))

    def test_rejects_bad_constitutive(self):
        with pytest.raises(ValueError):
            element_kit(np.array([[1.0, 0.5, 0], [0.1, 1, 0], [0, 0, 0.3]]), 2)
        with pytest.raises(ValueError):
            element_kit(np.eye(3), 1)
        with pytest.raises(ValueError):
            element_kit(-np.eye(3), 2)


class TestAssembly:
    def test_single_solid_element(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        kit = kit_ref()
        K = assemble_stiffness(g, d, kit, np.ones(1), LAW_REF, np.zeros(1, bool))
        np.testing.assert_allclose(K.toarray()[np.ix_(d.rows[0], d.rows[0])], kit.KE)

    def test_single_void_element(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        kit = kit_ref()
        K = assemble_stiffness(g, d, kit, np.zeros(1), LAW_REF, np.zeros(1, bool))
        np.testing.assert_allclose(
            K.toarray()[np.ix_(d.rows[0], d.rows[0])], LAW_REF.alpha * kit.KE, rtol=1e-12
        )

    def test_cut_element_uses_subintegrated_matrix(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        kit = kit_ref()
        K = assemble_stiffness(g, d, kit, np.full(1, 0.5), LAW_REF, np.ones(1, bool))
        from unvartop.material import interp_property

        coeff = interp_property(0.5, LAW_REF, "stiffness")
        np.testing.assert_allclose(
            K.toarray()[np.ix_(d.rows[0], d.rows[0])], coeff * kit.KE_cut, rtol=1e-13
        )

    def test_two_element_dense_oracle(self):
        g = build_grid(2, 1)
        d = dof_table(g, 2)
        kit = kit_ref()
        chi = np.array([1.0, 0.4])
        cut = np.array([False, True])
        K = assemble_stiffness(g, d, kit, chi, LAW_REF, cut).toarray()
        from unvartop.material import interp_property

        dense = np.zeros((d.n_dofs, d.n_dofs))
        for e in range(2):
            ke = kit.KE_cut if cut[e] else kit.KE
            ce = interp_property(chi[e], LAW_REF, "stiffness")
            dense[np.ix_(d.rows[e], d.rows[e])] += ce * ke
        np.testing.assert_allclose(K, dense, atol=1e-14)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        assert np.linalg.eigvalsh(dense).min() > -1e-12

    def test_assembly_psd_random_chi(self):
        rng = np.random.default_rng(7)
        g = build_grid(5, 4)
        d = dof_table(g, 2)
        kit = kit_ref()
        chi = rng.uniform(0, 1, g.n_elems)
        cut = rng.uniform(size=g.n_elems) < 0.3
        K = assemble_stiffness(g, d, kit, chi, LAW_REF, cut)
        scale = abs(K).sum()
        for _ in range(20):
            x = rng.standard_normal(d.n_dofs)
            assert x @ (K @ x) >= -1e-12 * scale * (x @ x)

    def test_assembly_linearity_per_element(self):
        g = build_grid(3, 2)
        d = dof_table(g, 2)
        kit = kit_ref()
        chi = np.full(g.n_elems, 0.7)
        cut = np.zeros(g.n_elems, bool)
        K1 = assemble_stiffness(g, d, kit, chi, LAW_REF, cut).toarray()
        # doubling one element's coefficient changes K by that element's scatter
        from unvartop.material import interp_property

        e = 2
        c_e = interp_property(chi[e], LAW_REF, "stiffness")
        chi2 = chi.copy()
        # pick chi2[e] so the new coefficient is exactly 2*c_e
        law = LAW_REF
        target = (2 * c_e) ** (1 / law.m)
        chi2[e] = (target - law.beta) / (1 - law.beta)
        K2 = assemble_stiffness(g, d, kit, chi2, law, cut).toarray()
        diff = np.zeros_like(K1)
        diff[np.ix_(d.rows[e], d.rows[e])] = c_e * kit.KE
        np.testing.assert_allclose(K2 - K1, diff, atol=1e-12)

    def test_springs_added_unscaled(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        kit = kit_ref()
        springs = [(0, 0.01), (5, 0.02)]
        K0 = assemble_stiffness(g, d, kit, np.zeros(1), LAW_REF, np.zeros(1, bool))
        K1 = assemble_stiffness(g, d, kit, np.zeros(1), LAW_REF, np.zeros(1, bool), springs)
        diff = (K1 - K0).toarray()
        expected = np.zeros((8, 8))
        expected[0, 0] = 0.01
        expected[5, 5] = 0.02
        np.testing.assert_allclose(diff, expected, atol=1e-16)

    def test_spring_out_of_range(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        with pytest.raises(ValueError):
            assemble_stiffness(
                g, d, kit_ref(), np.ones(1), LAW_REF, np.zeros(1, bool), [(99, 0.01)]
            )


def cantilever_system(nelx=1, nely=1, strategy_load=1.0):
    g = build_grid(nelx, nely)
    d = dof_table(g, 2)
    kit = kit_ref()
    K = assemble_stiffness(
        g, d, kit, np.ones(g.n_elems), LAW_REF, np.zeros(g.n_elems, bool)
    )
    left = select_nodes(g, lambda x, y: x == 0)
    fixed = np.concatenate([2 * left, 2 * left + 1])
    tip = select_nodes(g, lambda x, y: (x == nelx) & (y == 0))
    F = np.zeros(d.n_dofs)
    F[2 * tip[0] + 1] = -strategy_load
    return SparseSystem(matrix=K, loads=F, fixed_dofs=np.sort(fixed))


class TestSolve:
    def test_direct_vs_iterative(self):
        sys_ = cantilever_system()
        u_d = solve_linear(sys_, "direct")
        u_i = solve_linear(sys_, "iterative")
        num = np.linalg.norm(u_d - u_i)
        assert num / np.linalg.norm(u_d) < 1e-8

    def test_direct_vs_iterative_larger(self):
        sys_ = cantilever_system(8, 5)
        u_d = solve_linear(sys_, "direct")
        u_i = solve_linear(sys_, "iterative")
        assert np.linalg.norm(u_d - u_i) / np.linalg.norm(u_d) < 1e-8

    def test_all_dofs_fixed(self):
        sys_ = cantilever_system()
        sys_all = SparseSystem(
            matrix=sys_.matrix,
            loads=sys_.loads,
            fixed_dofs=np.arange(8),
            prescribed=np.arange(8, dtype=float),
        )
        u = solve_linear(sys_all)
        np.testing.assert_array_equal(u[:, 0], np.arange(8, dtype=float))

    def test_identity_system(self):
        import scipy.sparse as sp

        F = np.zeros(5)
        F[3] = 1.0
        sys_ = SparseSystem(sp.identity(5, format="csc"), F, np.array([], dtype=int))
        u = solve_linear(sys_)
        np.testing.assert_allclose(u[:, 0], F)

    def test_fixed_dofs_carry_prescribed_values(self):
        sys_ = cantilever_system(2, 2)
        u = solve_linear(sys_)
        np.testing.assert_array_equal(u[sys_.fixed_dofs, 0], 0.0)

    def test_underconstrained_fails_with_diagnostic(self):
        g = build_grid(1, 1)
        d = dof_table(g, 2)
        K = assemble_stiffness(
            g, d, kit_ref(), np.ones(1), LAW_REF, np.zeros(1, bool)
        )
        sys_ = SparseSystem(K, np.ones(8), np.array([], dtype=int))
        with pytest.raises(SolveFailure):
            solve_linear(sys_)

    def test_multi_column(self):
        sys_ = cantilever_system(3, 2)
        F2 = np.column_stack([sys_.loads[:, 0], 2 * sys_.loads[:, 0]])
        sys2 = SparseSystem(sys_.matrix, F2, sys_.fixed_dofs)
        u = solve_linear(sys2)
        np.testing.assert_allclose(u[:, 1], 2 * u[:, 0], rtol=1e-12)

    def test_patch_uniform_traction(self):
        # uniaxial stress state: fix u_x on the left edge, u_y on the bottom,
        # apply the consistent nodal loads of a unit traction on the right edge
        nelx, nely = 4, 3
        g = build_grid(nelx, nely)
        d = dof_table(g, 2)
        K = assemble_stiffness(
            g, d, kit_ref(), np.ones(g.n_elems), LAW_REF, np.zeros(g.n_elems, bool)
        )
        left = select_nodes(g, lambda x, y: x == 0)
        bottom = select_nodes(g, lambda x, y: y == 0)
        fixed = np.unique(np.concatenate([2 * left, 2 * bottom + 1]))
        right = select_nodes(g, lambda x, y: x == nelx)
        F = np.zeros(d.n_dofs)
        for n in right:
            y = g.coords[n, 1]
            F[2 * n] = 0.5 if y in (0, nely) else 1.0
        u = solve_linear(SparseSystem(K, F, fixed))
        E, nu = 1.0, 0.3
        exx, eyy = 1.0 / E, -nu / E
        ux_exact = exx * g.coords[:, 0]
        uy_exact = eyy * g.coords[:, 1]
        np.testing.assert_allclose(u[0::2, 0], ux_exact, atol=1e-9)
        np.testing.assert_allclose(u[1::2, 0], uy_exact, atol=1e-9)
