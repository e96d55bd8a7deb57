"""
Tests for the P1 finite element operators
"""

import pickle

import numpy as np
import pytest
import scipy.linalg

from src.swave.errors import MeshError, NonFiniteFieldError
from src.swave.fem1d import (
    apply_discrete_laplacian, assemble_operators, check_field, l2_error, l2_project,
    norm_h1_semi, norm_l2, prolong, solve_shifted
)
from src.swave.models import SpatialMesh


def hat_function(mesh, i):
    """The interior hat function phi_i (0-based interior index) as a callable"""
    nodes = mesh.a + mesh.h * np.arange(mesh.m + 1)
    values = np.zeros(mesh.m + 1)
    values[i + 1] = 1.0
    return lambda x: np.interp(x, nodes, values)


class TestAssembly:
    def test_stencil_values(self, coarse_mesh):
        ops = assemble_operators(coarse_mesh)
        M, A = ops.mass.toarray(), ops.stiffness.toarray()

        assert M.shape == (3, 3)
        np.testing.assert_allclose(np.diag(M), 1.0 / 3.0)
        np.testing.assert_allclose(np.diag(M, 1), 1.0 / 12.0)
        np.testing.assert_allclose(np.diag(A), 4.0)
        np.testing.assert_allclose(np.diag(A, 1), -2.0)
        assert ops.factorizations == 0

    def test_single_interior_node(self):
        ops = assemble_operators(SpatialMesh(0.0, 1.0, 2))
        np.testing.assert_allclose(ops.mass.toarray(), [[1.0 / 3.0]])
        np.testing.assert_allclose(ops.stiffness.toarray(), [[4.0]])

    def test_stiffness_rows_telescope(self, fine_ops):
        assert fine_ops.size == 1023
        sums = np.asarray(fine_ops.stiffness.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums[1:-1], 0.0, atol=1e-9)
        assert sums[0] > 0 and sums[-1] > 0

    def test_symmetric_positive(self, small_ops, rng):
        M, A = small_ops.mass, small_ops.stiffness
        for _ in range(20):
            u = rng.standard_normal(small_ops.size)
            w = rng.standard_normal(small_ops.size)
            assert u @ (M @ w) == pytest.approx(w @ (M @ u), rel=1e-12)
            assert u @ (A @ w) == pytest.approx(w @ (A @ u), rel=1e-12)
            assert u @ (M @ u) > 0
            assert u @ (A @ u) > 0

    @pytest.mark.parametrize("a,b,m", [(1.0, 1.0, 4), (1.0, -1.0, 4), (0.0, 1.0, 1)])
    def test_invalid_mesh(self, a, b, m):
        with pytest.raises(MeshError):
            SpatialMesh(a, b, m)


class TestProjection:
    def test_zero_function(self, small_mesh, small_ops):
        c = l2_project(lambda x: np.zeros_like(x), small_mesh, small_ops)
        assert np.all(c == 0.0)

    def test_sine_norm(self, fine_mesh, fine_ops):
        c = l2_project(lambda x: np.sin(2 * np.pi * x), fine_mesh, fine_ops)
        assert abs(norm_l2(c, fine_ops) - 1.0) < 1e-4

    def test_reproduces_hat_function(self, small_mesh, small_ops):
        i = 7
        c = l2_project(hat_function(small_mesh, i), small_mesh, small_ops)
        expected = np.zeros(small_ops.size)
        expected[i] = 1.0
        np.testing.assert_allclose(c, expected, atol=1e-12)

    def test_h1_seminorm_of_sine(self, fine_mesh, fine_ops):
        c = l2_project(lambda x: np.sin(np.pi * x), fine_mesh, fine_ops)
        assert abs(norm_h1_semi(c, fine_ops) - np.pi) < 1e-3

    def test_projection_error_decays(self):
        f = lambda x: np.exp(x) * np.sin(np.pi * x)  # noqa: E731
        errors = []
        for m in (16, 32, 64):
            mesh = SpatialMesh(-1.0, 1.0, m)
            ops = assemble_operators(mesh)
            errors.append(l2_error(l2_project(f, mesh, ops), f, mesh))
        assert errors[0] / errors[1] > 1.9
        assert errors[1] / errors[2] > 1.9

    def test_non_finite_function(self, small_mesh, small_ops):
        with pytest.raises(NonFiniteFieldError):
            l2_project(lambda x: 1.0 / (x - x), small_mesh, small_ops)


class TestNorms:
    def test_unit_coordinate(self, coarse_mesh):
        ops = assemble_operators(coarse_mesh)
        e = np.array([0.0, 1.0, 0.0])
        assert norm_l2(e, ops) == pytest.approx(np.sqrt(1.0 / 3.0), rel=1e-12)
        assert norm_h1_semi(e, ops) == pytest.approx(2.0, rel=1e-12)

    def test_zero_field(self, small_ops):
        zero = np.zeros(small_ops.size)
        assert norm_l2(zero, small_ops) == 0.0
        assert norm_h1_semi(zero, small_ops) == 0.0

    def test_dimension_mismatch(self, small_ops):
        with pytest.raises(MeshError):
            norm_l2(np.zeros(small_ops.size + 1), small_ops)
        with pytest.raises(MeshError):
            norm_h1_semi(np.zeros(3), small_ops)

    def test_check_field(self, small_ops):
        bad = np.zeros(small_ops.size)
        bad[3] = np.nan
        with pytest.raises(NonFiniteFieldError):
            check_field(bad, small_ops, "u")
        with pytest.raises(MeshError):
            check_field(np.zeros(2), small_ops, "u")


class TestShiftedSolve:
    @pytest.mark.parametrize("alpha", [0.0, 1.0, 1.0 / 512])
    def test_round_trip(self, small_ops, rng, alpha):
        c = rng.standard_normal(small_ops.size)
        rhs = small_ops.mass @ c + alpha * (small_ops.stiffness @ c)
        x = solve_shifted(small_ops, alpha, rhs)
        residual = small_ops.mass @ x + alpha * (small_ops.stiffness @ x) - rhs
        assert np.linalg.norm(residual) <= 1e-12 * np.linalg.norm(rhs)
        np.testing.assert_allclose(x, c, rtol=1e-10, atol=1e-12)

    def test_factorization_cached(self, small_ops, rng):
        rhs = rng.standard_normal(small_ops.size)
        first = solve_shifted(small_ops, 0.25, rhs)
        second = solve_shifted(small_ops, 0.25, rhs)
        assert np.array_equal(first, second)
        assert small_ops.factorizations == 1
        solve_shifted(small_ops, 0.5, rhs)
        assert small_ops.factorizations == 2

    def test_negative_shift(self, small_ops):
        with pytest.raises(ValueError):
            solve_shifted(small_ops, -1.0, np.zeros(small_ops.size))

    def test_operators_pickle(self, small_ops, rng):
        rhs = rng.standard_normal(small_ops.size)
        expected = solve_shifted(small_ops, 0.5, rhs)
        clone = pickle.loads(pickle.dumps(small_ops))
        assert clone.factorizations == 1
        assert np.array_equal(solve_shifted(clone, 0.5, rhs), expected)
        assert clone.factorizations == 1


class TestDiscreteLaplacian:
    def test_zero(self, small_ops):
        assert np.all(apply_discrete_laplacian(small_ops, np.zeros(small_ops.size)) == 0.0)

    def test_eigenfunction(self, fine_mesh, fine_ops):
        u = l2_project(lambda x: np.sin(np.pi * x), fine_mesh, fine_ops)
        expected = l2_project(lambda x: -np.pi**2 * np.sin(np.pi * x), fine_mesh, fine_ops)
        assert norm_l2(apply_discrete_laplacian(fine_ops, u) - expected, fine_ops) < 1e-2

    def test_bounded_by_largest_eigenvalue(self, small_ops, rng):
        lam_max = scipy.linalg.eigh(
            small_ops.stiffness.toarray(), small_ops.mass.toarray(), eigvals_only=True
        ).max()
        for _ in range(10):
            u = rng.standard_normal(small_ops.size)
            lap = apply_discrete_laplacian(small_ops, u)
            assert norm_l2(lap, small_ops) <= lam_max * norm_l2(u, small_ops) * (1 + 1e-10)


class TestProlong:
    def test_midpoints_average(self):
        coarse = SpatialMesh(-1.0, 1.0, 8)
        fine = SpatialMesh(-1.0, 1.0, 16)
        u = np.arange(1.0, 8.0)
        v = prolong(u, coarse, fine)
        np.testing.assert_allclose(v[1::2], u)
        np.testing.assert_allclose(v[2:-1:2], 0.5 * (u[:-1] + u[1:]))
        assert v[0] == pytest.approx(0.5) and v[-1] == pytest.approx(3.5)
