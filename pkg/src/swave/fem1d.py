"""
P1 finite elements on a uniform interval with homogeneous Dirichlet boundary

Mass and stiffness matrices are tridiagonal. Shifted systems (M + alpha A)
are factored once per alpha with a banded Cholesky and cached on the
operators, so every trajectory built on the same mesh reuses them.
"""

import logging
import threading
from typing import Callable, Dict

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.linalg import cho_solve_banded, cholesky_banded

from .errors import MeshError, NonFiniteFieldError
from .models import Field, SpatialMesh

logger = logging.getLogger(__name__)

# 3-point Gauss rule on the reference element [0, 1]
GAUSS_POINTS = 0.5 + 0.5 * np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


class FemOperators:
    """Mass matrix M, stiffness matrix A and the factorization cache for M + alpha*A"""

    def __init__(self, mesh: SpatialMesh):
        self.mesh = mesh
        n = mesh.interior_count
        h = mesh.h

        # Tridiagonal bands: (diagonal, off-diagonal)
        self.mass_bands = (np.full(n, 2.0 * h / 3.0), np.full(n - 1, h / 6.0))
        self.stiffness_bands = (np.full(n, 2.0 / h), np.full(n - 1, -1.0 / h))

        self.mass = _tridiagonal(*self.mass_bands)
        self.stiffness = _tridiagonal(*self.stiffness_bands)

        self._factors: Dict[float, NDArray[np.float64]] = {}
        self._lock = threading.Lock()
        self.factorizations = 0

    @property
    def size(self) -> int:
        return self.mesh.interior_count

    def factor(self, alpha: float) -> NDArray[np.float64]:
        """Upper banded Cholesky factor of M + alpha*A, computed once per alpha"""
        key = float(alpha)
        cached = self._factors.get(key)
        if cached is not None:
            return cached

        with self._lock:
            cached = self._factors.get(key)
            if cached is None:
                diag = self.mass_bands[0] + key * self.stiffness_bands[0]
                off = self.mass_bands[1] + key * self.stiffness_bands[1]
                banded = np.zeros((2, self.size))
                banded[0, 1:] = off
                banded[1, :] = diag
                try:
                    cached = cholesky_banded(banded, lower=False)
                except np.linalg.LinAlgError as e:
                    # M and A are SPD, so this only happens for alpha < 0 or corrupted bands
                    raise RuntimeError(f"factorization of M + {key}*A failed: {e}") from e
                self._factors[key] = cached
                self.factorizations += 1
                logger.debug(f"Factored M + {key:.6g}*A (n={self.size})")
        return cached

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()


def _tridiagonal(diag: NDArray[np.float64], off: NDArray[np.float64]) -> sp.csr_matrix:
    if off.size == 0:
        return sp.csr_matrix(diag.reshape(1, 1))
    return sp.diags([off, diag, off], [-1, 0, 1], format="csr")


def assemble_operators(mesh: SpatialMesh) -> FemOperators:
    """Assemble the P1 mass and stiffness matrices of a uniform mesh"""
    ops = FemOperators(mesh)
    logger.debug(f"Assembled P1 operators on ({mesh.a}, {mesh.b}), m={mesh.m}, h={mesh.h:.4g}")
    return ops


def check_field(u: Field, ops: FemOperators, name: str = "field") -> Field:
    """Reject fields of the wrong length or with NaN/Inf entries"""
    if u.shape != (ops.size,):
        raise MeshError(f"{name} has shape {u.shape}, expected ({ops.size},)")
    if not np.all(np.isfinite(u)):
        raise NonFiniteFieldError(f"{name} contains NaN or Inf entries")
    return u


def _quadrature_points(mesh: SpatialMesh) -> NDArray[np.float64]:
    """Gauss points of every element, shape (m, 3)"""
    left = mesh.a + mesh.h * np.arange(mesh.m)
    return left[:, None] + mesh.h * GAUSS_POINTS[None, :]


def _evaluate(f: Callable, points: NDArray[np.float64]) -> NDArray[np.float64]:
    values = np.broadcast_to(np.asarray(f(points), dtype=float), points.shape)
    if not np.all(np.isfinite(values)):
        raise NonFiniteFieldError("function is not finite on the quadrature points")
    return values


def load_vector(f: Callable, mesh: SpatialMesh) -> Field:
    """Load vector (f, phi_i) for the interior hat functions"""
    values = _evaluate(f, _quadrature_points(mesh))
    weights = mesh.h * GAUSS_WEIGHTS
    left = values @ (weights * (1.0 - GAUSS_POINTS))  # contribution to node e
    right = values @ (weights * GAUSS_POINTS)  # contribution to node e+1

    full = np.zeros(mesh.m + 1)
    full[:-1] += left
    full[1:] += right
    return full[1:-1]


def l2_project(f: Callable, mesh: SpatialMesh, ops: FemOperators) -> Field:
    """L2 projection Q_h f onto V_h"""
    return solve_shifted(ops, 0.0, load_vector(f, mesh))


def l2_error(u: Field, f: Callable, mesh: SpatialMesh) -> float:
    """||u_h - f||_{L2} evaluated by element-wise Gauss quadrature"""
    if u.shape != (mesh.interior_count,):
        raise MeshError(f"field has shape {u.shape}, expected ({mesh.interior_count},)")
    full = np.concatenate(([0.0], u, [0.0]))
    uh = full[:-1, None] * (1.0 - GAUSS_POINTS[None, :]) + full[1:, None] * GAUSS_POINTS[None, :]
    diff = uh - _evaluate(f, _quadrature_points(mesh))
    return float(np.sqrt(np.sum(diff**2 @ (mesh.h * GAUSS_WEIGHTS))))


def _quadratic_form(matrix: sp.csr_matrix, u: Field, ops: FemOperators) -> float:
    if u.shape != (ops.size,):
        raise MeshError(f"field has shape {u.shape}, expected ({ops.size},)")
    return max(float(u @ (matrix @ u)), 0.0)


def norm_l2(u: Field, ops: FemOperators) -> float:
    """sqrt(u^T M u)"""
    return float(np.sqrt(_quadratic_form(ops.mass, u, ops)))


def norm_h1_semi(u: Field, ops: FemOperators) -> float:
    """sqrt(u^T A u)"""
    return float(np.sqrt(_quadratic_form(ops.stiffness, u, ops)))


def solve_shifted(ops: FemOperators, alpha: float, rhs: Field) -> Field:
    """Solve (M + alpha*A) x = rhs with rhs in load (mass-weighted) form"""
    if alpha < 0:
        raise ValueError(f"shift alpha must be nonnegative, got {alpha}")
    if rhs.shape != (ops.size,):
        raise MeshError(f"rhs has shape {rhs.shape}, expected ({ops.size},)")
    return cho_solve_banded((ops.factor(alpha), False), rhs)


def apply_discrete_laplacian(ops: FemOperators, u: Field) -> Field:
    """Delta_h u = -M^{-1} A u"""
    if u.shape != (ops.size,):
        raise MeshError(f"field has shape {u.shape}, expected ({ops.size},)")
    return -solve_shifted(ops, 0.0, ops.stiffness @ u)


def prolong(u: Field, coarse: SpatialMesh, fine: SpatialMesh) -> Field:
    """Nodal values on `fine` of the P1 function u defined on `coarse`"""
    if u.shape != (coarse.interior_count,):
        raise MeshError(f"field has shape {u.shape}, expected ({coarse.interior_count},)")
    full_x = coarse.a + coarse.h * np.arange(coarse.m + 1)
    full_u = np.concatenate(([0.0], u, [0.0]))
    return np.interp(fine.nodes, full_x, full_u)
