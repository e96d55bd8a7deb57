"""
Data models shared across the simulator modules
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigError, MeshError

# Nodal values of a V_h function at the interior nodes
Field = NDArray[np.float64]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform mesh of (a, b) with m subintervals; Dirichlet nodes carry no unknowns"""
    a: float
    b: float
    m: int

    def __post_init__(self):
        if not self.a < self.b:
            raise MeshError(f"mesh needs a < b, got ({self.a}, {self.b})")
        if self.m < 2:
            raise MeshError(f"mesh needs m >= 2 subintervals, got {self.m}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.m

    @property
    def interior_count(self) -> int:
        return self.m - 1

    @property
    def nodes(self) -> NDArray[np.float64]:
        """Interior node coordinates"""
        return self.a + self.h * np.arange(1, self.m)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T] into N steps"""
    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError(f"horizon T must be positive, got {self.T}")
        if self.N < 2 or not is_power_of_two(self.N):
            raise ConfigError(f"step count N must be a power of two >= 2, got {self.N}")

    @property
    def tau(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> NDArray[np.float64]:
        return self.tau * np.arange(self.N + 1)


@dataclass(frozen=True)
class NoiseSeed:
    """Key of one reproducible Brownian path"""
    base_seed: int
    sample_index: int = 0

    def __post_init__(self):
        if self.sample_index < 0:
            raise ConfigError(f"sample_index must be nonnegative, got {self.sample_index}")


@dataclass
class IncrementLevel:
    """Coupled Brownian increments of one time level"""
    grid: TimeGrid
    bar: NDArray[np.float64]  # W(t_{n+1}) - W(t_n)
    hat: NDArray[np.float64]  # sub-mesh approximation of int (W(t_{n+1}) - W(s)) ds
    tilde: NDArray[np.float64]  # same integral at the streamed base resolution
    terminal: float  # W(T) = pairwise_sum(bar) on every level; np.sum(bar) may differ in the last bits


@dataclass(frozen=True)
class SchemeConfig:
    """theta-scheme settings"""
    theta: float
    grid: TimeGrid
    picard_tol: float = 1e-10
    picard_max: int = 50

    def __post_init__(self):
        if self.theta not in (0.0, 0.5):
            raise ConfigError(f"theta must be 0 or 0.5, got {self.theta}")
        if not self.picard_tol > 0:
            raise ConfigError(f"picard_tol must be positive, got {self.picard_tol}")
        if self.picard_max < 1:
            raise ConfigError(f"picard_max must be >= 1, got {self.picard_max}")


@dataclass
class TrajectoryState:
    """Discrete pair (u^n, v^n) plus the lag u^{n-1} used by theta=1/2"""
    n: int
    u_curr: Field
    v_curr: Field
    u_prev: Optional[Field] = None
    iterations: int = 0  # Picard iterations spent on this step


@dataclass
class TrajectoryResult:
    """Recorded fields and per-step diagnostics of one rollout"""
    recorded: Dict[int, Tuple[Field, Field]] = field(default_factory=dict)
    energy: NDArray[np.float64] = field(default_factory=lambda: np.zeros(0))
    picard_total: int = 0
    picard_peak: int = 0


@dataclass(frozen=True)
class ConvergenceConfig:
    """One strong-error study: fixed mesh, varying tau, shared Brownian paths"""
    problem: str
    theta: float
    m: int
    levels: Tuple[int, ...]
    reference: int
    samples: int
    base_seed: int
    T: float = 1.0
    mode: int = 2
    error_norm: str = "rms-max"
    quadrature: str = "affine"
    workers: int = 1

    def __post_init__(self):
        if self.theta not in (0.0, 0.5):
            raise ConfigError(f"theta must be 0 or 0.5, got {self.theta}")
        if not self.levels:
            raise ConfigError("at least one time level is required")
        if list(self.levels) != sorted(set(self.levels)):
            raise ConfigError(f"levels must be strictly increasing, got {list(self.levels)}")
        for n in (*self.levels, self.reference):
            if n < 2 or not is_power_of_two(n):
                raise ConfigError(f"{n} is not a power of two >= 2")
        if self.reference % self.levels[-1] != 0:
            raise ConfigError(
                f"reference N_ref={self.reference} must be a multiple of every level"
            )
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.m < 8:
            raise ConfigError(f"spatial m must be >= 8, got {self.m}")
        if self.error_norm not in ("rms-max", "max-rms"):
            raise ConfigError(f"unknown error norm {self.error_norm!r}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass
class ErrorRecord:
    """Errors of one sample at every level against the path-coupled reference"""
    sample_index: int
    levels: Tuple[int, ...]
    u_l2: NDArray[np.float64]  # max_n ||e_u^n||_{L2}, one entry per level
    u_h1: NDArray[np.float64]  # max_n |e_u^n|_{H1}
    v_l2: NDArray[np.float64]  # max_n ||e_v^n||_{L2}
    # squared errors at each coarse time t_1..t_N, shape (3, N) per level
    pointwise: List[NDArray[np.float64]] = field(default_factory=list)


@dataclass
class LevelRow:
    """One line of a convergence table"""
    N: int
    tau: float
    err: Tuple[float, float, float]  # u_L2, u_H1, v_L2
    se: Tuple[float, float, float]
    order: Tuple[Optional[float], Optional[float], Optional[float]] = (None, None, None)


@dataclass
class ConvergenceReport:
    """RMS errors, Monte Carlo standard errors and orders per level"""
    config: ConvergenceConfig
    rows: List[LevelRow] = field(default_factory=list)
    slopes: Tuple[Optional[float], Optional[float], Optional[float]] = (None, None, None)


@dataclass
class MomentReport:
    """Monte Carlo moments of the increments on one grid"""
    tau: float
    samples: int
    m2_bar: float
    se_bar: float
    m2_hat: float
    se_hat: float
    m2_diff: float
    se_diff: float


@dataclass
class StabilityRow:
    """Mean over samples of max_n discrete energy at one level"""
    N: int
    tau: float
    mean_max_energy: float
    se: float
    rel_dev: float = 0.0  # relative to the finest level
    flagged: bool = False


@dataclass
class StabilityReport:
    problem: str
    theta: float
    samples: int
    growth: float
    rows: List[StabilityRow] = field(default_factory=list)

    @property
    def stable(self) -> bool:
        return not any(row.flagged for row in self.rows)


@dataclass
class SpatialRow:
    """Difference between one mesh and the next finer mesh on the same path"""
    m: int
    h: float
    diff_u_h1: float  # max_n |u_m^n - u_2m^n|_{H1}
    diff_v_l2: float  # max_n ||v_m^n - v_2m^n||_{L2}
