"""
Continuous problem definitions: domain, horizon, drift, diffusion and initial data

Nonlinearities act pointwise on nodal values. All callables are module-level
(or frozen dataclass instances) so specs can be shipped to worker processes.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from .config import DEFAULT_MODE
from .errors import ConfigError
from .matching import unknown_name_message

logger = logging.getLogger(__name__)

ScalarMap = Callable[[np.ndarray], np.ndarray]

BOUNDARY_TOL = 1e-8


def zero(u):
    return np.zeros_like(np.asarray(u, dtype=float))


def one(u):
    return np.ones_like(np.asarray(u, dtype=float))


def identity(u):
    return np.asarray(u, dtype=float)


def negate(u):
    return -np.asarray(u, dtype=float)


@dataclass(frozen=True)
class SineMode:
    """x -> sin(k*pi*x); vanishes at integer endpoints"""
    k: int

    def __call__(self, x):
        return np.sin(self.k * np.pi * np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ProblemSpec:
    """The continuous problem du_t - Delta u = F(u) dt + sigma(u) dW"""
    name: str
    domain: Tuple[float, float]
    T: float
    drift: ScalarMap
    diffusion: ScalarMap
    diffusion_derivative: ScalarMap
    u0: Callable
    v0: Callable
    lipschitz_F: float
    lipschitz_sigma: float

    def __post_init__(self):
        a, b = self.domain
        if not a < b:
            raise ConfigError(f"domain needs a < b, got {self.domain}")
        if not self.T > 0:
            raise ConfigError(f"horizon T must be positive, got {self.T}")
        if self.lipschitz_F < 0 or self.lipschitz_sigma < 0:
            raise ConfigError("Lipschitz constants must be nonnegative")
        ends = np.asarray(self.u0(np.array([a, b])), dtype=float)
        if np.max(np.abs(ends)) > BOUNDARY_TOL:
            raise ConfigError(
                f"u0 must vanish on the Dirichlet boundary, got u0(a)={ends[0]:.3e}, u0(b)={ends[1]:.3e}"
            )

    @property
    def noise_free(self) -> bool:
        """True when sigma is the builtin zero map, so no Brownian path is needed"""
        return self.diffusion is zero

    def with_horizon(self, T: float) -> "ProblemSpec":
        return dataclasses.replace(self, T=T)


def _interval_spec(name: str, drift, diffusion, derivative, lip_F: float, lip_sigma: float, mode: int) -> ProblemSpec:
    return ProblemSpec(
        name=name,
        domain=(-1.0, 1.0),
        T=1.0,
        drift=drift,
        diffusion=diffusion,
        diffusion_derivative=derivative,
        u0=SineMode(mode),
        v0=zero,
        lipschitz_F=lip_F,
        lipschitz_sigma=lip_sigma,
    )


# Builtin problems
BUILTINS: Dict[str, Dict] = {
    'test1': {
        'description': 'F(u) = -u, sigma(u) = u',
        'args': (negate, identity, one, 1.0, 1.0),
    },
    'test2': {
        'description': 'F(u) = cos(u), sigma(u) = sin(u)',
        'args': (np.cos, np.sin, np.cos, 1.0, 1.0),
    },
    'deterministic': {
        'description': 'F = 0, sigma = 0 (oracle runs)',
        'args': (zero, zero, zero, 0.0, 0.0),
    },
    'additive': {
        'description': 'F = 0, sigma = 1 (additive noise)',
        'args': (zero, one, zero, 0.0, 0.0),
    },
}


def builtin(name: str, mode: int = DEFAULT_MODE) -> ProblemSpec:
    """
    Return a builtin problem on (-1, 1) with T = 1, u0 = sin(mode*pi*x), v0 = 0.

    Raises:
        ConfigError: if name is not a builtin
    """
    entry = BUILTINS.get(name)
    if entry is None:
        raise ConfigError(unknown_name_message("problem", name, BUILTINS))
    if mode < 0:
        raise ConfigError(f"initial mode must be nonnegative, got {mode}")
    return _interval_spec(name, *entry['args'], mode=mode)


def check_lipschitz(
    spec: ProblemSpec, pairs: int = 10_000, bound: float = 10.0, seed: int = 0
) -> Tuple[float, float]:
    """
    Largest observed difference quotients of F and sigma on random pairs in [-bound, bound].

    Returns:
        (worst ratio for F, worst ratio for sigma); compare against the declared constants
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-bound, bound, pairs)
    y = rng.uniform(-bound, bound, pairs)
    gap = np.abs(x - y)
    keep = gap > 0
    ratio_F = np.abs(spec.drift(x) - spec.drift(y))[keep] / gap[keep]
    ratio_sigma = np.abs(spec.diffusion(x) - spec.diffusion(y))[keep] / gap[keep]
    return float(ratio_F.max(initial=0.0)), float(ratio_sigma.max(initial=0.0))


def lipschitz_holds(spec: ProblemSpec, **kwargs) -> bool:
    worst_F, worst_sigma = check_lipschitz(spec, **kwargs)
    slack = 1e-12
    return worst_F <= spec.lipschitz_F + slack and worst_sigma <= spec.lipschitz_sigma + slack


def derivative_error(spec: ProblemSpec, points: int = 1_000, eps: float = 1e-5, seed: int = 0) -> float:
    """Max deviation of the declared sigma' from central differences of sigma"""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-10.0, 10.0, points)
    central = (spec.diffusion(u + eps) - spec.diffusion(u - eps)) / (2.0 * eps)
    return float(np.max(np.abs(central - spec.diffusion_derivative(u))))
