"""
Coupled Brownian increments on nested time levels

One Brownian path per (base_seed, sample_index) is streamed on a fine
sub-mesh, one finest time step at a time. Every requested level gets its
plain increments W(t_{n+1}) - W(t_n) and the sub-mesh quadrature of
int_{t_n}^{t_{n+1}} (W(t_{n+1}) - W(s)) ds from the same path, so coarse
and fine levels are couplings of one realisation. Memory stays O(sum N_j).
"""

import logging
import math
from typing import Dict, List, Sequence

import numpy as np

from .config import MAX_SUBSTEPS, REFERENCE_REFINE, SUBMESH_QUADRATURE
from .errors import ConfigError, NoiseError
from .models import IncrementLevel, MomentReport, NoiseSeed, TimeGrid, is_power_of_two

logger = logging.getLogger(__name__)

_UINT64_MASK = (1 << 64) - 1

# weight of the end-point correction turning the right-endpoint sum into
# the integral of the piecewise affine interpolant
_ENDPOINT_WEIGHT = {"affine": 0.5, "right": 0.0}


def make_generator(seed: NoiseSeed) -> np.random.Generator:
    """Counter-based Philox stream keyed by (base_seed, sample_index)"""
    key = np.array([seed.base_seed & _UINT64_MASK, seed.sample_index & _UINT64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def submesh_count(grid: TimeGrid) -> int:
    """Sub-steps per time step: smallest power of two >= tau^-2 (N^2 when T = 1)"""
    target = grid.N**2 / grid.T**2
    count = 1
    while count < target:
        count <<= 1
    return count


def _reduce_pairs(values: np.ndarray) -> np.ndarray:
    return values.reshape(-1, 2).sum(axis=1)


def pairwise_sum(values: np.ndarray) -> float:
    """
    Sum of a power-of-two length array by repeated pairwise reduction.

    This is the order every level's increments are nested in, so
    pairwise_sum(level.bar) == level.terminal bit for bit on any level;
    np.sum may differ in the last bits.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 1 or not is_power_of_two(values.size):
        raise NoiseError(f"pairwise_sum needs a power-of-two length, got {values.size}")
    while values.size > 1:
        values = _reduce_pairs(values)
    return float(values[0])


def _check_levels(levels: Sequence[int]) -> List[int]:
    levels = [int(n) for n in levels]
    if not levels:
        raise NoiseError("at least one level is required")
    if levels != sorted(set(levels)):
        raise NoiseError(f"levels must be strictly increasing, got {levels}")
    finest = levels[-1]
    for n in levels:
        if n < 2 or not is_power_of_two(n):
            raise NoiseError(f"level {n} is not a power of two >= 2")
        if finest % n != 0:
            raise NoiseError(f"level {n} does not divide the finest level {finest}")
    return levels


def simulate_increments(
    seed: NoiseSeed,
    T: float,
    levels: Sequence[int],
    refine: int = 1,
    quadrature: str = SUBMESH_QUADRATURE,
) -> List[IncrementLevel]:
    """
    Stream one Brownian path and return the coupled increments of every level.

    Args:
        seed: path key
        T: horizon
        levels: step counts N_1 < ... < N_L, powers of two dividing N_L
        refine: extra refinement of the streamed sub-mesh beyond what N_L needs
        quadrature: "affine" (integral of the piecewise affine interpolant)
            or "right" (right-endpoint Riemann sum)

    Returns:
        One IncrementLevel per requested level, in the order given
    """
    levels = _check_levels(levels)
    if refine < 1 or not is_power_of_two(refine):
        raise NoiseError(f"refine must be a power of two >= 1, got {refine}")
    if quadrature not in _ENDPOINT_WEIGHT:
        raise ConfigError(f"unknown sub-mesh quadrature {quadrature!r}")

    grids = [TimeGrid(T, n) for n in levels]
    finest = grids[-1]
    base = submesh_count(finest) * refine  # streamed sub-increments per finest step
    if finest.N * base > MAX_SUBSTEPS:
        raise NoiseError(
            f"sub-mesh of {finest.N * base} points exceeds the limit of {MAX_SUBSTEPS}"
        )
    delta_base = finest.tau / base
    scale = math.sqrt(delta_base)
    corr = _ENDPOINT_WEIGHT[quadrature]

    ratios = [finest.N // g.N for g in grids]
    strides = []
    for g, ratio in zip(grids, ratios):
        span = ratio * base  # base sub-steps per step of this level
        count = submesh_count(g)
        if span % count != 0:
            raise NoiseError(f"sub-mesh of N={g.N} is not nested in the streamed sub-mesh")
        strides.append(span // count)

    hats = [np.zeros(g.N) for g in grids]
    tildes = [np.zeros(g.N) for g in grids]
    sub_acc = [0.0] * len(grids)
    base_acc = [0.0] * len(grids)
    offset = [0.0] * len(grids)  # W(current point) - W(t_n) of each level
    fine_bar = np.zeros(finest.N)

    rng = make_generator(seed)
    for i in range(finest.N):
        path = np.cumsum(rng.standard_normal(base) * scale)  # W - W(t_i) at sub-points 1..base
        end = path[-1]
        path_sum = path.sum()
        fine_bar[i] = end

        for j, g in enumerate(grids):
            stride = strides[j]
            if stride <= base:
                points = path[stride - 1::stride]
                sub_acc[j] += points.sum() + points.size * offset[j]
            elif (i + 1) % (stride // base) == 0:
                sub_acc[j] += end + offset[j]
            base_acc[j] += path_sum + base * offset[j]
            offset[j] += end

            if (i + 1) % ratios[j] == 0:
                n = i // ratios[j]
                incr = offset[j]
                delta = g.tau / submesh_count(g)
                hats[j][n] = g.tau * incr - delta * (sub_acc[j] - corr * incr)
                tildes[j][n] = g.tau * incr - delta_base * (base_acc[j] - 0.5 * incr)
                sub_acc[j] = base_acc[j] = offset[j] = 0.0

    # Coarser increments are pairwise sums of finer ones, so nesting is bit-exact
    bars: Dict[int, np.ndarray] = {}
    current = fine_bar
    while True:
        bars[current.size] = current
        if current.size == 1:
            break
        current = _reduce_pairs(current)
    terminal = pairwise_sum(bars[finest.N])

    return [
        IncrementLevel(grid=g, bar=bars[g.N], hat=hats[j], tilde=tildes[j], terminal=terminal)
        for j, g in enumerate(grids)
    ]


def moment_report(
    samples: int,
    base_seed: int,
    grid: TimeGrid,
    refine: int = REFERENCE_REFINE,
    quadrature: str = SUBMESH_QUADRATURE,
) -> MomentReport:
    """
    Monte Carlo second moments of the increments on one grid.

    Steps within a path are independent, so every step of every sample is
    pooled. The reference increment is the same integral evaluated on a
    sub-mesh `refine` times finer, from the same stream.
    """
    if samples < 100:
        raise ConfigError(f"moment report needs at least 100 samples, got {samples}")
    if refine < 2:
        raise ConfigError(f"reference refinement must be >= 2, got {refine}")

    bar2 = np.empty((samples, grid.N))
    hat2 = np.empty((samples, grid.N))
    diff2 = np.empty((samples, grid.N))
    for s in range(samples):
        level = simulate_increments(NoiseSeed(base_seed, s), grid.T, [grid.N], refine, quadrature)[0]
        bar2[s] = level.bar**2
        hat2[s] = level.hat**2
        diff2[s] = (level.hat - level.tilde) ** 2

    def mean_se(x: np.ndarray):
        x = x.ravel()
        return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))

    m2_bar, se_bar = mean_se(bar2)
    m2_hat, se_hat = mean_se(hat2)
    m2_diff, se_diff = mean_se(diff2)
    logger.info(
        f"tau={grid.tau:.6g}: E[bar^2]={m2_bar:.5e} (se {se_bar:.1e}), "
        f"E[hat^2]={m2_hat:.5e} (se {se_hat:.1e}), E[diff^2]={m2_diff:.3e}"
    )
    return MomentReport(
        tau=grid.tau,
        samples=samples,
        m2_bar=m2_bar,
        se_bar=se_bar,
        m2_hat=m2_hat,
        se_hat=se_hat,
        m2_diff=m2_diff,
        se_diff=se_diff,
    )


def zero_increments(grid: TimeGrid) -> IncrementLevel:
    """Noise-free increments for runs where sigma vanishes identically"""
    zeros = np.zeros(grid.N)
    return IncrementLevel(grid=grid, bar=zeros, hat=zeros.copy(), tilde=zeros.copy(), terminal=0.0)
