"""
Monte Carlo strong-error studies and energy-stability sweeps.

Every sample draws one Brownian path and drives all time levels plus the
theta=1/2 reference at N_ref with couplings of it, so the reported errors
measure the time discretisation only. Samples are independent work units
and may run on a process pool; aggregation always happens in sample order.
"""

import concurrent.futures as cf
import functools
import logging
import math
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import PICARD_MAX, PICARD_TOL, REFERENCE_MIN_FACTOR, STABILITY_GROWTH, SUBMESH_QUADRATURE
from .errors import ConfigError, SampleError, SwaveError
from .fem1d import FemOperators, assemble_operators, l2_error, norm_h1_semi, norm_l2, prolong
from .models import (
    ConvergenceConfig, ConvergenceReport, ErrorRecord, IncrementLevel, LevelRow, NoiseSeed, SchemeConfig,
    SpatialMesh, SpatialRow, StabilityReport, StabilityRow, TimeGrid, is_power_of_two
)
from .noise import simulate_increments, zero_increments
from .problem import ProblemSpec, builtin
from .stepper import run_trajectory

logger = logging.getLogger(__name__)

NORM_NAMES = ("u_L2", "u_H1", "v_L2")


@functools.lru_cache(maxsize=8)
def _operators(mesh: SpatialMesh) -> FemOperators:
    # one set of operators (and factorizations) per mesh and process
    return assemble_operators(mesh)


def _resolve(problem: str, mode: int, T: float, spec: Optional[ProblemSpec]) -> ProblemSpec:
    if spec is None:
        spec = builtin(problem, mode)
    if spec.T != T:
        spec = spec.with_horizon(T)
    return spec


def _scheme(theta: float, T: float, N: int) -> SchemeConfig:
    return SchemeConfig(theta=theta, grid=TimeGrid(T, N), picard_tol=PICARD_TOL, picard_max=PICARD_MAX)


def _increments(
    spec: ProblemSpec, seed: NoiseSeed, T: float, levels: Sequence[int], quadrature: str
) -> List[IncrementLevel]:
    if spec.noise_free:
        return [zero_increments(TimeGrid(T, N)) for N in levels]
    return simulate_increments(seed, T, levels, quadrature=quadrature)


def sample_error(
    cfg: ConvergenceConfig, sample_index: int, spec: Optional[ProblemSpec] = None
) -> ErrorRecord:
    """
    Errors of one sample at every level against the theta=1/2 reference on the same path.

    Raises:
        SampleError: wrapping any failure, tagged with the sample index and level
    """
    spec = _resolve(cfg.problem, cfg.mode, cfg.T, spec)
    mesh = SpatialMesh(spec.domain[0], spec.domain[1], cfg.m)
    ops = _operators(mesh)

    all_levels = sorted(set(cfg.levels) | {cfg.reference})
    try:
        increments = _increments(spec, NoiseSeed(cfg.base_seed, sample_index), cfg.T, all_levels, cfg.quadrature)
    except (SwaveError, ValueError) as e:
        raise SampleError(sample_index, None, e) from e
    by_level = {level.grid.N: level for level in increments}

    # coarse times t_n of every level are multiples of the finest ratio
    stride = cfg.reference // cfg.levels[-1]
    try:
        reference = run_trajectory(
            spec, ops, _scheme(0.5, cfg.T, cfg.reference), by_level[cfg.reference],
            record=range(0, cfg.reference + 1, stride),
        )
    except (SwaveError, ValueError) as e:
        raise SampleError(sample_index, cfg.reference, e) from e

    maxima = np.zeros((3, len(cfg.levels)))
    pointwise = []
    for j, N in enumerate(cfg.levels):
        ratio = cfg.reference // N
        if N == cfg.reference and cfg.theta == 0.5:
            result = reference
        else:
            try:
                result = run_trajectory(
                    spec, ops, _scheme(cfg.theta, cfg.T, N), by_level[N], record=range(1, N + 1)
                )
            except (SwaveError, ValueError) as e:
                raise SampleError(sample_index, N, e) from e

        squares = np.zeros((3, N))
        for n in range(1, N + 1):
            u_ref, v_ref = reference.recorded[n * ratio]
            u, v = result.recorded[n]
            e_u, e_v = u_ref - u, v_ref - v
            squares[:, n - 1] = (norm_l2(e_u, ops) ** 2, norm_h1_semi(e_u, ops) ** 2, norm_l2(e_v, ops) ** 2)
        pointwise.append(squares)
        maxima[:, j] = np.sqrt(squares.max(axis=1))

    return ErrorRecord(
        sample_index=sample_index,
        levels=tuple(cfg.levels),
        u_l2=maxima[0],
        u_h1=maxima[1],
        v_l2=maxima[2],
        pointwise=pointwise,
    )


def run_samples(task: Callable[[int], object], samples: int, workers: int = 1, label: str = "sample") -> List:
    """
    Run task(i) for i = 0..samples-1, serially or on a process pool.

    Results come back indexed by sample, whatever order workers finish in.
    task must be picklable when workers > 1.
    """
    results: List = [None] * samples
    start_time = time.time()
    step = max(1, samples // 10)

    if workers <= 1 or samples == 1:
        for i in range(samples):
            results[i] = task(i)
            if (i + 1) % step == 0 or i + 1 == samples:
                logger.info(f"[{i + 1}/{samples}] {label}s done ({time.time() - start_time:.1f}s)")
        return results

    logger.info(f"Starting {samples} {label}s across {workers} processes...")
    with cf.ProcessPoolExecutor(max_workers=workers) as ex:
        futures = {ex.submit(task, i): i for i in range(samples)}
        for done, future in enumerate(cf.as_completed(futures), 1):
            results[futures[future]] = future.result()
            if done % step == 0 or done == samples:
                logger.info(f"[{done}/{samples}] {label}s done ({time.time() - start_time:.1f}s)")
    return results


def _rms_with_se(squares: np.ndarray) -> Tuple[float, float]:
    """sqrt(mean) of squared errors and its delta-method standard error"""
    mean = float(squares.mean())
    rms = math.sqrt(mean)
    if squares.size < 2 or rms == 0.0:
        return rms, 0.0
    se_mean = float(squares.std(ddof=1)) / math.sqrt(squares.size)
    return rms, se_mean / (2.0 * rms)


def aggregate(records: Sequence[ErrorRecord], levels: Sequence[int], error_norm: str = "rms-max"):
    """
    Per-level RMS errors and standard errors, shape (3, L) each.

    rms-max: sqrt(E[max_n e_n^2]); max-rms: max_n sqrt(E[e_n^2]).
    """
    err = np.zeros((3, len(levels)))
    se = np.zeros((3, len(levels)))
    for j in range(len(levels)):
        if error_norm == "rms-max":
            maxima = np.array([[r.u_l2[j], r.u_h1[j], r.v_l2[j]] for r in records]) ** 2
            for k in range(3):
                err[k, j], se[k, j] = _rms_with_se(maxima[:, k])
        elif error_norm == "max-rms":
            stacked = np.stack([r.pointwise[j] for r in records])  # (M, 3, N)
            worst = stacked.mean(axis=0).argmax(axis=1)
            for k in range(3):
                err[k, j], se[k, j] = _rms_with_se(stacked[:, k, worst[k]])
        else:
            raise ConfigError(f"unknown error norm {error_norm!r}")
    return err, se


def estimate_order(errors: Sequence[float], levels: Optional[Sequence[int]] = None) -> List[float]:
    """
    Observed orders between adjacent levels, log(err_coarse/err_fine) / log(N_fine/N_coarse).

    With no levels given every gap is a halving of tau (log2 of the ratio).

    Raises:
        ValueError: fewer than two levels, or a non-positive error
    """
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("at least two levels are needed to estimate an order")
    if any(not e > 0 for e in errors):
        raise ValueError(f"errors must be positive, got {errors}")
    if levels is None:
        levels = [2**j for j in range(len(errors))]
    if len(levels) != len(errors):
        raise ValueError("errors and levels differ in length")
    return [
        math.log(errors[j] / errors[j + 1]) / math.log(levels[j + 1] / levels[j])
        for j in range(len(errors) - 1)
    ]


def fit_slope(taus: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log2(error) against log2(tau)"""
    if len(taus) != len(errors) or len(taus) < 2:
        raise ValueError("need at least two (tau, error) pairs")
    if any(not e > 0 for e in errors) or any(not t > 0 for t in taus):
        raise ValueError("taus and errors must be positive")
    slope, _ = np.polyfit(np.log2(taus), np.log2(errors), 1)
    return float(slope)


def _orders_or_none(errors: np.ndarray, levels: Sequence[int]) -> List[Optional[float]]:
    if len(levels) < 2 or not np.all(errors > 0):
        return [None] * len(levels)
    return [None] + estimate_order(errors, levels)


def convergence_study(cfg: ConvergenceConfig, spec: Optional[ProblemSpec] = None) -> ConvergenceReport:
    """
    Aggregate cfg.samples sample errors into RMS errors, standard errors and orders.

    Output is identical for any number of workers.
    """
    logger.info("=" * 80)
    logger.info(
        f"CONVERGENCE STUDY: {cfg.problem}, theta={cfg.theta}, m={cfg.m}, "
        f"levels={list(cfg.levels)}, N_ref={cfg.reference}, M={cfg.samples}"
    )
    logger.info("=" * 80)
    if cfg.reference < REFERENCE_MIN_FACTOR * cfg.levels[-1] and cfg.reference != cfg.levels[-1]:
        logger.warning(
            f"N_ref={cfg.reference} is below {REFERENCE_MIN_FACTOR}x the finest level; reference error may show"
        )

    task = functools.partial(sample_error, cfg, spec=spec)
    records = run_samples(task, cfg.samples, cfg.workers)

    err, se = aggregate(records, cfg.levels, cfg.error_norm)
    orders = [_orders_or_none(err[k], cfg.levels) for k in range(3)]
    taus = [cfg.T / N for N in cfg.levels]

    report = ConvergenceReport(config=cfg)
    for j, N in enumerate(cfg.levels):
        report.rows.append(LevelRow(
            N=N,
            tau=taus[j],
            err=tuple(float(x) for x in err[:, j]),
            se=tuple(float(x) for x in se[:, j]),
            order=tuple(orders[k][j] for k in range(3)),
        ))

    slopes = []
    for k in range(3):
        try:
            slopes.append(fit_slope(taus, err[k]))
        except ValueError:
            slopes.append(None)
    report.slopes = tuple(slopes)

    for row in report.rows:
        logger.info(
            f"  N={row.N:5d}  " + "  ".join(
                f"{name}={e:.4e}(±{s:.1e})" for name, e, s in zip(NORM_NAMES, row.err, row.se)
            )
        )
    logger.info("  slopes: " + ", ".join(
        f"{name}={s:.3f}" if s is not None else f"{name}=n/a" for name, s in zip(NORM_NAMES, report.slopes)
    ))
    return report


def sample_max_energy(
    problem: str, theta: float, levels: Tuple[int, ...], m: int, base_seed: int, T: float, mode: int,
    sample_index: int, spec: Optional[ProblemSpec] = None, quadrature: str = SUBMESH_QUADRATURE,
) -> np.ndarray:
    """max_n discrete energy over steps n = 1..N at every level for one coupled path"""
    spec = _resolve(problem, mode, T, spec)
    ops = _operators(SpatialMesh(spec.domain[0], spec.domain[1], m))
    try:
        increments = _increments(spec, NoiseSeed(base_seed, sample_index), T, levels, quadrature)
    except (SwaveError, ValueError) as e:
        raise SampleError(sample_index, None, e) from e

    peaks = np.zeros(len(levels))
    for j, level in enumerate(increments):
        try:
            result = run_trajectory(spec, ops, _scheme(theta, T, level.grid.N), level)
        except (SwaveError, ValueError) as e:
            raise SampleError(sample_index, level.grid.N, e) from e
        # n = 0 is the same initial energy on every level
        peaks[j] = result.energy[1:].max()
    return peaks


def stability_sweep(
    problem: str,
    theta: float,
    levels: Sequence[int],
    m: int,
    samples: int,
    base_seed: int,
    T: float = 1.0,
    mode: int = 2,
    growth: float = STABILITY_GROWTH,
    workers: int = 1,
    spec: Optional[ProblemSpec] = None,
    quadrature: str = SUBMESH_QUADRATURE,
) -> StabilityReport:
    """
    Monte Carlo mean of max over n >= 1 of the energy per level, flagged when it
    deviates from the finest level by more than `growth` (relative) or is not finite.
    """
    levels = tuple(int(N) for N in levels)
    if not levels or list(levels) != sorted(set(levels)):
        raise ConfigError(f"levels must be strictly increasing, got {list(levels)}")
    if any(N < 2 or not is_power_of_two(N) for N in levels):
        raise ConfigError(f"levels must be powers of two >= 2, got {list(levels)}")
    if samples < 1:
        raise ConfigError(f"samples must be >= 1, got {samples}")

    logger.info("=" * 80)
    logger.info(f"STABILITY SWEEP: {problem}, theta={theta}, m={m}, levels={list(levels)}, M={samples}")
    logger.info("=" * 80)

    task = functools.partial(
        sample_max_energy, problem, theta, levels, m, base_seed, T, mode, spec=spec, quadrature=quadrature
    )
    peaks = np.array(run_samples(task, samples, workers))  # (M, L)

    means = peaks.mean(axis=0)
    ses = peaks.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.zeros(len(levels))
    finest = means[-1]

    report = StabilityReport(problem=problem, theta=theta, samples=samples, growth=growth)
    for j, N in enumerate(levels):
        if finest > 0:
            rel = abs(means[j] - finest) / finest
        else:
            rel = 0.0 if means[j] == 0 else math.inf
        flagged = not math.isfinite(means[j]) or rel > growth
        report.rows.append(StabilityRow(
            N=N, tau=T / N, mean_max_energy=float(means[j]), se=float(ses[j]),
            rel_dev=float(rel), flagged=flagged,
        ))
        mark = "✗" if flagged else "✓"
        logger.info(f"  {mark} N={N:5d}  mean max energy {means[j]:.5e} (±{ses[j]:.1e}), deviation {rel:.1%}")
    return report


def spatial_smoke(
    spec: ProblemSpec,
    theta: float,
    meshes: Sequence[int],
    N: int,
    base_seed: int,
    sample_index: int = 0,
    quadrature: str = SUBMESH_QUADRATURE,
) -> List[SpatialRow]:
    """
    Run one Brownian path on successively doubled meshes and report the
    energy-norm difference of each mesh to the next finer one.
    """
    meshes = [int(m) for m in meshes]
    if len(meshes) < 2 or any(b != 2 * a for a, b in zip(meshes, meshes[1:])):
        raise ConfigError(f"meshes must be at least two successive doublings, got {meshes}")

    level = _increments(spec, NoiseSeed(base_seed, sample_index), spec.T, [N], quadrature)[0]
    cfg = _scheme(theta, spec.T, N)
    runs = []
    for m in meshes:
        mesh = SpatialMesh(spec.domain[0], spec.domain[1], m)
        ops = _operators(mesh)
        result = run_trajectory(spec, ops, cfg, level, record=range(N + 1))
        runs.append((mesh, ops, result))

    rows = []
    for (coarse, _, coarse_run), (fine, fine_ops, fine_run) in zip(runs, runs[1:]):
        diff_u = diff_v = 0.0
        for n in range(N + 1):
            u_c, v_c = coarse_run.recorded[n]
            u_f, v_f = fine_run.recorded[n]
            diff_u = max(diff_u, norm_h1_semi(prolong(u_c, coarse, fine) - u_f, fine_ops))
            diff_v = max(diff_v, norm_l2(prolong(v_c, coarse, fine) - v_f, fine_ops))
        rows.append(SpatialRow(m=coarse.m, h=coarse.h, diff_u_h1=diff_u, diff_v_l2=diff_v))
        logger.info(f"  m={coarse.m:5d} -> {fine.m}: |du|_H1={diff_u:.4e}, ||dv||_L2={diff_v:.4e}")
    return rows


def standing_wave(k: int, t: float):
    """Exact solution sin(k*pi*x)*cos(k*pi*t) of u_tt = u_xx on (-1, 1) with v0 = 0"""
    def exact(x):
        return np.sin(k * np.pi * np.asarray(x, dtype=float)) * np.cos(k * np.pi * t)
    return exact


def deterministic_error(m: int, N: int, theta: float = 0.5, k: int = 1, T: float = 1.0) -> float:
    """L2 error at t = T of the noise-free scheme against the exact standing wave"""
    spec = builtin("deterministic", k).with_horizon(T)
    mesh = SpatialMesh(spec.domain[0], spec.domain[1], m)
    ops = _operators(mesh)
    level = zero_increments(TimeGrid(T, N))
    result = run_trajectory(spec, ops, _scheme(theta, T, N), level, record=(N,))
    u_final, _ = result.recorded[N]
    return l2_error(u_final, standing_wave(k, T), mesh)
