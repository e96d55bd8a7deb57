"""
Implicit theta-schemes (theta = 0 and theta = 1/2) for the stochastic wave equation

Both schemes eliminate v^{n+1} through the kinematic equation

    M(u^{n+1} - u^n) = tau M v^{n+1} - M s hat_n,        s = sigma(u^n)

and solve the remaining displacement equation with a shifted matrix
M + alpha A (alpha = tau^2 for theta = 0, tau^2/2 for theta = 1/2). The
drift F(u^{n+1}) is resolved by Picard iteration on the cached factorization.
"""

import logging
from typing import Iterable, Optional, Tuple

import numpy as np

from .errors import (
    ConfigError, MissingLagError, NonFiniteFieldError, PicardDivergedError, StepError, SwaveError
)
from .fem1d import (
    FemOperators, apply_discrete_laplacian, check_field, l2_project, norm_h1_semi, norm_l2, solve_shifted
)
from .models import Field, IncrementLevel, SchemeConfig, TrajectoryResult, TrajectoryState
from .problem import ProblemSpec

logger = logging.getLogger(__name__)


def nodal(fn, u: Field) -> Field:
    """Apply a pointwise nonlinearity to nodal values"""
    values = np.broadcast_to(np.asarray(fn(u), dtype=float), u.shape).copy()
    if not np.all(np.isfinite(values)):
        raise NonFiniteFieldError("nonlinearity produced NaN or Inf")
    return values


def _picard(
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    alpha: float,
    base_rhs: Field,
    coef: float,
    guess: Field,
) -> Tuple[Field, int]:
    """Fixed point of (M + alpha A) u = base_rhs + coef * M F(u)"""
    u = guess
    change = np.inf
    for k in range(1, cfg.picard_max + 1):
        rhs = base_rhs + coef * (ops.mass @ nodal(spec.drift, u))
        u_new = solve_shifted(ops, alpha, rhs)
        if not np.all(np.isfinite(u_new)):
            raise NonFiniteFieldError(f"solution diverged in Picard iteration {k}")
        step = norm_l2(u_new - u, ops)
        size = norm_l2(u_new, ops)
        u = u_new
        if step == 0.0 or step <= cfg.picard_tol * size:
            return u, k
        change = step / size if size > 0 else np.inf
    raise PicardDivergedError(cfg.picard_max, change)


def initial_state(spec: ProblemSpec, ops: FemOperators) -> TrajectoryState:
    """(u^0, v^0) = L2 projections of (u0, v0)"""
    u0 = check_field(l2_project(spec.u0, ops.mesh, ops), ops, "u0")
    v0 = check_field(l2_project(spec.v0, ops.mesh, ops), ops, "v0")
    return TrajectoryState(n=0, u_curr=u0, v_curr=v0)


def initial_step(
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    incr: IncrementLevel,
    start: Optional[TrajectoryState] = None,
) -> TrajectoryState:
    """
    First step from the stochastic Taylor expansion:

        u^1 = u^0 + tau v^0 + tau^2/2 (Delta_h u^0 + Q_h F(u0))
              - Q_h sigma(u0) hat_0 + tau Q_h sigma(u0) bar_0

    and v^1 from the kinematic equation at n = 0.
    """
    if incr.bar.size < 1 or incr.hat.size < 1:
        raise ConfigError("increments do not cover step 0")
    if start is None:
        start = initial_state(spec, ops)
    u0, v0 = start.u_curr, start.v_curr
    check_field(u0, ops, "u0")
    check_field(v0, ops, "v0")

    tau = cfg.grid.tau
    bar0, hat0 = float(incr.bar[0]), float(incr.hat[0])
    drift0 = l2_project(lambda x: spec.drift(spec.u0(x)), ops.mesh, ops)
    sigma0 = l2_project(lambda x: spec.diffusion(spec.u0(x)), ops.mesh, ops)

    u1 = (
        u0
        + tau * v0
        + 0.5 * tau**2 * (apply_discrete_laplacian(ops, u0) + drift0)
        - sigma0 * hat0
        + tau * sigma0 * bar0
    )
    v1 = (u1 - u0 + sigma0 * hat0) / tau
    check_field(u1, ops, "u^1")
    check_field(v1, ops, "v^1")

    lag = u0 if cfg.theta == 0.5 else None
    return TrajectoryState(n=1, u_curr=u1, v_curr=v1, u_prev=lag)


def step_theta0(
    state: TrajectoryState,
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    bar_n: float,
    hat_n: float,
) -> TrajectoryState:
    """(M + tau^2 A) u = M[u^n + tau v^n - s hat + tau s bar] + tau^2 M F(u)"""
    if cfg.theta != 0.0:
        raise ConfigError(f"step_theta0 called with theta={cfg.theta}")
    tau = cfg.grid.tau
    u, v = state.u_curr, state.v_curr
    s = nodal(spec.diffusion, u)

    base = ops.mass @ (u + tau * v - s * hat_n + tau * s * bar_n)
    u_new, its = _picard(spec, ops, cfg, tau**2, base, tau**2, guess=u + tau * v)
    v_new = (u_new - u + s * hat_n) / tau
    check_field(v_new, ops, f"v^{state.n + 1}")
    return TrajectoryState(n=state.n + 1, u_curr=u_new, v_curr=v_new, iterations=its)


def step_theta_half(
    state: TrajectoryState,
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    bar_n: float,
    hat_n: float,
) -> TrajectoryState:
    """
    (M + tau^2/2 A) u = M[u^n + tau v^n - s hat + tau s bar + tau d hat]
                        - tau^2/2 A u^{n-1} + tau^2/2 M[F(u) + F(u^{n-1})]

    with d = sigma'(u^n) v^n.
    """
    if cfg.theta != 0.5:
        raise ConfigError(f"step_theta_half called with theta={cfg.theta}")
    if state.u_prev is None or state.n < 1:
        raise MissingLagError(f"theta=1/2 step at n={state.n} needs u^(n-1)")
    tau = cfg.grid.tau
    half = 0.5 * tau**2
    u, v, lag = state.u_curr, state.v_curr, state.u_prev
    s = nodal(spec.diffusion, u)
    d = nodal(spec.diffusion_derivative, u) * v

    base = (
        ops.mass @ (u + tau * v - s * hat_n + tau * s * bar_n + tau * d * hat_n)
        - half * (ops.stiffness @ lag)
        + half * (ops.mass @ nodal(spec.drift, lag))
    )
    u_new, its = _picard(spec, ops, cfg, half, base, half, guess=2.0 * u - lag)
    v_new = (u_new - u + s * hat_n) / tau
    check_field(v_new, ops, f"v^{state.n + 1}")
    return TrajectoryState(n=state.n + 1, u_curr=u_new, v_curr=v_new, u_prev=u, iterations=its)


def scheme_residuals(
    before: TrajectoryState,
    after: TrajectoryState,
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    bar_n: float,
    hat_n: float,
) -> Tuple[float, float]:
    """
    Relative residuals of the kinematic and momentum equations, evaluated
    directly from the two states (independent of the solver path).
    """
    tau, theta = cfg.grid.tau, cfg.theta
    M, A = ops.mass, ops.stiffness
    u, v = before.u_curr, before.v_curr
    u_new, v_new = after.u_curr, after.v_curr
    s = nodal(spec.diffusion, u)

    terms_a = [M @ (u_new - u), -tau * (M @ v_new), M @ (s * hat_n)]

    if theta == 0.5:
        if before.u_prev is None:
            raise MissingLagError("residual of a theta=1/2 step needs u^(n-1)")
        u_theta = 0.5 * (u_new + before.u_prev)
        f_theta = 0.5 * (nodal(spec.drift, u_new) + nodal(spec.drift, before.u_prev))
    else:
        u_theta = u_new
        f_theta = nodal(spec.drift, u_new)
    d = nodal(spec.diffusion_derivative, u) * v
    terms_b = [
        M @ (v_new - v),
        tau * (A @ u_theta),
        -tau * (M @ f_theta),
        -(M @ (s * bar_n)),
        -2.0 * theta * (M @ (d * hat_n)),
    ]
    return _relative(terms_a), _relative(terms_b)


def _relative(terms) -> float:
    scale = sum(float(np.linalg.norm(t)) for t in terms)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(sum(terms))) / scale


def discrete_energy(state: TrajectoryState, ops: FemOperators) -> float:
    """||v^n||_{L2}^2 + |u^n|_{H1}^2"""
    return norm_l2(state.v_curr, ops) ** 2 + norm_h1_semi(state.u_curr, ops) ** 2


def run_trajectory(
    spec: ProblemSpec,
    ops: FemOperators,
    cfg: SchemeConfig,
    incr: IncrementLevel,
    record: Iterable[int] = (),
) -> TrajectoryResult:
    """
    Roll out initial_step and N-1 scheme steps on one Brownian path.

    Returns:
        TrajectoryResult with the requested (u^n, v^n), the energy at every
        n = 0..N and Picard statistics

    Raises:
        StepError: wrapping the failure of step n
    """
    if incr.grid != cfg.grid:
        raise ConfigError(f"increments are on {incr.grid}, scheme expects {cfg.grid}")
    grid = cfg.grid
    if grid.tau * spec.lipschitz_F >= 1.0:
        logger.warning(
            f"tau*L_F = {grid.tau * spec.lipschitz_F:.3g} >= 1; Picard contraction is not guaranteed"
        )

    wanted = set(record)
    result = TrajectoryResult(energy=np.zeros(grid.N + 1))
    step = step_theta0 if cfg.theta == 0.0 else step_theta_half

    try:
        state = initial_state(spec, ops)
    except (SwaveError, ValueError) as e:
        raise StepError(0, e) from e
    result.energy[0] = discrete_energy(state, ops)
    if 0 in wanted:
        result.recorded[0] = (state.u_curr, state.v_curr)

    for n in range(grid.N):
        try:
            if n == 0:
                state = initial_step(spec, ops, cfg, incr, start=state)
            else:
                state = step(state, spec, ops, cfg, float(incr.bar[n]), float(incr.hat[n]))
        except (SwaveError, ValueError) as e:
            raise StepError(n, e) from e

        result.energy[n + 1] = discrete_energy(state, ops)
        result.picard_total += state.iterations
        result.picard_peak = max(result.picard_peak, state.iterations)
        if n + 1 in wanted:
            result.recorded[n + 1] = (state.u_curr, state.v_curr)

    logger.debug(
        f"theta={cfg.theta} N={grid.N}: {result.picard_total} Picard iterations "
        f"(peak {result.picard_peak}), max energy {result.energy.max():.4g}"
    )
    return result
