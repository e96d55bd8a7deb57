"""
Command-line front end: config parsing, subcommand dispatch and output emission.

Subcommands:
    simulate       one trajectory on one Brownian path, (x, u, v) at recorded steps
    convergence    Monte Carlo strong errors and observed orders
    stability      Monte Carlo mean of the maximal discrete energy (n >= 1) per level
    noise-check    second moments of the Brownian increments
    spatial-check  one path on doubled meshes, differences to the next finer mesh

Settings come from built-in defaults, then an optional key=value config file
(--config), then command-line flags; later sources win.
"""

import argparse
import logging
import sys
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from dotenv import dotenv_values

from .config import (
    DEFAULT_LEVELS, DEFAULT_MESH, DEFAULT_MESHES, DEFAULT_MODE, DEFAULT_PROBLEM, DEFAULT_REFERENCE,
    DEFAULT_SAMPLES, DEFAULT_SEED, DEFAULT_WORKERS, ERROR_NORMS, LOG_DIR, LOG_LEVEL, OUTPUT_DIR,
    REFERENCE_REFINE, STABILITY_GROWTH, SUBMESH_QUADRATURE
)
from .errors import ConfigError, SwaveError
from .experiment import convergence_study, spatial_smoke, stability_sweep
from .fem1d import assemble_operators
from .matching import unknown_name_message
from .models import ConvergenceConfig, NoiseSeed, SchemeConfig, SpatialMesh, TimeGrid, is_power_of_two
from .noise import moment_report, simulate_increments, zero_increments
from .output import (
    convergence_lines, emit, noise_lines, provenance_header, simulation_lines, spatial_lines, stability_lines,
    write_gnuplot, write_summary
)
from .problem import BUILTINS, builtin
from .stepper import run_trajectory

logger = logging.getLogger(__name__)

COMMANDS = {
    'simulate': 'Run one trajectory and write (x, u, v) at the recorded steps',
    'convergence': 'Estimate strong errors and orders against a path-coupled reference',
    'stability': 'Monte Carlo mean of max over n >= 1 of the discrete energy per level',
    'noise-check': 'Second moments of the coupled Brownian increments',
    'spatial-check': 'Differences between successively doubled meshes on one Brownian path',
}

# Settings that only apply to some subcommands
LEVEL_COMMANDS = ('convergence', 'stability', 'noise-check')
SETTING_SCOPE = {
    'm': ('simulate',) + LEVEL_COMMANDS,
    'N': ('simulate', 'spatial-check'),
    'sample_index': ('simulate', 'spatial-check'),
    'record': ('simulate',),
    'levels': LEVEL_COMMANDS,
    'samples': LEVEL_COMMANDS,
    'workers': ('convergence', 'stability'),
    'ref': ('convergence',),
    'error_norm': ('convergence',),
    'plot': ('convergence',),
    'growth': ('stability',),
    'refine': ('noise-check',),
    'meshes': ('spatial-check',),
}

# Not part of the provenance header: they change how a run executes, not what it computes
EXECUTION_SETTINGS = ('output', 'plot', 'workers', 'config')

DEFAULTS: Dict[str, object] = {
    'problem': DEFAULT_PROBLEM,
    'theta': 0.5,
    'N': 64,
    'levels': DEFAULT_LEVELS,
    'ref': DEFAULT_REFERENCE,
    'm': DEFAULT_MESH,
    'samples': DEFAULT_SAMPLES,
    'seed': DEFAULT_SEED,
    'sample_index': 0,
    'record': None,
    'T': 1.0,
    'mode': DEFAULT_MODE,
    'output': None,
    'plot': False,
    'workers': DEFAULT_WORKERS,
    'error_norm': ERROR_NORMS[0],
    'quadrature': SUBMESH_QUADRATURE,
    'growth': STABILITY_GROWTH,
    'refine': REFERENCE_REFINE,
    'meshes': DEFAULT_MESHES,
}


@dataclass
class RunConfig:
    """Resolved settings of one CLI run"""
    command: str
    problem: str = DEFAULT_PROBLEM
    theta: float = 0.5
    N: int = 64
    levels: Tuple[int, ...] = DEFAULT_LEVELS
    ref: int = DEFAULT_REFERENCE
    m: int = DEFAULT_MESH
    samples: int = DEFAULT_SAMPLES
    seed: int = DEFAULT_SEED
    sample_index: int = 0
    record: Optional[Tuple[int, ...]] = None  # None: final step only
    T: float = 1.0
    mode: int = DEFAULT_MODE
    output: Optional[Path] = None
    plot: bool = False
    workers: int = DEFAULT_WORKERS
    error_norm: str = ERROR_NORMS[0]
    quadrature: str = SUBMESH_QUADRATURE
    growth: float = STABILITY_GROWTH
    refine: int = REFERENCE_REFINE
    meshes: Tuple[int, ...] = DEFAULT_MESHES

    def provenance(self) -> Dict[str, object]:
        """Settings that determine the results, for output headers"""
        values = asdict(self)
        scoped = {
            key: value for key, value in values.items()
            if key not in EXECUTION_SETTINGS
            and self.command in SETTING_SCOPE.get(key, (self.command,))
        }
        if scoped.get('record') is None and self.command == 'simulate':
            scoped['record'] = (self.N,)
        return scoped


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises ConfigError instead of exiting"""

    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog='python -m src.main',
        description='Implicit theta-schemes for the stochastic wave equation with multiplicative noise',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Strong convergence of theta = 1/2 on test2
  python -m src.main convergence --problem test2 --theta 0.5 --levels 4,8,16,32 --ref 256 --m 256 --samples 100 --seed 42

  # Same run from a config file, overriding the sample count
  python -m src.main convergence --config runs/test2.env --samples 20

  # One trajectory of the noise-free wave, final step only
  python -m src.main simulate --problem deterministic --mode 1 --N 64 --m 128

  # Energy stability sweep on 4 processes
  python -m src.main stability --problem test2 --theta 0 --levels 16,32,64,128 --samples 200 --workers 4

  # Increment moments at tau = 1/4, 1/8, 1/16
  python -m src.main noise-check --levels 4,8,16 --samples 100000

  # Spatial differences on one path, meshes 32, 64, 128
  python -m src.main spatial-check --problem test1 --N 32 --meshes 32,64,128
        """
    )
    parser.add_argument('--log-level', default=LOG_LEVEL, help='Logging level (default: %(default)s)')
    sub = parser.add_subparsers(dest='command', metavar='command', parser_class=_Parser)
    sub.required = True

    for name, description in COMMANDS.items():
        p = sub.add_parser(name, help=description, description=description, argument_default=argparse.SUPPRESS)
        p.add_argument('--config', type=Path, help='key=value file with default settings')
        p.add_argument('--problem', help=f"builtin problem ({', '.join(BUILTINS)})")
        p.add_argument('--theta', help='0 or 0.5')
        p.add_argument('--T', help='time horizon')
        p.add_argument('--mode', help='initial sine mode k, u0 = sin(k pi x)')
        p.add_argument('--seed', help='base seed of the Brownian paths')
        p.add_argument('--quadrature', help='sub-mesh quadrature: affine or right')
        p.add_argument('--output', '-o', help='output file (default: stdout); relative paths go under SWAVE_OUTPUT_DIR')
        p.add_argument('--log-level', dest='log_level', help='Logging level')

        if name == 'spatial-check':
            p.add_argument('--meshes', help='comma-separated spatial subintervals, each double the last')
        else:
            p.add_argument('--m', help='spatial subintervals')
        if name in ('simulate', 'spatial-check'):
            p.add_argument('--N', help='time steps (power of two)')
            p.add_argument('--sample-index', dest='sample_index', help='which Brownian path')
        if name == 'simulate':
            p.add_argument('--record', help="comma-separated step indices to write, or 'all'")
        if name in LEVEL_COMMANDS:
            p.add_argument('--levels', help='comma-separated step counts (powers of two)')
            p.add_argument('--samples', help='Monte Carlo samples')
        if name in ('convergence', 'stability'):
            p.add_argument('--workers', help='worker processes')
        if name == 'convergence':
            p.add_argument('--ref', help='reference step count N_ref')
            p.add_argument('--error-norm', dest='error_norm', help='rms-max or max-rms')
            p.add_argument('--plot', action='store_true', help='also write gnuplot data and script')
        if name == 'stability':
            p.add_argument('--growth', help='allowed relative deviation from the finest level')
        if name == 'noise-check':
            p.add_argument('--refine', help='sub-mesh refinement of the reference increment')
    return parser


def _int(key: str, raw) -> int:
    try:
        return int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}") from None


def _float(key: str, raw) -> float:
    try:
        return float(str(raw).strip())
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}") from None


def _int_list(key: str, raw) -> Tuple[int, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(int(v) for v in raw)
    parts = [p for p in str(raw).replace(' ', '').split(',') if p]
    if not parts:
        raise ConfigError(f"{key} must not be empty")
    return tuple(_int(key, p) for p in parts)


def _power_of_two(key: str, n: int) -> int:
    if n < 2 or not is_power_of_two(n):
        raise ConfigError(f"{key}: {n} is not a power of two >= 2")
    return n


def _bool(key: str, raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ('1', 'true', 'yes', 'on'):
        return True
    if text in ('0', 'false', 'no', 'off', ''):
        return False
    raise ConfigError(f"{key} must be true or false, got {raw!r}")


def read_config_file(path: Path) -> Dict[str, str]:
    """Flat key=value settings; '-' and '_' are interchangeable in keys"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = dotenv_values(path)
    settings = {}
    for key, value in values.items():
        name = key.strip().replace('-', '_')
        if name not in DEFAULTS:
            raise ConfigError(unknown_name_message("config key", name, DEFAULTS))
        if value is None:
            raise ConfigError(f"config key {name!r} has no value")
        settings[name] = value
    logger.debug(f"Read {len(settings)} settings from {path}")
    return settings


def parse_config(argv: Optional[Sequence[str]] = None, config_file: Optional[Path] = None) -> RunConfig:
    """
    Resolve a RunConfig from defaults, an optional config file and argv flags.

    Raises:
        ConfigError: unknown subcommand or key, invalid value, non-power-of-two N
    """
    args = vars(build_parser().parse_args(list(argv) if argv is not None else None))
    command = args.pop('command')
    args.pop('log_level', None)
    config_file = args.pop('config', None) or config_file

    raw: Dict[str, object] = dict(DEFAULTS)
    file_settings = read_config_file(config_file) if config_file else {}
    raw.update(file_settings)
    raw.update(args)
    given = tuple(sorted(set(file_settings) | set(args)))

    for key in given:
        scope = SETTING_SCOPE.get(key)
        if scope and command not in scope:
            raise ConfigError(f"{key} does not apply to '{command}' (only to {', '.join(scope)})")

    theta = _float('theta', raw['theta'])
    if theta not in (0.0, 0.5):
        raise ConfigError(f"theta must be 0 or 0.5, got {raw['theta']}")

    problem = str(raw['problem']).strip()
    if problem not in BUILTINS:
        raise ConfigError(unknown_name_message("problem", problem, BUILTINS))

    levels = tuple(_power_of_two('levels', n) for n in _int_list('levels', raw['levels']))
    if list(levels) != sorted(set(levels)):
        raise ConfigError(f"levels must be strictly increasing, got {','.join(map(str, levels))}")

    record = raw['record']
    N = _power_of_two('N', _int('N', raw['N']))
    if record is not None:
        record = tuple(range(N + 1)) if str(record).strip() == 'all' else _int_list('record', record)
        bad = [n for n in record if not 0 <= n <= N]
        if bad:
            raise ConfigError(f"record steps must lie in 0..{N}, got {bad}")

    quadrature = str(raw['quadrature']).strip()
    if quadrature not in ('affine', 'right'):
        raise ConfigError(f"quadrature must be affine or right, got {quadrature!r}")
    error_norm = str(raw['error_norm']).strip()
    if error_norm not in ERROR_NORMS:
        raise ConfigError(f"error-norm must be one of {', '.join(ERROR_NORMS)}, got {error_norm!r}")

    output = raw['output']
    if output is not None:
        output = Path(output)
        if not output.is_absolute():
            output = OUTPUT_DIR / output

    cfg = RunConfig(
        command=command,
        problem=problem,
        theta=theta,
        N=N,
        levels=levels,
        ref=_power_of_two('ref', _int('ref', raw['ref'])),
        m=_int('m', raw['m']),
        samples=_int('samples', raw['samples']),
        seed=_int('seed', raw['seed']),
        sample_index=_int('sample_index', raw['sample_index']),
        record=record,
        T=_float('T', raw['T']),
        mode=_int('mode', raw['mode']),
        output=output,
        plot=_bool('plot', raw['plot']),
        workers=_int('workers', raw['workers']),
        error_norm=error_norm,
        quadrature=quadrature,
        growth=_float('growth', raw['growth']),
        refine=_int('refine', raw['refine']),
        meshes=_int_list('meshes', raw['meshes']),
    )
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig):
    for key in ('m', 'samples', 'workers'):
        if getattr(cfg, key) < 1:
            raise ConfigError(f"{key} must be positive, got {getattr(cfg, key)}")
    if cfg.m < 2:
        raise ConfigError(f"m must be >= 2, got {cfg.m}")
    if not cfg.T > 0:
        raise ConfigError(f"T must be positive, got {cfg.T}")
    if cfg.seed < 0 or cfg.sample_index < 0 or cfg.mode < 0:
        raise ConfigError("seed, sample-index and mode must be nonnegative")
    if not cfg.growth > 0:
        raise ConfigError(f"growth must be positive, got {cfg.growth}")
    if cfg.refine < 2 or not is_power_of_two(cfg.refine):
        raise ConfigError(f"refine must be a power of two >= 2, got {cfg.refine}")
    if cfg.command == 'convergence' and cfg.ref % cfg.levels[-1] != 0:
        raise ConfigError(f"ref={cfg.ref} must be a multiple of every level (finest {cfg.levels[-1]})")
    if cfg.command == 'spatial-check':
        if len(cfg.meshes) < 2 or cfg.meshes[0] < 2 or any(b != 2 * a for a, b in zip(cfg.meshes, cfg.meshes[1:])):
            raise ConfigError(f"meshes must be at least two successive doublings, got {list(cfg.meshes)}")
    if cfg.plot and cfg.output is None:
        raise ConfigError("--plot needs --output to name the data and script files")


def setup_logging(level: str = LOG_LEVEL, log_dir: Optional[Path] = LOG_DIR) -> Optional[Path]:
    """
    Log to stderr and, when log_dir is given, to a timestamped file in it.

    Returns:
        Path of the log file, or None
    """
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = None
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = log_dir / f"swave_{timestamp}.log"
        handlers.append(logging.FileHandler(log_file))

    numeric = logging.getLevelName(str(level).upper())
    logging.basicConfig(
        level=numeric if isinstance(numeric, int) else logging.INFO,
        format='[%(asctime)s] %(levelname)s: %(message)s',
        handlers=handlers,
        force=True,
    )
    return log_file


def run_simulate(cfg: RunConfig, header: List[str]) -> int:
    spec = builtin(cfg.problem, cfg.mode).with_horizon(cfg.T)
    mesh = SpatialMesh(spec.domain[0], spec.domain[1], cfg.m)
    ops = assemble_operators(mesh)
    scheme = SchemeConfig(theta=cfg.theta, grid=TimeGrid(cfg.T, cfg.N))
    if spec.noise_free:
        level = zero_increments(scheme.grid)
    else:
        level = simulate_increments(NoiseSeed(cfg.seed, cfg.sample_index), cfg.T, [cfg.N], quadrature=cfg.quadrature)[0]

    record = cfg.record if cfg.record is not None else (cfg.N,)
    result = run_trajectory(spec, ops, scheme, level, record=record)
    logger.info(
        f"✓ {cfg.problem}, theta={cfg.theta}, N={cfg.N}, m={cfg.m}: "
        f"{result.picard_total} Picard iterations, max energy {result.energy.max():.5e}"
    )
    emit(simulation_lines(mesh, scheme.grid.tau, result, header), cfg.output, sys.stdout)
    return 0


def run_convergence(cfg: RunConfig, header: List[str]) -> int:
    study = ConvergenceConfig(
        problem=cfg.problem,
        theta=cfg.theta,
        m=cfg.m,
        levels=cfg.levels,
        reference=cfg.ref,
        samples=cfg.samples,
        base_seed=cfg.seed,
        T=cfg.T,
        mode=cfg.mode,
        error_norm=cfg.error_norm,
        quadrature=cfg.quadrature,
        workers=cfg.workers,
    )
    report = convergence_study(study)
    emit(convergence_lines(report, header), cfg.output, sys.stdout)

    if cfg.output is not None:
        write_summary(
            {
                'config': cfg.provenance(),
                'slopes': dict(zip(('u_L2', 'u_H1', 'v_L2'), report.slopes)),
                'rows': [asdict(row) for row in report.rows],
            },
            cfg.output.with_suffix('.json'),
        )
    if cfg.plot:
        write_gnuplot(report, header, cfg.output)
    return 0


def run_stability(cfg: RunConfig, header: List[str]) -> int:
    report = stability_sweep(
        cfg.problem, cfg.theta, cfg.levels, cfg.m, cfg.samples, cfg.seed,
        T=cfg.T, mode=cfg.mode, growth=cfg.growth, workers=cfg.workers, quadrature=cfg.quadrature,
    )
    emit(stability_lines(report, header), cfg.output, sys.stdout)
    if not report.stable:
        logger.warning(f"✗ mean max-energy deviates by more than {cfg.growth:.0%} at some level")
    return 0


def run_noise_check(cfg: RunConfig, header: List[str]) -> int:
    reports = []
    for i, N in enumerate(cfg.levels, 1):
        logger.info(f"[{i}/{len(cfg.levels)}] increments at N={N}")
        reports.append(moment_report(cfg.samples, cfg.seed, TimeGrid(cfg.T, N), cfg.refine, cfg.quadrature))
    emit(noise_lines(reports, header), cfg.output, sys.stdout)
    return 0


def run_spatial_check(cfg: RunConfig, header: List[str]) -> int:
    spec = builtin(cfg.problem, cfg.mode).with_horizon(cfg.T)
    rows = spatial_smoke(spec, cfg.theta, cfg.meshes, cfg.N, cfg.seed, cfg.sample_index, cfg.quadrature)
    emit(spatial_lines(rows, header), cfg.output, sys.stdout)
    return 0


HANDLERS = {
    'simulate': run_simulate,
    'convergence': run_convergence,
    'stability': run_stability,
    'noise-check': run_noise_check,
    'spatial-check': run_spatial_check,
}


def _log_level(argv: Sequence[str]) -> str:
    """Last --log-level given anywhere in argv, before or after the subcommand"""
    level = LOG_LEVEL
    for i, arg in enumerate(argv):
        if arg == '--log-level' and i + 1 < len(argv):
            level = argv[i + 1]
        elif arg.startswith('--log-level='):
            level = arg.split('=', 1)[1]
    return level


def main(argv: Optional[Sequence[str]] = None, log_dir: Optional[Path] = LOG_DIR) -> int:
    """Parse argv, run the subcommand and return the exit status"""
    argv = list(argv) if argv is not None else sys.argv[1:]
    log_file = setup_logging(_log_level(argv), log_dir)

    try:
        cfg = parse_config(argv)
        logger.info("=" * 80)
        logger.info(f"SWAVE {cfg.command.upper()}")
        logger.info("=" * 80)
        if log_file is not None:
            logger.info(f"Log file: {log_file}")
        header = provenance_header(cfg.provenance(), cfg.command)
        status = HANDLERS[cfg.command](cfg, header)
    except (SwaveError, ValueError) as e:
        logger.error(f"✗ {e}")
        return 1
    except (OSError, RuntimeError) as e:
        logger.error(f"✗ {type(e).__name__}: {e}")
        return 1
    logger.info("=" * 80)
    return status
