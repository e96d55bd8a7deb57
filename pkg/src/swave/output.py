"""
CSV, JSON summary and gnuplot writers

Every file starts with a provenance header listing the resolved run
configuration and the artifact version. Nothing time-dependent is written,
so identical runs produce byte-identical files.
"""

import json
import logging
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, TextIO

import numpy as np

from .config import ARTIFACT_VERSION
from .models import ConvergenceReport, MomentReport, SpatialMesh, SpatialRow, StabilityReport, TrajectoryResult

logger = logging.getLogger(__name__)

CONVERGENCE_COLUMNS = [
    "N", "tau",
    "err_u_L2", "se_u_L2", "order_u_L2",
    "err_u_H1", "se_u_H1", "order_u_H1",
    "err_v_L2", "se_v_L2", "order_v_L2",
    "samples",
]
NOISE_COLUMNS = ["tau", "m2_bar", "se_bar", "m2_hat", "se_hat", "m2_diff", "se_diff"]
STABILITY_COLUMNS = ["N", "tau", "mean_max_energy", "se", "rel_dev", "flagged"]
SIMULATION_COLUMNS = ["t", "x", "u", "v"]
SPATIAL_COLUMNS = ["m", "h", "diff_u_H1", "diff_v_L2"]


def fmt(value) -> str:
    """Fixed textual form of a table entry"""
    if value is None:
        return "nan"
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.10e}"


def provenance_header(config: Mapping[str, object], title: str) -> List[str]:
    """Comment lines naming the tool version and every resolved setting"""
    lines = [f"# swave {ARTIFACT_VERSION} - {title}"]
    for key in sorted(config):
        value = config[key]
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"# {key} = {value}")
    return lines


def _write(lines: Iterable[str], stream: TextIO):
    for line in lines:
        stream.write(line + "\n")


def _table(header: List[str], columns: Sequence[str], rows: Iterable[Sequence]) -> List[str]:
    lines = list(header)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    return lines


def convergence_lines(report: ConvergenceReport, header: List[str]) -> List[str]:
    rows = []
    for row in report.rows:
        rows.append([
            row.N, row.tau,
            row.err[0], row.se[0], row.order[0],
            row.err[1], row.se[1], row.order[1],
            row.err[2], row.se[2], row.order[2],
            report.config.samples,
        ])
    lines = _table(header, CONVERGENCE_COLUMNS, rows)
    slopes = ",".join(f"{name}={fmt(s)}" for name, s in zip(("u_L2", "u_H1", "v_L2"), report.slopes))
    lines.append(f"# least-squares slopes: {slopes}")
    return lines


def noise_lines(reports: Sequence[MomentReport], header: List[str]) -> List[str]:
    rows = [
        [r.tau, r.m2_bar, r.se_bar, r.m2_hat, r.se_hat, r.m2_diff, r.se_diff]
        for r in reports
    ]
    return _table(header, NOISE_COLUMNS, rows)


def stability_lines(report: StabilityReport, header: List[str]) -> List[str]:
    rows = [[r.N, r.tau, r.mean_max_energy, r.se, r.rel_dev, r.flagged] for r in report.rows]
    lines = _table(header, STABILITY_COLUMNS, rows)
    lines.append(f"# stable = {report.stable}")
    return lines


def spatial_lines(rows: Sequence[SpatialRow], header: List[str]) -> List[str]:
    """One line per mesh, differences to the next finer mesh"""
    return _table(header, SPATIAL_COLUMNS, [[r.m, r.h, r.diff_u_h1, r.diff_v_l2] for r in rows])


def simulation_lines(
    mesh: SpatialMesh, tau: float, result: TrajectoryResult, header: List[str]
) -> List[str]:
    """x, u, v at every recorded time, boundary nodes included"""
    rows = []
    x = mesh.a + mesh.h * np.arange(mesh.m + 1)
    for n in sorted(result.recorded):
        u, v = result.recorded[n]
        u_full = np.concatenate(([0.0], u, [0.0]))
        v_full = np.concatenate(([0.0], v, [0.0]))
        for i in range(mesh.m + 1):
            rows.append([n * tau, x[i], u_full[i], v_full[i]])
    lines = _table(header, SIMULATION_COLUMNS, rows)
    lines.append(
        f"# picard iterations: total {result.picard_total}, peak {result.picard_peak}; "
        f"max energy {fmt(float(result.energy.max()))}"
    )
    return lines


def emit(lines: List[str], path: Optional[Path], stream: TextIO) -> None:
    """Write lines to path (creating parent directories) or to stream"""
    if path is None:
        _write(lines, stream)
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        _write(lines, f)
    logger.info(f"✓ Wrote {path}")


def write_summary(payload: Mapping, path: Path) -> None:
    """JSON run summary next to the CSV"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    logger.info(f"✓ Wrote {path}")


def write_gnuplot(report: ConvergenceReport, header: List[str], base: Path) -> Path:
    """
    Write <base>.dat (log-log ready columns) and <base>.gp plotting the three
    error norms against tau with reference slopes 1 and 3/2.
    """
    base = Path(base)
    data_path = base.with_suffix(".dat")
    script_path = base.with_suffix(".gp")

    # gnuplot reads whitespace separated columns and skips '#' lines
    data = [*header, "# tau err_u_L2 err_u_H1 err_v_L2"]
    for row in report.rows:
        data.append(" ".join(fmt(v) for v in (row.tau, *row.err)))
    emit(data, data_path, None)

    tau0 = report.rows[0].tau
    e0 = report.rows[0].err[0]
    png = base.with_suffix(".png").name
    script = [
        *header,
        "set terminal pngcairo size 800,600",
        f"set output '{png}'",
        "set logscale xy 2",
        "set xlabel 'tau'",
        "set ylabel 'RMS error'",
        "set key left top",
        f"set title 'theta = {report.config.theta}, {report.config.problem}'",
        f"ref1(x) = {fmt(e0)} * (x / {fmt(tau0)})",
        f"ref32(x) = {fmt(e0)} * (x / {fmt(tau0)})**1.5",
        f"plot '{data_path.name}' using 1:2 with linespoints title 'u, L2', \\",
        f"     '{data_path.name}' using 1:3 with linespoints title 'u, H1', \\",
        f"     '{data_path.name}' using 1:4 with linespoints title 'v, L2', \\",
        "     ref1(x) with lines dashtype 2 title 'order 1', \\",
        "     ref32(x) with lines dashtype 3 title 'order 3/2'",
    ]
    emit(script, script_path, None)
    return script_path
