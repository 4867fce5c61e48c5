"""Parameter sweeps and epsilon-regularization studies.

A sweep runs every point of a Cartesian parameter grid (times the replicate
seeds) as an independent work item on a ``multiprocessing`` pool. The parent
process is the only writer: it appends each finished point to the sweep CSV
and to a marker file, so an interrupted sweep resumes by skipping the point
ids already listed. The final table is sorted by (point_id, replicate).

Note:
    The damping threshold is a sufficient condition only. Points with a
    negative margin are not expected to blow up; the margin table must not
    be read as the converse of the boundedness theorem.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
import multiprocessing
import os
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import Field
from scipy.integrate import trapezoid

from AALab.AALabBaseModels import AALabBaseModel, FrozenModel
from AALab.AALabEnums import RunClassification, StepStatus
from AALab.Analytics import ThresholdInputs, boundedness_regime, mu_star
from AALab.ConfigModels import LabConfig, SweepAxis, validate_config
from AALab.Constants import ENV_THREADS, MAX_SWEEP_AXES, MAX_SWEEP_RUNS
from AALab.Errors import AALabError, ConfigurationError, TrajectoryMismatchError
from AALab.Fields import FieldState
from AALab.Stepper import RunResult, run

logger = logging.getLogger(__name__)

SWEEP_FILE = "sweep.csv"
COMPLETED_FILE = "completed_points.txt"
SUFFICIENCY_NOTE = ("The threshold is sufficient, not necessary: rows with a negative margin carry no "
                    "expectation of blow-up.")


class SweepSpec(FrozenModel):
    """Cartesian parameter grid over a base configuration."""
    base: LabConfig
    axes: List[SweepAxis] = Field(default_factory=list, description="At most three swept parameters")
    replicates: List[int] = Field(default_factory=list, description="Initial-data seeds per point")
    max_runs: int = MAX_SWEEP_RUNS

    @classmethod
    def from_config(cls, config: LabConfig) -> "SweepSpec":
        if config.sweep is None:
            raise ConfigurationError("configuration has no [sweep] section")
        return cls(base=config, axes=config.sweep.axes, replicates=config.sweep.replicates,
                   max_runs=config.sweep.max_runs)

    def fingerprint(self) -> str:
        """Short digest of everything that decides the rows: base configuration, axes and seeds."""
        payload = self.model_dump_json(exclude={"max_runs"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

    def axis_names(self) -> List[str]:
        return [axis.name.value for axis in self.axes]

    def seeds(self) -> List[int]:
        return list(self.replicates) or [self.base.run.seed]

    def points(self) -> List[Dict[str, float]]:
        names = self.axis_names()
        return [dict(zip(names, values)) for values in itertools.product(*(axis.values for axis in self.axes))]

    def check(self) -> None:
        if len(self.axes) > MAX_SWEEP_AXES:
            raise ConfigurationError(f"at most {MAX_SWEEP_AXES} sweep axes are allowed (got {len(self.axes)})")
        total = len(self.points()) * len(self.seeds())
        if total > self.max_runs:
            raise ConfigurationError(f"sweep has {total} runs, above the cap {self.max_runs}")


class SweepRow(AALabBaseModel):
    """One (point, replicate) run."""
    point_id: int
    replicate: int
    values: Dict[str, float] = Field(default_factory=dict)
    mu_star: float = math.nan
    margin: float = math.nan
    regime: str = ""
    classification: RunClassification = RunClassification.failed
    final_linf_u: float = math.nan
    final_linf_v: float = math.nan
    final_l1_sum: float = math.nan
    sup_linf_sum: float = math.nan
    steps: int = 0
    wall_seconds: float = 0.0
    error: str = ""


FIXED_COLUMNS = ["mu_star", "margin", "regime", "classification", "final_linf_u", "final_linf_v",
                 "final_l1_sum", "sup_linf_sum", "steps", "wall_seconds", "error"]


class SweepResult(AALabBaseModel):
    axes: List[str] = Field(default_factory=list)
    rows: List[SweepRow] = Field(default_factory=list)

    def columns(self) -> List[str]:
        return ["point_id", "replicate", *self.axes, *FIXED_COLUMNS]

    def sorted(self) -> "SweepResult":
        return SweepResult(axes=self.axes, rows=sorted(self.rows, key=lambda row: (row.point_id, row.replicate)))

    def _cells(self, row: SweepRow) -> List[str]:
        cells = [str(row.point_id), str(row.replicate)]
        cells += [repr(float(row.values[name])) for name in self.axes]
        for name in FIXED_COLUMNS:
            value = getattr(row, name)
            if isinstance(value, RunClassification):
                cells.append(value.value)
            elif isinstance(value, float):
                cells.append(repr(value))
            else:
                cells.append(str(value))
        return cells

    def write_header(self, handle, stanza: Sequence[str] = ()) -> None:
        for line in stanza:
            handle.write(f"# {line}\n")
        csv.writer(handle, lineterminator="\n").writerow(self.columns())

    def append_rows(self, handle, rows: Sequence[SweepRow]) -> None:
        writer = csv.writer(handle, lineterminator="\n")
        for row in rows:
            writer.writerow(self._cells(row))

    def to_csv(self, path: Union[str, Path], stanza: Sequence[str] = ()) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            self.write_header(handle, stanza)
            self.append_rows(handle, self.rows)
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path], axes: Sequence[str], drop_incomplete: bool = False) -> "SweepResult":
        """Read a sweep table.

        With ``drop_incomplete`` a final row that is cut short or does not
        parse (an interrupted write) is skipped instead of raising.
        """
        path = Path(path)
        with path.open("r", encoding="utf-8") as handle:
            lines = [line for line in handle if line.strip() and not line.startswith("#")]
        records = list(csv.DictReader(lines))
        rows = []
        for index, record in enumerate(records):
            try:
                if None in record or any(value is None for value in record.values()):
                    raise ValueError(f"row {index} has {len(record)} cells")
                rows.append(SweepRow(
                    point_id=int(record["point_id"]), replicate=int(record["replicate"]),
                    values={name: float(record[name]) for name in axes},
                    **{name: record[name] for name in FIXED_COLUMNS},
                ))
            except (KeyError, TypeError, ValueError) as error:
                if not (drop_incomplete and index == len(records) - 1):
                    raise AALabError(f"{path}: malformed sweep row {index}: {error}") from error
                logger.warning("Dropping incomplete final row of %s: %s", path, error)
        return cls(axes=list(axes), rows=rows)


class MarginPartition(FrozenModel):
    sign: str
    rows: int
    counts: Dict[str, int]

    def fraction(self, classification: RunClassification) -> float:
        return self.counts.get(classification.value, 0) / self.rows if self.rows else 0.0


class MarginTable(FrozenModel):
    partitions: List[MarginPartition] = Field(default_factory=list)
    note: str = SUFFICIENCY_NOTE


class EpsilonStudySpec(FrozenModel):
    """Regularization ladder over a quadratic base configuration."""
    base: LabConfig
    ladder: List[float] = Field(description="Strictly decreasing epsilon values (at least three)")

    @classmethod
    def from_config(cls, config: LabConfig) -> "EpsilonStudySpec":
        if config.epsilon_study is None:
            raise ConfigurationError("configuration has no [epsilon_study] section")
        return cls(base=config, ladder=config.epsilon_study.ladder)

    def check(self) -> None:
        violations = []
        if len(self.ladder) < 3:
            violations.append(f"the epsilon ladder needs at least 3 rungs (got {len(self.ladder)})")
        if any(not later < earlier for earlier, later in zip(self.ladder, self.ladder[1:])):
            violations.append("the epsilon ladder must be strictly decreasing")
        if any(value < 0 for value in self.ladder):
            violations.append("epsilon values must be >= 0")
        if not self.base.model.is_quadratic:
            violations.append("the epsilon study needs r1 = r2 = 2")
        if violations:
            raise ConfigurationError("invalid epsilon study", violations)


class EpsilonRow(FrozenModel):
    eps_coarse: float
    eps_fine: float
    d_u: float = math.nan
    d_v: float = math.nan
    d_w: float = math.nan
    conclusive: bool = True
    note: str = ""


class EpsilonStudyResult(FrozenModel):
    rows: List[EpsilonRow] = Field(default_factory=list)
    monotone_u: bool = False
    monotone_v: bool = False
    monotone_w: bool = False

    def to_csv(self, path: Union[str, Path], stanza: Sequence[str] = ()) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            for line in [*stanza, f"monotone u={self.monotone_u} v={self.monotone_v} w={self.monotone_w}"]:
                handle.write(f"# {line}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["eps_coarse", "eps_fine", "d_u", "d_v", "d_w", "conclusive", "note"])
            for row in self.rows:
                writer.writerow([repr(row.eps_coarse), repr(row.eps_fine), repr(row.d_u), repr(row.d_v),
                                 repr(row.d_w), str(row.conclusive).lower(), row.note])
        return path


def resolve_workers(threads: Optional[int] = None) -> int:
    """Worker count: explicit value, else AA_LAB_THREADS, else the CPU count."""
    if threads is None:
        env = os.environ.get(ENV_THREADS)
        if env:
            try:
                threads = int(env)
            except ValueError:
                logger.warning("Ignoring non-integer %s=%r", ENV_THREADS, env)
    return max(1, threads or os.cpu_count() or 1)


def _point_threshold(config: LabConfig) -> Tuple[float, float]:
    params = config.model
    if params.dim_n < 3:
        return math.nan, math.nan
    threshold = mu_star(ThresholdInputs.from_params(params)).value
    return threshold, min(params.mu1, params.mu2) - threshold


def run_point(base: LabConfig, point_id: int, values: Dict[str, float], seeds: Sequence[int]) -> List[SweepRow]:
    """Run every replicate of one sweep point; failures are recorded in the rows."""
    rows = []
    config = base.with_model_values(**values)
    for seed in seeds:
        row = SweepRow(point_id=point_id, replicate=seed, values=dict(values))
        started = time.perf_counter()
        try:
            report = validate_config(config)
            if not report.ok:
                raise ConfigurationError("invalid sweep point", report.violations)
            row.mu_star, row.margin = _point_threshold(config)
            row.regime = boundedness_regime(config.model).value
            result = run(config.with_run_values(seed=seed))
            last = result.series.samples[-1]
            row.classification = result.classification
            row.final_linf_u = last.linf_u
            row.final_linf_v = last.linf_v
            row.final_l1_sum = last.l1_u + last.l1_v
            row.sup_linf_sum = float(result.series.linf_sum().max())
            row.steps = result.steps
        except Exception as e:
            logger.warning("Sweep point %d (seed %d) failed: %s", point_id, seed, e)
            row.classification = RunClassification.failed
            row.error = str(e).splitlines()[0]
        row.wall_seconds = time.perf_counter() - started
        rows.append(row)
    return rows


def _marker_header(fingerprint: str) -> str:
    return f"# sweep {fingerprint}"


def _read_completed(out_dir: Path, fingerprint: str) -> List[int]:
    """Point ids recorded as complete, or nothing when the marker belongs to another sweep."""
    marker = out_dir / COMPLETED_FILE
    if not marker.exists():
        return []
    lines = marker.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _marker_header(fingerprint):
        logger.warning("%s belongs to a different sweep; starting over", marker)
        return []
    return [int(line) for line in lines[1:] if line.strip()]


def run_sweep(spec: SweepSpec, out_dir: Optional[Union[str, Path]] = None, workers: Optional[int] = None,
              stanza: Sequence[str] = ()) -> SweepResult:
    """Execute every (point, replicate) of a sweep.

    Args:
        spec: Sweep specification.
        out_dir: Directory for ``sweep.csv`` and the resume marker (no files when None).
        workers: Process count; 1 runs in-process.
        stanza: Comment lines written at the top of the final table.

    Returns:
        SweepResult: Rows sorted by (point_id, replicate).
    """
    spec.check()
    points = spec.points()
    seeds = spec.seeds()
    result = SweepResult(axes=spec.axis_names())
    fingerprint = spec.fingerprint()

    out_path = Path(out_dir) if out_dir is not None else None
    done: List[int] = []
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        done = _read_completed(out_path, fingerprint)
        if done and (out_path / SWEEP_FILE).exists():
            previous = SweepResult.from_csv(out_path / SWEEP_FILE, result.axes, drop_incomplete=True)
            result.rows = [row for row in previous.rows if row.point_id in set(done)]
            # rows of unfinished points, a cut-off row included, are dropped from the file
            result.to_csv(out_path / SWEEP_FILE, stanza)
            logger.info("Resuming sweep: %d of %d points already complete", len(set(done)), len(points))
        else:
            done = []
    pending = [(index, values) for index, values in enumerate(points) if index not in set(done)]

    handle = marker = None
    if out_path is not None:
        handle = (out_path / SWEEP_FILE).open("a" if done else "w", newline="", encoding="utf-8")
        if not done:
            result.write_header(handle, stanza)
        marker = (out_path / COMPLETED_FILE).open("a" if done else "w", encoding="utf-8")
        if not done:
            marker.write(_marker_header(fingerprint) + "\n")

    def collect(rows: List[SweepRow]) -> None:
        result.rows.extend(rows)
        if handle is not None:
            result.append_rows(handle, rows)
            handle.flush()
            marker.write(f"{rows[0].point_id}\n")
            marker.flush()

    workers = resolve_workers(workers)
    logger.info("Sweep over %s: %d points x %d replicates on %d worker(s)", result.axes, len(points), len(seeds),
                workers)
    try:
        if workers == 1 or len(pending) <= 1:
            for index, values in pending:
                collect(run_point(spec.base, index, values, seeds))
        else:
            with multiprocessing.Pool(processes=min(workers, len(pending))) as pool:
                handles = [pool.apply_async(run_point, args=(spec.base, index, values, seeds))
                           for index, values in pending]
                for async_result in handles:
                    collect(async_result.get())
    finally:
        if handle is not None:
            handle.close()
            marker.close()

    result = result.sorted()
    if out_path is not None:
        result.to_csv(out_path / SWEEP_FILE, stanza)
    return result


def threshold_margin_table(result: SweepResult) -> MarginTable:
    """Classification counts per sign of the margin min(mu1, mu2) - mu*."""
    groups: Dict[str, Dict[str, int]] = {}
    for row in result.rows:
        if math.isnan(row.margin):
            sign = "undefined"
        elif row.margin > 0:
            sign = "positive"
        elif row.margin < 0:
            sign = "negative"
        else:
            sign = "zero"
        counts = groups.setdefault(sign, {})
        counts[row.classification.value] = counts.get(row.classification.value, 0) + 1
    order = ["positive", "zero", "negative", "undefined"]
    partitions = [MarginPartition(sign=sign, rows=sum(groups[sign].values()), counts=dict(sorted(groups[sign].items())))
                  for sign in order if sign in groups]
    return MarginTable(partitions=partitions)


def space_time_distance(a: Sequence[FieldState], b: Sequence[FieldState]) -> Tuple[float, float, float]:
    """L2(Omega x (0, T)) distances of u, v, w between two stored trajectories.

    Raises:
        TrajectoryMismatchError: Different sample counts, times or grids.
    """
    if len(a) != len(b) or len(a) < 2:
        raise TrajectoryMismatchError(f"trajectories have {len(a)} and {len(b)} samples")
    times_a = np.array([state.t for state in a])
    times_b = np.array([state.t for state in b])
    if not np.array_equal(times_a, times_b):
        raise TrajectoryMismatchError("trajectories are sampled at different times")
    if a[0].grid.cells != b[0].grid.cells:
        raise TrajectoryMismatchError(f"grids differ: {a[0].grid.cells} vs {b[0].grid.cells}")
    vol = a[0].grid.cell_volume
    squared = np.array([[float(((fa.interior - fb.interior) ** 2).sum()) * vol
                         for fa, fb in zip(sa.fields(), sb.fields())] for sa, sb in zip(a, b)])
    distances = np.sqrt(np.maximum(trapezoid(squared, times_a, axis=0), 0.0))
    return float(distances[0]), float(distances[1]), float(distances[2])


def _strictly_decreasing(values: List[float]) -> bool:
    return len(values) >= 2 and all(later < earlier for earlier, later in zip(values, values[1:]))


def _rung_config(base: LabConfig, eps: float) -> LabConfig:
    config = base.with_model_values(epsilon=eps)
    return config.with_run_values(adaptive=False, keep_trajectory=True)


def epsilon_study(spec: EpsilonStudySpec, workers: Optional[int] = None) -> EpsilonStudyResult:
    """Cauchy distances between consecutive rungs of the epsilon ladder.

    Every rung uses the fixed step dt_max so trajectories share sampling
    times. A rung that does not finish cleanly makes its adjacent distances
    inconclusive. No convergence rate is asserted.
    """
    spec.check()
    configs = [_rung_config(spec.base, eps) for eps in spec.ladder]
    workers = resolve_workers(workers)
    if workers == 1:
        results: List[RunResult] = [run(config) for config in configs]
    else:
        with multiprocessing.Pool(processes=min(workers, len(configs))) as pool:
            handles = [pool.apply_async(run, args=(config,)) for config in configs]
            results = [async_result.get() for async_result in handles]

    rows = []
    for j, (coarse, fine) in enumerate(zip(results, results[1:])):
        eps_coarse, eps_fine = spec.ladder[j], spec.ladder[j + 1]
        failed = [eps for eps, result in ((eps_coarse, coarse), (eps_fine, fine))
                  if result.outcome.status != StepStatus.advanced]
        if failed:
            rows.append(EpsilonRow(eps_coarse=eps_coarse, eps_fine=eps_fine, conclusive=False,
                                   note=f"run did not finish at epsilon={failed[0]:g}"))
            continue
        try:
            d_u, d_v, d_w = space_time_distance(coarse.trajectory, fine.trajectory)
        except TrajectoryMismatchError as e:
            rows.append(EpsilonRow(eps_coarse=eps_coarse, eps_fine=eps_fine, conclusive=False, note=str(e)))
            continue
        rows.append(EpsilonRow(eps_coarse=eps_coarse, eps_fine=eps_fine, d_u=d_u, d_v=d_v, d_w=d_w))
        logger.info("epsilon %g -> %g: d = (%.3e, %.3e, %.3e)", eps_coarse, eps_fine, d_u, d_v, d_w)

    conclusive = [row for row in rows if row.conclusive] if all(row.conclusive for row in rows) else []
    return EpsilonStudyResult(
        rows=rows,
        monotone_u=_strictly_decreasing([row.d_u for row in conclusive]),
        monotone_v=_strictly_decreasing([row.d_v for row in conclusive]),
        monotone_w=_strictly_decreasing([row.d_w for row in conclusive]),
    )
