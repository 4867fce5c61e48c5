"""IMEX time stepping of the chemotaxis system.

One step is an operator split Euler step:

(a) explicit chemotaxis and reactions for u and v, explicit source u + v for w;
(b) backward-Euler diffusion for all three fields (with the decay of w),
    each a scalar Helmholtz problem solved by matrix-free conjugate gradients.

Positivity is enforced by rejection: a stage that leaves any field below
-1e-12 is retried with upwind fluxes and half the step. Only conjugate-gradient round-off within the
solver tolerance is reset to zero. Five consecutive rejections stop the run with ``dt_underflow``.
"""

from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import List, NamedTuple, Optional, Union

import numpy as np
from pydantic import Field
from scipy.sparse.linalg import LinearOperator, cg

from AALab.AALabBaseModels import AALabBaseModel, ArrayModel
from AALab.AALabEnums import FluxScheme, RunClassification, StepStatus
from AALab.Analytics import reaction_rates
from AALab.ConfigModels import LabConfig, ModelParams, RunSpec, config_hash
from AALab.Constants import DT_FLOOR, DT_UNDERFLOW, MAX_CONSECUTIVE_REJECTIONS, NEGATIVITY_TOLERANCE
from AALab.Errors import LinearSolverError
from AALab.Fields import FieldState, Grid, ScalarField, chemotactic_divergence, f_eps, face_gradients, \
    fill_ghosts, laplacian, lp_norm
from AALab.InitialData import generate_initial_state
from AALab.Monitors import DiagnosticSeries, SeriesMetadata, classify_run, sample_diagnostics
from AALab.Snapshots import snapshot_name, write_snapshot

logger = logging.getLogger(__name__)


class StepControl(AALabBaseModel):
    """Mutable step-size and scheme state owned by one run."""
    dt_current: float = Field(description="Last accepted step")
    dt_max: float = Field(description="Upper bound of the step")
    cfl_advection: float = 0.4
    cfl_reaction: float = 0.4
    rejected_steps: int = Field(default=0, description="Cumulative rejected attempts")
    scheme: FluxScheme = FluxScheme.central
    adaptive: bool = True
    linear_tol: float = 1e-10
    blowup_linf: float = 1e8

    @classmethod
    def from_run(cls, run: RunSpec) -> "StepControl":
        return cls(dt_current=run.dt_max, dt_max=run.dt_max, cfl_advection=run.cfl_advection,
                   cfl_reaction=run.cfl_reaction, scheme=run.scheme, adaptive=run.adaptive,
                   linear_tol=run.linear_tol, blowup_linf=run.blowup_linf)


class StepOutcome(ArrayModel):
    status: StepStatus
    state: FieldState
    dt: float = 0.0
    iterations: int = 0
    rejections: int = 0


class HelmholtzSolution(NamedTuple):
    field: ScalarField
    iterations: int
    residual: float


class ExplicitStage(NamedTuple):
    u: ScalarField
    v: ScalarField
    w: ScalarField
    chem_u: ScalarField
    chem_v: ScalarField


class RunResult(ArrayModel):
    outcome: StepOutcome
    series: DiagnosticSeries
    classification: RunClassification
    steps: int = 0
    min_accepted_value: float = Field(default=math.inf, description="Smallest field value over every accepted step")
    wall_seconds: float = 0.0
    trajectory: List[FieldState] = Field(default_factory=list)
    snapshots: List[Path] = Field(default_factory=list)


def linf_sum(state: FieldState) -> float:
    return lp_norm(state.u, math.inf) + lp_norm(state.v, math.inf)


def compute_dt(state: FieldState, params: ModelParams, ctl: StepControl) -> float:
    """Stable explicit step min(dt_max, cfl_adv h / V_max, cfl_reac / R_max), floored at 1e-14.

    ``h`` is the harmonic combination 1 / sum(1/h_k) of the spacings (h in 1D);
    V_max = max(chi1, chi2) max|grad w| max F_eps and
    R_max = max(mu1 r1 u^(r1-1) + mu2 r2 v^(r2-1) + r (u + v) + 1).
    """
    grid = state.grid
    h_eff = 1.0 / sum(1.0 / h for h in grid.spacing)
    grad_max = max(float(np.abs(face_gradients(state.w, axis)).max()) for axis in range(grid.dims))
    smallest = max(min(float(state.u.interior.min()), float(state.v.interior.min())), 0.0)
    velocity = max(params.chi1, params.chi2) * grad_max * f_eps(smallest, params.epsilon, params.dim_n)

    u = np.maximum(state.u.interior, 0.0)
    v = np.maximum(state.v.interior, 0.0)
    stiffness = float(np.max(params.mu1 * params.r1 * u ** (params.r1 - 1.0)
                             + params.mu2 * params.r2 * v ** (params.r2 - 1.0)
                             + params.r * (u + v) + 1.0))

    dt = ctl.dt_max
    if velocity > 0:
        dt = min(dt, ctl.cfl_advection * h_eff / velocity)
    dt = min(dt, ctl.cfl_reaction / stiffness)
    return max(dt, DT_FLOOR)


def implicit_diffuse(f: ScalarField, dt: float, decay: float, linear_tol: float = 1e-10) -> HelmholtzSolution:
    """Backward-Euler solve (1 + dt*decay - dt*Laplacian) f_new = f by conjugate gradients.

    The iteration starts from the right-hand side, so constants pass through
    unchanged for ``decay = 0`` and the cell sum (mass) is preserved to
    round-off for any tolerance.

    Raises:
        LinearSolverError: No convergence within 10 * (total cells)^(1/dims) iterations.
    """
    grid = f.grid
    size = grid.total_cells
    work = ScalarField(grid)

    def apply(x: np.ndarray) -> np.ndarray:
        work.interior[...] = x.reshape(grid.shape)
        fill_ghosts(work)
        return ((1.0 + dt * decay) * x - dt * laplacian(work).interior.ravel())

    operator = LinearOperator((size, size), matvec=apply, dtype=np.float64)
    rhs = np.ascontiguousarray(f.interior, dtype=np.float64).ravel()
    maxiter = int(10 * math.ceil(size ** (1.0 / grid.dims)))
    iterations = 0

    def count(_: np.ndarray) -> None:
        nonlocal iterations
        iterations += 1

    solution, info = cg(operator, rhs, x0=rhs.copy(), rtol=linear_tol, atol=0.0, maxiter=maxiter, callback=count)
    rhs_norm = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(rhs - apply(solution)) / rhs_norm) if rhs_norm > 0 else 0.0
    if info != 0 and residual > linear_tol:
        raise LinearSolverError(iterations, residual, linear_tol)
    result = fill_ghosts(ScalarField(grid, solution.reshape(grid.shape)))
    return HelmholtzSolution(result, iterations, residual)


def explicit_update(state: FieldState, params: ModelParams, scheme: FluxScheme, dt: float) -> ExplicitStage:
    """Explicit stage: chemotaxis and reactions for u, v and the source u + v for w."""
    state.fill_ghosts()
    u, v, w = state.u, state.v, state.w
    chem_u = chemotactic_divergence(u, w, params.chi1, params.epsilon, params.dim_n, scheme)
    chem_v = chemotactic_divergence(v, w, params.chi2, params.epsilon, params.dim_n, scheme)
    fu, fv, _ = reaction_rates(u.interior, v.interior, w.interior, params)
    u_star = ScalarField(state.grid, u.interior + dt * (chem_u.interior + fu))
    v_star = ScalarField(state.grid, v.interior + dt * (chem_v.interior + fv))
    w_star = ScalarField(state.grid, w.interior + dt * (u.interior + v.interior))
    return ExplicitStage(u_star, v_star, w_star, chem_u, chem_v)


def _settle_roundoff(solution: HelmholtzSolution, rhs: ScalarField, linear_tol: float) -> Optional[ScalarField]:
    """Zero solver round-off below the scheme tolerance; None when the negative part is real."""
    field = solution.field
    lowest = float(field.interior.min())
    if lowest >= -NEGATIVITY_TOLERANCE:
        return field
    slack = linear_tol * float(np.abs(rhs.interior).max())
    if lowest < -(NEGATIVITY_TOLERANCE + slack):
        return None
    reset = field.interior < -NEGATIVITY_TOLERANCE
    logger.debug("Reset %d cells of CG round-off (min %.3e)", int(reset.sum()), lowest)
    field.interior[reset] = 0.0
    return fill_ghosts(field)


def _attempt(state: FieldState, params: ModelParams, scheme: FluxScheme, dt: float,
             linear_tol: float) -> Optional[tuple]:
    stage = explicit_update(state, params, scheme, dt)
    if min(float(f.interior.min()) for f in (stage.u, stage.v, stage.w)) < -NEGATIVITY_TOLERANCE:
        return None
    solved = []
    iterations = 0
    for rhs, decay in ((stage.u, 0.0), (stage.v, 0.0), (stage.w, 1.0)):
        solution = implicit_diffuse(rhs, dt, decay, linear_tol)
        iterations += solution.iterations
        field = _settle_roundoff(solution, rhs, linear_tol)
        if field is None:
            return None
        solved.append(field)
    return FieldState(u=solved[0], v=solved[1], w=solved[2], t=state.t + dt), iterations


def step(state: FieldState, params: ModelParams, ctl: StepControl, dt_limit: Optional[float] = None) -> StepOutcome:
    """Advance one IMEX step with positivity retries and blow-up detection.

    Args:
        state: Current state (ghosts are refilled).
        params: Model coefficients.
        ctl: Step control; ``rejected_steps`` and ``dt_current`` are updated.
        dt_limit: Optional cap on the step (used to land on output times).

    Returns:
        StepOutcome: ``advanced`` with the new state, ``blowup_detected``
        (state before or after the step exceeds the ceiling) or
        ``dt_underflow``.

    Raises:
        LinearSolverError: A diffusion solve failed to converge.
    """
    state.fill_ghosts()
    if linf_sum(state) > ctl.blowup_linf:
        return StepOutcome(status=StepStatus.blowupDetected, state=state)

    dt = compute_dt(state, params, ctl) if ctl.adaptive else ctl.dt_max
    if dt < DT_UNDERFLOW:
        logger.warning("Step size %.3e fell below %.0e at t=%.6g", dt, DT_UNDERFLOW, state.t)
        return StepOutcome(status=StepStatus.dtUnderflow, state=state, dt=dt)
    if dt_limit is not None:
        dt = min(dt, dt_limit)

    scheme = ctl.scheme
    rejections = 0
    while True:
        attempt = _attempt(state, params, scheme, dt, ctl.linear_tol)
        if attempt is not None:
            break
        rejections += 1
        ctl.rejected_steps += 1
        logger.warning("Rejected step at t=%.6g (dt=%.3e, %s); retrying with upwind and dt/2",
                       state.t, dt, scheme.value)
        scheme = FluxScheme.upwind
        dt *= 0.5
        if rejections >= MAX_CONSECUTIVE_REJECTIONS or dt < DT_UNDERFLOW:
            return StepOutcome(status=StepStatus.dtUnderflow, state=state, dt=dt, rejections=rejections)

    new_state, iterations = attempt
    ctl.dt_current = dt
    status = StepStatus.blowupDetected if linf_sum(new_state) > ctl.blowup_linf else StepStatus.advanced
    return StepOutcome(status=status, state=new_state, dt=dt, iterations=iterations, rejections=rejections)


def run(config: LabConfig, out_dir: Optional[Union[str, Path]] = None,
        initial_state: Optional[FieldState] = None) -> RunResult:
    """Integrate a configuration until t_end, blow-up or step underflow.

    Diagnostics are sampled at every multiple of ``output_every`` (steps are
    shortened to land on them exactly) and at t_end. Snapshots are written to
    ``out_dir`` every ``snapshot_every`` when both are set.

    Raises:
        LinearSolverError: A diffusion solve failed.
        OSError: A snapshot could not be written.
    """
    params, domain, run_spec, initial = config.astuple()
    grid = Grid.from_domain(domain)
    if initial_state is not None:
        state = initial_state.copy()
    else:
        state = generate_initial_state(initial, domain, run_spec.seed, grid)
    state.fill_ghosts()
    lowest = state.min_value()

    ctl = StepControl.from_run(run_spec)
    metadata = SeriesMetadata(config_hash=config_hash(config), seed=run_spec.seed, params=params,
                              cells=list(grid.cells), lengths=list(grid.lengths))
    series = DiagnosticSeries(metadata=metadata)
    series.append(sample_diagnostics(state, params))
    trajectory = [state.copy()] if run_spec.keep_trajectory else []

    snapshot_dir = Path(out_dir) if out_dir is not None and run_spec.snapshot_every > 0 else None
    snapshots: List[Path] = []
    if snapshot_dir is not None:
        snapshot_dir.mkdir(parents=True, exist_ok=True)
        snapshots.append(write_snapshot(snapshot_dir / snapshot_name(0), state))

    t_end = run_spec.t_end
    tolerance = 1e-12 * max(1.0, t_end)
    sample_index, snapshot_index = 1, 1
    steps = 0
    started = time.perf_counter()
    logger.info("Run %s: %s cells, t_end=%g", metadata.config_hash, grid.cells, t_end)

    outcome = StepOutcome(status=StepStatus.advanced, state=state)
    if linf_sum(state) > run_spec.blowup_linf:
        outcome = StepOutcome(status=StepStatus.blowupDetected, state=state)

    while outcome.status == StepStatus.advanced and state.t < t_end - tolerance:
        next_sample = min(sample_index * run_spec.output_every, t_end)
        target = next_sample
        if snapshot_dir is not None:
            target = min(target, snapshot_index * run_spec.snapshot_every)
        outcome = step(state, params, ctl, dt_limit=target - state.t)
        if outcome.status == StepStatus.dtUnderflow:
            break
        steps += 1
        state = outcome.state
        lowest = min(lowest, state.min_value())
        if abs(state.t - target) <= tolerance:
            state.t = target
        if outcome.status == StepStatus.blowupDetected:
            if state.is_finite():
                series.append(sample_diagnostics(state, params, ctl.dt_current, ctl.rejected_steps))
            logger.warning("Blow-up detected at t=%.6g (L-inf(u)+L-inf(v) > %g)", state.t, run_spec.blowup_linf)
            break
        if state.t >= next_sample - tolerance:
            series.append(sample_diagnostics(state, params, ctl.dt_current, ctl.rejected_steps))
            if run_spec.keep_trajectory:
                trajectory.append(state.copy())
            while sample_index * run_spec.output_every <= state.t + tolerance:
                sample_index += 1
        if snapshot_dir is not None and state.t >= snapshot_index * run_spec.snapshot_every - tolerance:
            snapshots.append(write_snapshot(snapshot_dir / snapshot_name(snapshot_index), state))
            while snapshot_index * run_spec.snapshot_every <= state.t + tolerance:
                snapshot_index += 1
        logger.debug("t=%.6g dt=%.3e iterations=%d", state.t, ctl.dt_current, outcome.iterations)

    wall = time.perf_counter() - started
    classification = classify_run(series, outcome, run_spec.bounded_ratio)
    logger.info("Run %s finished: %s after %d steps at t=%.6g (%s)", metadata.config_hash,
                outcome.status.displayName(), steps, state.t, classification.value)
    return RunResult(outcome=outcome, series=series, classification=classification, steps=steps,
                     min_accepted_value=lowest, wall_seconds=wall, trajectory=trajectory, snapshots=snapshots)
