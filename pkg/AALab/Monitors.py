"""Diagnostic time series and a-posteriori checks on computed trajectories.

The monitors sample the norms and functionals that the boundedness and
weak-solution arguments control (masses, L2 and sup norms, the Dirichlet
energy of w, entropies and Fisher informations, the weighted mass functional
y), write them as CSV, and verify the inequalities the theory predicts:

* the absorbing bound implied by y' + y/2 <= C for the mass functional,
* the ODE comparison lemma z' + A z^alpha <= h,
* the weak-solution identities against cosine test functions,
* a quarter-window boundedness classification of a run.
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import Field
from scipy.integrate import cumulative_trapezoid, trapezoid

from AALab import __version__
from AALab.AALabBaseModels import AALabBaseModel, FrozenModel
from AALab.AALabEnums import ComparisonVerdict, FluxScheme, RunClassification, StepStatus, Verdict
from AALab.Analytics import OdeBoundQuery, mass_absorbing_bound, ode_comparison_bound, young_constant_L
from AALab.ConfigModels import ModelParams
from AALab.Constants import FIELD_DT, FIELD_ENERGY_Y, FIELD_ENTROPY_U, FIELD_ENTROPY_V, FIELD_FISHER_U, \
    FIELD_FISHER_V, FIELD_GRAD_W_SQ, FIELD_L1_U, FIELD_L1_V, FIELD_L1_W, FIELD_L2_U, FIELD_L2_V, FIELD_L2_W, \
    FIELD_LAP_W_SQ, FIELD_LINF_U, FIELD_LINF_V, FIELD_LINF_W, FIELD_REJECTED_STEPS, FIELD_T
from AALab.Errors import AALabError, AnalyticsDomainError, TrajectoryMismatchError
from AALab.Fields import FieldState, ScalarField, cell_centers, chemotactic_face_fluxes, entropy_and_fisher, \
    face_inner_product, fill_ghosts, flux_pairing, grad_sq_integral, integral, lap_sq_integral, lp_norm

logger = logging.getLogger(__name__)

MASS_CHECK_RELATIVE_SLACK = 1e-9
MASS_CHECK_ABSOLUTE_SLACK = 1e-12
MASS_CHECK_FIT_FRACTION = 0.25
MASS_CHECK_GROWTH_FRACTION = 1e-3
ODE_HYPOTHESIS_RTOL = 1e-3


class DiagnosticSample(AALabBaseModel):
    """Monitored quantities at one sample time."""
    t: float = Field(description="Sample time")
    l1_u: float = Field(description="L1 norm of u")
    l1_v: float = Field(description="L1 norm of v")
    l1_w: float = Field(description="L1 norm of w")
    l2_u: float = Field(description="L2 norm of u")
    l2_v: float = Field(description="L2 norm of v")
    l2_w: float = Field(description="L2 norm of w")
    linf_u: float = Field(description="Sup norm of u")
    linf_v: float = Field(description="Sup norm of v")
    linf_w: float = Field(description="Sup norm of w")
    grad_w_sq: float = Field(description="Integral of |grad w|^2")
    lap_w_sq: float = Field(description="Integral of |laplacian w|^2")
    entropy_u: float = Field(description="Integral of u ln u")
    entropy_v: float = Field(description="Integral of v ln v")
    fisher_u: float = Field(description="Integral of |grad u|^2 / u")
    fisher_v: float = Field(description="Integral of |grad v|^2 / v")
    energy_y: float = Field(description="Weighted mass functional y")
    dt: float = Field(description="Last accepted time step (0 before the first step)", default=0.0)
    rejected_steps: int = Field(description="Cumulative rejected steps", default=0)

    @property
    def linf_sum(self) -> float:
        return self.linf_u + self.linf_v


COLUMNS: List[str] = [FIELD_T, FIELD_L1_U, FIELD_L1_V, FIELD_L1_W, FIELD_L2_U, FIELD_L2_V, FIELD_L2_W,
                      FIELD_LINF_U, FIELD_LINF_V, FIELD_LINF_W, FIELD_GRAD_W_SQ, FIELD_LAP_W_SQ,
                      FIELD_ENTROPY_U, FIELD_ENTROPY_V, FIELD_FISHER_U, FIELD_FISHER_V, FIELD_ENERGY_Y,
                      FIELD_DT, FIELD_REJECTED_STEPS]


class SeriesMetadata(AALabBaseModel):
    """Reproducibility stanza written at the top of every diagnostics file."""
    version: str = __version__
    config_hash: str = ""
    seed: int = 0
    params: Optional[ModelParams] = None
    cells: List[int] = Field(default_factory=list)
    lengths: List[float] = Field(default_factory=list)

    def stanza(self) -> List[str]:
        lines = [f"aalab_version {self.version}", f"config_hash {self.config_hash}", f"seed {self.seed}"]
        if self.cells:
            lines.append(f"cells {' '.join(str(n) for n in self.cells)}")
            lines.append(f"lengths {' '.join(repr(x) for x in self.lengths)}")
        if self.params is not None:
            lines.append(f"params {self.params.model_dump_json()}")
        return lines

    @classmethod
    def from_stanza(cls, lines: Sequence[str]) -> "SeriesMetadata":
        values: Dict[str, object] = {}
        for line in lines:
            key, _, rest = line.partition(" ")
            rest = rest.strip()
            if key == "aalab_version":
                values["version"] = rest
            elif key == "config_hash":
                values["config_hash"] = rest
            elif key == "seed":
                values["seed"] = int(rest)
            elif key == "cells":
                values["cells"] = [int(token) for token in rest.split()]
            elif key == "lengths":
                values["lengths"] = [float(token) for token in rest.split()]
            elif key == "params":
                values["params"] = ModelParams.model_validate_json(rest)
        return cls(**values)


class DiagnosticSeries(AALabBaseModel):
    """Ordered diagnostic samples of one run (strictly increasing t)."""
    metadata: SeriesMetadata = Field(default_factory=SeriesMetadata)
    samples: List[DiagnosticSample] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def append(self, sample: DiagnosticSample) -> None:
        if self.samples and not sample.t > self.samples[-1].t:
            raise AALabError(f"sample time {sample.t} does not exceed previous time {self.samples[-1].t}")
        self.samples.append(sample)

    def column(self, name: str) -> np.ndarray:
        if name not in COLUMNS:
            raise AALabError(f"unknown diagnostic column '{name}'")
        return np.array([getattr(sample, name) for sample in self.samples], dtype=np.float64)

    def times(self) -> np.ndarray:
        return self.column(FIELD_T)

    def linf_sum(self) -> np.ndarray:
        return self.column(FIELD_LINF_U) + self.column(FIELD_LINF_V)

    def to_csv(self, path: Union[str, Path], extra_comments: Sequence[str] = ()) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as handle:
            for line in [*self.metadata.stanza(), *extra_comments]:
                handle.write(f"# {line}\n")
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(COLUMNS)
            for sample in self.samples:
                writer.writerow([repr(getattr(sample, name)) for name in COLUMNS])
        return path

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "DiagnosticSeries":
        path = Path(path)
        comments: List[str] = []
        rows: List[str] = []
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.startswith("#"):
                    comments.append(line[1:].strip())
                elif line.strip():
                    rows.append(line)
        reader = csv.DictReader(rows)
        missing = [name for name in COLUMNS if name not in (reader.fieldnames or [])]
        if missing:
            raise AALabError(f"{path}: diagnostics file lacks columns {missing}")
        series = cls(metadata=SeriesMetadata.from_stanza(comments))
        for row in reader:
            series.append(DiagnosticSample(**{name: row[name] for name in COLUMNS}))
        return series


class MassInequalityReport(FrozenModel):
    verdict: Verdict
    sup_y: float = math.nan
    y0: float = math.nan
    fitted_constant: float = math.nan
    absorbing_bound: float = math.nan
    eventually_nonincreasing: bool = False
    first_violation_t: Optional[float] = None
    message: str = ""


class OdeComparisonReport(FrozenModel):
    verdict: ComparisonVerdict
    hypothesis_holds: bool
    max_hypothesis_excess: float
    window_bound: float = Field(description="Fitted B: largest integral of h over a window of length tau")
    bound: Optional[float] = Field(default=None, description="C of the comparison lemma (None when not asserted)")
    max_z: float


class WeakTestFunction(FrozenModel):
    """phi(x, t) = amplitude * prod_k cos(k pi x / L) * (1 - t/T)^2 on [0, T]."""
    modes: List[int] = Field(description="Cosine mode index per axis", examples=[[1], [2, 1]])
    t_final: float = Field(description="Time T at which phi vanishes")
    amplitude: float = 1.0

    def spatial(self, grid) -> ScalarField:
        if len(self.modes) != grid.dims:
            raise AALabError(f"test function needs {grid.dims} modes (got {len(self.modes)})")
        values = np.full(grid.shape, self.amplitude)
        for x, k, length in zip(cell_centers(grid), self.modes, grid.lengths):
            values = values * np.cos(k * np.pi * x / length)
        return fill_ghosts(ScalarField(grid, values))

    def temporal(self, t: np.ndarray) -> np.ndarray:
        return (1.0 - np.asarray(t) / self.t_final) ** 2

    def temporal_derivative(self, t: np.ndarray) -> np.ndarray:
        return -2.0 * (1.0 - np.asarray(t) / self.t_final) / self.t_final


class WeakResiduals(FrozenModel):
    r1: float
    r2: float
    r3: float

    def as_tuple(self):
        return self.r1, self.r2, self.r3


class MassBalance(FrozenModel):
    """Largest per-interval defect of the three mass identities, relative to the mass scale."""
    u: float
    v: float
    w: float


def energy_y(state: FieldState, params: ModelParams) -> float:
    """y = 2L/mu1 int u + int v + (4L + 2 mu1)/mu1 int w, L the Young constant."""
    big_l = young_constant_L(params.mu2, params.r2, params.r)
    return (2.0 * big_l / params.mu1 * integral(state.u) + integral(state.v)
            + (4.0 * big_l + 2.0 * params.mu1) / params.mu1 * integral(state.w))


def sample_diagnostics(state: FieldState, params: ModelParams, dt: float = 0.0,
                       rejected_steps: int = 0) -> DiagnosticSample:
    """Evaluate every monitored quantity on a ghost-filled state."""
    entropy_u, fisher_u = entropy_and_fisher(state.u)
    entropy_v, fisher_v = entropy_and_fisher(state.v)
    return DiagnosticSample(
        t=state.t,
        l1_u=lp_norm(state.u, 1), l1_v=lp_norm(state.v, 1), l1_w=lp_norm(state.w, 1),
        l2_u=lp_norm(state.u, 2), l2_v=lp_norm(state.v, 2), l2_w=lp_norm(state.w, 2),
        linf_u=lp_norm(state.u, math.inf), linf_v=lp_norm(state.v, math.inf), linf_w=lp_norm(state.w, math.inf),
        grad_w_sq=grad_sq_integral(state.w),
        lap_w_sq=lap_sq_integral(state.w),
        entropy_u=entropy_u, entropy_v=entropy_v,
        fisher_u=fisher_u, fisher_v=fisher_v,
        energy_y=energy_y(state, params),
        dt=dt,
        rejected_steps=rejected_steps,
    )


def _sustained_growth(t: np.ndarray, y: np.ndarray, level: float) -> bool:
    """Whether y rises by a significant amount without slowing down.

    The rate of rise over the second half of the samples must reach half the
    rate over the first half. An approach to a steady level slows down.
    """
    significant = MASS_CHECK_GROWTH_FRACTION * max(abs(level), 1.0)
    if y.size == 2:
        return bool(y[1] - y[0] > significant)
    mid = y.size // 2
    early = (y[mid] - y[0]) / (t[mid] - t[0])
    late = (y[-1] - y[mid]) / (t[-1] - t[mid])
    return bool(y[-1] - y[0] > significant and late > 0 and late >= 0.5 * early)


def check_mass_inequality(series: DiagnosticSeries, params: ModelParams) -> MassInequalityReport:
    """Verify the absorbing-ball consequence of y' + y/2 <= C on a sampled y.

    The constant is fitted on the first quarter of the sampled time span
    (at least one interval): C is the largest positive value of
    dy/dt + mean(y)/2 over those intervals. The remaining samples are the
    test set. The series violates the inequality when a test sample exceeds
    max(y_0, 2 C) and y keeps rising from there at a rate that does not
    slow down. The ``params`` are carried for the report only; y itself is
    read from the series.
    """
    if len(series) < 3:
        return MassInequalityReport(verdict=Verdict.inconclusive, message="fewer than three samples")
    t = series.times()
    y = series.column(FIELD_ENERGY_Y)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(t))):
        return MassInequalityReport(verdict=Verdict.inconclusive, message="non-finite samples")

    fit_end = t[0] + MASS_CHECK_FIT_FRACTION * (t[-1] - t[0])
    fit_count = min(max(2, int(np.searchsorted(t, fit_end, side="right"))), y.size - 1)
    rates = np.diff(y[:fit_count]) / np.diff(t[:fit_count]) + 0.25 * (y[:fit_count - 1] + y[1:fit_count])
    constant = max(0.0, float(rates.max()))
    y0 = float(y[0])
    bound = max(y0, mass_absorbing_bound(constant))
    envelope = bound * (1.0 + MASS_CHECK_RELATIVE_SLACK) + MASS_CHECK_ABSOLUTE_SLACK

    first_violation = None
    growing = False
    outside = np.flatnonzero(y[fit_count:] > envelope)
    if outside.size:
        start = fit_count + int(outside[0])
        growing = _sustained_growth(t[start - 1:], y[start - 1:], bound)
        if growing:
            first_violation = float(t[start])

    report = MassInequalityReport(
        verdict=Verdict.violated if growing else Verdict.consistent,
        sup_y=float(y.max()), y0=y0, fitted_constant=constant,
        absorbing_bound=bound,
        eventually_nonincreasing=not growing,
        first_violation_t=first_violation,
        message=f"mu1={params.mu1:g}, mu2={params.mu2:g}, r={params.r:g}; fitted on t <= {float(t[fit_count - 1]):g}",
    )
    logger.debug("Mass inequality check: %s (sup y %.6g, bound %.6g)", report.verdict.value, report.sup_y,
                 report.absorbing_bound)
    return report


def check_ode_comparison(times: Sequence[float], z: Sequence[float], a_coef: float, alpha: float, tau: float,
                         h: Sequence[float]) -> OdeComparisonReport:
    """Check z' + A z^alpha <= h on samples and, if it holds, the bound z <= C.

    The differential hypothesis is checked on every sample interval as a
    rate: the difference quotient of z plus the trapezoid mean of
    A z^alpha - h, against a tolerance relative to the rate scale of the
    data. The window bound B is the largest integral of h over [t, t + tau]
    within the data. The conclusion is never asserted when the hypothesis
    fails.
    """
    t = np.asarray(times, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if t.size < 2 or z.shape != t.shape or h.shape != t.shape:
        raise AALabError("check_ode_comparison needs matching series with at least two samples")
    if np.any(np.diff(t) <= 0):
        raise AALabError("sample times must be strictly increasing")

    damping = a_coef * np.maximum(z, 0.0) ** alpha
    source = damping - h
    excess = np.diff(z) / np.diff(t) + 0.5 * (source[:-1] + source[1:])
    scale = max(1.0, float(np.abs(z).max()) / float(t[-1] - t[0]), float(damping.max()), float(np.abs(h).max()))
    max_excess = float(excess.max())
    hypothesis = max_excess <= ODE_HYPOTHESIS_RTOL * scale

    cumulative = cumulative_trapezoid(h, t, initial=0.0)
    window_end = np.minimum(t + tau, t[-1])
    windows = np.interp(window_end, t, cumulative) - cumulative
    window_bound = max(0.0, float(windows.max()))
    max_z = float(z.max())

    if not hypothesis:
        return OdeComparisonReport(verdict=ComparisonVerdict.hypothesisFails, hypothesis_holds=False,
                                   max_hypothesis_excess=max_excess, window_bound=window_bound, max_z=max_z)
    bound = ode_comparison_bound(OdeBoundQuery(z0=max(float(z[0]), 0.0), a_coef=a_coef, alpha=alpha,
                                               b_bound=window_bound, tau=tau))
    holds = max_z <= bound * (1.0 + MASS_CHECK_RELATIVE_SLACK) + MASS_CHECK_ABSOLUTE_SLACK
    return OdeComparisonReport(verdict=ComparisonVerdict.holds if holds else ComparisonVerdict.conclusionFails,
                               hypothesis_holds=True, max_hypothesis_excess=max_excess,
                               window_bound=window_bound, bound=bound, max_z=max_z)


def _check_trajectory(trajectory: Sequence[FieldState]) -> np.ndarray:
    if len(trajectory) < 2:
        raise TrajectoryMismatchError("a stored trajectory needs at least two states")
    times = np.array([state.t for state in trajectory], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise TrajectoryMismatchError("trajectory times must be strictly increasing")
    return times


def weak_residuals(trajectory: Sequence[FieldState], params: ModelParams, phi: WeakTestFunction) -> WeakResiduals:
    """Residuals of the three weak-solution identities against ``phi``.

    Space integrals use the cell (midpoint) rule and the discrete Dirichlet
    form; time integrals use the trapezoid rule over the stored samples. The
    chemotactic term pairs the central face flux with the face gradient of
    phi, including F_eps when the run is regularized.

    Raises:
        AnalyticsDomainError: r1 or r2 differs from 2.
        TrajectoryMismatchError: Fewer than two states or non-increasing times.
    """
    if not params.is_quadratic:
        raise AnalyticsDomainError("weak residuals are defined for r1 = r2 = 2 only")
    times = _check_trajectory(trajectory)
    if abs(times[0]) > 1e-12 or abs(times[-1] - phi.t_final) > 1e-9 * max(1.0, phi.t_final):
        raise TrajectoryMismatchError(
            f"trajectory covers [{times[0]}, {times[-1]}] but the test function lives on [0, {phi.t_final}]"
        )
    grid = trajectory[0].grid
    spatial = phi.spatial(grid)
    theta = phi.temporal(times)
    theta_t = phi.temporal_derivative(times)
    vol = grid.cell_volume
    x = spatial.interior

    series = {name: np.zeros(times.size) for name in ("u_t", "v_t", "w_t", "u_rhs", "v_rhs", "w_rhs")}
    for n, state in enumerate(trajectory):
        u, v, w = (fill_ghosts(field) for field in state.fields())
        ui, vi, wi = u.interior, v.interior, w.interior
        series["u_t"][n] = theta_t[n] * float((ui * x).sum()) * vol
        series["v_t"][n] = theta_t[n] * float((vi * x).sum()) * vol
        series["w_t"][n] = theta_t[n] * float((wi * x).sum()) * vol
        chem_u = flux_pairing(chemotactic_face_fluxes(u, w, params.chi1, params.epsilon, params.dim_n,
                                                      FluxScheme.central), spatial)
        chem_v = flux_pairing(chemotactic_face_fluxes(v, w, params.chi2, params.epsilon, params.dim_n,
                                                      FluxScheme.central), spatial)
        series["u_rhs"][n] = theta[n] * (-face_inner_product(u, spatial) + chem_u
                                         + float(((wi - params.mu1 * ui ** 2) * x).sum()) * vol)
        series["v_rhs"][n] = theta[n] * (-face_inner_product(v, spatial) + chem_v
                                         + float(((wi + params.r * ui * vi - params.mu2 * vi ** 2) * x).sum()) * vol)
        series["w_rhs"][n] = theta[n] * (-face_inner_product(w, spatial) + float(((ui + vi - wi) * x).sum()) * vol)

    first = trajectory[0]
    residuals = []
    for name, field in (("u", first.u), ("v", first.v), ("w", first.w)):
        lhs = -trapezoid(series[f"{name}_t"], times) - float((field.interior * x).sum()) * vol * theta[0]
        rhs = trapezoid(series[f"{name}_rhs"], times)
        residuals.append(abs(float(lhs - rhs)))
    return WeakResiduals(r1=residuals[0], r2=residuals[1], r3=residuals[2])


def mass_balance_residuals(trajectory: Sequence[FieldState], params: ModelParams) -> MassBalance:
    """Discrete mass identities d/dt int u = int(w - mu1 u^r1) etc., per sample interval.

    Each defect |delta mass - trapezoid(source)| is divided by the largest
    mass in the trajectory (at least 1).
    """
    times = _check_trajectory(trajectory)
    masses = np.zeros((times.size, 3))
    sources = np.zeros((times.size, 3))
    for n, state in enumerate(trajectory):
        vol = state.grid.cell_volume
        ui, vi, wi = (np.maximum(field.interior, 0.0) for field in state.fields())
        masses[n] = [integral(state.u), integral(state.v), integral(state.w)]
        sources[n] = [
            float((wi - params.mu1 * ui ** params.r1).sum()) * vol,
            float((wi + params.r * ui * vi - params.mu2 * vi ** params.r2).sum()) * vol,
            float((ui + vi - wi).sum()) * vol,
        ]
    dt = np.diff(times)[:, None]
    defects = np.abs(np.diff(masses, axis=0) - dt * 0.5 * (sources[:-1] + sources[1:]))
    scale = max(1.0, float(np.abs(masses).max()))
    worst = defects.max(axis=0) / scale
    return MassBalance(u=float(worst[0]), v=float(worst[1]), w=float(worst[2]))


def _window(values: np.ndarray, t: np.ndarray, start: float, stop: float, fallback: slice) -> np.ndarray:
    chosen = values[(t >= start) & (t <= stop)]
    return chosen if chosen.size else values[fallback]


def classify_run(series: DiagnosticSeries, outcome, bounded_ratio: float = 1.05) -> RunClassification:
    """Numerical boundedness classification from sup-norm quarter windows.

    ``outcome`` is a StepOutcome or a StepStatus. Blow-up passes through;
    a run that stopped on a step-size underflow is GrowthSuspected; otherwise
    the run is Bounded when the largest L-inf(u) + L-inf(v) over the last
    quarter of the time span is at most ``bounded_ratio`` times the largest
    value over the second quarter.
    """
    status = getattr(outcome, "status", outcome)
    if status == StepStatus.blowupDetected:
        return RunClassification.blowUp
    if status == StepStatus.dtUnderflow:
        return RunClassification.growthSuspected
    if len(series) < 2:
        return RunClassification.bounded

    t = series.times()
    sup = series.linf_sum()
    t0, span = float(t[0]), float(t[-1] - t[0])
    n = sup.size
    second = _window(sup, t, t0 + 0.25 * span, t0 + 0.5 * span, slice(n // 4, max(n // 2, n // 4 + 1)))
    last = _window(sup, t, t0 + 0.75 * span, t0 + span, slice(3 * n // 4, n))
    if not (np.all(np.isfinite(second)) and np.all(np.isfinite(last))):
        return RunClassification.growthSuspected
    if last.max() <= bounded_ratio * second.max():
        return RunClassification.bounded
    return RunClassification.growthSuspected
