"""Configuration models for the chemotaxis laboratory.

This module defines the pydantic models that hold every model coefficient,
the discretization of the rectangular domain, the run controls and the
initial data, together with their validation and TOML serialization. The
models are frozen: a configuration is immutable after load and can be shared
read-only by any number of workers.

The configuration file is TOML with the sections ``[model]``, ``[domain]``,
``[run]`` and ``[initial]`` (plus the optional ``[sweep]`` and
``[epsilon_study]`` sections read by the corresponding subcommands). Keys are
named exactly as the model fields; unknown keys are fatal.

Note:
    The boundedness theorem's threshold condition is printed in the source
    literature as ``min{mu1, mu1}`` and an earlier condition as ``mu1*mu1^2``.
    Both are read here as ``min{mu1, mu2}`` and ``mu1*mu2^2``.
"""

from __future__ import annotations

import hashlib
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import tomli_w
from pydantic import Field, ValidationError, computed_field

from AALab.AALabBaseModels import FrozenModel
from AALab.AALabEnums import FluxScheme, InitialDataKind, SweepParameter
from AALab.Constants import MAX_SWEEP_AXES, MAX_SWEEP_RUNS, MAX_TOTAL_CELLS, SECTION_DOMAIN, SECTION_EPSILON_STUDY, \
    SECTION_INITIAL, SECTION_MODEL, SECTION_RUN, SECTION_SWEEP
from AALab.Errors import ConfigurationError

logger = logging.getLogger(__name__)

KNOWN_SECTIONS = (SECTION_MODEL, SECTION_DOMAIN, SECTION_RUN, SECTION_INITIAL, SECTION_SWEEP, SECTION_EPSILON_STUDY)


class ModelParams(FrozenModel):
    """Coefficients of the three-component chemotaxis system.

    The system couples CD4+ T-cells ``u``, CD8+ T-cells ``v`` and the
    IFN-gamma concentration ``w``::

        u_t = Δu - chi1 ∇·(u F_eps(u) ∇w) + w - mu1 u^r1
        v_t = Δv - chi2 ∇·(v F_eps(v) ∇w) + w + r u v - mu2 v^r2
        w_t = Δw + u + v - w

    with homogeneous Neumann boundary conditions and
    ``F_eps(s) = (1 + eps s)^-(N+1)`` (``F_0 = 1``).

    Attributes:
        chi1: Chemotactic sensitivity of u.
        chi2: Chemotactic sensitivity of v.
        mu1: Logistic damping rate of u.
        mu2: Logistic damping rate of v.
        r1: Logistic exponent of u.
        r2: Logistic exponent of v.
        r: Cross-activation rate of v by u.
        epsilon: Flux regularization parameter (0 = unregularized).
        dim_n: Analytic dimension N used in F_eps and mu*, independent of the grid.
        c_sobolev: Maximal-regularity constant C_{N/2+1}; a placeholder scale, no value is known.

    Examples:
        >>> ModelParams(chi1=1.0, chi2=1.0, mu1=2.0, mu2=2.0, r=1.0)
    """
    chi1: float = Field(
        description="Chemotactic sensitivity of u (dimensionless, > 0)",
        examples=[1.0, 2.0]
    )
    chi2: float = Field(
        description="Chemotactic sensitivity of v (dimensionless, > 0)",
        examples=[1.0, 2.0]
    )
    mu1: float = Field(
        description="Logistic damping rate of u (> 0)",
        examples=[0.5, 1.0, 4.0]
    )
    mu2: float = Field(
        description="Logistic damping rate of v (> 0)",
        examples=[0.5, 1.0, 4.0]
    )
    r1: float = Field(
        description="Logistic exponent of u (>= 2, 2 is the quadratic system)",
        default=2.0,
        examples=[2.0, 2.5, 3.0]
    )
    r2: float = Field(
        description="Logistic exponent of v (>= 2)",
        default=2.0,
        examples=[2.0, 2.5, 3.0]
    )
    r: float = Field(
        description="Cross-activation rate in the term r*u*v (>= 0)",
        default=0.0,
        examples=[0.0, 1.0]
    )
    epsilon: float = Field(
        description="Flux regularization parameter of F_eps(s) = (1 + eps*s)^-(N+1); 0 disables it",
        default=0.0,
        examples=[0.0, 0.1, 0.0125]
    )
    dim_n: int = Field(
        description="Analytic dimension N used inside F_eps and mu*; independent of the simulated grid",
        default=3,
        examples=[3, 4]
    )
    c_sobolev: float = Field(
        description="Maximal Sobolev regularity constant C_{N/2+1} (> 0). No value is known; "
                    "1.0 is a placeholder scale.",
        default=1.0,
        examples=[1.0, 0.5]
    )

    @property
    def is_quadratic(self) -> bool:
        return self.r1 == 2.0 and self.r2 == 2.0


class DomainSpec(FrozenModel):
    """Axis-aligned box discretized into equal cells.

    Attributes:
        dims: Spatial dimension of the simulated grid (1, 2 or 3).
        lengths: Extent of the box along each axis.
        cells: Number of cells along each axis.

    Examples:
        >>> DomainSpec(dims=2, lengths=[1.0, 2.0], cells=[32, 64]).spacing
        [0.03125, 0.03125]
    """
    dims: int = Field(
        description="Spatial dimension of the simulated grid",
        default=1,
        examples=[1, 2, 3]
    )
    lengths: List[float] = Field(
        description="Per-axis extent of the box (length units, > 0)",
        default_factory=lambda: [1.0],
        examples=[[1.0], [1.0, 1.0]]
    )
    cells: List[int] = Field(
        description="Per-axis cell count (>= 4)",
        default_factory=lambda: [64],
        examples=[[64], [32, 32]]
    )

    @computed_field
    @property
    def spacing(self) -> List[float]:
        return [length / count for length, count in zip(self.lengths, self.cells)]

    @computed_field
    @property
    def total_cells(self) -> int:
        return math.prod(self.cells)


class RunSpec(FrozenModel):
    """Time integration and output controls of one simulation.

    Attributes:
        t_end: Final time (0 evaluates the initial diagnostics only).
        dt_max: Upper bound of the time step.
        cfl_advection: Safety factor of the chemotactic CFL limit.
        cfl_reaction: Safety factor of the reaction stiffness limit.
        output_every: Diagnostic sampling interval.
        snapshot_every: Snapshot interval (0 = no snapshots).
        blowup_linf: Ceiling of L-inf(u) + L-inf(v) that declares blow-up.
        linear_tol: Relative residual tolerance of the implicit diffusion solves.
        seed: Seed of generated random initial data.
        adaptive: When false every step uses dt_max.
        scheme: Flux scheme tried first on every step.
        bounded_ratio: Late/mid-run sup-norm ratio accepted as Bounded.
        keep_trajectory: Store the full state at every diagnostic sample.
    """
    t_end: float = Field(
        description="Final time",
        default=1.0,
        examples=[1.0, 20.0]
    )
    dt_max: float = Field(
        description="Maximum time step",
        default=1e-2,
        examples=[1e-2, 1e-3]
    )
    cfl_advection: float = Field(
        description="Safety factor for the chemotactic CFL limit, in (0, 1]",
        default=0.4
    )
    cfl_reaction: float = Field(
        description="Safety factor for the reaction stiffness limit, in (0, 1]",
        default=0.4
    )
    output_every: float = Field(
        description="Diagnostic sampling interval",
        default=0.1
    )
    snapshot_every: float = Field(
        description="Field snapshot interval (0 = no snapshots)",
        default=0.0
    )
    blowup_linf: float = Field(
        description="L-infinity ceiling of u + v declaring blow-up (> 1)",
        default=1e8
    )
    linear_tol: float = Field(
        description="Relative residual tolerance of the implicit diffusion solve, in (0, 1e-4]",
        default=1e-10
    )
    seed: int = Field(
        description="Pseudo-random seed for generated initial data",
        default=0
    )
    adaptive: bool = Field(
        description="Choose dt from the CFL and reaction limits; false keeps dt = dt_max",
        default=True
    )
    scheme: FluxScheme = Field(
        description="Chemotactic flux scheme tried first on each step",
        default=FluxScheme.central
    )
    bounded_ratio: float = Field(
        description="Run is Bounded when max L-inf over the last quarter <= ratio * max over the second quarter",
        default=1.05
    )
    keep_trajectory: bool = Field(
        description="Store the full field state at every diagnostic sample",
        default=False
    )


class InitialProfile(FrozenModel):
    """Parameters of one generated initial field.

    Attributes:
        background: Constant level the profile is built on.
        amplitude: Bump / mode / noise amplitude.
        modes: Cosine mode index per axis (cosine-bump).
        centers: Bump centers in fractional coordinates (gaussian-bumps); drawn from the seed when absent.
        width: Gaussian width in fractions of the box.
        count: Number of random bumps when centers are absent.
    """
    background: float = Field(
        description="Constant background level (>= 0)",
        default=1.0,
        examples=[0.0, 1.0]
    )
    amplitude: float = Field(
        description="Amplitude of the bump, mode or relative noise",
        default=0.0,
        examples=[0.0, 0.5]
    )
    modes: List[int] = Field(
        description="Cosine mode index per axis for cosine-bump data",
        default_factory=lambda: [1],
        examples=[[1], [1, 2]]
    )
    centers: Optional[List[List[float]]] = Field(
        description="Gaussian bump centers in fractional coordinates",
        default=None,
        examples=[[[0.5]], [[0.25, 0.25], [0.75, 0.5]]]
    )
    width: float = Field(
        description="Gaussian bump width as a fraction of the box",
        default=0.1
    )
    count: int = Field(
        description="Number of randomly placed bumps when centers are not given",
        default=1
    )


class InitialData(FrozenModel):
    """Initial data (u0, v0, w0).

    Generated data satisfy u0 >= 0 with u0 not identically zero, v0 >= 0 and
    w0 >= 0.
    """
    kind: InitialDataKind = Field(
        description="Family of generated initial data",
        default=InitialDataKind.constant
    )
    u: InitialProfile = Field(default_factory=InitialProfile)
    v: InitialProfile = Field(default_factory=InitialProfile)
    w: InitialProfile = Field(default_factory=InitialProfile)
    snapshot_path: Optional[str] = Field(
        description="Snapshot file read by the from-snapshot kind",
        default=None
    )


class SweepAxis(FrozenModel):
    name: SweepParameter = Field(description="Swept model parameter")
    values: List[float] = Field(description="Values taken along this axis")


class SweepSection(FrozenModel):
    axes: List[SweepAxis] = Field(
        description="At most three swept parameters",
        default_factory=list
    )
    replicates: List[int] = Field(
        description="Initial-data seeds run at every point (empty = run.seed only)",
        default_factory=list
    )
    max_runs: int = Field(
        description="Cap on points times replicates",
        default=MAX_SWEEP_RUNS
    )


class EpsilonSection(FrozenModel):
    ladder: List[float] = Field(
        description="Strictly decreasing regularization values",
        default_factory=lambda: [0.1, 0.05, 0.025, 0.0125]
    )


class LabConfig(FrozenModel):
    """Complete configuration bundle as loaded from one TOML file."""
    model: ModelParams
    domain: DomainSpec = Field(default_factory=DomainSpec)
    run: RunSpec = Field(default_factory=RunSpec)
    initial: InitialData = Field(default_factory=InitialData)
    sweep: Optional[SweepSection] = None
    epsilon_study: Optional[EpsilonSection] = None

    def astuple(self) -> Tuple[ModelParams, DomainSpec, RunSpec, InitialData]:
        return self.model, self.domain, self.run, self.initial

    def with_model_values(self, **values: Any) -> "LabConfig":
        return self.model_copy(update={"model": self.model.model_copy(update=values)})

    def with_run_values(self, **values: Any) -> "LabConfig":
        return self.model_copy(update={"run": self.run.model_copy(update=values)})


class ValidationReport(FrozenModel):
    violations: List[str] = Field(default_factory=list)

    @computed_field
    @property
    def ok(self) -> bool:
        return not self.violations


def _positive(violations: List[str], name: str, value: float) -> None:
    if not math.isfinite(value) or value <= 0:
        violations.append(f"{name} must be > 0 (got {value})")


def validate(params: ModelParams, domain: DomainSpec, run: RunSpec) -> ValidationReport:
    """Check every parameter, discretization and run invariant.

    Args:
        params: Model coefficients.
        domain: Grid and box lengths.
        run: Run controls.

    Returns:
        ValidationReport: Every violated rule; an empty list means the configuration is runnable.

    Examples:
        >>> validate(ModelParams(chi1=1, chi2=1, mu1=-1, mu2=1), DomainSpec(), RunSpec()).violations
        ['mu1 must be > 0 (got -1.0)']
    """
    violations: List[str] = []

    for name in ("chi1", "chi2", "mu1", "mu2", "c_sobolev"):
        _positive(violations, name, getattr(params, name))
    for name in ("r1", "r2"):
        value = getattr(params, name)
        if not math.isfinite(value) or value < 2:
            violations.append(f"{name} ≥ 2 required (got {value})")
    for name in ("r", "epsilon"):
        value = getattr(params, name)
        if not math.isfinite(value) or value < 0:
            violations.append(f"{name} must be ≥ 0 (got {value})")
    if params.dim_n < 1:
        violations.append(f"dim_n must be ≥ 1 (got {params.dim_n})")

    if domain.dims not in (1, 2, 3):
        violations.append(f"dims must be 1, 2 or 3 (got {domain.dims})")
    if len(domain.lengths) != domain.dims:
        violations.append(f"lengths needs {domain.dims} entries (got {len(domain.lengths)})")
    if len(domain.cells) != domain.dims:
        violations.append(f"cells needs {domain.dims} entries (got {len(domain.cells)})")
    for axis, length in enumerate(domain.lengths):
        _positive(violations, f"lengths[{axis}]", length)
    for axis, count in enumerate(domain.cells):
        if count < 4:
            violations.append(f"cells[{axis}] must be ≥ 4 (got {count})")
    if domain.total_cells > MAX_TOTAL_CELLS:
        violations.append(f"total cell count {domain.total_cells} exceeds the cap {MAX_TOTAL_CELLS}")

    if not math.isfinite(run.t_end) or run.t_end < 0:
        violations.append(f"t_end must be ≥ 0 (got {run.t_end})")
    _positive(violations, "dt_max", run.dt_max)
    _positive(violations, "output_every", run.output_every)
    for name in ("cfl_advection", "cfl_reaction"):
        value = getattr(run, name)
        if not 0 < value <= 1:
            violations.append(f"{name} must lie in (0, 1] (got {value})")
    if run.snapshot_every < 0:
        violations.append(f"snapshot_every must be ≥ 0 (got {run.snapshot_every})")
    if not run.blowup_linf > 1:
        violations.append(f"blowup_linf must be > 1 (got {run.blowup_linf})")
    if not 0 < run.linear_tol <= 1e-4:
        violations.append(f"linear_tol must lie in (0, 1e-4] (got {run.linear_tol})")
    if run.bounded_ratio < 1:
        violations.append(f"bounded_ratio must be ≥ 1 (got {run.bounded_ratio})")

    return ValidationReport(violations=violations)


def validate_initial(initial: InitialData, domain: DomainSpec) -> ValidationReport:
    """Check that the initial data family produces admissible fields."""
    violations: List[str] = []
    kind = initial.kind
    if kind == InitialDataKind.fromSnapshot:
        if not initial.snapshot_path:
            violations.append("from-snapshot initial data needs snapshot_path")
        return ValidationReport(violations=violations)

    for name in ("u", "v", "w"):
        profile: InitialProfile = getattr(initial, name)
        if profile.background < 0:
            violations.append(f"initial.{name}.background must be ≥ 0 (got {profile.background})")
        if profile.amplitude < 0 and kind != InitialDataKind.cosineBump:
            violations.append(f"initial.{name}.amplitude must be ≥ 0 (got {profile.amplitude})")
        if kind == InitialDataKind.cosineBump:
            if abs(profile.amplitude) > profile.background:
                violations.append(f"initial.{name}: |amplitude| must not exceed background for cosine-bump data")
            if len(profile.modes) != domain.dims:
                violations.append(f"initial.{name}.modes needs {domain.dims} entries")
        if kind == InitialDataKind.randomPerturbation and profile.amplitude > 1:
            violations.append(f"initial.{name}.amplitude must be ≤ 1 for random-perturbation data")
        if kind == InitialDataKind.gaussianBumps:
            if profile.width <= 0:
                violations.append(f"initial.{name}.width must be > 0")
            for center in profile.centers or []:
                if len(center) != domain.dims:
                    violations.append(f"initial.{name}.centers entries need {domain.dims} coordinates")
            if profile.centers is None and profile.count < 1:
                violations.append(f"initial.{name}.count must be ≥ 1")

    u = initial.u
    if kind == InitialDataKind.constant or kind == InitialDataKind.randomPerturbation:
        if u.background == 0:
            violations.append("u0 must not vanish identically")
    elif u.background == 0 and u.amplitude == 0:
        violations.append("u0 must not vanish identically")
    return ValidationReport(violations=violations)


def validate_sweep(section: SweepSection) -> ValidationReport:
    violations: List[str] = []
    if len(section.axes) > MAX_SWEEP_AXES:
        violations.append(f"at most {MAX_SWEEP_AXES} sweep axes are allowed (got {len(section.axes)})")
    runs = math.prod(len(axis.values) for axis in section.axes) * max(len(section.replicates), 1)
    if runs > section.max_runs:
        violations.append(f"sweep has {runs} runs, above the cap {section.max_runs}")
    for axis in section.axes:
        if not axis.values:
            violations.append(f"sweep axis {axis.name.value} has no values")
    return ValidationReport(violations=violations)


def validate_config(config: LabConfig) -> ValidationReport:
    violations = list(validate(config.model, config.domain, config.run).violations)
    violations += validate_initial(config.initial, config.domain).violations
    if config.sweep is not None:
        violations += validate_sweep(config.sweep).violations
    return ValidationReport(violations=violations)


def _describe_errors(error: ValidationError) -> List[str]:
    messages = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        if item["type"] == "extra_forbidden":
            messages.append(f"unknown key '{location}'")
        elif item["type"] == "missing":
            messages.append(f"missing required key '{location}'")
        else:
            messages.append(f"{location}: {item['msg']}")
    return messages


def config_from_dict(data: Dict[str, Any], source: str = "<dict>") -> LabConfig:
    """Build and validate a configuration from parsed TOML data.

    Raises:
        ConfigurationError: Unknown sections or keys, missing required keys,
            wrongly typed values, or violated invariants (all listed).
    """
    unknown = [key for key in data if key not in KNOWN_SECTIONS]
    if unknown:
        raise ConfigurationError(f"{source}: unknown section(s)", [f"unknown key '{key}'" for key in unknown])
    try:
        config = LabConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"{source}: invalid configuration", _describe_errors(e)) from e
    report = validate_config(config)
    if not report.ok:
        raise ConfigurationError(f"{source}: configuration violates {len(report.violations)} rule(s)",
                                 report.violations)
    return config


def load_config(path: Union[str, Path]) -> LabConfig:
    """Read, parse and validate a TOML configuration file.

    Unspecified optional keys take their documented defaults
    (r1 = r2 = 2, r = 0, epsilon = 0, ...).

    Args:
        path: Path of the TOML file.

    Returns:
        LabConfig: The configuration bundle (``astuple()`` gives
        ModelParams, DomainSpec, RunSpec, InitialData).

    Raises:
        ConfigurationError: Parse error (with line and column) or invalid content.
        OSError: The file cannot be read.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(f"{path}: TOML parse error: {e}") from e
    config = config_from_dict(data, source=str(path))
    logger.debug("Loaded configuration %s (hash %s)", path, config_hash(config))
    return config


def config_to_dict(config: LabConfig) -> Dict[str, Any]:
    """Plain TOML-ready data of a configuration (derived fields and unset options left out)."""
    return config.model_dump(mode="json", exclude_none=True, exclude_computed_fields=True)


def config_to_toml(config: LabConfig) -> str:
    return tomli_w.dumps(config_to_dict(config))


def write_config(config: LabConfig, path: Union[str, Path]) -> Path:
    """Write a configuration so that ``load_config`` reproduces it field for field."""
    path = Path(path)
    path.write_text(config_to_toml(config), encoding="utf-8")
    return path


def config_hash(config: LabConfig) -> str:
    """Short SHA-256 digest of the canonical JSON form of a configuration."""
    return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()[:16]
