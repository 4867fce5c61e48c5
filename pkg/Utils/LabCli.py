"""Command-line entry point of the chemotaxis laboratory.

Usage::

    python -m Utils.LabCli analyze --config configs/quadratic_default.toml [--csv]
    python -m Utils.LabCli simulate --config CONFIG [--out DIR] [--set model.mu1=3.0]...
    python -m Utils.LabCli sweep --config configs/mu_sweep.toml --threads 4
    python -m Utils.LabCli epsilon-study --config configs/epsilon_study.toml
    python -m Utils.LabCli verify --config CONFIG [--series out/diagnostics.csv]

Exit codes:
    0  success, or every verified inequality is consistent
    1  configuration or validation error (all violations are listed)
    2  a verified inequality is violated
    3  verification inconclusive
    4  I/O failure
"""

import argparse
import logging
import math
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from AALab import __version__
from AALab.AALabEnums import CommandType, StepStatus
from AALab.Analytics import ThresholdInputs, boundedness_regime, gn_examples, homogeneous_equilibria, mu_star, \
    reference_conditions, young_constant_L
from AALab.ConfigModels import LabConfig, config_from_dict, config_hash, config_to_dict, load_config
from AALab.Errors import AALabError, AnalyticsDomainError, ConfigurationError
from AALab.Monitors import DiagnosticSeries, SeriesMetadata, WeakTestFunction, check_mass_inequality, \
    classify_run, mass_balance_residuals, weak_residuals
from AALab.Stepper import run
from AALab.Sweep import EpsilonStudySpec, SweepSpec, epsilon_study, run_sweep, threshold_margin_table
from Utils.LabConstants import ANALYZE_FILE, DEFAULT_OUT_DIR, DIAGNOSTICS_FILE, EPSILON_FILE, EXIT_CONFIG, \
    EXIT_IO, EXIT_OK, PLOT_DIR, SNAPSHOT_DIR, VERIFY_FILE
from Utils.PlotData import emit_plot_data
from Utils.introspection import config_catalogue

logger = logging.getLogger(__name__)


def parse_override_value(raw: str) -> Any:
    """Parse the right-hand side of ``--set key=value`` as a TOML value.

    Anything that is not valid TOML (for example ``cosine-bump``) is kept as
    a bare string.
    """
    try:
        return tomllib.loads(f"value = {raw}")["value"]
    except tomllib.TOMLDecodeError:
        return raw.strip()


def apply_overrides(config: LabConfig, overrides: Sequence[str]) -> LabConfig:
    """Apply ``section.key=value`` overrides and re-validate the result.

    Args:
        config: The loaded configuration.
        overrides: Strings such as ``"model.mu1=3.0"`` or ``"initial.u.amplitude=0.5"``.

    Returns:
        LabConfig: A new, validated configuration.

    Raises:
        ConfigurationError: Malformed overrides, unknown keys, or a result
            that fails validation (every problem is listed).
    """
    if not overrides:
        return config
    known = set(config_catalogue().names())
    data: Dict[str, Any] = config_to_dict(config)
    problems = []
    for item in overrides:
        key, sep, raw = item.partition("=")
        key = key.strip()
        if not sep or not key:
            problems.append(f"override '{item}' is not of the form section.key=value")
            continue
        if key not in known:
            problems.append(f"unknown key '{key}'")
            continue
        *parents, leaf = key.split(".")
        target = data
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = parse_override_value(raw)
        logger.debug("Override %s = %r", key, target[leaf])
    if problems:
        raise ConfigurationError("invalid --set override(s)", problems)
    return config_from_dict(data, source="--set")


def stanza_for(config: LabConfig) -> List[str]:
    """Reproducibility lines (version, config hash, seed, grid, model) for output file headers."""
    return SeriesMetadata(config_hash=config_hash(config), seed=config.run.seed, params=config.model,
                          cells=list(config.domain.cells), lengths=list(config.domain.lengths)).stanza()


def _format_table(rows: Sequence[Tuple[str, Any]]) -> str:
    width = max(len(name) for name, _ in rows)
    lines = []
    for name, value in rows:
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{name.ljust(width)}  {value}")
    return "\n".join(lines)


class LabCommands:
    """The five subcommands of the lab, bound to one configuration and output directory.

    Each command writes its files below ``out_dir`` (created on first use),
    prints a short human-readable summary to stdout and returns the process
    exit code.

    Attributes:
        config (LabConfig): Validated configuration, overrides applied.
        out_dir (Path): Output directory.
        threads (Optional[int]): Worker count for sweeps and epsilon studies
            (None defers to AA_LAB_THREADS, then the CPU count).

    Examples:
        >>> commands = LabCommands(load_config("configs/quadratic_default.toml"), Path("out"))
        >>> commands.analyze(write_csv=True)
        0
    """

    def __init__(self, config: LabConfig, out_dir: Path, threads: Optional[int] = None) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.threads = threads
        self.stanza = stanza_for(config)

    def _ensure_out_dir(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir

    def analyze(self, write_csv: bool = False) -> int:
        """Print the analytic constants of the configured model.

        The table lists the damping threshold and margin, the Young constant
        L, the boundedness regime, the earlier sufficient conditions,
        Gagliardo-Nirenberg exponents for the analytic dimension and the
        spatially homogeneous equilibria.
        """
        params = self.config.model
        try:
            threshold = mu_star(ThresholdInputs.from_params(params))
            mu_value, margin = threshold.value, min(params.mu1, params.mu2) - threshold.value
            terms = (threshold.chemotactic_term, threshold.activation_term)
        except AnalyticsDomainError as e:
            logger.warning("Damping threshold undefined: %s", e)
            mu_value = margin = math.nan
            terms = (math.nan, math.nan)
        big_l = young_constant_L(params.mu2, params.r2, params.r)
        regime = boundedness_regime(params)
        reference = reference_conditions(params)
        equilibria = homogeneous_equilibria(params)

        rows: List[Tuple[str, Any]] = [
            ("config_hash", config_hash(self.config)),
            ("mu_star", mu_value),
            ("mu_star_chemotactic", terms[0]),
            ("mu_star_activation", terms[1]),
            ("margin", margin),
            ("young_L", big_l),
            ("regime", regime.value),
            ("guarantees_boundedness", regime.guaranteesBoundedness()),
            ("large_damping_3d", reference.large_damping_3d),
            ("elliptic_signal", reference.elliptic_signal),
            ("elliptic_bound_u", reference.elliptic_bound_u),
            ("elliptic_bound_v", reference.elliptic_bound_v),
        ]
        for p, q, alpha in gn_examples(params.dim_n):
            rows.append((f"gn_alpha(p={p:g},q={q:g})", "singular" if alpha is None else alpha))
        for index, eq in enumerate(equilibria):
            rows.append((f"equilibrium_{index}", f"u={eq.u_star:.6g} v={eq.v_star:.6g} w={eq.w_star:.6g}"))
        print(_format_table(rows))

        if write_csv:
            path = self._ensure_out_dir() / ANALYZE_FILE
            header = ["config_hash", "mu_star", "margin", "young_L", "regime", "large_damping_3d",
                      "elliptic_signal", "equilibria"]
            values = [config_hash(self.config), repr(mu_value), repr(margin), repr(big_l), regime.value,
                      str(reference.large_damping_3d).lower(), str(reference.elliptic_signal).lower(),
                      str(len(equilibria))]
            with path.open("w", encoding="utf-8", newline="\n") as handle:
                for line in self.stanza:
                    handle.write(f"# {line}\n")
                handle.write(",".join(header) + "\n")
                handle.write(",".join(values) + "\n")
            logger.info("Wrote %s", path)
        return EXIT_OK

    def simulate(self) -> int:
        """Run the configured simulation; write diagnostics, snapshots and plot data."""
        out_dir = self._ensure_out_dir()
        result = run(self.config, out_dir=out_dir / SNAPSHOT_DIR)
        extra = [f"status {result.outcome.status.value}", f"classification {result.classification.value}"]
        path = result.series.to_csv(out_dir / DIAGNOSTICS_FILE, extra_comments=extra)
        emit_plot_data(result.series, out_dir / PLOT_DIR, stanza=self.stanza)
        logger.info("Wrote %s (%d samples)", path, len(result.series))
        print(f"classification {result.classification.value} status {result.outcome.status.value} "
              f"t={result.outcome.state.t:.6g} steps={result.steps}")
        return EXIT_OK

    def sweep(self) -> int:
        """Run the ``[sweep]`` grid and print the threshold-margin partition."""
        spec = SweepSpec.from_config(self.config)
        result = run_sweep(spec, out_dir=self._ensure_out_dir(), workers=self.threads, stanza=self.stanza)
        table = threshold_margin_table(result)
        for partition in table.partitions:
            counts = " ".join(f"{name}={count}" for name, count in partition.counts.items())
            print(f"margin {partition.sign}: {partition.rows} run(s) {counts}")
        print(table.note)
        return EXIT_OK

    def epsilon_study(self) -> int:
        """Run the ``[epsilon_study]`` ladder and print consecutive-rung distances."""
        spec = EpsilonStudySpec.from_config(self.config)
        result = epsilon_study(spec, workers=self.threads)
        result.to_csv(self._ensure_out_dir() / EPSILON_FILE, self.stanza)
        for row in result.rows:
            if row.conclusive:
                print(f"eps {row.eps_coarse:g} -> {row.eps_fine:g}: "
                      f"d_u={row.d_u:.3e} d_v={row.d_v:.3e} d_w={row.d_w:.3e}")
            else:
                print(f"eps {row.eps_coarse:g} -> {row.eps_fine:g}: inconclusive ({row.note})")
        print(f"monotone u={result.monotone_u} v={result.monotone_v} w={result.monotone_w}")
        return EXIT_OK

    def verify(self, series_path: Optional[Path] = None) -> int:
        """Check the mass inequality on a diagnostics series.

        With ``series_path`` the series is read from an existing diagnostics
        CSV; otherwise the configuration is simulated first and the stored
        trajectory is additionally checked against the mass identities and,
        for the quadratic system, the weak-solution identities.

        Returns:
            int: 0 consistent, 2 violated, 3 inconclusive.
        """
        params = self.config.model
        lines: List[str] = []
        trajectory = []
        if series_path is not None:
            series = DiagnosticSeries.from_csv(series_path)
            status = None
            lines.append(f"series {series_path}")
        else:
            result = run(self.config.with_run_values(keep_trajectory=True))
            series, trajectory, status = result.series, result.trajectory, result.outcome.status
            lines.append(f"status {status.value}")

        report = check_mass_inequality(series, params)
        lines += [
            f"mass_inequality {report.verdict.value}",
            f"sup_y {report.sup_y!r}",
            f"absorbing_bound {report.absorbing_bound!r}",
            f"fitted_constant {report.fitted_constant!r}",
            f"eventually_nonincreasing {str(report.eventually_nonincreasing).lower()}",
        ]
        if report.first_violation_t is not None:
            lines.append(f"first_violation_t {report.first_violation_t!r}")
        if report.message:
            lines.append(f"note {report.message}")
        lines.append(f"classification {classify_run(series, status or StepStatus.advanced).value}")

        if len(trajectory) >= 2:
            balance = mass_balance_residuals(trajectory, params)
            lines.append(f"mass_balance u={balance.u:.3e} v={balance.v:.3e} w={balance.w:.3e}")
            if params.is_quadratic and status == StepStatus.advanced:
                phi = WeakTestFunction(modes=[1] * self.config.domain.dims, t_final=trajectory[-1].t)
                residuals = weak_residuals(trajectory, params, phi)
                lines.append(f"weak_residuals r1={residuals.r1:.3e} r2={residuals.r2:.3e} r3={residuals.r3:.3e}")

        path = self._ensure_out_dir() / VERIFY_FILE
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            for line in self.stanza:
                handle.write(f"# {line}\n")
            for line in lines:
                handle.write(line + "\n")
        print("\n".join(lines))
        return report.verdict.exitCode()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="Path to the TOML configuration")
    common.add_argument("--out", type=Path, default=Path(DEFAULT_OUT_DIR), help="Output directory (default ./out)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override a configuration value, e.g. --set model.mu1=3.0 (repeatable)")
    common.add_argument("--threads", type=int, default=None, help="Worker processes (overrides AA_LAB_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(prog="aalab", description="Chemotaxis boundedness laboratory")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    analyze = commands.add_parser(CommandType.analyze.value, parents=[common],
                                  help="Print the analytic constants of a configuration")
    analyze.add_argument("--csv", action="store_true", help=f"Also write {ANALYZE_FILE}")
    commands.add_parser(CommandType.simulate.value, parents=[common], help="Run one simulation")
    commands.add_parser(CommandType.sweep.value, parents=[common], help="Run the [sweep] parameter grid")
    commands.add_parser(CommandType.epsilonStudy.value, parents=[common], help="Run the [epsilon_study] ladder")
    verify = commands.add_parser(CommandType.verify.value, parents=[common],
                                 help="Check the mass inequality on a run or a diagnostics file")
    verify.add_argument("--series", type=Path, default=None, help="Existing diagnostics CSV to verify")
    return parser


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args.verbose)
    command = CommandType(args.command)
    try:
        config = apply_overrides(load_config(args.config), args.overrides)
        commands = LabCommands(config, args.out, args.threads)
        if command == CommandType.analyze:
            return commands.analyze(write_csv=args.csv)
        elif command == CommandType.simulate:
            return commands.simulate()
        elif command == CommandType.sweep:
            return commands.sweep()
        elif command == CommandType.epsilonStudy:
            return commands.epsilon_study()
        return commands.verify(args.series)
    except ConfigurationError as e:
        logger.error("Configuration error: %s", e)
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AALabError as e:
        logger.error("%s failed: %s", command.value, e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("I/O failure: %s", e)
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
