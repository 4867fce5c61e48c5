"""Enumeration types for the AALab chemotaxis laboratory.

This module defines all enumeration classes used throughout the lab for
selecting initial data, flux discretizations, step outcomes, run
classifications and verdicts. Every enum inherits from str/Enum so values
round-trip through TOML configuration files and CSV tables unchanged.
"""

from enum import Enum


class InitialDataKind(str, Enum):
    """Families of generated initial data.

    Attributes:
        constant: Spatially constant fields.
        cosineBump: Background plus a product of Neumann cosine modes.
        gaussianBumps: Background plus a sum of Gaussian bumps.
        randomPerturbation: Background times (1 + amplitude * uniform noise).
        fromSnapshot: Fields read from an AALAB1 snapshot file.

    Examples:
        >>> InitialDataKind("cosine-bump")
        <InitialDataKind.cosineBump: 'cosine-bump'>
    """
    constant = "constant"
    cosineBump = "cosine-bump"
    gaussianBumps = "gaussian-bumps"
    randomPerturbation = "random-perturbation"
    fromSnapshot = "from-snapshot"

    def displayName(self) -> str:
        return self.value.replace("-", " ").title()


class FluxScheme(str, Enum):
    """Face density reconstruction for the chemotactic flux.

    Attributes:
        central: Arithmetic mean of the two adjacent cells (second order).
        upwind: Donor cell chosen by the sign of the face velocity (positivity robust).
    """
    central = "central"
    upwind = "upwind"

    def displayName(self) -> str:
        return self.value.title()


class StepStatus(str, Enum):
    """Outcome of a single time step (and of a whole run).

    Attributes:
        advanced: The step was accepted.
        blowupDetected: L-infinity(u) + L-infinity(v) exceeded the configured ceiling.
        dtUnderflow: The step size collapsed or too many consecutive rejections occurred.
    """
    advanced = "advanced"
    blowupDetected = "blowup_detected"
    dtUnderflow = "dt_underflow"

    def displayName(self) -> str:
        if self == StepStatus.advanced:
            return "Advanced"
        elif self == StepStatus.blowupDetected:
            return "Blow-up detected"
        elif self == StepStatus.dtUnderflow:
            return "Time step underflow"
        return ""


class RunClassification(str, Enum):
    """Numerical boundedness classification of a completed run.

    Attributes:
        bounded: Late-time sup norms do not exceed the mid-run level by more than the ratio.
        growthSuspected: Late-time sup norms keep growing (or the run stopped early).
        blowUp: The stepper signalled blow-up.
        failed: The run raised an error (sweeps record it in-row).
    """
    bounded = "Bounded"
    growthSuspected = "GrowthSuspected"
    blowUp = "BlowUp"
    failed = "Failed"


class Verdict(str, Enum):
    """Verdict of an a-posteriori inequality check.

    Attributes:
        consistent: The data agree with the inequality.
        violated: The data contradict it.
        inconclusive: Too little (or non-finite) data to decide.
    """
    consistent = "consistent"
    violated = "violated"
    inconclusive = "inconclusive"

    def exitCode(self) -> int:
        return {
            Verdict.consistent: 0,
            Verdict.violated: 2,
            Verdict.inconclusive: 3,
        }[self]


class ComparisonVerdict(str, Enum):
    """Verdict of the ODE comparison check.

    Attributes:
        holds: Hypotheses hold and the realized maximum stays below the bound.
        hypothesisFails: The differential or window hypothesis is violated; no conclusion asserted.
        conclusionFails: Hypotheses hold but the realized maximum exceeds the bound.
    """
    holds = "holds"
    hypothesisFails = "hypothesis fails"
    conclusionFails = "conclusion fails"


class BoundednessRegime(str, Enum):
    """Parameter regimes distinguished by the boundedness theorem.

    Attributes:
        quadraticAboveThreshold: r1 = r2 = 2 and min(mu1, mu2) > mu*.
        quadraticBelowThreshold: r1 = r2 = 2 and min(mu1, mu2) <= mu* (no guarantee).
        generalizedLogistic: r1 > 2 and r2 > 2 (bounded for every mu > 0).
        mixedExponents: One exponent equals 2, the other exceeds it (not covered).
    """
    quadraticAboveThreshold = "quadratic-above-threshold"
    quadraticBelowThreshold = "quadratic-below-threshold"
    generalizedLogistic = "generalized-logistic"
    mixedExponents = "mixed-exponents"

    def guaranteesBoundedness(self) -> bool:
        return self in (BoundednessRegime.quadraticAboveThreshold, BoundednessRegime.generalizedLogistic)


class SweepParameter(str, Enum):
    """Model parameters that may be swept."""
    chi1 = "chi1"
    chi2 = "chi2"
    mu1 = "mu1"
    mu2 = "mu2"
    r = "r"
    r1 = "r1"
    r2 = "r2"
    epsilon = "epsilon"


class CommandType(str, Enum):
    """Subcommands of the lab command line."""
    analyze = "analyze"
    simulate = "simulate"
    sweep = "sweep"
    epsilonStudy = "epsilon-study"
    verify = "verify"
