"""Closed-form constants, exponents, thresholds and bounds of the boundedness theory.

Every formula here is paired with an independent numerical check elsewhere
(golden-section minimization, root finding, ODE integration), so the
calculators can be trusted when they feed the monitors and the sweep tables.
All functions are pure.
"""

from __future__ import annotations

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import Field
from scipy.optimize import brentq, minimize_scalar

from AALab.AALabBaseModels import ArrayModel, FrozenModel
from AALab.AALabEnums import BoundednessRegime
from AALab.ConfigModels import ModelParams
from AALab.Constants import ODE_NEGATIVITY_TOLERANCE
from AALab.Errors import AnalyticsDomainError, NegativeStateError

logger = logging.getLogger(__name__)

EQUILIBRIUM_SCAN_INTERVALS = 10_000
EQUILIBRIUM_U_CAP = 1e12


class ThresholdInputs(FrozenModel):
    """Inputs of the damping threshold mu*."""
    chi1: float = Field(description="Chemotactic sensitivity of u", examples=[1.0])
    chi2: float = Field(description="Chemotactic sensitivity of v", examples=[1.0])
    r: float = Field(description="Cross-activation rate", default=0.0, examples=[0.0, 1.0])
    dim_n: int = Field(description="Analytic dimension N (>= 3)", default=3, examples=[3, 4])
    c_sobolev: float = Field(description="Maximal Sobolev regularity constant C_{N/2+1}", default=1.0)

    @classmethod
    def from_params(cls, params: ModelParams) -> "ThresholdInputs":
        return cls(chi1=params.chi1, chi2=params.chi2, r=params.r, dim_n=params.dim_n, c_sobolev=params.c_sobolev)


class MuStar(FrozenModel):
    value: float = Field(description="Damping threshold mu*")
    chemotactic_term: float = Field(description="Summand driven by max(chi1, chi2)")
    activation_term: float = Field(description="Summand driven by r")


class HMinQuery(FrozenModel):
    """Parameters of H(y) = y + A1 y^-delta (2 chi)^(delta+1) C."""
    delta: float = Field(description="Exponent delta (>= 1)", examples=[1.0, 2.0, 3.0])
    chi: float = Field(description="Coefficient chi (> 0)", examples=[1.0, 2.0])
    c_const: float = Field(description="Constant C_{delta+1} (> 0)", examples=[1.0, 5.0])


class HMinResult(FrozenModel):
    y_min: float = Field(description="Stationary point of H (0 when the infimum is not attained)")
    value: float = Field(description="Minimum (or infimum) of H over y > 0")
    attained: bool = Field(description="False when the value is an infimum approached as y -> 0+")
    note: str = ""


class OdeBoundQuery(FrozenModel):
    """Data of the comparison lemma z' + A z^alpha <= h with sliding-window bound B on h."""
    z0: float = Field(description="Initial value (>= 0)")
    a_coef: float = Field(description="A (> 0)")
    alpha: float = Field(description="Exponent alpha (> 0)")
    b_bound: float = Field(description="Bound B on integrals of h over windows of length tau (>= 0)")
    tau: float = Field(description="Window length tau (> 0)")


class GNQuery(FrozenModel):
    p: float = Field(description="Target exponent (>= 1)")
    q: float = Field(description="Base exponent, 0 < q <= p")
    dim_n: int = Field(description="Dimension N")


class Equilibrium(FrozenModel):
    """Spatially homogeneous steady state with its substitution residuals."""
    u_star: float
    v_star: float
    w_star: float
    residuals: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def max_residual(self) -> float:
        return max(abs(value) for value in self.residuals)


class ReferenceConditions(FrozenModel):
    """Earlier sufficient conditions the damping threshold is compared against."""
    large_damping_3d: bool = Field(description="mu_i > 16 + 8 chi_i^2 + r/2 and mu1 mu2^2 > 4 r^3 / 27")
    elliptic_signal: bool = Field(description="Damping condition known for the parabolic-elliptic signal")
    elliptic_bound_u: float
    elliptic_bound_v: float


class OdeTrajectory(ArrayModel):
    times: np.ndarray
    states: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def mu_star(inp: ThresholdInputs) -> MuStar:
    """Damping threshold above which the quadratic system stays bounded.

    mu* = 2 (N-2)_+ / N * C^(1/(N/2+1)) * max(chi1, chi2)
          + (2/N)^(2/(N+2)) * N/(N+2) * r

    Raises:
        AnalyticsDomainError: dim_n < 3 or negative inputs.

    Examples:
        >>> mu_star(ThresholdInputs(chi1=1, chi2=1, r=0, dim_n=3)).value
        0.6666666666666666
    """
    n = inp.dim_n
    if n < 3:
        raise AnalyticsDomainError(f"mu* is defined for N >= 3 (got N={n})")
    if min(inp.chi1, inp.chi2, inp.r) < 0 or inp.c_sobolev <= 0:
        raise AnalyticsDomainError("mu* needs chi1, chi2, r >= 0 and c_sobolev > 0")
    chemotactic = 2.0 * max(n - 2, 0) / n * inp.c_sobolev ** (1.0 / (n / 2.0 + 1.0)) * max(inp.chi1, inp.chi2)
    activation = (2.0 / n) ** (2.0 / (n + 2.0)) * n / (n + 2.0) * inp.r
    return MuStar(value=chemotactic + activation, chemotactic_term=chemotactic, activation_term=activation)


def young_constant_L(mu2: float, r2: float, r: float) -> float:
    """Young constant L = (r2-1)/r2 (mu2 r2 / 2)^(-1/(r2-1)) r^(r2/(r2-1)).

    Reduces to r^2 / (2 mu2) for r2 = 2, which is returned exactly.
    """
    if mu2 <= 0 or r2 < 2 or r < 0:
        raise AnalyticsDomainError(f"young_constant_L needs mu2 > 0, r2 >= 2, r >= 0 (got {mu2}, {r2}, {r})")
    if r == 0:
        return 0.0
    if r2 == 2:
        return r * r / (2.0 * mu2)
    return (r2 - 1.0) / r2 * (mu2 * r2 / 2.0) ** (-1.0 / (r2 - 1.0)) * r ** (r2 / (r2 - 1.0))


def young_constant_a1(delta: float) -> float:
    """A1 = 1/(delta+1) ((delta+1)/delta)^-delta ((delta-1)/delta)^(delta+1); zero at delta = 1."""
    if delta < 1:
        raise AnalyticsDomainError(f"A1 needs delta >= 1 (got {delta})")
    return 1.0 / (delta + 1.0) * ((delta + 1.0) / delta) ** (-delta) * ((delta - 1.0) / delta) ** (delta + 1.0)


def _check_h_query(q: HMinQuery) -> None:
    if q.delta < 1 or q.chi <= 0 or q.c_const <= 0:
        raise AnalyticsDomainError(f"H needs delta >= 1, chi > 0, C > 0 (got {q.delta}, {q.chi}, {q.c_const})")


def h_function(y: float, q: HMinQuery) -> float:
    a1 = young_constant_a1(q.delta)
    return y + a1 * y ** (-q.delta) * (2.0 * q.chi) ** (q.delta + 1.0) * q.c_const


def h_derivative(y: float, q: HMinQuery) -> float:
    a1 = young_constant_a1(q.delta)
    return 1.0 - q.delta * a1 * y ** (-q.delta - 1.0) * (2.0 * q.chi) ** (q.delta + 1.0) * q.c_const


def h_min(q: HMinQuery) -> HMinResult:
    """Closed-form minimum of H over y > 0.

    The stationary point is y = 2 (A1 delta C)^(1/(delta+1)) chi with value
    2 (delta-1)/delta C^(1/(delta+1)) chi. For delta = 1, A1 vanishes and
    H(y) = y, whose infimum 0 is only approached as y -> 0+.
    """
    _check_h_query(q)
    if q.delta == 1:
        return HMinResult(y_min=0.0, value=0.0, attained=False, note="infimum, not attained")
    a1 = young_constant_a1(q.delta)
    y_min = 2.0 * (a1 * q.delta * q.c_const) ** (1.0 / (q.delta + 1.0)) * q.chi
    value = 2.0 * (q.delta - 1.0) / q.delta * q.c_const ** (1.0 / (q.delta + 1.0)) * q.chi
    return HMinResult(y_min=y_min, value=value, attained=True)


def h_min_proof_expression(q: HMinQuery) -> float:
    """Unsimplified form 2 (A1 C)^(1/(delta+1)) (delta^(1/(delta+1)) + delta^(-delta/(delta+1))) chi."""
    _check_h_query(q)
    a1 = young_constant_a1(q.delta)
    exponent = 1.0 / (q.delta + 1.0)
    return 2.0 * (a1 * q.c_const) ** exponent * (q.delta ** exponent + q.delta ** (-q.delta * exponent)) * q.chi


def h_min_numeric(q: HMinQuery, lower: float = 1e-6, upper: float = 1e6) -> Tuple[float, float]:
    """Golden-section minimization of H in log(y) over (lower, upper).

    Returns:
        (y, H(y)) at the numerical minimizer.
    """
    _check_h_query(q)
    grid = np.linspace(math.log(lower), math.log(upper), 2001)
    samples = np.array([h_function(math.exp(s), q) for s in grid])
    index = int(np.clip(np.argmin(samples), 1, grid.size - 2))
    result = minimize_scalar(lambda s: h_function(math.exp(s), q), method="golden",
                             bracket=(grid[index - 1], grid[index], grid[index + 1]),
                             options={"xtol": 1e-12})
    y = math.exp(float(result.x))
    return y, h_function(y, q)


def ode_comparison_bound(q: OdeBoundQuery) -> float:
    """C = max{z0 + B, tau^(-1/alpha) (B/A)^(1/alpha) + 2B}."""
    if q.z0 < 0 or q.a_coef <= 0 or q.alpha <= 0 or q.b_bound < 0 or q.tau <= 0:
        raise AnalyticsDomainError(f"invalid ODE comparison query {q.model_dump()}")
    inverse = 1.0 / q.alpha
    return max(q.z0 + q.b_bound, q.tau ** (-inverse) * (q.b_bound / q.a_coef) ** inverse + 2.0 * q.b_bound)


def gn_exponent(q: GNQuery) -> float:
    """Gagliardo-Nirenberg exponent alpha = (1/p - 1/q) / (1/2 - 1/N - 1/q).

    Values outside (0, 1) are returned with a warning.

    Raises:
        AnalyticsDomainError: Invalid exponents or the singular case q = 2N/(N-2).
    """
    if q.p < 1 or not 0 < q.q <= q.p or q.dim_n < 1:
        raise AnalyticsDomainError(f"GN exponent needs p >= 1, 0 < q <= p, N >= 1 (got p={q.p}, q={q.q}, N={q.dim_n})")
    denominator = 0.5 - 1.0 / q.dim_n - 1.0 / q.q
    if abs(denominator) < 1e-14:
        raise AnalyticsDomainError(
            f"GN denominator 1/2 - 1/N - 1/q vanishes at q = 2N/(N-2) = {q.q} for N = {q.dim_n}"
        )
    alpha = (1.0 / q.p - 1.0 / q.q) / denominator
    if not 0 < alpha < 1:
        logger.warning("GN exponent %.6g lies outside (0, 1) for p=%g, q=%g, N=%d", alpha, q.p, q.q, q.dim_n)
    return alpha


def reaction_rates(u, v, w, params: ModelParams):
    """Homogeneous reaction terms (w - mu1 u^r1, w + r u v - mu2 v^r2, u + v - w).

    Negative round-off in u, v is clipped before the fractional powers.
    """
    up = np.maximum(u, 0.0)
    vp = np.maximum(v, 0.0)
    fu = w - params.mu1 * up ** params.r1
    fv = w + params.r * u * v - params.mu2 * vp ** params.r2
    fw = u + v - w
    return fu, fv, fw


def equilibrium_residuals(u: float, v: float, w: float, params: ModelParams) -> Tuple[float, float, float]:
    fu, fv, fw = reaction_rates(u, v, w, params)
    return float(fu), float(fv), float(fw)


def homogeneous_equilibria(params: ModelParams) -> List[Equilibrium]:
    """All nonnegative homogeneous steady states, the origin first.

    Eliminating w = u + v and v = mu1 u^r1 - u leaves one equation
    g(u) = mu1 u^r1 + r u v - mu2 v^r2 = 0 on u >= mu1^(-1/(r1-1)), where
    v >= 0. Sign changes of g on a uniform scan are polished with brentq.
    """
    def v_of(u: float) -> float:
        return max(params.mu1 * u ** params.r1 - u, 0.0)

    def g(u: float) -> float:
        v = v_of(u)
        return params.mu1 * u ** params.r1 + params.r * u * v - params.mu2 * v ** params.r2

    equilibria = [Equilibrium(u_star=0.0, v_star=0.0, w_star=0.0,
                              residuals=equilibrium_residuals(0.0, 0.0, 0.0, params))]
    u_low = params.mu1 ** (-1.0 / (params.r1 - 1.0))
    u_high = max(10.0, (2.0 * (1.0 + params.mu1 + params.mu2 + params.r)) ** 2, 2.0 * u_low)
    while g(u_high) >= 0 and u_high < EQUILIBRIUM_U_CAP:
        u_high *= 2.0

    scan = np.linspace(u_low, u_high, EQUILIBRIUM_SCAN_INTERVALS + 1)
    values = np.array([g(u) for u in scan])
    roots: List[float] = []
    for left, right, g_left, g_right in zip(scan[:-1], scan[1:], values[:-1], values[1:]):
        if g_left == 0:
            roots.append(float(left))
        elif g_left * g_right < 0:
            roots.append(brentq(g, left, right, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200))
    if values[-1] == 0:
        roots.append(float(scan[-1]))

    for u in roots:
        v = v_of(u)
        w = u + v
        equilibria.append(Equilibrium(u_star=u, v_star=v, w_star=w,
                                      residuals=equilibrium_residuals(u, v, w, params)))
    logger.debug("Found %d homogeneous equilibria", len(equilibria))
    return equilibria


def homogeneous_ode_trajectory(params: ModelParams, y0: Sequence[float], t_end: float, dt: float) -> OdeTrajectory:
    """Classical RK4 integration of the spatially homogeneous system.

    The last step is shortened to land on ``t_end``.

    Raises:
        NegativeStateError: A component drops below -1e-10.
    """
    state = np.asarray(y0, dtype=np.float64)
    if np.any(state < 0):
        raise NegativeStateError(f"initial state {state.tolist()} must be nonnegative")
    if dt <= 0:
        raise AnalyticsDomainError(f"dt must be > 0 (got {dt})")

    def rhs(y: np.ndarray) -> np.ndarray:
        return np.array(reaction_rates(y[0], y[1], y[2], params))

    times = [0.0]
    states = [state.copy()]
    t = 0.0
    while t < t_end - 1e-12 * max(1.0, t_end):
        h = min(dt, t_end - t)
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
        if np.any(state < -ODE_NEGATIVITY_TOLERANCE):
            raise NegativeStateError(f"RK4 state {state.tolist()} negative at t={t:.6g}; reduce dt")
        times.append(t)
        states.append(state.copy())
    return OdeTrajectory(times=np.array(times), states=np.array(states))


def boundedness_regime(params: ModelParams) -> BoundednessRegime:
    """Regime of the boundedness theorem a parameter set falls into.

    For the quadratic system with dim_n < 3 the threshold is undefined and
    the point is reported as below threshold (no guarantee).
    """
    if params.r1 > 2 and params.r2 > 2:
        return BoundednessRegime.generalizedLogistic
    if params.r1 == 2 and params.r2 == 2:
        if params.dim_n < 3:
            return BoundednessRegime.quadraticBelowThreshold
        threshold = mu_star(ThresholdInputs.from_params(params)).value
        if min(params.mu1, params.mu2) > threshold:
            return BoundednessRegime.quadraticAboveThreshold
        return BoundednessRegime.quadraticBelowThreshold
    return BoundednessRegime.mixedExponents


def reference_conditions(params: ModelParams) -> ReferenceConditions:
    chi1, chi2, r = params.chi1, params.chi2, params.r
    large = (params.mu1 > 16 + 8 * chi1 ** 2 + r / 2 and params.mu2 > 16 + 8 * chi2 ** 2 + r / 2
             and params.mu1 * params.mu2 ** 2 > 4 * r ** 3 / 27)
    factor = max(params.dim_n - 2, 0) / params.dim_n
    bound_u = factor * (2 * chi1 + chi2 / 2) + r / 2
    bound_v = factor * (2 * chi2 + chi1 / 2) + r
    return ReferenceConditions(large_damping_3d=large,
                               elliptic_signal=params.mu1 > bound_u and params.mu2 > bound_v,
                               elliptic_bound_u=bound_u, elliptic_bound_v=bound_v)


def mass_absorbing_bound(c4: float) -> float:
    """Absorbing level implied by y' + y/2 <= C4: y eventually stays below 2 C4."""
    if c4 < 0:
        raise AnalyticsDomainError(f"C4 must be >= 0 (got {c4})")
    return 2.0 * c4


def gn_examples(dim_n: int) -> List[Tuple[float, float, Optional[float]]]:
    """A few (p, q, alpha) rows for the analyze table; alpha is None when singular."""
    rows = []
    for p, q in ((2.0, 1.0), (4.0, 2.0), (3.0, 1.5)):
        try:
            rows.append((p, q, gn_exponent(GNQuery(p=p, q=q, dim_n=dim_n))))
        except AnalyticsDomainError:
            rows.append((p, q, None))
    return rows
