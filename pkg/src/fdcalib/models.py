"""Mean functions, log-likelihoods, log-priors, and derived breakpoints.

The two-regime model places two regression lines either side of an occupancy
breakpoint lambda (the boundary x = lambda belongs to regime 1); the logistic
(LGF) model is a single S-curve whose inflection point sits at lambda. Both
models assume Gaussian speed noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .domain import DetectorDataset, LgfParams, ModelKind, TwoRegimeParams

LOG_2PI = math.log(2.0 * math.pi)

Params = Union[TwoRegimeParams, LgfParams]


@dataclass(frozen=True)
class PriorSpec:
    """Scales of the non-informative priors.

    Regression coefficients get Normal(0, coefficient_scale^2); noise scales
    get Half-Normal(noise_scale). The two-regime breakpoint is uniform over
    the resolved bounds; the LGF breakpoint defaults to
    Normal(0, coefficient_scale^2) with a uniform-over-bounds override.
    """

    coefficient_scale: float = 10.0
    noise_scale: float = 5.0
    lgf_breakpoint_prior: str = "normal"  # or "uniform"

    def __post_init__(self) -> None:
        if not self.coefficient_scale > 0:
            raise ValueError("coefficient_scale must be positive")
        if not self.noise_scale > 0:
            raise ValueError("noise_scale must be positive")
        if self.lgf_breakpoint_prior not in ("normal", "uniform"):
            raise ValueError("lgf_breakpoint_prior must be 'normal' or 'uniform'")

    def to_dict(self) -> dict:
        return {
            "coefficient_scale": self.coefficient_scale,
            "noise_scale": self.noise_scale,
            "lgf_breakpoint_prior": self.lgf_breakpoint_prior,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(
            coefficient_scale=float(d.get("coefficient_scale", 10.0)),
            noise_scale=float(d.get("noise_scale", 5.0)),
            lgf_breakpoint_prior=d.get("lgf_breakpoint_prior", "normal"),
        )


@dataclass(frozen=True)
class BreakpointReport:
    """Occupancy breakpoint and the speed value(s) the mean curve takes there.

    For the LGF there is a single speed breakpoint (the curve at its
    inflection point). The two-regime model is discontinuous at lambda, so
    it yields two speed values, reported as (lower, upper) = (min, max);
    the band between them is the transitional state.
    """

    model_kind: ModelKind
    occupancy_breakpoint: float
    speed_breakpoint: float | None = None
    speed_breakpoint_low: float | None = None
    speed_breakpoint_high: float | None = None
    band_width: float | None = None

    def to_dict(self) -> dict:
        d = {"model": self.model_kind.value, "occupancy_breakpoint": self.occupancy_breakpoint}
        if self.speed_breakpoint is not None:
            d["speed_breakpoint"] = self.speed_breakpoint
        if self.speed_breakpoint_low is not None:
            d["speed_breakpoint_low"] = self.speed_breakpoint_low
            d["speed_breakpoint_high"] = self.speed_breakpoint_high
            d["band_width"] = self.band_width
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BreakpointReport":
        return cls(
            model_kind=ModelKind.parse(d["model"]),
            occupancy_breakpoint=float(d["occupancy_breakpoint"]),
            speed_breakpoint=_opt(d.get("speed_breakpoint")),
            speed_breakpoint_low=_opt(d.get("speed_breakpoint_low")),
            speed_breakpoint_high=_opt(d.get("speed_breakpoint_high")),
            band_width=_opt(d.get("band_width")),
        )


def _opt(v):
    return None if v is None else float(v)


# ---------------------------------------------------------------------------
# Mean functions
# ---------------------------------------------------------------------------

def two_regime_mean(x, p: TwoRegimeParams):
    """Piecewise-linear mean speed: regime 1 for x <= lambda, else regime 2.

    Accepts a scalar or array of occupancy percentages; returns mph.
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x <= p.lam, p.beta10 + p.beta11 * x, p.beta20 + p.beta21 * x)
    return float(out) if out.ndim == 0 else out


def lgf_mean(x, p: LgfParams):
    """Logistic mean speed s_min + (s_free - s_min) / (1 + e^(x - lambda)).

    Evaluated in a stable form: |x - lambda| up to ~700 neither overflows
    nor loses the asymptote.
    """
    x = np.asarray(x, dtype=float)
    out = p.s_min + (p.s_free - p.s_min) * _sigmoid(p.lam - x)
    return float(out) if out.ndim == 0 else out


def _sigmoid(t):
    """Numerically stable 1 / (1 + e^(-t)) for scalars or arrays."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# Elementary log-densities
# ---------------------------------------------------------------------------

def normal_logpdf(x, mu, sd):
    """Log-density of Normal(mu, sd^2)."""
    z = (np.asarray(x, dtype=float) - mu) / sd
    return -0.5 * (LOG_2PI + z * z) - math.log(sd)


def half_normal_logpdf(x, scale):
    """Log-density of Half-Normal(scale) on x >= 0; -inf below."""
    x = np.asarray(x, dtype=float)
    body = math.log(2.0) - math.log(scale) - 0.5 * LOG_2PI - 0.5 * (x / scale) ** 2
    out = np.where(x >= 0, body, -np.inf)
    return float(out) if out.ndim == 0 else out


def uniform_logpdf(x, low, high):
    """Log-density of Uniform(low, high); -inf outside the support."""
    x = np.asarray(x, dtype=float)
    out = np.where((x >= low) & (x <= high), -math.log(high - low), -np.inf)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Likelihood, prior, posterior
# ---------------------------------------------------------------------------

def log_likelihood(model_kind: ModelKind, params: Params, data: DetectorDataset) -> float:
    """Sum over observations of log Normal(y_i; mean(x_i), sigma(regime)^2).

    Total on valid parameters (Gaussian support is all reals); rejects
    non-positive noise scales.
    """
    model_kind = ModelKind.parse(model_kind)
    if data.n < 1:
        raise ValueError("log_likelihood requires n >= 1")
    x = np.asarray(data.occupancies(), dtype=float)
    y = np.asarray(data.speeds(), dtype=float)
    if model_kind is ModelKind.TWO_REGIME:
        if params.sigma1 <= 0 or params.sigma2 <= 0:
            raise ValueError("sigma1 and sigma2 must be positive")
        left = x <= params.lam
        mu = np.where(left, params.beta10 + params.beta11 * x, params.beta20 + params.beta21 * x)
        sd = np.where(left, params.sigma1, params.sigma2)
        z = (y - mu) / sd
        return float(np.sum(-0.5 * (LOG_2PI + z * z) - np.log(sd)))
    if params.sigma <= 0:
        raise ValueError("sigma must be positive")
    mu = params.s_min + (params.s_free - params.s_min) * _sigmoid(params.lam - x)
    z = (y - mu) / params.sigma
    return float(np.sum(-0.5 * (LOG_2PI + z * z)) - data.n * math.log(params.sigma))


def log_prior(
    model_kind: ModelKind,
    params: Params,
    prior: PriorSpec,
    bounds: tuple[float, float],
) -> float:
    """Sum of per-parameter prior log-densities.

    Returns -inf when the two-regime lambda (or the LGF lambda under the
    uniform override) falls outside ``bounds``, or when any noise scale is
    non-positive.
    """
    model_kind = ModelKind.parse(model_kind)
    cs = prior.coefficient_scale
    if model_kind is ModelKind.TWO_REGIME:
        if params.sigma1 <= 0 or params.sigma2 <= 0:
            return -math.inf
        lp = float(uniform_logpdf(params.lam, bounds[0], bounds[1]))
        if not math.isfinite(lp):
            return -math.inf
        for b in (params.beta10, params.beta11, params.beta20, params.beta21):
            lp += float(normal_logpdf(b, 0.0, cs))
        lp += float(half_normal_logpdf(params.sigma1, prior.noise_scale))
        lp += float(half_normal_logpdf(params.sigma2, prior.noise_scale))
        return lp
    if params.sigma <= 0:
        return -math.inf
    if prior.lgf_breakpoint_prior == "uniform":
        lp = float(uniform_logpdf(params.lam, bounds[0], bounds[1]))
        if not math.isfinite(lp):
            return -math.inf
    else:
        lp = float(normal_logpdf(params.lam, 0.0, cs))
    lp += float(normal_logpdf(params.s_min, 0.0, cs))
    lp += float(normal_logpdf(params.s_free, 0.0, cs))
    lp += float(half_normal_logpdf(params.sigma, prior.noise_scale))
    return lp


def log_posterior(
    model_kind: ModelKind,
    params: Params,
    data: DetectorDataset,
    prior: PriorSpec,
    bounds: tuple[float, float],
) -> float:
    """log_likelihood + log_prior, with -inf propagation from the prior."""
    lp = log_prior(model_kind, params, prior, bounds)
    if not math.isfinite(lp):
        return -math.inf
    return lp + log_likelihood(model_kind, params, data)


# ---------------------------------------------------------------------------
# Derived breakpoint quantities
# ---------------------------------------------------------------------------

def transitional_band(speed_a: float, speed_b: float) -> tuple[float, float, float]:
    """Order two regime speeds as (lower, upper) and return the band width."""
    low, high = (speed_a, speed_b) if speed_a <= speed_b else (speed_b, speed_a)
    return low, high, high - low


def derive_breakpoints(model_kind: ModelKind, params: Params) -> BreakpointReport:
    """Occupancy breakpoint plus the mean-curve speed value(s) at it.

    LGF: speed breakpoint is the curve at its inflection,
    (s_min + s_free) / 2. Two-regime: both line values at lambda, reported
    as (lower, upper) = (min, max) with the band width between them.
    """
    model_kind = ModelKind.parse(model_kind)
    if model_kind is ModelKind.LGF:
        return BreakpointReport(
            model_kind=model_kind,
            occupancy_breakpoint=params.lam,
            speed_breakpoint=0.5 * (params.s_min + params.s_free),
        )
    mu1 = params.beta10 + params.beta11 * params.lam
    mu2 = params.beta20 + params.beta21 * params.lam
    low, high, width = transitional_band(mu1, mu2)
    return BreakpointReport(
        model_kind=model_kind,
        occupancy_breakpoint=params.lam,
        speed_breakpoint_low=low,
        speed_breakpoint_high=high,
        band_width=width,
    )


# ---------------------------------------------------------------------------
# Fast log-posterior evaluators for the sampler
# ---------------------------------------------------------------------------

def resolve_breakpoint_bounds(
    config_bounds, data: DetectorDataset
) -> tuple[float, float]:
    """Resolve "from-data" to the observed occupancy range."""
    if isinstance(config_bounds, tuple):
        return config_bounds
    occ = data.occupancies()
    low, high = min(occ), max(occ)
    if not low < high:
        raise ValueError(
            "cannot resolve breakpoint bounds from data: all occupancies equal"
        )
    return (low, high)


def make_log_posterior(
    model_kind: ModelKind,
    data: DetectorDataset,
    prior: PriorSpec,
    bounds: tuple[float, float],
) -> Callable[[Sequence[float]], float]:
    """Build a fast log-posterior over the canonical parameter vector.

    The two-regime evaluator precomputes prefix sums over x-sorted data so
    each call is O(1) in n (an algebraic rearrangement of the residual sum
    of squares); the LGF evaluator is a vectorized O(n) pass. Both agree
    with ``log_posterior`` up to floating-point reassociation.
    """
    model_kind = ModelKind.parse(model_kind)
    x = np.asarray(data.occupancies(), dtype=float)
    y = np.asarray(data.speeds(), dtype=float)
    n = data.n
    cs = prior.coefficient_scale
    ns = prior.noise_scale
    low, high = bounds
    log_bounds_width = math.log(high - low)

    if model_kind is ModelKind.LGF:
        lam_uniform = prior.lgf_breakpoint_prior == "uniform"

        def lgf_logpost(v: Sequence[float]) -> float:
            s_min, s_free, lam, sigma = v
            if sigma <= 0:
                return -math.inf
            if lam_uniform:
                if not low <= lam <= high:
                    return -math.inf
                lp = -log_bounds_width
            else:
                lp = -0.5 * (LOG_2PI + (lam / cs) ** 2) - math.log(cs)
            lp += -0.5 * (LOG_2PI + (s_min / cs) ** 2) - math.log(cs)
            lp += -0.5 * (LOG_2PI + (s_free / cs) ** 2) - math.log(cs)
            lp += math.log(2.0) - math.log(ns) - 0.5 * LOG_2PI - 0.5 * (sigma / ns) ** 2
            mu = s_min + (s_free - s_min) * _sigmoid(lam - x)
            rss = float(np.sum((y - mu) ** 2))
            return lp - 0.5 * n * LOG_2PI - n * math.log(sigma) - rss / (2.0 * sigma * sigma)

        return lgf_logpost

    # Two-regime: prefix sums in x-sorted order make the split RSS O(1).
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    c1 = np.concatenate(([0.0], np.cumsum(np.ones(n))))
    cx = np.concatenate(([0.0], np.cumsum(xs)))
    cxx = np.concatenate(([0.0], np.cumsum(xs * xs)))
    cy = np.concatenate(([0.0], np.cumsum(ys)))
    cyy = np.concatenate(([0.0], np.cumsum(ys * ys)))
    cxy = np.concatenate(([0.0], np.cumsum(xs * ys)))

    def segment_rss(i: int, j: int, a: float, b: float) -> tuple[float, float]:
        """(count, sum of (y - a - b*x)^2) over sorted slice [i, j)."""
        m = c1[j] - c1[i]
        sx = cx[j] - cx[i]
        sxx = cxx[j] - cxx[i]
        sy = cy[j] - cy[i]
        syy = cyy[j] - cyy[i]
        sxy = cxy[j] - cxy[i]
        rss = (
            syy
            - 2.0 * a * sy
            - 2.0 * b * sxy
            + a * a * m
            + 2.0 * a * b * sx
            + b * b * sxx
        )
        return m, max(rss, 0.0)

    def two_regime_logpost(v: Sequence[float]) -> float:
        beta10, beta11, beta20, beta21, lam, sigma1, sigma2 = v
        if sigma1 <= 0 or sigma2 <= 0:
            return -math.inf
        if not low <= lam <= high:
            return -math.inf
        lp = -log_bounds_width
        for b in (beta10, beta11, beta20, beta21):
            lp += -0.5 * (LOG_2PI + (b / cs) ** 2) - math.log(cs)
        for s in (sigma1, sigma2):
            lp += math.log(2.0) - math.log(ns) - 0.5 * LOG_2PI - 0.5 * (s / ns) ** 2
        k = int(np.searchsorted(xs, lam, side="right"))
        n1, rss1 = segment_rss(0, k, beta10, beta11)
        n2, rss2 = segment_rss(k, n, beta20, beta21)
        ll = -0.5 * n * LOG_2PI
        if n1 > 0:
            ll += -n1 * math.log(sigma1) - rss1 / (2.0 * sigma1 * sigma1)
        if n2 > 0:
            ll += -n2 * math.log(sigma2) - rss2 / (2.0 * sigma2 * sigma2)
        return lp + ll

    return two_regime_logpost


def params_from_vector(model_kind: ModelKind, v: Sequence[float]) -> Params:
    """Materialize a canonical-order vector as a typed parameter point."""
    model_kind = ModelKind.parse(model_kind)
    if model_kind is ModelKind.TWO_REGIME:
        return TwoRegimeParams.from_vector(v)
    return LgfParams.from_vector(v)


def param_names(model_kind: ModelKind) -> tuple[str, ...]:
    model_kind = ModelKind.parse(model_kind)
    if model_kind is ModelKind.TWO_REGIME:
        return TwoRegimeParams.PARAM_NAMES
    return LgfParams.PARAM_NAMES


def mean_function(model_kind: ModelKind):
    """The model's mean-speed function, as (x, params) -> mph."""
    model_kind = ModelKind.parse(model_kind)
    return two_regime_mean if model_kind is ModelKind.TWO_REGIME else lgf_mean
