"""Multi-chain adaptive random-walk Metropolis sampler and posterior summaries.

The kernel proposes componentwise Gaussian steps, with noise scales handled
in log space (Jacobian-corrected) so positivity is respected by construction.
Proposal scales adapt toward a 0.44 acceptance rate during burn-in only;
retained draws come from a fixed kernel, so detailed balance holds for all
of them. Chains are independent, each owning an RNG seeded with
``base_seed XOR chain_index``, which makes runs reproducible regardless of
chain-level parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import (
    DetectorDataset,
    FitConfig,
    ModelKind,
    ParamSummary,
    PosteriorFit,
)
from .models import (
    PriorSpec,
    _sigmoid,
    make_log_posterior,
    param_names,
    resolve_breakpoint_bounds,
)


class DiagnosticUnavailableError(RuntimeError):
    """Raised when a convergence diagnostic cannot be computed."""


@dataclass(frozen=True)
class ChainSamples:
    """Retained draws of one chain, in canonical parameter order."""

    chain_index: int
    draws: np.ndarray  # (inference_draws, n_params)
    acceptance_rate: float
    seed: int

    def __post_init__(self) -> None:
        draws = np.asarray(self.draws, dtype=float)
        if draws.ndim != 2:
            raise ValueError("draws must be a 2-D (draws x params) array")
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance_rate must lie in [0, 1]")
        object.__setattr__(self, "draws", draws)

    def to_dict(self) -> dict:
        return {
            "chain_index": self.chain_index,
            "acceptance_rate": self.acceptance_rate,
            "seed": self.seed,
            "draws": self.draws.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainSamples":
        return cls(
            chain_index=int(d["chain_index"]),
            draws=np.asarray(d["draws"], dtype=float),
            acceptance_rate=float(d["acceptance_rate"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class DiagnosticReport:
    """Per-parameter R-hat (when >= 2 chains), convergence flag, optional ESS."""

    rhat: dict[str, Optional[float]]
    converged: bool
    rhat_threshold: float
    ess: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rhat": self.rhat,
            "converged": self.converged,
            "rhat_threshold": self.rhat_threshold,
            "ess": self.ess,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiagnosticReport":
        return cls(
            rhat={k: (None if v is None else float(v)) for k, v in d["rhat"].items()},
            converged=bool(d["converged"]),
            rhat_threshold=float(d["rhat_threshold"]),
            ess={k: float(v) for k, v in d.get("ess", {}).items()},
        )


@dataclass
class KernelResult:
    """Output of one adaptive Metropolis chain (in sampling space)."""

    draws: np.ndarray
    acceptance_rate: float
    adaptation_sweeps: list[int]
    final_scales: np.ndarray


# ---------------------------------------------------------------------------
# Diagnostics and summaries
# ---------------------------------------------------------------------------

def gelman_rubin(chains: Sequence[Sequence[float]]) -> float:
    """Gelman-Rubin potential scale reduction factor for one parameter.

    Parameters
    ----------
    chains : sequence of equal-length draw sequences, one per chain.

    Returns
    -------
    R-hat = sqrt(((n-1)/n * W + B/n) / W) where W is the mean of the
    within-chain sample variances and B/n the sample variance of the chain
    means.

    Raises
    ------
    DiagnosticUnavailableError
        With fewer than 2 chains or zero within-chain variance.
    """
    arrs = [np.asarray(c, dtype=float) for c in chains]
    if len(arrs) < 2:
        raise DiagnosticUnavailableError("R-hat requires at least 2 chains")
    n = arrs[0].size
    if any(a.size != n for a in arrs):
        raise ValueError("chains must have equal lengths")
    if n < 2:
        raise ValueError("chains must have length >= 2")
    w = float(np.mean([np.var(a, ddof=1) for a in arrs]))
    if w == 0.0:
        raise DiagnosticUnavailableError("zero within-chain variance")
    b_over_n = float(np.var([np.mean(a) for a in arrs], ddof=1))
    return math.sqrt(((n - 1) / n * w + b_over_n) / w)


def hdi(samples: Sequence[float], mass: float) -> tuple[float, float]:
    """Highest density interval: the narrowest window over the sorted
    samples containing ceil(mass * N) of them.

    Ties between equally narrow windows are broken by the lowest lower
    bound.
    """
    s = np.sort(np.asarray(samples, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("hdi requires nonempty samples")
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    # tiny epsilon guards ceil against float error when mass*n is integral
    k = max(1, int(math.ceil(mass * n - 1e-9)))
    widths = s[k - 1 :] - s[: n - k + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + k - 1])


def effective_sample_size(draws: Sequence[float]) -> float:
    """ESS of a single chain via Geyer initial-positive-pair truncation."""
    x = np.asarray(draws, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var0 = float(np.dot(x, x) / n)
    if var0 == 0.0:
        return float(n)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n].real / n
    rho = acov / acov[0]
    tau = 1.0
    t = 1
    while t + 1 < n:
        pair = rho[t] + rho[t + 1]
        if pair <= 0.0:
            break
        tau += 2.0 * pair
        t += 2
    return float(min(n, max(1.0, n / tau)))


def summarize(
    chains: Sequence,
    credible_mass: float,
    names: Optional[Sequence[str]] = None,
) -> dict[str, ParamSummary]:
    """Pooled per-parameter posterior summaries.

    ``chains`` is a sequence of (draws x params) arrays or ChainSamples.
    The equal-tailed interval uses linear interpolation between order
    statistics; std is the sample standard deviation (divisor N-1).
    """
    mats = [c.draws if isinstance(c, ChainSamples) else np.asarray(c, dtype=float) for c in chains]
    if not mats:
        raise ValueError("summarize requires at least one chain")
    mats = [m.reshape(m.shape[0], -1) for m in mats]
    pooled = np.concatenate(mats, axis=0)
    p = pooled.shape[1]
    if names is None:
        names = [f"p{j}" for j in range(p)]
    lo_q = 100.0 * (1.0 - credible_mass) / 2.0
    hi_q = 100.0 - lo_q
    out: dict[str, ParamSummary] = {}
    for j, name in enumerate(names):
        col = pooled[:, j]
        ci_low, ci_high = np.percentile(col, [lo_q, hi_q])
        h_low, h_high = hdi(col, credible_mass)
        std = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        out[name] = ParamSummary(
            mean=float(col.mean()),
            std=std,
            ci_low=float(ci_low),
            ci_high=float(ci_high),
            hdi_low=h_low,
            hdi_high=h_high,
        )
    return out


# ---------------------------------------------------------------------------
# Adaptive random-walk Metropolis kernel
# ---------------------------------------------------------------------------

def adaptive_metropolis_chain(
    log_target: Callable[[np.ndarray], float],
    init: Sequence[float],
    *,
    burn_in: int,
    draws: int,
    rng: np.random.Generator,
    scales: Sequence[float],
    target_accept: float = 0.44,
    adapt_interval: int = 50,
    wide_jump_prob: float = 0.1,
    wide_jump_factor: float = 10.0,
) -> KernelResult:
    """Run one componentwise random-walk Metropolis chain.

    Each sweep proposes a Gaussian step for every component in turn. A
    proposal occasionally (``wide_jump_prob``) uses a ``wide_jump_factor``
    times larger scale; the resulting two-component mixture kernel stays
    symmetric, so no acceptance correction is needed. Scales adapt toward
    ``target_accept`` every ``adapt_interval`` sweeps during burn-in and are
    frozen afterwards.

    Returns draws in the sampling space of ``log_target`` (the caller owns
    any log transforms).
    """
    z = np.asarray(init, dtype=float).copy()
    p = z.size
    scales = np.asarray(scales, dtype=float).copy()
    if scales.size != p:
        raise ValueError("scales must match the state dimension")
    lp = log_target(z)
    if not math.isfinite(lp):
        raise ValueError("initial state has zero posterior density")
    out = np.empty((draws, p), dtype=float)
    window_acc = np.zeros(p, dtype=float)
    adaptation_sweeps: list[int] = []
    kept_acc = 0
    total = burn_in + draws
    for it in range(total):
        for j in range(p):
            step = scales[j]
            if wide_jump_prob > 0.0 and rng.random() < wide_jump_prob:
                step *= wide_jump_factor
            old = z[j]
            z[j] = old + step * rng.standard_normal()
            lp_new = log_target(z)
            diff = lp_new - lp
            if diff >= 0.0 or rng.random() < math.exp(diff):
                lp = lp_new
                window_acc[j] += 1.0
                if it >= burn_in:
                    kept_acc += 1
            else:
                z[j] = old
        if it < burn_in:
            if (it + 1) % adapt_interval == 0:
                rates = window_acc / adapt_interval
                scales *= np.exp(rates - target_accept)
                window_acc[:] = 0.0
                adaptation_sweeps.append(it)
        else:
            out[it - burn_in] = z
    return KernelResult(
        draws=out,
        acceptance_rate=kept_acc / (draws * p),
        adaptation_sweeps=adaptation_sweeps,
        final_scales=scales,
    )


# ---------------------------------------------------------------------------
# Chain initialization heuristics
# ---------------------------------------------------------------------------

def _lambda_start_quantiles(n_chains: int) -> np.ndarray:
    """Overdispersed breakpoint starts: occupancy quantiles spread per chain."""
    if n_chains == 1:
        return np.array([0.5])
    return np.linspace(0.3, 0.7, n_chains)


def _line_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares (intercept, slope), tolerating degenerate slices."""
    if x.size == 0:
        return float(np.mean(y)) if y.size else 0.0, 0.0
    if x.size < 2 or np.ptp(x) == 0.0:
        return float(np.mean(y)), 0.0
    slope, intercept = np.polyfit(x, y, 1)
    return float(intercept), float(slope)


def _initial_two_regime(
    x: np.ndarray, y: np.ndarray, lam0: float, rng: np.random.Generator
) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = xs.size
    k = int(np.searchsorted(xs, lam0, side="right"))
    k = min(max(k, min(2, n)), max(n - 2, 0)) if n >= 4 else n // 2
    b10, b11 = _line_fit(xs[:k], ys[:k]) if k > 0 else _line_fit(xs, ys)
    b20, b21 = _line_fit(xs[k:], ys[k:]) if k < n else _line_fit(xs, ys)
    b10, b11 = b10 or float(np.mean(y)), b11
    r1 = ys[:k] - (b10 + b11 * xs[:k])
    r2 = ys[k:] - (b20 + b21 * xs[k:])
    s1 = max(float(np.std(r1)) if r1.size else 1.0, 1e-2)
    s2 = max(float(np.std(r2)) if r2.size else 1.0, 1e-2)
    jit = rng.standard_normal(6)
    return np.array(
        [
            b10 * (1.0 + 0.02 * jit[0]),
            b11 + 0.05 * (abs(b11) + 0.05) * jit[1],
            b20 * (1.0 + 0.02 * jit[2]),
            b21 + 0.05 * (abs(b21) + 0.05) * jit[3],
            lam0,
            s1 * math.exp(0.1 * jit[4]),
            s2 * math.exp(0.1 * jit[5]),
        ]
    )


def _initial_lgf(
    x: np.ndarray, y: np.ndarray, lam0: float, rng: np.random.Generator
) -> np.ndarray:
    lo_cut = np.quantile(x, 0.15)
    hi_cut = np.quantile(x, 0.85)
    free_side = y[x <= lo_cut]
    cong_side = y[x >= hi_cut]
    s_free = float(np.mean(free_side)) if free_side.size else float(np.max(y))
    s_min = float(np.mean(cong_side)) if cong_side.size else float(np.min(y))
    mu = s_min + (s_free - s_min) * np.asarray(_sigmoid(lam0 - x))
    sigma = max(float(np.std(y - mu)), 1e-2)
    jit = rng.standard_normal(3)
    return np.array(
        [
            s_min + 0.05 * (abs(s_min) + 1.0) * jit[0],
            s_free + 0.05 * (abs(s_free) + 1.0) * jit[1],
            lam0,
            sigma * math.exp(0.1 * jit[2]),
        ]
    )


# ---------------------------------------------------------------------------
# Multi-chain driver
# ---------------------------------------------------------------------------

def run_chains(
    model_kind: ModelKind,
    data: DetectorDataset,
    prior: Optional[PriorSpec] = None,
    config: Optional[FitConfig] = None,
    threads: int = 1,
) -> PosteriorFit:
    """Fit one model by MCMC: independent chains, diagnostics, summaries.

    Identical (model, data, prior, config) inputs produce bit-identical
    output, including across ``threads`` settings. Non-convergence is
    reported via ``diagnostics.converged``, never silently ignored.
    """
    model_kind = ModelKind.parse(model_kind)
    prior = prior or PriorSpec()
    config = config or FitConfig()
    data.require_fit_ready()

    x = np.asarray(data.occupancies(), dtype=float)
    y = np.asarray(data.speeds(), dtype=float)
    try:
        bounds = resolve_breakpoint_bounds(config.breakpoint_bounds, data)
    except ValueError:
        if model_kind is ModelKind.LGF and prior.lgf_breakpoint_prior == "normal":
            # bounds unused by the LGF normal-lambda prior; keep a valid echo
            bounds = (float(x[0]) - 1.0, float(x[0]) + 1.0)
        else:
            raise
    logpost = make_log_posterior(model_kind, data, prior, bounds)
    names = param_names(model_kind)
    p = len(names)
    if model_kind is ModelKind.TWO_REGIME:
        log_mask = np.array([False, False, False, False, False, True, True])
    else:
        log_mask = np.array([False, False, False, True])

    def target_z(z: np.ndarray) -> float:
        theta = z.copy()
        theta[log_mask] = np.exp(z[log_mask])
        lp = logpost(theta)
        if not math.isfinite(lp):
            return -math.inf
        return lp + float(z[log_mask].sum())

    sd_x = max(float(np.std(x)), 1e-6)
    lam_quantiles = _lambda_start_quantiles(config.n_chains)

    def run_one(chain_index: int) -> ChainSamples:
        seed = config.seed ^ chain_index
        rng = np.random.default_rng(seed)
        lam0 = float(np.quantile(x, lam_quantiles[chain_index]))
        lam0 = float(np.clip(lam0, bounds[0], bounds[1]))
        if model_kind is ModelKind.TWO_REGIME:
            init = _initial_two_regime(x, y, lam0, rng)
            sigma0 = max(float(init[5]), float(init[6]))
            coef = max(1e-3, 2.4 * sigma0 / math.sqrt(data.n))
            scales = np.array(
                [coef, coef / sd_x, coef, coef / sd_x, 0.05 * (bounds[1] - bounds[0]), 0.25, 0.25]
            )
        else:
            init = _initial_lgf(x, y, lam0, rng)
            sigma0 = float(init[3])
            coef = max(1e-3, 2.4 * sigma0 / math.sqrt(data.n))
            scales = np.array([coef, coef, 0.05 * (bounds[1] - bounds[0]), 0.25])
        z0 = init.copy()
        z0[log_mask] = np.log(init[log_mask])
        result = adaptive_metropolis_chain(
            target_z,
            z0,
            burn_in=config.burn_in,
            draws=config.inference_draws,
            rng=rng,
            scales=scales,
        )
        draws = result.draws
        draws[:, log_mask] = np.exp(draws[:, log_mask])
        return ChainSamples(
            chain_index=chain_index,
            draws=draws,
            acceptance_rate=result.acceptance_rate,
            seed=seed,
        )

    if threads > 1 and config.n_chains > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chains = tuple(pool.map(run_one, range(config.n_chains)))
    else:
        chains = tuple(run_one(c) for c in range(config.n_chains))

    summaries = summarize(chains, config.credible_mass, names)
    rhat: dict[str, Optional[float]] = {}
    if config.n_chains >= 2:
        for j, name in enumerate(names):
            try:
                rhat[name] = gelman_rubin([c.draws[:, j] for c in chains])
            except DiagnosticUnavailableError:
                rhat[name] = math.inf
    else:
        rhat = {name: None for name in names}
    ess = {
        name: float(sum(effective_sample_size(c.draws[:, j]) for c in chains))
        for j, name in enumerate(names)
    }
    converged = all(
        v is None or (math.isfinite(v) and v < config.rhat_threshold) for v in rhat.values()
    )
    diagnostics = DiagnosticReport(
        rhat=rhat, converged=converged, rhat_threshold=config.rhat_threshold, ess=ess
    )
    summaries = {
        name: ParamSummary(
            mean=s.mean,
            std=s.std,
            ci_low=s.ci_low,
            ci_high=s.ci_high,
            hdi_low=s.hdi_low,
            hdi_high=s.hdi_high,
            rhat=rhat[name],
            ess=ess[name],
        )
        for name, s in summaries.items()
    }
    breakpoint_summaries = _breakpoint_summaries(model_kind, chains, config.credible_mass)
    return PosteriorFit(
        model_kind=model_kind,
        param_names=tuple(names),
        summaries=summaries,
        breakpoint=breakpoint_summaries,
        chains=chains,
        diagnostics=diagnostics,
        config=config,
        prior=prior,
        bounds=bounds,
        dataset_digest=data.digest(),
        n_observations=data.n,
        site_label=data.site_label,
    )


def _breakpoint_summaries(
    model_kind: ModelKind, chains: Sequence[ChainSamples], credible_mass: float
) -> dict[str, ParamSummary]:
    """Posterior summaries of the derived breakpoint quantities (per draw)."""
    derived = []
    if model_kind is ModelKind.LGF:
        names = ["occupancy_breakpoint", "speed_breakpoint"]
        for c in chains:
            d = c.draws
            derived.append(np.column_stack([d[:, 2], 0.5 * (d[:, 0] + d[:, 1])]))
    else:
        names = [
            "occupancy_breakpoint",
            "speed_breakpoint_low",
            "speed_breakpoint_high",
            "band_width",
        ]
        for c in chains:
            d = c.draws
            lam = d[:, 4]
            mu1 = d[:, 0] + d[:, 1] * lam
            mu2 = d[:, 2] + d[:, 3] * lam
            low = np.minimum(mu1, mu2)
            high = np.maximum(mu1, mu2)
            derived.append(np.column_stack([lam, low, high, high - low]))
    return summarize(derived, credible_mass, names)
