"""Core data types shared across the calibration toolkit.

All types are immutable after construction, validate their invariants in
``__post_init__``, and round-trip through ``to_dict``/``from_dict`` for JSON
serialization (snake_case field names).
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import InitVar, dataclass
from datetime import datetime
from typing import TYPE_CHECKING, Optional, Sequence, Union

if TYPE_CHECKING:
    import numpy as np

    from .models import PriorSpec
    from .sampler import ChainSamples, DiagnosticReport


class ModelKind(str, enum.Enum):
    """The two calibrated regression models."""

    LGF = "lgf"
    TWO_REGIME = "two_regime"

    @classmethod
    def parse(cls, value: Union[str, "ModelKind"]) -> "ModelKind":
        if isinstance(value, ModelKind):
            return value
        key = str(value).strip().lower().replace("-", "_")
        for kind in cls:
            if kind.value == key:
                return kind
        raise ValueError(f"unknown model kind {value!r}; expected 'lgf' or 'two-regime'")


@dataclass(frozen=True)
class Observation:
    """One aggregated detector record: (occupancy %, speed mph) at a timestamp.

    Negative speeds are rejected by default; the synthetic generator passes
    ``allow_negative_speed=True`` because its Gaussian noise model can emit
    them.
    """

    timestamp: datetime
    lane_id: int
    occupancy: float
    speed: float
    volume: Optional[int] = None
    allow_negative_speed: InitVar[bool] = False

    def __post_init__(self, allow_negative_speed: bool) -> None:
        if not isinstance(self.timestamp, datetime):
            raise ValueError("timestamp must be a datetime")
        if not math.isfinite(self.occupancy) or not 0.0 <= self.occupancy <= 100.0:
            raise ValueError(f"occupancy {self.occupancy} out of range [0, 100]")
        if not math.isfinite(self.speed):
            raise ValueError("speed must be finite")
        if self.speed < 0.0 and not allow_negative_speed:
            raise ValueError(f"speed {self.speed} must be nonnegative")
        if self.volume is not None and self.volume < 0:
            raise ValueError("volume must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp.isoformat(),
            "lane_id": self.lane_id,
            "occupancy": self.occupancy,
            "speed": self.speed,
            "volume": self.volume,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Observation":
        return cls(
            timestamp=datetime.fromisoformat(d["timestamp"]),
            lane_id=int(d["lane_id"]),
            occupancy=float(d["occupancy"]),
            speed=float(d["speed"]),
            volume=None if d.get("volume") is None else int(d["volume"]),
            allow_negative_speed=True,
        )


@dataclass(frozen=True)
class DetectorDataset:
    """Ordered sequence of observations from one site.

    May hold several lanes before lane selection; fit operations require a
    single lane and at least one observation.
    """

    observations: tuple[Observation, ...]
    site_label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "observations", tuple(self.observations))

    @property
    def n(self) -> int:
        return len(self.observations)

    def lane_ids(self) -> set[int]:
        return {o.lane_id for o in self.observations}

    def occupancies(self) -> list[float]:
        return [o.occupancy for o in self.observations]

    def speeds(self) -> list[float]:
        return [o.speed for o in self.observations]

    def require_fit_ready(self) -> None:
        """Raise unless the dataset is valid input for a fit operation."""
        if self.n < 1:
            raise ValueError("dataset is empty; fit requires n >= 1")
        if len(self.lane_ids()) > 1:
            raise ValueError(
                f"dataset mixes lanes {sorted(self.lane_ids())}; select one lane first"
            )

    def digest(self) -> str:
        """Stable content hash identifying the observations."""
        h = hashlib.sha256()
        h.update(self.site_label.encode())
        for o in self.observations:
            h.update(
                f"{o.timestamp.isoformat()}|{o.lane_id}|{o.occupancy!r}|{o.speed!r}|{o.volume!r}\n".encode()
            )
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "site_label": self.site_label,
            "n": self.n,
            "observations": [o.to_dict() for o in self.observations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorDataset":
        return cls(
            observations=tuple(Observation.from_dict(o) for o in d["observations"]),
            site_label=d.get("site_label", ""),
        )


@dataclass(frozen=True)
class TwoRegimeParams:
    """One point in the two-regime model's parameter space.

    Regime 1 (x <= lambda) follows the line beta10 + beta11*x with noise
    sigma1; regime 2 (x > lambda) follows beta20 + beta21*x with sigma2.
    """

    beta10: float
    beta11: float
    beta20: float
    beta21: float
    lam: float
    sigma1: float
    sigma2: float

    PARAM_NAMES = ("beta10", "beta11", "beta20", "beta21", "lambda", "sigma1", "sigma2")

    def __post_init__(self) -> None:
        for name in ("beta10", "beta11", "beta20", "beta21", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (self.sigma1 > 0 and math.isfinite(self.sigma1)):
            raise ValueError(f"sigma1 {self.sigma1} must be positive")
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 {self.sigma2} must be positive")

    def as_vector(self) -> tuple[float, ...]:
        return (self.beta10, self.beta11, self.beta20, self.beta21, self.lam, self.sigma1, self.sigma2)

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "TwoRegimeParams":
        return cls(*(float(x) for x in v))

    def to_dict(self) -> dict:
        return {
            "beta10": self.beta10,
            "beta11": self.beta11,
            "beta20": self.beta20,
            "beta21": self.beta21,
            "lambda": self.lam,
            "sigma1": self.sigma1,
            "sigma2": self.sigma2,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TwoRegimeParams":
        return cls(
            beta10=float(d["beta10"]),
            beta11=float(d["beta11"]),
            beta20=float(d["beta20"]),
            beta21=float(d["beta21"]),
            lam=float(d["lambda"]),
            sigma1=float(d["sigma1"]),
            sigma2=float(d["sigma2"]),
        )


@dataclass(frozen=True)
class LgfParams:
    """One point in the logistic-function model's parameter space."""

    s_min: float
    s_free: float
    lam: float
    sigma: float

    PARAM_NAMES = ("s_min", "s_free", "lambda", "sigma")

    def __post_init__(self) -> None:
        for name in ("s_min", "s_free", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValueError(f"sigma {self.sigma} must be positive")

    def as_vector(self) -> tuple[float, ...]:
        return (self.s_min, self.s_free, self.lam, self.sigma)

    @classmethod
    def from_vector(cls, v: Sequence[float]) -> "LgfParams":
        return cls(*(float(x) for x in v))

    def to_dict(self) -> dict:
        return {
            "s_min": self.s_min,
            "s_free": self.s_free,
            "lambda": self.lam,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LgfParams":
        return cls(
            s_min=float(d["s_min"]),
            s_free=float(d["s_free"]),
            lam=float(d["lambda"]),
            sigma=float(d["sigma"]),
        )


FROM_DATA = "from-data"


@dataclass(frozen=True)
class FitConfig:
    """Sampler run configuration.

    ``breakpoint_bounds`` is either an explicit (low, high) occupancy-%
    pair or the string ``"from-data"``, which resolves to the observed
    occupancy range at fit time.
    """

    n_chains: int = 4
    burn_in: int = 25_000
    inference_draws: int = 25_000
    seed: int = 0
    breakpoint_bounds: Union[str, tuple[float, float]] = FROM_DATA
    credible_mass: float = 0.95
    rhat_threshold: float = 1.05

    def __post_init__(self) -> None:
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be >= 0")
        if self.inference_draws < 1:
            raise ValueError("inference_draws must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not 0.0 < self.credible_mass < 1.0:
            raise ValueError("credible_mass must lie in (0, 1)")
        if not self.rhat_threshold > 1.0:
            raise ValueError("rhat_threshold must exceed 1")
        if self.breakpoint_bounds != FROM_DATA:
            low, high = self.breakpoint_bounds
            if not (math.isfinite(low) and math.isfinite(high) and low < high):
                raise ValueError("breakpoint_bounds must satisfy low < high")
            object.__setattr__(self, "breakpoint_bounds", (float(low), float(high)))

    def to_dict(self) -> dict:
        bounds = self.breakpoint_bounds
        return {
            "n_chains": self.n_chains,
            "burn_in": self.burn_in,
            "inference_draws": self.inference_draws,
            "seed": self.seed,
            "breakpoint_bounds": list(bounds) if isinstance(bounds, tuple) else bounds,
            "credible_mass": self.credible_mass,
            "rhat_threshold": self.rhat_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        bounds = d.get("breakpoint_bounds", FROM_DATA)
        if isinstance(bounds, (list, tuple)):
            bounds = (float(bounds[0]), float(bounds[1]))
        return cls(
            n_chains=int(d.get("n_chains", 4)),
            burn_in=int(d.get("burn_in", 25_000)),
            inference_draws=int(d.get("inference_draws", 25_000)),
            seed=int(d.get("seed", 0)),
            breakpoint_bounds=bounds,
            credible_mass=float(d.get("credible_mass", 0.95)),
            rhat_threshold=float(d.get("rhat_threshold", 1.05)),
        )


@dataclass(frozen=True)
class ParamSummary:
    """Posterior summary of a single scalar quantity.

    ``std`` is the sample standard deviation (divisor N-1); the credible
    interval is equal-tailed at the configured mass; ``rhat`` is present
    only for raw model parameters fitted with >= 2 chains.
    """

    mean: float
    std: float
    ci_low: float
    ci_high: float
    hdi_low: float
    hdi_high: float
    rhat: Optional[float] = None
    ess: Optional[float] = None

    def __post_init__(self) -> None:
        if self.ci_low > self.ci_high:
            raise ValueError("ci_low must not exceed ci_high")
        if self.hdi_low > self.hdi_high:
            raise ValueError("hdi_low must not exceed hdi_high")

    def to_dict(self) -> dict:
        d = {
            "mean": self.mean,
            "std": self.std,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "hdi_low": self.hdi_low,
            "hdi_high": self.hdi_high,
        }
        if self.rhat is not None:
            d["rhat"] = self.rhat
        if self.ess is not None:
            d["ess"] = self.ess
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSummary":
        return cls(
            mean=float(d["mean"]),
            std=float(d["std"]),
            ci_low=float(d["ci_low"]),
            ci_high=float(d["ci_high"]),
            hdi_low=float(d["hdi_low"]),
            hdi_high=float(d["hdi_high"]),
            rhat=None if d.get("rhat") is None else float(d["rhat"]),
            ess=None if d.get("ess") is None else float(d["ess"]),
        )


@dataclass(frozen=True)
class PosteriorFit:
    """Summarized posterior plus the retained chains that produced it.

    Summary statistics are deterministic functions of ``chains``; the
    config, prior, and resolved breakpoint bounds are echoed so a fit file
    is self-describing.
    """

    model_kind: ModelKind
    param_names: tuple[str, ...]
    summaries: dict[str, ParamSummary]
    breakpoint: dict[str, ParamSummary]
    chains: tuple["ChainSamples", ...]
    diagnostics: "DiagnosticReport"
    config: FitConfig
    prior: "PriorSpec"
    bounds: tuple[float, float]
    dataset_digest: str
    n_observations: int
    site_label: str = ""

    def __post_init__(self) -> None:
        for name, s in {**self.summaries, **self.breakpoint}.items():
            if s.ci_low > s.ci_high or s.hdi_low > s.hdi_high:
                raise ValueError(f"interval ordering violated for {name}")

    def pooled_draws(self) -> "np.ndarray":
        import numpy

        return numpy.concatenate([c.draws for c in self.chains], axis=0)

    @property
    def converged(self) -> bool:
        return self.diagnostics.converged

    def to_dict(self, include_draws: bool = False) -> dict:
        d = {
            "model": self.model_kind.value,
            "parameter_order": list(self.param_names),
            "params": {k: v.to_dict() for k, v in self.summaries.items()},
            "breakpoint": {k: v.to_dict() for k, v in self.breakpoint.items()},
            "diagnostics": self.diagnostics.to_dict(),
            "config": self.config.to_dict(),
            "prior": self.prior.to_dict(),
            "breakpoint_bounds": list(self.bounds),
            "dataset_digest": self.dataset_digest,
            "n_observations": self.n_observations,
            "site_label": self.site_label,
            "std_method": "sample_ddof1",
        }
        if include_draws:
            d["chains"] = [c.to_dict() for c in self.chains]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorFit":
        from .models import PriorSpec
        from .sampler import ChainSamples, DiagnosticReport

        chains = tuple(ChainSamples.from_dict(c) for c in d.get("chains", []))
        return cls(
            model_kind=ModelKind.parse(d["model"]),
            param_names=tuple(d["parameter_order"]),
            summaries={k: ParamSummary.from_dict(v) for k, v in d["params"].items()},
            breakpoint={k: ParamSummary.from_dict(v) for k, v in d["breakpoint"].items()},
            chains=chains,
            diagnostics=DiagnosticReport.from_dict(d["diagnostics"]),
            config=FitConfig.from_dict(d["config"]),
            prior=PriorSpec.from_dict(d["prior"]),
            bounds=(float(d["breakpoint_bounds"][0]), float(d["breakpoint_bounds"][1])),
            dataset_digest=d["dataset_digest"],
            n_observations=int(d["n_observations"]),
            site_label=d.get("site_label", ""),
        )
