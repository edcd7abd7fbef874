"""Parameters of the privacy-release mechanism."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import ConfigError
from .model import ACTIONS, ActionType

DEFAULT_SIGMA = 10.0


def _default_sigmas() -> dict:
    return {a: DEFAULT_SIGMA for a in ACTIONS}


@dataclass(frozen=True)
class NoiseModel:
    """Per-action Gaussian count noise plus the Laplace-noised share threshold.

    The defaults are placeholders: the real per-action variances and the
    Laplace scale of the released dataset are not public.
    """

    sigma_per_action: Mapping[ActionType, float] = field(default_factory=_default_sigmas)
    laplace_scale_b: float = 5.0
    share_threshold: float = 100.0

    def __post_init__(self):
        sig = {ActionType.parse(k): float(v) for k, v in dict(self.sigma_per_action).items()}
        for a in ACTIONS:
            sig.setdefault(a, DEFAULT_SIGMA)
        if any(not v >= 0 for v in sig.values()):
            raise ConfigError("noise sigmas must be non-negative")
        if not self.laplace_scale_b > 0:
            raise ConfigError("laplace_scale_b must be positive")
        if not self.share_threshold > 0:
            raise ConfigError("share_threshold must be positive")
        object.__setattr__(self, "sigma_per_action", sig)

    @classmethod
    def uniform(cls, sigma: float, **kw) -> "NoiseModel":
        return cls({a: sigma for a in ACTIONS}, **kw)

    def sigma(self, action) -> float:
        return self.sigma_per_action[ActionType.parse(action)]

    @property
    def sigmas(self) -> np.ndarray:
        """Sigma per action code."""
        return np.array([self.sigma_per_action[a] for a in ACTIONS], dtype=float)

    def to_dict(self) -> dict:
        return {
            "sigma_per_action": {a.value: self.sigma_per_action[a] for a in ACTIONS},
            "laplace_scale_b": self.laplace_scale_b,
            "share_threshold": self.share_threshold,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseModel":
        d = dict(d)
        unknown = set(d) - {"sigma", "sigma_per_action", "laplace_scale_b", "share_threshold"}
        if unknown:
            raise ConfigError(f"unknown noise keys: {sorted(unknown)}")
        base = float(d.pop("sigma", DEFAULT_SIGMA))
        sig = {a: base for a in ACTIONS}
        try:
            sig.update({ActionType.parse(k): float(v) for k, v in d.pop("sigma_per_action", {}).items()})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cls(sig, **d)
