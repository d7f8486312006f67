"""Closed-form proximal operators of the two-level (coefficient + group) penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroupStructure, _frozen

# group norms at or below this are treated as exactly zero
ZERO_NORM = 1e-300


@dataclass(frozen=True, eq=False)
class ThresholdPair:
    """Already-scaled thresholds: ``t`` per coefficient, ``s`` per group."""

    t: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=np.float64).reshape(-1)
        s = np.array(self.s, dtype=np.float64).reshape(-1)
        if np.any(t < 0) or np.any(s < 0) or not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
            raise ValueError("thresholds must be finite and nonnegative")
        object.__setattr__(self, "t", _frozen(t))
        object.__setattr__(self, "s", _frozen(s))

    @classmethod
    def from_weights(cls, gs: GroupStructure, alpha: float) -> "ThresholdPair":
        return cls(gs.lam / alpha, gs.mu / alpha)

    def check(self, gs: GroupStructure) -> None:
        if self.t.size != gs.p or self.s.size != gs.n_groups:
            raise ValueError(
                f"threshold lengths ({self.t.size}, {self.s.size}) do not match "
                f"structure ({gs.p}, {gs.n_groups})"
            )


def soft_threshold(b, t):
    """``sign(b) * max(0, |b| - t)``, elementwise."""
    b = np.asarray(b, dtype=np.float64)
    return np.sign(b) * np.maximum(np.abs(b) - t, 0.0)


def prox_group(v, gs: GroupStructure, s) -> np.ndarray:
    """Vector soft-thresholding of every group of ``v`` by its threshold in ``s``."""
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if v.ndim == 2 and s.ndim == 1:
        s = s[:, None]
    norms = gs.group_norms(v)
    safe = np.where(norms > ZERO_NORM, norms, 1.0)
    scale = np.where(norms > ZERO_NORM, np.maximum(norms - s, 0.0) / safe, 0.0)
    return v * scale[gs.labels]


def prox_hilasso(v, gs: GroupStructure, tp: ThresholdPair) -> np.ndarray:
    """Prox of the two-level penalty: coefficient shrinkage, then group shrinkage."""
    tp.check(gs)
    v = np.asarray(v, dtype=np.float64)
    t = tp.t[:, None] if v.ndim == 2 else tp.t
    return prox_group(soft_threshold(v, t), gs, tp.s)
