"""Synthetic data with a known structured sparse representation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dictionary, GroupStructure, ProblemInstance


@dataclass(frozen=True)
class SynthSpec:
    m: int = 16
    group_sizes: tuple[int, ...] = (8, 8, 8, 8)
    k_active: int = 2
    active_fraction: float = 0.5
    coef_range: tuple[float, float] = (0.5, 1.5)
    sigma: float = 0.0
    n: int = 200
    seed: int = 0
    lam: float = 0.2
    mu: float = 0.05

    def __post_init__(self):
        if self.m < 1 or self.n < 0 or not self.group_sizes or min(self.group_sizes) < 1:
            raise ValueError("m, n and every group size must be positive")
        if not 0 <= self.k_active <= len(self.group_sizes):
            raise ValueError(f"k_active={self.k_active} exceeds the group count {len(self.group_sizes)}")
        if not 0 < self.active_fraction <= 1:
            raise ValueError("active_fraction must lie in (0, 1]")
        lo, hi = self.coef_range
        if not 0 <= lo <= hi:
            raise ValueError("coef_range must satisfy 0 <= low <= high")
        if self.sigma < 0 or self.lam < 0 or self.mu < 0:
            raise ValueError("sigma, lam and mu must be nonnegative")

    @property
    def p(self) -> int:
        return int(sum(self.group_sizes))

    def structure(self) -> GroupStructure:
        return GroupStructure.contiguous(self.group_sizes, self.lam, self.mu)


def random_dictionary(m: int, p: int, rng: np.random.Generator) -> Dictionary:
    return Dictionary.normalize(rng.standard_normal((m, p)))


def draw_codes(gs: GroupStructure, n: int, k_active: int, fraction: float, coef_range,
               rng: np.random.Generator, active_groups=None) -> tuple[np.ndarray, np.ndarray]:
    """Structured sparse codes ``p x n`` and the ``k_active x n`` active group indices.

    ``active_groups`` fixes the active set of every sample when given.
    """
    Z = np.zeros((gs.p, n))
    act = np.zeros((k_active, n), dtype=np.int64)
    lo, hi = coef_range
    for i in range(n):
        groups = (np.sort(rng.choice(gs.n_groups, size=k_active, replace=False))
                  if active_groups is None else np.asarray(active_groups))
        act[:, i] = groups
        for r in groups:
            G = gs.groups[r]
            k = max(1, int(round(fraction * G.size)))
            on = rng.choice(G, size=k, replace=False)
            Z[on, i] = rng.uniform(lo, hi, size=k) * rng.choice((-1.0, 1.0), size=k)
    return Z, act


def gen_synthetic(spec: SynthSpec, dictionary: Dictionary | None = None):
    """Draw ``(instance, generator_dictionary)``; ground truth goes in ``exact_codes``.

    The instance's labels hold the lowest active group of each sample (or -1).
    """
    rng = np.random.default_rng(spec.seed)
    gs = spec.structure()
    D = random_dictionary(spec.m, spec.p, rng) if dictionary is None else dictionary
    Z, act = draw_codes(gs, spec.n, spec.k_active, spec.active_fraction, spec.coef_range, rng)
    X = D.atoms @ Z + spec.sigma * rng.standard_normal((spec.m, spec.n))
    labels = act[0] if spec.k_active else np.full(spec.n, -1)
    return ProblemInstance(X, D, gs, exact_codes=Z, labels=labels), D
