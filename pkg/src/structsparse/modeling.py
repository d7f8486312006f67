"""Online sparse modeling: windowed encoder adaptation plus dictionary updates.

No iterative sparse coding happens here. Codes for the dictionary update come
from the encoder itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np

from .core import Dictionary, GroupStructure, ProblemInstance, eval_objective_batch
from .network import EncoderParams, forward_batch, init_from_dictionary
from .training import DescentConfig, LossSpec, train

DICT_EPS = 1e-10


@dataclass
class DictStats:
    """Discounted sufficient statistics ``A = sum z z'`` and ``B = sum x z'``."""

    A: np.ndarray
    B: np.ndarray
    count: float = 0.0

    @classmethod
    def zeros(cls, m: int, p: int) -> "DictStats":
        return cls(np.zeros((p, p)), np.zeros((m, p)), 0.0)

    def accumulate(self, X, Z, forget: float = 1.0) -> "DictStats":
        """New statistics: old ones scaled by ``forget`` plus the batch ``(X, Z)``."""
        X = np.asarray(X, dtype=np.float64)
        Z = np.asarray(Z, dtype=np.float64)
        return DictStats(forget * self.A + Z @ Z.T, forget * self.B + X @ Z.T,
                         forget * self.count + X.shape[1])


def init_dictionary_from_stream(first_window, p: int, seed: int = 0) -> Dictionary:
    """``p`` distinct columns drawn without replacement, normalized to unit norm."""
    X = np.asarray(first_window, dtype=np.float64)
    K = X.shape[1]
    if K < p:
        raise ValueError(f"need at least p={p} samples to seed the dictionary, got {K}")
    usable = np.flatnonzero(np.linalg.norm(X, axis=0) > 0)
    if usable.size < p:
        raise ValueError(f"only {usable.size} nonzero samples available for p={p} atoms")
    rng = np.random.default_rng(seed)
    pick = usable[rng.choice(usable.size, size=p, replace=False)] if usable.size > p else \
        usable[rng.permutation(p)]
    return Dictionary.normalize(X[:, pick])


def dict_update(D: Dictionary, stats: DictStats) -> Dictionary:
    """One block-coordinate pass over the atoms, each projected to the unit ball."""
    A, B = stats.A, stats.B
    if stats.count <= 0:
        raise ValueError("dictionary statistics are empty")
    U = np.array(D.atoms)
    for j in range(U.shape[1]):
        if A[j, j] < DICT_EPS:
            continue
        u = U[:, j] + (B[:, j] - U @ A[:, j]) / max(A[j, j], DICT_EPS)
        nu = np.linalg.norm(u)
        if nu == 0.0:
            continue
        U[:, j] = u / max(1.0, nu)
    return Dictionary(U)


@dataclass(frozen=True)
class OnlineConfig:
    window: int = 1000
    step: int = 100
    dict_update_period: int | None = 1  # None: never update the dictionary
    forget: float = 0.99
    descent: DescentConfig = field(default_factory=lambda: DescentConfig(epochs=2, step_growth=4.0))
    param_mode: Literal["free", "dictionary"] = "free"
    seed: int = 0

    def __post_init__(self):
        if self.window < 1 or self.step < 1 or self.step > self.window:
            raise ValueError("need 1 <= step <= window")
        if self.dict_update_period is not None and self.dict_update_period < 1:
            raise ValueError("dict_update_period must be positive or None")
        if not 0 < self.forget <= 1:
            raise ValueError("forget must lie in (0, 1]")


@dataclass(frozen=True)
class WindowMetric:
    index: int
    start: int
    stop: int
    objective: float
    dict_updated: bool

    CSV_HEADER = ("window", "start", "stop", "mean_objective", "dict_updated")

    def row(self):
        return (self.index, self.start, self.stop, repr(self.objective), int(self.dict_updated))


@dataclass
class OnlineResult:
    params: EncoderParams
    dictionary: Dictionary
    metrics: list[WindowMetric]

    @property
    def objectives(self) -> np.ndarray:
        return np.array([w.objective for w in self.metrics])


def online_run(stream, p: int, lam: float = 1.0, T: int = 4,
               cfg: OnlineConfig = OnlineConfig(), structure: GroupStructure | None = None,
               on_window: Callable[[int, EncoderParams, EncoderParams], None] | None = None
               ) -> OnlineResult:
    """Slide a window over ``stream`` (``m x N``) adapting encoder and dictionary.

    For each window the encoder is trained on the window's samples against the
    coding objective (warm-started from the previous window). Every
    ``dict_update_period`` windows the encoder's codes feed the dictionary
    statistics and the dictionary is updated. The reported metric is the mean
    objective of the window's samples at the end of the window.

    Without a ``structure`` the model is the Lasso with the coordinate-descent
    architecture (singleton groups, unit step scale, group thresholds frozen).
    ``on_window(k, params_in, params_out)`` is called after each window.
    """
    X = np.asarray(stream, dtype=np.float64)
    m, N = X.shape
    if N < cfg.window:
        raise ValueError(f"stream has {N} samples, shorter than one window ({cfg.window})")
    D = init_dictionary_from_stream(X[:, : cfg.window], p, cfg.seed)
    if structure is None:
        gs = GroupStructure.singletons(p, lam)
        alpha, frozen = 1.0, ("s",)
    else:
        gs = structure
        alpha, frozen = None, ()
    params = init_from_dictionary(D, gs, T=T, alpha=alpha)
    stats = DictStats.zeros(m, p)
    metrics: list[WindowMetric] = []
    k = 0
    for start in range(0, N - cfg.window + 1, cfg.step):
        stop = start + cfg.window
        Xw = X[:, start:stop]
        inst = ProblemInstance(Xw, D, gs)
        params_in = params
        descent = replace(cfg.descent, seed=cfg.descent.seed + k)
        if cfg.param_mode == "dictionary":
            params, _, D = train(params, inst, LossSpec("objective"), descent, frozen,
                                 adapt_dictionary=True)
        else:
            params, _ = train(params, inst, LossSpec("objective"), descent, frozen)
        updated = cfg.dict_update_period is not None and (k + 1) % cfg.dict_update_period == 0
        Z = forward_batch(params, Xw)
        if updated:
            stats = stats.accumulate(Xw, Z, cfg.forget)
            D = dict_update(D, stats)
            if cfg.param_mode == "dictionary":
                fresh = init_from_dictionary(D, gs, T=T, alpha=params.alpha_init,
                                             tying=params.tying)
                params = params.replace(W=fresh.W, S=fresh.S)
                Z = forward_batch(params, Xw)
        obj = float(np.mean(eval_objective_batch(Xw, Z, D, gs)))
        metrics.append(WindowMetric(k, start, stop, obj, updated))
        if on_window is not None:
            on_window(k, params_in, params)
        k += 1
    return OnlineResult(params, D, metrics)

