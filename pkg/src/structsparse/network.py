"""Unrolled block-coordinate encoders.

An encoder with ``T`` layers runs ``T`` fixed iterations of the greedy
block-coordinate method with learnable ``W``, ``S`` and thresholds, followed by
a final prox as the output stage. Initialized from a dictionary it reproduces
the solver exactly; training then moves it away from the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .core import Dictionary, GroupStructure, NonFiniteError, _atoms, step_scale
from .prox import ThresholdPair

Tying = Literal["tied", "untied"]


@dataclass(frozen=True, eq=False)
class EncoderParams:
    """Network parameters.

    ``S`` has shape ``(L, p, p)`` and the thresholds ``t`` ``(L, p)`` and ``s``
    ``(L, |P|)``, with ``L = 1`` when tied and ``L = T`` when untied. ``W`` is
    always shared since it only feeds the input stage.
    """

    W: np.ndarray
    S: np.ndarray
    t: np.ndarray
    s: np.ndarray
    T: int
    tying: Tying
    structure: GroupStructure
    alpha_init: float = 1.0
    _WT: np.ndarray = field(init=False, repr=False)
    _STs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._validate(check_thresholds=True)

    def _validate(self, check_thresholds: bool):
        if self.T < 1:
            raise ValueError("an encoder needs at least one layer (T >= 1)")
        if self.tying not in ("tied", "untied"):
            raise ValueError(f"tying must be 'tied' or 'untied', got {self.tying!r}")
        gs = self.structure
        p, P = gs.p, gs.n_groups
        L = 1 if self.tying == "tied" else self.T
        W = np.array(self.W, dtype=np.float64)
        S = np.array(self.S, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64)
        s = np.array(self.s, dtype=np.float64)
        if S.ndim == 2:
            S = S[None]
        if t.ndim == 1:
            t = t[None]
        if s.ndim == 1:
            s = s[None]
        if W.ndim != 2 or W.shape[0] != p:
            raise ValueError(f"W must be p x m with p={p}, got {W.shape}")
        if S.shape != (L, p, p) or t.shape != (L, p) or s.shape != (L, P):
            raise ValueError(
                f"expected S {(L, p, p)}, t {(L, p)}, s {(L, P)}; "
                f"got {S.shape}, {t.shape}, {s.shape}"
            )
        if check_thresholds and (np.any(t < 0) or np.any(s < 0)):
            raise ValueError("thresholds must be nonnegative")
        for name, a in (("W", W), ("S", S), ("t", t), ("s", s)):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} contains non-finite entries")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        WT = np.ascontiguousarray(W.T)
        STs = np.ascontiguousarray(S.transpose(0, 2, 1))
        object.__setattr__(self, "_WT", WT)
        object.__setattr__(self, "_STs", STs)

    @classmethod
    def unchecked(cls, W, S, t, s, T, tying, structure, alpha_init=1.0) -> "EncoderParams":
        """Build without the nonnegativity check (finite differences probe s, t < 0)."""
        obj = object.__new__(cls)
        for k, v in dict(W=W, S=S, t=t, s=s, T=T, tying=tying, structure=structure,
                         alpha_init=alpha_init).items():
            object.__setattr__(obj, k, v)
        obj._validate(check_thresholds=False)
        return obj

    @property
    def m(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def n_copies(self) -> int:
        return self.S.shape[0]

    @property
    def layer_of(self) -> np.ndarray:
        if self.tying == "tied":
            return np.zeros(self.T, dtype=np.int64)
        return np.arange(self.T, dtype=np.int64)

    def thresholds(self, layer: int) -> ThresholdPair:
        l = self.layer_of[layer]
        return ThresholdPair(self.t[l], self.s[l])

    def replace(self, **changes) -> "EncoderParams":
        fields = dict(W=self.W, S=self.S, t=self.t, s=self.s, T=self.T, tying=self.tying,
                      structure=self.structure, alpha_init=self.alpha_init)
        fields.update(changes)
        return EncoderParams(**fields)


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    """Per-layer state kept for the backward pass."""

    x: np.ndarray
    b_pre: np.ndarray  # T x p, input of each layer's prox
    y: np.ndarray  # T x p
    e: np.ndarray  # T x p
    g: np.ndarray  # T, selected group per layer
    b_final: np.ndarray


def init_from_dictionary(D, gs: GroupStructure, lam=None, mu=None, T: int = 1,
                         tying: Tying = "tied", alpha: float | None = None) -> EncoderParams:
    """Parameters that make the encoder equal to ``T`` solver iterations.

    ``alpha`` defaults to the per-group Lipschitz bound; pass ``alpha=1`` with
    singleton groups and ``mu = 0`` for the coordinate-descent architecture.
    """
    if T < 1:
        raise ValueError("an encoder needs at least one layer (T >= 1)")
    A = _atoms(D if isinstance(D, Dictionary) else Dictionary(D))
    if gs.p != A.shape[1]:
        raise ValueError(f"structure has p={gs.p} but dictionary has p={A.shape[1]}")
    gs = gs.with_weights(lam=lam, mu=mu)
    if alpha is None:
        alpha = step_scale(A, gs, "per_group_bound").alpha
    L = 1 if tying == "tied" else T
    p = A.shape[1]
    S = np.eye(p) - (A.T @ A) / alpha
    W = A.T / alpha
    t = gs.lam / alpha
    s = gs.mu / alpha
    return EncoderParams(
        W, np.repeat(S[None], L, axis=0), np.repeat(t[None], L, axis=0),
        np.repeat(s[None], L, axis=0), T, tying, gs, float(alpha),
    )


def _run(params: EncoderParams, X_rows: np.ndarray, want_trace: bool):
    ptr, idx = params.structure.csr()
    return _kernels.encoder_forward(
        params._WT, params._STs, params.t, params.s, params.layer_of,
        ptr, idx, X_rows, want_trace,
    )


def _rows(X, m):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != m:
        raise ValueError(f"input must be an m x N matrix with m={m}, got shape {X.shape}")
    return np.ascontiguousarray(X.T)


def _diagnose(params, X_rows, Z):
    bad = np.flatnonzero(~np.all(np.isfinite(Z), axis=1))
    n = int(bad[0])
    _, tb, ty, _, _, tbf = _run(params, X_rows[n:n + 1], True)
    for k in range(params.T):
        if not (np.all(np.isfinite(tb[0, k])) and np.all(np.isfinite(ty[0, k]))):
            raise NonFiniteError(f"non-finite values in sample {n} at layer {k + 1}")
    raise NonFiniteError(f"non-finite values in sample {n} at the output stage")


def forward(params: EncoderParams, x, want_trace: bool = False):
    """Encode one signal. Returns ``(z, trace)``; ``trace`` is None unless requested."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.m,):
        raise ValueError(f"signal has shape {x.shape}, expected ({params.m},)")
    X_rows = x[None, :].copy()
    Z, tb, ty, te, tg, tbf = _run(params, X_rows, want_trace)
    if not np.all(np.isfinite(Z)):
        _diagnose(params, X_rows, Z)
    trace = ForwardTrace(x.copy(), tb[0], ty[0], te[0], tg[0], tbf[0]) if want_trace else None
    return Z[0], trace


def forward_batch(params: EncoderParams, X) -> np.ndarray:
    """Encode every column of ``X``; column results equal per-sample calls bit-for-bit."""
    X_rows = _rows(X, params.m)
    Z = _run(params, X_rows, False)[0]
    if not np.all(np.isfinite(Z)):
        _diagnose(params, X_rows, Z)
    return Z.T.copy()


def forward_batch_traced(params: EncoderParams, X):
    """Codes (``N x p``, rows) plus the raw per-sample trace arrays."""
    X_rows = _rows(X, params.m)
    Z, tb, ty, te, tg, tbf = _run(params, X_rows, True)
    if not np.all(np.isfinite(Z)):
        _diagnose(params, X_rows, Z)
    return X_rows, Z, (tb, ty, te, tg, tbf)
