"""Training losses, backpropagation through the unrolled layers, and descent."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import _kernels
from .core import Dictionary, GroupStructure, NonFiniteError, ProblemInstance, _atoms
from .network import EncoderParams, ForwardTrace, forward, forward_batch, forward_batch_traced

LossKind = Literal["regression", "objective", "discriminative"]
PARAM_NAMES = ("W", "S", "t", "s")


@dataclass(frozen=True)
class LossSpec:
    """Which training loss to use.

    ``lam``/``mu`` override the instance structure's weights for the objective
    and discriminative losses. The discriminative loss takes its signed group
    weights from ``instance.per_sample_mu``.
    """

    kind: LossKind = "objective"
    lam: np.ndarray | float | None = None
    mu: np.ndarray | float | None = None

    def check(self, instance: ProblemInstance) -> None:
        if self.kind not in ("regression", "objective", "discriminative"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind == "regression" and instance.exact_codes is None:
            raise ValueError("regression loss needs exact codes on the instance")
        if self.kind == "discriminative" and instance.per_sample_mu is None:
            raise ValueError("discriminative loss needs per_sample_mu on the instance")

    def weights(self, gs: GroupStructure):
        lam = gs.lam if self.lam is None else np.broadcast_to(np.asarray(self.lam, float), (gs.p,))
        mu = gs.mu if self.mu is None else np.broadcast_to(np.asarray(self.mu, float), (gs.n_groups,))
        return lam, mu


@dataclass
class Gradients:
    dW: np.ndarray
    dS: np.ndarray
    dt: np.ndarray
    ds: np.ndarray
    dD: np.ndarray | None = None

    def items(self):
        return [(k, getattr(self, "d" + k)) for k in PARAM_NAMES]


@dataclass(frozen=True)
class DescentConfig:
    initial_step: float = 1.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 30
    epochs: int = 10
    batch_size: int | None = None  # None means full batch
    seed: int = 0
    # when set, each step starts from min(initial_step, growth * last accepted step)
    step_growth: float | None = None

    def __post_init__(self):
        if self.initial_step < 0:
            raise ValueError("initial_step must be >= 0")
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack < 1:
            raise ValueError("armijo_c and backtrack must lie in (0, 1)")
        if self.max_backtracks < 0 or self.epochs < 0:
            raise ValueError("max_backtracks and epochs must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.step_growth is not None and self.step_growth <= 0:
            raise ValueError("step_growth must be positive")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    accepted_steps: list[float] = field(default_factory=list)
    skipped: int = 0
    status: str = "ok"


# ---------------------------------------------------------------- losses


def _code_loss(kind: LossKind, Z, X, A, gs, lam, mu, Zstar=None, mu_cols=None):
    """Per-sample losses and ``dloss/dz`` for codes ``Z`` (samples as rows)."""
    labels = gs.labels
    if kind == "regression":
        d = Z - Zstar
        return 0.5 * np.sum(d * d, axis=1), d
    R = Z @ A.T - X
    sq = np.zeros((Z.shape[0], gs.n_groups))
    np.add.at(sq.T, labels, (Z * Z).T)
    gn = np.sqrt(sq)
    mus = mu[None, :] if mu_cols is None else mu_cols
    loss = 0.5 * np.sum(R * R, axis=1) + np.abs(Z) @ lam + np.sum(mus * gn, axis=1)
    safe = np.where(gn > 0, gn, 1.0)
    gfac = np.where(gn > 0, mus / safe, 0.0)
    U = R @ A + lam[None, :] * np.sign(Z) + Z * gfac[:, labels]
    return loss, U


def _instance_terms(instance: ProblemInstance, spec: LossSpec, cols=None):
    gs = instance.structure
    lam, mu = spec.weights(gs)
    Zstar = mu_cols = None
    if spec.kind == "regression":
        Zstar = instance.exact_codes.T if cols is None else instance.exact_codes[:, cols].T
    if spec.kind == "discriminative":
        M = instance.per_sample_mu
        mu_cols = (M if cols is None else M[:, cols]).T
    return lam, mu, Zstar, mu_cols


def evaluate_loss(params: EncoderParams, instance: ProblemInstance, spec: LossSpec,
                  dictionary=None) -> float:
    spec.check(instance)
    A = _atoms(instance.dictionary if dictionary is None else dictionary)
    Z = forward_batch(params, instance.data).T
    lam, mu, Zstar, mu_cols = _instance_terms(instance, spec)
    loss, _ = _code_loss(spec.kind, Z, instance.data.T, A, instance.structure, lam, mu,
                         Zstar, mu_cols)
    return float(np.mean(loss))


def loss_regression(params: EncoderParams, instance: ProblemInstance) -> float:
    """Mean of ``1/2 ||z*_n - h(x_n)||^2``."""
    return evaluate_loss(params, instance, LossSpec("regression"))


def loss_objective(params: EncoderParams, instance: ProblemInstance, lam=None, mu=None) -> float:
    """Mean structured objective of the encoder outputs."""
    return evaluate_loss(params, instance, LossSpec("objective", lam, mu))


def loss_discriminative(params: EncoderParams, instance: ProblemInstance, lam=None) -> float:
    """Mean objective with the instance's signed per-sample group weights."""
    return evaluate_loss(params, instance, LossSpec("discriminative", lam))


# ---------------------------------------------------------------- gradients


def _backward_rows(params: EncoderParams, X_rows, trace, U, want_dx=False):
    tb, _, te, tg, tbf = trace
    ptr, idx = params.structure.csr()
    return _kernels.encoder_backward(
        params._WT, params._STs, params.t, params.s, params.layer_of, ptr, idx,
        X_rows, tb, te, tg, tbf, np.ascontiguousarray(U), want_dx,
    )


def backward(params: EncoderParams, trace: ForwardTrace, upstream) -> Gradients:
    """Gradients of a scalar loss wrt the parameters, given ``dloss/dz`` at the output.

    The selected group of every layer is held fixed (the selection is piecewise
    constant in the parameters).
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if trace.b_pre.shape != (params.T, params.p) or trace.x.shape != (params.m,):
        raise ValueError("trace does not match the parameters (layer count or sizes differ)")
    if upstream.shape != (params.p,):
        raise ValueError(f"upstream gradient must have length p={params.p}")
    raw = (trace.b_pre[None], trace.y[None], trace.e[None], trace.g[None], trace.b_final[None])
    dW, dS, dt, ds, _ = _backward_rows(params, trace.x[None, :], raw, upstream[None, :])
    return Gradients(dW, dS, dt, ds)


def input_gradient(params: EncoderParams, X, upstream) -> np.ndarray:
    """``dloss/dx`` for each column of ``X`` given ``dloss/dz`` columns."""
    X_rows, _, trace = forward_batch_traced(params, X)
    return _backward_rows(params, X_rows, trace, np.asarray(upstream).T, True)[4].T


def dictionary_gradient(grads: Gradients, A, alpha: float) -> np.ndarray:
    """Chain ``dS`` and ``dW`` into the dictionary via ``S = I - A'A/alpha``, ``W = A'/alpha``."""
    dS = grads.dS.sum(axis=0)
    return (-(A @ (dS + dS.T)) + grads.dW.T) / alpha


def loss_and_grad(params: EncoderParams, instance: ProblemInstance, spec: LossSpec,
                  cols=None, dictionary=None, want_dD: bool = False):
    """Mean loss over ``cols`` (all samples by default) and its gradient."""
    A = _atoms(instance.dictionary if dictionary is None else dictionary)
    X = instance.data if cols is None else instance.data[:, cols]
    X_rows, Z, trace = forward_batch_traced(params, X)
    lam, mu, Zstar, mu_cols = _instance_terms(instance, spec, cols)
    loss, U = _code_loss(spec.kind, Z, X_rows, A, instance.structure, lam, mu, Zstar, mu_cols)
    n = X_rows.shape[0]
    dW, dS, dt, ds, _ = _backward_rows(params, X_rows, trace, U / n)
    grads = Gradients(dW, dS, dt, ds)
    if want_dD:
        grads.dD = dictionary_gradient(grads, A, params.alpha_init)
        if spec.kind != "regression":
            grads.dD += (Z @ A.T - X_rows).T @ Z / n
    return float(np.mean(loss)), grads


def finite_diff_grad(loss: Callable[[EncoderParams], float], params: EncoderParams,
                     h: float = 1e-5) -> Gradients:
    """Central differences, one scalar parameter at a time."""
    if not h > 0:
        raise ValueError("h must be positive")
    base = {k: np.array(getattr(params, k)) for k in PARAM_NAMES}
    out = {}
    for name in PARAM_NAMES:
        g = np.zeros_like(base[name])
        for i in np.ndindex(base[name].shape):
            vals = []
            for sgn in (1.0, -1.0):
                arrs = {k: v.copy() for k, v in base.items()}
                arrs[name][i] += sgn * h
                p2 = EncoderParams.unchecked(arrs["W"], arrs["S"], arrs["t"], arrs["s"],
                                             params.T, params.tying, params.structure,
                                             params.alpha_init)
                vals.append(loss(p2))
            g[i] = (vals[0] - vals[1]) / (2 * h)
        out[name] = g
    return Gradients(out["W"], out["S"], out["t"], out["s"])


# ---------------------------------------------------------------- descent


class _Free:
    """Parameters ``(W, S, t, s)`` trained directly."""

    def __init__(self, params: EncoderParams, frozen):
        self.template = params
        self.shapes = [getattr(params, k).shape for k in PARAM_NAMES]
        self.mask = np.concatenate([
            np.full(int(np.prod(sh)), k not in frozen, dtype=bool)
            for k, sh in zip(PARAM_NAMES, self.shapes)
        ])
        self.thr = np.concatenate([
            np.full(int(np.prod(sh)), k in ("t", "s"), dtype=bool)
            for k, sh in zip(PARAM_NAMES, self.shapes)
        ])

    def pack(self, params: EncoderParams):
        return np.concatenate([getattr(params, k).ravel() for k in PARAM_NAMES])

    def unpack(self, theta):
        parts, o = {}, 0
        for k, sh in zip(PARAM_NAMES, self.shapes):
            n = int(np.prod(sh))
            parts[k] = theta[o:o + n].reshape(sh)
            o += n
        return self.template.replace(**parts), None

    def project(self, theta):
        theta = theta.copy()
        theta[self.thr] = np.maximum(theta[self.thr], 0.0)
        return theta

    def grad_vector(self, grads: Gradients):
        return np.concatenate([g.ravel() for _, g in grads.items()]) * self.mask

    want_dD = False


class _TiedToDictionary:
    """Variables ``(D, t, s)``; ``S`` and ``W`` follow ``D`` with ``alpha`` held fixed."""

    want_dD = True

    def __init__(self, params: EncoderParams, D: Dictionary, frozen):
        self.template = params
        self.alpha = params.alpha_init
        self.m, self.p = D.m, D.p
        self.nt, self.ns = params.t.size, params.s.size
        self.mask = np.concatenate([
            np.full(D.p * D.m, "D" not in frozen),
            np.full(self.nt, "t" not in frozen),
            np.full(self.ns, "s" not in frozen),
        ])
        self.nD = D.p * D.m

    def pack(self, params: EncoderParams, D: Dictionary):
        return np.concatenate([D.atoms.ravel(), params.t.ravel(), params.s.ravel()])

    def unpack(self, theta):
        A = theta[: self.nD].reshape(self.m, self.p)
        t = theta[self.nD: self.nD + self.nt].reshape(self.template.t.shape)
        s = theta[self.nD + self.nt:].reshape(self.template.s.shape)
        L = self.template.n_copies
        S = np.eye(self.p) - (A.T @ A) / self.alpha
        params = self.template.replace(
            W=A.T / self.alpha, S=np.repeat(S[None], L, axis=0), t=t, s=s)
        return params, Dictionary(A)

    def project(self, theta):
        theta = theta.copy()
        A = theta[: self.nD].reshape(self.m, self.p)
        A /= np.maximum(1.0, np.linalg.norm(A, axis=0))
        theta[self.nD:] = np.maximum(theta[self.nD:], 0.0)
        return theta

    def grad_vector(self, grads: Gradients):
        return np.concatenate([grads.dD.ravel(), grads.dt.ravel(), grads.ds.ravel()]) * self.mask


def train(params: EncoderParams, instance: ProblemInstance, loss_spec: LossSpec,
          cfg: DescentConfig = DescentConfig(), frozen=(), adapt_dictionary: bool = False):
    """Mini-batch gradient descent with Armijo backtracking.

    A step from ``theta`` to ``theta' = proj(theta - step * grad)`` is accepted when
    ``loss(theta') <= loss(theta) - c * ||theta' - theta||^2 / step`` (without
    projection this is the usual ``c * step * ||grad||^2``). After
    ``max_backtracks`` failed halvings the step is skipped.

    With ``adapt_dictionary`` the dictionary becomes a variable as well and
    ``S``, ``W`` are tied to it; the result is then ``(params, history, D)``.
    Parameter names listed in ``frozen`` are left untouched.

    Returns ``(params, history)`` where ``history.epoch_loss[0]`` is the loss
    before training. A non-finite loss stops training and returns the last
    good parameters with ``history.status = "diverged"``.
    """
    loss_spec.check(instance)
    n = instance.n
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    if adapt_dictionary:
        space = _TiedToDictionary(params, instance.dictionary, frozen)
        theta = space.pack(params, instance.dictionary)
    else:
        space = _Free(params, frozen)
        theta = space.pack(params)

    def full_loss(th):
        p_, D_ = space.unpack(th)
        return evaluate_loss(p_, instance, loss_spec, D_)

    def batch_loss(th, cols):
        p_, D_ = space.unpack(th)
        try:
            return loss_and_grad(p_, instance, loss_spec, cols, D_, space.want_dD)
        except NonFiniteError:
            return np.inf, None

    def finish(th, hist):
        p_, D_ = space.unpack(th)
        return (p_, hist, D_) if adapt_dictionary else (p_, hist)

    hist = TrainHistory()
    rng = np.random.default_rng(cfg.seed)
    current = full_loss(theta)
    hist.epoch_loss.append(current)
    if not np.isfinite(current):
        hist.status = "diverged"
        return finish(theta, hist)
    last_step = cfg.initial_step
    for _ in range(cfg.epochs):
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            cols = None if bs == n else np.sort(order[start:start + bs])
            f0, grads = batch_loss(theta, cols)
            if not np.isfinite(f0):
                hist.status = "diverged"
                return finish(theta, hist)
            g = space.grad_vector(grads)
            step = cfg.initial_step
            if cfg.step_growth is not None:
                step = min(step, last_step * cfg.step_growth)
            accepted = False
            for _ in range(cfg.max_backtracks + 1):
                cand = space.project(theta - step * g)
                dist = cand - theta
                try:
                    f1 = _eval_cols(space, cand, instance, loss_spec, cols)
                except NonFiniteError:
                    f1 = np.inf
                decrease = (dist @ dist) / step if step > 0 else 0.0
                if np.isfinite(f1) and f1 <= f0 - cfg.armijo_c * decrease:
                    accepted = True
                    break
                step *= cfg.backtrack
            if accepted:
                theta = cand
                last_step = step
                hist.accepted_steps.append(step)
            else:
                hist.skipped += 1
        current = full_loss(theta)
        if not np.isfinite(current):
            hist.status = "diverged"
            return finish(theta, hist)
        hist.epoch_loss.append(current)
    return finish(theta, hist)


def _eval_cols(space, theta, instance, spec, cols):
    p_, D_ = space.unpack(theta)
    sub = instance if cols is None else instance.subset(cols)
    return evaluate_loss(p_, sub, spec, D_)


# ---------------------------------------------------------------- checks

REL_ERR_FLOOR = 1e-6


def gradient_rel_error(analytic: Gradients, numeric: Gradients,
                       floor: float = REL_ERR_FLOOR) -> dict[str, float]:
    """Worst componentwise ``|a - f| / max(|a|, |f|, floor)`` per parameter."""
    out = {}
    for (name, a), (_, f) in zip(analytic.items(), numeric.items()):
        a = np.asarray(a)
        f = np.asarray(f)
        den = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        out[name] = float(np.max(np.abs(a - f) / den)) if a.size else 0.0
    return out


def kink_margin(params: EncoderParams, x) -> float:
    """Distance of ``x``'s forward pass from the nearest nondifferentiable point.

    Covers every prox input (coefficient and group thresholds) and the gap
    between the two largest group changes that decides each layer's selection.
    Finite differences with step ``h`` are valid when this is well above ``h``.
    """
    _, tr = forward(params, x, want_trace=True)
    gs = params.structure
    margins = []

    def prox_margin(b, layer):
        tp = params.thresholds(layer)
        a = np.abs(b) - tp.t
        margins.append(np.min(np.abs(a)))
        u = np.maximum(a, 0.0)
        gn = gs.group_norms(u)
        live = gn > 0  # an all-zero group stays zero until a coefficient crosses t
        if np.any(live):
            margins.append(np.min(np.abs(gn - tp.s)[live]))

    for k in range(params.T):
        prox_margin(tr.b_pre[k], k)
        en = np.sort(gs.group_norms(tr.e[k]))
        if en.size > 1:
            margins.append(en[-1] - en[-2])
    prox_margin(tr.b_final, params.T - 1)
    return float(min(margins))
