"""Classification protocols built on sparse codes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Dictionary, GroupStructure, eval_objective_batch
from ..network import EncoderParams, forward_batch
from ..solvers import EXACT, SolverConfig, solve_batch


@dataclass(frozen=True, eq=False)
class ExactCoder:
    """Exact solver used wherever an encoder is accepted."""

    dictionary: Dictionary
    structure: GroupStructure
    cfg: SolverConfig = EXACT

    def encode(self, X) -> np.ndarray:
        return solve_batch(X, self.dictionary, self.structure, self.cfg)


def encode(model, X) -> np.ndarray:
    """Codes ``p x N`` from an :class:`EncoderParams` or an :class:`ExactCoder`."""
    X = np.asarray(X, dtype=np.float64)
    if isinstance(model, EncoderParams):
        return forward_batch(model, X)
    if isinstance(model, ExactCoder):
        return model.encode(X)
    raise TypeError(f"cannot encode with {type(model).__name__}")


@dataclass(frozen=True, eq=False)
class ClassModel:
    """One class for min-objective classification.

    ``encoder`` is None for exact Lasso codes under ``dictionary``.
    """

    dictionary: Dictionary
    lam: float
    encoder: EncoderParams | None = None

    def coder(self):
        if self.encoder is not None:
            return self.encoder
        return ExactCoder(self.dictionary, GroupStructure.singletons(self.dictionary.p, self.lam))


def class_objectives(models, X) -> np.ndarray:
    """Lasso objective of every sample under every class model, ``K x N``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 1 and models and X.shape[1] == models[0].dictionary.m:
        X = X.T
    rows = []
    for cm in models:
        gs = GroupStructure.singletons(cm.dictionary.p, cm.lam)
        Z = encode(cm.coder(), X)
        rows.append(eval_objective_batch(X, Z, cm.dictionary, gs))
    return np.array(rows)


def classify_min_objective(models, X) -> np.ndarray | int:
    """Label of the class whose model attains the smallest Lasso objective.

    Ties go to the lowest class index. A single signal returns an int, a
    matrix of column signals returns an array of labels.
    """
    if len(models) < 2:
        raise ValueError("min-objective classification needs at least two classes")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    F = class_objectives(models, X[:, None] if single else X)
    labels = np.argmin(F, axis=0)  # first minimum on ties
    return int(labels[0]) if single else labels


def group_energies(Z, gs: GroupStructure, pool: int) -> np.ndarray:
    """Squared group norms summed over consecutive spans of ``pool`` frames, ``|P| x spans``."""
    Z = np.asarray(Z, dtype=np.float64)
    N = Z.shape[1]
    if pool < 1 or N < pool:
        raise ValueError(f"need 1 <= pool <= N, got pool={pool}, N={N}")
    E = gs.group_norms(Z) ** 2
    spans = N // pool
    return E[:, : spans * pool].reshape(gs.n_groups, spans, pool).sum(axis=2)


def top_groups(E, top_k: int) -> list[frozenset[int]]:
    """Indices of the ``top_k`` largest energies per column (lowest index on ties)."""
    E = np.asarray(E)
    if not 1 <= top_k <= E.shape[0]:
        raise ValueError(f"top_k must lie in [1, {E.shape[0]}]")
    order = np.argsort(-E, axis=0, kind="stable")[:top_k]
    return [frozenset(int(g) for g in order[:, n]) for n in range(E.shape[1])]


def classify_group_energy(model, X, structure: GroupStructure, pool: int,
                          top_k: int) -> list[frozenset[int]]:
    """Detect the active groups of each span of ``pool`` ordered frames.

    Frames beyond the last full span are ignored.
    """
    return top_groups(group_energies(encode(model, X), structure, pool), top_k)


def detection_accuracy(found, truth) -> float:
    """Fraction of spans whose detected group set equals the true one."""
    truth = [frozenset(int(g) for g in t) for t in truth]
    if len(found) != len(truth):
        raise ValueError("detected and true span counts differ")
    return float(np.mean([f == t for f, t in zip(found, truth)])) if truth else float("nan")
