"""Domain types and objective evaluation for two-level structured sparse coding.

The coding problem solved throughout the package is

.. math::

    \\min_z \\; \\tfrac12 \\|x - Dz\\|_2^2
        + \\sum_j \\lambda_j |z_j| + \\sum_r \\mu_r \\|z_r\\|_2

where the groups ``r`` form a partition of the code indices. With all
``mu_r = 0`` and a constant ``lambda`` this is the Lasso.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

POWER_ITER_MAX = 50_000
POWER_ITER_TOL = 1e-10
LIPSCHITZ_INFLATION = 1.0001
NORMALIZED_ATOL = 1e-12


class NonFiniteError(FloatingPointError):
    """Raised when an iteration produces NaN or infinite values."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _as_float_array(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Dictionary:
    """An ``m x p`` dictionary whose columns are the atoms."""

    atoms: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        atoms = _as_float_array(self.atoms, 2, "atoms")
        norms = np.linalg.norm(atoms, axis=0)
        if atoms.shape[1] == 0 or np.any(norms <= 0):
            bad = np.flatnonzero(norms <= 0)
            raise ValueError(f"dictionary has zero-norm atoms at columns {bad.tolist()}")
        if self.normalized and np.any(np.abs(norms - 1.0) > NORMALIZED_ATOL):
            raise ValueError("dictionary flagged normalized but atom norms deviate from 1")
        object.__setattr__(self, "atoms", _frozen(atoms))

    @classmethod
    def normalize(cls, atoms) -> "Dictionary":
        """Build a dictionary with every column rescaled to unit norm."""
        a = _as_float_array(atoms, 2, "atoms")
        norms = np.linalg.norm(a, axis=0)
        if np.any(norms <= 0):
            raise ValueError("cannot normalize a zero-norm atom")
        a = a / norms
        # second pass pins norms to 1 within rounding
        a = a / np.linalg.norm(a, axis=0)
        return cls(a, normalized=True)

    @property
    def m(self) -> int:
        return self.atoms.shape[0]

    @property
    def p(self) -> int:
        return self.atoms.shape[1]

    def submatrix(self, idx) -> np.ndarray:
        return self.atoms[:, np.asarray(idx)]


@dataclass(frozen=True, eq=False)
class GroupStructure:
    """A partition of ``{0..p-1}`` with per-coefficient and per-group weights.

    ``lam`` holds the coefficient weights (length ``p``) and ``mu`` the group
    weights (one per group). Signed ``mu`` is only accepted with
    ``allow_signed_mu=True``; coding and solver paths require ``mu >= 0``.
    """

    groups: tuple
    lam: np.ndarray
    mu: np.ndarray
    allow_signed_mu: bool = False
    labels: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        groups = tuple(_frozen(np.array(g, dtype=np.int64).reshape(-1)) for g in self.groups)
        if not groups or any(g.size == 0 for g in groups):
            raise ValueError("group structure needs at least one group and no empty groups")
        allidx = np.concatenate(groups)
        p = allidx.size
        if np.any(allidx < 0) or np.any(allidx >= p) or np.unique(allidx).size != p:
            raise ValueError("groups must be disjoint and cover exactly {0..p-1}")
        lam = np.array(self.lam, dtype=np.float64).reshape(-1)
        if lam.size == 1 and p != 1:
            lam = np.full(p, lam[0])
        mu = np.array(self.mu, dtype=np.float64).reshape(-1)
        if mu.size == 1 and len(groups) != 1:
            mu = np.full(len(groups), mu[0])
        if lam.shape != (p,):
            raise ValueError(f"lambda must have length p={p}, got {lam.size}")
        if mu.shape != (len(groups),):
            raise ValueError(f"mu must have one entry per group ({len(groups)}), got {mu.size}")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(mu))):
            raise ValueError("weights must be finite")
        if np.any(lam < 0):
            raise ValueError("lambda entries must be nonnegative")
        if not self.allow_signed_mu and np.any(mu < 0):
            raise ValueError("mu entries must be nonnegative in coding contexts")
        labels = np.empty(p, dtype=np.int64)
        for r, g in enumerate(groups):
            labels[g] = r
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "lam", _frozen(lam))
        object.__setattr__(self, "mu", _frozen(mu))
        object.__setattr__(self, "labels", _frozen(labels))

    @classmethod
    def singletons(cls, p: int, lam=0.0) -> "GroupStructure":
        return cls(tuple([j] for j in range(p)), lam, 0.0)

    @classmethod
    def contiguous(cls, sizes: Sequence[int], lam=0.0, mu=0.0) -> "GroupStructure":
        """Consecutive index blocks of the given sizes."""
        bounds = np.cumsum([0, *sizes])
        groups = tuple(range(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]))
        return cls(groups, lam, mu)

    @property
    def p(self) -> int:
        return self.labels.size

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def with_weights(self, lam=None, mu=None, allow_signed_mu=None) -> "GroupStructure":
        return GroupStructure(
            self.groups,
            self.lam if lam is None else lam,
            self.mu if mu is None else mu,
            self.allow_signed_mu if allow_signed_mu is None else allow_signed_mu,
        )

    def group_norms(self, z: np.ndarray) -> np.ndarray:
        """Euclidean norm of each group of ``z`` (works column-wise on p x N)."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            return np.sqrt(np.bincount(self.labels, weights=z * z, minlength=self.n_groups))
        sq = np.zeros((self.n_groups, z.shape[1]))
        np.add.at(sq, self.labels, z * z)
        return np.sqrt(sq)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(ptr, idx)`` arrays: group r is ``idx[ptr[r]:ptr[r+1]]``."""
        ptr = np.zeros(self.n_groups + 1, dtype=np.int64)
        ptr[1:] = np.cumsum([g.size for g in self.groups])
        return ptr, np.concatenate(self.groups)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.p).tobytes())
        for g in self.groups:
            h.update(np.int64(g.size).tobytes())
            h.update(g.astype("<i8").tobytes())
        h.update(self.lam.astype("<f8").tobytes())
        h.update(self.mu.astype("<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class SparseCode:
    """A code vector bound to the group structure that gives it group views."""

    z: np.ndarray
    structure: GroupStructure

    def __post_init__(self):
        z = _as_float_array(self.z, 1, "code")
        if z.size != self.structure.p:
            raise ValueError(f"code length {z.size} does not match p={self.structure.p}")
        object.__setattr__(self, "z", _frozen(z))

    def group(self, r: int) -> np.ndarray:
        return self.z[self.structure.groups[r]]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.z, dtype=dtype)


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A batch of samples (columns of ``data``) bound to a model."""

    data: np.ndarray
    dictionary: Dictionary
    structure: GroupStructure
    exact_codes: np.ndarray | None = None
    labels: np.ndarray | None = None
    per_sample_mu: np.ndarray | None = None

    def __post_init__(self):
        X = _as_float_array(self.data, 2, "data")
        D, gs = self.dictionary, self.structure
        if X.shape[0] != D.m:
            raise ValueError(f"data has {X.shape[0]} rows but dictionary has m={D.m}")
        if gs.p != D.p:
            raise ValueError(f"structure has p={gs.p} but dictionary has p={D.p}")
        n = X.shape[1]
        object.__setattr__(self, "data", _frozen(X))
        if self.exact_codes is not None:
            Z = _as_float_array(self.exact_codes, 2, "exact_codes")
            if Z.shape != (D.p, n):
                raise ValueError(f"exact_codes must have shape {(D.p, n)}, got {Z.shape}")
            object.__setattr__(self, "exact_codes", _frozen(Z))
        if self.labels is not None:
            y = np.array(self.labels, dtype=np.int64).reshape(-1)
            if y.size != n:
                raise ValueError(f"labels must have length {n}")
            object.__setattr__(self, "labels", _frozen(y))
        if self.per_sample_mu is not None:
            M = _as_float_array(self.per_sample_mu, 2, "per_sample_mu")
            if M.shape != (gs.n_groups, n):
                raise ValueError(f"per_sample_mu must have shape {(gs.n_groups, n)}")
            object.__setattr__(self, "per_sample_mu", _frozen(M))

    @property
    def n(self) -> int:
        return self.data.shape[1]

    def subset(self, cols) -> "ProblemInstance":
        cols = np.asarray(cols)
        pick = lambda a, ax=1: None if a is None else np.take(a, cols, axis=ax)  # noqa: E731
        return ProblemInstance(
            self.data[:, cols],
            self.dictionary,
            self.structure,
            pick(self.exact_codes),
            pick(self.labels, 0),
            pick(self.per_sample_mu),
        )


@dataclass(frozen=True)
class StepScale:
    alpha: float
    mode: Literal["global", "per_group_bound"]

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")


def _atoms(D) -> np.ndarray:
    return D.atoms if isinstance(D, Dictionary) else np.asarray(D, dtype=np.float64)


def eval_objective(x, z, D, gs: GroupStructure) -> float:
    """Objective value ``1/2||x - Dz||^2 + sum lam_j|z_j| + sum mu_r ||z_r||``."""
    A = _atoms(D)
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != (A.shape[0],):
        raise ValueError(f"signal has shape {x.shape}, expected ({A.shape[0]},)")
    if z.shape != (A.shape[1],) or gs.p != A.shape[1]:
        raise ValueError(f"code has shape {z.shape}, expected ({A.shape[1]},) matching the structure")
    r = x - A @ z
    return float(0.5 * (r @ r) + gs.lam @ np.abs(z) + gs.mu @ gs.group_norms(z))


def eval_objective_batch(X, Z, D, gs: GroupStructure, mu=None) -> np.ndarray:
    """Per-column objective values. ``mu`` may be a ``|P| x N`` matrix of signed weights."""
    A = _atoms(D)
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.ndim != 2 or Z.ndim != 2 or X.shape[0] != A.shape[0] or Z.shape[0] != A.shape[1] \
            or X.shape[1] != Z.shape[1]:
        raise ValueError(f"inconsistent shapes: data {X.shape}, codes {Z.shape}, dictionary {A.shape}")
    R = X - A @ Z
    gn = gs.group_norms(Z)
    if mu is None:
        group_term = gs.mu @ gn
    else:
        group_term = np.sum(np.asarray(mu) * gn, axis=0)
    return 0.5 * np.sum(R * R, axis=0) + gs.lam @ np.abs(Z) + group_term


def spectral_norm_sq(A, seed: int = 0, tol: float = POWER_ITER_TOL,
                     max_iter: int = POWER_ITER_MAX) -> float:
    """Largest eigenvalue of ``A.T @ A`` by power iteration."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[1]
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    # the Rayleigh quotient at the final vector is the sharper estimate
    Av = A @ v
    return float(max(lam, Av @ Av))


def step_scale(D, gs: GroupStructure | None = None,
               mode: Literal["global", "per_group_bound"] = "global") -> StepScale:
    """Lipschitz bound ``alpha`` used to scale gradient steps.

    ``global`` is the squared spectral norm of ``D``; ``per_group_bound`` is the
    maximum over groups of the squared spectral norm of the group's columns.
    Both are inflated by a small safety factor against power-iteration truncation.
    """
    A = _atoms(D)
    if mode == "global":
        val = spectral_norm_sq(A)
    elif mode == "per_group_bound":
        if gs is None:
            raise ValueError("per_group_bound needs a group structure")
        if gs.p != A.shape[1]:
            raise ValueError(f"structure has p={gs.p} but dictionary has p={A.shape[1]}")
        val = max(spectral_norm_sq(A[:, g]) for g in gs.groups)
    else:
        raise ValueError(f"unknown step scale mode {mode!r}")
    if not np.isfinite(val) or val <= 0:
        raise ValueError("dictionary has zero spectral norm")
    return StepScale(LIPSCHITZ_INFLATION * val, mode)
