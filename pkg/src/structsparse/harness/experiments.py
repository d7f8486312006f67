"""Experiment drivers.

Each driver takes a flat config (see the schemas below), fixes every seed
from it and returns an :class:`ExperimentReport`. Report tables depend only on
the config, so two runs write byte-identical CSV files; wall-clock times go to
a separate timing file.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..core import Dictionary, GroupStructure, ProblemInstance, eval_objective_batch
from ..modeling import (
    DictStats,
    OnlineConfig,
    WindowMetric,
    dict_update,
    init_dictionary_from_stream,
    online_run,
)
from ..network import forward_batch, init_from_dictionary
from ..solvers import SolverConfig, solve_batch
from ..training import DescentConfig, LossSpec, train
from . import config as C
from .classify import (
    ClassModel,
    ExactCoder,
    classify_group_energy,
    classify_min_objective,
    detection_accuracy,
)
from .io import csv_text
from .synth import SynthSpec, draw_codes, gen_synthetic, random_dictionary

F = C.Field


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, *row):
        self.rows.append(tuple(_fmt(v) for v in row))

    def column(self, name: str) -> list:
        k = self.header.index(name)
        return [r[k] for r in self.rows]

    def text(self) -> str:
        return csv_text(self.header, self.rows)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return int(v)
    return v


@dataclass
class ExperimentReport:
    name: str
    config: dict[str, Any]
    tables: dict[str, Table]
    runtimes: dict[str, float]
    seeds: tuple[int, ...]

    def write(self, out_dir) -> list[Path]:
        """Write ``<name>_<table>.csv``, the config echo and the timing file."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.name}_config.txt"]
        paths[0].write_text(C.to_text(self.config), encoding="utf-8")
        for tname, table in self.tables.items():
            p = out / f"{self.name}_{tname}.csv"
            p.write_text(table.text(), encoding="utf-8")
            paths.append(p)
        t = out / f"{self.name}_timing.csv"
        t.write_text(csv_text(("stage", "seconds"),
                              [(k, f"{v:.3f}") for k, v in self.runtimes.items()]),
                     encoding="utf-8")
        paths.append(t)
        return paths


class _Clock:
    def __init__(self):
        self.times: dict[str, float] = {}

    def __call__(self, key):
        clock = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                clock.times[key] = clock.times.get(key, 0.0) + time.perf_counter() - self.t0
        return _Ctx()


def _mean_l2(Z, Zstar):
    return float(np.mean(np.linalg.norm(Z - Zstar, axis=0)))


def _mse(Z, Zstar):
    return float(np.mean((Z - Zstar) ** 2))


def _gap(X, Z, Zstar, D, gs):
    return float(np.mean(eval_objective_batch(X, Z, D, gs) - eval_objective_batch(X, Zstar, D, gs)))


def _unstructured(gs: GroupStructure) -> GroupStructure:
    return GroupStructure.singletons(gs.p, gs.lam)


# ------------------------------------------------------------ synth_structured

SYNTH_STRUCTURED = {
    "m": F("int", 40, C.pos),
    "n_groups": F("int", 5, C.pos),
    "group_size": F("int", 10, C.pos),
    "k_active": F("int", 2, C.nonneg),
    "active_fraction": F("float", 0.5, lambda v: 0 < v <= 1),
    "sigma": F("float", 0.05, C.nonneg),
    "n_train": F("int", 400, C.pos),
    "n_test": F("int", 200, C.pos),
    "lam": F("float", 0.2, C.nonneg),
    "mu": F("float", 0.05, C.nonneg),
    "depths": F("ints", (1, 2, 4), C.all_pos),
    "seeds": F("ints", (0, 1, 2), lambda v: len(v) > 0),
    "epochs": F("int", 300, C.nonneg),
    "step_growth": F("float", 2.0, C.pos),
}


def synth_structured(cfg: dict[str, Any]) -> ExperimentReport:
    """Structured vs unstructured encoders regressing exact structured codes.

    Both encoders share the generator dictionary and depth; the unstructured
    one uses singleton groups with unit step scale and no group thresholds.
    Errors are measured on a held-out split.
    """
    clock = _Clock()
    table = Table(("seed", "T", "method", "stage", "code_l2", "code_mse", "objective_gap"))
    for seed in cfg["seeds"]:
        spec = SynthSpec(m=cfg["m"], group_sizes=(cfg["group_size"],) * cfg["n_groups"],
                         k_active=cfg["k_active"], active_fraction=cfg["active_fraction"],
                         sigma=cfg["sigma"], n=cfg["n_train"] + cfg["n_test"], seed=seed,
                         lam=cfg["lam"], mu=cfg["mu"])
        inst, D = gen_synthetic(spec)
        gs = inst.structure
        with clock("exact"):
            Zx = solve_batch(inst.data, D, gs)
        tr = np.arange(cfg["n_train"])
        te = np.arange(cfg["n_train"], inst.n)
        Xte, Zte = inst.data[:, te], Zx[:, te]
        uns = _unstructured(gs)
        descent = DescentConfig(epochs=cfg["epochs"], step_growth=cfg["step_growth"], seed=seed)
        for T in cfg["depths"]:
            variants = (
                ("structured", init_from_dictionary(D, gs, T=T), gs, ()),
                ("unstructured", init_from_dictionary(D, uns, T=T, alpha=1.0), uns, ("s",)),
            )
            for method, params, g, frozen in variants:
                train_inst = ProblemInstance(inst.data[:, tr], D, g, exact_codes=Zx[:, tr])
                table.add(seed, T, method, "init", *_errors(params, Xte, Zte, D, gs))
                with clock(f"train_{method}"):
                    params, _ = train(params, train_inst, LossSpec("regression"), descent, frozen)
                table.add(seed, T, method, "trained", *_errors(params, Xte, Zte, D, gs))
    return ExperimentReport("synth_structured", cfg, {"code_error": table}, clock.times,
                            tuple(cfg["seeds"]))


def _errors(params, X, Zstar, D, gs):
    Z = forward_batch(params, X)
    return _mean_l2(Z, Zstar), _mse(Z, Zstar), _gap(X, Z, Zstar, D, gs)


# -------------------------------------------------------------- classify_synth

_PROTOCOL = F("str", "min_objective", lambda v: v in ("min_objective", "group_energy"),
              "(min_objective or group_energy)")

# two-class Lasso classification with coordinate-descent encoders
CLASSIFY_MIN_OBJECTIVE = {
    "protocol": _PROTOCOL,
    "seeds": F("ints", (0, 1, 2), lambda v: len(v) > 0),
    "m": F("int", 20, C.pos),
    "n_classes": F("int", 2, lambda v: v >= 2),
    "atoms_per_class": F("int", 40, C.pos),
    "k_nonzero": F("int", 3, C.pos),
    "coef_low": F("float", 0.5, C.nonneg),
    "coef_high": F("float", 1.5, C.pos),
    "sigma": F("float", 0.1, C.nonneg),
    "lam": F("float", 0.1, C.nonneg),
    "T": F("int", 5, C.pos),
    "n_train": F("int", 500, C.pos),
    "n_test": F("int", 500, C.pos),
    "epochs": F("int", 30, C.nonneg),
    "step_growth": F("float", 2.0, C.pos),
}

# detection of the two active sources in mixtures from pooled group energies
CLASSIFY_GROUP_ENERGY = {
    "protocol": _PROTOCOL,
    "seeds": F("ints", (0, 1, 2), lambda v: len(v) > 0),
    "m": F("int", 80, C.pos),
    "n_groups": F("int", 5, lambda v: v >= 2),
    "group_size": F("int", 50, C.pos),
    "active_fraction": F("float", 0.1, lambda v: 0 < v <= 1),
    "coef_low": F("float", 0.5, C.nonneg),
    "coef_high": F("float", 1.5, C.pos),
    "sigma": F("float", 0.1, C.nonneg),
    "lam": F("float", 0.2, C.nonneg),
    "mu": F("float", 0.05, C.nonneg),
    "T": F("int", 2, C.pos),
    "n_train": F("int", 5000, C.pos),
    "n_test": F("int", 2000, C.pos),
    "pool": F("int", 1, C.pos),
    "top_k": F("int", 2, C.pos),
    "disc_weight": F("float", 1.0, C.pos),
    "methods": F("str", "exact,discriminative,objective,unstructured"),
    "epochs": F("int", 30, C.nonneg),
    "step_growth": F("float", 2.0, C.pos),
}

GROUP_ENERGY_METHODS = ("exact", "discriminative", "objective", "regression", "unstructured")


def classify_synth(cfg: dict[str, Any]) -> ExperimentReport:
    if cfg["protocol"] == "min_objective":
        return _classify_min_objective(cfg)
    return _classify_group_energy(cfg)


def _sparse_codes(p, n, k, lo, hi, rng):
    Z = np.zeros((p, n))
    for i in range(n):
        on = rng.choice(p, size=k, replace=False)
        Z[on, i] = rng.uniform(lo, hi, size=k) * rng.choice((-1.0, 1.0), size=k)
    return Z


def _classify_min_objective(cfg):
    """Per-class Lasso models, exact codes vs trained coordinate-descent encoders."""
    clock = _Clock()
    if cfg["k_nonzero"] > cfg["atoms_per_class"]:
        raise C.ConfigError("config: field 'k_nonzero': exceeds atoms_per_class")
    table = Table(("seed", "method", "accuracy"))
    K, p, m = cfg["n_classes"], cfg["atoms_per_class"], cfg["m"]
    for seed in cfg["seeds"]:
        rng = np.random.default_rng(seed)
        dicts = [random_dictionary(m, p, rng) for _ in range(K)]

        def draw(c, n):
            Z = _sparse_codes(p, n, cfg["k_nonzero"], cfg["coef_low"], cfg["coef_high"], rng)
            return dicts[c].atoms @ Z + cfg["sigma"] * rng.standard_normal((m, n))

        train_sets = [draw(c, cfg["n_train"]) for c in range(K)]
        Xte = np.hstack([draw(c, cfg["n_test"]) for c in range(K)])
        yte = np.repeat(np.arange(K), cfg["n_test"])
        gs = GroupStructure.singletons(p, cfg["lam"])
        descent = DescentConfig(epochs=cfg["epochs"], step_growth=cfg["step_growth"], seed=seed)
        encoders = []
        for c in range(K):
            params = init_from_dictionary(dicts[c], gs, T=cfg["T"], alpha=1.0)
            with clock("train"):
                params, _ = train(params, ProblemInstance(train_sets[c], dicts[c], gs),
                                  LossSpec("objective"), descent, frozen=("s",))
            encoders.append(params)
        with clock("exact"):
            exact = classify_min_objective([ClassModel(D, cfg["lam"]) for D in dicts], Xte)
        with clock("encode"):
            nn = classify_min_objective([ClassModel(D, cfg["lam"], E) for D, E in zip(dicts, encoders)],
                                        Xte)
        table.add(seed, "exact", float(np.mean(exact == yte)))
        table.add(seed, "encoder", float(np.mean(nn == yte)))
    return ExperimentReport("classify_synth", cfg, {"accuracy": table}, clock.times,
                            tuple(cfg["seeds"]))


def mixture_frames(gs: GroupStructure, D: Dictionary, n_spans: int, pool: int, k: int,
                   fraction: float, coef_range, sigma: float, rng):
    """Ordered frames where each span of ``pool`` frames mixes the same ``k`` groups.

    Returns ``(X, active)`` with ``active`` the ``n_spans x k`` sorted group sets.
    """
    Zs, acts = [], []
    for _ in range(n_spans):
        a = np.sort(rng.choice(gs.n_groups, size=k, replace=False))
        Z, _ = draw_codes(gs, pool, k, fraction, coef_range, rng, active_groups=a)
        Zs.append(Z)
        acts.append(a)
    Z = np.hstack(Zs)
    return D.atoms @ Z + sigma * rng.standard_normal((D.m, Z.shape[1])), np.array(acts)


def _classify_group_energy(cfg):
    """Detect the two active sources of mixture frames from group energies."""
    clock = _Clock()
    methods = tuple(s.strip() for s in cfg["methods"].split(",") if s.strip())
    bad = [s for s in methods if s not in GROUP_ENERGY_METHODS]
    if bad:
        raise C.ConfigError(f"config: field 'methods': unknown method(s) {', '.join(bad)}")
    if cfg["top_k"] > cfg["n_groups"]:
        raise C.ConfigError("config: field 'top_k': exceeds n_groups")
    table = Table(("seed", "method", "accuracy"))
    coef = (cfg["coef_low"], cfg["coef_high"])
    for seed in cfg["seeds"]:
        rng = np.random.default_rng(seed)
        gs = GroupStructure.contiguous((cfg["group_size"],) * cfg["n_groups"], cfg["lam"], cfg["mu"])
        D = random_dictionary(cfg["m"], gs.p, rng)
        Xtr, atr = mixture_frames(gs, D, cfg["n_train"], 1, cfg["top_k"], cfg["active_fraction"],
                                  coef, cfg["sigma"], rng)
        Xte, ate = mixture_frames(gs, D, cfg["n_test"], cfg["pool"], cfg["top_k"],
                                  cfg["active_fraction"], coef, cfg["sigma"], rng)
        descent = DescentConfig(epochs=cfg["epochs"], step_growth=cfg["step_growth"], seed=seed)
        need_codes = {"regression", "unstructured"} & set(methods)
        Ztr = None
        if need_codes:
            with clock("exact_train"):
                Ztr = solve_batch(Xtr, D, gs)
        P0 = init_from_dictionary(D, gs, T=cfg["T"])
        for method in methods:
            with clock(method):
                if method == "exact":
                    model = ExactCoder(D, gs)
                elif method == "objective":
                    model, _ = train(P0, ProblemInstance(Xtr, D, gs), LossSpec("objective"), descent)
                elif method == "regression":
                    model, _ = train(P0, ProblemInstance(Xtr, D, gs, exact_codes=Ztr),
                                     LossSpec("regression"), descent)
                elif method == "discriminative":
                    w = cfg["disc_weight"]
                    M = np.full((gs.n_groups, Xtr.shape[1]), w)
                    for n, a in enumerate(atr):
                        M[a, n] = -w
                    model, _ = train(P0, ProblemInstance(Xtr, D, gs, per_sample_mu=M),
                                     LossSpec("discriminative"), descent)
                else:
                    uns = _unstructured(gs)
                    model, _ = train(init_from_dictionary(D, uns, T=cfg["T"], alpha=1.0),
                                     ProblemInstance(Xtr, D, uns, exact_codes=Ztr),
                                     LossSpec("regression"), descent, frozen=("s",))
                found = classify_group_energy(model, Xte, gs, cfg["pool"], cfg["top_k"])
            table.add(seed, method, detection_accuracy(found, ate))
    return ExperimentReport("classify_synth", cfg, {"accuracy": table}, clock.times,
                            tuple(cfg["seeds"]))


# -------------------------------------------------------------- online_regimes

ONLINE_REGIMES = {
    "seed": F("int", 0, C.nonneg),
    "m": F("int", 64, C.pos),
    "p": F("int", 64, C.pos),
    "generator_atoms": F("int", 48, C.pos),
    "regimes": F("int", 3, C.pos),
    "regime_length": F("int", 10_000, C.pos),
    "k_nonzero": F("int", 3, C.pos),
    "coef_low": F("float", 2.0, C.nonneg),
    "coef_high": F("float", 6.0, C.pos),
    "sigma": F("float", 0.1, C.nonneg),
    "lam": F("float", 1.0, C.nonneg),
    "T": F("int", 4, C.pos),
    "window": F("int", 1000, C.pos),
    "step": F("int", 100, C.pos),
    "forget": F("float", 0.9, lambda v: 0 < v <= 1),
    "dict_update_period": F("opt_int", 1, lambda v: v is None or v > 0),
    "param_mode": F("str", "dictionary", lambda v: v in ("free", "dictionary"),
                    "(free or dictionary)"),
    "epochs": F("int", 2, C.nonneg),
    "step_growth": F("float", 4.0, C.pos),
    "heldout": F("int", 2000, C.pos),
    "offline_iters": F("int", 15, C.nonneg),
}


def regime_stream(cfg, rng):
    """Concatenated regimes, each from its own generator, plus held-out samples per regime."""
    m, q = cfg["m"], cfg["generator_atoms"]
    if cfg["k_nonzero"] > q:
        raise C.ConfigError("config: field 'k_nonzero': exceeds generator_atoms")
    blocks, held = [], []
    for _ in range(cfg["regimes"]):
        G = random_dictionary(m, q, rng)

        def draw(n):
            Z = _sparse_codes(q, n, cfg["k_nonzero"], cfg["coef_low"], cfg["coef_high"], rng)
            return G.atoms @ Z + cfg["sigma"] * rng.standard_normal((m, n))

        blocks.append(draw(cfg["regime_length"]))
        held.append(draw(cfg["heldout"]))
    return np.hstack(blocks), held


def offline_dictionary(X, p: int, lam: float, iters: int, seed: int = 0) -> Dictionary:
    """Batch dictionary learning with exact Lasso codes (alternating minimization)."""
    D = init_dictionary_from_stream(X, p, seed)
    gs = GroupStructure.singletons(p, lam)
    solver = SolverConfig(max_iter=100_000, tol=1e-8)
    for _ in range(iters):
        Z = solve_batch(X, D, gs, solver)
        stats = DictStats.zeros(X.shape[0], p).accumulate(X, Z)
        for _ in range(3):
            D = dict_update(D, stats)
    return D


def online_regimes(cfg: dict[str, Any]) -> ExperimentReport:
    """Online encoder plus dictionary on a stream that switches regime.

    The per-window metric is the mean Lasso objective of the window's samples
    under the current encoder and dictionary. A window belongs to a regime when
    all its samples do. Each regime's baseline is the exact Lasso objective on
    that regime's last window, under a dictionary learned offline from held-out
    samples of the same regime.
    """
    if cfg["step"] > cfg["window"] or cfg["window"] > cfg["regime_length"]:
        raise C.ConfigError("config: field 'window': need step <= window <= regime_length")
    clock = _Clock()
    rng = np.random.default_rng(cfg["seed"])
    X, held = regime_stream(cfg, rng)
    oc = OnlineConfig(window=cfg["window"], step=cfg["step"],
                      dict_update_period=cfg["dict_update_period"], forget=cfg["forget"],
                      descent=DescentConfig(epochs=cfg["epochs"], step_growth=cfg["step_growth"]),
                      param_mode=cfg["param_mode"], seed=cfg["seed"])
    with clock("online"):
        res = online_run(X, cfg["p"], cfg["lam"], cfg["T"], oc)
    L = cfg["regime_length"]
    windows = Table(("window", "regime", "start", "stop", "mean_objective", "dict_updated"))
    per_regime: dict[int, list[WindowMetric]] = {}
    for w in res.metrics:
        r0, r1 = w.start // L, (w.stop - 1) // L
        regime = r0 if r0 == r1 else -1
        windows.add(w.index, regime, w.start, w.stop, w.objective, int(w.dict_updated))
        if regime >= 0:
            per_regime.setdefault(regime, []).append(w)
    summary = Table(("regime", "first_window_objective", "final_window_objective",
                     "offline_objective", "relative_gap"))
    gs = GroupStructure.singletons(cfg["p"], cfg["lam"])
    for r in range(cfg["regimes"]):
        ws = per_regime.get(r, [])
        if not ws:
            continue
        with clock("offline"):
            D_off = offline_dictionary(held[r], cfg["p"], cfg["lam"], cfg["offline_iters"],
                                       cfg["seed"])
            Xf = X[:, ws[-1].start:ws[-1].stop]
            Zf = solve_batch(Xf, D_off, gs, SolverConfig(max_iter=100_000, tol=1e-8))
            off = float(np.mean(eval_objective_batch(Xf, Zf, D_off, gs)))
        final = ws[-1].objective
        summary.add(r, ws[0].objective, final, off, (final - off) / off)
    return ExperimentReport("online_regimes", cfg, {"windows": windows, "summary": summary},
                            clock.times, (cfg["seed"],))


# ------------------------------------------------------------------- dispatch

EXPERIMENTS = {
    "synth_structured": (SYNTH_STRUCTURED, synth_structured),
    "classify_synth": (None, classify_synth),
    "online_regimes": (ONLINE_REGIMES, online_regimes),
}


def experiment_config(name: str, raw: dict[str, str] | None = None) -> dict[str, Any]:
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
    raw = raw or {}
    schema = EXPERIMENTS[name][0]
    if schema is None:
        protocol = C.resolve({"protocol": _PROTOCOL}, {k: v for k, v in raw.items() if k == "protocol"},
                             where=f"{name} config")["protocol"]
        schema = CLASSIFY_MIN_OBJECTIVE if protocol == "min_objective" else CLASSIFY_GROUP_ENERGY
    return C.resolve(schema, raw, where=f"{name} config")


def run_experiment(name: str, config=None, overrides: dict[str, str] | None = None,
                   text: str | None = None) -> ExperimentReport:
    """Run a named experiment from a config file path, config text and/or overrides."""
    cfg = experiment_config(name, C.gather(config, text, overrides))
    return EXPERIMENTS[name][1](cfg)
