"""Command line interface.

Every verb reads a flat ``key = value`` config (``--config``) and accepts
overrides either as ``--set key=value`` or directly as ``--key value``.
On success a one-line JSON summary goes to stdout and the exit code is 0.
On failure a one-line JSON object ``{"error": kind, "message": ...}`` goes to
stderr and the exit code is nonzero (2 usage/config, 3 file format, 4
numerical, 1 anything else).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any

import numpy as np

from ..core import Dictionary, GroupStructure, NonFiniteError, ProblemInstance
from ..modeling import OnlineConfig, WindowMetric, online_run
from ..network import forward_batch, init_from_dictionary
from ..solvers import SolverConfig, bcofb_solve, cod_solve, ista_solve
from ..training import (
    DescentConfig,
    LossSpec,
    finite_diff_grad,
    gradient_rel_error,
    kink_margin,
    loss_and_grad,
    evaluate_loss,
    train,
)
from . import bench as B
from . import config as C
from . import io
from .classify import ClassModel, ExactCoder, classify_group_energy, classify_min_objective
from .experiments import EXPERIMENTS, experiment_config
from .synth import SynthSpec, gen_synthetic

F = C.Field


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise C.ConfigError(f"config: field '{k}' is required")


def read_matrix(path) -> np.ndarray:
    """Matrix from a binary matrix file, or from CSV when the name ends in ``.csv``."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return io.load_matrix_csv(p) if p.suffix.lower() == ".csv" else io.load_matrix(p)


def write_matrix(path, a) -> str:
    p = Path(path)
    (io.save_matrix_csv if p.suffix.lower() == ".csv" else io.save_matrix)(p, a)
    return str(p)


def _structure(cfg, p: int) -> GroupStructure:
    if cfg.get("structure"):
        return io.load_structure(cfg["structure"])
    return GroupStructure.singletons(p, cfg["lam"])


def _paths(v: str) -> list[str]:
    return [s.strip() for s in v.split(",") if s.strip()]


def _descent(cfg) -> DescentConfig:
    growth = cfg["step_growth"]
    return DescentConfig(initial_step=cfg["initial_step"], armijo_c=cfg["armijo_c"],
                         backtrack=cfg["backtrack"], max_backtracks=cfg["max_backtracks"],
                         epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
                         step_growth=growth if growth > 0 else None)


DESCENT_FIELDS = {
    "epochs": F("int", 10, C.nonneg),
    "initial_step": F("float", 1.0, C.nonneg),
    "armijo_c": F("float", 1e-4, lambda v: 0 < v < 1),
    "backtrack": F("float", 0.5, lambda v: 0 < v < 1),
    "max_backtracks": F("int", 30, C.nonneg),
    "batch_size": F("opt_int", None, lambda v: v is None or v > 0),
    "step_growth": F("float", 2.0, C.nonneg, "(0 disables)"),
    "seed": F("int", 0, C.nonneg),
}


# -------------------------------------------------------------------- verbs


def cmd_solve(cfg):
    _need(cfg, "data", "dictionary")
    X = read_matrix(cfg["data"])
    D = io.load_dictionary(cfg["dictionary"])
    gs = _structure(cfg, D.p)
    sc = SolverConfig(max_iter=cfg["max_iter"], tol=cfg["tol"])
    codes, rows = [], []
    for n in range(X.shape[1]):
        if cfg["method"] == "cod":
            r = cod_solve(X[:, n], D, cfg["lam"], sc)
        else:
            r = (bcofb_solve if cfg["method"] == "bcofb" else ista_solve)(X[:, n], D, gs, sc)
        codes.append(r.code)
        rows.append((n, r.iterations, repr(r.final_objective), int(r.converged)))
    Z = np.column_stack(codes) if codes else np.zeros((D.p, 0))
    out = {"samples": X.shape[1], "converged": sum(r[3] for r in rows)}
    if cfg["out"]:
        out["codes"] = write_matrix(cfg["out"], Z)
    if cfg["report"]:
        io.write_csv(cfg["report"], ("sample", "iterations", "objective", "converged"), rows)
        out["report"] = cfg["report"]
    return out


def _alpha(v: str):
    return None if v.strip().lower() == "auto" else float(v)


def cmd_init(cfg):
    _need(cfg, "dictionary", "out")
    D = io.load_dictionary(cfg["dictionary"])
    gs = _structure(cfg, D.p)
    params = init_from_dictionary(D, gs, T=cfg["T"], tying=cfg["tying"], alpha=_alpha(cfg["alpha"]))
    io.save_model(cfg["out"], params)
    return {"model": cfg["out"], "T": params.T, "alpha": params.alpha_init}


def cmd_train(cfg):
    _need(cfg, "model", "data", "dictionary", "out")
    params = io.load_model(cfg["model"])
    X = read_matrix(cfg["data"])
    D = io.load_dictionary(cfg["dictionary"])
    gs = params.structure
    codes = read_matrix(cfg["codes"]) if cfg["codes"] else None
    weights = read_matrix(cfg["weights"]) if cfg["weights"] else None
    inst = ProblemInstance(X, D, gs, exact_codes=codes, per_sample_mu=weights)
    frozen = tuple(_paths(cfg["frozen"]))
    spec = LossSpec(cfg["loss"])
    res = train(params, inst, spec, _descent(cfg), frozen, adapt_dictionary=cfg["adapt_dictionary"])
    params, hist = res[0], res[1]
    io.save_model(cfg["out"], params)
    out = {"model": cfg["out"], "initial_loss": hist.epoch_loss[0], "final_loss": hist.epoch_loss[-1],
           "accepted_steps": len(hist.accepted_steps), "skipped": hist.skipped, "status": hist.status}
    if cfg["adapt_dictionary"]:
        path = cfg["out_dictionary"] or str(Path(cfg["out"]).with_suffix(".dict.ssm"))
        io.save_dictionary(path, res[2])
        out["dictionary"] = path
    if cfg["history"]:
        io.write_csv(cfg["history"], ("epoch", "loss"),
                     [(k, repr(v)) for k, v in enumerate(hist.epoch_loss)])
        out["history"] = cfg["history"]
    return out


def cmd_encode(cfg):
    _need(cfg, "model", "data", "out")
    params = io.load_model(cfg["model"])
    Z = forward_batch(params, read_matrix(cfg["data"]))
    return {"codes": write_matrix(cfg["out"], Z), "samples": Z.shape[1]}


def cmd_online(cfg):
    _need(cfg, "data", "out")
    X = read_matrix(cfg["data"])
    oc = OnlineConfig(window=cfg["window"], step=cfg["step"],
                      dict_update_period=cfg["dict_update_period"], forget=cfg["forget"],
                      descent=DescentConfig(epochs=cfg["epochs"], step_growth=cfg["step_growth"]),
                      param_mode=cfg["param_mode"], seed=cfg["seed"])
    res = online_run(X, cfg["p"], cfg["lam"], cfg["T"], oc)
    io.write_csv(cfg["out"], WindowMetric.CSV_HEADER, [w.row() for w in res.metrics])
    out = {"windows": len(res.metrics), "report": cfg["out"],
           "final_objective": res.metrics[-1].objective}
    if cfg["model_out"]:
        io.save_model(cfg["model_out"], res.params)
        out["model"] = cfg["model_out"]
    if cfg["dictionary_out"]:
        io.save_dictionary(cfg["dictionary_out"], res.dictionary)
        out["dictionary"] = cfg["dictionary_out"]
    return out


def cmd_synth(cfg):
    spec = SynthSpec(m=cfg["m"], group_sizes=cfg["group_sizes"], k_active=cfg["k_active"],
                     active_fraction=cfg["active_fraction"],
                     coef_range=(cfg["coef_low"], cfg["coef_high"]), sigma=cfg["sigma"],
                     n=cfg["n"], seed=cfg["seed"], lam=cfg["lam"], mu=cfg["mu"])
    inst, D = gen_synthetic(spec)
    out = {"m": spec.m, "p": spec.p, "n": spec.n}
    targets = (("out_data", lambda p: write_matrix(p, inst.data)),
               ("out_codes", lambda p: write_matrix(p, inst.exact_codes)),
               ("out_dictionary", lambda p: io.save_dictionary(p, D)),
               ("out_structure", lambda p: io.save_structure(p, inst.structure)))
    if not any(cfg[k] for k, _ in targets):
        raise C.ConfigError("config: at least one of " + ", ".join(k for k, _ in targets) + " is required")
    for key, save in targets:
        if cfg[key]:
            save(cfg[key])
            out[key] = cfg[key]
    return out


def cmd_classify(cfg):
    _need(cfg, "data", "out")
    X = read_matrix(cfg["data"])
    if cfg["protocol"] == "min_objective":
        _need(cfg, "dictionaries")
        dicts = [io.load_dictionary(p) for p in _paths(cfg["dictionaries"])]
        models = [io.load_model(p) for p in _paths(cfg["models"])] if cfg["models"] else [None] * len(dicts)
        if len(models) != len(dicts):
            raise C.ConfigError("config: field 'models': needs one model per dictionary")
        labels = classify_min_objective([ClassModel(D, cfg["lam"], E) for D, E in zip(dicts, models)], X)
        io.write_csv(cfg["out"], ("sample", "label"), [(n, int(v)) for n, v in enumerate(labels)])
        return {"samples": len(labels), "report": cfg["out"],
                "counts": np.bincount(labels, minlength=len(dicts)).tolist()}
    if cfg["model"]:
        model = io.load_model(cfg["model"])
        gs = model.structure
    else:
        _need(cfg, "dictionary", "structure")
        gs = io.load_structure(cfg["structure"])
        model = ExactCoder(io.load_dictionary(cfg["dictionary"]), gs)
    found = classify_group_energy(model, X, gs, cfg["pool"], cfg["top_k"])
    io.write_csv(cfg["out"], ("span", "groups"),
                 [(k, " ".join(str(g) for g in sorted(s))) for k, s in enumerate(found)])
    return {"spans": len(found), "report": cfg["out"]}


def cmd_bench(cfg):
    if cfg["dictionary"]:
        D = io.load_dictionary(cfg["dictionary"])
    else:
        rng = np.random.default_rng(cfg["seed"])
        D = Dictionary.normalize(rng.standard_normal((cfg["m"], cfg["p"])))
    if cfg["structure"]:
        gs = io.load_structure(cfg["structure"])
    else:
        if D.p % cfg["group_size"]:
            raise C.ConfigError("config: field 'group_size': must divide p")
        gs = GroupStructure.contiguous((cfg["group_size"],) * (D.p // cfg["group_size"]),
                                       cfg["lam"], cfg["mu"])
    reports = B.bench_depths(D, gs, cfg["depths"], cfg["N"], cfg["repetitions"], cfg["seed"])
    out = {"depths": list(cfg["depths"]), **B.scaling_summary(reports),
           "sec_per_vector_layer": [r.sec_per_vector_layer for r in reports],
           "layer_sec_per_vector_layer": [r.layer_sec_per_vector_layer for r in reports],
           "reference_sec_per_vector_layer": B.REFERENCE_SEC_PER_VECTOR_LAYER}
    if cfg["out"]:
        io.write_csv(cfg["out"], B.BenchReport.CSV_HEADER, [r.row() for r in reports])
        out["report"] = cfg["out"]
    return out


def cmd_gradcheck(cfg):
    _need(cfg, "data", "dictionary")
    X = read_matrix(cfg["data"])
    D = io.load_dictionary(cfg["dictionary"])
    if cfg["model"]:
        params = io.load_model(cfg["model"])
    else:
        params = init_from_dictionary(D, _structure(cfg, D.p), T=cfg["T"], tying=cfg["tying"])
    codes = read_matrix(cfg["codes"]) if cfg["codes"] else None
    spec = LossSpec(cfg["loss"])
    margins = np.array([kink_margin(params, X[:, n]) for n in range(X.shape[1])])
    cols = np.flatnonzero(margins > cfg["margin"])[: cfg["points"]]
    if cols.size == 0:
        raise NonFiniteError("no sample is far enough from a kink for finite differences")
    rows, worst = [], 0.0
    for n in cols:
        inst = ProblemInstance(X[:, [n]], D, params.structure,
                               exact_codes=None if codes is None else codes[:, [n]])
        _, g = loss_and_grad(params, inst, spec)
        fd = finite_diff_grad(lambda q: evaluate_loss(q, inst, spec), params, cfg["h"])
        errs = gradient_rel_error(g, fd)
        worst = max(worst, max(errs.values()))
        rows.append((int(n), *(repr(errs[k]) for k in ("W", "S", "t", "s"))))
    if cfg["out"]:
        io.write_csv(cfg["out"], ("sample", "W", "S", "t", "s"), rows)
    if worst > cfg["tol"]:
        raise GradcheckError(f"max relative error {worst:.3e} exceeds tol {cfg['tol']:.1e}")
    return {"points": len(rows), "max_rel_error": worst}


class GradcheckError(Exception):
    pass


def cmd_experiment(cfg, name, raw, out_dir):
    report = EXPERIMENTS[name][1](experiment_config(name, raw))
    paths = report.write(out_dir) if out_dir else []
    return {"experiment": name, "files": [str(p) for p in paths]}


_PATH = lambda: F("str", "")  # noqa: E731

VERBS: dict[str, tuple[str, dict[str, C.Field], Any]] = {
    "solve": ("exact solver on every column of a data file", {
        "data": _PATH(), "dictionary": _PATH(), "structure": _PATH(),
        "lam": F("float", 0.1, C.nonneg),
        "method": F("str", "bcofb", lambda v: v in ("bcofb", "ista", "cod"), "(bcofb, ista or cod)"),
        "max_iter": F("int", 100_000, C.pos), "tol": F("float", 1e-8, C.pos),
        "out": _PATH(), "report": _PATH(),
    }, cmd_solve),
    "init": ("build an encoder from a dictionary", {
        "dictionary": _PATH(), "structure": _PATH(), "lam": F("float", 0.1, C.nonneg),
        "T": F("int", 2, C.pos), "tying": F("str", "tied", lambda v: v in ("tied", "untied")),
        "alpha": F("str", "auto"), "out": _PATH(),
    }, cmd_init),
    "train": ("train an encoder", {
        "model": _PATH(), "data": _PATH(), "dictionary": _PATH(), "codes": _PATH(),
        "weights": _PATH(),
        "loss": F("str", "objective", lambda v: v in ("objective", "regression", "discriminative")),
        **DESCENT_FIELDS, "frozen": F("str", ""), "adapt_dictionary": F("bool", False),
        "out": _PATH(), "out_dictionary": _PATH(), "history": _PATH(),
    }, cmd_train),
    "encode": ("encode a data file", {"model": _PATH(), "data": _PATH(), "out": _PATH()}, cmd_encode),
    "online": ("online encoder and dictionary adaptation over a stream", {
        "data": _PATH(), "p": F("int", 64, C.pos), "lam": F("float", 1.0, C.nonneg),
        "T": F("int", 4, C.pos), "window": F("int", 1000, C.pos), "step": F("int", 100, C.pos),
        "forget": F("float", 0.99, lambda v: 0 < v <= 1),
        "dict_update_period": F("opt_int", 1, lambda v: v is None or v > 0),
        "param_mode": F("str", "free", lambda v: v in ("free", "dictionary")),
        "epochs": F("int", 2, C.nonneg), "step_growth": F("float", 4.0, C.pos),
        "seed": F("int", 0, C.nonneg), "out": _PATH(), "model_out": _PATH(),
        "dictionary_out": _PATH(),
    }, cmd_online),
    "synth": ("generate synthetic structured sparse data", {
        "m": F("int", 16, C.pos), "group_sizes": F("ints", (8, 8, 8, 8), C.all_pos),
        "k_active": F("int", 2, C.nonneg), "active_fraction": F("float", 0.5),
        "coef_low": F("float", 0.5), "coef_high": F("float", 1.5), "sigma": F("float", 0.0),
        "n": F("int", 200, C.nonneg), "seed": F("int", 0, C.nonneg),
        "lam": F("float", 0.2), "mu": F("float", 0.05),
        "out_data": _PATH(), "out_codes": _PATH(), "out_dictionary": _PATH(), "out_structure": _PATH(),
    }, cmd_synth),
    "classify": ("min-objective or group-energy classification", {
        "protocol": F("str", "min_objective", lambda v: v in ("min_objective", "group_energy")),
        "data": _PATH(), "dictionaries": _PATH(), "models": _PATH(), "lam": F("float", 0.1, C.nonneg),
        "model": _PATH(), "dictionary": _PATH(), "structure": _PATH(),
        "pool": F("int", 1, C.pos), "top_k": F("int", 2, C.pos), "out": _PATH(),
    }, cmd_classify),
    "bench": ("encoder throughput across depths", {
        "dictionary": _PATH(), "structure": _PATH(), "m": F("int", 100, C.pos),
        "p": F("int", 256, C.pos), "group_size": F("int", 32, C.pos),
        "lam": F("float", 0.1, C.nonneg), "mu": F("float", 0.05, C.nonneg),
        "depths": F("ints", (2, 4, 8, 16), C.all_pos), "N": F("int", 10_000, C.pos),
        "repetitions": F("int", 3, C.pos), "seed": F("int", 0, C.nonneg), "out": _PATH(),
    }, cmd_bench),
    "gradcheck": ("backward pass against central finite differences", {
        "data": _PATH(), "dictionary": _PATH(), "structure": _PATH(), "model": _PATH(),
        "codes": _PATH(), "lam": F("float", 0.1, C.nonneg), "T": F("int", 2, C.pos),
        "tying": F("str", "tied", lambda v: v in ("tied", "untied")),
        "loss": F("str", "objective", lambda v: v in ("objective", "regression")),
        "points": F("int", 5, C.pos), "h": F("float", 1e-5, C.pos),
        "margin": F("float", 1e-3, C.nonneg), "tol": F("float", 1e-4, C.pos), "out": _PATH(),
    }, cmd_gradcheck),
}


def _extra_overrides(extra: list[str]) -> dict[str, str]:
    out, k = {}, 0
    while k < len(extra):
        tok = extra[k]
        if not tok.startswith("--") or len(tok) < 3:
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
        elif k + 1 < len(extra):
            k += 1
            val = extra[k]
        else:
            raise UsageError(f"option {tok} needs a value")
        out[key.replace("-", "_")] = val
        k += 1
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="structsparse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb, (help_, _, _) in VERBS.items():
        p = sub.add_parser(verb, help=help_)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p = sub.add_parser("experiment", help="run a named experiment and write its reports")
    p.add_argument("name", help=", ".join(EXPERIMENTS))
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="")
    return parser


def run(argv=None) -> dict:
    args, extra = build_parser().parse_known_args(argv)
    overrides = {**_extra_overrides(extra), **C.parse_overrides(args.set)}
    raw = C.gather(args.config, overrides=overrides)
    if args.verb == "experiment":
        if args.name not in EXPERIMENTS:
            raise C.ConfigError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
        return cmd_experiment(None, args.name, raw, args.out_dir)
    _, schema, handler = VERBS[args.verb]
    return handler(C.resolve(schema, raw, where=f"{args.verb} config"))


_EXIT = ((UsageError, "usage", 2), (C.ConfigError, "config", 2), (io.FormatError, "format", 3),
         (FileNotFoundError, "file", 3), (NonFiniteError, "numeric", 4),
         (GradcheckError, "gradcheck", 4), (ValueError, "value", 1))


def main(argv=None) -> int:
    try:
        result = run(argv)
    except Exception as exc:  # every failure becomes one machine-readable line
        kind, code = "internal", 1
        for cls, k, c in _EXIT:
            if isinstance(exc, cls):
                kind, code = k, c
                break
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(json.dumps({"error": kind, "message": msg}), file=sys.stderr)
        return code
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
