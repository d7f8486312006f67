"""On-disk formats.

Matrix (``SSM1``)
    magic, u64 rows, u64 cols, then rows*cols little-endian float64, row-major.
Group structure (text)
    ``p <int>``, one line of 0-based indices per group, ``lambda`` line with
    p values, ``mu`` line with one value per group.
Model (``SSE1``)
    magic, u64 section count, then per section a u64-length-prefixed UTF-8
    name followed by an ``SSM1`` matrix payload.
Config (text)
    flat ``key = value`` lines, ``#`` starts a comment.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

from ..core import Dictionary, GroupStructure
from ..network import EncoderParams

MATRIX_MAGIC = b"SSM1"
MODEL_MAGIC = b"SSE1"
_U64 = struct.Struct("<Q")


class FormatError(ValueError):
    """A file does not follow the expected format."""


# ------------------------------------------------------------------ matrices


def matrix_to_bytes(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"matrix files hold 2-d arrays, got shape {a.shape}")
    return MATRIX_MAGIC + _U64.pack(a.shape[0]) + _U64.pack(a.shape[1]) + \
        np.ascontiguousarray(a, dtype="<f8").tobytes()


def _read_matrix(buf: memoryview, pos: int, what: str = "matrix"):
    if bytes(buf[pos:pos + 4]) != MATRIX_MAGIC:
        raise FormatError(f"{what}: bad magic {bytes(buf[pos:pos + 4])!r}, expected {MATRIX_MAGIC!r}")
    if len(buf) < pos + 20:
        raise FormatError(f"{what}: truncated header")
    rows = _U64.unpack_from(buf, pos + 4)[0]
    cols = _U64.unpack_from(buf, pos + 12)[0]
    n = rows * cols * 8
    start = pos + 20
    if len(buf) < start + n:
        raise FormatError(f"{what}: expected {rows}x{cols} values, file is truncated")
    a = np.frombuffer(buf[start:start + n], dtype="<f8").reshape(rows, cols).astype(np.float64)
    return a, start + n


def matrix_from_bytes(data: bytes) -> np.ndarray:
    a, end = _read_matrix(memoryview(data), 0)
    if end != len(data):
        raise FormatError(f"matrix: {len(data) - end} trailing bytes")
    return a


def save_matrix(path, a) -> None:
    Path(path).write_bytes(matrix_to_bytes(a))


def load_matrix(path) -> np.ndarray:
    return matrix_from_bytes(Path(path).read_bytes())


def save_matrix_csv(path, a) -> None:
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for row in a:
            w.writerow([repr(float(v)) for v in row])


def load_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise FormatError(f"{path}: ragged or empty CSV matrix")
    return np.array(rows)


def save_dictionary(path, D: Dictionary) -> None:
    save_matrix(path, D.atoms)


def load_dictionary(path) -> Dictionary:
    return Dictionary(load_matrix(path))


# --------------------------------------------------------- group structures


def structure_to_text(gs: GroupStructure) -> str:
    lines = [f"p {gs.p}"]
    lines += [" ".join(str(int(j)) for j in g) for g in gs.groups]
    lines.append("lambda " + " ".join(repr(float(v)) for v in gs.lam))
    lines.append("mu " + " ".join(repr(float(v)) for v in gs.mu))
    return "\n".join(lines) + "\n"


def structure_from_text(text: str, allow_signed_mu: bool = False) -> GroupStructure:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("p "):
        raise FormatError("structure: first line must be 'p <int>'")
    try:
        p = int(lines[0].split()[1])
        k = 1
        groups = []
        while k < len(lines) and not lines[k].startswith("lambda"):
            groups.append([int(v) for v in lines[k].split()])
            k += 1
        if k + 1 >= len(lines) or not lines[k + 1].startswith("mu"):
            raise FormatError("structure: expected 'lambda' then 'mu' lines after the groups")
        lam = [float(v) for v in lines[k].split()[1:]]
        mu = [float(v) for v in lines[k + 1].split()[1:]]
    except (IndexError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"structure: {exc}") from exc
    if len(lam) != p or len(mu) != len(groups):
        raise FormatError(f"structure: lambda needs {p} values and mu {len(groups)}")
    gs = GroupStructure(groups, lam, mu, allow_signed_mu)
    if gs.p != p:
        raise FormatError(f"structure: header says p={p} but groups cover {gs.p} indices")
    return gs


def save_structure(path, gs: GroupStructure) -> None:
    Path(path).write_text(structure_to_text(gs), encoding="utf-8")


def load_structure(path) -> GroupStructure:
    return structure_from_text(Path(path).read_text(encoding="utf-8"))


# ------------------------------------------------------------------- models


def _section(name: str, a) -> bytes:
    nb = name.encode("utf-8")
    return _U64.pack(len(nb)) + nb + matrix_to_bytes(a)


def model_to_bytes(params: EncoderParams) -> bytes:
    gs = params.structure
    untied = params.tying == "untied"
    sections = [("W", params.W)]
    if untied:
        sections += [(f"S_{k + 1}", params.S[k]) for k in range(params.T)]
        sections += [(f"s_{k + 1}", params.s[k]) for k in range(params.T)]
        sections += [(f"t_{k + 1}", params.t[k]) for k in range(params.T)]
    else:
        sections += [("S", params.S[0]), ("s", params.s[0]), ("t", params.t[0])]
    digest = bytes.fromhex(gs.digest())
    sections += [
        ("metadata", np.array([[params.T, float(untied), params.alpha_init]])),
        ("groups", gs.labels.astype(np.float64)),
        ("lambda", gs.lam),
        ("mu", gs.mu),
        ("structure_digest", np.frombuffer(digest, dtype=np.uint8).astype(np.float64)),
    ]
    return MODEL_MAGIC + _U64.pack(len(sections)) + b"".join(_section(n, a) for n, a in sections)


def model_from_bytes(data: bytes) -> EncoderParams:
    buf = memoryview(data)
    if bytes(buf[:4]) != MODEL_MAGIC:
        raise FormatError(f"model: bad magic {bytes(buf[:4])!r}, expected {MODEL_MAGIC!r}")
    if len(buf) < 12:
        raise FormatError("model: truncated header")
    count = _U64.unpack_from(buf, 4)[0]
    pos = 12
    sec = {}
    for _ in range(count):
        if len(buf) < pos + 8:
            raise FormatError("model: truncated section header")
        n = _U64.unpack_from(buf, pos)[0]
        name = bytes(buf[pos + 8:pos + 8 + n]).decode("utf-8")
        sec[name], pos = _read_matrix(buf, pos + 8 + n, f"model section {name!r}")
    if pos != len(buf):
        raise FormatError(f"model: {len(buf) - pos} trailing bytes")
    try:
        T_, untied, alpha = sec["metadata"][0]
        T = int(T_)
        labels = sec["groups"][0].astype(np.int64)
        groups = [np.flatnonzero(labels == r) for r in range(labels.max() + 1)]
        gs = GroupStructure(groups, sec["lambda"][0], sec["mu"][0])
        digest = bytes(sec["structure_digest"][0].astype(np.uint8)).hex()
        if digest != gs.digest():
            raise FormatError("model: structure digest mismatch")
        if untied:
            S = np.stack([sec[f"S_{k + 1}"] for k in range(T)])
            s = np.stack([sec[f"s_{k + 1}"][0] for k in range(T)])
            t = np.stack([sec[f"t_{k + 1}"][0] for k in range(T)])
        else:
            S, s, t = sec["S"][None], sec["s"], sec["t"]
    except KeyError as exc:
        raise FormatError(f"model: missing section {exc}") from exc
    return EncoderParams(sec["W"], S, t, s, T, "untied" if untied else "tied", gs, float(alpha))


def save_model(path, params: EncoderParams) -> None:
    Path(path).write_bytes(model_to_bytes(params))


def load_model(path) -> EncoderParams:
    return model_from_bytes(Path(path).read_bytes())


# ------------------------------------------------------------ config/report


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise FormatError(f"config line {n}: empty key")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    Path(path).write_text(csv_text(header, rows), encoding="utf-8")
