"""Encoder throughput measurements.

Two per-layer figures are reported. ``raw`` divides the whole forward time by
``N * T``. ``layer`` first subtracts the input stage (``prox(W x)``, which every
encoder pays once regardless of depth), so it measures the cost of the fixed
per-layer datapath alone. Absolute times depend on the machine and are never
checked; only the scaling is.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..network import EncoderParams, init_from_dictionary

# GPU figure quoted for a 10-layer structured encoder on 1e5 vectors of dimension 100
REFERENCE_SEC_PER_VECTOR_LAYER = 3.6e-6


@dataclass(frozen=True)
class BenchReport:
    T: int
    N: int
    m: int
    p: int
    repetitions: int
    seconds: float  # best forward time over the repetitions
    input_seconds: float  # best time of the input stage alone

    @property
    def vectors_per_second(self) -> float:
        return self.N / self.seconds

    @property
    def sec_per_vector(self) -> float:
        return self.seconds / self.N

    @property
    def sec_per_vector_layer(self) -> float:
        return self.seconds / (self.N * self.T)

    @property
    def layer_sec_per_vector(self) -> float:
        return max(self.seconds - self.input_seconds, 0.0) / self.N

    @property
    def layer_sec_per_vector_layer(self) -> float:
        return self.layer_sec_per_vector / self.T

    CSV_HEADER = ("T", "N", "m", "p", "repetitions", "seconds", "vectors_per_second",
                  "sec_per_vector_layer", "layer_sec_per_vector_layer",
                  "reference_sec_per_vector_layer")

    def row(self):
        return (self.T, self.N, self.m, self.p, self.repetitions, repr(self.seconds),
                repr(self.vectors_per_second), repr(self.sec_per_vector_layer),
                repr(self.layer_sec_per_vector_layer), repr(REFERENCE_SEC_PER_VECTOR_LAYER))


def _best(fn, repetitions):
    best = np.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(params: EncoderParams, N: int, repetitions: int = 3, seed: int = 0) -> BenchReport:
    """Time the forward pass over ``N`` standard normal vectors.

    Each timing is the best of ``repetitions`` runs after one warm-up call.
    """
    if N < 1 or repetitions < 1:
        raise ValueError("N and repetitions must be positive")
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(rng.standard_normal((N, params.m)))
    ptr, idx = params.structure.csr()
    last = params.layer_of[-1]

    def full():
        _kernels.encoder_forward(params._WT, params._STs, params.t, params.s,
                                 params.layer_of, ptr, idx, X, False)

    def head():
        _kernels.input_stage(params._WT, params.t[last], params.s[last], ptr, idx, X)

    full()
    head()
    return BenchReport(params.T, N, params.m, params.p, repetitions,
                       _best(full, repetitions), _best(head, repetitions))


def bench_depths(D, gs, depths, N: int, repetitions: int = 3, seed: int = 0) -> list[BenchReport]:
    """One report per depth for encoders built from the same dictionary."""
    return [bench(init_from_dictionary(D, gs, T=T), N, repetitions, seed) for T in depths]


def spread(values) -> float:
    """Largest relative deviation from the mean."""
    v = np.asarray(values, dtype=np.float64)
    return float(np.max(np.abs(v / v.mean() - 1.0)))


def scaling_summary(reports: list[BenchReport]) -> dict[str, float]:
    """Flatness of the per-layer cost across depths (reported, never enforced)."""
    return {
        "raw_spread": spread([r.sec_per_vector_layer for r in reports]),
        "layer_spread": spread([r.layer_sec_per_vector_layer for r in reports]),
    }
