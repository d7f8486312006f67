import numpy as np
import pytest

from structsparse import GroupStructure, init_from_dictionary
from structsparse.harness.bench import (REFERENCE_SEC_PER_VECTOR_LAYER, BenchReport, bench,
                                        bench_depths, scaling_summary, spread)
from structsparse.harness.synth import random_dictionary


@pytest.fixture(scope="module")
def model():
    rng = np.random.default_rng(0)
    return random_dictionary(100, 256, rng), GroupStructure.contiguous((32,) * 8, 0.1, 0.05)


class TestReport:
    def test_derived_quantities(self):
        r = BenchReport(T=4, N=1000, m=10, p=20, repetitions=1, seconds=2.0, input_seconds=0.4)
        assert r.vectors_per_second == 500.0
        assert r.sec_per_vector == 2e-3
        assert r.sec_per_vector_layer == 5e-4
        assert r.layer_sec_per_vector == pytest.approx(1.6e-3)
        assert r.layer_sec_per_vector_layer == pytest.approx(4e-4)
        row = r.row()
        assert len(row) == len(BenchReport.CSV_HEADER)
        assert float(row[-1]) == REFERENCE_SEC_PER_VECTOR_LAYER

    def test_spread(self):
        assert spread([1.0, 1.0, 1.0]) == 0.0
        assert spread([0.5, 1.5]) == pytest.approx(0.5)

    def test_invalid(self, model):
        D, gs = model
        with pytest.raises(ValueError):
            bench(init_from_dictionary(D, gs, T=2), N=0)


class TestScaling:
    def test_doubling_depth(self, model):
        D, gs = model
        a, b = bench_depths(D, gs, (4, 8), N=5000)
        ratio = b.layer_sec_per_vector / a.layer_sec_per_vector
        assert 1.6 <= ratio <= 2.4, ratio

    def test_doubling_batch(self, model):
        D, gs = model
        P = init_from_dictionary(D, gs, T=4)
        a, b = bench(P, 5000), bench(P, 10000)
        ratio = b.seconds / a.seconds
        assert 1.6 <= ratio <= 2.4, ratio

    def test_summary_keys(self, model):
        D, gs = model
        s = scaling_summary(bench_depths(D, gs, (2, 4), N=500, repetitions=1))
        assert set(s) == {"raw_spread", "layer_spread"}
