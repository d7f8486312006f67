import numpy as np
import pytest

from structsparse import (DescentConfig, DictStats, Dictionary, GroupStructure, OnlineConfig,
                          bcofb_solve, dict_update, online_run)
from structsparse import _kernels
from structsparse.modeling import init_dictionary_from_stream
from structsparse.solvers import EXACT


def _recon(D, X, Z):
    R = X - D.atoms @ Z
    return 0.5 * np.sum(R * R)


def _stationary(rng, m=12, q=10, n=2400, k=2):
    G = Dictionary.normalize(rng.standard_normal((m, q)))
    Z = np.zeros((q, n))
    for i in range(n):
        on = rng.choice(q, size=k, replace=False)
        Z[on, i] = rng.uniform(1, 3, k) * rng.choice((-1, 1), k)
    return G.atoms @ Z + 0.05 * rng.standard_normal((m, n))


class TestInitDictionary:
    def test_permutation_when_square(self, rng):
        X = rng.standard_normal((5, 6))
        D = init_dictionary_from_stream(X, 6, seed=1)
        Xn = X / np.linalg.norm(X, axis=0)
        matched = sorted(int(np.argmin(np.linalg.norm(Xn - D.atoms[:, [j]], axis=0))) for j in range(6))
        assert matched == list(range(6))
        np.testing.assert_allclose(np.linalg.norm(D.atoms, axis=0), 1.0, atol=1e-12)

    def test_deterministic(self, rng):
        X = rng.standard_normal((8, 100))
        a = init_dictionary_from_stream(X, 20, seed=3)
        b = init_dictionary_from_stream(X, 20, seed=3)
        np.testing.assert_array_equal(a.atoms, b.atoms)

    def test_distinct_columns(self, rng):
        X = rng.standard_normal((8, 1000))
        D = init_dictionary_from_stream(X, 64, seed=0)
        assert D.p == 64
        assert np.unique(D.atoms.round(12), axis=1).shape[1] == 64

    def test_too_few_samples(self, rng):
        with pytest.raises(ValueError):
            init_dictionary_from_stream(rng.standard_normal((4, 3)), 5)


class TestDictUpdate:
    def test_optimal_dictionary_is_fixed_point(self, rng):
        D0 = Dictionary.normalize(rng.standard_normal((6, 5)))
        Z = rng.standard_normal((5, 40))
        X = D0.atoms @ Z
        # the least-squares dictionary on these codes is D0 itself
        ls = np.linalg.lstsq(Z.T, X.T, rcond=None)[0].T
        np.testing.assert_allclose(ls, D0.atoms, atol=1e-10)
        D1 = dict_update(D0, DictStats.zeros(6, 5).accumulate(X, Z))
        np.testing.assert_allclose(D1.atoms, D0.atoms, atol=1e-10)

    def test_zero_codes(self, rng):
        D0 = Dictionary.normalize(rng.standard_normal((6, 5)))
        stats = DictStats.zeros(6, 5).accumulate(rng.standard_normal((6, 10)), np.zeros((5, 10)))
        np.testing.assert_array_equal(dict_update(D0, stats).atoms, D0.atoms)

    def test_objective_nonincreasing(self, rng):
        for _ in range(50):
            m, p, n = rng.integers(3, 10), rng.integers(2, 12), rng.integers(5, 40)
            D0 = Dictionary.normalize(rng.standard_normal((m, p)))
            X = 3 * rng.standard_normal((m, n))
            Z = rng.standard_normal((p, n)) * (rng.random((p, n)) < 0.4)
            D1 = dict_update(D0, DictStats.zeros(m, p).accumulate(X, Z))
            assert _recon(D1, X, Z) <= _recon(D0, X, Z) + 1e-9
            assert np.all(np.linalg.norm(D1.atoms, axis=0) <= 1 + 1e-12)

    def test_stats(self, rng):
        X = rng.standard_normal((4, 7))
        Z = rng.standard_normal((3, 7))
        s = DictStats.zeros(4, 3).accumulate(X, Z).accumulate(X, Z, forget=0.5)
        np.testing.assert_allclose(s.A, 1.5 * Z @ Z.T)
        np.testing.assert_allclose(s.B, 1.5 * X @ Z.T)
        assert s.count == pytest.approx(10.5)
        np.testing.assert_allclose(s.A, s.A.T)
        assert np.min(np.linalg.eigvalsh(s.A)) >= -1e-12

    def test_empty_stats(self, rng):
        with pytest.raises(ValueError):
            dict_update(Dictionary(np.eye(2)), DictStats.zeros(2, 2))


class TestOnlineRun:
    def test_constant_stream(self, rng):
        x = rng.standard_normal(8)
        X = np.repeat(x[:, None], 200, axis=1)
        res = online_run(X, p=4, lam=0.1, T=2, cfg=OnlineConfig(window=50, step=25))
        gs = GroupStructure.singletons(4, 0.1)
        best = bcofb_solve(x, res.dictionary, gs, EXACT).final_objective
        assert abs(res.metrics[-1].objective - best) <= 1e-6

    def test_stationary_stream_improves(self, rng):
        X = _stationary(rng)
        cfg = OnlineConfig(window=200, step=50, forget=0.9)
        obj = online_run(X, p=12, lam=0.5, T=3, cfg=cfg).objectives
        q = len(obj) // 4
        assert obj[-q:].mean() < obj[:q].mean()

    def test_frozen_metrics_constant(self, rng):
        period = rng.standard_normal((6, 30))
        X = np.tile(period, (1, 8))
        cfg = OnlineConfig(window=60, step=30, dict_update_period=None,
                           descent=DescentConfig(initial_step=0.0, epochs=2))
        obj = online_run(X, p=6, lam=0.2, T=3, cfg=cfg).objectives
        np.testing.assert_allclose(obj, obj[0], rtol=0, atol=1e-12)

    def test_warm_start_handoff(self, rng):
        X = _stationary(rng, n=600)
        seen = []
        online_run(X, p=8, lam=0.5, T=2, cfg=OnlineConfig(window=200, step=100),
                   on_window=lambda k, pin, pout: seen.append((pin, pout)))
        assert len(seen) == 5
        for (_, prev_out), (next_in, _) in zip(seen, seen[1:]):
            for name in ("W", "S", "t", "s"):
                np.testing.assert_array_equal(getattr(next_in, name), getattr(prev_out, name))

    def test_window_metrics(self, rng):
        X = _stationary(rng, n=500)
        res = online_run(X, p=8, lam=0.5, T=2, cfg=OnlineConfig(window=200, step=100))
        assert [(w.start, w.stop) for w in res.metrics] == [(0, 200), (100, 300), (200, 400), (300, 500)]
        assert all(w.dict_updated for w in res.metrics)
        assert np.all(np.linalg.norm(res.dictionary.atoms, axis=0) <= 1 + 1e-12)

    def test_no_exact_solver(self, rng, monkeypatch):
        def boom(*a, **k):
            raise AssertionError("exact solver called on the online path")

        monkeypatch.setattr(_kernels, "bcofb", boom)
        monkeypatch.setattr(_kernels, "ista", boom)
        X = _stationary(rng, n=400)
        for mode in ("free", "dictionary"):
            online_run(X, p=8, lam=0.5, T=2, cfg=OnlineConfig(window=200, step=100, param_mode=mode))

    def test_short_stream(self, rng):
        with pytest.raises(ValueError):
            online_run(rng.standard_normal((4, 10)), p=4, cfg=OnlineConfig(window=20, step=5))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            OnlineConfig(window=10, step=20)
        with pytest.raises(ValueError):
            OnlineConfig(dict_update_period=0)
        with pytest.raises(ValueError):
            OnlineConfig(forget=0.0)

    def test_defaults(self):
        cfg = OnlineConfig()
        assert (cfg.window, cfg.step, cfg.dict_update_period) == (1000, 100, 1)
