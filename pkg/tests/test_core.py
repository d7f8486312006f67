import numpy as np
import pytest

from structsparse import (Dictionary, GroupStructure, ProblemInstance, SparseCode, StepScale,
                          eval_objective, eval_objective_batch, step_scale)


class TestDictionary:
    def test_shapes(self, rng):
        D = Dictionary(rng.standard_normal((5, 7)))
        assert (D.m, D.p) == (5, 7)
        assert not D.atoms.flags.writeable

    def test_normalize(self, rng):
        D = Dictionary.normalize(3.0 * rng.standard_normal((6, 9)))
        np.testing.assert_allclose(np.linalg.norm(D.atoms, axis=0), 1.0, atol=1e-12)
        assert D.normalized

    @pytest.mark.parametrize("bad", [
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        np.array([[1.0, np.nan], [0.0, 1.0]]),
        np.array([[1.0, np.inf], [0.0, 1.0]]),
    ])
    def test_rejects_degenerate(self, bad):
        with pytest.raises(ValueError):
            Dictionary(bad)

    def test_normalized_flag_checked(self):
        with pytest.raises(ValueError):
            Dictionary(2.0 * np.eye(3), normalized=True)

    def test_submatrix(self, rng):
        D = Dictionary(rng.standard_normal((4, 6)))
        np.testing.assert_array_equal(D.submatrix([1, 4]), D.atoms[:, [1, 4]])


class TestGroupStructure:
    def test_contiguous(self):
        gs = GroupStructure.contiguous((2, 3), lam=0.1, mu=0.2)
        assert gs.p == 5 and gs.n_groups == 2
        np.testing.assert_array_equal(gs.labels, [0, 0, 1, 1, 1])
        np.testing.assert_array_equal(gs.lam, np.full(5, 0.1))
        np.testing.assert_array_equal(gs.mu, [0.2, 0.2])

    def test_singletons(self):
        gs = GroupStructure.singletons(4, 0.3)
        assert gs.n_groups == 4
        np.testing.assert_array_equal(gs.mu, np.zeros(4))

    @pytest.mark.parametrize("groups", [
        [[0, 1], [1, 2]],  # overlap
        [[0, 1], [3]],  # gap
        [[0], []],  # empty group
        [[0, -1]],
    ])
    def test_rejects_non_partition(self, groups):
        with pytest.raises(ValueError):
            GroupStructure(groups, 0.0, 0.0)

    def test_rejects_negative_weights(self):
        with pytest.raises(ValueError):
            GroupStructure([[0], [1]], [-0.1, 0.0], 0.0)
        with pytest.raises(ValueError):
            GroupStructure([[0], [1]], 0.0, [0.1, -0.1])

    def test_signed_mu_opt_in(self):
        gs = GroupStructure([[0], [1]], 0.0, [0.1, -0.1], allow_signed_mu=True)
        np.testing.assert_array_equal(gs.mu, [0.1, -0.1])

    def test_wrong_lengths(self):
        with pytest.raises(ValueError):
            GroupStructure([[0, 1], [2]], [0.1, 0.2], 0.0)
        with pytest.raises(ValueError):
            GroupStructure([[0, 1], [2]], 0.0, [0.1, 0.2, 0.3])

    def test_group_norms(self):
        gs = GroupStructure([[2, 0], [1]], 0.0, 0.0)
        z = np.array([3.0, -2.0, 4.0])
        np.testing.assert_allclose(gs.group_norms(z), [5.0, 2.0])
        Z = np.column_stack([z, 2 * z])
        np.testing.assert_allclose(gs.group_norms(Z), [[5.0, 10.0], [2.0, 4.0]])

    def test_digest_tracks_content(self):
        a = GroupStructure.contiguous((2, 2), 0.1, 0.2)
        b = GroupStructure.contiguous((2, 2), 0.1, 0.2)
        c = GroupStructure.contiguous((2, 2), 0.1, 0.3)
        assert a.digest() == b.digest() != c.digest()

    def test_with_weights(self):
        gs = GroupStructure.contiguous((2, 2)).with_weights(lam=0.5, mu=[0.1, 0.2])
        np.testing.assert_array_equal(gs.lam, np.full(4, 0.5))
        np.testing.assert_array_equal(gs.mu, [0.1, 0.2])


class TestSparseCode:
    def test_group_view(self):
        gs = GroupStructure([[0, 2], [1]], 0.0, 0.0)
        c = SparseCode(np.array([1.0, 2.0, 3.0]), gs)
        np.testing.assert_array_equal(c.group(0), [1.0, 3.0])
        np.testing.assert_array_equal(np.asarray(c), [1.0, 2.0, 3.0])

    def test_length_checked(self):
        with pytest.raises(ValueError):
            SparseCode(np.zeros(2), GroupStructure.singletons(3))


class TestProblemInstance:
    def test_shape_consistency(self, rng):
        D = Dictionary(rng.standard_normal((3, 4)))
        gs = GroupStructure.contiguous((2, 2))
        X = rng.standard_normal((3, 5))
        inst = ProblemInstance(X, D, gs, exact_codes=np.zeros((4, 5)), labels=np.arange(5),
                               per_sample_mu=np.zeros((2, 5)))
        assert inst.n == 5
        sub = inst.subset([1, 3])
        assert sub.n == 2
        np.testing.assert_array_equal(sub.labels, [1, 3])
        for bad in (dict(exact_codes=np.zeros((4, 4))), dict(labels=np.arange(4)),
                    dict(per_sample_mu=np.zeros((3, 5)))):
            with pytest.raises(ValueError):
                ProblemInstance(X, D, gs, **bad)
        with pytest.raises(ValueError):
            ProblemInstance(rng.standard_normal((2, 5)), D, gs)


class TestObjective:
    def test_hand_value(self):
        D = np.eye(2)
        gs = GroupStructure([[0, 1]], [0.1, 0.2], [0.5])
        x = np.array([1.0, 1.0])
        z = np.array([3.0, 4.0])
        # 0.5*(4 + 9) + 0.3 + 0.8 + 2.5
        assert eval_objective(x, z, D, gs) == pytest.approx(6.5 + 1.1 + 2.5, abs=1e-14)

    def test_batch_matches_single(self, rng):
        D = Dictionary.normalize(rng.standard_normal((6, 8)))
        gs = GroupStructure.contiguous((3, 5), 0.1, 0.2)
        X = rng.standard_normal((6, 4))
        Z = rng.standard_normal((8, 4))
        want = [eval_objective(X[:, n], Z[:, n], D, gs) for n in range(4)]
        np.testing.assert_allclose(eval_objective_batch(X, Z, D, gs), want, rtol=1e-13)

    def test_batch_signed_mu(self, rng):
        D = Dictionary.normalize(rng.standard_normal((4, 4)))
        gs = GroupStructure.contiguous((2, 2), 0.0, 0.0)
        X = rng.standard_normal((4, 3))
        Z = rng.standard_normal((4, 3))
        M = rng.uniform(-1, 1, (2, 3))
        base = eval_objective_batch(X, Z, D, gs)
        np.testing.assert_allclose(eval_objective_batch(X, Z, D, gs, mu=M),
                                   base + np.sum(M * gs.group_norms(Z), axis=0), rtol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            eval_objective(np.zeros(3), np.zeros(2), np.eye(2), GroupStructure.singletons(2))


class TestStepScale:
    def test_global_is_spectral_norm(self, rng):
        A = rng.standard_normal((7, 12))
        alpha = step_scale(A).alpha
        ref = np.linalg.norm(A, 2) ** 2
        assert ref <= alpha <= ref * 1.0002

    def test_per_group_bound(self, rng):
        A = rng.standard_normal((7, 12))
        gs = GroupStructure.contiguous((4, 8))
        alpha = step_scale(A, gs, "per_group_bound").alpha
        ref = max(np.linalg.norm(A[:, g], 2) ** 2 for g in gs.groups)
        assert ref <= alpha <= ref * 1.0002
        assert alpha <= step_scale(A).alpha

    def test_orthonormal(self):
        assert step_scale(np.eye(4)).alpha == pytest.approx(1.0001, rel=1e-9)

    def test_invalid(self):
        with pytest.raises(ValueError):
            StepScale(0.0, "global")
        with pytest.raises(ValueError):
            step_scale(np.eye(2), mode="bogus")
        with pytest.raises(ValueError):
            step_scale(np.eye(2), None, "per_group_bound")
