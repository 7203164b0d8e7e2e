import logging
import math

import numpy as np
import pytest

from gradcheck import check_grads
from stalign.alignment import (AlignmentBatch, Projection, contrastive_loss, duplicate_texts,
                               project_and_normalize, similarity_matrix)
from stalign.autodiff import DiffTensor


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def identity_projection(d):
    proj = Projection(np.random.default_rng(0), d, d, dtype=np.float64)
    proj.linear.weight.data[:] = np.eye(d)
    return proj


class TestProjection:
    def test_closed_form(self):
        out = project_and_normalize(DiffTensor(np.array([[3.0, 4.0]])), identity_projection(2))
        np.testing.assert_allclose(out.data, [[0.6, 0.8]], atol=1e-12)

    def test_unit_norm(self, rng):
        proj = Projection(rng, 64, 32)
        out = proj(DiffTensor(rng.normal(size=(10, 64)).astype(np.float32)))
        np.testing.assert_allclose(np.linalg.norm(out.data.astype(np.float64), axis=1), 1.0, atol=1e-6)

    def test_positive_homogeneity(self, rng):
        proj = Projection(rng, 16, 8, dtype=np.float64)
        x = rng.normal(size=(3, 16))
        a = proj(DiffTensor(x)).data
        b = proj(DiffTensor(2 * x)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_vector_is_flagged_not_nan(self, caplog):
        with caplog.at_level(logging.WARNING):
            out = project_and_normalize(DiffTensor(np.zeros((1, 2))), identity_projection(2))
        assert np.all(np.isfinite(out.data))
        assert "near-zero norm" in caplog.text


class TestSimilarity:
    def test_self_dot(self, rng):
        x = unit_rows(rng, 5, 8)
        S = similarity_matrix(AlignmentBatch(x, x)).data
        np.testing.assert_allclose(np.diag(S), 1.0, atol=1e-12)

    def test_orthonormal(self):
        x = np.eye(4)
        np.testing.assert_array_equal(similarity_matrix(AlignmentBatch(x, x)).data, np.eye(4))

    def test_double_loop_oracle(self, rng):
        x, y = unit_rows(rng, 6, 8), unit_rows(rng, 6, 8)
        S = similarity_matrix(AlignmentBatch(x, y)).data
        for i in range(6):
            for j in range(6):
                assert abs(S[i, j] - sum(x[i, k] * y[j, k] for k in range(8))) < 1e-6
        assert np.all(np.abs(S) <= 1 + 1e-12)


class TestLoss:
    def test_identical_embeddings(self):
        x = np.tile([[1.0, 0.0, 0.0]], (4, 1))
        out = contrastive_loss(AlignmentBatch(x, x, 0.05)).floats()
        assert abs(out["l_v2t"] - math.log(4)) < 1e-6
        assert abs(out["total"] - 2 * math.log(4)) < 1e-5

    def test_hand_derived_two_by_two(self):
        x = np.eye(2)
        out = contrastive_loss(AlignmentBatch(x, x, 1.0)).floats()
        one_way = -math.log(math.e / (math.e + 1))
        assert abs(out["l_v2t"] - 0.3133) < 1e-4 and abs(out["l_v2t"] - one_way) < 1e-12
        assert abs(out["total"] - 0.6266) < 1e-4

    def test_total_is_sum(self, rng):
        b = AlignmentBatch(unit_rows(rng, 8, 16), unit_rows(rng, 8, 16))
        out = contrastive_loss(b).floats()
        assert abs(out["total"] - out["l_v2t"] - out["l_t2v"]) < 1e-6

    def test_naive_oracle(self, rng):
        x, y = unit_rows(rng, 5, 8), unit_rows(rng, 5, 8)
        S = x @ y.T / 0.1
        v2t = -np.mean([S[i, i] - np.log(np.exp(S[i]).sum()) for i in range(5)])
        t2v = -np.mean([S[i, i] - np.log(np.exp(S[:, i]).sum()) for i in range(5)])
        out = contrastive_loss(AlignmentBatch(x, y, 0.1)).floats()
        assert abs(out["l_v2t"] - v2t) < 1e-9 and abs(out["l_t2v"] - t2v) < 1e-9

    def test_joint_permutation(self, rng):
        x, y = unit_rows(rng, 8, 16), unit_rows(rng, 8, 16)
        perm = rng.permutation(8)
        a = contrastive_loss(AlignmentBatch(x, y)).total.item()
        b = contrastive_loss(AlignmentBatch(x[perm], y[perm])).total.item()
        assert abs(a - b) < 1e-6

    def test_needs_two_pairs(self):
        with pytest.raises(ValueError, match="at least 2"):
            contrastive_loss(AlignmentBatch(np.eye(1), np.eye(1)))

    def test_rejects_nonpositive_sigma(self):
        with pytest.raises(ValueError, match="positive"):
            contrastive_loss(AlignmentBatch(np.eye(2), np.eye(2), 0.0))

    def test_validate(self, rng):
        AlignmentBatch(unit_rows(rng, 3, 4), unit_rows(rng, 3, 4)).validate()
        with pytest.raises(ValueError, match="unit norm"):
            AlignmentBatch(2 * np.eye(3), np.eye(3)).validate()
        with pytest.raises(ValueError, match="shape"):
            AlignmentBatch(np.eye(3), np.eye(4)).validate()

    def test_monotone_in_sigma_for_dominant_matrix(self):
        x = np.eye(4)
        y = 0.9 * np.eye(4) + 0.1 * np.roll(np.eye(4), 1, axis=1)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        losses = [contrastive_loss(AlignmentBatch(x, y, s)).total.item() for s in (1, 0.5, 0.1, 0.05)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-3

    @pytest.mark.parametrize("seed", range(10))
    def test_dominant_bound(self, seed):
        r = np.random.default_rng(seed)
        B = 6
        while True:
            x = unit_rows(r, B, 8)
            y = x + 0.3 * r.normal(size=x.shape)
            y /= np.linalg.norm(y, axis=1, keepdims=True)
            S = x @ y.T
            d = np.diag(S)
            if np.all(d[:, None] >= S) and np.all(d[None, :] >= S):
                break
        assert contrastive_loss(AlignmentBatch(x, y, 0.05)).total.item() <= 2 * math.log(B) + 1e-9

    def test_sigma_gradient(self, rng):
        x, y = unit_rows(rng, 4, 6), unit_rows(rng, 4, 6)
        sigma = DiffTensor(np.array(0.3), requires_grad=True)
        err = check_grads(lambda: contrastive_loss(AlignmentBatch(x, y, sigma)).total, [sigma], h=1e-5)
        assert err < 1e-4

    def test_embedding_gradients(self, rng):
        x = DiffTensor(unit_rows(rng, 4, 6), requires_grad=True)
        y = DiffTensor(unit_rows(rng, 4, 6), requires_grad=True)
        assert check_grads(lambda: contrastive_loss(AlignmentBatch(x, y, 0.2)).total, [x, y]) < 1e-4

    def test_tower_swap_symmetry(self, rng):
        xa, ya = unit_rows(rng, 5, 6), unit_rows(rng, 5, 6)

        def grads(a, b):
            ta, tb = DiffTensor(a, requires_grad=True), DiffTensor(b, requires_grad=True)
            out = contrastive_loss(AlignmentBatch(ta, tb, 0.1))
            parts = out.floats()
            out.total.backward()
            return parts, ta.grad, tb.grad

        p1, gx, gy = grads(xa, ya)
        p2, gy2, gx2 = grads(ya, xa)
        assert abs(p1["l_v2t"] - p2["l_t2v"]) < 1e-12
        np.testing.assert_allclose(gx, gx2, atol=1e-12)
        np.testing.assert_allclose(gy, gy2, atol=1e-12)


def test_duplicate_texts():
    assert duplicate_texts(["a", "b", "a", "c", "b"]) == ["a", "b"]
    assert duplicate_texts(["a", "b"]) == []
