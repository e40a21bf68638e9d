import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedcorr.compressors import (
    PredictorMemory,
    SparseResidual,
    expand,
    pca_compress,
    pca_decompress,
    predictive_encode,
    predictor_fit,
    predictor_roundtrip,
    subspace_project,
    subspace_reconstruct,
    svd_diag_decode,
    svd_diag_encode,
    svd_project_left,
    svd_reconstruct_left,
    topk_count,
    topk_sparsify,
)
from fedcorr.errors import InvalidInput, ShapeMismatch
from fedcorr.metrics import PcaBasis, narrow_pca, narrow_svd
from fedcorr.numerics import thin_svd
from fedcorr.updates import UpdateMatrix, flat_spec
from oracles import brute_topk_error, random_orthonormal, tail_energy_mse


def as_update_matrix(a):
    a = np.asarray(a, dtype=float)
    return UpdateMatrix(a, flat_spec(a.size, m=a.shape[0], n=a.shape[1]), 0)


E1 = np.array([[1.0], [0.0]])


class TestSvdLeft:
    def test_row_selection(self):
        np.testing.assert_array_equal(svd_project_left(as_update_matrix([[2, 3], [9, 9]]), E1), [[2, 3]])

    def test_lossless_when_basis_covers_range(self, rng):
        g = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
        u = thin_svd(g).u[:, :2]
        recon = svd_reconstruct_left(svd_project_left(as_update_matrix(g), u), u)
        np.testing.assert_allclose(recon, g, atol=1e-10)

    def test_top_component_mse(self):
        g = np.diag([2.0, 1.0])
        u = thin_svd(g).u[:, :1]
        recon = svd_reconstruct_left(svd_project_left(as_update_matrix(g), u), u)
        assert np.mean((recon - g) ** 2) == pytest.approx(0.25, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            svd_project_left(as_update_matrix(np.eye(3)), E1)

    def test_eckart_young(self, rng):
        for _ in range(10):
            g = rng.standard_normal((8, 6))
            t = narrow_svd(g, 0.7)
            recon = svd_reconstruct_left(svd_project_left(as_update_matrix(g), t.u_r), t.u_r)
            mse = np.mean((recon - g) ** 2)
            assert mse == pytest.approx(tail_energy_mse(g, t.r), abs=1e-8)
            for _ in range(20):
                b = random_orthonormal(rng, 8, t.r)
                assert mse <= np.mean((b @ b.T @ g - g) ** 2) + 1e-12


class TestSvdDiag:
    def test_hand_value(self):
        g = np.diag([2.0, 1.0])
        diag = svd_diag_encode(as_update_matrix(g), E1, E1)
        np.testing.assert_array_equal(diag, [2])
        np.testing.assert_array_equal(svd_diag_decode(diag, E1, E1), [[2, 0], [0, 0]])

    def test_full_rank_exact(self, rng):
        g = rng.standard_normal((5, 4))
        res = thin_svd(g)
        diag = svd_diag_encode(as_update_matrix(g), res.u, res.v)
        np.testing.assert_allclose(svd_diag_decode(diag, res.u, res.v), g, atol=1e-8)

    def test_annihilated(self):
        g = np.array([[0.0, 0.0], [3.0, 4.0]])
        diag = svd_diag_encode(as_update_matrix(g), E1, E1)
        np.testing.assert_array_equal(diag, [0])
        np.testing.assert_array_equal(svd_diag_decode(diag, E1, E1), np.zeros((2, 2)))

    def test_rank_mismatch(self):
        with pytest.raises(ShapeMismatch):
            svd_diag_encode(as_update_matrix(np.eye(2)), E1, np.eye(2))


class TestPcaCodec:
    basis = narrow_pca([[1, 1], [1, -1]], 0.5)

    def test_mean_maps_to_origin(self):
        np.testing.assert_allclose(pca_compress(self.basis.mu, self.basis), [0], atol=1e-15)

    def test_mean_only_codec(self):
        b = PcaBasis(np.zeros((3, 0)), np.array([1.0, 2.0, 3.0]))
        assert pca_compress([5, 5, 5], b).shape == (0,)
        np.testing.assert_array_equal(pca_decompress([], b), [1, 2, 3])

    def test_hand_example(self):
        coeffs = pca_compress([1, -1], self.basis)
        sign = np.sign(self.basis.q_r[1, 0])
        np.testing.assert_allclose(coeffs, [-1 * sign], atol=1e-12)
        np.testing.assert_allclose(pca_decompress(coeffs, self.basis), [1, -1], atol=1e-12)

    def test_affine_projection_idempotent(self, rng):
        samples = rng.standard_normal((10, 6)) + 3.0
        b = narrow_pca(samples, 0.9)
        for _ in range(10):
            once = pca_decompress(pca_compress(rng.standard_normal(6), b), b)
            twice = pca_decompress(pca_compress(once, b), b)
            np.testing.assert_allclose(twice, once, atol=1e-10)

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatch):
            pca_compress([1, 2, 3], self.basis)
        with pytest.raises(ShapeMismatch):
            pca_decompress([1, 2], self.basis)


class TestSubspace:
    u = np.array([[1.0], [0.0], [0.0]])

    def test_coordinate_projection(self):
        c = subspace_project([2, 3, 4], self.u)
        np.testing.assert_array_equal(c, [2])
        np.testing.assert_array_equal(subspace_reconstruct(c, self.u), [2, 0, 0])

    def test_in_subspace_exact(self, rng):
        u = random_orthonormal(rng, 6, 3)
        g = u @ rng.standard_normal(3)
        np.testing.assert_allclose(subspace_reconstruct(subspace_project(g, u), u), g, atol=1e-12)

    def test_orthogonal_input(self):
        np.testing.assert_array_equal(subspace_reconstruct(subspace_project([0, 1, 1], self.u), self.u), [0, 0, 0])

    @given(arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)))
    def test_contraction_and_idempotence(self, g):
        u = random_orthonormal(np.random.default_rng(0), 5, 2)
        once = subspace_reconstruct(subspace_project(g, u), u)
        assert np.linalg.norm(once) <= np.linalg.norm(g) * (1 + 1e-12) + 1e-12
        twice = subspace_reconstruct(subspace_project(once, u), u)
        np.testing.assert_allclose(twice, once, atol=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            subspace_project([1, 2], self.u)


class TestTopk:
    def test_largest_magnitude(self):
        s = topk_sparsify([3, -5, 1], 1 / 3)
        assert s.indices.tolist() == [1] and s.values.tolist() == [-5]

    def test_full_fraction_identity(self, rng):
        v = rng.standard_normal(9)
        np.testing.assert_array_equal(expand(topk_sparsify(v, 1.0)), v)

    def test_count_rounds_up(self):
        assert topk_count(41, 0.05) == 3
        assert topk_sparsify(np.arange(41.0), 0.05).k == 3

    def test_at_least_one(self):
        assert topk_sparsify(np.ones(5), 0.01).k == 1

    def test_ties_prefer_lower_index(self):
        s = topk_sparsify([1, -2, 2, 2, 0], 0.4)
        assert s.indices.tolist() == [1, 2]

    @pytest.mark.parametrize("fraction", [0.0, -0.1, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(InvalidInput):
            topk_sparsify([1.0, 2.0], fraction)

    @given(arrays(np.float64, st.integers(1, 10), elements=st.floats(-100, 100)), st.floats(0.01, 1.0))
    def test_matches_brute_force(self, v, fraction):
        s = topk_sparsify(v, fraction)
        assert np.all(np.diff(s.indices) > 0)
        dropped = v - expand(s)
        assert dropped @ dropped == pytest.approx(brute_topk_error(v, s.k), abs=1e-9)


class TestPredictor:
    def test_scalar_multiple(self, rng):
        prev = rng.standard_normal(4)
        mem = PredictorMemory(4, 1)
        mem.shift_in(prev)
        a = predictor_fit(mem, 3 * prev)
        np.testing.assert_allclose(a, [3], atol=1e-12)
        np.testing.assert_allclose(mem.columns @ a, 3 * prev, atol=1e-12)

    def test_cold_start(self):
        mem = PredictorMemory(3, 2)
        coeffs, residual = predictive_encode(mem, [1.0, -2.0, 3.0], 1.0)
        np.testing.assert_array_equal(coeffs, [0, 0])
        np.testing.assert_array_equal(expand(residual), [1, -2, 3])

    def test_orthonormal_history(self):
        mem = PredictorMemory(3, 2)
        mem.shift_in([0.0, 1.0, 0.0])
        mem.shift_in([1.0, 0.0, 0.0])
        coeffs, residual = predictive_encode(mem, [2.0, 3.0, 5.0], 1 / 3)
        np.testing.assert_allclose(coeffs, [2, 3], atol=1e-12)
        np.testing.assert_allclose(expand(residual), [0, 0, 5], atol=1e-12)
        np.testing.assert_allclose(predictor_roundtrip(mem, coeffs, residual), [2, 3, 5], atol=1e-12)

    def test_lossless_residual(self, rng):
        mem = PredictorMemory(6, 3)
        for _ in range(2):
            mem.shift_in(rng.standard_normal(6))
        g = rng.standard_normal(6)
        coeffs, residual = predictive_encode(mem, g, 1.0)
        np.testing.assert_allclose(predictor_roundtrip(mem, coeffs, residual), g, atol=1e-12)

    def test_zero_everything(self):
        mem = PredictorMemory(3, 2)
        zero = SparseResidual(3, np.array([0]), np.array([0.0]))
        np.testing.assert_array_equal(predictor_roundtrip(mem, np.zeros(2), zero), np.zeros(3))

    def test_shift_order_and_fill(self):
        mem = PredictorMemory(2, 2)
        for i in range(3):
            mem.shift_in([i, i])
        assert mem.filled == 2
        np.testing.assert_array_equal(mem.columns, [[2, 1], [2, 1]])

    def test_copies_are_bitwise_identical(self, rng):
        mem = PredictorMemory(5, 3)
        for _ in range(3):
            mem.shift_in(rng.standard_normal(5))
        twin = mem.copy()
        coeffs, residual = predictive_encode(mem, rng.standard_normal(5), 0.4)
        assert np.array_equal(predictor_roundtrip(mem, coeffs, residual), predictor_roundtrip(twin, coeffs, residual))

    def test_shape_mismatch(self):
        mem = PredictorMemory(3, 2)
        with pytest.raises(ShapeMismatch):
            predictor_fit(mem, [1.0, 2.0])
        with pytest.raises(ShapeMismatch):
            mem.shift_in([1.0])

    def test_residual_orthogonal_and_monotone_in_h(self, rng):
        for _ in range(30):
            d = int(rng.integers(3, 9))
            history = rng.standard_normal((d, 4))
            g = rng.standard_normal(d)
            norms = []
            for h in range(1, 5):
                mem = PredictorMemory(d, h)
                for col in history[:, :h][:, ::-1].T:
                    mem.shift_in(col)
                a = predictor_fit(mem, g)
                resid = g - mem.columns @ a
                np.testing.assert_allclose(mem.columns.T @ resid, 0, atol=1e-8)
                norms.append(np.linalg.norm(resid))
            assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_grid_perturbation_never_improves(self, rng):
        for _ in range(30):
            d, h = int(rng.integers(2, 7)), int(rng.integers(1, 4))
            mem = PredictorMemory(d, h)
            for _ in range(h):
                mem.shift_in(rng.standard_normal(d))
            g = rng.standard_normal(d)
            a = predictor_fit(mem, g)
            best = np.linalg.norm(g - mem.columns @ a)
            for step in itertools.product((-1e-3, 0.0, 1e-3), repeat=h):
                assert np.linalg.norm(g - mem.columns @ (a + np.array(step))) >= best - 1e-12
