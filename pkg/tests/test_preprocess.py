"""HVG selection, log-normalization, and PCA contracts with brute-force oracles."""

import numpy as np
import pytest

from dpgen.errors import DataFormatError, DegenerateDataError
from dpgen.preprocess import (
    ExpressionMatrix,
    log_normalize,
    pca_fit_transform,
    select_hvg,
)


def _matrix(values, prefix="s"):
    values = np.asarray(values, dtype=float)
    return ExpressionMatrix(
        values,
        [f"{prefix}{i}" for i in range(values.shape[0])],
        [f"g{j}" for j in range(values.shape[1])],
    )


class TestExpressionMatrix:
    def test_id_length_mismatch_rejected(self):
        with pytest.raises(DataFormatError):
            ExpressionMatrix(np.zeros((2, 3)), ["a"], ["g0", "g1", "g2"])

    def test_subsets_preserve_ids(self):
        x = _matrix([[1, 2, 3], [4, 5, 6]])
        sub = x.subset_genes([2, 0])
        assert sub.gene_ids == ["g2", "g0"]
        np.testing.assert_array_equal(sub.values, [[3, 1], [6, 4]])
        spots = x.subset_spots([1])
        assert spots.spot_ids == ["s1"]


class TestLogNormalize:
    def test_row_formula(self):
        out = log_normalize(_matrix([[1, 1, 2]]), scale=4.0)
        np.testing.assert_allclose(out.values[0], [np.log(2), np.log(2), np.log(3)])

    def test_zeros_map_to_zero(self):
        out = log_normalize(_matrix([[0, 0, 5]]), scale=1.0)
        np.testing.assert_allclose(out.values[0], [0.0, 0.0, np.log(2)])

    def test_zero_row_errors_with_spot_id(self):
        with pytest.raises(DegenerateDataError) as err:
            log_normalize(_matrix([[1, 1], [0, 0]]))
        assert "s1" in str(err.value)

    def test_monotone_per_row_and_zero_fixed(self):
        rng = np.random.default_rng(5)
        raw = rng.integers(0, 20, size=(6, 10)).astype(float)
        raw[:, 0] = 0.0
        raw[:, 1] = 30.0  # keep library sizes positive
        out = log_normalize(_matrix(raw))
        assert np.all(out.values[:, 0] == 0.0)
        for i in range(raw.shape[0]):
            order = np.argsort(raw[i])
            assert np.all(np.diff(out.values[i][order]) >= 0)


class TestSelectHvg:
    def test_top_two_variances(self):
        # equal library sizes, log-normalized spreads clearly ordered:
        # g3 (10 vs 0) > g1 (1 vs 9) > g2 (3 vs 5) > g0 (constant)
        x = _matrix([[4, 1, 3, 10], [4, 9, 5, 0], [4, 1, 3, 10], [4, 9, 5, 0]])
        assert select_hvg(x, 2) == [1, 3]

    def test_tie_break_by_lower_index(self):
        x = _matrix([[1, 1, 1], [1, 1, 1]])
        assert select_hvg(x, 2) == [0, 1]

    def test_matches_brute_force_sort(self):
        rng = np.random.default_rng(11)
        x = _matrix(rng.integers(1, 50, size=(20, 50)).astype(float))
        got = select_hvg(x, 10)
        variances = log_normalize(x).values.var(axis=0, ddof=1)
        oracle = sorted(sorted(range(50), key=lambda j: (-variances[j], j))[:10])
        assert got == oracle

    def test_invalid_counts(self):
        x = _matrix([[1, 2], [3, 4]])
        with pytest.raises(ValueError):
            select_hvg(x, 0)
        with pytest.raises(ValueError):
            select_hvg(x, 3)


class TestPca:
    def test_rank_one_exact_reconstruction(self):
        u = np.array([1.0, 2.0, 3.0])
        v = np.array([2.0, -1.0, 0.5, 4.0])
        x = np.outer(u, v)
        model, scores = pca_fit_transform(x, 1)
        recon = model.inverse_transform(scores)
        assert np.max(np.abs(recon - x)) <= 1e-10

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 10))
        model, scores = pca_fit_transform(x, 10)
        recon = model.inverse_transform(scores)
        assert np.max(np.abs(recon - x)) <= 1e-8

    def test_identical_rows_zero_variance(self):
        x = np.tile([1.0, 2.0, 3.0], (5, 1))
        model, scores = pca_fit_transform(x, 2)
        np.testing.assert_allclose(model.explained_variance, 0.0, atol=1e-20)
        assert model.rank_deficient

    def test_scores_centered(self):
        rng = np.random.default_rng(4)
        _, scores = pca_fit_transform(rng.normal(size=(25, 8)) + 7.0, 5)
        assert np.max(np.abs(scores.mean(axis=0))) <= 1e-10

    def test_components_orthonormal(self):
        rng = np.random.default_rng(6)
        model, _ = pca_fit_transform(rng.normal(size=(40, 12)), 6)
        gram = model.components @ model.components.T
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-8)

    def test_explained_variance_matches_score_columns(self):
        rng = np.random.default_rng(7)
        model, scores = pca_fit_transform(rng.normal(size=(30, 9)), 4)
        np.testing.assert_allclose(model.explained_variance, scores.var(axis=0, ddof=1), atol=1e-8)
        assert np.all(np.diff(model.explained_variance) <= 1e-12)

    def test_deterministic_sign_convention(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(20, 6))
        model_a, scores_a = pca_fit_transform(x, 3)
        model_b, scores_b = pca_fit_transform(x.copy(), 3)
        np.testing.assert_array_equal(model_a.components, model_b.components)
        np.testing.assert_array_equal(scores_a, scores_b)
        pivots = np.argmax(np.abs(model_a.components), axis=1)
        assert np.all(model_a.components[np.arange(3), pivots] >= 0)

    def test_k_out_of_range(self):
        with pytest.raises(ValueError):
            pca_fit_transform(np.zeros((4, 3)), 4)
