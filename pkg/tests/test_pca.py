import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_scores, char_poly_eigenvalues, t2_limit
from railbreak.pca import (DegenerateModelError, InsufficientDataError, PcaClassModel, PcaError,
                           TrainingSet, dispersion_stats, jacobi_eigh, rmse_curve, score,
                           score_many, select_order, t2_threshold, train)

# eigenvalues of the healthy-track-1 covariance, in the reference feature order
REFERENCE_SPECTRUM = [10962.00, 13377.12, 15264.30, 28151.90,
                      96724.82, 125065.94, 433733.11, 593724.04]

# (sigma_x, mu_x, D_x, sigma_y, mu_y, D_y) per phase-3 class
REFERENCE_DISPERSION = {
    "R1e1/4": (50.92, 19040, 0.13, 40.67, 14065, 0.12),
    "R1i1/4": (52.99, 20191, 0.14, 35.56, 11719, 0.11),
    "R2i1/4": (64.46, 21640, 0.20, 37.23, 12874, 0.11),
    "R2e1/4": (49.43, 16327, 0.15, 28.01, 9797, 0.08),
    "R1e2/4": (54.83, 19115, 0.15, 55.31, 18131, 0.17),
    "R1i2/4": (57.72, 21076, 0.16, 29.05, 11253, 0.07),
    "R2i2/4": (74.14, 24620, 0.22, 39.40, 12930, 0.12),
    "R2e2/4": (38.83, 13902, 0.11, 28.67, 8891, 0.09),
    "R1e3/4": (57.45, 20162, 0.16, 85.07, 24668, 0.30),
    "R1i3/4": (61.44, 21409, 0.17, 18.19, 6561, 0.05),
    "R2i3/4": (71.81, 29312, 0.17, 34.15, 11606, 0.10),
    "R2e3/4": (28.28, 7505, 0.11, 28.27, 8672, 0.09),
}

# independent F-quantile oracle, frozen
T2_LIMITS = {(500, 4): 9.636700847053541, (500, 1): 3.867881902962509,
             (100, 2): 6.3038654953439215, (20, 3): 11.254534937086113}


def random_class(seed, K=60, n=4):
    rng = np.random.default_rng(seed)
    mix = rng.normal(size=(n, n)) * rng.uniform(0.2, 3, n)
    return rng.normal(size=(K, n)) @ mix + rng.uniform(-5, 5, n)


symmetric = st.integers(2, 6).flatmap(
    lambda n: arrays(np.float64, (n, n), elements=st.floats(-100, 100, allow_subnormal=False))
).map(lambda a: (a + a.T) / 2)


class TestWorkedExample:
    def test_two_dimensional_scores(self):
        x = np.array([[1, 0], [-1, 0], [0, 0.5], [0, -0.5]], dtype=float)
        model = train(x, order=1)
        np.testing.assert_allclose(model.eigenvalues, [0.5, 0.125])
        np.testing.assert_allclose(model.transform[:, 0], [1, 0])
        s = score(model, [1.0, 1.0])
        # residual (0, 1) weighted by the inverse covariance, 1 / 0.125
        assert s.reconstruction_error == pytest.approx(8.0, rel=1e-6)
        # projection 1 on the first axis, variance 0.5
        assert s.t_squared == pytest.approx(2.0, rel=1e-12)

    def test_reference_spectrum_rmse(self):
        curve = rmse_curve(REFERENCE_SPECTRUM)
        assert 0.050 <= curve[4] <= 0.053
        assert curve[4] == pytest.approx(67755.32 / 1317003.23, rel=1e-12)
        m, failed = select_order(REFERENCE_SPECTRUM)
        assert (m, failed) == (4, False)
        assert curve[3] > 0.10


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_scores_match_brute_force(self, seed, m):
        x = random_class(seed)
        model = train(x, order=m)
        rng = np.random.default_rng(1000 + seed)
        for sample in x.mean(axis=0) + rng.normal(scale=3, size=(5, 4)):
            eps, t2 = score_many(model, sample)
            e_ref, t_ref = brute_force_scores(x, m, sample)
            assert eps[0] == pytest.approx(e_ref, rel=1e-8)
            assert t2[0] == pytest.approx(t_ref, rel=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_residual_orthogonal_to_subspace(self, seed):
        x = random_class(seed)
        model = train(x, order=2)
        d = np.random.default_rng(seed).normal(size=(10, 4)) * 4
        u = model.transform
        r = d - (d @ u) @ u.T
        assert np.abs(r @ u).max() <= 1e-8 * np.abs(d).max()

    def test_full_order_has_zero_error(self):
        model = train(random_class(3), order=4)
        eps, t2 = score_many(model, np.random.default_rng(0).normal(size=(7, 4)))
        assert np.all(eps == 0)
        assert np.all(t2 > 0)


class TestJacobi:
    @given(symmetric)
    @settings(max_examples=80)
    def test_decomposition(self, a):
        w, v = jacobi_eigh(a)
        scale = max(1.0, np.abs(a).max())
        np.testing.assert_allclose(v.T @ v, np.eye(len(a)), atol=1e-10)
        np.testing.assert_allclose(a @ v, v * w, atol=1e-9 * scale)
        assert np.all(np.diff(w) <= 1e-12 * scale)
        np.testing.assert_allclose(w, np.sort(np.linalg.eigvalsh(a))[::-1], atol=1e-9 * scale)
        for j in range(len(a)):
            assert v[np.argmax(np.abs(v[:, j])), j] > 0

    @pytest.mark.parametrize("seed", range(10))
    def test_reconstructs_eight_by_eight(self, seed):
        b = np.random.default_rng(seed).normal(size=(8, 8))
        a = (b + b.T) / 2
        w, v = jacobi_eigh(a)
        assert np.linalg.norm(v @ np.diag(w) @ v.T - a) <= 1e-8 * np.linalg.norm(a)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_characteristic_polynomial(self, seed):
        rng = np.random.default_rng(seed)
        b = rng.normal(size=(4, 4))
        a = b @ b.T + np.diag([0.0, 1.0, 2.5, 4.0])
        w, _ = jacobi_eigh(a)
        np.testing.assert_allclose(w, char_poly_eigenvalues(a), rtol=1e-9, atol=1e-9)

    def test_diagonal_and_degenerate(self):
        w, v = jacobi_eigh(np.diag([1.0, 3.0, 2.0]))
        np.testing.assert_array_equal(w, [3.0, 2.0, 1.0])
        w, v = jacobi_eigh(np.eye(3) * 2)
        np.testing.assert_array_equal(w, [2, 2, 2])
        np.testing.assert_allclose(v.T @ v, np.eye(3))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


class TestOrderSelection:
    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(1e-6, 1e6)))
    def test_rmse_curve_shape(self, lam):
        curve = rmse_curve(lam)
        assert curve[0] == pytest.approx(1.0)
        assert curve[-1] == 0.0
        assert np.all(np.diff(curve) <= 1e-15)

    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(1e-6, 1e6)),
           st.floats(0.01, 0.5))
    def test_selected_order_is_smallest(self, lam, cap):
        curve = rmse_curve(lam)
        m, failed = select_order(lam, cap)
        if failed:
            assert m == len(lam) and np.all(curve[1:len(lam)] >= cap)
        else:
            assert curve[m] < cap and np.all(curve[1:m] >= cap)

    def test_flagging(self):
        x = random_class(1)
        assert not train(x, order=3, rmse_cap=1.0).flagged
        assert train(x, order=1, rmse_cap=1e-9).flagged
        iso = np.random.default_rng(0).normal(size=(400, 4))
        model = train(iso, rmse_cap=0.01)
        assert model.flagged and model.order == 4


class TestHotelling:
    @pytest.mark.parametrize("K,m", sorted(T2_LIMITS))
    def test_threshold_matches_frozen_oracle(self, K, m):
        assert t2_threshold(K, m) == pytest.approx(T2_LIMITS[(K, m)], rel=1e-9)

    def test_threshold_matches_live_oracle(self):
        assert t2_threshold(40, 2, 0.99) == pytest.approx(t2_limit(40, 2, 0.99), rel=1e-8)

    def test_monotone(self):
        ks = [10, 20, 50, 100, 500, 5000]
        vals = [t2_threshold(k, 3) for k in ks]
        assert all(a > b for a, b in zip(vals, vals[1:]))
        assert t2_threshold(100, 2, 0.99) > t2_threshold(100, 2, 0.95) > t2_threshold(100, 2, 0.5)
        assert t2_threshold(100, 3) > t2_threshold(100, 2)

    def test_large_sample_limit_is_chi_square(self):
        assert t2_threshold(10 ** 6, 1) == pytest.approx(3.841, abs=1e-3)

    @pytest.mark.parametrize("args", [(4, 4), (3, 4), (10, 0), (10.0, 2)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            t2_threshold(*args)

    def test_gaussian_exceedance_near_nominal(self):
        rng = np.random.default_rng(11)
        mix = rng.normal(size=(4, 4))
        model = train(rng.normal(size=(500, 4)) @ mix, order=2)
        _, t2 = score_many(model, rng.normal(size=(4000, 4)) @ mix)
        rate = np.mean(t2 > model.t2_threshold)
        assert 0.03 <= rate <= 0.07


class TestDispersion:
    @pytest.mark.parametrize("cls", sorted(REFERENCE_DISPERSION))
    def test_reference_rows(self, cls):
        sx, mx, dx, sy, my, dy = REFERENCE_DISPERSION[cls]
        for sigma, mu, d in ((sx, mx, dx), (sy, my, dy)):
            # population deviation of two points at mu -/+ sigma
            got_s, got_m, got_d = dispersion_stats([mu - sigma, mu + sigma])
            assert (got_s, got_m) == (pytest.approx(sigma), pytest.approx(mu))
            assert got_d == pytest.approx(d, abs=0.01)

    def test_reference_row(self):
        _, _, d = dispersion_stats([19040 - 50.92, 19040 + 50.92])
        assert round(d, 2) in (0.13, 0.14) and d < 1

    def test_constant_and_poisson(self):
        assert dispersion_stats([5.0] * 10)[2] == 0.0
        x = np.random.default_rng(3).poisson(40, size=20000)
        assert dispersion_stats(x)[2] == pytest.approx(1.0, abs=0.05)

    def test_invalid(self):
        with pytest.raises(ValueError):
            dispersion_stats([])
        with pytest.raises(ValueError):
            dispersion_stats([1.0, -1.0])


class TestTraining:
    def test_needs_more_vectors_than_dimensions(self):
        with pytest.raises(InsufficientDataError):
            train(np.ones((4, 4)) + np.eye(4))
        with pytest.raises(DegenerateModelError):
            train(np.ones((10, 4)))
        with pytest.raises(ValueError):
            train(np.full((10, 4), np.nan))

    @given(st.permutations(list(range(30))))
    @settings(max_examples=20)
    def test_row_order_irrelevant(self, perm):
        x = random_class(4, K=30)
        a, b = train(x, order=2), train(x[perm], order=2)
        np.testing.assert_allclose(a.covariance, b.covariance, rtol=1e-12, atol=1e-12)
        s = x[0] * 1.3
        np.testing.assert_allclose(score_many(a, s), score_many(b, s), rtol=1e-9)

    def test_feature_permutation_equivariant(self):
        x = random_class(5)
        p = [2, 0, 3, 1]
        s = x[3] + 2.0
        ea, ta = score_many(train(x, order=2), s)
        eb, tb = score_many(train(x[:, p], order=2), s[p])
        assert ea[0] == pytest.approx(eb[0], rel=1e-9)
        assert ta[0] == pytest.approx(tb[0], rel=1e-9)

    def test_regularisation_is_negligible(self):
        x = random_class(6)
        s = x[0] + 1.5
        a = score_many(train(x, order=2, reg_eps=1e-8), s)[0][0]
        b = score_many(train(x, order=2, reg_eps=1e-12), s)[0][0]
        assert a == pytest.approx(b, rel=1e-6)

    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_full_space_error_equals_residual_subspace_form(self, m):
        # the residual has no component along the kept axes, so weighting it
        # with the full inverse covariance or only the discarded axes agrees;
        # the regulariser is shrunk so it does not blur the identity
        x = random_class(9, n=5)
        model = train(x, order=m, reg_eps=1e-14)
        s = x[4] * 1.3 - 0.7
        proj = model.eigenvectors[:, m:].T @ (s - model.mean)
        expected = float(np.sum(proj ** 2 / model.eigenvalues[m:]))
        assert score_many(model, s)[0][0] == pytest.approx(expected, rel=1e-9)

    def test_training_set_container(self):
        ts = TrainingSet("R1e1/4", random_class(7), [(0.0, "dry", k) for k in range(60)])
        model = train(ts)
        assert model.class_label == "R1e1/4" and model.training_K == 60
        with pytest.raises(ValueError):
            TrainingSet("x", random_class(7), [(0.0, "dry", 0)])

    def test_dimension_mismatch(self):
        model = train(random_class(8), order=2)
        with pytest.raises(ValueError, match="dimension"):
            score(model, np.ones(5))


class TestSerialisation:
    def test_round_trip_is_exact(self):
        model = train(random_class(9), order=2, class_label="2ie", phase=2)
        back = PcaClassModel.from_dict(model.to_dict())
        for f in ("mean", "covariance", "inv_covariance", "eigenvalues", "eigenvectors"):
            np.testing.assert_array_equal(getattr(back, f), getattr(model, f))
        assert (back.order, back.t2_threshold, back.phase) == (2, model.t2_threshold, 2)

    def test_layout(self):
        d = train(random_class(9), order=2).to_dict()
        assert d["n"] == 4 and d["m"] == 2 and len(d["U"]) == 8 and len(d["S"]) == 16

    def test_corruption_detected(self):
        d = train(random_class(9), order=2).to_dict()
        d["U"][0] += 1.0
        with pytest.raises(PcaError, match="U disagrees"):
            PcaClassModel.from_dict(d)
        d = train(random_class(9), order=2).to_dict()
        d["format_version"] = 2
        with pytest.raises(PcaError, match="format_version"):
            PcaClassModel.from_dict(d)
        d = train(random_class(9), order=2).to_dict()
        del d["S"]
        with pytest.raises(PcaError, match="malformed"):
            PcaClassModel.from_dict(d)
