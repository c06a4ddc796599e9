import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doctor import gaussian as gm
from doctor.gaussian import GaussianBinaryModel

# Oracle constants, computed with mpmath (30 digits) from closed forms:
SIGMOID_1 = 0.731058578630004879  # 1 / (1 + e^-1)
KL_SIGMOID1_HALF = 0.110944071671727  # KL(Bern(sigmoid 1) || Bern(1/2)) in nats
DELTA_SIGMOID1_HALF = 0.942100086707256  # 2 sqrt(2 KL)
PHI_SQRT2_OVER_2 = 0.760249938906523  # Phi(sqrt(2) / 2)
PHI_SQRT2_OVER_4 = 0.638163195084118  # Phi(sqrt(2) / 4)
TV_CONST_SIGMA2 = 0.520499877813047  # 2 Phi(sqrt(2)/2) - 1
TV_CONST_SIGMA4 = 0.276326390168237  # 2 Phi(sqrt(2)/4) - 1

MU = np.array([1.0, 1.0])


@pytest.fixture
def model():
    return GaussianBinaryModel(MU, 2.0)


def always_plus(x):
    return np.ones(np.asarray(x).shape[0], dtype=int)


class TestModel:
    @pytest.mark.parametrize("sigma", [0.0, -1.0, np.nan])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            GaussianBinaryModel(MU, sigma)

    def test_bad_mu(self):
        with pytest.raises(ValueError):
            GaussianBinaryModel([np.inf, 0.0], 1.0)

    def test_log_density_matches_direct(self, model):
        x = np.array([0.3, -1.2])
        direct = np.exp(-np.sum((x - MU) ** 2) / 8) / (2 * np.pi * 4)
        assert np.exp(model.log_density(x, 1)) == pytest.approx(direct, rel=1e-13)


class TestSampling:
    def test_pool_size_and_counts(self, model):
        pool = gm.sample_pool(model, 5000, seed=0)
        assert len(pool) == 10_000
        assert np.sum(pool.y == 1) == 5000 and np.sum(pool.y == -1) == 5000

    def test_class_means_within_clt_bound(self, model):
        pool = gm.sample_pool(model, 5000, seed=3)
        bound = 3 * model.sigma / np.sqrt(5000)
        for label in (-1, 1):
            mean = pool.X[pool.y == label].mean(axis=0)
            assert np.all(np.abs(mean - label * MU) < bound)

    def test_same_seed_is_bitwise_identical(self, model):
        a, b = gm.sample_pool(model, 100, 9), gm.sample_pool(model, 100, 9)
        assert a.X.tobytes() == b.X.tobytes()
        np.testing.assert_array_equal(a.y, b.y)

    def test_split_sizes_and_partition(self, model):
        pool = gm.sample_pool(model, 5000, 0)
        ds = gm.split(pool, 6700, seed=1)
        assert len(ds.train) == 6700 and len(ds.test) == 3300
        union = np.union1d(ds.train_index, ds.test_index)
        np.testing.assert_array_equal(union, np.arange(10_000))
        assert np.intersect1d(ds.train_index, ds.test_index).size == 0

    def test_split_seeds_differ(self, model):
        pool = gm.sample_pool(model, 500, 0)
        a, b = gm.split(pool, 670, 1), gm.split(pool, 670, 2)
        assert not np.array_equal(a.test_index, b.test_index)

    @pytest.mark.parametrize("n_train", [0, 1000])
    def test_split_bounds(self, model, n_train):
        with pytest.raises(ValueError):
            gm.split(gm.sample_pool(model, 500, 0), n_train, 0)


class TestBayes:
    def test_examples(self, model):
        assert gm.bayes_classify(model, MU) == 1
        assert gm.bayes_classify(model, -MU) == -1
        assert gm.bayes_classify(model, np.array([1.0, -1.0])) == 1  # tie

    def test_closed_form(self):
        assert gm.bayes_accuracy(GaussianBinaryModel(MU, 2.0)) == pytest.approx(PHI_SQRT2_OVER_2, abs=1e-14)
        assert gm.bayes_accuracy(GaussianBinaryModel(MU, 4.0)) == pytest.approx(PHI_SQRT2_OVER_4, abs=1e-14)

    def test_monte_carlo(self, model):
        pool = gm.sample_pool(model, 500_000, 11)
        acc = np.mean(gm.bayes_classify(model, pool.X) == pool.y)
        se = np.sqrt(PHI_SQRT2_OVER_2 * (1 - PHI_SQRT2_OVER_2) / 1e6)
        assert abs(acc - PHI_SQRT2_OVER_2) < 4 * se


class TestPosterior:
    def test_examples(self, model):
        np.testing.assert_allclose(gm.true_posterior(model, np.zeros(2)), [0.5, 0.5])
        assert gm.true_posterior(model, MU)[1] == pytest.approx(SIGMOID_1, abs=1e-15)

    def test_against_density_ratio(self, model):
        x = np.random.default_rng(0).normal(0, 4, (500, 2))
        lp, lm = model.log_density(x, 1), model.log_density(x, -1)
        direct = np.exp(lp) / (np.exp(lp) + np.exp(lm))
        np.testing.assert_allclose(gm.true_posterior(model, x)[:, 1], direct, atol=1e-10)

    def test_rows_sum_to_one(self, model):
        x = np.random.default_rng(1).normal(0, 10, (200, 2))
        np.testing.assert_allclose(gm.true_posterior(model, x).sum(axis=1), 1.0, atol=1e-15)

    def test_true_pe(self, model):
        assert gm.true_pe(model, 1, np.zeros(2)) == 0.5
        assert gm.true_pe(model, -1, np.zeros(2)) == 0.5
        assert gm.true_pe(model, 1, MU) == pytest.approx(1 - SIGMOID_1, abs=1e-15)
        assert gm.true_pe(model, -1, MU) == pytest.approx(SIGMOID_1, abs=1e-15)

    def test_true_pe_rejects_bad_labels(self, model):
        with pytest.raises(ValueError):
            gm.true_pe(model, 0, MU)


class TestOptimalScore:
    def test_boundary_is_one(self, model):
        assert gm.optimal_score(model, 1, np.array([2.0, -2.0])) == 1.0

    def test_density_ratio_identity(self, model):
        rng = np.random.default_rng(4)
        x = rng.normal(0, 3, (300, 2))
        f = np.where(rng.random(300) < 0.5, 1, -1)
        direct = np.exp(model.log_density(x, -f) - model.log_density(x, f))
        np.testing.assert_allclose(gm.optimal_score(model, f, x), direct, rtol=1e-12)
        np.testing.assert_allclose(gm.optimal_score(model, f, x),
                                   np.exp(-2 * f * (x @ MU) / 4.0), rtol=1e-12)

    def test_odds_to_probability(self, model):
        x = np.random.default_rng(5).normal(0, 3, (300, 2))
        f = gm.bayes_classify(model, x)
        s = gm.optimal_score(model, f, x)
        np.testing.assert_allclose(s / (1 + s), gm.true_pe(model, f, x), atol=1e-14)


class TestKlDelta:
    def test_zero_when_equal(self, model):
        x = np.random.default_rng(2).normal(0, 2, (50, 2))
        q = gm.true_posterior(model, x)[:, 1]
        np.testing.assert_allclose(gm.kl_delta(model, q, x), 0.0, atol=1e-6)

    def test_oracle_value(self, model):
        # truth sigmoid(1) at x = mu, model says 1/2
        assert gm.kl_delta(model, 0.5, MU) == pytest.approx(DELTA_SIGMOID1_HALF, abs=1e-12)
        assert (gm.kl_delta(model, 0.5, MU) / 2) ** 2 / 2 == pytest.approx(KL_SIGMOID1_HALF, abs=1e-12)

    def test_label_swap_symmetry(self, model):
        rng = np.random.default_rng(6)
        x = rng.normal(0, 2, (100, 2))
        q_hat = rng.uniform(0.01, 0.99, 100)
        # swapping labels maps x -> -x for the truth and q_hat -> 1 - q_hat
        np.testing.assert_allclose(gm.kl_delta(model, q_hat, x), gm.kl_delta(model, 1 - q_hat, -x), rtol=1e-12)

    def test_degenerate_model_probability(self, model):
        assert gm.kl_delta(model, 1.0, MU) == np.inf


class TestMarkov:
    def test_examples(self):
        assert gm.markov_epsilon(0.0, 0.5) == 0.0
        assert gm.markov_epsilon(0.5, 1.0) == 2.0

    @pytest.mark.parametrize("risk, eta", [(-0.1, 0.5), (0.1, 0.0)])
    def test_domain(self, risk, eta):
        with pytest.raises(ValueError):
            gm.markov_epsilon(risk, eta)


class TestTotalVariation:
    def test_constant_classifier_sigma2(self, model):
        tv = gm.tv_distance_numeric(model, always_plus)
        assert tv == pytest.approx(TV_CONST_SIGMA2, abs=5e-5)

    def test_constant_classifier_sigma4(self):
        tv = gm.tv_distance_numeric(GaussianBinaryModel(MU, 4.0), always_plus)
        assert tv == pytest.approx(TV_CONST_SIGMA4, abs=5e-5)

    def test_decreases_with_sigma(self):
        tvs = [gm.tv_distance_numeric(GaussianBinaryModel(MU, s), always_plus) for s in (2.0, 4.0)]
        assert tvs[0] > tvs[1]

    def test_in_unit_interval_for_bayes(self, model):
        tv = gm.tv_distance_numeric(model, lambda x: gm.bayes_classify(model, x))
        assert 0.0 <= tv <= 1.0

    def test_error_prior_of_bayes_classifier(self, model):
        pe1 = gm.error_prior(model, lambda x: gm.bayes_classify(model, x))
        assert pe1 == pytest.approx(1 - PHI_SQRT2_OVER_2, abs=1e-4)

    def test_rejects_other_dimensions(self):
        with pytest.raises(ValueError):
            gm.tv_distance_numeric(GaussianBinaryModel([1.0, 1.0, 1.0], 1.0), always_plus)


class TestMismatchIdentities:
    @settings(max_examples=200)
    @given(st.floats(-20, 20), st.floats(-20, 20), st.floats(-30, 30))
    def test_binary_mismatch(self, x0, x1, logit):
        model = GaussianBinaryModel(MU, 2.0)
        x = np.array([x0, x1])
        q_hat = 1 / (1 + np.exp(-logit))
        pred = 1 if logit > 0 else -1
        pe = float(gm.true_pe(model, pred, x))
        pe_hat = min(q_hat, 1 - q_hat)
        mism = pe * (1 - pe_hat) + (1 - pe) * pe_hat
        truth = gm.true_posterior(model, x)
        direct = truth[0] * q_hat + truth[1] * (1 - q_hat)
        assert mism == pytest.approx(direct, abs=1e-12)
        assert pe_hat <= mism + 1e-12
        if pe <= 0.5:
            assert pe <= mism + 1e-12
