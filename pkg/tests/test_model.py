import math

import mpmath
import numpy as np
import pytest

from poisson_mnl.errors import InvalidInputError, NumericOverflowError
from poisson_mnl.model import (Action, FeatureAugmentedBasis, PairwiseBasis,
                               PriceVarietyBasis, ProductFeatures,
                               arrival_rate, choice_probabilities,
                               choice_probabilities_batch,
                               expected_period_revenue, instantaneous_regret,
                               make_action, per_customer_revenue)

from conftest import random_instance, small_params


def mp_choice_probs(utilities):
    """Independent high-precision evaluation of the logit probabilities."""
    with mpmath.workdps(50):
        ws = [mpmath.e**u for u in utilities]
        denom = 1 + sum(ws)
        return [float(1 / denom)] + [float(w / denom) for w in ws]


class TestChoiceProbabilities:
    def test_single_product_zero_utility_splits_evenly(self):
        # feature value 2, v = 1, price 2: utility exactly zero
        features = ProductFeatures(np.array([[2.0], [0.5]]))
        action = Action((0,), (2.0, 1.0))
        q = choice_probabilities(action, features, np.array([1.0]))
        assert q == pytest.approx([0.5, 0.5], abs=1e-15)

    def test_choke_price_sends_everything_outside(self):
        features = ProductFeatures(np.zeros((2, 1)))
        action = Action((0, 1), (700.0, 700.0))
        q = choice_probabilities(action, features, np.array([0.0]))
        assert q[0] == pytest.approx(1.0, abs=1e-250)

    def test_matches_high_precision_oracle(self, rng):
        v = np.array([0.3, -0.2, 0.1])
        z = rng.uniform(1.0, 2.0, size=(5, 3))
        features = ProductFeatures(z)
        prices = rng.uniform(0.5, 3.0, size=5)
        action = make_action([0, 2, 4], prices[[0, 2, 4]], 5, 3.0)
        q = choice_probabilities(action, features, v)
        u = [float(z[j] @ v - action.prices[j]) for j in (0, 2, 4)]
        expected = mp_choice_probs(u)
        assert q == pytest.approx(expected, rel=1e-13)

    def test_overflow_raises(self):
        features = ProductFeatures(np.array([[800.0]]))
        action = Action((0,), (1.0,))
        with pytest.raises(NumericOverflowError):
            choice_probabilities(action, features, np.array([1.0]))

    def test_dimension_mismatch_raises(self):
        features = ProductFeatures(np.zeros((2, 3)))
        action = Action((0,), (1.0, 1.0))
        with pytest.raises(InvalidInputError):
            choice_probabilities(action, features, np.array([0.0, 0.0]))

    def test_normalization_and_positivity_property(self, rng):
        for _ in range(200):
            features, v, action = random_instance(rng)
            q = choice_probabilities(action, features, v)
            assert abs(q.sum() - 1.0) < 1e-12
            assert np.all(q > 0)

    def test_relative_odds_invariance(self, rng):
        # scaling every exp-utility by c leaves in-assortment odds unchanged
        features, v, action = random_instance(rng)
        q = choice_probabilities(action, features, v)
        shifted = Action(action.assortment,
                         tuple(p - 0.7 for p in action.prices))
        q2 = choice_probabilities(shifted, features, v)
        odds = q[1:] / q[1]
        odds2 = q2[1:] / q2[1]
        assert odds == pytest.approx(odds2, rel=1e-10)

    def test_batch_agrees_with_single(self, rng):
        features, v, action = random_instance(rng)
        batch = np.tile(action.price_array(), (3, 1))
        batch[1, action.assortment[0]] += 0.3
        qb = choice_probabilities_batch(action.assortment, batch, features, v)
        for i in range(3):
            single = choice_probabilities(
                Action(action.assortment, tuple(batch[i])), features, v)
            assert qb[i] == pytest.approx(single, rel=1e-14)


class TestArrivalRate:
    def test_zero_theta_gives_unit_rate(self, rng):
        features, _, action = random_instance(rng)
        basis = PriceVarietyBasis(4, p_h=3.0)
        assert arrival_rate(action, np.zeros(4), basis, features) == 1.0

    def test_price_variety_at_ceiling_gives_unit_rate(self):
        basis = PriceVarietyBasis(3, p_h=2.0)
        action = Action((0, 1, 2), (2.0, 2.0, 2.0))
        assert arrival_rate(action, np.full(3, 0.2), basis) == pytest.approx(1.0)

    def test_feature_augmented_matches_direct_formula(self, rng):
        a, b = 30.0, -15.0
        basis = FeatureAugmentedBasis(a, b)
        z = rng.uniform(1.0, 2.0, size=(5, 3))
        features = ProductFeatures(z)
        prices = rng.uniform(10.0, 30.0, size=5)
        action = make_action([0, 1, 2, 3, 4], prices, 5, 30.0)
        theta = np.array([0.2, 0.2])
        lam = arrival_rate(action, theta, basis, features)
        with mpmath.workdps(40):
            direct = mpmath.e ** (
                -mpmath.mpf(0.2) * sum(mpmath.log(p) for p in prices)
                + mpmath.mpf(0.2) * sum(mpmath.log(a * z[j, d] + b)
                                        for j in range(5) for d in range(3)))
        assert lam == pytest.approx(float(direct), rel=1e-12)

    def test_dimension_mismatch(self):
        basis = PriceVarietyBasis(3, p_h=2.0)
        action = Action((0,), (1.0, 2.0, 2.0))
        with pytest.raises(InvalidInputError):
            arrival_rate(action, np.zeros(2), basis)

    def test_envelope_property(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        x_bar = basis.norm_bound(0.5, 3.0, 3)
        for _ in range(50):
            features, _, action = random_instance(rng)
            theta = rng.standard_normal(4)
            theta /= max(np.linalg.norm(theta), 1.0)
            lam = arrival_rate(action, theta, basis, features)
            assert math.exp(-x_bar) - 1e-12 <= lam <= math.exp(x_bar) + 1e-12


class TestBases:
    def test_price_variety_zero_at_ceiling(self):
        basis = PriceVarietyBasis(3, p_h=2.0)
        action = Action((0, 2), (2.0, 2.0, 2.0))
        assert basis.vector(action) == pytest.approx(np.zeros(3))

    def test_price_variety_log_unit(self):
        basis = PriceVarietyBasis(2, p_h=2.0)
        action = Action((0,), (2.0 / math.e, 2.0))
        x = basis.vector(action)
        assert x[0] == pytest.approx(1.0)
        assert x[1] == 0.0

    def test_price_variety_componentwise(self, rng):
        basis = PriceVarietyBasis(3, p_h=3.0)
        prices = rng.uniform(0.5, 3.0, size=2)
        action = make_action([0, 2], prices, 3, 3.0)
        x = basis.vector(action)
        assert x[0] == pytest.approx(-math.log(action.prices[0] / 3.0))
        assert x[1] == 0.0
        assert x[2] == pytest.approx(-math.log(action.prices[2] / 3.0))

    def test_pairwise_singleton_has_no_pairs(self):
        basis = PairwiseBasis(3)
        action = make_action([1], [2.0], 3, 3.0)
        x = basis.vector(action)
        assert x[1] == pytest.approx(0.5)
        assert np.all(x[3:] == 0.0)

    def test_pairwise_equal_prices_unit_ratio(self):
        basis = PairwiseBasis(2)
        action = Action((0, 1), (1.7, 1.7))
        x = basis.vector(action)
        assert x[basis.pair_index(0, 1)] == pytest.approx(1.0)
        assert x[basis.pair_index(1, 0)] == pytest.approx(1.0)

    def test_pairwise_matches_double_loop(self, rng):
        n = 4
        basis = PairwiseBasis(n)
        prices = rng.uniform(0.5, 3.0, size=3)
        action = make_action([0, 1, 3], prices, n, 3.0)
        x = basis.vector(action)
        p = action.price_array()
        expected = np.zeros(basis.d_x)
        for i in action.assortment:
            expected[i] = 1.0 / p[i]
            for j in action.assortment:
                if i != j:
                    expected[basis.pair_index(i, j)] = p[i] / p[j]
        assert x == pytest.approx(expected)

    def test_pairwise_zero_price_rejected(self):
        basis = PairwiseBasis(2)
        action = Action((0, 1), (0.0, 1.0))
        with pytest.raises(InvalidInputError):
            basis.vector(action)

    def test_feature_augmented_zero_vector(self):
        basis = FeatureAugmentedBasis(1.0, 0.0)
        features = ProductFeatures(np.ones((2, 2)))
        action = Action((0, 1), (1.0, 1.0))
        assert basis.vector(action, features) == pytest.approx(np.zeros(2))

    def test_feature_augmented_unit_components(self):
        basis = FeatureAugmentedBasis(1.0, 0.0)
        features = ProductFeatures(np.array([[math.e]]))
        action = Action((0,), (math.e,))
        assert basis.vector(action, features) == pytest.approx([-1.0, 1.0])

    def test_feature_augmented_log_domain_guard(self):
        basis = FeatureAugmentedBasis(1.0, -2.0)
        features = ProductFeatures(np.array([[1.0]]))
        action = Action((0,), (1.0,))
        with pytest.raises(InvalidInputError):
            basis.vector(action, features)


class TestRevenues:
    def test_single_product_zero_utility_halves_price(self):
        features = ProductFeatures(np.array([[2.0]]))
        action = Action((0,), (2.0,))
        r = per_customer_revenue(action, features, np.array([1.0]))
        assert r == pytest.approx(1.0)

    def test_choked_assortment_earns_nothing(self):
        features = ProductFeatures(np.zeros((2, 1)))
        action = Action((0, 1), (690.0, 690.0))
        r = per_customer_revenue(action, features, np.array([0.0]))
        assert r == pytest.approx(0.0, abs=1e-290)

    def test_matches_direct_sum(self, rng):
        features, v, action = random_instance(rng, n=5, k=4)
        r = per_customer_revenue(action, features, v)
        q = choice_probabilities(action, features, v)
        direct = sum(action.prices[j] * q[i + 1]
                     for i, j in enumerate(action.assortment))
        assert r == pytest.approx(direct, rel=1e-13)

    def test_revenue_bounded_by_purchase_probability(self, rng):
        p_h = 3.0
        for _ in range(50):
            features, v, action = random_instance(rng, p_h=p_h)
            r = per_customer_revenue(action, features, v)
            q0 = choice_probabilities(action, features, v)[0]
            assert r <= p_h * (1 - q0) + 1e-12
            assert r <= p_h + 1e-12

    def test_period_revenue_composition(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        features, v, action = random_instance(rng)
        params = small_params(rng.uniform(-0.3, 0.3, 4), v, basis)
        rev = expected_period_revenue(action, features, params)
        lam = arrival_rate(action, params.theta, basis, features)
        r = per_customer_revenue(action, features, v)
        assert rev == pytest.approx(params.lam0 * lam * r, rel=1e-13)

    def test_zero_theta_single_product_identity(self):
        basis = PriceVarietyBasis(1, p_h=3.0)
        features = ProductFeatures(np.array([[2.0]]))
        action = Action((0,), (2.0,))
        params = small_params([0.0], [1.0], basis, lam0=2.0)
        assert expected_period_revenue(action, features, params) == pytest.approx(2.0)


class TestInstantaneousRegret:
    def test_oracle_action_has_zero_regret(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        features, v, action = random_instance(rng)
        params = small_params(rng.uniform(-0.3, 0.3, 4), v, basis)
        val = expected_period_revenue(action, features, params)
        assert instantaneous_regret(action, params, features, val) == 0.0

    def test_choked_action_loses_everything(self):
        basis = PriceVarietyBasis(1, p_h=700.0)
        features = ProductFeatures(np.array([[0.0]]))
        choked = Action((0,), (700.0,))
        params = small_params([0.0], [0.0], basis, p_l=0.5, p_h=700.0)
        regret = instantaneous_regret(choked, params, features, 5.0)
        assert regret == pytest.approx(5.0, abs=1e-6)

    def test_matches_subtraction(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        features, v, action = random_instance(rng)
        params = small_params(rng.uniform(-0.3, 0.3, 4), v, basis)
        rev = expected_period_revenue(action, features, params)
        assert instantaneous_regret(action, params, features, 7.0) == pytest.approx(7.0 - rev)
