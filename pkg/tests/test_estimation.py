import math

import mpmath
import numpy as np
import pytest

from poisson_mnl.errors import InvalidInputError
from poisson_mnl.estimation import (FisherState, History, PeriodObservation,
                                    accumulate_fisher, fisher_from_jsonl,
                                    fisher_to_jsonl, global_mle,
                                    history_from_jsonl, history_to_jsonl,
                                    local_mle, min_eig, mnl_loglik,
                                    mnl_loglik_grad, phi_matrix,
                                    poisson_loglik, poisson_loglik_grad)
from poisson_mnl.model import (Action, PriceVarietyBasis, ProductFeatures,
                               choice_probabilities, make_action)

from conftest import random_instance

LAM0 = 2.0


def build_history(rng, periods=6, n=4, k=3, d_z=3, arrivals_scale=8):
    """Synthetic history with consistent counts."""
    hist = History()
    for t in range(1, periods + 1):
        features, v, action = random_instance(rng, n=n, k=k, d_z=d_z)
        features = ProductFeatures(features.matrix, period=t)
        n_t = int(rng.poisson(arrivals_scale))
        q = choice_probabilities(action, features, np.zeros(d_z))
        counts = rng.multinomial(n_t, q) if n_t else np.zeros(k + 1, dtype=int)
        purchases = {j: int(counts[i + 1])
                     for i, j in enumerate(action.assortment) if counts[i + 1]}
        hist.append(PeriodObservation(action, features, n_t, purchases,
                                      int(counts[0])))
    return hist


class TestPoissonLoglik:
    def test_zero_theta_no_arrivals(self):
        features = ProductFeatures(np.zeros((2, 2)))
        action = Action((0, 1), (1.0, 1.0))
        hist = History([PeriodObservation(action, features, 0, {}, 0)])
        basis = PriceVarietyBasis(2, p_h=2.0)
        assert poisson_loglik(np.zeros(2), hist, basis, LAM0) == pytest.approx(-LAM0)

    def test_additivity_over_identical_periods(self, rng):
        hist = build_history(rng, periods=1)
        obs = hist[0]
        two = History([obs, obs])
        basis = PriceVarietyBasis(4, p_h=3.0)
        theta = rng.uniform(-0.4, 0.4, 4)
        one = poisson_loglik(theta, History([obs]), basis, LAM0)
        assert poisson_loglik(theta, two, basis, LAM0) == pytest.approx(2 * one)

    def test_matches_high_precision_sum(self, rng):
        hist = build_history(rng, periods=4)
        basis = PriceVarietyBasis(4, p_h=3.0)
        theta = rng.uniform(-0.4, 0.4, 4)
        got = poisson_loglik(theta, hist, basis, LAM0)
        with mpmath.workdps(40):
            total = mpmath.mpf(0)
            for obs in hist:
                x = basis.vector(obs.action, obs.features)
                eta = mpmath.fsum(mpmath.mpf(t) * mpmath.mpf(xx)
                                  for t, xx in zip(theta, x))
                total += obs.arrivals * eta - LAM0 * mpmath.e**eta
        assert got == pytest.approx(float(total), rel=1e-12)

    def test_empty_history_rejected(self):
        basis = PriceVarietyBasis(2, p_h=2.0)
        with pytest.raises(InvalidInputError):
            poisson_loglik(np.zeros(2), History(), basis, LAM0)


class TestPoissonGrad:
    def test_zero_at_exact_rate_match(self):
        # single period, n = lam0 * lambda(theta) exactly at theta = 0
        features = ProductFeatures(np.zeros((1, 1)))
        action = Action((0,), (2.0,))
        hist = History([PeriodObservation(action, features, 2, {}, 2)])
        basis = PriceVarietyBasis(1, p_h=2.0)
        g = poisson_loglik_grad(np.zeros(1), hist, basis, 2.0)
        assert g == pytest.approx(np.zeros(1), abs=1e-12)

    def test_single_period_scalar_formula(self):
        basis = PriceVarietyBasis(1, p_h=2.0)
        features = ProductFeatures(np.zeros((1, 1)))
        action = Action((0,), (2.0 / math.e,))   # basis vector = e_1
        hist = History([PeriodObservation(action, features, 3, {}, 3)])
        theta = np.array([0.5])
        g = poisson_loglik_grad(theta, hist, basis, LAM0)
        assert g[0] == pytest.approx(3 - LAM0 * math.exp(0.5))

    def test_finite_difference_agreement(self, rng):
        hist = build_history(rng)
        basis = PriceVarietyBasis(4, p_h=3.0)
        for _ in range(20):
            theta = rng.uniform(-0.5, 0.5, 4)
            g = poisson_loglik_grad(theta, hist, basis, LAM0)
            fd = np.empty_like(g)
            for i in range(4):
                h = 1e-6 * (1 + abs(theta[i]))
                up, dn = theta.copy(), theta.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (poisson_loglik(up, hist, basis, LAM0)
                         - poisson_loglik(dn, hist, basis, LAM0)) / (2 * h)
            assert g == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestMnlLoglik:
    def test_dominant_product_approaches_zero(self):
        z = np.array([[30.0], [0.0]])
        features = ProductFeatures(z)
        action = Action((0, 1), (1.0, 1.0))
        hist = History([PeriodObservation(action, features, 5, {0: 5}, 0)])
        ll = mnl_loglik(np.array([1.0]), hist)
        assert -1e-10 < ll <= 0.0

    def test_zero_arrivals_zero_loglik(self, rng):
        features, _, action = random_instance(rng)
        hist = History([PeriodObservation(action, features, 0, {}, 0)])
        assert mnl_loglik(rng.uniform(-1, 1, 3), hist) == 0.0

    def test_matches_per_customer_products(self, rng):
        hist = build_history(rng, periods=3)
        v = rng.uniform(-0.5, 0.5, 3)
        got = mnl_loglik(v, hist)
        with mpmath.workdps(40):
            total = mpmath.mpf(0)
            for obs in hist:
                z = obs.features.for_choice()[list(obs.action.assortment)]
                u = [mpmath.fsum(mpmath.mpf(a) * mpmath.mpf(b)
                                 for a, b in zip(v, row)) - p
                     for row, p in zip(z, obs.action.offered_prices())]
                denom = 1 + mpmath.fsum(mpmath.e**x for x in u)
                total += obs.no_purchase * mpmath.log(1 / denom)
                for i, j in enumerate(obs.action.assortment):
                    c = obs.purchase_counts.get(j, 0)
                    if c:
                        total += c * mpmath.log(mpmath.e**u[i] / denom)
        assert got == pytest.approx(float(total), rel=1e-11)

    def test_loglik_nonpositive(self, rng):
        hist = build_history(rng)
        for _ in range(10):
            assert mnl_loglik(rng.uniform(-1, 1, 3), hist) <= 1e-12


class TestMnlGrad:
    def test_zero_at_empirical_match(self):
        # one product, utility 0 -> q = (1/2, 1/2); counts 1-1 match exactly
        features = ProductFeatures(np.array([[2.0]]))
        action = Action((0,), (2.0,))
        hist = History([PeriodObservation(action, features, 2, {0: 1}, 1)])
        g = mnl_loglik_grad(np.array([1.0]), hist)
        assert g == pytest.approx(np.zeros(1), abs=1e-12)

    def test_single_period_hand_check(self):
        z = np.array([[1.0]])
        features = ProductFeatures(z)
        action = Action((0,), (1.0,))
        hist = History([PeriodObservation(action, features, 3, {0: 2}, 1)])
        v = np.array([0.4])
        q1 = math.exp(0.4 - 1) / (1 + math.exp(0.4 - 1))
        assert mnl_loglik_grad(v, hist)[0] == pytest.approx(2 - 3 * q1)

    def test_finite_difference_agreement(self, rng):
        hist = build_history(rng)
        for _ in range(20):
            v = rng.uniform(-0.6, 0.6, 3)
            g = mnl_loglik_grad(v, hist)
            fd = np.empty_like(g)
            for i in range(3):
                h = 1e-6 * (1 + abs(v[i]))
                up, dn = v.copy(), v.copy()
                up[i] += h
                dn[i] -= h
                fd[i] = (mnl_loglik(up, hist) - mnl_loglik(dn, hist)) / (2 * h)
            assert g == pytest.approx(fd, rel=1e-6, abs=1e-8)


class TestConcavity:
    def test_both_likelihoods_concave_on_segments(self, rng):
        hist = build_history(rng)
        basis = PriceVarietyBasis(4, p_h=3.0)
        for _ in range(30):
            a = rng.uniform(-0.5, 0.5, 4)
            b = rng.uniform(-0.5, 0.5, 4)
            alpha = rng.uniform(0.05, 0.95)
            mid = alpha * a + (1 - alpha) * b
            assert (poisson_loglik(mid, hist, basis, LAM0)
                    >= alpha * poisson_loglik(a, hist, basis, LAM0)
                    + (1 - alpha) * poisson_loglik(b, hist, basis, LAM0) - 1e-9)
            av = rng.uniform(-0.6, 0.6, 3)
            bv = rng.uniform(-0.6, 0.6, 3)
            midv = alpha * av + (1 - alpha) * bv
            assert (mnl_loglik(midv, hist)
                    >= alpha * mnl_loglik(av, hist)
                    + (1 - alpha) * mnl_loglik(bv, hist) - 1e-9)


class TestPhiMatrix:
    def test_binary_logit_variance(self, rng):
        z = rng.uniform(-0.5, 0.5, size=(2, 3))
        features = ProductFeatures(z)
        action = make_action([1], [1.2], 2, 3.0)
        v = rng.uniform(-0.5, 0.5, 3)
        q1 = choice_probabilities(action, features, v)[1]
        phi = phi_matrix(action, features, v)
        assert phi == pytest.approx(q1 * (1 - q1) * np.outer(z[1], z[1]))

    def test_identical_features_reduce_to_rank_one(self, rng):
        z = np.tile(rng.uniform(-0.5, 0.5, 3), (3, 1))
        features = ProductFeatures(z)
        action = make_action([0, 1, 2], [1.0, 1.5, 2.0], 3, 3.0)
        v = rng.uniform(-0.5, 0.5, 3)
        q = choice_probabilities(action, features, v)[1:]
        s = q.sum()
        phi = phi_matrix(action, features, v)
        assert phi == pytest.approx(s * (1 - s) * np.outer(z[0], z[0]))

    def test_positive_semidefinite(self, rng):
        for _ in range(40):
            features, v, action = random_instance(rng)
            phi = phi_matrix(action, features, v)
            assert min_eig(phi) >= -1e-10


class TestFisher:
    def make_state(self, rng, periods=4):
        basis = PriceVarietyBasis(4, p_h=3.0)
        hist = build_history(rng, periods=periods)
        state = FisherState(LAM0, x_bar=basis.norm_bound(0.5, 3.0, 3),
                            d_x=4, d_z=3)
        theta = rng.uniform(-0.3, 0.3, 4)
        v = rng.uniform(-0.5, 0.5, 3)
        for obs in hist:
            state = accumulate_fisher(state, obs, theta, v, basis)
        return state, hist, basis, theta, v

    def test_single_period_equals_summand(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        hist = build_history(rng, periods=1)
        obs = hist[0]
        state = FisherState(LAM0, 2.0, 4, 3)
        theta = rng.uniform(-0.3, 0.3, 4)
        v = rng.uniform(-0.5, 0.5, 3)
        state = accumulate_fisher(state, obs, theta, v, basis)
        x = basis.vector(obs.action, obs.features)
        lam = math.exp(theta @ x)
        assert state.i_poi == pytest.approx(LAM0 * lam * np.outer(x, x))
        assert state.i_mnl_hat == pytest.approx(
            LAM0 * math.exp(-2.0) * phi_matrix(obs.action, obs.features, v))
        assert state.t == 1

    def test_two_periods_sum(self, rng):
        state, hist, basis, theta, v = self.make_state(rng, periods=2)
        total_poi = np.zeros((4, 4))
        for obs in hist:
            x = basis.vector(obs.action, obs.features)
            total_poi += LAM0 * math.exp(theta @ x) * np.outer(x, x)
        assert state.i_poi == pytest.approx(total_poi)

    def test_lemma_order_lower_bound_vs_exact(self, rng):
        # data-computable lower bound never exceeds the exact information
        for _ in range(20):
            state, hist, basis, theta, v = self.make_state(rng)
            theta_star = rng.uniform(-0.3, 0.3, 4)
            v_eval = rng.uniform(-0.5, 0.5, 3)
            exact = state.i_mnl_exact_at(v_eval, theta_star)
            lower = state.i_mnl_hat_at(v_eval)
            assert min_eig(exact - lower) >= -1e-10

    def test_poisson_info_is_negative_hessian(self, rng):
        # differentiate the (already FD-verified) gradient: second-order
        # central differences of the likelihood cannot reach 1e-8 entrywise
        state, hist, basis, theta, v = self.make_state(rng)
        for _ in range(10):
            th = rng.uniform(-0.4, 0.4, 4)
            info = state.i_poi_at(th)
            hess = np.empty((4, 4))
            for j in range(4):
                h = 1e-5 * (1 + abs(th[j]))
                up, dn = th.copy(), th.copy()
                up[j] += h
                dn[j] -= h
                hess[:, j] = (poisson_loglik_grad(up, hist, basis, LAM0)
                              - poisson_loglik_grad(dn, hist, basis, LAM0)) / (2 * h)
            assert np.max(np.abs(-hess - info)) <= 1e-8 * (1 + np.max(np.abs(info)))

    def test_stored_matrices_symmetric_psd(self, rng):
        state, *_ = self.make_state(rng)
        assert np.allclose(state.i_poi, state.i_poi.T, atol=1e-12)
        assert np.allclose(state.i_mnl_hat, state.i_mnl_hat.T, atol=1e-12)
        assert min_eig(state.i_poi) >= -1e-10
        assert min_eig(state.i_mnl_hat) >= -1e-10


class TestMle:
    def test_poisson_moment_matching(self):
        # single repeated basis direction; empirical mean equals lam0
        basis = PriceVarietyBasis(1, p_h=2.0)
        features = ProductFeatures(np.zeros((1, 1)))
        action = Action((0,), (2.0 / math.e,))
        hist = History([PeriodObservation(action, features, 2, {}, 2)
                        for _ in range(5)])
        rep = global_mle("poisson", hist, radius=1.0, basis=basis, lam0=2.0)
        assert rep.converged
        assert rep.estimate[0] == pytest.approx(0.0, abs=1e-7)

    def test_interior_optimum_certificate(self, rng):
        hist = build_history(rng, periods=10, arrivals_scale=5)
        basis = PriceVarietyBasis(4, p_h=3.0)
        rep = global_mle("poisson", hist, radius=5.0, basis=basis, lam0=LAM0)
        assert rep.converged
        if not rep.on_boundary:
            assert rep.grad_norm <= 1e-6

    def test_local_zero_radius_returns_center(self, rng):
        hist = build_history(rng)
        center = rng.uniform(-0.3, 0.3, 3)
        rep = local_mle("mnl", hist, center=center, radius=0.0)
        assert rep.estimate == pytest.approx(center)
        assert rep.converged and rep.on_boundary

    def test_local_large_radius_matches_global(self, rng):
        hist = build_history(rng, periods=8)
        g = global_mle("mnl", hist, radius=50.0)
        l = local_mle("mnl", hist, center=np.full(3, 0.2), radius=50.0)
        assert l.estimate == pytest.approx(g.estimate, abs=1e-6)

    def test_boundary_kkt_one_dimensional(self):
        # data pulls theta far right; tiny ball forces the boundary solution
        basis = PriceVarietyBasis(1, p_h=2.0)
        features = ProductFeatures(np.zeros((1, 1)))
        action = Action((0,), (2.0 / math.e,))
        hist = History([PeriodObservation(action, features, 50, {}, 50)
                        for _ in range(5)])
        rep = global_mle("poisson", hist, radius=0.5, basis=basis, lam0=2.0)
        assert rep.on_boundary
        assert abs(np.linalg.norm(rep.estimate) - 0.5) <= 1e-10

    def test_estimates_stay_in_ball(self, rng):
        for _ in range(5):
            hist = build_history(rng)
            center = rng.uniform(-0.2, 0.2, 3)
            radius = rng.uniform(0.05, 0.5)
            rep = local_mle("mnl", hist, center=center, radius=radius)
            assert np.linalg.norm(rep.estimate - center) <= radius + 1e-10

    def test_unknown_kind_rejected(self, rng):
        hist = build_history(rng)
        with pytest.raises(InvalidInputError):
            global_mle("probit", hist, radius=1.0)


class TestSerialization:
    def test_history_round_trip(self, rng):
        hist = build_history(rng, periods=5)
        text = history_to_jsonl(hist)
        back = history_from_jsonl(text)
        assert len(back) == len(hist)
        assert history_to_jsonl(back) == text
        assert back.digest() == hist.digest()

    def test_fisher_round_trip(self, rng):
        basis = PriceVarietyBasis(4, p_h=3.0)
        hist = build_history(rng, periods=3)
        state = FisherState(LAM0, 2.0, 4, 3)
        for obs in hist:
            state = accumulate_fisher(state, obs, np.zeros(4), np.zeros(3), basis)
        text = fisher_to_jsonl(state)
        back = fisher_from_jsonl(text)
        assert back.t == state.t
        assert back.i_poi == pytest.approx(state.i_poi)
        v = rng.uniform(-0.5, 0.5, 3)
        assert back.i_mnl_hat_at(v) == pytest.approx(state.i_mnl_hat_at(v))

    def test_digest_distinguishes_histories(self, rng):
        h1 = build_history(rng, periods=3)
        h2 = build_history(rng, periods=3)
        assert h1.digest() != h2.digest()
