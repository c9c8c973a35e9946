import itertools

import numpy as np
import pytest

from poisson_mnl.errors import CapacityError
from poisson_mnl.model import (Action, PriceVarietyBasis, ProductFeatures,
                               expected_period_revenue, make_action)
from poisson_mnl.search import (SearchConfig, clearance_candidates,
                                maximize_over_actions, oracle_best_action)

from conftest import small_params


def brute_force_oracle(params, features, n, k, grid):
    """Independent exhaustive enumeration over assortments and price grids."""
    best_val = -np.inf
    best = None
    for s in itertools.combinations(range(n), k):
        for combo in itertools.product(grid, repeat=k):
            action = make_action(s, combo, n, params.p_h)
            val = expected_period_revenue(action, features, params)
            if val > best_val:
                best_val = val
                best = action
    return best, best_val


class TestOracle:
    def test_single_assortment_single_price(self, rng):
        basis = PriceVarietyBasis(2, p_h=2.0)
        z = rng.uniform(-0.4, 0.4, size=(2, 2))
        features = ProductFeatures(z)
        params = small_params([0.1, -0.1], [0.2, 0.3], basis, p_l=2.0 - 1e-9,
                              p_h=2.0)
        cfg = SearchConfig(grid_points=1)
        act, val = oracle_best_action(params, features, cfg, k=2)
        assert act.assortment == (0, 1)
        assert act.prices == pytest.approx((2.0, 2.0), rel=1e-6)

    def test_matches_exhaustive_enumeration(self, rng):
        n, k = 3, 2
        basis = PriceVarietyBasis(n, p_h=3.0)
        cfg = SearchConfig(grid_points=5)
        for _ in range(20):
            z = rng.uniform(-0.5, 0.5, size=(n, 2))
            features = ProductFeatures(z)
            params = small_params(rng.uniform(-0.4, 0.4, n),
                                  rng.uniform(-0.5, 0.5, 2), basis)
            act, val = oracle_best_action(params, features, cfg, k=k)
            ref_act, ref_val = brute_force_oracle(params, features, n, k,
                                                  cfg.price_grid(0.5, 3.0))
            assert val == pytest.approx(ref_val, rel=1e-12)
            assert act.assortment == ref_act.assortment
            assert act.prices == pytest.approx(ref_act.prices)

    def test_dominant_product_always_selected(self, rng):
        n, k = 4, 2
        basis = PriceVarietyBasis(n, p_h=3.0)
        cfg = SearchConfig(grid_points=5)
        for _ in range(10):
            z = rng.uniform(0.0, 0.3, size=(n, 2))
            z[1] = [0.9, 0.9]   # dominates in features
            features = ProductFeatures(z)
            params = small_params(np.full(n, 0.2), [0.8, 0.8], basis)
            act, _ = oracle_best_action(params, features, cfg, k=k)
            assert 1 in act.assortment

    def test_capacity_error_signals_heuristic_mode(self, rng):
        n, k = 12, 6
        basis = PriceVarietyBasis(n, p_h=3.0)
        features = ProductFeatures(rng.uniform(0, 0.3, size=(n, 2)))
        params = small_params(np.zeros(n), [0.1, 0.1], basis)
        cfg = SearchConfig(grid_points=3, assortment_limit=100)
        with pytest.raises(CapacityError):
            oracle_best_action(params, features, cfg, k=k)
        heur = SearchConfig(grid_points=3, assortment_limit=100,
                            allow_heuristic_assortments=True)
        act, val = oracle_best_action(params, features, heur, k=k)
        assert len(act.assortment) == k
        assert val > 0

    def test_value_dominates_every_on_grid_action(self, rng):
        n, k = 4, 2
        basis = PriceVarietyBasis(n, p_h=3.0)
        cfg = SearchConfig(grid_points=4)
        z = rng.uniform(-0.4, 0.4, size=(n, 3))
        features = ProductFeatures(z)
        params = small_params(rng.uniform(-0.3, 0.3, n),
                              rng.uniform(-0.5, 0.5, 3), basis)
        _, val = oracle_best_action(params, features, cfg, k=k)
        grid = cfg.price_grid(params.p_l, params.p_h)
        for s in itertools.combinations(range(n), k):
            for combo in itertools.product(grid, repeat=k):
                action = make_action(s, combo, n, params.p_h)
                assert val >= expected_period_revenue(action, features, params) - 1e-9

    def test_deterministic_tie_breaking(self):
        # a value function that is identical for every action must yield the
        # lexicographically first assortment and price vector
        cfg = SearchConfig(grid_points=3)

        def flat(assortment, prices_batch):
            return np.zeros(prices_batch.shape[0])

        act, _ = maximize_over_actions(flat, 4, 2, 1.0, 2.0, cfg)
        assert act.assortment == (0, 1)
        assert act.prices == (1.0, 1.0, 2.0, 2.0)


class TestClearanceCandidates:
    def test_candidates_live_on_grid(self):
        grid = np.linspace(1.0, 3.0, 5)
        cands = clearance_candidates(np.array([2.0, 5.0, 1.0]), grid, 1.0, 3.0)
        assert np.all(np.isin(cands, grid))

    def test_coarse_grid_covers_extremes(self):
        grid = np.linspace(1.0, 3.0, 5)
        cands = clearance_candidates(np.array([2.0, 2.5]), grid, 1.0, 3.0)
        assert any(np.all(row == 1.0) for row in cands)
        assert any(np.all(row == 3.0) for row in cands)
