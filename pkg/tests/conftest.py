import numpy as np
import pytest

from poisson_mnl.model import (Action, FeatureAugmentedBasis, ModelParams,
                               PriceVarietyBasis, ProductFeatures, make_action)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_instance(rng, n=4, k=3, d_z=3, p_l=0.5, p_h=3.0):
    """Small random environment pieces for property-style tests."""
    z = rng.uniform(-0.5, 0.5, size=(n, d_z))
    z /= np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1.0)
    features = ProductFeatures(z)
    v = rng.uniform(-0.6, 0.6, size=d_z)
    assortment = tuple(sorted(rng.choice(n, size=k, replace=False).tolist()))
    prices = rng.uniform(p_l, p_h, size=k)
    action = make_action(assortment, prices, n, p_h)
    return features, v, action


def small_params(theta, v, basis, lam0=2.0, x_bar=2.0, v_bar=1.0,
                 p_l=0.5, p_h=3.0):
    return ModelParams(theta=np.asarray(theta, dtype=float),
                       v=np.asarray(v, dtype=float), lam0=lam0, x_bar=x_bar,
                       v_bar=v_bar, p_l=p_l, p_h=p_h, basis=basis)
