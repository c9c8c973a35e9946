"""Comparison policies: clairvoyant oracle, fixed-arrival UCB, a two-phase
learn-then-earn heuristic, and a uniform random policy.

All baselines emit feasible actions and share the search configuration with
the main policy, so regret differences reflect learning rather than search
granularity. The learn-then-earn policy spends its exploration budget on
D-optimal (greedy log-det) actions and then prices greedily under its
current estimates with a constant arrival rate.
"""

from __future__ import annotations

import enum
import itertools
import math

import numpy as np

from .errors import ConfigurationError
from .estimation import (History, PeriodObservation, global_mle, phi_batch,
                         phi_matrix)
from .model import (Action, ModelParams, ProductFeatures,
                    choice_probabilities_batch, make_action)
from .policy import RIDGE, PolicyConfig, TwoStagePolicy, build_initial_block
from .search import maximize_over_actions, oracle_best_action, utility_seed_fn


class BaselineKind(enum.Enum):
    ORACLE = "oracle"
    FIXED_ARRIVAL_UCB = "fixed_ucb"
    LEARN_THEN_EARN = "learn_then_earn"
    RANDOM = "random"


def fixed_arrival_ucb_policy(config: PolicyConfig,
                             initial_block=None) -> TwoStagePolicy:
    """MNL-only UCB: plug-in per-customer revenue plus the choice-model bonus,
    with the arrival rate treated as the constant one."""
    return TwoStagePolicy(config, arrival_model=False, name="fixed_ucb",
                          initial_block=initial_block)


class OraclePolicy:
    """Clairvoyant policy; requires the true parameters."""

    name = "oracle"

    def __init__(self, config: PolicyConfig, truth: ModelParams):
        self.config = config
        self.truth = truth
        self.diagnostics: list[dict] = []

    def select_action(self, features: ProductFeatures) -> Action:
        act, val = oracle_best_action(self.truth, features, self.config.search,
                                      self.config.K, self.config.N)
        self.diagnostics.append({"policy": self.name, "value": val,
                                 "assortment": list(act.assortment),
                                 "prices": [float(p) for p in act.prices]})
        return act

    def update(self, obs: PeriodObservation) -> None:
        pass


class RandomPolicy:
    """Uniform over assortments and per-product grid prices; seed-deterministic."""

    name = "random"

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self._assortments = list(itertools.combinations(range(config.N), config.K))
        self._grid = config.search.price_grid(config.p_l, config.p_h)
        self.diagnostics: list[dict] = []

    def select_action(self, features: ProductFeatures) -> Action:
        cfg = self.config
        s = self._assortments[int(self.rng.integers(len(self._assortments)))]
        prices = self._grid[self.rng.integers(self._grid.size, size=cfg.K)]
        act = make_action(s, prices, cfg.N, cfg.p_h)
        self.diagnostics.append({"policy": self.name,
                                 "assortment": list(act.assortment),
                                 "prices": [float(p) for p in act.prices]})
        return act

    def update(self, obs: PeriodObservation) -> None:
        pass


class LearnThenEarnPolicy:
    """Two-phase heuristic in the spirit of period-level pricing baselines.

    Phase 1 (t <= T0): pick the action with the largest log-det increment of
    the accumulated choice-model information (greedy D-optimal over the
    assortment x uniform-price-level grid). Phase 2: refit the choice model
    and a constant arrival rate each period, then choose the plug-in revenue
    maximizer. The constant-rate MLE cannot change the argmax but is kept for
    diagnostics.
    """

    name = "learn_then_earn"

    def __init__(self, config: PolicyConfig):
        self.config = config
        self.T0 = config.resolved_T0()
        self.history = History()
        self.info = RIDGE * np.eye(config.d_z)
        self.v_hat = np.zeros(config.d_z)
        self.lam_const = 1.0
        self.diagnostics: list[dict] = []
        self._assortments = list(itertools.combinations(range(config.N), config.K))

    def _dopt_candidates(self, features: ProductFeatures):
        cfg = self.config
        grid = cfg.search.price_grid(cfg.p_l, cfg.p_h)
        for s in self._assortments:
            batch = np.full((grid.size, cfg.N), cfg.p_h)
            batch[:, list(s)] = grid[:, None]
            yield s, batch

    def _dopt_select(self, features: ProductFeatures) -> Action:
        cfg = self.config
        sign, base_logdet = np.linalg.slogdet(self.info)
        best = None
        best_gain = -np.inf
        grid_gram = np.zeros((cfg.d_z, cfg.d_z))
        for s, batch in self._dopt_candidates(features):
            phis = phi_batch(s, batch, features, self.v_hat)
            grid_gram += phis.sum(axis=0)
            for i in range(batch.shape[0]):
                _, ld = np.linalg.slogdet(self.info + phis[i])
                gain = ld - base_logdet
                if gain > best_gain + 1e-15:
                    best_gain = gain
                    best = make_action(s, batch[i, list(s)], cfg.N, cfg.p_h)
        if np.linalg.matrix_rank(grid_gram, tol=1e-10) < cfg.d_z:
            raise ConfigurationError(
                "D-optimal grid is rank-deficient: the feature directions "
                "cannot be identified on this action grid")
        return best

    def select_action(self, features: ProductFeatures) -> Action:
        cfg = self.config
        t = len(self.history) + 1
        if t <= self.T0:
            act = self._dopt_select(features)
        else:
            def value_fn(assortment, prices_batch):
                q = choice_probabilities_batch(assortment, prices_batch,
                                               features, self.v_hat)
                rev = np.sum(prices_batch[:, list(assortment)] * q[:, 1:], axis=1)
                return cfg.lam0 * self.lam_const * rev

            seed_fn = utility_seed_fn(features, self.v_hat, cfg.p_l, cfg.p_h,
                                      cfg.search)
            act, _ = maximize_over_actions(value_fn, cfg.N, cfg.K, cfg.p_l,
                                           cfg.p_h, cfg.search, seed_fn=seed_fn)
        self.diagnostics.append({
            "policy": self.name, "t": t,
            "phase": "learn" if t <= self.T0 else "earn",
            "assortment": list(act.assortment),
            "prices": [float(p) for p in act.prices],
            "lam_const": float(self.lam_const),
        })
        return act

    def update(self, obs: PeriodObservation) -> None:
        cfg = self.config
        self.history.append(obs)
        self.info = self.info + phi_matrix(obs.action, obs.features, self.v_hat)
        t = len(self.history)
        if t >= self.T0:
            rep = global_mle("mnl", self.history, radius=cfg.v_bar,
                             x0=self.v_hat, tol=cfg.mle_tol,
                             max_iter=cfg.mle_max_iter)
            if rep.converged:
                self.v_hat = rep.estimate
            arrivals = sum(o.arrivals for o in self.history)
            self.lam_const = arrivals / (cfg.lam0 * t)


def make_policy(name: str, config: PolicyConfig, truth: ModelParams | None = None,
                rng: np.random.Generator | None = None, initial_block=None):
    """Instantiate a policy by registry name."""
    if name == "pmnl":
        return TwoStagePolicy(config, arrival_model=True, name="pmnl",
                              initial_block=initial_block)
    if name in ("fixed_ucb", BaselineKind.FIXED_ARRIVAL_UCB.value):
        return fixed_arrival_ucb_policy(config, initial_block=initial_block)
    if name in ("learn_then_earn", BaselineKind.LEARN_THEN_EARN.value):
        return LearnThenEarnPolicy(config)
    if name in ("oracle", BaselineKind.ORACLE.value):
        if truth is None:
            raise ConfigurationError("oracle policy needs the true parameters")
        return OraclePolicy(config, truth)
    if name in ("random", BaselineKind.RANDOM.value):
        if rng is None:
            raise ConfigurationError("random policy needs an RNG stream")
        return RandomPolicy(config, rng)
    raise ConfigurationError(f"unknown policy {name!r}")


POLICY_NAMES = ("pmnl", "oracle", "fixed_ucb", "learn_then_earn", "random")
