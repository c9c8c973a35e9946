"""Seeded environment simulation, episode execution, and Monte-Carlo bands.

Randomness uses counter-based Philox streams derived from a SeedSequence
spawn tree, so every (scenario, seed, policy, config) tuple determines every
output byte. Replications are independent streams keyed by replication
index; within a replication the feature stream is shared across policies so
comparisons see the same market.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import make_policy
from .errors import PoissonMnlError
from .estimation import PeriodObservation
from .model import (Action, ModelParams, ProductFeatures, arrival_rate,
                    choice_probabilities, expected_period_revenue)
from .policy import PolicyConfig, build_initial_block
from .scenarios import Scenario
from .search import oracle_best_action

RNG_IDENTITY = "philox4x64-10 + numpy SeedSequence spawn"


@dataclass
class Environment:
    """Ground truth plus the feature generator for one replication."""

    scenario: Scenario
    truth: ModelParams

    def draw_features(self, rng: np.random.Generator, period: int) -> ProductFeatures:
        s = self.scenario
        if s.features["kind"] == "fixed":
            raw = np.asarray(s.features["matrix"], dtype=float)
        elif s.features["kind"] == "iid_uniform":
            raw = rng.uniform(s.features["low"], s.features["high"],
                              size=(s.N, s.d_z))
        else:
            raise PoissonMnlError(f"unknown feature kind {s.features['kind']!r}")
        if s.normalize_features:
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            raw = raw / np.maximum(norms, 1.0)
        choice = None
        if s.choice_transform["kind"] == "affine":
            choice = s.choice_transform["a"] * raw + s.choice_transform["b"]
        return ProductFeatures(raw, period=period, choice_matrix=choice)


def draw_truth(scenario: Scenario, rng: np.random.Generator) -> ModelParams:
    s = scenario
    if s.v_star["kind"] == "fixed":
        v = np.asarray(s.v_star["value"], dtype=float)
    elif s.v_star["kind"] == "uniform":
        v = rng.uniform(s.v_star["low"], s.v_star["high"], size=s.d_z)
    else:
        raise PoissonMnlError(f"unknown v_star kind {s.v_star['kind']!r}")
    return ModelParams(
        theta=np.asarray(s.theta_star, dtype=float), v=v, lam0=s.lam0,
        x_bar=s.x_bar, v_bar=s.v_bar, p_l=s.p_l, p_h=s.p_h,
        basis=s.basis_object())


def simulate_period(env: Environment, action: Action,
                    features: ProductFeatures,
                    rng: np.random.Generator) -> PeriodObservation:
    """Draw one period: Poisson arrivals, then multinomial choice counts."""
    truth = env.truth
    lam = arrival_rate(action, truth.theta, truth.basis, features)
    n = int(rng.poisson(truth.lam0 * lam))
    probs = choice_probabilities(action, features, truth.v)
    if n > 0:
        counts = rng.multinomial(n, probs)
    else:
        counts = np.zeros(probs.size, dtype=int)
    purchases = {j: int(counts[i + 1])
                 for i, j in enumerate(action.assortment) if counts[i + 1] > 0}
    return PeriodObservation(action, features, n, purchases, int(counts[0]))


@dataclass
class RegretTrace:
    """Per-period accounting of one episode."""

    oracle_rev: np.ndarray
    policy_exp_rev: np.ndarray
    realized_rev: np.ndarray
    cum_regret: np.ndarray
    metadata: dict = field(default_factory=dict)
    actions: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["period", "oracle_rev", "policy_exp_rev",
                         "realized_rev", "cum_regret"])
        for t in range(self.oracle_rev.size):
            writer.writerow([t + 1, repr(float(self.oracle_rev[t])),
                             repr(float(self.policy_exp_rev[t])),
                             repr(float(self.realized_rev[t])),
                             repr(float(self.cum_regret[t]))])
        return buf.getvalue()


def make_policy_config(scenario: Scenario, T: int | None = None,
                       bonus_scale: float | None = None,
                       grid_points: int | None = None,
                       normalize_features: bool | None = None) -> PolicyConfig:
    """Resolve a scenario (plus optional overrides) into a policy config."""
    s = scenario
    if normalize_features is not None:
        s = s.with_overrides(normalize_features=bool(normalize_features))
    search = s.search_config()
    if grid_points is not None:
        search = replace(search, grid_points=int(grid_points))
    sigma_bar0 = s.sigma_bar0()
    provisional = PolicyConfig(
        T=int(T or s.T), lam0=s.lam0, x_bar=s.x_bar, v_bar=s.v_bar,
        sigma0=max(s.K * sigma_bar0 / 2.0, 1e-12), sigma1=1.0,
        d_z=s.d_z, d_x=s.basis_object().d_x, K=s.K, N=s.N,
        p_l=s.p_l, p_h=s.p_h, basis=s.basis_object(), search=search,
        T0_override=s.T0,
        bonus_scale=s.bonus_scale if bonus_scale is None else float(bonus_scale),
        nominal_features=s.nominal_features(),
    )
    block = build_initial_block(provisional)
    nominal = ProductFeatures(provisional.nominal_features)
    gram = np.zeros((provisional.d_x, provisional.d_x))
    for act in block:
        x = provisional.basis.vector(act, nominal)
        gram += np.outer(x, x)
    lam_min = float(np.linalg.eigvalsh(gram)[0])
    sigma1 = max(lam_min / (2.0 * provisional.d_x), 1e-12)
    return replace(provisional, sigma1=sigma1)


def run_episode(policy_name: str, scenario: Scenario, T: int | None = None,
                seed: int | tuple = 0, config: PolicyConfig | None = None,
                initial_block=None) -> RegretTrace:
    """Run one seeded episode of a policy against the scenario environment.

    The oracle is recomputed every period because features change per
    period; at scale its price search also scores the policy's chosen action
    so the reported optimum never falls below it.
    """
    if config is None:
        config = make_policy_config(scenario, T=T)
    T = config.T
    ss = np.random.SeedSequence(seed)
    truth_ss, feat_ss, market_ss, policy_ss = ss.spawn(4)
    truth_rng = np.random.Generator(np.random.Philox(truth_ss))
    feat_rng = np.random.Generator(np.random.Philox(feat_ss))
    market_rng = np.random.Generator(np.random.Philox(market_ss))
    policy_rng = np.random.Generator(np.random.Philox(policy_ss))

    truth = draw_truth(scenario, truth_rng)
    env = Environment(scenario, truth)
    if initial_block is None:
        initial_block = build_initial_block(config)
    policy = make_policy(policy_name, config, truth=truth, rng=policy_rng,
                         initial_block=initial_block)

    oracle_rev = np.empty(T)
    policy_rev = np.empty(T)
    realized = np.empty(T)
    cum = np.empty(T)
    actions = []
    total = 0.0
    for t in range(1, T + 1):
        features = env.draw_features(feat_rng, t)
        action = policy.select_action(features)
        obs = simulate_period(env, action, features, market_rng)
        policy.update(obs)

        _, oracle_val = oracle_best_action(truth, features, config.search,
                                           config.K, config.N)
        exp_rev = expected_period_revenue(action, features, truth)
        oracle_val = max(oracle_val, exp_rev)
        oracle_rev[t - 1] = oracle_val
        policy_rev[t - 1] = exp_rev
        realized[t - 1] = sum(action.prices[j] * c
                              for j, c in obs.purchase_counts.items())
        total += oracle_val - exp_rev
        cum[t - 1] = total
        actions.append(action)

    return RegretTrace(
        oracle_rev, policy_rev, realized, cum,
        metadata={"seed": list(seed) if isinstance(seed, (tuple, list)) else int(seed),
                  "policy": policy_name, "scenario": scenario.name,
                  "T": T, "rng": RNG_IDENTITY},
        actions=actions,
        diagnostics=list(getattr(policy, "diagnostics", [])),
    )


@dataclass
class MonteCarloResult:
    policy: str
    traces: list
    mean: np.ndarray
    p10: np.ndarray
    p90: np.ndarray

    def aggregate_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["period", "mean", "p10", "p90"])
        for t in range(self.mean.size):
            writer.writerow([t + 1, repr(float(self.mean[t])),
                             repr(float(self.p10[t])),
                             repr(float(self.p90[t]))])
        return buf.getvalue()


def _episode_task(args):
    name, scenario, base_seed, rep, config, block = args
    return run_episode(name, scenario, seed=(base_seed, rep), config=config,
                       initial_block=block)


def monte_carlo(policy_names, scenario: Scenario, T: int | None = None,
                n_reps: int | None = None, base_seed: int = 0,
                config: PolicyConfig | None = None, n_jobs: int = 1,
                progress=None) -> dict[str, MonteCarloResult]:
    """Independent replications per policy with shared per-replication markets.

    Replications are embarrassingly parallel; with n_jobs > 1 they run in a
    process pool. Results are keyed by replication index, so the aggregate is
    independent of completion order.
    """
    if config is None:
        config = make_policy_config(scenario, T=T)
    n_reps = n_reps or scenario.n_reps
    block = build_initial_block(config)
    out = {}
    for name in policy_names:
        tasks = [(name, scenario, base_seed, rep, config, block)
                 for rep in range(n_reps)]
        if n_jobs > 1:
            import multiprocessing as mp

            with mp.get_context("fork").Pool(n_jobs) as pool:
                traces = pool.map(_episode_task, tasks)
        else:
            traces = []
            for task in tasks:
                traces.append(_episode_task(task))
                if progress is not None:
                    progress(name, task[3])
        curves = np.stack([tr.cum_regret for tr in traces])
        out[name] = MonteCarloResult(
            policy=name,
            traces=traces,
            mean=curves.mean(axis=0),
            p10=np.quantile(curves, 0.10, axis=0, method="linear"),
            p90=np.quantile(curves, 0.90, axis=0, method="linear"),
        )
    return out
