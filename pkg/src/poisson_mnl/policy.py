"""Two-stage learning policy: pure exploration, then local MLE + UCB.

Stage 1 walks a precomputed spanning block of actions. At its end both
global MLEs freeze the pilot estimates; afterwards each period refits both
models inside fixed-radius balls around the pilots and picks the action
maximizing the upper confidence bound on expected revenue: the plug-in
revenue plus two clamped bonuses weighted by the accumulated information.

The same machinery with the arrival model disabled (unit rate, no arrival
bonus) gives the fixed-arrival-rate UCB baseline.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import PolicyConstants, compute_constants, compute_t0_T0
from .errors import (ConfigurationError, InvalidInputError,
                     NeedsMoreExplorationError)
from .estimation import (FisherState, History, PeriodObservation, global_mle,
                         local_mle, phi_batch, project_ball, ridge_inv_sqrt)
from .model import (Action, ArrivalBasis, ProductFeatures,
                    choice_probabilities_batch, make_action)
from .search import SearchConfig, maximize_over_actions, utility_seed_fn

RIDGE = 1e-10
SINGULAR_TOL = 1e-12


def _batch_opnorm_psd(mats: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of a stack of small symmetric PSD matrices."""
    sym = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    return np.linalg.eigvalsh(sym)[:, -1]


@dataclass(frozen=True)
class PolicyConfig:
    """Everything a two-stage policy needs to run for a horizon T."""

    T: int
    lam0: float
    x_bar: float
    v_bar: float
    sigma0: float
    sigma1: float
    d_z: int
    d_x: int
    K: int
    N: int
    p_l: float
    p_h: float
    basis: ArrivalBasis
    search: SearchConfig = field(default_factory=SearchConfig)
    T0_override: int | None = None
    bonus_scale: float = 1.0
    fisher_mode: str = "recompute"      # or "incremental"
    mle_refresh_every: int = 1
    mle_tol: float = 1e-8
    mle_max_iter: int = 10_000
    nominal_features: np.ndarray | None = None

    def __post_init__(self):
        for name in ("lam0", "x_bar", "v_bar", "sigma0", "sigma1"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be strictly positive")
        if not (0 < self.p_l < self.p_h):
            raise InvalidInputError("prices must satisfy 0 < p_l < p_h")

    def resolved_T0(self) -> int:
        if self.T0_override is not None:
            return int(self.T0_override)
        return compute_t0_T0(self)[1]


# ---------------------------------------------------------------------------
# Stage-1 schedule


def build_initial_block(config: PolicyConfig) -> list[Action]:
    """Greedy rank-growth over a coarse action grid; block spans R^{d_x}.

    Candidates cycle assortments across the catalog (feature coverage) and
    sweep coarse price patterns. Candidates enter in a fixed order, so the
    block is deterministic given the config.
    """
    n, k = config.N, config.K
    feats = config.nominal_features
    if feats is None:
        feats = np.full((n, config.d_z), 1.0)
    features = ProductFeatures(np.asarray(feats, dtype=float))

    assortments = []
    for i in range(n):
        s = tuple(sorted((i + j) % n for j in range(k)))
        if s not in assortments:
            assortments.append(s)
    for s in itertools.combinations(range(n), k):
        if s not in assortments:
            assortments.append(s)
        if len(assortments) >= max(n, 3 * config.d_x):
            break

    levels = np.linspace(config.p_l, config.p_h, 5)
    price_patterns = [np.full(k, lv) for lv in levels]
    for pos in range(k):
        hi = np.full(k, config.p_l)
        hi[pos] = config.p_h
        price_patterns.append(hi)
        lo = np.full(k, config.p_h)
        lo[pos] = config.p_l
        price_patterns.append(lo)

    candidates = []
    for s in assortments:
        for pat in price_patterns:
            candidates.append(make_action(s, pat, n, config.p_h))

    chosen: list[Action] = []
    basis_vectors: list[np.ndarray] = []
    for _ in range(config.d_x):
        best = None
        best_res = SINGULAR_TOL
        for act in candidates:
            x = config.basis.vector(act, features)
            r = x.copy()
            for b in basis_vectors:
                r -= (r @ b) * b
            res = np.linalg.norm(r)
            if res > best_res:
                best, best_res, best_dir = act, res, r / res
        if best is None:
            raise ConfigurationError(
                "cannot span the arrival basis on the coarse action grid; "
                "the basis is not identifiable on the feasible set")
        chosen.append(best)
        basis_vectors.append(best_dir)
    return chosen


def initial_sequence(config: PolicyConfig, t: int,
                     block: list[Action] | None = None) -> Action:
    """Deterministic Stage-1 action for period t (1-indexed), cycling the block."""
    if t < 1:
        raise InvalidInputError("period index starts at 1")
    if block is None:
        block = build_initial_block(config)
    return block[(t - 1) % len(block)]


# ---------------------------------------------------------------------------
# Policy


class TwoStagePolicy:
    """PMNL-style policy; ``arrival_model=False`` gives the fixed-rate variant."""

    def __init__(self, config: PolicyConfig, arrival_model: bool = True,
                 name: str | None = None, initial_block: list[Action] | None = None):
        self.config = config
        self.arrival_model = arrival_model
        self.name = name or ("pmnl" if arrival_model else "fixed_ucb")
        self.T0 = config.resolved_T0()
        self.constants: PolicyConstants = compute_constants(
            config, max(self.T0, 2), arrival_model=arrival_model)
        self.x_bar_eff = config.x_bar if arrival_model else 0.0
        self.history = History()
        self.fisher = FisherState(config.lam0, self.x_bar_eff, config.d_x,
                                  config.d_z)
        self.block = initial_block or build_initial_block(config)
        self.stage = "explore"
        self.theta_pilot = None
        self.v_pilot = None
        self.theta_local = None
        self.v_local = None
        self.diagnostics: list[dict] = []
        self._period_cache = None
        self._mle_failures = 0

    # -- estimation plumbing -------------------------------------------------

    def _i_poi(self, theta) -> np.ndarray:
        X = self.history.basis_vectors(self.config.basis)
        lam = np.exp(X @ theta)
        return self.config.lam0 * np.einsum("s,sd,se->de", lam, X, X)

    def _i_mnl_hat(self, v) -> np.ndarray:
        Z, P, _, _, _ = self.history.mnl_arrays()
        u = Z @ v - P
        m = np.maximum(u.max(axis=1), 0.0)
        denom = np.exp(-m) + np.sum(np.exp(u - m[:, None]), axis=1)
        q = np.exp(u - m[:, None]) / denom[:, None]
        second = np.einsum("sk,skd,ske->de", q, Z, Z)
        mean = np.einsum("sk,skd->sd", q, Z)
        phi_sum = second - np.einsum("sd,se->de", mean, mean)
        return self.config.lam0 * math.exp(-self.x_bar_eff) * phi_sum

    def _refresh_period_cache(self):
        """Invert both information matrices at the current local estimates."""
        if self.config.fisher_mode == "incremental":
            i_poi = self.fisher.i_poi
            i_mnl = self.fisher.i_mnl_hat
        else:
            i_poi = self._i_poi(self.theta_local) if self.arrival_model else None
            i_mnl = self._i_mnl_hat(self.v_local)
        cache = {}
        if self.arrival_model:
            w = np.linalg.eigvalsh(0.5 * (i_poi + i_poi.T))
            if w[-1] <= 0 or w[0] <= SINGULAR_TOL * w[-1]:
                raise NeedsMoreExplorationError(
                    "arrival information matrix is singular")
            ridge = RIDGE * np.trace(i_poi) / self.config.d_x
            cache["i_poi_inv"] = np.linalg.inv(
                i_poi + ridge * np.eye(self.config.d_x))
        w = np.linalg.eigvalsh(0.5 * (i_mnl + i_mnl.T))
        if w[-1] <= 0 or w[0] <= SINGULAR_TOL * w[-1]:
            raise NeedsMoreExplorationError("choice information matrix is singular")
        cache["w_mnl"] = ridge_inv_sqrt(i_mnl, RIDGE)
        self._period_cache = cache

    def _fit(self, kind, center, radius, x0):
        cfg = self.config
        if kind == "poisson":
            return local_mle("poisson", self.history, center=center,
                             radius=radius, basis=cfg.basis, lam0=cfg.lam0,
                             x0=x0, tol=cfg.mle_tol, max_iter=cfg.mle_max_iter)
        return local_mle("mnl", self.history, center=center, radius=radius,
                         x0=x0, tol=cfg.mle_tol, max_iter=cfg.mle_max_iter)

    # -- UCB -----------------------------------------------------------------

    def _ucb_batch(self, assortment, prices_batch, features: ProductFeatures,
                   stabilized: bool = False):
        """Plug-in revenue and the two bonus terms for a batch of price vectors.

        ``bonus_scale`` multiplies each bonus term; 1.0 is the faithful bound.
        With ``stabilized=True`` each bonus is shifted down by its clamp cap,
        an action-independent constant. That keeps the argmax identical while
        preserving float precision when the caps dwarf the plug-in term.
        """
        cfg = self.config
        cst = self.constants
        cache = self._period_cache
        scale = cfg.bonus_scale
        q = choice_probabilities_batch(assortment, prices_batch, features,
                                       self.v_local)
        r_hat = np.sum(prices_batch[:, list(assortment)] * q[:, 1:], axis=1)

        if self.arrival_model:
            x_b = cfg.basis.vectors(assortment, prices_batch, features)
            lam_hat = np.exp(x_b @ self.theta_local)
            plugin = cfg.lam0 * lam_hat * r_hat
            op = cfg.lam0 * lam_hat * np.einsum(
                "md,de,me->m", x_b, cache["i_poi_inv"], x_b)
            cap = cfg.lam0 * (math.exp(cfg.x_bar) - math.exp(-cfg.x_bar))
            with np.errstate(over="ignore"):
                sqrt_branch = np.sqrt(
                    cfg.lam0 * math.exp((2.0 * cst.tau_theta + 1.0) * cfg.x_bar)
                    * cst.omega_theta * np.maximum(op, 0.0))
            if stabilized:
                poi_bonus = -scale * cfg.p_h * np.maximum(cap - sqrt_branch, 0.0)
            else:
                poi_bonus = scale * cfg.p_h * np.minimum(cap, sqrt_branch)
        else:
            plugin = cfg.lam0 * r_hat
            poi_bonus = np.zeros_like(r_hat)

        pref = cfg.lam0 * math.exp(self.x_bar_eff)
        phis = phi_batch(assortment, prices_batch, features, self.v_local)
        w = cache["w_mnl"]
        a = pref * np.einsum("de,mef,fg->mdg", w, phis, w)
        op_mnl = _batch_opnorm_psd(a)
        with np.errstate(over="ignore"):
            sqrt_mnl = np.sqrt(cst.c0 * cst.omega_v * np.maximum(op_mnl, 0.0))
        if stabilized:
            mnl_bonus = -scale * pref * np.maximum(cfg.p_h - sqrt_mnl, 0.0)
        else:
            mnl_bonus = scale * pref * np.minimum(cfg.p_h, sqrt_mnl)
        return plugin, poi_bonus, mnl_bonus

    def ucb_value(self, action: Action, features: ProductFeatures) -> float:
        """Upper confidence bound on the expected revenue of one action."""
        if self.stage != "ucb":
            raise NeedsMoreExplorationError("UCB is defined after Stage 1 only")
        if self._period_cache is None:
            self._refresh_period_cache()
        batch = action.price_array()[None, :]
        plugin, poi, mnl = self._ucb_batch(action.assortment, batch, features)
        return float(plugin[0] + poi[0] + mnl[0])

    # -- protocol ------------------------------------------------------------

    def select_action(self, features: ProductFeatures) -> Action:
        cfg = self.config
        t = len(self.history) + 1
        if t <= self.T0:
            act = initial_sequence(cfg, t, self.block)
            self._record(t, act, None)
            return act
        if self._period_cache is None:
            self._refresh_period_cache()

        def value_fn(assortment, prices_batch):
            plugin, poi, mnl = self._ucb_batch(assortment, prices_batch,
                                               features, stabilized=True)
            return plugin + poi + mnl

        seed_scores = None
        if (math.comb(cfg.N, cfg.K) > cfg.search.assortment_limit
                and cfg.search.allow_heuristic_assortments):
            seed_scores = [float(features.for_choice()[j] @ self.v_local)
                           for j in range(cfg.N)]
        seed_fn = utility_seed_fn(features, self.v_local, cfg.p_l, cfg.p_h,
                                  cfg.search)
        act, _ = maximize_over_actions(value_fn, cfg.N, cfg.K, cfg.p_l, cfg.p_h,
                                       cfg.search, seed_scores=seed_scores,
                                       seed_fn=seed_fn)
        self._record(t, act, features)
        return act

    def update(self, obs: PeriodObservation) -> None:
        cfg = self.config
        self.history.append(obs)
        t = len(self.history)

        if t < self.T0:
            return
        if t == self.T0:
            rep_v = global_mle("mnl", self.history, radius=cfg.v_bar,
                               tol=cfg.mle_tol, max_iter=cfg.mle_max_iter)
            self.v_pilot = rep_v.estimate
            self.v_local = rep_v.estimate
            if self.arrival_model:
                rep_t = global_mle("poisson", self.history, radius=1.0,
                                   basis=cfg.basis, lam0=cfg.lam0,
                                   tol=cfg.mle_tol, max_iter=cfg.mle_max_iter)
                self.theta_pilot = rep_t.estimate
                self.theta_local = rep_t.estimate
            self.stage = "ucb"
            self._rebuild_incremental_fisher()
            self._period_cache = None
            return

        refresh = ((t - self.T0) % max(cfg.mle_refresh_every, 1) == 0)
        if refresh:
            warm_v = project_ball(self.v_local, self.v_pilot,
                                  self.constants.tau_v)
            rep_v = self._fit("mnl", self.v_pilot, self.constants.tau_v, warm_v)
            if rep_v.converged:
                self.v_local = rep_v.estimate
            else:
                self._mle_failures += 1
            if self.arrival_model:
                warm_t = project_ball(self.theta_local, self.theta_pilot,
                                      self.constants.tau_theta)
                rep_t = self._fit("poisson", self.theta_pilot,
                                  self.constants.tau_theta, warm_t)
                if rep_t.converged:
                    self.theta_local = rep_t.estimate
                else:
                    self._mle_failures += 1
        if cfg.fisher_mode == "incremental":
            from .estimation import accumulate_fisher
            theta = (self.theta_local if self.arrival_model
                     else np.zeros(cfg.d_x))
            self.fisher = accumulate_fisher(self.fisher, obs, theta,
                                            self.v_local, cfg.basis)
        self._period_cache = None

    def _rebuild_incremental_fisher(self):
        """Seed the running sums with Stage-1 periods at the pilot estimates."""
        cfg = self.config
        self.fisher = FisherState(cfg.lam0, self.x_bar_eff, cfg.d_x, cfg.d_z)
        from .estimation import accumulate_fisher
        theta = (self.theta_pilot if self.arrival_model else np.zeros(cfg.d_x))
        for obs in self.history:
            self.fisher = accumulate_fisher(self.fisher, obs, theta,
                                            self.v_pilot, cfg.basis)

    def _record(self, t, action, features):
        rec = {
            "t": t,
            "stage": self.stage,
            "policy": self.name,
            "assortment": list(action.assortment),
            "prices": [float(p) for p in action.prices],
            "tau_theta": self.constants.tau_theta,
            "tau_v": self.constants.tau_v,
            "omega_theta": self.constants.omega_theta,
            "omega_v": self.constants.omega_v,
            "bonus_scale": self.config.bonus_scale,
            "mle_failures": self._mle_failures,
        }
        if self.stage == "ucb" and features is not None:
            batch = action.price_array()[None, :]
            plugin, poi, mnl = self._ucb_batch(action.assortment, batch, features)
            cap_poi = self.config.lam0 * (math.exp(self.config.x_bar)
                                          - math.exp(-self.config.x_bar))
            rec.update({
                "theta_hat": (None if self.theta_local is None
                              else [float(x) for x in self.theta_local]),
                "v_hat": [float(x) for x in self.v_local],
                "plugin": float(plugin[0]),
                "poi_bonus": float(poi[0]),
                "mnl_bonus": float(mnl[0]),
                "poi_clamped": bool(self.arrival_model
                                    and poi[0] >= 0.999 * self.config.p_h * cap_poi),
                "mnl_clamped": bool(mnl[0] >= 0.999 * self.config.lam0
                                    * math.exp(self.x_bar_eff) * self.config.p_h),
            })
        self.diagnostics.append(rec)
