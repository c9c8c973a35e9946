"""Deterministic action search shared by the oracle and every policy.

The price argmax runs on a uniform per-product grid. Small grids are
enumerated exhaustively (Cartesian product, lexicographic order, strict
improvement -> lexicographic tie-breaking); larger ones fall back to
coordinate ascent on the same grid, which keeps the search deterministic and
bounded. An optional golden-section refinement recovers off-grid optima.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError
from .model import Action, ModelParams, ProductFeatures, expected_period_revenue_batch, make_action

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SearchConfig:
    """Grid resolution and enumeration limits for the action argmax."""

    grid_points: int = 21
    assortment_limit: int = 10_000
    price_enum_limit: int = 20_000
    coordinate_sweeps: int = 12
    pair_sweeps: int = 6
    max_pair_products: int = 8
    assortment_finalists: int = 2
    refine: bool = False
    refine_sweeps: int = 3
    refine_tol: float = 1e-6
    allow_heuristic_assortments: bool = False

    def price_grid(self, p_l: float, p_h: float) -> np.ndarray:
        return np.linspace(p_l, p_h, self.grid_points)

    def to_dict(self) -> dict:
        return {
            "grid_points": self.grid_points,
            "assortment_limit": self.assortment_limit,
            "price_enum_limit": self.price_enum_limit,
            "coordinate_sweeps": self.coordinate_sweeps,
            "pair_sweeps": self.pair_sweeps,
            "max_pair_products": self.max_pair_products,
            "assortment_finalists": self.assortment_finalists,
            "refine": self.refine,
            "refine_sweeps": self.refine_sweeps,
            "refine_tol": self.refine_tol,
            "allow_heuristic_assortments": self.allow_heuristic_assortments,
        }


def search_config_from_dict(d: dict) -> SearchConfig:
    return replace(SearchConfig(), **d)


def _best_prices_exhaustive(value_fn, assortment, grid, n_products, p_h):
    k = len(assortment)
    combos = np.array(list(itertools.product(grid, repeat=k)))
    batch = np.full((combos.shape[0], n_products), p_h)
    batch[:, list(assortment)] = combos
    values = value_fn(assortment, batch)
    best = int(np.argmax(values))  # first max = lexicographic winner
    return batch[best], float(values[best])


def clearance_candidates(utilities, grid, p_l, p_h, n_points=48):
    """Price vectors of the form clip(u - c, p_l, p_h), snapped to the grid.

    At a revenue optimum the net utilities u_j - p_j tend to equalize, so
    scanning the scalar clearance c covers the structurally relevant family.
    The scan has strong value margins, which keeps seed selection stable
    under small perturbations of the value function.
    """
    u = np.asarray(utilities, dtype=float)
    lo = u.min() - p_h - 1.0
    hi = u.max() - p_l + 1.0
    cs = np.linspace(lo, hi, n_points)
    raw = np.clip(u[None, :] - cs[:, None], p_l, p_h)
    snapped = grid[np.argmin(np.abs(grid[None, None, :] - raw[:, :, None]),
                             axis=2)]
    return np.unique(snapped, axis=0)


def _best_prices_coordinate(value_fn, assortment, grid, n_products, p_h, cfg,
                            seed_prices=None):
    """Seeded start, single-coordinate sweeps, then joint pair sweeps.

    Pair sweeps matter: when one product's price moves, demand re-routes to
    another, so many improving moves change two prices at once.
    """
    idx = list(assortment)
    batch = np.full((grid.size, n_products), p_h)
    batch[:, idx] = grid[:, None]
    if seed_prices is not None and len(seed_prices):
        extra = np.full((len(seed_prices), n_products), p_h)
        extra[:, idx] = np.asarray(seed_prices)[:, idx]
        batch = np.concatenate([batch, extra])
    values = value_fn(assortment, batch)
    best = int(np.argmax(values))
    prices = batch[best].copy()
    best_val = float(values[best])

    for _ in range(cfg.coordinate_sweeps):
        improved = False
        for j in idx:
            cand = np.tile(prices, (grid.size, 1))
            cand[:, j] = grid
            vals = value_fn(assortment, cand)
            b = int(np.argmax(vals))
            if vals[b] > best_val:
                best_val = float(vals[b])
                prices = cand[b].copy()
                improved = True
        if not improved:
            break

    if len(idx) <= cfg.max_pair_products and cfg.pair_sweeps > 0:
        coarse = grid[::2] if grid.size > 11 else grid
        pair_grid = np.array(list(itertools.product(coarse, coarse)))
        for _ in range(cfg.pair_sweeps):
            improved = False
            for i, j in itertools.combinations(idx, 2):
                cand = np.tile(prices, (pair_grid.shape[0], 1))
                cand[:, i] = pair_grid[:, 0]
                cand[:, j] = pair_grid[:, 1]
                vals = value_fn(assortment, cand)
                b = int(np.argmax(vals))
                if vals[b] > best_val:
                    best_val = float(vals[b])
                    prices = cand[b].copy()
                    improved = True
            if not improved:
                break
        # polish back onto the full grid after the coarse pair moves
        for _ in range(cfg.coordinate_sweeps):
            improved = False
            for j in idx:
                cand = np.tile(prices, (grid.size, 1))
                cand[:, j] = grid
                vals = value_fn(assortment, cand)
                b = int(np.argmax(vals))
                if vals[b] > best_val:
                    best_val = float(vals[b])
                    prices = cand[b].copy()
                    improved = True
            if not improved:
                break
    return prices, best_val


def _golden_refine(value_fn, assortment, prices, best_val, p_l, p_h, sweeps, tol):
    idx = list(assortment)
    prices = prices.copy()
    for _ in range(sweeps):
        for j in idx:
            a, b = p_l, p_h

            def f(x):
                cand = prices.copy()
                cand[j] = x
                return float(value_fn(assortment, cand[None, :])[0])

            c = b - GOLDEN * (b - a)
            d = a + GOLDEN * (b - a)
            fc, fd = f(c), f(d)
            while b - a > tol:
                if fc >= fd:
                    b, d, fd = d, c, fc
                    c = b - GOLDEN * (b - a)
                    fc = f(c)
                else:
                    a, c, fc = c, d, fd
                    d = a + GOLDEN * (b - a)
                    fd = f(d)
            x_star = 0.5 * (a + b)
            v_star = f(x_star)
            if v_star > best_val:
                best_val = v_star
                prices[j] = x_star
    return prices, best_val


def best_prices_for_assortment(value_fn, assortment, n_products, p_l, p_h,
                               cfg: SearchConfig, seed_prices=None):
    """Maximize value_fn over the price box for a fixed assortment.

    value_fn(assortment, prices_batch (m, N)) -> (m,) array. Out-of-assortment
    prices stay pinned at p_h. seed_prices supplies extra ascent starts.
    """
    grid = cfg.price_grid(p_l, p_h)
    k = len(assortment)
    if grid.size ** k <= cfg.price_enum_limit:
        prices, val = _best_prices_exhaustive(value_fn, assortment, grid,
                                              n_products, p_h)
    else:
        prices, val = _best_prices_coordinate(value_fn, assortment, grid,
                                              n_products, p_h, cfg,
                                              seed_prices=seed_prices)
    if cfg.refine:
        prices, val = _golden_refine(value_fn, assortment, prices, val,
                                     p_l, p_h, cfg.refine_sweeps, cfg.refine_tol)
    return prices, val


def _greedy_swap_assortments(value_fn, n, k, n_products, p_l, p_h, cfg,
                             seed_scores, seed_fn):
    """Local search over assortments from the top-K seed; deterministic."""
    order = np.argsort(-np.asarray(seed_scores), kind="stable")
    current = tuple(sorted(int(j) for j in order[:k]))

    def solve(s):
        seeds = seed_fn(s) if seed_fn is not None else None
        return best_prices_for_assortment(value_fn, s, n_products, p_l, p_h,
                                          cfg, seed_prices=seeds)

    prices, val = solve(current)
    improved = True
    while improved:
        improved = False
        outside = [j for j in range(n) if j not in current]
        for pos in range(k):
            for cand in outside:
                trial = tuple(sorted(set(current) - {current[pos]} | {cand}))
                if len(trial) != k:
                    continue
                tp, tv = solve(trial)
                if tv > val:
                    current, prices, val = trial, tp, tv
                    improved = True
                    outside = [j for j in range(n) if j not in current]
                    break
            if improved:
                break
    return current, prices, val


def maximize_over_actions(value_fn, n: int, k: int, p_l: float, p_h: float,
                          cfg: SearchConfig, seed_scores=None, seed_fn=None):
    """Argmax of value_fn over K-subsets x price grid.

    Returns (Action, value). Assortments enumerate lexicographically when
    C(N, K) fits the limit; otherwise greedy swap from the top-K seed (needs
    allow_heuristic_assortments, else CapacityError). ``seed_fn(assortment)``
    may supply extra price-vector starts for the per-assortment search.
    """
    n_assort = math.comb(n, k)
    if n_assort > cfg.assortment_limit:
        if not cfg.allow_heuristic_assortments:
            raise CapacityError(
                f"C({n},{k}) = {n_assort} exceeds the enumeration limit "
                f"{cfg.assortment_limit}; enable heuristic search"
            )
        if seed_scores is None:
            seed_scores = [-j for j in range(n)]  # lexicographic seed
        s, prices, val = _greedy_swap_assortments(value_fn, n, k, n, p_l, p_h,
                                                  cfg, seed_scores, seed_fn)
        return Action(s, tuple(prices)), val

    assortments = list(itertools.combinations(range(n), k))
    grid = cfg.price_grid(p_l, p_h)
    exhaustive = grid.size ** k <= cfg.price_enum_limit

    # non-exhaustive price search: rank assortments by their seed-scan value
    # and run the full search only on the leaders (ties hedge on two)
    if (not exhaustive and seed_fn is not None and cfg.assortment_finalists > 0
            and len(assortments) > cfg.assortment_finalists):
        scores = []
        for s in assortments:
            idx = list(s)
            batch = np.full((grid.size, n), p_h)
            batch[:, idx] = grid[:, None]
            seeds = seed_fn(s)
            if seeds is not None and len(seeds):
                batch = np.concatenate([batch, seeds])
            scores.append(float(np.max(value_fn(s, batch))))
        order = np.argsort(-np.asarray(scores), kind="stable")
        assortments = [assortments[i] for i in order[:cfg.assortment_finalists]]
        assortments.sort()    # keep lexicographic tie-breaking among finalists

    best_action = None
    best_val = -np.inf
    for s in assortments:
        seeds = seed_fn(s) if seed_fn is not None else None
        prices, val = best_prices_for_assortment(value_fn, s, n, p_l, p_h, cfg,
                                                 seed_prices=seeds)
        if val > best_val:
            best_val = val
            best_action = Action(s, tuple(prices))
    return best_action, best_val


def utility_seed_fn(features: ProductFeatures, v, p_l: float, p_h: float,
                    cfg: SearchConfig):
    """Clearance-family seed generator from (estimated) product utilities."""
    z = features.for_choice()
    grid = cfg.price_grid(p_l, p_h)
    u_all = z @ np.asarray(v, dtype=float)

    def seed_fn(assortment):
        idx = list(assortment)
        cands = clearance_candidates(u_all[idx], grid, p_l, p_h)
        full = np.full((cands.shape[0], z.shape[0]), p_h)
        full[:, idx] = cands
        return full

    return seed_fn


def oracle_best_action(params: ModelParams, features: ProductFeatures,
                       cfg: SearchConfig, k: int, n: int | None = None):
    """Clairvoyant argmax of expected period revenue under true parameters."""
    n = features.n_products if n is None else n

    def value_fn(assortment, prices_batch):
        return expected_period_revenue_batch(assortment, prices_batch, features, params)

    def seed():
        # marginal utility ranking for the heuristic seed: singleton revenues
        scores = []
        for j in range(n):
            batch = np.full((1, n), params.p_h)
            batch[0, j] = params.p_l
            scores.append(float(value_fn((j,), batch)[0]))
        return scores

    n_assort = math.comb(n, k)
    seed_scores = seed() if (n_assort > cfg.assortment_limit
                             and cfg.allow_heuristic_assortments) else None
    seed_fn = utility_seed_fn(features, params.v, params.p_l, params.p_h, cfg)
    return maximize_over_actions(value_fn, n, k, params.p_l, params.p_h, cfg,
                                 seed_scores=seed_scores, seed_fn=seed_fn)
