"""Generative model primitives: choice probabilities, arrival rates, revenues.

All functions here are pure and operate on immutable inputs, so they are safe
to call concurrently. Utilities are ``v @ z_j - p_j`` against an outside
option of utility zero; the per-period arrival rate is ``exp(theta @ x(S, p))``
for a configurable basis ``x``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericOverflowError

# Exponents beyond this magnitude indicate parameters outside the assumption
# envelope; we refuse to evaluate rather than silently saturate.
MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class ProductFeatures:
    """Per-period feature matrix, one row per product.

    ``matrix`` feeds the arrival basis. ``choice_matrix`` feeds the choice
    model; it defaults to ``matrix`` and only differs when a scenario applies
    a known affine transform to the features the market reacts to.
    """

    matrix: np.ndarray
    period: int = 0
    choice_matrix: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InvalidInputError("feature matrix must be 2-D (N x d_z)")
        object.__setattr__(self, "matrix", m)
        if self.choice_matrix is not None:
            c = np.asarray(self.choice_matrix, dtype=float)
            if c.shape != m.shape:
                raise InvalidInputError("choice_matrix shape must match matrix")
            object.__setattr__(self, "choice_matrix", c)

    @property
    def n_products(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def for_choice(self) -> np.ndarray:
        return self.matrix if self.choice_matrix is None else self.choice_matrix

    def max_row_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.for_choice(), axis=1)))


@dataclass(frozen=True)
class Action:
    """An assortment of exactly K product indices plus a full price vector.

    Prices of products outside the assortment are fixed at the upper price
    bound by convention, which makes actions totally ordered and hashable.
    """

    assortment: tuple[int, ...]
    prices: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "assortment", tuple(int(j) for j in self.assortment))
        object.__setattr__(self, "prices", tuple(float(p) for p in self.prices))
        if len(set(self.assortment)) != len(self.assortment):
            raise InvalidInputError("assortment indices must be distinct")
        if sorted(self.assortment) != list(self.assortment):
            raise InvalidInputError("assortment indices must be sorted")

    @property
    def k(self) -> int:
        return len(self.assortment)

    def price_array(self) -> np.ndarray:
        return np.asarray(self.prices, dtype=float)

    def offered_prices(self) -> np.ndarray:
        return self.price_array()[list(self.assortment)]

    def validate(self, n_products: int, k: int, p_l: float, p_h: float) -> None:
        if len(self.prices) != n_products:
            raise InvalidInputError(
                f"price vector has length {len(self.prices)}, expected {n_products}"
            )
        if self.k != k:
            raise InvalidInputError(f"assortment has {self.k} products, expected {k}")
        if any(j < 0 or j >= n_products for j in self.assortment):
            raise InvalidInputError("assortment index out of range")
        pa = self.price_array()
        if np.any(pa < p_l - 1e-12) or np.any(pa > p_h + 1e-12):
            raise InvalidInputError("a price lies outside [p_l, p_h]")


def make_action(assortment, prices_in_assortment, n_products: int, p_h: float) -> Action:
    """Build an Action from in-assortment prices, padding the rest with p_h."""
    assortment = tuple(sorted(int(j) for j in assortment))
    full = np.full(n_products, float(p_h))
    full[list(assortment)] = np.asarray(prices_in_assortment, dtype=float)
    return Action(assortment, tuple(full))


# ---------------------------------------------------------------------------
# Arrival bases


class ArrivalBasis:
    """Maps an action (and optionally features) to the arrival sufficient statistic."""

    basis_id: str = "abstract"
    d_x: int = 0

    def vector(self, action: Action, features: ProductFeatures | None = None) -> np.ndarray:
        raise NotImplementedError

    def vectors(self, assortment, prices_batch: np.ndarray,
                features: ProductFeatures | None = None) -> np.ndarray:
        """Batched version: prices_batch is (m, N); returns (m, d_x)."""
        out = np.empty((prices_batch.shape[0], self.d_x))
        for i, p in enumerate(prices_batch):
            out[i] = self.vector(Action(tuple(sorted(assortment)), tuple(p)), features)
        return out

    def to_spec(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class PriceVarietyBasis(ArrivalBasis):
    """Component i is -log(p_i / p_h) when i is offered, else 0 (dimension N)."""

    n_products: int
    p_h: float
    basis_id: str = field(default="price_variety", init=False)

    @property
    def d_x(self) -> int:
        return self.n_products

    def vector(self, action, features=None):
        if self.p_h <= 0:
            raise InvalidInputError("p_h must be positive")
        x = np.zeros(self.n_products)
        idx = list(action.assortment)
        x[idx] = -np.log(action.price_array()[idx] / self.p_h)
        return x

    def vectors(self, assortment, prices_batch, features=None):
        x = np.zeros((prices_batch.shape[0], self.n_products))
        idx = list(assortment)
        x[:, idx] = -np.log(prices_batch[:, idx] / self.p_h)
        return x

    def norm_bound(self, p_l: float, p_h: float, k: int) -> float:
        return float(np.sqrt(k) * abs(np.log(p_l / p_h)))

    def to_spec(self):
        return {"family": "price_variety", "n_products": self.n_products, "p_h": self.p_h}


@dataclass(frozen=True)
class PairwiseBasis(ArrivalBasis):
    """Individual terms 1/p_i and pairwise price ratios p_i/p_j for offered pairs.

    Flat layout: N individual components followed by the N(N-1) ordered pairs
    (i, j), i != j, in row-major order. The parameter vector stacks alpha then
    the off-diagonal betas in the same order.
    """

    n_products: int
    basis_id: str = field(default="pairwise", init=False)

    @property
    def d_x(self) -> int:
        return self.n_products + self.n_products * (self.n_products - 1)

    def pair_index(self, i: int, j: int) -> int:
        if i == j:
            raise InvalidInputError("pairwise components exist only for i != j")
        return self.n_products + i * (self.n_products - 1) + (j if j < i else j - 1)

    def vector(self, action, features=None):
        p = action.price_array()
        idx = list(action.assortment)
        if np.any(p[idx] == 0):
            raise InvalidInputError("prices must be nonzero for the pairwise basis")
        x = np.zeros(self.d_x)
        x[idx] = 1.0 / p[idx]
        for i in idx:
            for j in idx:
                if i != j:
                    x[self.pair_index(i, j)] = p[i] / p[j]
        return x

    def norm_bound(self, p_l: float, p_h: float, k: int) -> float:
        if p_l <= 0:
            raise InvalidInputError("p_l must be positive")
        indiv = k / p_l**2
        pairs = k * (k - 1) * (p_h / p_l) ** 2
        return float(np.sqrt(indiv + pairs))

    def to_spec(self):
        return {"family": "pairwise", "n_products": self.n_products}


@dataclass(frozen=True)
class FeatureAugmentedBasis(ArrivalBasis):
    """Two components: -sum of offered log prices,  sum of log(a*z + b) over offered rows."""

    a: float
    b: float
    basis_id: str = field(default="feature_augmented", init=False)
    d_x: int = field(default=2, init=False)

    def _feature_part(self, assortment, features: ProductFeatures) -> float:
        z = features.matrix[list(assortment)]
        g = self.a * z + self.b
        if np.any(g <= 0):
            raise InvalidInputError("a*z + b must be positive for the log")
        return float(np.sum(np.log(g)))

    def vector(self, action, features=None):
        if features is None:
            raise InvalidInputError("feature_augmented basis requires features")
        idx = list(action.assortment)
        p = action.price_array()[idx]
        return np.array([-np.sum(np.log(p)), self._feature_part(idx, features)])

    def vectors(self, assortment, prices_batch, features=None):
        if features is None:
            raise InvalidInputError("feature_augmented basis requires features")
        idx = list(assortment)
        fpart = self._feature_part(idx, features)
        out = np.empty((prices_batch.shape[0], 2))
        out[:, 0] = -np.sum(np.log(prices_batch[:, idx]), axis=1)
        out[:, 1] = fpart
        return out

    def norm_bound(self, p_l, p_h, k, z_lo, z_hi, d_z) -> float:
        price_part = k * max(abs(np.log(p_l)), abs(np.log(p_h)))
        cands = [self.a * z_lo + self.b, self.a * z_hi + self.b]
        if min(cands) <= 0:
            raise InvalidInputError("a*z + b must stay positive on the feature box")
        feat_part = k * d_z * max(abs(np.log(c)) for c in cands)
        return float(np.hypot(price_part, feat_part))

    def to_spec(self):
        return {"family": "feature_augmented", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class AssortmentIndicatorBasis(ArrivalBasis):
    """Price-free basis: scale/sqrt(K) on coordinates of offered products in [d_x]."""

    dim: int
    scale: float
    k: int
    basis_id: str = field(default="assortment_indicator", init=False)

    @property
    def d_x(self) -> int:
        return self.dim

    def vector(self, action, features=None):
        x = np.zeros(self.dim)
        for j in action.assortment:
            if j < self.dim:
                x[j] = self.scale / np.sqrt(self.k)
        return x

    def vectors(self, assortment, prices_batch, features=None):
        base = self.vector(Action(tuple(sorted(assortment)),
                           tuple(prices_batch[0])), features)
        return np.tile(base, (prices_batch.shape[0], 1))

    def norm_bound(self) -> float:
        return float(self.scale)

    def to_spec(self):
        return {"family": "assortment_indicator", "dim": self.dim,
                "scale": self.scale, "k": self.k}


def basis_from_spec(spec: dict, n_products: int | None = None) -> ArrivalBasis:
    family = spec["family"]
    if family == "price_variety":
        return PriceVarietyBasis(spec.get("n_products", n_products), spec["p_h"])
    if family == "pairwise":
        return PairwiseBasis(spec.get("n_products", n_products))
    if family == "feature_augmented":
        return FeatureAugmentedBasis(spec["a"], spec["b"])
    if family == "assortment_indicator":
        return AssortmentIndicatorBasis(spec["dim"], spec["scale"], spec["k"])
    raise InvalidInputError(f"unknown basis family {family!r}")


@dataclass(frozen=True)
class ModelParams:
    """A (theta, v) pair with the bound metadata every formula needs."""

    theta: np.ndarray
    v: np.ndarray
    lam0: float                      # base arrival rate, Lambda > 0
    x_bar: float
    v_bar: float
    p_l: float
    p_h: float
    basis: ArrivalBasis

    def __post_init__(self):
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))
        if self.lam0 <= 0:
            raise InvalidInputError("base arrival rate must be positive")
        if not (0 < self.p_l < self.p_h):
            raise InvalidInputError("prices must satisfy 0 < p_l < p_h")

    @property
    def basis_id(self) -> str:
        return self.basis.basis_id


# ---------------------------------------------------------------------------
# Choice model


def utilities(action: Action, features: ProductFeatures, v: np.ndarray) -> np.ndarray:
    z = features.for_choice()
    v = np.asarray(v, dtype=float)
    if z.shape[1] != v.shape[0]:
        raise InvalidInputError(
            f"feature dim {z.shape[1]} does not match v dim {v.shape[0]}"
        )
    idx = list(action.assortment)
    return z[idx] @ v - action.price_array()[idx]


def choice_probabilities(action: Action, features: ProductFeatures,
                         v: np.ndarray) -> np.ndarray:
    """Probabilities over {no-purchase} + assortment; index 0 is no-purchase."""
    u = utilities(action, features, v)
    if np.any(np.abs(u) > MAX_EXPONENT) or not np.all(np.isfinite(u)):
        raise NumericOverflowError("utility exponent outside the safe range")
    w = np.exp(u)
    denom = 1.0 + w.sum()
    return np.concatenate(([1.0 / denom], w / denom))


def choice_probabilities_batch(assortment, prices_batch: np.ndarray,
                               features: ProductFeatures, v: np.ndarray) -> np.ndarray:
    """(m, K+1) probabilities for a batch of price vectors on one assortment."""
    z = features.for_choice()
    idx = list(assortment)
    u = z[idx] @ np.asarray(v, dtype=float) - prices_batch[:, idx]
    if np.any(np.abs(u) > MAX_EXPONENT) or not np.all(np.isfinite(u)):
        raise NumericOverflowError("utility exponent outside the safe range")
    w = np.exp(u)
    denom = 1.0 + w.sum(axis=1, keepdims=True)
    return np.concatenate((1.0 / denom, w / denom), axis=1)


def arrival_rate(action: Action, theta: np.ndarray, basis: ArrivalBasis,
                 features: ProductFeatures | None = None) -> float:
    """exp(theta @ x(S, p)); lies in [exp(-x_bar), exp(x_bar)] for unit-ball theta."""
    theta = np.asarray(theta, dtype=float)
    x = basis.vector(action, features)
    if x.shape[0] != theta.shape[0]:
        raise InvalidInputError(
            f"basis dim {x.shape[0]} does not match theta dim {theta.shape[0]}"
        )
    return float(np.exp(theta @ x))


def per_customer_revenue(action: Action, features: ProductFeatures,
                         v: np.ndarray) -> float:
    q = choice_probabilities(action, features, v)
    return float(action.offered_prices() @ q[1:])


def expected_period_revenue(action: Action, features: ProductFeatures,
                            params: ModelParams) -> float:
    lam = arrival_rate(action, params.theta, params.basis, features)
    return params.lam0 * lam * per_customer_revenue(action, features, params.v)


def expected_period_revenue_batch(assortment, prices_batch: np.ndarray,
                                  features: ProductFeatures,
                                  params: ModelParams) -> np.ndarray:
    q = choice_probabilities_batch(assortment, prices_batch, features, params.v)
    rev = np.sum(prices_batch[:, list(assortment)] * q[:, 1:], axis=1)
    x = params.basis.vectors(assortment, prices_batch, features)
    lam = np.exp(x @ params.theta)
    return params.lam0 * lam * rev


def instantaneous_regret(chosen: Action, params: ModelParams,
                         features: ProductFeatures, oracle_value: float) -> float:
    """Oracle value minus the chosen action's expected revenue (>= -grid slack)."""
    return float(oracle_value - expected_period_revenue(chosen, features, params))


def all_assortments(n: int, k: int):
    return itertools.combinations(range(n), k)
