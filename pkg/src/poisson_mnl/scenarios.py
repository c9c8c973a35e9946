"""Canned experiment scenarios, their validation, and (de)serialization.

A scenario is a plain, JSON-round-trippable description of an environment
plus policy defaults. The two simulation experiments ship as files together
with their variants, and the worst-case lattice constructions are exposed as
stress-scenario generators.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import InvalidInputError
from .model import ArrivalBasis, basis_from_spec
from .search import SearchConfig, search_config_from_dict

ASSUMPTION_NAMES = {
    1: "Assumption 1 (assortments are the K-subsets)",
    2: "Assumption 2 (prices in [p_l, p_h], 0 < p_l < p_h)",
    3: "Assumption 3 (choice parameter within the v_bar ball)",
    4: "Assumption 4 (arrival parameter within the unit ball)",
    5: "Assumption 5 (basis vectors bounded by x_bar)",
    6: "Assumption 6 (feature norms at most one)",
}


@dataclass(frozen=True)
class Scenario:
    """Self-contained description of one experiment."""

    name: str
    description: str
    N: int
    K: int
    T: int
    n_reps: int
    lam0: float
    p_l: float
    p_h: float
    d_z: int
    basis: dict
    theta_star: list
    v_star: dict                      # {"kind": "uniform", low, high} | {"kind": "fixed", value}
    features: dict                    # {"kind": "iid_uniform", low, high} | {"kind": "fixed", matrix}
    choice_transform: dict = field(default_factory=lambda: {"kind": "identity"})
    T0: int = 10
    bonus_scale: float = 1.0
    search: dict = field(default_factory=lambda: SearchConfig().to_dict())
    x_bar: float = 1.0
    v_bar: float = 1.0
    sigma0: float = 1.0
    normalize_features: bool = False
    flags: dict = field(default_factory=dict)
    claimed_optimal_assortment: list | None = None

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "Scenario":
        return Scenario(**json.loads(text))

    def with_overrides(self, **kwargs) -> "Scenario":
        return replace(self, **kwargs)

    # -- derived objects -----------------------------------------------------

    def basis_object(self) -> ArrivalBasis:
        return basis_from_spec(self.basis, self.N)

    def search_config(self) -> SearchConfig:
        return search_config_from_dict(self.search)

    def nominal_features(self) -> np.ndarray:
        if self.features["kind"] == "fixed":
            return np.asarray(self.features["matrix"], dtype=float)
        mid = 0.5 * (self.features["low"] + self.features["high"])
        return np.full((self.N, self.d_z), mid)

    def sigma_bar0(self) -> float:
        """Minimum eigenvalue of the expected choice-feature second moment."""
        if self.features["kind"] == "fixed":
            z = np.asarray(self.features["matrix"], dtype=float)
            z = self._transform(z)
            gram = z.T @ z / z.shape[0]
            return float(np.linalg.eigvalsh(gram)[0])
        lo, hi = self.features["low"], self.features["high"]
        scale = self.choice_transform.get("a", 1.0) \
            if self.choice_transform["kind"] == "affine" else 1.0
        return (scale * (hi - lo)) ** 2 / 12.0

    def _transform(self, matrix: np.ndarray) -> np.ndarray:
        if self.choice_transform["kind"] == "identity":
            return matrix
        if self.choice_transform["kind"] == "affine":
            return self.choice_transform["a"] * matrix + self.choice_transform["b"]
        raise InvalidInputError(
            f"unknown choice transform {self.choice_transform['kind']!r}")


# ---------------------------------------------------------------------------
# Validation


def validate_scenario(s: Scenario) -> list[tuple[str, str, str]]:
    """Return (level, assumption, message) findings; level is error/warning."""
    findings = []
    if not (1 <= s.K <= s.N):
        findings.append(("error", ASSUMPTION_NAMES[1],
                         f"need 1 <= K <= N, got K={s.K}, N={s.N}"))
    if not (0 < s.p_l < s.p_h):
        findings.append(("error", ASSUMPTION_NAMES[2],
                         f"need 0 < p_l < p_h, got p_l={s.p_l}, p_h={s.p_h}"))
    theta = np.asarray(s.theta_star, dtype=float)
    if np.linalg.norm(theta) > 1.0 + 1e-9:
        findings.append(("error", ASSUMPTION_NAMES[4],
                         f"||theta*|| = {np.linalg.norm(theta):.4f} > 1"))
    if s.v_star["kind"] == "fixed":
        vnorm = float(np.linalg.norm(s.v_star["value"]))
    else:
        vnorm = abs(max(abs(s.v_star["low"]), abs(s.v_star["high"]))) * math.sqrt(s.d_z)
    if vnorm > s.v_bar + 1e-9:
        findings.append(("error", ASSUMPTION_NAMES[3],
                         f"worst-case ||v*|| = {vnorm:.4f} exceeds v_bar = {s.v_bar}"))
    basis = s.basis_object()
    bound = _basis_norm_bound(s, basis)
    if bound is not None and bound > s.x_bar * (1 + 1e-9):
        findings.append(("error", ASSUMPTION_NAMES[5],
                         f"basis norm can reach {bound:.4f} > x_bar = {s.x_bar}"))
    max_feat = _max_choice_feature_norm(s)
    if max_feat > 1.0 + 1e-9:
        level = "warning" if s.flags.get("assumption6_norm_exception") else "error"
        findings.append((level, ASSUMPTION_NAMES[6],
                         f"choice-feature norms reach {max_feat:.3f} > 1 "
                         "(documented experiment exception)" if level == "warning"
                         else f"choice-feature norms reach {max_feat:.3f} > 1"))
    return findings


def _basis_norm_bound(s: Scenario, basis: ArrivalBasis):
    fam = s.basis["family"]
    if fam == "price_variety":
        return basis.norm_bound(s.p_l, s.p_h, s.K)
    if fam == "pairwise":
        return basis.norm_bound(s.p_l, s.p_h, s.K)
    if fam == "feature_augmented":
        if s.features["kind"] == "fixed":
            z = np.asarray(s.features["matrix"], dtype=float)
            lo, hi = float(z.min()), float(z.max())
        else:
            lo, hi = s.features["low"], s.features["high"]
        return basis.norm_bound(s.p_l, s.p_h, s.K, lo, hi, s.d_z)
    if fam == "assortment_indicator":
        return basis.norm_bound()
    return None


def _max_choice_feature_norm(s: Scenario) -> float:
    if s.features["kind"] == "fixed":
        z = s._transform(np.asarray(s.features["matrix"], dtype=float))
        return float(np.max(np.linalg.norm(z, axis=1)))
    if s.normalize_features:
        return 1.0
    hi = max(abs(s.features["low"]), abs(s.features["high"]))
    z_ext = np.full(s.d_z, hi)
    if s.choice_transform["kind"] == "affine":
        a, b = s.choice_transform["a"], s.choice_transform["b"]
        corners = [a * s.features["low"] + b, a * s.features["high"] + b]
        z_ext = np.full(s.d_z, max(abs(c) for c in corners))
    return float(np.linalg.norm(z_ext))


# ---------------------------------------------------------------------------
# The two simulation experiments


def scenario_sim1(price_only: bool = False, constant_rate: bool = False) -> Scenario:
    """Dynamic pricing with a full-catalog assortment; feature-driven arrivals.

    The market reacts to the affine-lifted features (the same a*z + b lift the
    arrival rate uses); the raw draws are Uniform(1, 2) per coordinate.
    """
    a, b = 30.0, -15.0
    d_z, N, K = 3, 5, 5
    p_l, p_h = 10.0, 30.0
    theta = [0.2, 0.2]
    name = "sim1"
    if price_only:
        theta = [0.2, 0.0]
        name = "sim1_price_only"
    if constant_rate:
        theta = [0.0, 0.0]
        name = "sim1_constant_rate"
    basis = {"family": "feature_augmented", "a": a, "b": b}
    x_bar = basis_from_spec(basis).norm_bound(p_l, p_h, K, 1.0, 2.0, d_z)
    return Scenario(
        name=name,
        description="five products, price-and-feature dependent arrivals",
        N=N, K=K, T=1000, n_reps=100,
        lam0=20.0, p_l=p_l, p_h=p_h, d_z=d_z,
        basis=basis,
        theta_star=theta,
        v_star={"kind": "uniform", "low": 0.0, "high": 1.0},
        features={"kind": "iid_uniform", "low": 1.0, "high": 2.0},
        choice_transform={"kind": "affine", "a": a, "b": b},
        T0=10,
        bonus_scale=1e-25,
        x_bar=float(x_bar),
        v_bar=float(math.sqrt(d_z)),
        sigma0=float(K * ((a * 1.0) ** 2 / 12.0) / 2.0),
        flags={"assumption6_norm_exception": True},
    )


def scenario_sim2() -> Scenario:
    """Joint assortment and pricing: five products, four slots, five features."""
    a, b = 30.0, -15.0
    d_z, N, K = 5, 5, 4
    p_l, p_h = 10.0, 30.0
    basis = {"family": "feature_augmented", "a": a, "b": b}
    x_bar = basis_from_spec(basis).norm_bound(p_l, p_h, K, 1.0, 2.0, d_z)
    return Scenario(
        name="sim2",
        description="joint assortment-pricing with decision-dependent arrivals",
        N=N, K=K, T=1000, n_reps=100,
        lam0=100.0, p_l=p_l, p_h=p_h, d_z=d_z,
        basis=basis,
        theta_star=[0.1, 0.1],
        v_star={"kind": "uniform", "low": 0.0, "high": 1.0},
        features={"kind": "iid_uniform", "low": 1.0, "high": 2.0},
        choice_transform={"kind": "affine", "a": a, "b": b},
        T0=10,
        bonus_scale=1e-34,
        x_bar=float(x_bar),
        v_bar=float(math.sqrt(d_z)),
        sigma0=float(K * ((a * 1.0) ** 2 / 12.0) / 2.0),
        flags={"assumption6_norm_exception": True},
    )


# ---------------------------------------------------------------------------
# Worst-case lattice scenarios


def _entropy(p: float) -> float:
    return -p * math.log(p) - (1 - p) * math.log(1 - p)


def adversarial_instance(kind: str, *, d_z: int | None = None,
                         d_x: int | None = None, K: int, N: int | None = None,
                         eps: float, W=None, seed: int | None = None,
                         v_bar: float = 1.0, p_l: float = 0.5,
                         p_h: float = 2.0, lam0: float = 1.0,
                         T: int = 200, n_reps: int = 20) -> Scenario:
    """Hard-instance generators used as stress scenarios, kinds I, II, III."""
    if kind == "I":
        return _instance_one(d_z, K, N, eps, W, seed, v_bar, p_l, p_h, lam0,
                             T, n_reps)
    if kind == "II":
        return _instance_two(d_z, K, N, eps, W, seed, v_bar, p_l, p_h, lam0,
                             T, n_reps)
    if kind == "III":
        return _instance_three(d_x, K, N, eps, W, seed, p_l, p_h, lam0, T,
                               n_reps)
    raise InvalidInputError(f"unknown adversarial kind {kind!r}")


def _pick_w(d: int, k_bar: int, W, seed):
    if W is not None:
        W = tuple(sorted(int(i) for i in W))
        if len(W) != k_bar or any(i < 0 or i >= d for i in W):
            raise InvalidInputError(f"W must be a {k_bar}-subset of [0, {d})")
        return W
    rng = np.random.default_rng(0 if seed is None else seed)
    return tuple(sorted(rng.choice(d, size=k_bar, replace=False).tolist()))


def _instance_one(d_z, K, N, eps, W, seed, v_bar, p_l, p_h, lam0, T, n_reps):
    if d_z is None:
        raise InvalidInputError("instance I needs d_z")
    N = d_z if N is None else N
    if min(d_z - 2, N) < K:
        raise InvalidInputError(
            f"instance I needs min(d_z - 2, N) >= K: min({d_z - 2}, {N}) < {K}")
    if lam0 < 1.0:
        raise InvalidInputError("instance I needs lam0 >= 1")
    if N > d_z:
        raise InvalidInputError("instance I uses standard-basis features; N <= d_z")
    if not (0 <= eps <= min(v_bar / math.sqrt(d_z), 1.0)):
        raise InvalidInputError(
            f"instance I needs eps in (0, min(v_bar/sqrt(d_z), 1)] = "
            f"(0, {min(v_bar / math.sqrt(d_z), 1.0):.4f}]")
    k_bar = min((d_z - K + 1) // 3, K)
    d = d_z - K + k_bar
    w = _pick_w(d, k_bar, W, seed)
    v = np.zeros(d_z)
    v[list(w)] = eps
    v[d:d_z] = eps
    features = np.eye(d_z)[:N]
    claimed = sorted(set(w) | set(range(d, d_z)))
    claimed = [i for i in claimed if i < N]
    return Scenario(
        name=f"adversarial_I_dz{d_z}_K{K}",
        description="standard-basis features with an epsilon-lattice preference",
        N=N, K=K, T=T, n_reps=n_reps,
        lam0=lam0, p_l=p_l, p_h=p_h, d_z=d_z,
        basis={"family": "price_variety", "n_products": N, "p_h": p_h},
        theta_star=[0.0] * N,
        v_star={"kind": "fixed", "value": v.tolist()},
        features={"kind": "fixed", "matrix": features.tolist()},
        T0=max(2 * N, 10),
        x_bar=float(math.sqrt(K) * abs(math.log(p_l / p_h))),
        v_bar=v_bar,
        sigma0=1e-3,
        flags={"degenerate": eps == 0.0, "kind": "I",
               "k_bar": k_bar, "d": d, "W": list(w), "eps": eps},
        claimed_optimal_assortment=claimed,
    )


def _instance_two(d_z, K, N, eps, W, seed, v_bar, p_l, p_h, lam0, T, n_reps):
    if d_z is None or N is None:
        raise InvalidInputError("instance II needs d_z and N")
    if min(d_z - 2, N) < K or d_z < 4:
        raise InvalidInputError(
            f"instance II needs min(d_z - 2, N) >= K and d_z >= 4")
    if lam0 < 1.0:
        raise InvalidInputError("instance II needs lam0 >= 1")
    h = _entropy(0.25)
    threshold = 0.25 * math.log(3.0) + 4.0 * h
    if math.log((N - d_z) / K) < threshold:
        raise InvalidInputError(
            f"instance II needs log((N - d_z)/K) >= {threshold:.4f}, got "
            f"{math.log((N - d_z) / K):.4f}")
    d = min(int((math.log((N - d_z) / K) - 0.25 * math.log(3.0)) // h), d_z)
    k_bar = (d + 1) // 4
    if not (0 <= eps <= min(v_bar / math.sqrt(k_bar), 1.0)):
        raise InvalidInputError(
            f"instance II needs eps in (0, min(v_bar/sqrt(k_bar), 1)]")
    w = _pick_w(d, k_bar, W, seed)
    v = np.zeros(d_z)
    v[list(w)] = eps

    from itertools import combinations
    rows = []
    claimed = None
    for u in combinations(range(d), k_bar):
        zu = np.zeros(d_z)
        zu[list(u)] = 1.0 / math.sqrt(k_bar)
        if tuple(u) == w:
            claimed = list(range(len(rows), len(rows) + K))
        rows.extend([zu] * K)
    for j in range(d, d_z):
        ej = np.zeros(d_z)
        ej[j] = eps
        rows.append(ej)
    if len(rows) > N:
        raise InvalidInputError(
            f"catalog needs K*C(d, k_bar) + d_z - d = {len(rows)} <= N = {N}")
    pad = np.zeros(d_z)
    pad[d_z - 1] = eps
    while len(rows) < N:
        rows.append(pad)
    return Scenario(
        name=f"adversarial_II_dz{d_z}_N{N}_K{K}",
        description="subset-indicator features; optimum hides in one K-bar subset",
        N=N, K=K, T=T, n_reps=n_reps,
        lam0=lam0, p_l=p_l, p_h=p_h, d_z=d_z,
        basis={"family": "price_variety", "n_products": N, "p_h": p_h},
        theta_star=[0.0] * N,
        v_star={"kind": "fixed", "value": v.tolist()},
        features={"kind": "fixed", "matrix": np.array(rows).tolist()},
        T0=max(2 * N, 10),
        x_bar=float(math.sqrt(K) * abs(math.log(p_l / p_h))),
        v_bar=v_bar,
        sigma0=1e-3,
        flags={"degenerate": eps == 0.0, "kind": "II",
               "k_bar": k_bar, "d": d, "W": list(w), "eps": eps},
        claimed_optimal_assortment=claimed,
    )


def _instance_three(d_x, K, N, eps, W, seed, p_l, p_h, lam0, T, n_reps):
    if d_x is None:
        raise InvalidInputError("instance III needs d_x")
    N = d_x if N is None else N
    if min(d_x - 2, N) < K:
        raise InvalidInputError(
            f"instance III needs min(d_x - 2, N) >= K: min({d_x - 2}, {N}) < {K}")
    if lam0 < 1.0:
        raise InvalidInputError("instance III needs lam0 >= 1")
    if not (0 <= eps < 1.0 / math.sqrt(K)):
        raise InvalidInputError("instance III needs eps in (0, 1/sqrt(K))")
    k_bar = min((d_x - K + 1) // 3, K)
    d = d_x - K + k_bar
    w = _pick_w(d, k_bar, W, seed)
    theta = np.zeros(d_x)
    theta[list(w)] = eps
    theta[d:d_x] = eps
    x_bar = 1.0
    claimed = sorted(set(w) | set(range(d, d_x)))
    claimed = [i for i in claimed if i < N]
    return Scenario(
        name=f"adversarial_III_dx{d_x}_K{K}",
        description="assortment-indicator arrivals with an epsilon-lattice rate",
        N=N, K=K, T=T, n_reps=n_reps,
        lam0=lam0, p_l=p_l, p_h=p_h, d_z=1,
        basis={"family": "assortment_indicator", "dim": d_x, "scale": x_bar,
               "k": K},
        theta_star=theta.tolist(),
        v_star={"kind": "fixed", "value": [0.0]},
        features={"kind": "fixed", "matrix": [[0.0]] * N},
        T0=max(2 * d_x, 10),
        x_bar=x_bar,
        v_bar=1.0,
        sigma0=1e-3,
        flags={"degenerate": eps == 0.0, "kind": "III",
               "k_bar": k_bar, "d": d, "W": list(w), "eps": eps},
        claimed_optimal_assortment=claimed,
    )


# ---------------------------------------------------------------------------
# Shipped scenario files


SHIPPED = ("sim1", "sim1_price_only", "sim1_constant_rate", "sim2",
           "adversarial_i_small")


def builtin_scenario(name: str) -> Scenario:
    if name == "sim1":
        return scenario_sim1()
    if name == "sim1_price_only":
        return scenario_sim1(price_only=True)
    if name == "sim1_constant_rate":
        return scenario_sim1(constant_rate=True)
    if name == "sim2":
        return scenario_sim2()
    if name == "adversarial_i_small":
        return adversarial_instance("I", d_z=8, K=2, eps=0.3, W=(0, 1))
    raise InvalidInputError(f"unknown scenario {name!r}")


def load_scenario(ref: str) -> Scenario:
    """Resolve a scenario by shipped name or file path."""
    import os

    if os.path.exists(ref):
        with open(ref, encoding="utf-8") as fh:
            return Scenario.from_json(fh.read())
    try:
        data = resources.files("poisson_mnl").joinpath(
            f"scenarios_data/{ref}.json")
        if data.is_file():
            return Scenario.from_json(data.read_text(encoding="utf-8"))
    except (FileNotFoundError, ModuleNotFoundError):
        pass
    if ref in SHIPPED:
        return builtin_scenario(ref)
    raise InvalidInputError(f"scenario {ref!r} is neither a shipped name nor a file")
