"""Likelihoods, Fisher information, and ball-constrained MLE solvers.

Per-period purchase counts are the sufficient statistic of the choice
likelihood, so observations store counts rather than per-customer choice
lists. Both log-likelihoods are concave; the solver is projected gradient
ascent with a spectral (Barzilai-Borwein) initial step and Armijo
backtracking, which the closed-form ball projection makes cheap.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .model import Action, ArrivalBasis, ProductFeatures


@dataclass(frozen=True)
class PeriodObservation:
    """Realized arrivals and purchase counts for one period."""

    action: Action
    features: ProductFeatures
    arrivals: int
    purchase_counts: dict[int, int]
    no_purchase: int

    def __post_init__(self):
        counts = {int(j): int(c) for j, c in self.purchase_counts.items()}
        object.__setattr__(self, "purchase_counts", counts)
        if self.arrivals < 0 or self.no_purchase < 0 or any(c < 0 for c in counts.values()):
            raise InvalidInputError("counts must be nonnegative")
        if sum(counts.values()) + self.no_purchase != self.arrivals:
            raise InvalidInputError("purchase counts plus no-purchases must equal arrivals")
        if not set(counts).issubset(self.action.assortment):
            raise InvalidInputError("purchase counts must index offered products")

    def counts_vector(self) -> np.ndarray:
        return np.array([self.purchase_counts.get(j, 0) for j in self.action.assortment],
                        dtype=float)


class History:
    """Append-only record of period observations with compiled-array caching."""

    def __init__(self, observations=()):
        self._obs: list[PeriodObservation] = list(observations)
        self._version = 0
        self._mnl_cache = None
        self._poi_cache = {}

    def append(self, obs: PeriodObservation) -> None:
        self._obs.append(obs)
        self._version += 1

    def __len__(self):
        return len(self._obs)

    def __iter__(self):
        return iter(self._obs)

    def __getitem__(self, i):
        return self._obs[i]

    # -- compiled arrays ----------------------------------------------------

    def mnl_arrays(self):
        """(Z, P, C, n, c0): offered choice features, prices, counts per period."""
        if self._mnl_cache is None or self._mnl_cache[0] != self._version:
            t = len(self._obs)
            if t == 0:
                raise InvalidInputError("history is empty")
            k = self._obs[0].action.k
            d = self._obs[0].features.dim
            Z = np.empty((t, k, d))
            P = np.empty((t, k))
            C = np.empty((t, k))
            n = np.empty(t)
            c0 = np.empty(t)
            for s, obs in enumerate(self._obs):
                idx = list(obs.action.assortment)
                Z[s] = obs.features.for_choice()[idx]
                P[s] = obs.action.price_array()[idx]
                C[s] = obs.counts_vector()
                n[s] = obs.arrivals
                c0[s] = obs.no_purchase
            self._mnl_cache = (self._version, (Z, P, C, n, c0))
        return self._mnl_cache[1]

    def basis_vectors(self, basis: ArrivalBasis) -> np.ndarray:
        """(t, d_x) stacked x(S_s, p_s); cached per basis identity."""
        key = id(basis)
        cached = self._poi_cache.get(key)
        if cached is None or cached[0] != self._version:
            X = np.stack([basis.vector(o.action, o.features) for o in self._obs])
            self._poi_cache[key] = (self._version, X)
        return self._poi_cache[key][1]

    def arrivals_vector(self) -> np.ndarray:
        return np.array([o.arrivals for o in self._obs], dtype=float)

    def digest(self) -> str:
        h = hashlib.sha256()
        for obs in self._obs:
            h.update(json.dumps(_obs_record(obs), sort_keys=True).encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Log-likelihoods and gradients (theta-/v-independent constants dropped)


def poisson_loglik(theta, history: History, basis: ArrivalBasis, lam0: float) -> float:
    if len(history) == 0:
        raise InvalidInputError("history is empty")
    X = history.basis_vectors(basis)
    n = history.arrivals_vector()
    eta = X @ np.asarray(theta, dtype=float)
    return float(n @ eta - lam0 * np.sum(np.exp(eta)))


def poisson_loglik_grad(theta, history: History, basis: ArrivalBasis,
                        lam0: float) -> np.ndarray:
    X = history.basis_vectors(basis)
    n = history.arrivals_vector()
    lam = np.exp(X @ np.asarray(theta, dtype=float))
    return (n - lam0 * lam) @ X


def _mnl_parts(v, history: History):
    Z, P, C, n, _ = history.mnl_arrays()
    u = Z @ np.asarray(v, dtype=float) - P
    m = np.maximum(u.max(axis=1), 0.0)   # stable log(1 + sum exp u)
    lse = m + np.log(np.exp(-m) + np.sum(np.exp(u - m[:, None]), axis=1))
    return Z, C, n, u, lse


def mnl_loglik(v, history: History) -> float:
    _, C, n, u, lse = _mnl_parts(v, history)
    return float(np.sum(C * u) - n @ lse)


def mnl_loglik_grad(v, history: History) -> np.ndarray:
    Z, C, n, u, lse = _mnl_parts(v, history)
    q = np.exp(u - lse[:, None])
    w = C - n[:, None] * q
    return np.einsum("sk,skd->d", w, Z)


# ---------------------------------------------------------------------------
# Fisher information


def phi_matrix(action: Action, features: ProductFeatures, v) -> np.ndarray:
    """Covariance-of-features summand of the choice-model information; PSD."""
    from .model import choice_probabilities

    q = choice_probabilities(action, features, v)[1:]
    z = features.for_choice()[list(action.assortment)]
    mean = q @ z
    return (z.T * q) @ z - np.outer(mean, mean)


def phi_batch(assortment, prices_batch, features, v) -> np.ndarray:
    """(m, d, d) phi matrices for a batch of price vectors on one assortment."""
    from .model import choice_probabilities_batch

    q = choice_probabilities_batch(assortment, prices_batch, features, v)[:, 1:]
    z = features.for_choice()[list(assortment)]
    second = np.einsum("mk,kd,ke->mde", q, z, z)
    mean = q @ z
    return second - np.einsum("md,me->mde", mean, mean)


@dataclass
class FisherState:
    """Accumulated information matrices plus raw inputs for re-evaluation.

    ``i_poi`` and ``i_mnl_hat`` hold the running sums accumulated at whatever
    estimates were supplied at accumulation time. The exact curves as
    functions of the evaluation point are recomputable from the stored
    (action, features) via the ``*_at`` methods.
    """

    lam0: float
    x_bar: float
    d_x: int
    d_z: int
    i_poi: np.ndarray = None
    i_mnl_hat: np.ndarray = None
    xs: list = field(default_factory=list)
    inputs: list = field(default_factory=list)   # (action, features) pairs
    t: int = 0

    def __post_init__(self):
        if self.i_poi is None:
            self.i_poi = np.zeros((self.d_x, self.d_x))
        if self.i_mnl_hat is None:
            self.i_mnl_hat = np.zeros((self.d_z, self.d_z))

    def copy(self) -> "FisherState":
        return FisherState(self.lam0, self.x_bar, self.d_x, self.d_z,
                           self.i_poi.copy(), self.i_mnl_hat.copy(),
                           list(self.xs), list(self.inputs), self.t)

    def i_poi_at(self, theta, basis: ArrivalBasis | None = None) -> np.ndarray:
        """Sum of lam0 * lambda_s(theta) * x_s x_s^T over recorded periods."""
        if not self.xs:
            return np.zeros((self.d_x, self.d_x))
        X = np.stack(self.xs)
        lam = np.exp(X @ np.asarray(theta, dtype=float))
        return self.lam0 * np.einsum("s,sd,se->de", lam, X, X)

    def i_mnl_hat_at(self, v) -> np.ndarray:
        """Data-computable lower bound: lam0 * exp(-x_bar) * sum phi_s(v)."""
        out = np.zeros((self.d_z, self.d_z))
        for action, features in self.inputs:
            out += phi_matrix(action, features, v)
        return self.lam0 * np.exp(-self.x_bar) * out

    def i_mnl_exact_at(self, v, theta_star) -> np.ndarray:
        """Exact choice-model information; needs the true theta (simulator only)."""
        out = np.zeros((self.d_z, self.d_z))
        for x, (action, features) in zip(self.xs, self.inputs):
            lam = np.exp(np.asarray(theta_star, dtype=float) @ x)
            out += self.lam0 * lam * phi_matrix(action, features, v)
        return out


def accumulate_fisher(state: FisherState, obs: PeriodObservation, theta_hat,
                      v_hat, basis: ArrivalBasis) -> FisherState:
    """Return a new state with the period's summands added at the supplied estimates."""
    new = state.copy()
    x = basis.vector(obs.action, obs.features)
    lam = np.exp(np.asarray(theta_hat, dtype=float) @ x)
    new.i_poi = new.i_poi + state.lam0 * lam * np.outer(x, x)
    new.i_mnl_hat = new.i_mnl_hat + state.lam0 * np.exp(-state.x_bar) * phi_matrix(
        obs.action, obs.features, v_hat)
    new.xs.append(x)
    new.inputs.append((obs.action, obs.features))
    new.t += 1
    return new


def ridge_inv_sqrt(mat: np.ndarray, rel_ridge: float = 1e-10) -> np.ndarray:
    """Inverse square root with a trace-relative ridge for early-period safety."""
    d = mat.shape[0]
    ridge = rel_ridge * max(np.trace(mat), 0.0) / d
    w, vecs = np.linalg.eigh(0.5 * (mat + mat.T) + ridge * np.eye(d))
    w = np.maximum(w, ridge if ridge > 0 else np.finfo(float).tiny)
    return (vecs / np.sqrt(w)) @ vecs.T


def min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


# ---------------------------------------------------------------------------
# Ball-constrained concave maximization


@dataclass
class EstimationReport:
    estimate: np.ndarray
    loglik: float
    grad_norm: float
    iterations: int
    converged: bool
    on_boundary: bool
    tolerance: float


def project_ball(w, center, radius):
    diff = w - center
    nrm = np.linalg.norm(diff)
    if nrm <= radius:
        return w
    if radius == 0:
        return np.asarray(center, dtype=float).copy()
    return center + diff * (radius / nrm)


def maximize_concave_ball(f, grad, center, radius, x0=None, tol=1e-8,
                          max_iter=10_000) -> EstimationReport:
    """Projected gradient ascent with BB step and Armijo backtracking.

    Terminates on projected-gradient norm <= tol (absolute, with a
    float-precision relative floor), line-search stagnation at the noise
    floor, or the iteration cap.
    """
    center = np.asarray(center, dtype=float)
    x = center.copy() if x0 is None else project_ball(
        np.asarray(x0, dtype=float).copy(), center, radius)
    if radius == 0:
        val = f(x)
        return EstimationReport(x, val, 0.0, 0, True, True, tol)

    fx = f(x)
    g = grad(x)
    step = 1.0 / max(np.linalg.norm(g), 1.0)
    g0_norm = np.linalg.norm(g)
    # below this scale the gradient is float noise; treat as converged
    noise_floor = 1e-12 * max(1.0, g0_norm)
    armijo = 1e-4
    prev_x = None
    prev_g = None
    it = 0
    pg_norm = np.inf

    for it in range(1, max_iter + 1):
        pg = x - project_ball(x + g, center, radius)
        pg_norm = np.linalg.norm(pg)
        if pg_norm <= max(tol, noise_floor):
            break
        if prev_x is not None:
            dx = x - prev_x
            dg = g - prev_g
            denom = -(dx @ dg)    # ascent: curvature of -f along dx
            if denom > 0:
                step = float(dx @ dx / denom)
            step = float(np.clip(step, 1e-16, 1e16))
        accepted = False
        t_step = step
        for _ in range(60):
            x_new = project_ball(x + t_step * g, center, radius)
            f_new = f(x_new)
            if f_new >= fx + armijo * (g @ (x_new - x)):
                accepted = True
                break
            t_step *= 0.5
        if not accepted or np.allclose(x_new, x):
            break  # stagnation: at the numerical optimum
        prev_x, prev_g = x, g
        x, fx = x_new, f_new
        g = grad(x)

    pg = x - project_ball(x + g, center, radius)
    pg_norm = float(np.linalg.norm(pg))
    on_boundary = abs(np.linalg.norm(x - center) - radius) <= 1e-9 * max(1.0, radius)
    converged = pg_norm <= max(tol, noise_floor) or (it < max_iter and pg_norm <= 1e-7 * max(1.0, g0_norm))
    return EstimationReport(x, float(fx), pg_norm, it, bool(converged),
                            bool(on_boundary), tol)


def global_mle(kind: str, history: History, *, radius: float, center=None,
               basis: ArrivalBasis | None = None, lam0: float | None = None,
               x0=None, tol: float = 1e-8, max_iter: int = 10_000) -> EstimationReport:
    """Ball-constrained MLE for either model over {||w - center|| <= radius}."""
    if kind == "poisson":
        if basis is None or lam0 is None:
            raise InvalidInputError("poisson MLE needs basis and lam0")
        dim = basis.d_x
        f = lambda w: poisson_loglik(w, history, basis, lam0)
        g = lambda w: poisson_loglik_grad(w, history, basis, lam0)
    elif kind == "mnl":
        dim = history[0].features.dim
        f = lambda w: mnl_loglik(w, history)
        g = lambda w: mnl_loglik_grad(w, history)
    else:
        raise InvalidInputError(f"unknown likelihood kind {kind!r}")
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return maximize_concave_ball(f, g, center, radius, x0=x0, tol=tol,
                                 max_iter=max_iter)


def local_mle(kind: str, history: History, *, center, radius: float,
              basis: ArrivalBasis | None = None, lam0: float | None = None,
              x0=None, tol: float = 1e-8, max_iter: int = 10_000) -> EstimationReport:
    """Same solver as global_mle with the ball recentered at a pilot estimate."""
    return global_mle(kind, history, radius=radius, center=center, basis=basis,
                      lam0=lam0, x0=x0, tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# Line-delimited serialization (one JSON record per period)


def _obs_record(obs: PeriodObservation) -> dict:
    rec = {
        "period": obs.features.period,
        "assortment": list(obs.action.assortment),
        "prices": [repr(p) for p in obs.action.prices],
        "features": [[repr(float(x)) for x in row] for row in obs.features.matrix],
        "arrivals": obs.arrivals,
        "purchases": {str(j): c for j, c in sorted(obs.purchase_counts.items())},
        "no_purchase": obs.no_purchase,
    }
    if obs.features.choice_matrix is not None:
        rec["choice_features"] = [[repr(float(x)) for x in row]
                                  for row in obs.features.choice_matrix]
    return rec


def history_to_jsonl(history: History) -> str:
    return "\n".join(json.dumps(_obs_record(o), sort_keys=True) for o in history) + "\n"


def history_from_jsonl(text: str) -> History:
    hist = History()
    for line in text.splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        features = ProductFeatures(
            np.array([[float(x) for x in row] for row in rec["features"]]),
            period=rec["period"],
            choice_matrix=(np.array([[float(x) for x in row]
                                     for row in rec["choice_features"]])
                           if "choice_features" in rec else None),
        )
        action = Action(tuple(rec["assortment"]),
                        tuple(float(p) for p in rec["prices"]))
        hist.append(PeriodObservation(
            action, features, rec["arrivals"],
            {int(j): c for j, c in rec["purchases"].items()}, rec["no_purchase"]))
    return hist


def fisher_to_jsonl(state: FisherState) -> str:
    lines = [json.dumps({
        "lam0": state.lam0, "x_bar": state.x_bar,
        "d_x": state.d_x, "d_z": state.d_z, "t": state.t,
        "i_poi": state.i_poi.tolist(), "i_mnl_hat": state.i_mnl_hat.tolist(),
    }, sort_keys=True)]
    for x, (action, features) in zip(state.xs, state.inputs):
        lines.append(json.dumps({
            "x": x.tolist(),
            "assortment": list(action.assortment),
            "prices": list(action.prices),
            "features": features.matrix.tolist(),
            "choice_features": (features.choice_matrix.tolist()
                                if features.choice_matrix is not None else None),
            "period": features.period,
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def fisher_from_jsonl(text: str) -> FisherState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = json.loads(lines[0])
    state = FisherState(head["lam0"], head["x_bar"], head["d_x"], head["d_z"],
                        np.array(head["i_poi"]), np.array(head["i_mnl_hat"]))
    state.t = head["t"]
    for ln in lines[1:]:
        rec = json.loads(ln)
        features = ProductFeatures(
            np.array(rec["features"]), period=rec["period"],
            choice_matrix=(np.array(rec["choice_features"])
                           if rec["choice_features"] is not None else None))
        action = Action(tuple(rec["assortment"]), tuple(rec["prices"]))
        state.xs.append(np.array(rec["x"]))
        state.inputs.append((action, features))
    return state
