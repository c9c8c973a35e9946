"""Closed-form schedule lengths and confidence-bound constants.

Every expression is evaluated exactly as written in its defining display;
``config`` is duck-typed and must expose T, lam0, x_bar, v_bar, sigma0,
sigma1, d_z, d_x, K, p_l, p_h. All logs are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InternalConsistencyError, InvalidInputError


def compute_t0_T0(config) -> tuple[int, int]:
    """Exploration schedule lengths from the coverage condition."""
    if config.sigma0 <= 0:
        raise InvalidInputError("sigma0 must be positive")
    t0 = max(math.ceil(math.log(config.d_z * config.T) /
                       (config.sigma0 * (1.0 - math.log(2.0)))),
             2 * config.d_x)
    T0 = max(t0 + 1, math.floor(math.log(config.T)))
    return int(t0), int(T0)


def kappa_constant(v_bar: float, p_l: float, p_h: float, k: int) -> float:
    return math.exp(-v_bar - p_h) / (k * math.exp(v_bar - p_l) + 1.0) ** 2


def c4_constant(lam0: float, x_bar: float) -> float:
    log_term = math.log1p(3.0 / (lam0 * math.exp(x_bar)))
    first = max(1.0, 2.0 * math.e**2 /
                (log_term**2 * math.sqrt(6.0 * math.pi) * lam0 * math.exp(-x_bar)))
    return first * 2.0 * math.e / log_term


def c5_constant(tau_v: float) -> float:
    # denominator via expm1 to dodge cancellation for small tau_v
    denom = 4.0 * tau_v + math.expm1(-4.0 * tau_v)
    if denom <= 0:
        return 2.0  # tau_v -> 0 limit
    return 16.0 * tau_v**2 / denom


def c8_constant(tau_v: float, v_bar: float, p_l: float, k: int) -> float:
    return 3.0 * math.expm1(4.0 * tau_v) * (k * math.exp(v_bar - p_l) + 1.0) + 1.0


def c0_constant(tau_v: float, v_bar: float, p_l: float, p_h: float, k: int,
                lam0: float) -> float:
    bracket = 3.0 * math.expm1(4.0 * tau_v) * (k * math.exp(v_bar - p_l) + 1.0) + 1.0
    return (p_h - p_l) ** 2 / (lam0 * math.exp(-v_bar)) * bracket


def tau_theta(config, T0: int, c4: float) -> float:
    T, lam0, x_bar = config.T, config.lam0, config.x_bar
    logT = math.log(T)
    inner = 4.0 * logT / (lam0 * math.exp(x_bar) * T0)
    first = (2.0 * math.exp(2.0 * x_bar) / (T * lam0 * config.sigma1)
             * (2.0 + inner + math.sqrt(inner) + math.exp(-x_bar)))
    second = (8.0 * (2.0 * x_bar * c4 + 1.0) * math.exp(x_bar)
              / (T0 * lam0 * config.sigma1)
              * (logT + config.d_x * math.log(3.0 * x_bar * (lam0 * T + 1.0))))
    return min(1.0, math.sqrt(first + second))


def tau_v(config, T0: int, kappa: float) -> float:
    T, lam0, x_bar, d_z = config.T, config.lam0, config.x_bar, config.d_z
    logT = math.log(T)
    inner = 4.0 * logT / (lam0 * math.exp(x_bar) * T0)
    first = (2.0 * math.exp(2.0 * x_bar) / (kappa * T * lam0 * config.sigma0)
             * (2.0 + inner + math.sqrt(inner)))
    log_budget = (d_z + 1.0) * logT + d_z * math.log(6.0 * lam0)
    second = (8.0 * math.exp(x_bar) / (kappa * T0 * lam0 * config.sigma0)
              * log_budget)
    third = (8.0 * math.exp(x_bar) / (kappa * T0 * lam0 * config.sigma0)
             * math.sqrt(T0 * lam0 * math.exp(x_bar) * log_budget))
    return min(1.0, math.sqrt(first + second + third))


def omega_theta(config, tau_th: float, c4: float) -> float:
    T, lam0, x_bar = config.T, config.lam0, config.x_bar
    logT = math.log(T)
    return (8.0 * math.exp(2.0 * tau_th * x_bar)
            * (0.5 + math.exp(x_bar)
               + math.sqrt(2.0 * math.exp(x_bar) * logT / (T * lam0))
               + 4.0 * logT / (T * lam0)
               + 2.0 * (tau_th * x_bar * c4 + 1.0)
               * (2.0 * logT
                  + config.d_x * math.log(6.0 * tau_th * x_bar * (lam0 * T + 1.0)))))


def omega_v(config, tau_vv: float, c4: float, c5: float, c8: float) -> float:
    T, lam0, x_bar, d_z = config.T, config.lam0, config.x_bar, config.d_z
    logT = math.log(T)
    return (8.0 * c8 * math.exp(x_bar)
            + 4.0 * c8 * math.sqrt(8.0 * math.exp(x_bar) * logT / (T * lam0))
            + 32.0 * c8 * logT / (T * lam0)
            + 8.0 * (4.0 * tau_vv * c4 + c5) * c8
            * ((d_z + 2.0) * logT + d_z * math.log(6.0 * tau_vv * lam0)))


@dataclass(frozen=True)
class PolicyConstants:
    t0: int
    T0: int
    kappa: float
    c4: float
    c5: float
    c8: float
    c0: float
    tau_theta: float
    tau_v: float
    omega_theta: float
    omega_v: float

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("t0", "T0", "kappa", "c4", "c5", "c8", "c0",
                 "tau_theta", "tau_v", "omega_theta", "omega_v")}


def compute_constants(config, T0: int, arrival_model: bool = True) -> PolicyConstants:
    """All confidence-bound constants for a given exploration length T0.

    With ``arrival_model=False`` the arrival-side quantities are evaluated at
    an effective x_bar of zero and the theta constants are placeholders (the
    fixed-rate policy never uses them).
    """
    if T0 < 2:
        raise InvalidInputError("T0 must be at least 2")
    cfg = config if arrival_model else _ZeroXBar(config)
    kap = kappa_constant(cfg.v_bar, cfg.p_l, cfg.p_h, cfg.K)
    c4 = c4_constant(cfg.lam0, cfg.x_bar)
    t_v = tau_v(cfg, T0, kap)
    c5 = c5_constant(t_v)
    c8 = c8_constant(t_v, cfg.v_bar, cfg.p_l, cfg.K)
    c0 = c0_constant(t_v, cfg.v_bar, cfg.p_l, cfg.p_h, cfg.K, cfg.lam0)
    w_v = omega_v(cfg, t_v, c4, c5, c8)
    if arrival_model:
        t_th = tau_theta(cfg, T0, c4)
        w_th = omega_theta(cfg, t_th, c4)
    else:
        t_th, w_th = 1.0, 1.0
    t0, _ = compute_t0_T0(cfg)
    values = PolicyConstants(t0, T0, kap, c4, c5, c8, c0, t_th, t_v, w_th, w_v)
    for name in ("kappa", "c4", "c5", "c8", "c0", "tau_theta", "tau_v",
                 "omega_theta", "omega_v"):
        val = getattr(values, name)
        if not np.isfinite(val) or val <= 0:
            raise InternalConsistencyError(
                f"constant {name} evaluated to {val!r}; check the configuration")
    return values


class _ZeroXBar:
    """Config view with x_bar pinned to 0 for the fixed-arrival variant."""

    def __init__(self, config):
        self._config = config

    def __getattr__(self, name):
        if name == "x_bar":
            return 0.0
        return getattr(self._config, name)
