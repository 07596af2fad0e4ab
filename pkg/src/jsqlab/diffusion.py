"""Limit diffusion ``dX = (1/X - beta) dt + sqrt(2) dW`` and its Gamma(2, beta) stationary law.

The integrator is drift-implicit in the singular ``1/X`` term.  Each step
solves ``x'^2 - b x' - h = 0`` with ``b = x - beta h + sqrt(2) dW`` and keeps
the positive root, so every iterate is strictly positive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "SdeConfig",
    "DiffusionPath",
    "drift",
    "implicit_step",
    "simulate_sde",
    "simulate_sde_ensemble",
    "stationary_samples",
    "gamma2_density",
    "gamma2_cdf",
    "gamma2_sample",
    "gamma2_moment",
    "gamma2_mode",
]

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class SdeConfig:
    beta: float
    step: float = 1e-3
    x0: float = 1.0
    steps: int = 1000
    seed: object = 0
    stride: int = 1

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")
        if self.steps < 0 or self.stride < 1:
            raise ValueError("steps must be non-negative and stride at least 1")


@dataclass(frozen=True)
class DiffusionPath:
    times: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)


def drift(x: float, beta: float) -> float:
    if x <= 0:
        raise ValueError(f"drift is defined for x > 0 only, got {x}")
    return 1.0 / x - beta


@njit(inline="always")
def _root(b, h):
    # positive root of y^2 - b y - h = 0; the second form avoids cancellation for b << 0
    disc = math.sqrt(b * b + 4.0 * h)
    if b >= 0.0:
        return 0.5 * (b + disc)
    return 2.0 * h / (disc - b)


def implicit_step(x: float, h: float, dw: float, beta: float) -> float:
    """One drift-implicit step; the result is positive for every ``dw``."""
    if x <= 0:
        raise ValueError("x must be positive")
    if h < 0:
        raise ValueError("h must be non-negative")
    b = x - beta * h + SQRT2 * dw
    return float(_root(b, h))


@njit(cache=True)
def _integrate(rng, x0, beta, h, steps, stride):
    out = np.empty(steps // stride + 1)
    out[0] = x0
    x = x0
    sd = math.sqrt(2.0 * h)
    k = 1
    for i in range(1, steps + 1):
        b = x - beta * h + sd * rng.standard_normal()
        x = _root(b, h)
        if i % stride == 0:
            out[k] = x
            k += 1
    return out


def simulate_sde(config: SdeConfig) -> DiffusionPath:
    """Integrate the limit SDE; values are kept every ``stride`` steps."""
    rng = np.random.Generator(np.random.SFC64(config.seed))
    values = _integrate(rng, float(config.x0), float(config.beta), float(config.step),
                        int(config.steps), int(config.stride))
    times = np.arange(len(values)) * (config.step * config.stride)
    return DiffusionPath(times, values)


def simulate_sde_ensemble(beta: float, h: float, x0, dw: np.ndarray) -> np.ndarray:
    """Vectorized integration of many paths from given Brownian increments.

    ``dw`` has shape ``(steps, paths)``; returns the terminal values.
    """
    x = np.broadcast_to(np.asarray(x0, dtype=float), dw.shape[1:]).copy()
    for row in dw:
        b = x - beta * h + SQRT2 * row
        disc = np.sqrt(b * b + 4.0 * h)
        x = np.where(b >= 0, 0.5 * (b + disc), 2.0 * h / (disc - b))
    return x


def stationary_samples(beta: float, step: float = 1e-3, steps: int = 10**7, seed=0,
                       stride: int = 100, burn_in: float | None = None, x0: float | None = None) -> np.ndarray:
    """Long-run subsampled values after discarding ``burn_in`` time units (default ``10/beta``)."""
    burn_in = 10.0 / beta if burn_in is None else burn_in
    x0 = 2.0 / beta if x0 is None else x0
    path = simulate_sde(SdeConfig(beta, step, x0, steps, seed, stride))
    return path.values[path.times >= burn_in]


def _check_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be positive")


def gamma2_density(x, beta: float):
    """``beta^2 x exp(-beta x)`` on ``x >= 0``."""
    _check_beta(beta)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    out = beta**2 * x * np.exp(-beta * x)
    return float(out) if out.ndim == 0 else out


def gamma2_cdf(x, beta: float):
    """``1 - (1 + beta x) exp(-beta x)``."""
    _check_beta(beta)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    bx = beta * x
    # -expm1 keeps precision near zero
    out = -np.expm1(-bx) - bx * np.exp(-bx)
    return float(out) if out.ndim == 0 else out


def gamma2_sample(rng: np.random.Generator, beta: float, size=None):
    """Sum of two independent Exponential(beta) draws."""
    _check_beta(beta)
    if size is None:
        return float(rng.exponential(1.0 / beta) + rng.exponential(1.0 / beta))
    return rng.exponential(1.0 / beta, size=size) + rng.exponential(1.0 / beta, size=size)


def gamma2_moment(p: float, beta: float) -> float:
    """``E[X^p] = Gamma(p + 2) / beta^p``."""
    _check_beta(beta)
    if not p > 0:
        raise ValueError("p must be positive")
    return math.gamma(p + 2.0) / beta**p


def gamma2_mode(beta: float) -> float:
    _check_beta(beta)
    return 1.0 / beta
