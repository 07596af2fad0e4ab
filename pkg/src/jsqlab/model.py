"""Scaling regime and occupancy-vector state for the JSQ system.

The Markovian descriptor is the occupancy vector ``(Q1, Q2, ...)`` where
``Qi`` counts servers holding at least ``i`` tasks.  Tie-breaking among
shortest queues does not affect this vector, so no per-server identity is
kept.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

__all__ = [
    "ScalingRegime",
    "OccupancyState",
    "ScaledObservation",
    "make_regime",
    "scale_state",
    "unscale_total",
    "apply_arrival",
    "apply_departure",
    "renewal_state",
    "to_queue_lengths",
    "from_queue_lengths",
]


@dataclass(frozen=True)
class ScalingRegime:
    """One system instance ``(N, beta, eps)`` with its derived rates.

    ``lambda_total = N - beta * N**(1/2 - eps)`` is the aggregate arrival
    rate; ``alpha = 1/2 + eps`` is the load exponent in
    ``lambda_N = 1 - beta / N**alpha``.
    """

    n: int
    beta: float
    eps: float
    lambda_total: float = field(init=False)
    alpha: float = field(init=False)

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta!r}")
        if not (0.0 <= self.eps < 0.5):
            raise ValueError(f"eps must lie in [0, 1/2), got {self.eps!r}")
        object.__setattr__(self, "n", int(self.n))
        lam = self.n - self.beta * self.n ** (0.5 - self.eps)
        if not lam > 0:
            raise ValueError(
                f"supercritical slack: lambda(N) = N - beta*N^(1/2-eps) = {lam:.6g} <= 0 "
                f"for n={self.n}, beta={self.beta}, eps={self.eps}"
            )
        object.__setattr__(self, "lambda_total", lam)
        object.__setattr__(self, "alpha", 0.5 + self.eps)

    @property
    def load(self) -> float:
        """Per-server load ``lambda_N``."""
        return self.lambda_total / self.n

    @property
    def time_scale(self) -> float:
        """Real time per unit of diffusion time, ``N**(2 eps)``."""
        return self.n ** (2.0 * self.eps)

    @property
    def queue_scale(self) -> float:
        """``N**(1/2 + eps)``: scale of ``S - N`` and of ``Q2``."""
        return self.n ** (0.5 + self.eps)

    @property
    def idle_scale(self) -> float:
        """``N**(1/2 - eps)``: scale of the idle count."""
        return self.n ** (0.5 - self.eps)

    def threshold(self, level: float, kind: str) -> int:
        """Integer hitting level used by the stopping times.

        ``kind`` is ``"idle"`` for ``floor(x N^(1/2-eps))`` and ``"q2"`` or
        ``"total"`` for ``floor(y N^(1/2+eps))``.
        """
        if kind == "idle":
            return math.floor(level * self.idle_scale)
        if kind in ("q2", "total"):
            return math.floor(level * self.queue_scale)
        raise ValueError(f"unknown threshold kind {kind!r}")

    def as_dict(self) -> dict:
        return {"n": self.n, "beta": self.beta, "eps": self.eps}


def make_regime(n: int, beta: float, eps: float) -> ScalingRegime:
    return ScalingRegime(n, beta, eps)


@dataclass(frozen=True)
class OccupancyState:
    """Occupancy vector for ``n`` servers; trailing zeros are trimmed."""

    n: int
    q: tuple[int, ...] = ()

    def __post_init__(self):
        q = tuple(int(v) for v in self.q)
        while q and q[-1] == 0:
            q = q[:-1]
        if self.n < 1:
            raise ValueError("n must be positive")
        prev = self.n
        for i, v in enumerate(q, start=1):
            if v < 0 or v > prev:
                raise ValueError(f"occupancy not monotone at level {i}: {q} with N={self.n}")
            prev = v
        object.__setattr__(self, "q", q)

    def level(self, i: int) -> int:
        """``Qi`` with ``Q0 = N`` and zero above the top level."""
        if i == 0:
            return self.n
        return self.q[i - 1] if i <= len(self.q) else 0

    @property
    def busy(self) -> int:
        return self.level(1)

    @property
    def i_idle(self) -> int:
        return self.n - self.level(1)

    @property
    def q2(self) -> int:
        return self.level(2)

    @property
    def s_total(self) -> int:
        return sum(self.q)

    @property
    def qbar3(self) -> int:
        return sum(self.q[2:])

    @property
    def max_level(self) -> int:
        return len(self.q)

    def exact_counts(self) -> list[int]:
        """Number of servers with exactly ``l`` tasks, for ``l = 1..max_level``."""
        return [self.level(l) - self.level(l + 1) for l in range(1, len(self.q) + 1)]


@dataclass(frozen=True)
class ScaledObservation:
    t_diff: float
    x: float
    i_scaled: float
    q2_scaled: float


def scale_state(state: OccupancyState, regime: ScalingRegime, t_real: float = 0.0) -> ScaledObservation:
    if t_real < 0:
        raise ValueError("t_real must be non-negative")
    return ScaledObservation(
        t_diff=t_real / regime.time_scale,
        x=(state.s_total - regime.n) / regime.queue_scale,
        i_scaled=state.i_idle / regime.idle_scale,
        q2_scaled=state.q2 / regime.queue_scale,
    )


def unscale_total(x: float, regime: ScalingRegime) -> int:
    """Recover ``S`` from a scaled observation ``x``."""
    return regime.n + round(x * regime.queue_scale)


def apply_arrival(state: OccupancyState, n: int | None = None) -> OccupancyState:
    """Route one task to a shortest queue.

    The task joins level ``j = 1 + max{i >= 0 : Qi = N}`` (with ``Q0 = N``).
    """
    n = state.n if n is None else n
    q = list(state.q)
    j = 0
    while j < len(q) and q[j] == n:
        j += 1
    if j == len(q):
        q.append(1)
    else:
        q[j] += 1
    return OccupancyState(n, tuple(q))


def apply_departure(state: OccupancyState, level: int) -> OccupancyState:
    """Service completion at a server holding exactly ``level`` tasks."""
    if level < 1 or state.level(level) - state.level(level + 1) < 1:
        raise ValueError(
            f"no server has exactly {level} task(s) in state {state.q} (N={state.n})"
        )
    q = list(state.q)
    q[level - 1] -= 1
    return OccupancyState(state.n, tuple(q))


def renewal_state(regime: ScalingRegime, b_const: float) -> OccupancyState:
    """State with ``I = 0``, ``Q2 = floor(2 B N^(1/2+eps))`` and no queue of length 3 or more."""
    q2 = math.floor(2.0 * b_const * regime.queue_scale)
    if q2 > regime.n:
        raise ValueError(
            f"renewal level floor(2*B*N^(1/2+eps)) = {q2} exceeds N = {regime.n}; reduce b_const"
        )
    return OccupancyState(regime.n, (regime.n, q2))


def to_queue_lengths(state: OccupancyState) -> list[int]:
    """Per-server queue lengths, sorted in decreasing order."""
    lengths = []
    for l, count in zip(range(len(state.q), 0, -1), reversed(state.exact_counts())):
        lengths.extend([l] * count)
    lengths.extend([0] * state.i_idle)
    return lengths


def from_queue_lengths(lengths, n: int | None = None) -> OccupancyState:
    lengths = list(lengths)
    n = len(lengths) if n is None else n
    if len(lengths) != n:
        raise ValueError("need one queue length per server")
    counts = Counter(lengths)
    top = max(lengths, default=0)
    q, running = [], 0
    for l in range(top, 0, -1):
        running += counts.get(l, 0)
        q.append(running)
    return OccupancyState(n, tuple(reversed(q)))
