"""Exact reference values: M/M/N and birth-death stationary laws, small JSQ instances.

The small-instance solver enumerates per-server queue-length multisets
directly, independently of the occupancy-vector code used by the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve
from scipy.special import gammaln, logsumexp

TAIL_TOL = 1e-12
BOUNDARY_TOL = 1e-9


class TruncationError(ValueError):
    """The truncated state space holds too much stationary mass near its boundary."""

    def __init__(self, mass: float, cap: int):
        super().__init__(
            f"boundary mass {mass:.3g} within 2 levels of cap={cap} exceeds {BOUNDARY_TOL:g}; "
            "increase cap"
        )
        self.mass = mass
        self.cap = cap


def _check_subcritical(n, lambda_total):
    if n < 1 or int(n) != n:
        raise ValueError("n must be a positive integer")
    if not 0 < lambda_total < n:
        raise ValueError(f"need 0 < lambda < n for a stationary law, got lambda={lambda_total}, n={n}")


def _mmn_log_terms(n, lam, k):
    k = np.asarray(k)
    log_a = math.log(lam)
    below = k * log_a - gammaln(k + 1)
    above = k * log_a - gammaln(n + 1) - (k - n) * math.log(n)
    return np.where(k < n, below, above)


def mmn_log_pi0(n: int, lambda_total: float) -> float:
    """``log pi_0``; the queueing part is summed in closed form as a geometric series."""
    _check_subcritical(n, lambda_total)
    rho = lambda_total / n
    terms = _mmn_log_terms(n, lambda_total, np.arange(n))
    tail = n * math.log(lambda_total) - gammaln(n + 1) - math.log1p(-rho)
    return -float(logsumexp(np.append(terms, tail)))


def mmn_stationary(n: int, lambda_total: float, k_max: int | None = None) -> np.ndarray:
    """Stationary probabilities ``pi_0 .. pi_kmax`` of the M/M/N queue length.

    ``pi_k = pi_0 a^k / k!`` below ``n`` and ``pi_0 a^k n^(n-k) / n!`` above,
    with ``a = lambda_total``.  The vector is built outward from the mode by
    the ratios ``pi_{k+1}/pi_k = a / min(k+1, n)``, so no term overflows and
    neighbouring terms satisfy detailed balance to one rounding.  The
    truncation level comes from the log-space ``pi_n``.  The default
    ``k_max`` leaves less than ``1e-12`` of mass beyond it.
    """
    _check_subcritical(n, lambda_total)
    rho = lambda_total / n
    log_pi0 = mmn_log_pi0(n, lambda_total)
    log_pin = log_pi0 + float(_mmn_log_terms(n, lambda_total, n))

    def tail_after(k):  # P(S > k) for k >= n - 1
        return math.exp(log_pin + (k + 1 - n) * math.log(rho) - math.log1p(-rho))

    if k_max is None:
        extra = max(0, math.ceil((math.log(TAIL_TOL) + math.log1p(-rho) - log_pin) / math.log(rho)))
        k_max = n - 1 + extra
        while tail_after(k_max) >= TAIL_TOL:
            k_max += 1
    elif k_max >= n - 1 and tail_after(k_max) >= TAIL_TOL:
        raise ValueError(f"k_max={k_max} leaves tail mass {tail_after(k_max):.3g} >= {TAIL_TOL:g}")
    elif k_max < n - 1:
        raise ValueError(f"k_max={k_max} truncates below n; tail mass is not negligible")
    lam = float(lambda_total)
    mode = min(int(lam), k_max)
    t = np.empty(k_max + 1)
    t[mode] = 1.0
    up = lam / np.minimum(np.arange(mode + 1, k_max + 1), n)
    t[mode + 1:] = np.cumprod(up)
    down = np.arange(mode, 0, -1) / lam
    t[:mode][::-1] = np.cumprod(down)
    beyond = t[k_max] * rho / (1.0 - rho)  # geometric tail past k_max (k_max >= n - 1)
    return t / (t.sum() + beyond)


def erlang_c(n: int, lambda_total: float) -> float:
    """Probability that an arrival waits, ``P(S >= n)``."""
    _check_subcritical(n, lambda_total)
    rho = lambda_total / n
    log_pin = mmn_log_pi0(n, lambda_total) + float(_mmn_log_terms(n, lambda_total, n))
    return math.exp(log_pin - math.log1p(-rho))


def mmn_mean(n: int, lambda_total: float) -> float:
    """``E[S] = a + C(n, a) rho / (1 - rho)``."""
    rho = lambda_total / n
    return lambda_total + erlang_c(n, lambda_total) * rho / (1.0 - rho)


def mmn_scaled_centered_mean(regime) -> float:
    """``(E[S] - N) / N^(1/2+eps)`` for the M/M/N system of a regime."""
    return (mmn_mean(regime.n, regime.lambda_total) - regime.n) / regime.queue_scale


def bd_geometric(up: float, down: float, k) -> float:
    """``(1 - rho) rho^k`` with ``rho = up/down``."""
    if not (up > 0 and down > 0):
        raise ValueError("rates must be positive")
    rho = up / down
    if rho >= 1:
        raise ValueError(f"rho = up/down = {rho:.6g} >= 1: no stationary law")
    k = np.asarray(k)
    if np.any(k < 0):
        raise ValueError("k must be non-negative")
    out = (1.0 - rho) * rho**k
    return float(out) if out.ndim == 0 else out


def bd_geometric_tail(up: float, down: float, k: int) -> float:
    """``P(X >= k) = rho^k``."""
    rho = up / down
    if rho >= 1:
        raise ValueError("rho >= 1: no stationary law")
    return rho**k


@dataclass
class TruncatedGenerator:
    states: list  # per-server queue lengths, sorted decreasing
    rates: sparse.csr_matrix  # off-diagonal rates, rates[i, j] = q(i -> j)
    cap: int

    @property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}


def _enumerate(n: int, cap: int) -> list:
    out = []

    def rec(prefix, remaining, bound):
        if len(prefix) == n:
            out.append(tuple(prefix))
            return
        for v in range(min(bound, remaining), -1, -1):
            rec(prefix + [v], remaining - v, v)

    rec([], cap, cap)
    return out


def build_generator(n: int, lambda_total: float, cap: int) -> TruncatedGenerator:
    """JSQ generator on multisets of queue lengths with total at most ``cap``.

    Arrivals join a shortest queue and are dropped when the total is ``cap``;
    each non-empty server completes at rate 1.
    """
    states = _enumerate(n, cap)
    if len(states) > 10**6:
        raise ValueError(f"{len(states)} states exceeds the 1e6 limit")
    index = {s: i for i, s in enumerate(states)}
    rows, cols, vals = [], [], []
    for i, s in enumerate(states):
        if sum(s) < cap:
            lst = list(s)
            lst[lst.index(min(lst))] += 1
            rows.append(i)
            cols.append(index[tuple(sorted(lst, reverse=True))])
            vals.append(lambda_total)
        for pos, v in enumerate(s):
            if v > 0:
                lst = list(s)
                lst[pos] -= 1
                rows.append(i)
                cols.append(index[tuple(sorted(lst, reverse=True))])
                vals.append(1.0)
    m = sparse.csr_matrix((vals, (rows, cols)), shape=(len(states), len(states)))
    return TruncatedGenerator(states, m, cap)


@dataclass
class SmallJsqSolution:
    n: int
    lambda_total: float
    cap: int
    states: list
    pi: np.ndarray
    boundary_mass: float  # P(S >= cap - 1)
    blocked_mass: float  # P(S = cap): arrivals lost to truncation

    def marginal(self, name: str) -> np.ndarray:
        """Distribution of ``"s"`` (total), ``"idle"`` or ``"q2"`` as a vector indexed by value."""
        if name == "s":
            vals = [sum(s) for s in self.states]
        elif name == "idle":
            vals = [sum(1 for v in s if v == 0) for s in self.states]
        elif name == "q2":
            vals = [sum(1 for v in s if v >= 2) for s in self.states]
        else:
            raise ValueError(f"unknown marginal {name!r}")
        out = np.zeros(max(vals) + 1)
        np.add.at(out, vals, self.pi)
        return out

    def mean(self, name: str) -> float:
        m = self.marginal(name)
        return float(np.dot(np.arange(len(m)), m))

    @property
    def mean_busy(self) -> float:
        return float(sum(p * sum(1 for v in s if v > 0) for s, p in zip(self.states, self.pi)))


def jsq_exact_small(n: int, lambda_total: float, cap: int = 100) -> SmallJsqSolution:
    """Stationary law of JSQ with ``n <= 3`` servers on a truncated state space.

    Raises :class:`TruncationError` when ``P(S >= cap - 1) >= 1e-9``.
    """
    if n > 3:
        raise ValueError("exact JSQ solution is limited to n <= 3")
    _check_subcritical(n, lambda_total)
    gen = build_generator(n, lambda_total, cap)
    q = gen.rates
    out_rate = np.asarray(q.sum(axis=1)).ravel()
    a = (q.T - sparse.diags(out_rate)).tolil()
    a[0, :] = 1.0  # replace one balance equation by normalization
    b = np.zeros(len(gen.states))
    b[0] = 1.0
    pi = spsolve(a.tocsc(), b)
    pi = np.maximum(pi, 0.0)
    pi /= pi.sum()
    totals = np.array([sum(s) for s in gen.states])
    boundary = float(pi[totals >= cap - 1].sum())
    if boundary >= BOUNDARY_TOL:
        raise TruncationError(boundary, cap)
    return SmallJsqSolution(n, lambda_total, cap, gen.states, pi, boundary,
                            float(pi[totals == cap].sum()))
