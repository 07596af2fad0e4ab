"""Event-driven simulation of the JSQ occupancy chain and its comparison systems.

Every run draws from its own ``numpy.random.Generator`` built from an integer
seed, so identical ``(seed, parameters)`` reproduce identical event
sequences.  Long computations hand the event loop to the JIT kernels in
:mod:`jsqlab._kernels`; :func:`jsq_step` is the plain-Python reference step.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .model import (
    OccupancyState,
    ScalingRegime,
    apply_arrival,
    apply_departure,
    renewal_state,
)

log = logging.getLogger(__name__)

DEFAULT_ALARM_LEVEL = 50

# functionals accumulated by the kernels, in kernel column order
FUNCTIONALS = (
    "time",
    "idle",
    "centered",
    "q2",
    "qbar3",
    "qbar3_positive",
    "idle_zero",
    "excess_pos",
    "excess_pos_sq",
    "inv_excess",
)
SUPREMA = ("idle", "q2", "qbar3", "centered")


class MemoryGrowthAlarm(RuntimeError):
    """The occupancy vector grew past the configured alarm level."""


class WatchdogError(RuntimeError):
    """A renewal cycle exceeded its event budget."""


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.SFC64(seed))


def substream_seeds(seed, n: int) -> list[int]:
    """Independent integer seeds derived from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1)) for c in children]


def scaled_functionals(values: dict, regime: ScalingRegime) -> dict:
    """Add scaled versions of raw functionals: ``x``, ``x_pos``, ``x_pos_sq``, ``i_scaled``, ``inv_x``."""
    qs = regime.queue_scale
    out = dict(values)
    out["x"] = values["centered"] / qs
    out["x_pos"] = values["excess_pos"] / qs
    out["x_pos_sq"] = values["excess_pos_sq"] / qs**2
    out["i_scaled"] = values["idle"] / regime.idle_scale
    out["inv_x"] = values["inv_excess"]
    return out


# --------------------------------------------------------------------------
# single step


@dataclass(frozen=True)
class Event:
    kind: str  # "arrival" or "departure"
    level: int | None = None


@dataclass
class SimulationClock:
    t_real: float = 0.0
    event_count: int = 0

    def advance(self, dt: float):
        if dt < 0:
            raise ValueError("clock cannot move backwards")
        self.t_real += dt
        self.event_count += 1


def transition_rates(state: OccupancyState, regime: ScalingRegime) -> dict:
    """Outgoing rates: ``"arrival"`` plus one ``("departure", level)`` per occupied exact level."""
    rates = {"arrival": regime.lambda_total}
    for level, count in enumerate(state.exact_counts(), start=1):
        if count:
            rates[("departure", level)] = float(count)
    return rates


def idle_rates(state: OccupancyState, regime: ScalingRegime) -> tuple[float, float]:
    """Rates at which the idle count moves up (``Q1 - Q2``) and down (arrivals, when ``I > 0``)."""
    up = float(state.level(1) - state.level(2))
    down = regime.lambda_total if state.i_idle > 0 else 0.0
    return up, down


def jsq_step(state: OccupancyState, regime: ScalingRegime, rng: np.random.Generator):
    """One transition of the chain: returns ``(dt, event, new_state)``."""
    total = regime.lambda_total + state.busy
    dt = rng.standard_exponential() / total
    u = rng.random() * total
    if u < regime.lambda_total:
        return dt, Event("arrival"), apply_arrival(state, regime.n)
    u -= regime.lambda_total
    level = 1
    while state.level(level + 1) > u:
        level += 1
    return dt, Event("departure", level), apply_departure(state, level)


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class StoppingTimeRecord:
    """First passage time; ``t_hit`` is real time, ``None`` if not reached."""

    kind: str  # tau1, tau2, tau_s, sigma, theta
    level: float
    threshold: int
    t_hit: float | None

    @property
    def resolved(self) -> bool:
        return self.t_hit is not None


@dataclass
class Trajectory:
    regime: ScalingRegime
    init: OccupancyState
    final: OccupancyState
    seed: object
    horizon_diff: float
    warmup_diff: float
    clock: SimulationClock
    integrals: dict  # raw real-time integrals over the post-warm-up window
    grid: dict  # arrays on the diffusion-time grid
    stopping: list
    s_hist: np.ndarray  # time in each value of S - N (offset by hist_offset)
    hist_offset: int
    trans_up: np.ndarray = field(repr=False, default=None)
    trans_down: np.ndarray = field(repr=False, default=None)
    observers: list = field(default_factory=lambda: list(FUNCTIONALS))

    @property
    def window(self) -> float:
        return self.integrals["time"]

    def time_average(self, name: str) -> float:
        vals = scaled_functionals(self.integrals, self.regime)
        if self.window <= 0:
            return 0.0
        return vals[name] / self.window

    def time_averages(self, names=None) -> dict:
        vals = scaled_functionals(self.integrals, self.regime)
        names = list(vals) if names is None else names
        w = self.window
        return {k: (vals[k] / w if w > 0 else 0.0) for k in names}

    def stopping_time(self, kind: str, level: float) -> StoppingTimeRecord:
        for rec in self.stopping:
            if rec.kind == kind and rec.level == level:
                return rec
        raise KeyError(f"no stopping time {kind}({level}) was registered")


def _state_array(state: OccupancyState, alarm_level: int) -> tuple[np.ndarray, int]:
    if state.max_level > alarm_level:
        raise MemoryGrowthAlarm(f"initial state already has {state.max_level} levels")
    q = np.zeros(alarm_level + 2, dtype=np.int64)
    q[: state.max_level] = state.q
    return q, state.max_level


def _hist_bounds(regime: ScalingRegime) -> tuple[int, int]:
    # S - N ranges over [-N, inf); the upper end is clipped far in the tail
    upper = int(60.0 * regime.queue_scale / regime.beta) + 64
    return regime.n, regime.n + upper


def run_jsq(
    regime: ScalingRegime,
    init: OccupancyState,
    horizon_diff: float,
    observers=None,
    seed=0,
    grid_step_diff: float | None = None,
    warmup_diff: float = 0.0,
    stopping: dict | None = None,
    alarm_level: int = DEFAULT_ALARM_LEVEL,
) -> Trajectory:
    """Simulate JSQ for ``warmup_diff + horizon_diff`` units of diffusion time.

    ``stopping`` maps ``"tau1"``, ``"tau2"`` and ``"tau_s"`` to lists of scaled
    levels; thresholds are floored exactly as ``floor(x N^(1/2-eps))`` for the
    idle count and ``floor(y N^(1/2+eps))`` for ``Q2`` and ``S``.  Samples are
    recorded every ``grid_step_diff`` diffusion-time units (default: 1000
    points over the run).
    """
    if horizon_diff < 0 or warmup_diff < 0:
        raise ValueError("horizon and warm-up must be non-negative")
    if init.n != regime.n:
        raise ValueError("initial state has a different number of servers")
    observers = list(FUNCTIONALS) if observers is None else list(observers)
    ts = regime.time_scale
    t_warm = warmup_diff * ts
    t_end = t_warm + horizon_diff * ts
    total_diff = warmup_diff + horizon_diff
    if grid_step_diff is None:
        grid_step_diff = total_diff / 1000 if total_diff > 0 else 1.0
    n_grid = int(math.floor(total_diff / grid_step_diff + 1e-9)) + 1
    stopping = dict(stopping or {})
    unknown = set(stopping) - {"tau1", "tau2", "tau_s"}
    if unknown:
        raise ValueError(f"unknown stopping time kinds {sorted(unknown)}")
    levels = {
        "tau1": [(x, regime.threshold(x, "idle")) for x in stopping.get("tau1", [])],
        "tau2": [(y, regime.threshold(y, "q2")) for y in stopping.get("tau2", [])],
        "tau_s": [(z, regime.threshold(z, "total")) for z in stopping.get("tau_s", [])],
    }
    q, top = _state_array(init, alarm_level)
    lo, hi = _hist_bounds(regime)
    hist = np.zeros(lo + hi + 1)
    trans_size = init.s_total + 4 * regime.n + 64
    trans_up = np.zeros(trans_size, dtype=np.int64)
    trans_down = np.zeros(trans_size, dtype=np.int64)
    rng = make_rng(seed)
    acc, grid, h1, h2, hs, top, t, events, status = K.jsq_path(
        rng, q, top, regime.n, regime.lambda_total, t_end, t_warm,
        grid_step_diff * ts, n_grid, regime.queue_scale,
        np.array([v for _, v in levels["tau1"]], dtype=np.int64),
        np.array([v for _, v in levels["tau2"]], dtype=np.int64),
        np.array([v for _, v in levels["tau_s"]], dtype=np.int64),
        alarm_level, hist, lo, trans_up, trans_down,
    )
    if status == K.STATUS_ALARM:
        raise MemoryGrowthAlarm(
            f"queue level exceeded alarm threshold {alarm_level} at t={t:.6g} (seed={seed})"
        )
    final = OccupancyState(regime.n, tuple(int(v) for v in q[:top]))
    records = []
    for kind, hits in (("tau1", h1), ("tau2", h2), ("tau_s", hs)):
        for (lvl, thr), th in zip(levels[kind], hits):
            records.append(StoppingTimeRecord(kind, lvl, thr, float(th) if th >= 0 else None))
    integrals = dict(zip(FUNCTIONALS, acc.tolist()))
    g = grid
    grid_out = {
        "t_diff": np.arange(g.shape[0]) * grid_step_diff,
        "idle": g[:, 0],
        "q2": g[:, 1],
        "qbar3": g[:, 2],
        "s": g[:, 3],
        "x": (g[:, 3] - regime.n) / regime.queue_scale,
        "cum_idle_scaled": g[:, 4] / regime.queue_scale,
        "cum_inv_x": g[:, 5] / ts,
    }
    traj = Trajectory(
        regime=regime, init=init, final=final, seed=seed,
        horizon_diff=horizon_diff, warmup_diff=warmup_diff,
        clock=SimulationClock(float(t), int(events)),
        integrals=integrals, grid=grid_out, stopping=records,
        s_hist=hist, hist_offset=lo, trans_up=trans_up, trans_down=trans_down,
        observers=observers,
    )
    return traj


def long_run(
    regime: ScalingRegime,
    horizon_diff: float,
    seed=0,
    b_const: float = 1.0,
    warmup_diff: float = 10.0,
    **kwargs,
) -> Trajectory:
    """Time-average run started from the renewal state, after a warm-up."""
    init = renewal_state(regime, feasible_b(regime, b_const))
    return run_jsq(regime, init, horizon_diff, seed=seed, warmup_diff=warmup_diff, **kwargs)


# --------------------------------------------------------------------------
# renewal cycles


@dataclass(frozen=True)
class RenewalCycle:
    theta: float
    integrals: dict
    sup_records: dict
    k_bar: int
    sigma1: float
    sigma2: float
    n_events: int


@dataclass
class CycleBatch:
    """Cycles from one configuration, plus the pooled occupation histogram of ``S - N``."""

    regime: ScalingRegime
    b_const: float
    seed: object
    cycles: list
    s_hist: np.ndarray
    hist_offset: int
    lo: int
    hi: int

    def __len__(self):
        return len(self.cycles)

    def __iter__(self):
        return iter(self.cycles)

    def __getitem__(self, i):
        return self.cycles[i]

    @property
    def theta(self) -> np.ndarray:
        return np.array([c.theta for c in self.cycles])

    def integral(self, name: str) -> np.ndarray:
        return np.array([c.integrals[name] for c in self.cycles])

    @property
    def k_bar(self) -> np.ndarray:
        return np.array([c.k_bar for c in self.cycles])

    @property
    def n_events(self) -> int:
        return int(sum(c.n_events for c in self.cycles))


def renewal_levels(regime: ScalingRegime, b_const: float) -> tuple[int, int]:
    """Down/up crossing levels ``floor(B N^(1/2+eps))`` and ``floor(2 B N^(1/2+eps))``."""
    lo = math.floor(b_const * regime.queue_scale)
    hi = math.floor(2.0 * b_const * regime.queue_scale)
    return lo, hi


def feasible_b(regime: ScalingRegime, b_const: float) -> float:
    """Largest usable renewal constant not above ``b_const``.

    The up-crossing level ``floor(2 B N^(1/2+eps))`` must stay well inside
    ``[0, N]``; when it would exceed ``N/2`` the constant is reduced to
    ``N^(1/2-eps)/4`` and a warning is logged.
    """
    if 2.0 * b_const * regime.queue_scale <= regime.n / 2:
        return b_const
    b = regime.idle_scale / 4.0
    log.warning("renewal constant B=%g infeasible at N=%d eps=%g; using B=%.4g",
                b_const, regime.n, regime.eps, b)
    return b


def run_renewal_cycles(
    regime: ScalingRegime,
    b_const: float,
    n_cycles: int,
    functionals=None,
    seed=0,
    max_events: int | None = None,
    alarm_level: int = DEFAULT_ALARM_LEVEL,
) -> CycleBatch:
    """Simulate ``n_cycles`` i.i.d. regenerative cycles of the JSQ chain.

    ``max_events`` is the per-cycle watchdog (default ``10**4`` times the
    typical cycle size ``N^(1+2 eps)``).
    """
    if n_cycles < 1:
        raise ValueError("n_cycles must be positive")
    lo, hi = renewal_levels(regime, b_const)
    if not 0 <= lo < hi <= regime.n:
        raise ValueError(
            f"renewal levels lo={lo}, hi={hi} invalid for N={regime.n}; choose another b_const"
        )
    if max_events is None:
        max_events = int(min(1e4 * regime.n * regime.time_scale + 1e6, 2**62))
    h_lo, h_hi = _hist_bounds(regime)
    hist = np.zeros(h_lo + h_hi + 1)
    rng = make_rng(seed)
    theta, k_bar, n_ev, sigma, ints, sups, status = K.jsq_cycles(
        rng, regime.n, regime.lambda_total, lo, hi, n_cycles, max_events,
        alarm_level, hist, h_lo,
    )
    if status == K.STATUS_WATCHDOG:
        raise WatchdogError(
            f"cycle {len(theta)} exceeded {max_events} events (N={regime.n}, beta={regime.beta}, "
            f"eps={regime.eps}, B={b_const}); the down-crossing to Q2={lo} may be unreachable"
        )
    if status == K.STATUS_ALARM:
        raise MemoryGrowthAlarm(f"queue level exceeded {alarm_level} in cycle {len(theta)}")
    cycles = []
    for c in range(len(theta)):
        raw = dict(zip(FUNCTIONALS, ints[c].tolist()))
        vals = scaled_functionals(raw, regime)
        keep = vals if functionals is None else {k: vals[k] for k in functionals}
        cycles.append(
            RenewalCycle(
                theta=float(theta[c]),
                integrals=keep | {"time": raw["time"]},
                sup_records=dict(zip(SUPREMA, sups[c].tolist())),
                k_bar=int(k_bar[c]),
                sigma1=float(sigma[c, 0]),
                sigma2=float(sigma[c, 1]),
                n_events=int(n_ev[c]),
            )
        )
    return CycleBatch(regime, b_const, seed, cycles, hist, h_lo, lo, hi)


def run_renewal_chunks(regime, b_const, n_cycles, seed=0, chunk=100, workers=1, **kwargs) -> CycleBatch:
    """Cycles in independent chunks with derived substream seeds, optionally in parallel."""
    sizes = [chunk] * (n_cycles // chunk) + ([n_cycles % chunk] if n_cycles % chunk else [])
    seeds = substream_seeds(seed, len(sizes))
    jobs = list(zip(sizes, seeds))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_cycle_job, [(regime, b_const, k, s, kwargs) for k, s in jobs]))
    else:
        parts = [_cycle_job((regime, b_const, k, s, kwargs)) for k, s in jobs]
    merged = parts[0]
    for p in parts[1:]:
        merged.cycles.extend(p.cycles)
        merged.s_hist += p.s_hist
    merged.seed = seed
    return merged


def _cycle_job(args):
    regime, b_const, k, s, kwargs = args
    return run_renewal_cycles(regime, b_const, k, seed=s, **kwargs)


# --------------------------------------------------------------------------
# birth-death processes


@dataclass(frozen=True)
class BirthDeathSpec:
    up_rate: float
    down_rate: float
    reflect_at_zero: bool = True

    def __post_init__(self):
        if not (self.up_rate > 0 and self.down_rate > 0):
            raise ValueError("birth and death rates must be strictly positive")

    @property
    def rho(self) -> float:
        return self.up_rate / self.down_rate

    def stationary_pmf(self, k):
        if not self.reflect_at_zero or self.rho >= 1:
            raise ValueError(f"no stationary law: rho = up/down = {self.rho:.6g} >= 1 or no reflection")
        rho = self.rho
        return (1.0 - rho) * rho ** np.asarray(k)


def idle_bound_spec(regime: ScalingRegime, b_const: float) -> BirthDeathSpec:
    """Bounding idle process: up ``N - B N^(1/2+eps)``, down ``N - beta N^(1/2-eps)``."""
    up = regime.n - b_const * regime.queue_scale
    down = regime.n - regime.beta * regime.idle_scale
    if not regime.n > b_const * regime.queue_scale > regime.beta * regime.idle_scale:
        raise ValueError("need N > B N^(1/2+eps) > beta N^(1/2-eps)")
    return BirthDeathSpec(up, down, True)


@dataclass
class BirthDeathRun:
    occupation: np.ndarray  # time in state offset+k; end bins absorb overflow
    offset: int
    window: float
    area: float
    final: int
    events: int
    seed: object
    trans_up: np.ndarray = field(repr=False, default=None)
    trans_down: np.ndarray = field(repr=False, default=None)

    @property
    def mean(self) -> float:
        return self.area / self.window if self.window > 0 else 0.0

    def pmf(self) -> np.ndarray:
        return self.occupation / self.window if self.window > 0 else self.occupation

    def prob(self, k: int) -> float:
        return float(self.pmf()[k + self.offset])

    def tail(self, k: int) -> float:
        """Fraction of time at or above ``k``."""
        return float(self.pmf()[k + self.offset:].sum())


def _bd_run(x0, up, mu, servers, reflect, horizon, warmup, seed, size, offset=0):
    hist = np.zeros(size)
    tu = np.zeros(size, dtype=np.int64)
    td = np.zeros(size, dtype=np.int64)
    rng = make_rng(seed)
    x, area, events = K.birth_death_path(
        rng, int(x0), float(up), float(mu), int(servers), bool(reflect),
        float(warmup + horizon), float(warmup), hist, int(offset), tu, td,
    )
    return BirthDeathRun(hist, offset, horizon, area, int(x), int(events), seed, tu, td)


def run_birth_death(spec: BirthDeathSpec, init: int, horizon: float, seed=0,
                    warmup: float = 0.0, size: int | None = None) -> BirthDeathRun:
    """Simulate a birth-death process for ``horizon`` real time after ``warmup``."""
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    if size is None:
        if spec.reflect_at_zero and spec.rho < 1:
            size = int(init + 50.0 / max(1e-12, -math.log(spec.rho))) + 64
        else:
            size = int(init + 10 * math.sqrt((spec.up_rate + spec.down_rate) * (horizon + warmup))) + 64
    offset = 0 if spec.reflect_at_zero else size // 2
    if not spec.reflect_at_zero:
        size = 2 * size
    return _bd_run(init, spec.up_rate, spec.down_rate, 1, spec.reflect_at_zero,
                   horizon, warmup, seed, size, offset)


def run_mmn(regime: ScalingRegime, init_total: int, horizon_diff: float, seed=0,
            warmup_diff: float = 0.0) -> BirthDeathRun:
    """M/M/N total count: up ``lambda(N)``, down ``min(S, N)``; horizon in diffusion time."""
    ts = regime.time_scale
    return run_mmn_rates(regime.n, regime.lambda_total, horizon_diff * ts, init_total, seed,
                         warmup_diff * ts)


def run_mmn_rates(n: int, lambda_total: float, horizon: float, init_total: int = 0, seed=0,
                  warmup: float = 0.0) -> BirthDeathRun:
    """M/M/N total count for arbitrary ``(n, lambda)``; horizon in real time."""
    rho = lambda_total / n
    if not 0 < rho < 1:
        raise ValueError("M/M/N needs 0 < lambda < n")
    size = n + int(init_total) + int(60.0 / -math.log(rho)) + 64
    return _bd_run(init_total, lambda_total, 1.0, n, True, horizon, warmup, seed, size)


# --------------------------------------------------------------------------
# couplings


@dataclass
class CouplingResult:
    min_gap: int
    dominated: bool
    events: int
    grid: np.ndarray | None = None
    t_stop: float | None = None


def coupled_jsq_mmn(regime: ScalingRegime, init: OccupancyState, horizon_diff: float,
                    seed=0, grid_step_diff: float | None = None,
                    alarm_level: int = DEFAULT_ALARM_LEVEL) -> CouplingResult:
    """Run JSQ and M/M/N from the same total on one event stream; check ``S_jsq >= S_mmn``."""
    ts = regime.time_scale
    if grid_step_diff is None:
        grid_step_diff = max(horizon_diff, 1e-12) / 500
    n_grid = int(horizon_diff / grid_step_diff) + 1
    q, top = _state_array(init, alarm_level)
    rng = make_rng(seed)
    gap, grid, _, _, events, status = K.jsq_mmn_coupled(
        rng, q, top, init.s_total, regime.n, regime.lambda_total,
        horizon_diff * ts, grid_step_diff * ts, n_grid, alarm_level,
    )
    if status == K.STATUS_ALARM:
        raise MemoryGrowthAlarm("queue level exceeded alarm threshold in coupled run")
    return CouplingResult(int(gap), gap >= 0, int(events), grid)


def coupled_idle_bound(regime: ScalingRegime, b_const: float, init: OccupancyState,
                       horizon_diff: float, seed=0, bound_init: int | None = None,
                       alarm_level: int = DEFAULT_ALARM_LEVEL) -> CouplingResult:
    """Run JSQ with the dominating idle process until ``tau2(B)`` or the horizon."""
    idle_bound_spec(regime, b_const)  # validates N > B N^(1/2+eps) > beta N^(1/2-eps)
    b_level = b_const * regime.queue_scale
    if init.q2 <= b_level:
        raise ValueError("coupling needs Q2(0) > B N^(1/2+eps)")
    stop_q2 = regime.threshold(b_const, "q2")
    ib = init.i_idle if bound_init is None else bound_init
    q, top = _state_array(init, alarm_level)
    rng = make_rng(seed)
    gap, t, _, _, events, status = K.jsq_idle_bound_coupled(
        rng, q, top, ib, regime.n, regime.lambda_total, b_level, stop_q2,
        horizon_diff * regime.time_scale, alarm_level,
    )
    if status == K.STATUS_ALARM:
        raise MemoryGrowthAlarm("queue level exceeded alarm threshold in coupled run")
    return CouplingResult(int(gap), gap >= 0, int(events), None, float(t))


# --------------------------------------------------------------------------
# diagnostics


def drift_identity_diagnostic(trajectory: Trajectory, regime: ScalingRegime | None = None,
                              b_window: float | None = None, t_max: float | None = None) -> float:
    """Sup over the window of ``|N^-(1/2+eps) int_0^{N^2eps t} I ds - int_0^t ds / X(s)|``.

    The window is ``[0, T]`` cut at ``tau2(b_window)`` in diffusion time when a
    window constant is given (its stopping time must have been registered).
    ``1/X`` counts as zero wherever ``X <= 0``.
    """
    regime = trajectory.regime if regime is None else regime
    grid = trajectory.grid
    t = np.asarray(grid["t_diff"])
    end = trajectory.warmup_diff + trajectory.horizon_diff if t_max is None else t_max
    if b_window is not None:
        rec = trajectory.stopping_time("tau2", b_window)
        if rec.t_hit is not None:
            end = min(end, rec.t_hit / regime.time_scale)
    mask = t <= end + 1e-12
    if not mask.any():
        return 0.0
    diff = np.asarray(grid["cum_idle_scaled"])[mask] - np.asarray(grid["cum_inv_x"])[mask]
    return float(np.max(np.abs(diff)))
