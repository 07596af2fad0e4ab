import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsqlab import engine as E
from jsqlab import estimators as S
from jsqlab.model import OccupancyState, apply_arrival, make_regime, renewal_state

from conftest import MANY, raw_occupancy


def small_regime(n, lam):
    return make_regime(n, (n - lam) / math.sqrt(n), 0.0)


def rep_mean(values):
    v = np.asarray(values, float)
    return v.mean(), v.std(ddof=1) / math.sqrt(len(v))


class TestRates:
    def test_example_rates(self):
        reg = small_regime(4, 3.9)
        rates = E.transition_rates(OccupancyState(4, (4, 2, 1)), reg)
        total = sum(rates.values())
        assert total == pytest.approx(7.9)
        assert rates["arrival"] / total == pytest.approx(3.9 / 7.9)
        assert rates[("departure", 1)] == 2
        assert rates[("departure", 2)] == 1
        assert rates[("departure", 3)] == 1

    def test_empty_system_only_arrivals(self):
        reg = small_regime(4, 3.9)
        assert E.transition_rates(OccupancyState(4, ()), reg) == {"arrival": pytest.approx(3.9)}
        rng = E.make_rng(1)
        for _ in range(20):
            _, ev, new = E.jsq_step(OccupancyState(4, ()), reg, rng)
            assert ev.kind == "arrival" and new.q == (1,)

    @given(raw_occupancy())
    @settings(max_examples=MANY)
    def test_rate_conservation(self, state):
        reg = make_regime(state.n, 0.1 * math.sqrt(state.n), 0.0)
        rates = E.transition_rates(state, reg)
        dep = sum(v for k, v in rates.items() if k != "arrival")
        assert dep == state.busy == sum(state.level(l) - state.level(l + 1)
                                        for l in range(1, state.max_level + 1))
        up, down = E.idle_rates(state, reg)
        assert up == rates.get(("departure", 1), 0.0)
        assert down == (reg.lambda_total if state.i_idle > 0 else 0.0)

    def test_step_frequencies(self):
        reg = small_regime(4, 3.9)
        state = OccupancyState(4, (4, 2, 1))
        rng = E.make_rng(7)
        n = 40000
        counts = {}
        dts = []
        for _ in range(n):
            dt, ev, _ = E.jsq_step(state, reg, rng)
            dts.append(dt)
            key = "arrival" if ev.kind == "arrival" else ev.level
            counts[key] = counts.get(key, 0) + 1
        for key, p in (("arrival", 3.9 / 7.9), (1, 2 / 7.9), (2, 1 / 7.9), (3, 1 / 7.9)):
            assert abs(counts[key] / n - p) < 4 * math.sqrt(p * (1 - p) / n)
        assert abs(np.mean(dts) - 1 / 7.9) < 4 / 7.9 / math.sqrt(n)

    def test_step_matches_kernel_rule(self):
        # N = 1 reduces to M/M/1: departures only from level = current queue length
        reg = small_regime(1, 0.5)
        state = OccupancyState(1, (1, 1, 1))
        rng = E.make_rng(3)
        for _ in range(200):
            _, ev, new = E.jsq_step(state, reg, rng)
            if ev.kind == "departure":
                assert ev.level == state.s_total
            assert abs(new.s_total - state.s_total) == 1
            state = new if new.s_total > 0 else apply_arrival(new)

    def test_clock(self):
        c = E.SimulationClock()
        c.advance(0.5)
        c.advance(0.0)
        assert c.t_real == 0.5 and c.event_count == 2
        with pytest.raises(ValueError):
            c.advance(-1.0)


class TestRunJsq:
    def test_zero_horizon(self):
        reg = make_regime(50, 1.0, 0.25)
        init = OccupancyState(50, (48, 10, 2))
        tr = E.run_jsq(reg, init, 0.0, seed=3)
        assert tr.final == init
        assert all(v == 0 for v in tr.integrals.values())
        assert tr.clock.event_count == 0

    @given(st.integers(1, 30), st.floats(0.05, 3.0), st.floats(0.0, 0.45), st.integers(0, 2**31),
           st.floats(0.01, 2.0))
    @settings(max_examples=MANY)
    def test_determinism(self, n, beta, eps, seed, horizon):
        try:
            reg = make_regime(n, beta, eps)
        except ValueError:
            return
        init = OccupancyState(n, (n,))
        a = E.run_jsq(reg, init, horizon, seed=seed, grid_step_diff=horizon / 10)
        b = E.run_jsq(reg, init, horizon, seed=seed, grid_step_diff=horizon / 10)
        assert a.final == b.final
        assert a.clock == b.clock
        assert a.integrals == b.integrals
        for k in a.grid:
            assert np.array_equal(a.grid[k], b.grid[k])
        assert np.array_equal(a.s_hist, b.s_hist)

    def test_time_scale_and_grid(self):
        reg = make_regime(100, 1.0, 0.25)
        tr = E.run_jsq(reg, renewal_state(reg, 1.0), 2.0, seed=1, grid_step_diff=0.5)
        assert tr.clock.t_real == pytest.approx(2.0 * reg.time_scale)
        assert np.allclose(tr.grid["t_diff"], [0, 0.5, 1.0, 1.5, 2.0])
        assert tr.grid["s"][0] == renewal_state(reg, 1.0).s_total
        assert tr.window == pytest.approx(2.0 * reg.time_scale)

    def test_mm1_mean(self):
        # N = 1, beta = 0.5, eps = 0.25 is M/M/1 with load 1/2; mean queue length 1
        reg = make_regime(1, 0.5, 0.25)
        vals = [E.run_jsq(reg, OccupancyState(1, ()), 5000.0, seed=s, warmup_diff=50.0)
                .time_average("centered") + 1 for s in E.substream_seeds(11, 20)]
        m, se = rep_mean(vals)
        assert abs(m - 1.0) <= 3 * se

    def test_detailed_balance_n1(self):
        reg = make_regime(1, 0.5, 0.25)
        tr = E.run_jsq(reg, OccupancyState(1, ()), 20000.0, seed=5)
        up, down = tr.trans_up, tr.trans_down
        assert np.all(np.abs(up - down) <= 1)
        # empirical up-rate from 0 and down-rate from 1 against (lambda, 1)
        occ = tr.s_hist[tr.hist_offset - 1: tr.hist_offset + 1]  # time at S = 0 and S = 1
        for count, time_at, rate in ((up[0], occ[0], reg.lambda_total), (down[0], occ[1], 1.0)):
            assert abs(count / time_at - rate) <= 4 * math.sqrt(count) / time_at

    def test_small_jsq_matches_oracle(self):
        from jsqlab.oracle import jsq_exact_small

        reg = small_regime(2, 1.5)
        exact = jsq_exact_small(2, 1.5, 100)
        vals = [E.run_jsq(reg, OccupancyState(2, ()), 5000.0, seed=s, warmup_diff=50.0)
                .time_average("centered") + 2 for s in E.substream_seeds(2, 20)]
        m, se = rep_mean(vals)
        assert abs(m - exact.mean("s")) <= 3 * se

    def test_memory_alarm(self):
        reg = make_regime(2, 0.01, 0.0)
        with pytest.raises(E.MemoryGrowthAlarm):
            E.run_jsq(reg, OccupancyState(2, (2, 2, 2, 2)), 1e5, seed=0, alarm_level=5)
        with pytest.raises(E.MemoryGrowthAlarm):
            E.run_jsq(reg, OccupancyState(2, (2,) * 8), 1.0, alarm_level=5)

    def test_stopping_times(self):
        reg = make_regime(1000, 1.0, 0.25)
        init = renewal_state(reg, 1.0)
        tr = E.run_jsq(reg, init, 20.0, seed=4, grid_step_diff=0.01,
                       stopping={"tau2": [1.0, 5.0], "tau1": [1.0], "tau_s": [0.5]})
        rec = tr.stopping_time("tau2", 1.0)
        assert rec.threshold == math.floor(reg.queue_scale)
        assert rec.resolved and rec.t_hit > 0
        unreached = tr.stopping_time("tau2", 5.0)
        assert unreached.threshold > reg.n or not unreached.resolved
        assert tr.stopping_time("tau1", 1.0).threshold == math.floor(reg.idle_scale)
        # Q2 on the grid before the hit stays above the level
        g = tr.grid
        before = g["t_diff"] < rec.t_hit / reg.time_scale
        assert np.all(g["q2"][before] > rec.threshold)
        with pytest.raises(KeyError):
            tr.stopping_time("tau2", 3.0)
        with pytest.raises(ValueError):
            E.run_jsq(reg, init, 1.0, stopping={"bogus": [1.0]})


@pytest.fixture(scope="module")
def batch():
    reg = make_regime(400, 1.0, 0.25)
    return E.run_renewal_cycles(reg, 1.0, 300, seed=9)


class TestRenewal:

    def test_cycle_records(self, batch):
        reg = batch.regime
        assert len(batch) == 300
        for c in batch:
            assert c.theta > 0 and c.k_bar >= 1
            assert 0 < c.sigma1 < c.sigma2 <= c.theta + 1e-9
            assert c.integrals["time"] == pytest.approx(c.theta, rel=1e-9)
            assert all(math.isfinite(v) for v in c.integrals.values())
            assert c.sup_records["qbar3"] >= 0
        assert np.mean(batch.k_bar == 1) > 0.5
        assert batch.lo == math.floor(reg.queue_scale) and batch.hi == math.floor(2 * reg.queue_scale)

    def test_renewal_vs_long_run_idle(self, batch):
        reg = batch.regime
        regen = S.regenerative_ratio(batch, "i_scaled")
        vals = [E.long_run(reg, 200.0, seed=s).time_average("i_scaled")
                for s in E.substream_seeds(5, 10)]
        m, se = rep_mean(vals)
        assert abs(regen.value - m) <= 3 * math.hypot(regen.std_err, se)

    def test_determinism(self):
        reg = make_regime(100, 1.0, 0.25)
        a = E.run_renewal_cycles(reg, 1.0, 20, seed=3)
        b = E.run_renewal_cycles(reg, 1.0, 20, seed=3)
        assert np.array_equal(a.theta, b.theta) and np.array_equal(a.s_hist, b.s_hist)

    def test_chunks_merge(self):
        reg = make_regime(100, 1.0, 0.25)
        m = E.run_renewal_chunks(reg, 1.0, 25, seed=1, chunk=10)
        assert len(m) == 25
        assert m.s_hist.sum() == pytest.approx(m.theta.sum(), rel=1e-9)

    def test_watchdog(self):
        reg = make_regime(100, 1.0, 0.25)
        with pytest.raises(E.WatchdogError, match="exceeded"):
            E.run_renewal_cycles(reg, 1.0, 5, seed=0, max_events=10)

    def test_invalid_levels(self):
        reg = make_regime(1000, 1.0, 0.4)
        with pytest.raises(ValueError):
            E.run_renewal_cycles(reg, 1.0, 5)
        assert E.feasible_b(reg, 1.0) < 1.0
        assert E.feasible_b(make_regime(1000, 1.0, 0.25), 1.0) == 1.0

    def test_functional_selection(self):
        reg = make_regime(100, 1.0, 0.25)
        b = E.run_renewal_cycles(reg, 1.0, 3, functionals=["x"], seed=0)
        assert set(b[0].integrals) == {"x", "time"}
        with pytest.raises(ValueError):
            S.regenerative_ratio(list(b), "idle")


class TestBirthDeath:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            E.BirthDeathSpec(0.0, 1.0)
        with pytest.raises(ValueError):
            E.BirthDeathSpec(2.0, 1.0).stationary_pmf(0)
        assert E.BirthDeathSpec(1.0, 2.0).stationary_pmf(3) == pytest.approx(0.0625)

    def test_geometric(self):
        spec = E.BirthDeathSpec(1.0, 2.0)
        runs = [E.run_birth_death(spec, 0, 5000.0, seed=s, warmup=20.0) for s in E.substream_seeds(4, 20)]
        for k in range(4):
            m, se = rep_mean([r.prob(k) for r in runs])
            assert abs(m - 0.5 ** (k + 1)) <= 3 * se

    def test_idle_bound_tail(self):
        reg = make_regime(10000, 1.0, 0.25)
        spec = E.idle_bound_spec(reg, 1.0)
        assert spec.up_rate == pytest.approx(10000 - 1000)
        assert spec.down_rate == pytest.approx(10000 - 10)
        k = math.ceil(10000 ** 0.35)
        runs = [E.run_birth_death(spec, 0, 200.0, seed=s, warmup=5.0) for s in E.substream_seeds(6, 20)]
        m, se = rep_mean([r.tail(k) for r in runs])
        assert abs(m - spec.rho ** k) <= 3 * se

    def test_idle_bound_spec_validation(self):
        with pytest.raises(ValueError):
            E.idle_bound_spec(make_regime(100, 1.0, 0.25), 5.0)

    def test_mmn_n1(self):
        reg = make_regime(1, 0.5, 0.25)
        runs = [E.run_mmn(reg, 0, 5000.0, seed=s, warmup_diff=50.0) for s in E.substream_seeds(8, 20)]
        m, se = rep_mean([r.mean for r in runs])
        assert abs(m - 1.0) <= 3 * se


class TestCouplings:
    @given(raw_occupancy(max_n=30, max_levels=4), st.floats(0.05, 2.0), st.integers(0, 2**31))
    @settings(max_examples=MANY)
    def test_jsq_dominates_mmn(self, init, beta, seed):
        n = init.n
        try:
            reg = make_regime(n, beta, 0.25)
        except ValueError:
            return
        res = E.coupled_jsq_mmn(reg, init, 1.0, seed=seed)
        assert res.dominated and res.min_gap >= 0

    @given(st.integers(100, 2000), st.integers(0, 2**31), st.floats(0.5, 1.5))
    @settings(max_examples=MANY)
    def test_idle_below_bound(self, n, seed, b):
        reg = make_regime(n, 1.0, 0.25)
        try:
            E.idle_bound_spec(reg, b)
        except ValueError:
            return
        init = renewal_state(reg, b)
        res = E.coupled_idle_bound(reg, b, init, 0.5, seed=seed)
        assert res.dominated

    def test_idle_bound_requires_q2_above(self):
        reg = make_regime(1000, 1.0, 0.25)
        with pytest.raises(ValueError):
            E.coupled_idle_bound(reg, 1.0, OccupancyState(1000, (1000, 10)), 1.0)


class TestDriftDiagnostic:
    def test_zero_window(self):
        reg = make_regime(1000, 1.0, 0.25)
        tr = E.run_jsq(reg, renewal_state(reg, 1.0), 1.0, seed=0)
        assert E.drift_identity_diagnostic(tr, t_max=0.0) == 0.0

    def test_constant_path(self):
        reg = make_regime(1000, 1.0, 0.25)
        tr = E.run_jsq(reg, renewal_state(reg, 1.0), 1.0, seed=0, grid_step_diff=0.1)
        t = tr.grid["t_diff"]
        c = 1.7
        grid = dict(tr.grid, cum_idle_scaled=t / c, cum_inv_x=t / c, x=np.full_like(t, c))
        assert E.drift_identity_diagnostic(dataclasses.replace(tr, grid=grid)) == pytest.approx(0.0, abs=1e-15)

    def test_positive_and_window(self):
        reg = make_regime(1000, 1.0, 0.25)
        tr = E.run_jsq(reg, renewal_state(reg, 1.0), 1.0, seed=2, stopping={"tau2": [0.25]})
        full = E.drift_identity_diagnostic(tr)
        cut = E.drift_identity_diagnostic(tr, b_window=0.25)
        assert 0 <= cut <= full
