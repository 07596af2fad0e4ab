import math

import pytest
from hypothesis import given, settings, strategies as st

from jsqlab.model import (
    OccupancyState, apply_arrival, apply_departure, from_queue_lengths, make_regime,
    renewal_state, scale_state, to_queue_lengths, unscale_total,
)

from conftest import MANY, occupancy_states, raw_occupancy


class TestRegime:
    def test_lambda_n10000(self):
        r = make_regime(10000, 1.0, 0.25)
        assert r.lambda_total == pytest.approx(9990.0, rel=1e-12)
        assert r.alpha == 0.75

    def test_single_server_is_mm1(self):
        assert make_regime(1, 0.5, 0.25).lambda_total == pytest.approx(0.5, rel=1e-12)

    def test_supercritical_rejected(self):
        with pytest.raises(ValueError, match="supercritical"):
            make_regime(100, 20.0, 0.0)

    @pytest.mark.parametrize("args", [(0, 1.0, 0.1), (10, -1.0, 0.1), (10, 1.0, 0.5), (10, 1.0, -0.1),
                                      (2.5, 1.0, 0.1)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            make_regime(*args)

    def test_halfin_whitt_admitted(self):
        r = make_regime(100, 1.0, 0.0)
        assert r.lambda_total == pytest.approx(90.0)

    @given(st.integers(1, 10**6), st.floats(1e-3, 10), st.floats(0, 0.499))
    def test_lambda_identity(self, n, beta, eps):
        lam = n - beta * n ** (0.5 - eps)
        if lam <= 0:
            with pytest.raises(ValueError):
                make_regime(n, beta, eps)
            return
        r = make_regime(n, beta, eps)
        assert abs(r.lambda_total - lam) <= 1e-12 * n
        assert 0 < r.lambda_total < n
        assert r.load == pytest.approx(1 - beta / n ** (0.5 + eps), rel=1e-10)

    def test_thresholds_floor(self):
        r = make_regime(10000, 1.0, 0.25)
        assert r.threshold(1.0, "q2") == 1000
        assert r.threshold(1.5, "idle") == 15
        assert r.threshold(0.99999, "total") == 999
        with pytest.raises(ValueError):
            r.threshold(1.0, "bogus")


class TestScaling:
    def test_examples(self):
        r = make_regime(10000, 1.0, 0.25)
        st_ = OccupancyState(10000, (10000, 100))
        assert scale_state(st_, r).x == pytest.approx(0.1)
        assert scale_state(OccupancyState(10000, (10000,)), r).x == 0
        obs = scale_state(OccupancyState(10000, (9990,)), r, t_real=200.0)
        assert obs.i_scaled == pytest.approx(1.0)
        assert obs.t_diff == pytest.approx(2.0)

    @given(st.integers(1, 2000), st.floats(0.01, 5), st.floats(0, 0.49), st.data())
    @settings(max_examples=MANY)
    def test_unscale_roundtrip(self, n, beta, eps, data):
        try:
            r = make_regime(n, beta, eps)
        except ValueError:
            return
        s = data.draw(st.integers(0, 3 * n))
        q = [min(n, s)] + ([s - n] if s > n else [])
        if s > 2 * n:
            q = [n, n, s - 2 * n]
        st_ = OccupancyState(n, tuple(q))
        assert st_.s_total == s
        assert unscale_total(scale_state(st_, r).x, r) == s


class TestTransitions:
    @pytest.mark.parametrize("q,expected", [((3, 1), (4, 1)), ((4, 2), (4, 3)), ((4, 4), (4, 4, 1)),
                                            ((), (1,))])
    def test_arrival_examples(self, q, expected):
        assert apply_arrival(OccupancyState(4, q), 4).q == expected

    @pytest.mark.parametrize("level,expected", [(1, (3, 2, 1)), (3, (4, 2)), (2, (4, 1, 1))])
    def test_departure_examples(self, level, expected):
        assert apply_departure(OccupancyState(4, (4, 2, 1)), level).q == expected

    def test_departure_rejects_empty_level(self):
        with pytest.raises(ValueError):
            apply_departure(OccupancyState(4, (4, 4)), 1)
        with pytest.raises(ValueError):
            apply_departure(OccupancyState(4, (4, 4)), 5)

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError):
            OccupancyState(4, (3, 4))
        with pytest.raises(ValueError):
            OccupancyState(4, (5,))

    def test_trailing_zeros_trimmed(self):
        assert OccupancyState(4, (2, 0, 0)).q == (2,)

    @given(raw_occupancy())
    @settings(max_examples=MANY)
    def test_monotone_occupancy_under_transitions(self, state):
        after = apply_arrival(state)
        assert after.s_total == state.s_total + 1
        assert list(after.q) == sorted(after.q, reverse=True) and after.busy <= after.n
        # the task joins a shortest queue: the minimum queue length grows by at most one
        assert min(to_queue_lengths(after)) >= min(to_queue_lengths(state))
        for level, count in enumerate(state.exact_counts(), start=1):
            if count:
                d = apply_departure(state, level)
                assert d.s_total == state.s_total - 1
                assert list(d.q) == sorted(d.q, reverse=True)
        assert sum(state.exact_counts()) == state.busy

    @given(raw_occupancy())
    @settings(max_examples=MANY)
    def test_derived_accessors(self, state):
        assert 0 <= state.i_idle <= state.n
        assert state.s_total >= state.n - state.i_idle
        assert state.qbar3 == state.s_total - state.level(1) - state.level(2)


class TestQueueLengths:
    @given(st.lists(st.integers(0, 9), min_size=1, max_size=30))
    @settings(max_examples=MANY)
    def test_roundtrip_from_lengths(self, lengths):
        state = from_queue_lengths(lengths)
        assert to_queue_lengths(state) == sorted(lengths, reverse=True)

    @given(raw_occupancy())
    @settings(max_examples=MANY)
    def test_roundtrip_from_state(self, state):
        assert from_queue_lengths(to_queue_lengths(state), state.n) == state

    def test_wrong_length(self):
        with pytest.raises(ValueError):
            from_queue_lengths([1, 2], 3)


def test_renewal_state():
    r = make_regime(10000, 1.0, 0.25)
    s = renewal_state(r, 1.0)
    assert s.i_idle == 0 and s.q2 == 2000 and s.qbar3 == 0
    with pytest.raises(ValueError):
        renewal_state(make_regime(1000, 1.0, 0.4), 1.0)
