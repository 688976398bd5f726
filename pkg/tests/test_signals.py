import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pvfc.signals import (AlphaBeta, AmplitudeTracker, SagStatus, SlidingPeak, clarke, detect_sag, instantaneous_pq,
                          inverse_clarke)

V_HAT = 260 * math.sqrt(2) / math.sqrt(3)
finite = st.floats(-1e4, 1e4, allow_nan=False)


class TestClarke:
    def test_phase_a_axis(self):
        assert clarke(1.0, -0.5, -0.5) == pytest.approx((1.0, 0.0))

    def test_beta_axis(self):
        assert clarke(0.0, math.sqrt(3) / 2, -math.sqrt(3) / 2) == pytest.approx((0.0, 1.0))

    @pytest.mark.parametrize("theta", np.linspace(0, 2 * np.pi, 13))
    def test_balanced_set_is_rotating_vector(self, theta):
        a = V_HAT * math.cos(theta)
        b = V_HAT * math.cos(theta - 2 * math.pi / 3)
        c = V_HAT * math.cos(theta + 2 * math.pi / 3)
        v = clarke(a, b, c)
        assert v.magnitude == pytest.approx(V_HAT, rel=1e-12)
        assert math.atan2(v.beta, v.alpha) == pytest.approx(math.atan2(math.sin(theta), math.cos(theta)), abs=1e-12)

    @given(finite, finite)
    def test_inverse_on_zero_sum_triples(self, a, b):
        c = -a - b
        back = inverse_clarke(clarke(a, b, c))
        assert back == pytest.approx((a, b, c), abs=1e-9)

    @given(finite, finite)
    def test_clarke_of_inverse(self, al, be):
        assert clarke(*inverse_clarke(AlphaBeta(al, be))) == pytest.approx((al, be), abs=1e-9)


class TestInstantaneousPower:
    def test_aligned_vectors(self):
        p, q = instantaneous_pq(AlphaBeta(V_HAT, 0.0), AlphaBeta(100.0, 0.0))
        assert p == pytest.approx(1.5 * V_HAT * 100.0)
        assert q == 0.0

    def test_zero_voltage(self):
        assert instantaneous_pq(AlphaBeta(0.0, 0.0), AlphaBeta(3.0, 4.0)) == (0.0, 0.0)

    def test_lagging_current_gives_positive_q(self):
        # current lagging the voltage by 90 degrees delivers reactive power
        v = AlphaBeta(V_HAT, 0.0)
        i = AlphaBeta(0.0, -100.0)
        p, q = instantaneous_pq(v, i)
        assert p == 0.0 and q > 0

    @given(finite, finite, finite, finite)
    def test_matches_phase_domain_power(self, va, vb, ia, ib):
        pa = sum(x * y for x, y in zip(inverse_clarke(AlphaBeta(va, vb)), inverse_clarke(AlphaBeta(ia, ib))))
        p, _ = instantaneous_pq(AlphaBeta(va, vb), AlphaBeta(ia, ib))
        assert p == pytest.approx(pa, rel=1e-9, abs=1e-6)


class TestSlidingPeak:
    def test_window_maximum(self):
        sp = SlidingPeak(3)
        out = [sp.push(x) for x in (1, -5, 2, 0, 0, 0)]
        assert out == [1, 5, 5, 5, 2, 0]

    def test_initial_value_stands_in_until_primed(self):
        sp = SlidingPeak(3, initial=10.0)
        assert [sp.push(x) for x in (1, 1, 1, 1)] == [10, 10, 1, 1]
        assert sp.primed

    @given(st.integers(1, 20), st.lists(st.floats(-100, 100), min_size=1, max_size=100))
    def test_matches_brute_force(self, w, xs):
        sp = SlidingPeak(w)
        for n, x in enumerate(xs):
            got = sp.push(x)
            assert got == max(abs(v) for v in xs[max(0, n - w + 1): n + 1])


class TestSagDetection:
    spc = 1000

    def feed(self, tracker, fractions, cycles=1.0, t0=0.0):
        n = int(cycles * self.spc)
        for k in range(n):
            th = 2 * math.pi * (t0 + k / self.spc)
            tracker.push(fractions[0] * V_HAT * math.cos(th),
                         fractions[1] * V_HAT * math.cos(th - 2 * math.pi / 3),
                         fractions[2] * V_HAT * math.cos(th + 2 * math.pi / 3))

    def test_nominal_is_inactive(self):
        tr = AmplitudeTracker(self.spc, V_HAT)
        self.feed(tr, (1, 1, 1), 2)
        assert not detect_sag(tr.amplitudes, V_HAT).active

    def test_one_phase_sag_detected_within_one_cycle(self):
        tr = AmplitudeTracker(self.spc, V_HAT)
        self.feed(tr, (1, 1, 1), 2)
        self.feed(tr, (0.7, 1, 1), 1.0)
        s = detect_sag(tr.amplitudes, V_HAT)
        assert s.active
        assert s.min_fraction == pytest.approx(0.70, abs=0.02)

    def test_hysteresis_holds_in_band(self):
        prev = detect_sag((0.7 * V_HAT, V_HAT, V_HAT), V_HAT)
        s = detect_sag((0.92 * V_HAT,) * 3, V_HAT, prev, t=1.0)
        assert s.active and s.onset == prev.onset

    def test_band_without_prior_sag_is_inactive(self):
        assert not detect_sag((0.92 * V_HAT,) * 3, V_HAT).active

    def test_recovery_clears(self):
        prev = detect_sag((0.7 * V_HAT, V_HAT, V_HAT), V_HAT)
        s = detect_sag((0.96 * V_HAT,) * 3, V_HAT, prev)
        assert not s.active and s.onset is None

    def test_fractions_are_capped(self):
        s = SagStatus(True, (1.1 * V_HAT, 0.5 * V_HAT, V_HAT), 0.5, 0.0, V_HAT)
        assert s.fractions == pytest.approx((1.0, 0.5, 1.0))

    @given(st.floats(0.05, 1.2), st.floats(0.05, 1.2), st.floats(0.05, 1.2))
    def test_activation_threshold(self, a, b, c):
        s = detect_sag((a * V_HAT, b * V_HAT, c * V_HAT), V_HAT)
        assert s.active == (min(a, b, c) < 0.9)
