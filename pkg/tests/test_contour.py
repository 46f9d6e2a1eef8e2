import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qasep.contour import (ContourSpec, ParticleQuery, a_sigma, blockdual_crosscheck,
                           circle_quadrature, critical_radius, evaluate_batch,
                           leftmost_particle_pmf, oracle_probability, partial_fraction_residual,
                           rainbow_oracle, rainbow_transition_prob, s_factor, slot_integral,
                           swap_cancellation_residual, symmetrization_residual, telescoping_sum,
                           twprop_probability)
from qasep.errors import (InvalidParams, NoConvergence, OrderingViolation, PoleOnGrid,
                          PrecisionLoss, WindowTooLarge)
from qasep.lattice import RainbowState, inversions
from qasep.qspecial import q_factorial

SPEC = ContourSpec()
WINDOW = (0, 19)


def random_points(rng, n, rmax=0.7):
    return rng.uniform(0.1, rmax, n) * np.exp(1j * rng.uniform(0, 2 * np.pi, n))


class TestQuadrature:
    spec = ContourSpec(radius=0.5)

    def test_residue(self):
        assert abs(circle_quadrature(lambda x: 1 / x[0], self.spec, 1) - 1) <= 1e-14

    def test_constant(self):
        assert abs(circle_quadrature(lambda x: 1 + 0 * x[0], self.spec, 1)) <= 1e-14

    def test_entire(self):
        assert abs(circle_quadrature(lambda x: np.exp(x[0]), self.spec, 1)) <= 1e-14

    def test_two_variables(self):
        val = circle_quadrature(lambda x: 1 / (x[0] * x[1]) + x[0] / x[1], self.spec, 2)
        assert abs(val - 1) <= 1e-14

    def test_no_convergence(self):
        # an essential singularity at 0 needs many nodes on a small circle
        spec = ContourSpec(radius=0.05, nodes=16, max_doublings=0)
        with pytest.raises(NoConvergence):
            circle_quadrature(lambda x: np.exp(1 / x[0]) / x[0] ** 0, spec, 1)

    def test_spec_guards(self):
        with pytest.raises(InvalidParams):
            ContourSpec(radius=1.2)
        with pytest.raises(InvalidParams):
            ContourSpec(nodes=4)
        with pytest.raises(InvalidParams):
            ContourSpec(radius=0.5).radius_for(2.0)

    def test_critical_radius(self):
        for q in (0.2, 1.0, 2.0, 5.0):
            r = critical_radius(q)
            assert q * r * r + (1 + q) * r - 1 == pytest.approx(0.0, abs=1e-14)
            assert 0 < r < 1


class TestScattering:
    def test_symmetric_point(self):
        assert s_factor(0.3 + 0.2j, 0.3 + 0.2j, 2.0) == pytest.approx(-1.0)

    @settings(max_examples=30)
    @given(st.floats(0.1, 0.6), st.floats(0, 6.28), st.floats(0.1, 0.6), st.floats(0, 6.28),
           st.floats(0.3, 3.0))
    def test_reciprocal(self, r1, t1, r2, t2, q):
        a, b = r1 * np.exp(1j * t1), r2 * np.exp(1j * t2)
        try:
            assert abs(s_factor(a, b, q) * s_factor(b, a, q) - 1) <= 1e-10
        except PoleOnGrid:
            pass

    def test_spot_value(self):
        a, b, q = 0.3 + 0.1j, 0.2 - 0.4j, 2.0
        # written out by hand: numerator and denominator as complex rationals
        ab = complex(0.3 * 0.2 + 0.1 * 0.4, 0.3 * -0.4 + 0.1 * 0.2)
        num = complex(1 + q * ab.real - 3 * 0.3, q * ab.imag - 3 * 0.1)
        den = complex(1 + q * ab.real - 3 * 0.2, q * ab.imag + 3 * 0.4)
        assert abs(s_factor(a, b, q) + num / den) <= 1e-15

    def test_pole(self):
        # 1 + q a b - (1 + q) b = 0 at a = 0, b = 1/(1 + q)
        with pytest.raises(PoleOnGrid):
            s_factor(0.0, 1 / 3, 2.0)


class TestASigma:
    def test_identity(self):
        assert a_sigma((0, 1, 2), [0.1, 0.2j, -0.3], 1.7) == 1.0

    def test_single_inversion(self):
        xi = [0.2 + 0.1j, -0.4j]
        assert a_sigma((1, 0), xi, 1.7) == s_factor(xi[1], xi[0], 1.7)

    @pytest.mark.parametrize("N", [2, 3, 4])
    def test_recursion(self, N):
        rng = np.random.default_rng(N)
        xi = random_points(rng, N, 0.5)
        q = 1.3
        for s in itertools.permutations(range(N)):
            for k in range(N - 1):
                if s[k] < s[k + 1]:
                    s2 = list(s)
                    s2[k], s2[k + 1] = s2[k + 1], s2[k]
                    lhs = a_sigma(tuple(s2), xi, q)
                    rhs = a_sigma(s, xi, q) * s_factor(xi[s[k + 1]], xi[s[k]], q)
                    assert abs(lhs - rhs) <= 1e-12 * max(1, abs(rhs))


class TestTransitionProbability:
    def test_one_particle(self):
        y, t, q = (12,), 0.5, 1.5
        rb, pt = rainbow_oracle((0, 24), y, t, q)
        err = max(abs(rainbow_transition_prob(s, y, t, q) - p) for s, p in zip(rb.states, pt)
                  if 6 <= s.positions[0] <= 18)
        assert err <= 1e-8

    def test_time_zero(self):
        y, q = (4, 6), 2.0
        norm = 1 + q
        for x in itertools.combinations(range(2, 9), 2):
            for perm in ((1, 2), (2, 1)):
                s = RainbowState(tuple(sorted(x, reverse=True)), perm)
                want = q ** inversions(perm) / norm if tuple(sorted(x)) == y else 0.0
                assert rainbow_transition_prob(s, y, 0.0, q) == pytest.approx(want, abs=1e-8)

    def test_two_particles(self):
        y, t, q = (9, 11), 0.4, 2.0
        rb, pt = rainbow_oracle(WINDOW, y, t, q)
        err = max(abs(rainbow_transition_prob(s, y, t, q) - p) for s, p in zip(rb.states, pt)
                  if min(s.positions) >= 6 and max(s.positions) <= 14)
        assert err <= 1e-6

    def test_guards(self):
        with pytest.raises(InvalidParams):
            rainbow_transition_prob(RainbowState((3,), (1,)), (1, 2), 0.1, 2.0)
        with pytest.raises(InvalidParams):
            rainbow_transition_prob(RainbowState((3,), (1,)), (1,), -1.0, 2.0)
        with pytest.raises(OrderingViolation):
            rainbow_transition_prob(RainbowState((3, 2), (1, 2)), (2, 1), 0.1, 2.0)


class TestLeftmost:
    def test_one_particle(self):
        Y, t, q = (10,), 0.5, 2.0
        for x in range(6, 14):
            ref = oracle_probability(ParticleQuery("leftmost", (x,), (), Y, t, q), WINDOW)
            assert leftmost_particle_pmf(x, Y, t, q) == pytest.approx(ref, abs=1e-8)

    def test_two_particles(self):
        Y, t, q = (8, 10), 0.5, 2.0
        for x in range(4, 11):
            ref = oracle_probability(ParticleQuery("leftmost", (x,), (), Y, t, q), WINDOW)
            assert leftmost_particle_pmf(x, Y, t, q) == pytest.approx(ref, abs=1e-6)

    def test_normalization(self):
        # right drift keeps the left tail well conditioned
        Y, t, q = (8, 10), 0.5, 0.5
        total = sum(leftmost_particle_pmf(x, Y, t, q) for x in range(-5, 30))
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_cancellation_is_reported(self):
        # far left of the start the summands reach 1e13 while the value is 1e-7
        with pytest.raises(PrecisionLoss):
            leftmost_particle_pmf(-2, (8, 10), 0.5, 2.0)
        loose = ContourSpec(precision_tol=1.0)
        assert abs(leftmost_particle_pmf(-2, (8, 10), 0.5, 2.0, loose)) > 1e-5


class TestTWProp:
    def test_joint_pmf(self):
        y, t, q = (8, 10), 0.4, 2.0
        for x in [(8, 10), (10, 8), (7, 9), (11, 6)]:
            qry = ParticleQuery("joint_pmf", x, (), y, t, q)
            # species i sits at x[i]; the state lists positions right to left
            order = sorted(range(2), key=lambda i: -x[i])
            s = RainbowState(tuple(x[i] for i in order), tuple(i + 1 for i in order))
            assert twprop_probability(qry) == pytest.approx(rainbow_transition_prob(s, y, t, q),
                                                            abs=1e-10)
            assert twprop_probability(qry) == pytest.approx(oracle_probability(qry, WINDOW),
                                                            abs=1e-6)

    def test_mixed(self):
        for x1, M2 in [(9, 8), (10, 6), (7, 7)]:
            qry = ParticleQuery("mixed_twprop", (x1,), (M2,), (8, 10), 0.4, 2.0)
            assert twprop_probability(qry) == pytest.approx(oracle_probability(qry, WINDOW),
                                                            abs=1e-6)

    def test_all_thresholds(self):
        for M in [(9, 9), (8, 8), (10, 7)]:
            qry = ParticleQuery("mixed_twprop", (), M, (8, 10), 0.4, 2.0)
            assert twprop_probability(qry) == pytest.approx(oracle_probability(qry, WINDOW),
                                                            abs=1e-6)

    def test_telescoping(self):
        qry = ParticleQuery("mixed_twprop", (9,), (8,), (8, 10), 0.4, 2.0)
        total, tail, terms = telescoping_sum(qry)
        assert tail <= 1e-10 and terms > 0
        assert total == pytest.approx(twprop_probability(qry), abs=1e-12)
        # one level further: the K = 0 form telescopes into the K = 1 form
        q0 = ParticleQuery("mixed_twprop", (), (9, 8), (8, 10), 0.4, 2.0)
        total0, _, _ = telescoping_sum(q0)
        assert total0 == pytest.approx(twprop_probability(q0), abs=1e-6)

    @pytest.mark.slow
    def test_three_particles(self):
        qry = ParticleQuery("mixed_twprop", (9,), (8, 7), (6, 7, 9), 0.3, 1.5)
        assert twprop_probability(qry) == pytest.approx(oracle_probability(qry, (0, 15)),
                                                        abs=1e-6)

    def test_ordering_violations(self):
        with pytest.raises(OrderingViolation):
            twprop_probability(ParticleQuery("mixed_twprop", (5,), (6,), (4, 7), 0.1, 2.0))
        with pytest.raises(OrderingViolation):
            twprop_probability(ParticleQuery("mixed_twprop", (), (5, 6), (4, 7), 0.1, 2.0))
        with pytest.raises(OrderingViolation):
            twprop_probability(ParticleQuery("joint_pmf", (5, 5), (), (4, 7), 0.1, 2.0))
        with pytest.raises(InvalidParams):
            twprop_probability(ParticleQuery("mixed_twprop", (5,), (), (4, 7), 0.1, 2.0))
        with pytest.raises(InvalidParams):
            ParticleQuery("bogus", (), (), (1,), 0.1, 2.0)

    def test_query_round_trip(self):
        qry = ParticleQuery("mixed_twprop", (9,), (8,), (8, 10), 0.4, 2.0)
        assert ParticleQuery.from_dict(json.loads(json.dumps(qry.to_dict()))) == qry

    def test_probability_range(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            x1 = int(rng.integers(5, 13))
            M2 = int(rng.integers(3, x1 + 1))
            val = twprop_probability(ParticleQuery("mixed_twprop", (x1,), (M2,), (8, 10), 0.4, 2.0))
            assert -1e-8 <= val <= 1 + 1e-8


class TestRadiusIndependence:
    @pytest.mark.parametrize("r", [0.3, 0.5, 0.7])
    def test_pmf(self, r):
        q, y, t = 0.2, (3, 5), 0.6
        s = RainbowState((5, 4), (2, 1))
        ref = rainbow_transition_prob(s, y, t, q, ContourSpec(radius=0.5))
        assert rainbow_transition_prob(s, y, t, q, ContourSpec(radius=r)) == pytest.approx(
            ref, abs=1e-10)

    @pytest.mark.parametrize("r", [0.3, 0.5, 0.7])
    def test_threshold(self, r):
        qry = ParticleQuery("mixed_twprop", (), (4, 3), (3, 5), 0.6, 0.2)
        ref = twprop_probability(qry, ContourSpec(radius=0.5))
        assert twprop_probability(qry, ContourSpec(radius=r)) == pytest.approx(ref, abs=1e-10)


class TestIdentities:
    def test_symmetrization_one(self):
        assert symmetrization_residual([0.3 + 0.2j], 0.8, 0.2) == 0.0

    def test_symmetrization(self):
        rng = np.random.default_rng(0)
        for N, tol, n in [(2, 1e-12, 20), (3, 1e-12, 10), (4, 1e-9, 5)]:
            for _ in range(n):
                assert symmetrization_residual(random_points(rng, N), 0.8, 0.2) <= tol

    def test_symmetrization_guard(self):
        with pytest.raises(InvalidParams):
            symmetrization_residual([0.1, 0.2], 0.5, 0.6)

    @pytest.mark.parametrize("N", [2, 3, 4])
    def test_swap_cancellation(self, N):
        rng = np.random.default_rng(10 + N)
        alpha, beta = 0.6, 0.4
        for _ in range(3):
            xi = random_points(rng, N, 0.5)
            for s in itertools.permutations(range(N)):
                for k in range(N - 1):
                    assert swap_cancellation_residual(s, k, xi, alpha, beta) <= 1e-12

    @settings(max_examples=40)
    @given(st.floats(0.05, 0.8), st.floats(0, 6.28), st.floats(0.05, 0.8), st.floats(0, 6.28),
           st.floats(0.2, 0.9))
    def test_partial_fraction(self, r1, t1, r2, t2, alpha):
        a, b = r1 * np.exp(1j * t1), r2 * np.exp(1j * t2)
        assert partial_fraction_residual(a, b, alpha, 1 - alpha) <= 1e-13 * max(
            1, 1 / abs(1 - a), 1 / abs(1 - b)) ** 2


class TestBlockDual:
    def test_time_zero(self):
        # at t = 0 the particle from M ends right of c iff M >= c
        lhs, rhs, gap = blockdual_crosscheck((-2, 4), (2,), (3,), 2.0, 0.0)
        assert lhs == pytest.approx(1.0, abs=1e-12) and gap <= 1e-8
        lhs, rhs, gap = blockdual_crosscheck((-2, 4), (2,), (1,), 2.0, 0.0)
        assert lhs == 0.0 and abs(rhs) <= 1e-8

    def test_one_species(self):
        assert blockdual_crosscheck((-4, 6), (1,), (2,), 2.0, 0.3)[2] <= 1e-6

    @pytest.mark.slow
    def test_two_species_wide_window(self):
        assert blockdual_crosscheck((-3, 10), (1, 2), (3, 2), 2.0, 0.3)[2] <= 1e-6

    def test_small_window_truncation(self):
        # a 6-site window cuts off mass that the quadrature (infinite line) keeps
        gap = blockdual_crosscheck((-2, 3), (1, 2), (2, 1), 2.0, 0.3)[2]
        assert 1e-6 < gap < 1e-2

    def test_guards(self):
        with pytest.raises(OrderingViolation):
            blockdual_crosscheck((-2, 3), (2, 1), (2, 1), 2.0, 0.3)
        with pytest.raises(OrderingViolation):
            blockdual_crosscheck((-2, 3), (1, 2), (1, 2), 2.0, 0.3)
        with pytest.raises(InvalidParams):
            blockdual_crosscheck((-2, 3), (1,), (9,), 2.0, 0.3)
        with pytest.raises(WindowTooLarge):
            blockdual_crosscheck((-20, 20), (1, 2, 3), (3, 2, 1), 2.0, 0.3)


class TestBatch:
    def test_batch(self):
        recs = [ParticleQuery("mixed_twprop", (9,), (8,), (8, 10), 0.4, 2.0).to_dict(),
                {"mode": "mixed_twprop", "fixed": [5], "thresholds": [6], "y": [4, 7],
                 "t": 0.1, "q": 2.0}]
        out = json.loads(evaluate_batch(json.dumps(recs), oracle_window=WINDOW))
        assert out[0]["gap"] <= 1e-6 and "error" not in out[0]
        assert out[1]["error"] == "OrderingViolation"
        assert out[0]["query"] == recs[0]
