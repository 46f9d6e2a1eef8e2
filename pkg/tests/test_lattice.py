import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qasep.errors import InvalidParams, WindowTooLarge
from qasep.lattice import (ModelParams, OccupationConfig, RainbowState, RateMatrix,
                           build_asep_generator, build_dynamic_generator,
                           build_rainbow_generator, colorblind_project, dynamic_jump_rates,
                           height_plus, inversions, lumping_residual, occupation_states,
                           rainbow_states, reflect_generator_residual)


def configs(window):
    a, b = window
    return st.lists(st.integers(0, 1), min_size=b - a + 1, max_size=b - a + 1).map(
        lambda occ: OccupationConfig(window, tuple(occ)))


class TestHeight:
    def test_empty(self):
        c = OccupationConfig.empty((-3, 3))
        for k in range(-3, 4):
            assert height_plus(c, 0.7, k) == pytest.approx(0.7 + k)

    def test_step(self):
        assert height_plus(OccupationConfig.step((-5, 5)), 1.25, 0) == 1.25

    def test_single_particle(self):
        assert height_plus(OccupationConfig.from_sites((0, 8), [5]), 0.0, 3) == 5

    def test_infinite_rho(self):
        c = OccupationConfig.from_sites((0, 3), [1])
        assert height_plus(c, math.inf, 2) == math.inf
        assert height_plus(c, -math.inf, 2) == -math.inf

    @given(configs((-3, 4)), st.integers(-3, 3))
    def test_recursion(self, c, k):
        # h_k = h_{k+1} - 1 + 2 eta_k
        assert height_plus(c, 0.3, k) == pytest.approx(height_plus(c, 0.3, k + 1) - 1 + 2 * c[k])


class TestRates:
    def test_limits(self):
        c = OccupationConfig.from_sites((0, 1), [0])
        assert dynamic_jump_rates(c, ModelParams(2.0, math.inf, (0, 1)), 0)[0] == 0.5
        assert dynamic_jump_rates(c, ModelParams(2.0, -math.inf, (0, 1)), 0)[0] == 2.0

    def test_zero_height_value(self):
        # particle at 0, empty site 1, window [0, 1]: h_1^+ = rho + 1 = 0 at rho = -1
        c = OccupationConfig.from_sites((0, 1), [0])
        right, left = dynamic_jump_rates(c, ModelParams(2.0, -1.0, (0, 1)), 0)
        assert right == pytest.approx(2 / (2 + 0.5), rel=1e-15)
        assert left == 0.0

    def test_exclusion_and_window(self):
        p = ModelParams(1.5, 0.2, (0, 3))
        c = OccupationConfig.from_sites((0, 3), [0, 1, 3])
        assert dynamic_jump_rates(c, p, 0) == (0.0, 0.0)     # blocked right, wall left
        assert dynamic_jump_rates(c, p, 3)[0] == 0.0         # wall right
        assert dynamic_jump_rates(c, p, 2) == (0.0, 0.0)     # empty site

    @pytest.mark.parametrize("q", [1.1, 2.0, 3.5])
    def test_monotone_interpolation(self, q):
        from qasep.lattice import _rate_plus
        hs = np.linspace(-8, 8, 321)
        r = np.array([_rate_plus(h, q) for h in hs])
        assert np.all(np.diff(r) < 0)
        assert np.all((r < q) & (r > 1 / q))
        assert _rate_plus(-math.inf, q) == q and _rate_plus(math.inf, q) == 1 / q
        assert _rate_plus(-200.0, q) == pytest.approx(q, rel=1e-12)
        assert _rate_plus(200.0, q) == pytest.approx(1 / q, rel=1e-12)

    @given(st.floats(-40, 40), st.floats(0.2, 5.0))
    def test_rates_match_formula(self, h, q):
        from qasep.lattice import _rate_minus, _rate_plus
        with np.errstate(over="ignore"):
            if abs(2 * h * math.log(q)) < 600:
                plus = (1 + q ** (-2 * h)) / (q * (1 + q ** (-2 * h - 2)))
                minus = q * (1 + q ** (-2 * h)) / (1 + q ** (-2 * h + 2))
                assert _rate_plus(h, q) == pytest.approx(plus, rel=1e-12)
                assert _rate_minus(h, q) == pytest.approx(minus, rel=1e-12)


class TestGenerators:
    @pytest.mark.parametrize("rho", [0.0, 0.7, -1.3, math.inf, -math.inf])
    def test_dynamic_rows_sum_to_zero(self, rho):
        Q = build_dynamic_generator(ModelParams(1.7, rho, (-2, 2)))
        assert Q.max_row_sum() <= 1e-12
        off = Q.dense() - np.diag(np.diag(Q.dense()))
        assert off.min() >= 0

    def test_two_site_entry(self):
        p = ModelParams(1.3, 0.4, (0, 1))
        Q = build_dynamic_generator(p)
        src = OccupationConfig.from_sites((0, 1), [0])
        dst = OccupationConfig.from_sites((0, 1), [1])
        assert Q.dense()[Q.index[src], Q.index[dst]] == dynamic_jump_rates(src, p, 0)[0]
        assert Q.dense()[Q.index[dst], Q.index[src]] == dynamic_jump_rates(dst, p, 1)[1]

    def test_minus_infinity_is_asep(self):
        q = 2.0
        dyn = build_dynamic_generator(ModelParams(q, -math.inf, (0, 3))).dense()
        asep = build_asep_generator((0, 3), q, 1 / q).dense()
        assert np.abs(dyn - asep).max() <= 1e-12

    def test_zero_rates(self):
        assert not build_asep_generator((0, 3), 0.0, 0.0).dense().any()

    def test_birth_death_chain(self):
        Q = build_asep_generator((0, 2), 0.7, 0.2)
        idx = [Q.index[OccupationConfig.from_sites((0, 2), [s])] for s in range(3)]
        M = Q.dense()[np.ix_(idx, idx)]
        want = np.array([[-0.7, 0.7, 0.0], [0.2, -0.9, 0.7], [0.0, 0.2, -0.2]])
        assert np.abs(M - want).max() <= 1e-15

    def test_state_order_is_binary_little_endian(self):
        states = occupation_states((0, 2))
        assert [s.occupancy for s in states[:4]] == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0)]

    def test_guard(self):
        with pytest.raises(WindowTooLarge):
            occupation_states((0, 14))

    def test_json_round_trip(self):
        Q = build_dynamic_generator(ModelParams(1.4, 0.1, (0, 2)))
        R = RateMatrix.from_json(Q.to_json(), Q.states)
        assert np.array_equal(Q.dense(), R.dense())

    @pytest.mark.parametrize("rho", [0.0, 0.4, -2.2])
    @pytest.mark.parametrize("q", [1.3, 0.6])
    def test_reflection_symmetry(self, q, rho):
        assert reflect_generator_residual(ModelParams(q, rho, (-2, 1))) <= 1e-12


class TestRainbow:
    def test_one_particle_is_asep(self):
        rb = build_rainbow_generator((0, 4), 1, 1.7, "+")
        asep = build_asep_generator((0, 4), 1.0, 1.7)
        proj = [asep.index[colorblind_project(s, (0, 4))] for s in rb.states]
        assert np.abs(rb.dense() - asep.dense()[np.ix_(proj, proj)]).max() == 0.0

    def test_identity_swap_rate(self):
        rb = build_rainbow_generator((0, 2), 2, 3.0, "+")
        a = RainbowState((1, 0), (1, 2))
        b = RainbowState((1, 0), (2, 1))
        assert inversions(b.permutation) == inversions(a.permutation) + 1
        assert rb.dense()[rb.index[a], rb.index[b]] == 1.0
        assert rb.dense()[rb.index[b], rb.index[a]] == 3.0
        minus = build_rainbow_generator((0, 2), 2, 3.0, "-")
        assert minus.dense()[minus.index[a], minus.index[b]] == 3.0

    def test_non_adjacent_no_swap(self):
        rb = build_rainbow_generator((0, 3), 2, 2.0, "+")
        a = RainbowState((3, 0), (1, 2))
        b = RainbowState((3, 0), (2, 1))
        assert rb.dense()[rb.index[a], rb.index[b]] == 0.0

    @pytest.mark.parametrize("sign", ["+", "-"])
    def test_lumpability(self, sign):
        assert lumping_residual((0, 5), 3, 1.6, sign) <= 1e-12

    def test_colorblind(self):
        c = colorblind_project(RainbowState((3, 1), (2, 1)), (0, 4))
        assert c.particles() == [1, 3]
        empty = colorblind_project(RainbowState((), ()), (0, 4))
        assert empty.count == 0

    def test_state_order(self):
        states = rainbow_states((0, 2), 2)
        keys = [(s.positions, s.permutation) for s in states]
        assert keys == sorted(keys) and len(states) == 6

    def test_guard(self):
        with pytest.raises(WindowTooLarge):
            rainbow_states((0, 20), 5)

    def test_bad_state(self):
        with pytest.raises(InvalidParams):
            RainbowState((1, 2), (1, 2))

    @given(st.lists(st.integers(-20, 20), min_size=1, max_size=5, unique=True))
    def test_from_species_positions(self, z):
        s = RainbowState.from_species_positions(z)
        assert [s.species_position(j + 1) for j in range(len(z))] == z
        # iota is injective: occupation map determines the state
        assert RainbowState.from_species_positions(
            [dict((v, k) for k, v in s.occupation().items())[j + 1] for j in range(len(z))]) == s


class TestInversions:
    def test_examples(self):
        assert inversions((1, 2, 3, 4)) == 0
        assert inversions((3, 2, 1)) == 3

    @pytest.mark.parametrize("N", [1, 2, 3, 4])
    def test_coset_additivity(self, N):
        # tau = a o omega with omega in S_K acting on the last K slots and
        # a the minimal representative (increasing there)
        for K in range(N + 1):
            for tau in itertools.permutations(range(1, N + 1)):
                head, tail = tau[:N - K], tau[N - K:]
                a = head + tuple(sorted(tail))
                omega = tuple(sorted(tail).index(v) + 1 for v in tail)
                assert inversions(tau) == inversions(a) + inversions(omega)

    @settings(max_examples=50)
    @given(st.permutations(list(range(1, 7))))
    def test_matches_pair_count(self, p):
        assert inversions(p) == sum(1 for i, j in itertools.combinations(range(6), 2)
                                    if p[i] > p[j])
