import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qasep.ctmc import (PRNG_NAME, Distribution, EnsembleStats, HeightModel,
                        empirical_distribution, ensemble_height_stats, expectation_evolve,
                        gillespie_run, light_cone_half_width, master_equation_solve,
                        sample_final_states, simulate_height, total_variation)
from qasep.errors import DimensionMismatch, InvalidParams
from qasep.lattice import (ModelParams, OccupationConfig, RainbowState, RateMatrix,
                           asep_transitions, build_asep_generator, build_dynamic_generator,
                           build_rainbow_generator, dynamic_transitions, height_plus,
                           rainbow_transitions)


def two_state(a, b):
    return RateMatrix.from_transitions([0, 1], lambda s: [(1, a)] if s == 0 else [(0, b)])


class TestMasterEquation:
    def test_time_zero(self):
        Q = two_state(1.0, 2.0)
        p0 = Distribution(np.array([0.3, 0.7]))
        assert master_equation_solve(Q, p0, 0.0) is p0

    @pytest.mark.parametrize("a,b,t", [(1.0, 2.0, 0.3), (0.2, 5.0, 1.7), (3.0, 3.0, 4.0)])
    def test_two_state_closed_form(self, a, b, t):
        p = master_equation_solve(two_state(a, b), Distribution.point_mass(2, 0), t).probabilities
        stay = b / (a + b) + a / (a + b) * math.exp(-(a + b) * t)
        assert p[0] == pytest.approx(stay, abs=1e-12)
        assert p[1] == pytest.approx(1 - stay, abs=1e-12)

    def test_mass_and_positivity(self):
        Q = build_dynamic_generator(ModelParams(1.4, 0.3, (-2, 2)))
        start = Q.index[OccupationConfig.step((-2, 2))]
        p = master_equation_solve(Q, Distribution.point_mass(Q.dimension, start), 2.0).probabilities
        assert abs(p.sum() - 1) <= 1e-10 and p.min() >= 0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            master_equation_solve(two_state(1, 1), Distribution.point_mass(3, 0), 1.0)

    def test_distribution_checks(self):
        with pytest.raises(InvalidParams):
            Distribution(np.array([0.5, 0.6]))
        d = Distribution(np.array([1.0 + 5e-13, -5e-13]))
        assert d.probabilities[1] == 0.0

    def test_expectations_are_adjoint(self):
        Q = build_asep_generator((0, 3), 1.3, 0.4)
        rng = np.random.default_rng(3)
        p0 = Distribution(rng.dirichlet(np.ones(Q.dimension)))
        f = rng.normal(size=Q.dimension)
        lhs = master_equation_solve(Q, p0, 0.8).expectation(f)
        rhs = float(np.dot(p0.probabilities, expectation_evolve(Q, f, 0.8)))
        assert lhs == pytest.approx(rhs, abs=1e-12)


def legal_move(a: OccupationConfig, b: OccupationConfig) -> bool:
    diff = [s for s in a.sites() if a[s] != b[s]]
    return len(diff) == 2 and diff[1] == diff[0] + 1 and a.count == b.count


class TestGillespie:
    def test_frozen(self):
        traj = gillespie_run(lambda s: [], "x", 5.0, seed=1)
        assert traj.states == ("x",) and traj.final == "x"

    def test_deterministic(self):
        trans = dynamic_transitions(ModelParams(1.2, 0.0, (-2, 2)))
        a = gillespie_run(trans, OccupationConfig.step((-2, 2)), 3.0, seed=9)
        b = gillespie_run(trans, OccupationConfig.step((-2, 2)), 3.0, seed=9)
        assert a == b

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32), st.floats(0.5, 3.0), st.floats(-2, 2))
    def test_trajectory_invariants(self, seed, q, rho):
        trans = dynamic_transitions(ModelParams(q, rho, (-3, 2)))
        traj = gillespie_run(trans, OccupationConfig.step((-3, 2)), 2.0, seed)
        assert all(traj.times[i] < traj.times[i + 1] for i in range(len(traj.times) - 1))
        assert all(legal_move(traj.states[i], traj.states[i + 1])
                   for i in range(len(traj.states) - 1))

    def test_state_at(self):
        traj = gillespie_run(asep_transitions((0, 2), 1.0, 1.0),
                             OccupationConfig.from_sites((0, 2), [0]), 4.0, seed=2)
        assert traj.state_at(0.0) == traj.states[0]
        assert traj.state_at(4.0) == traj.final

    def test_pure_python_matches_oracle(self):
        window = (-1, 1)
        params = ModelParams(1.5, 0.2, window)
        Q = build_dynamic_generator(params)
        start = OccupationConfig.from_sites(window, [-1])
        trans = dynamic_transitions(params)
        n = 20000
        finals = np.array([Q.index[gillespie_run(trans, start, 1.0, s).final] for s in range(n)])
        p = master_equation_solve(Q, Distribution.point_mass(Q.dimension, Q.index[start]), 1.0)
        assert total_variation(empirical_distribution(finals, Q.dimension), p.probabilities) <= 0.03


@pytest.mark.parametrize("name", ["dynamic", "asep", "rainbow"])
def test_sampler_total_variation(name):
    window = (0, 2)
    if name == "dynamic":
        Q = build_dynamic_generator(ModelParams(1.3, 0.4, window))
        start = Q.index[OccupationConfig.from_sites(window, [0, 1])]
    elif name == "asep":
        Q = build_asep_generator(window, 1 / 1.3, 1.3)
        start = Q.index[OccupationConfig.from_sites(window, [0])]
    else:
        Q = build_rainbow_generator(window, 2, 1.7, "+")
        start = Q.index[RainbowState((1, 0), (1, 2))]
    idx = sample_final_states(Q, start, 1.0, 100000, seed=11)
    p = master_equation_solve(Q, Distribution.point_mass(Q.dimension, start), 1.0).probabilities
    assert total_variation(empirical_distribution(idx, Q.dimension), p) <= 0.02


def test_sampler_seed_contract():
    Q = build_asep_generator((0, 3), 1.0, 0.5)
    a = sample_final_states(Q, 1, 2.0, 50, seed=100)
    b = sample_final_states(Q, 1, 2.0, 50, seed=100)
    c = sample_final_states(Q, 1, 2.0, 50, seed=101)
    assert np.array_equal(a, b)
    # run k of seed s equals run k - 1 of seed s + 1
    assert np.array_equal(a[1:], c[:-1])


class TestHeightSimulation:
    def test_light_cone(self):
        assert light_cone_half_width(1.1, 100.0) == math.ceil(2.1 * 100 + 100)
        assert light_cone_half_width(1.0, 0.0) == 4

    def test_time_zero(self):
        stats = ensemble_height_stats(HeightModel(1.1, 0.0), 0.0, samples=10)
        assert np.all(stats.values == 0.0) and stats.variance == 0.0

    def test_time_zero_offset(self):
        stats = ensemble_height_stats(HeightModel(1.1, 0.75), 0.0, samples=3)
        assert np.all(stats.values == 0.75)

    def test_single_sample(self):
        stats = ensemble_height_stats(HeightModel(1.1, 0.0), 5.0, samples=1, base_seed=4)
        assert stats.mean == stats.values[0]

    def test_deterministic(self):
        m = HeightModel(0.9, 0.0)
        assert simulate_height(m, 20.0, 0, seed=5) == simulate_height(m, 20.0, 0, seed=5)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_height_parity(self, seed):
        # h_0 changes by +-2 per jump across bond (-1, 0)
        v, _ = simulate_height(HeightModel(1.1, 0.0), 10.0, 0, seed)
        assert v % 2 == 0

    def test_boundary_touch_is_reported(self):
        stats = ensemble_height_stats(HeightModel(1.0, 0.0), 1.0, samples=40, half_width=3)
        assert 0 < stats.metadata["boundary_touches"] < 40
        assert stats.sample_count == 40 - stats.metadata["boundary_touches"]
        with pytest.raises(InvalidParams):
            ensemble_height_stats(HeightModel(1.0, 0.0), 50.0, samples=5, half_width=2)

    @pytest.mark.parametrize("kind,rho", [("dynamic", 0.0), ("dynamic", 1.5), ("asep", 0.0),
                                          ("dynamic", math.inf)])
    def test_mean_matches_oracle(self, kind, rho):
        q, t, L = 1.3, 0.4, 5
        model = HeightModel(q, rho, kind)
        n = 4000
        stats = ensemble_height_stats(model, t, 0, n, base_seed=0, half_width=L)
        # oracle on the same closed window; boundary touches are rare at this t
        window = (-L, L)
        if kind == "asep":
            Q = build_asep_generator(window, 1 / q, q)
        else:
            Q = build_dynamic_generator(ModelParams(q, rho, window))
        start = Q.index[OccupationConfig.step(window)]
        p = master_equation_solve(Q, Distribution.point_mass(Q.dimension, start), t)
        off = model.height_offset
        h = np.array([off + height_plus(s, 0.0, 0) for s in Q.states])
        mean = p.expectation(h)
        se = stats.values.std() / math.sqrt(stats.sample_count)
        assert stats.metadata["boundary_touches"] <= 5
        assert abs(stats.mean - mean) <= 3 * se + 1e-12

    def test_metadata_and_csv(self):
        stats = ensemble_height_stats(HeightModel(1.1, 0.0), 3.0, samples=7, base_seed=2)
        assert stats.metadata["prng"] == PRNG_NAME == "Philox"
        lines = stats.to_csv().strip().splitlines()
        assert lines[0] == "sample_index,value" and len(lines) == 8
        assert sum(stats.counts) == 7
        assert stats.mean == pytest.approx(math.fsum(stats.values) / 7, abs=1e-12)

    def test_histogram_bins(self):
        s = EnsembleStats.from_samples([0.0, 2.0, 2.0, 6.0], bin_width=2.0)
        assert list(s.counts) == [1, 2, 0, 1]
        assert s.variance == pytest.approx(np.var([0, 2, 2, 6]), abs=1e-12)

    def test_threads_do_not_change_output(self):
        m = HeightModel(1.1, 0.0)
        a = ensemble_height_stats(m, 15.0, samples=12, base_seed=3)
        b = ensemble_height_stats(m, 15.0, samples=12, base_seed=3, workers=4)
        assert np.array_equal(a.values, b.values)

    def test_bad_samples(self):
        with pytest.raises(InvalidParams):
            ensemble_height_stats(HeightModel(1.1), 1.0, samples=0)
