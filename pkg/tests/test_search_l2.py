import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from concmeasure import search_l2 as s2
from concmeasure.data import Dataset, ceil_count, gen_uniform_cube
from concmeasure.errors import InsufficientPointsError, ParameterError
from concmeasure.metric_index import build
from concmeasure.oracle import brute_force_balls
from concmeasure.regions import BallUnionRegion, bu_advrisk, bu_risk


def cfg(alpha=0.1, eps=0.05, T=1, **kw):
    return s2.L2Config(alpha, eps, T, **kw)


class TestKBounds:
    def test_formula(self):
        state = s2.GreedyState(100)
        assert s2.k_bounds(state, cfg(alpha=0.1, T=5), 100) == (2, 10)

    def test_last_step_forced(self):
        state = s2.GreedyState(100)
        state.covered_init[:7] = True
        state.t = 5
        assert s2.k_bounds(state, cfg(alpha=0.1, T=5), 100) == (3, 3)

    def test_target_met(self):
        state = s2.GreedyState(100)
        state.covered_init[:12] = True
        state.t = 2
        assert s2.k_bounds(state, cfg(alpha=0.1, T=3), 100) == (1, 1)

    def test_step_out_of_range(self):
        state = s2.GreedyState(10)
        state.t = 3
        with pytest.raises(ParameterError):
            s2.k_bounds(state, cfg(T=2), 10)


class TestCandidateScore:
    DS = Dataset([0.0, 1.0, 10.0])

    def score(self, eps, k=2):
        tree = build(self.DS, "l2")
        return s2.candidate_score(0, k, s2.GreedyState(3), self.DS, tree, cfg(eps=eps))

    def test_small_eps(self):
        overhead, r, s_init, s_exp = self.score(0.5)
        assert (r, s_init, s_exp, overhead) == (1.0, {0, 1}, {0, 1}, 0)

    def test_large_eps(self):
        overhead, r, s_init, s_exp = self.score(9.0)
        assert (s_exp, overhead) == ({0, 1, 2}, 1)

    def test_zero_eps_empty_state(self):
        assert self.score(0.0)[0] == 0

    def test_skipped_when_k_exceeds_uncovered(self):
        tree = build(self.DS, "l2")
        state = s2.GreedyState(3)
        state.covered_init[:2] = True
        assert s2.candidate_score(0, 2, state, self.DS, tree, cfg()) is None

    def test_vectorised_scores_match_tree_path(self):
        rng = np.random.default_rng(0)
        pts = rng.integers(0, 5, (40, 2)).astype(float)
        ds = Dataset(pts)
        tree = build(ds, "l2")
        state = s2.GreedyState(40)
        state.covered_init[rng.choice(40, 6, replace=False)] = True
        state.covered_exp |= state.covered_init
        state.covered_exp[rng.choice(40, 4, replace=False)] = True
        c = cfg(eps=1.0)
        centers = np.arange(40)
        over, n_exp, radii = s2._score_block(pts, centers, 2, 6, ~state.covered_init, ~state.covered_exp, 1.0)
        for u in range(40):
            for j, k in enumerate(range(2, 7)):
                o, r, _, s_exp = s2.candidate_score(u, k, state, ds, tree, c)
                assert (over[u, j], n_exp[u, j], radii[u, j]) == (o, len(s_exp), r)


class TestGreedy:
    def test_two_cluster_example(self):
        ds = Dataset([0.0, 0.01, 0.02, 5.0, 5.01])
        state = s2.greedy(ds, cfg(alpha=0.4, eps=0.1, T=1))
        ball = state.chosen_balls[0]
        covered = np.flatnonzero(state.covered_init)
        assert len(covered) >= 2
        assert set(covered) <= {0, 1, 2} or set(covered) <= {3, 4}
        assert state.n_exp - state.n_init <= 1
        assert ball.radius < 1

    def test_single_step_is_exhaustive(self):
        for seed in range(5):
            ds = gen_uniform_cube(2, 60, seed)
            est = s2.run(ds, ds, cfg(alpha=0.1, eps=0.05, T=1))
            opt = brute_force_balls(ds, 0.1, 0.05, 1)
            assert est.advrisk_train == opt.optimal_advrisk

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 3), st.booleans())
    def test_matches_reference_greedy(self, seed, T, lattice):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(8, 30))
        n = int(rng.integers(1, 3))
        pts = rng.integers(0, 4, (m, n)).astype(float) if lattice else rng.uniform(0, 1, (m, n))
        alpha = float(rng.uniform(0.05, 0.6))
        eps = float(rng.choice([0.0, 0.1, 0.5, 1.0]))
        need = ceil_count(alpha, m)
        ref = oracles.greedy_balls(pts.tolist(), need, eps, T)
        if ref is None:
            with pytest.raises(InsufficientPointsError):
                s2.greedy(Dataset(pts), cfg(alpha, eps, T))
            return
        chosen, init, exp = ref
        state = s2.greedy(Dataset(pts), cfg(alpha, eps, T))
        assert [(row["center"], row["k"]) for row in state.trace] == [(u, k) for u, k, _ in chosen]
        assert set(np.flatnonzero(state.covered_init)) == init
        assert set(np.flatnonzero(state.covered_exp)) == exp

    def test_center_order_irrelevant(self):
        ds = gen_uniform_cube(2, 80, 3)
        a = s2.greedy_step(s2.GreedyState(80), ds, cfg(alpha=0.2, T=2))
        perm = np.random.default_rng(1).permutation(80)
        b = s2.greedy_step(s2.GreedyState(80), ds, cfg(alpha=0.2, T=2, block=7), centers=perm)
        assert a.trace == b.trace

    def test_threads_do_not_change_results(self):
        ds = gen_uniform_cube(2, 300, 4)
        c = cfg(alpha=0.05, T=3, block=32)
        a, b = s2.greedy(ds, c, threads=1), s2.greedy(ds, c, threads=4)
        assert a.trace == b.trace

    def test_insufficient_points(self):
        ds = Dataset([0.0, 1.0])
        state = s2.GreedyState(2)
        state.covered_init[:] = True
        with pytest.raises(InsufficientPointsError, match="insufficient uncovered points"):
            s2.greedy_step(state, ds, cfg(alpha=0.5, T=2))

    def test_center_sample_is_seeded(self):
        ds = gen_uniform_cube(2, 200, 5)
        a = s2.greedy(ds, cfg(T=2, center_sample=20, seed=1))
        b = s2.greedy(ds, cfg(T=2, center_sample=20, seed=1))
        assert a.trace == b.trace

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            cfg(alpha=1.0)
        with pytest.raises(ParameterError):
            cfg(eps=-0.1)
        with pytest.raises(ParameterError):
            cfg(T=0)


class TestRunInvariants:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 4), st.floats(0.02, 0.5), st.floats(0, 0.3))
    def test_bookkeeping_and_bounds(self, seed, T, alpha, eps):
        tr, te = gen_uniform_cube(2, 120, seed), gen_uniform_cube(2, 120, seed + 1)
        est = s2.run(tr, te, cfg(alpha, eps, T))
        region = est.region
        assert isinstance(region, BallUnionRegion) and region.T == T
        assert est.risk_train >= alpha
        assert (bu_risk(region, tr), bu_advrisk(region, tr)) == (est.risk_train, est.advrisk_train)
        assert est.advrisk_train >= est.risk_train and est.advrisk_test >= est.risk_test
        inits = [row["risk"] for row in est.details["trace"]]
        assert inits == sorted(inits)

    def test_covered_init_within_covered_exp(self):
        state = s2.greedy(gen_uniform_cube(3, 150, 7), cfg(alpha=0.3, eps=0.2, T=4))
        assert not (state.covered_init & ~state.covered_exp).any()

    def test_trace_csv(self, tmp_path):
        est = s2.run(gen_uniform_cube(1, 100, 0), gen_uniform_cube(1, 100, 1), cfg(T=3))
        path = tmp_path / "trace.csv"
        s2.write_trace(est.details["trace"], path)
        rows = list(csv.DictReader(open(path)))
        assert list(rows[0]) == s2.TRACE_COLUMNS
        assert [int(r["t"]) for r in rows] == [1, 2, 3]

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            s2.run(gen_uniform_cube(2, 20, 0), gen_uniform_cube(1, 20, 0), cfg())
