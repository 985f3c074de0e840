import math
import types

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amcflow import (
    AbsorbingDecomposition,
    ConfigurationError,
    ContextTransitionMatrix,
    FundamentalMatrix,
    InvariantViolation,
    VisitationMatrix,
    decompose,
    fundamental,
    info_loss,
    info_scores,
    mc_visitation_oracle,
    profile_from_visitation,
    visitation,
)

from conftest import random_transition

P3 = np.array([[0.2, 0.5, 0.3], [0.0, 0.4, 0.6], [0.0, 0.0, 1.0]])
N3 = np.array([[1.0, 0.5, 0.6], [0.0, 1.0, 0.6], [0.0, 0.0, 1.0]])


class TestDecompose:
    def test_three_token_fixture(self):
        d = decompose(P3)
        np.testing.assert_allclose(
            d.q, [[0.0, 0.5, 0.3], [0.0, 0.0, 0.6], [0.0, 0.0, 0.0]]
        )
        np.testing.assert_allclose(d.r, [0.2, 0.4, 1.0])

    def test_single_token_all_mass_absorbs(self):
        d = decompose(np.array([[1.0]]))
        assert d.q == np.array([[0.0]])
        assert d.r == np.array([1.0])

    def test_zero_diagonal_is_clamped(self):
        delta = 1e-4
        p = np.array([[0.0, 0.7, 0.3], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
        d = decompose(p, delta_abs=delta)
        assert d.r[0] == delta
        np.testing.assert_allclose(d.q[0], [0.0, 0.7 * (1 - delta), 0.3 * (1 - delta)])
        np.testing.assert_allclose(d.q.sum(axis=1) + d.r, 1.0, atol=1e-12)

    def test_rejects_non_square(self):
        with pytest.raises(InvariantViolation):
            decompose(np.array([[0.5, 0.5]]))

    def test_rejects_non_stochastic_naming_row(self):
        p = P3.copy()
        p[1, 2] = 0.7
        with pytest.raises(InvariantViolation, match="row 1"):
            decompose(p)

    def test_rejects_mass_below_diagonal(self):
        p = P3.copy()
        p[2, 0] = 0.1
        p[2, 2] = 0.9
        with pytest.raises(InvariantViolation, match="row 2"):
            decompose(p)

    @pytest.mark.parametrize("delta", [0.0, -1e-6, 2e-3, 1.5])
    def test_rejects_bad_delta(self, delta):
        with pytest.raises(ConfigurationError):
            decompose(P3, delta_abs=delta)


class TestFundamental:
    def test_three_token_fixture(self):
        n_mat = fundamental(decompose(P3))
        np.testing.assert_allclose(n_mat.n_mat, N3, atol=1e-12)

    def test_zero_transient_block_gives_identity(self):
        d = AbsorbingDecomposition(q=np.zeros((4, 4)), r=np.ones(4), delta_abs=1e-6)
        np.testing.assert_array_equal(fundamental(d).n_mat, np.eye(4))

    def test_two_state_single_jump(self):
        d = AbsorbingDecomposition(
            q=np.array([[0.0, 0.9], [0.0, 0.0]]),
            r=np.array([0.1, 1.0]),
            delta_abs=1e-6,
        )
        np.testing.assert_allclose(fundamental(d).n_mat, [[1.0, 0.9], [0.0, 1.0]])

    @settings(deadline=None, max_examples=60)
    @given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_inverse_identity(self, n, seed):
        rng = np.random.default_rng(seed)
        d = decompose(random_transition(rng, n))
        n_mat = fundamental(d).n_mat
        ident = np.eye(n)
        np.testing.assert_allclose((ident - d.q) @ n_mat, ident, atol=1e-8)

    @settings(deadline=None, max_examples=30)
    @given(n=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
    def test_matches_nilpotent_power_series(self, n, seed):
        # independent route: Q is nilpotent so N = sum of the first n powers
        rng = np.random.default_rng(seed)
        d = decompose(random_transition(rng, n))
        series = np.eye(n)
        power = np.eye(n)
        for _ in range(n):
            power = power @ d.q
            series += power
        np.testing.assert_allclose(fundamental(d).n_mat, series, atol=1e-10)


class TestVisitation:
    def test_unit_diagonal_passes_through(self):
        v = visitation(fundamental(decompose(P3)))
        np.testing.assert_allclose(v.v, N3, atol=1e-12)

    def test_identity(self):
        v = visitation(FundamentalMatrix(np.eye(3)))
        np.testing.assert_array_equal(v.v, np.eye(3))

    @settings(deadline=None, max_examples=40)
    @given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_probability_bounds(self, n, seed):
        rng = np.random.default_rng(seed)
        v = visitation(fundamental(decompose(random_transition(rng, n)))).v
        assert np.all(v >= 0.0) and np.all(v <= 1.0 + 1e-9)
        assert np.all(np.diag(v) == 1.0)

    def test_zero_diagonal_rejected(self):
        broken = types.SimpleNamespace(n_mat=np.array([[1.0, 0.5], [0.0, 0.0]]), n=2)
        with pytest.raises(InvariantViolation, match="zero diagonal"):
            visitation(broken)


class TestInfoScores:
    def test_fixture_values(self):
        v = visitation(fundamental(decompose(P3)))
        s = info_scores(v)
        np.testing.assert_allclose(s, [0.0, 0.6931, 0.5108], atol=1e-4)

    def test_certain_token_scores_zero(self):
        v = VisitationMatrix(np.array([[1.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(info_scores(v), [0.0, 0.0])

    def test_unreachable_token_scores_cap(self):
        v = VisitationMatrix(np.array([[1.0, 0.0], [0.0, 1.0]]))
        cap = 12.5
        np.testing.assert_array_equal(info_scores(v, cap), [0.0, cap])

    def test_first_token_exactly_zero(self):
        rng = np.random.default_rng(3)
        v = visitation(fundamental(decompose(random_transition(rng, 6))))
        assert info_scores(v)[0] == 0.0

    @settings(deadline=None, max_examples=60)
    @given(
        reach_lo=st.floats(0.0, 1.0),
        reach_hi=st.floats(0.0, 1.0),
    )
    def test_monotone_in_visitation(self, reach_lo, reach_hi):
        lo, hi = sorted([reach_lo, reach_hi])
        v_lo = VisitationMatrix(np.array([[1.0, lo], [0.0, 1.0]]))
        v_hi = VisitationMatrix(np.array([[1.0, hi], [0.0, 1.0]]))
        assert info_scores(v_hi)[1] <= info_scores(v_lo)[1]

    def test_rejects_bad_cap(self):
        v = VisitationMatrix(np.eye(2))
        with pytest.raises(ConfigurationError):
            info_scores(v, score_cap=0.0)


class TestInfoLoss:
    def test_fixture_values(self):
        v = visitation(fundamental(decompose(P3)))
        s = info_scores(v)
        np.testing.assert_allclose(info_loss(s, v), [0.0, 0.2772, 0.0], atol=1e-4)

    def test_zero_score_gives_zero_loss(self):
        v = VisitationMatrix(np.array([[1.0, 0.2], [0.0, 1.0]]))
        assert info_loss(np.array([0.0, 0.0]), v)[0] == 0.0

    def test_full_transmission_gives_zero_loss(self):
        v = VisitationMatrix(np.array([[1.0, 1.0], [0.0, 1.0]]))
        np.testing.assert_array_equal(info_loss(np.array([0.0, 3.0]), v), [0.0, 0.0])

    def test_length_mismatch(self):
        v = VisitationMatrix(np.eye(3))
        with pytest.raises(InvariantViolation):
            info_loss(np.array([0.0, 1.0]), v)


class TestProfile:
    def test_single_token_context(self):
        profile = profile_from_visitation(visitation(fundamental(decompose([[1.0]]))))
        np.testing.assert_array_equal(profile.scores, [0.0])
        np.testing.assert_array_equal(profile.losses, [0.0])

    @settings(deadline=None, max_examples=40)
    @given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
    def test_invariants_hold_on_random_chains(self, n, seed):
        rng = np.random.default_rng(seed)
        v = visitation(fundamental(decompose(random_transition(rng, n))))
        profile = profile_from_visitation(v)
        assert profile.scores[0] == 0.0
        assert profile.losses[-1] == 0.0
        assert np.all(profile.scores >= 0.0)
        assert np.all(profile.scores <= profile.score_cap)
        assert np.all(profile.losses >= 0.0)
        assert np.all(profile.losses <= profile.scores)

    @settings(deadline=None, max_examples=40)
    @given(
        n=st.integers(3, 10),
        seed=st.integers(0, 2**32 - 1),
        row=st.integers(0, 7),
        c=st.floats(0.05, 0.95),
    )
    def test_growing_escape_mass_never_lowers_later_scores(self, n, seed, row, c):
        # scaling a row's forward jumps by c < 1 and absorbing the freed
        # mass can only make later tokens harder to reach
        rng = np.random.default_rng(seed)
        d = decompose(random_transition(rng, n))
        i = row % (n - 1)
        q2 = d.q.copy()
        q2[i] *= c
        r2 = d.r.copy()
        r2[i] = r2[i] + (1.0 - c) * d.q[i].sum()
        d2 = AbsorbingDecomposition(q=q2, r=r2, delta_abs=d.delta_abs)
        s1 = info_scores(visitation(fundamental(d)))
        s2 = info_scores(visitation(fundamental(d2)))
        assert np.all(s2[i + 1 :] >= s1[i + 1 :] - 1e-10)


def _naive_walk_estimate(d, walks, seed):
    """Reference per-walk simulation, deliberately plain."""
    rng = np.random.default_rng(seed)
    n = d.n
    v = np.zeros((n, n))
    targets = list(range(n + 1))  # state n is absorption
    for start in range(n):
        for _ in range(walks):
            state = start
            v[start, state] += 1.0
            while True:
                pvals = np.append(d.q[state, :], d.r[state])
                pvals[: state + 1] = 0.0
                pvals = pvals / pvals.sum()
                state = rng.choice(targets, p=pvals)
                if state == n:
                    break
                v[start, state] += 1.0
    v /= walks
    np.fill_diagonal(v, 1.0)
    return v


class TestMonteCarloOracle:
    def test_three_token_fixture_close_to_hand_value(self):
        est = mc_visitation_oracle(decompose(P3), walks=200_000, seed=11)
        assert abs(est.v[0, 2] - 0.6) < 0.01

    def test_immediate_absorption_is_exact(self):
        d = AbsorbingDecomposition(q=np.zeros((5, 5)), r=np.ones(5), delta_abs=1e-6)
        est = mc_visitation_oracle(d, walks=1000, seed=0)
        np.testing.assert_array_equal(est.v, np.eye(5))

    def test_same_seed_same_estimates(self):
        d = decompose(random_transition(np.random.default_rng(5), 7))
        a = mc_visitation_oracle(d, walks=5000, seed=42)
        b = mc_visitation_oracle(d, walks=5000, seed=42)
        np.testing.assert_array_equal(a.v, b.v)

    def test_rejects_zero_walks(self):
        with pytest.raises(ConfigurationError):
            mc_visitation_oracle(decompose(P3), walks=0, seed=0)

    def test_agrees_with_naive_per_walk_simulation(self):
        d = decompose(random_transition(np.random.default_rng(9), 4))
        grouped = mc_visitation_oracle(d, walks=20_000, seed=1).v
        naive = _naive_walk_estimate(d, walks=4_000, seed=2)
        np.testing.assert_allclose(grouped, naive, atol=0.03)

    def test_matches_analytic_visitation_on_random_chains(self):
        rng = np.random.default_rng(123)
        for _ in range(20):
            n = int(rng.integers(2, 13))
            d = decompose(random_transition(rng, n))
            v = visitation(fundamental(d)).v
            est = mc_visitation_oracle(d, walks=200_000, seed=int(rng.integers(2**31)))
            np.testing.assert_allclose(est.v, v, atol=0.01)


class TestTypeValidation:
    def test_transition_entries_outside_unit_interval(self):
        with pytest.raises(InvariantViolation, match="row 0"):
            ContextTransitionMatrix(np.array([[1.2, -0.2], [0.0, 1.0]]))

    def test_decomposition_requires_min_absorbing_mass(self):
        with pytest.raises(InvariantViolation, match="delta_abs"):
            AbsorbingDecomposition(
                q=np.array([[0.0, 1.0], [0.0, 0.0]]),
                r=np.array([0.0, 1.0]),
                delta_abs=1e-6,
            )

    def test_fundamental_requires_unit_diagonal(self):
        with pytest.raises(InvariantViolation):
            FundamentalMatrix(np.array([[1.0, 0.3], [0.0, 2.0]]))

    def test_visitation_stores_readonly_array(self):
        v = VisitationMatrix(np.eye(2))
        with pytest.raises(ValueError):
            v.v[0, 1] = 0.5

    def test_profile_rejects_loss_above_score(self):
        from amcflow import InfoProfile

        with pytest.raises(InvariantViolation):
            InfoProfile(
                scores=np.array([0.0, 1.0]),
                losses=np.array([0.0, 0.0]),
                score_cap=-1.0,
            )
        with pytest.raises(InvariantViolation):
            InfoProfile(
                scores=np.array([0.0, 1.0, 2.0]),
                losses=np.array([0.0, 1.5, 0.0]),
                score_cap=30.0,
            )

    def test_score_equal_to_cap_is_valid(self):
        from amcflow import InfoProfile

        profile = InfoProfile(
            scores=np.array([0.0, 30.0]),
            losses=np.array([0.0, 0.0]),
            score_cap=30.0,
        )
        assert profile.n == 2

    def test_loss_between_zero_and_score_is_valid(self):
        v = visitation(fundamental(decompose(P3)))
        s = info_scores(v)
        losses = info_loss(s, v)
        assert math.isclose(losses[1], s[1] * (1 - v.v[1, 2]))
