import math

import numpy as np
import pytest

from advpol.game import make_env
from advpol.imitator import Discriminator
from advpol.oracle import (
    BoundReport,
    advantage_matrix,
    advantage_mean_residual,
    adv_state_action_kernel,
    best_response_value,
    competitive_advantage,
    drift_bound_check,
    eta_table,
    exact_entropy_gradient,
    exact_objective,
    exact_policy_gradient,
    gail_objective_parts,
    imitation_gap_constant,
    joint_kernel,
    marginal_adv_matrix,
    occupancy,
    occupancy_exact,
    occupancy_route_objective,
    pinsker_coeff,
    policy_matrix,
    retrain_radius_probe,
    solve_state_values,
    state_action_objective,
    value_function,
    victim_return,
)
from advpol.policy import MlpPolicy, entropy, mix_policies

from .oracles import (
    fd_agrees,
    fd_gradient,
    forward_occupancy,
    joint_state_kernel,
    power_values,
    random_disc,
    random_game,
    random_policy,
)

ROCK = "rock"  # victim fixed on action 0 in the cyclic game


def _rock_probs(game):
    P = np.zeros((game.n_states, game.n_vic_actions))
    P[:, 0] = 1.0
    return P


def _paper_probs(game):
    P = np.zeros((game.n_states, game.n_adv_actions))
    P[:, 1] = 1.0
    return P


@pytest.fixture
def small(rng):
    return random_game(rng, n_live=3, n_adv=2, n_vic=2)


# =============================================================================
# values
# =============================================================================

class TestValueFunction:
    def test_deterministic_cycle_anchor(self, rps):
        # always-counter vs always-first-action: immediate win, value
        # gamma / (1 - gamma) = 9 at the live state.
        table = value_function(rps, _paper_probs(rps), _rock_probs(rps), side="adversary")
        assert table.values[rps.start_state] == pytest.approx(9.0, abs=1e-9)
        assert table.residual <= 1e-9

    def test_inclusive_adds_state_reward(self, rps):
        table = value_function(rps, _paper_probs(rps), _rock_probs(rps), side="adversary")
        assert np.allclose(table.inclusive, table.rewards + table.values, atol=0)

    def test_matches_power_iteration(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        table = value_function(small, A, B, side="victim")
        M = joint_state_kernel(small, A, B)
        V_ref = power_values(M, small.vic_reward, small.gamma)
        assert np.max(np.abs(table.values - V_ref)) < 1e-8

    def test_delta_side_is_difference(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        d = value_function(small, A, B, side="delta").values
        a = value_function(small, A, B, side="adversary").values
        v = value_function(small, A, B, side="victim").values
        assert np.allclose(d, a - v, atol=1e-9)

    def test_mixture_victim_return_averages(self, rps, rng):
        a = random_policy(rps, "adversary", rng)
        b = random_policy(rps, "adversary", rng)
        vic = random_policy(rps, "victim", rng)
        mix = mix_policies(a, b, 0.3)
        want = 0.3 * victim_return(rps, a, vic) + 0.7 * victim_return(rps, b, vic)
        assert victim_return(rps, mix, vic) == pytest.approx(want, abs=1e-12)

    def test_near_one_discount_refused(self):
        with pytest.raises(ArithmeticError, match="discount"):
            solve_state_values(np.eye(2), np.ones(2), 1.0)


# =============================================================================
# occupancies
# =============================================================================

class TestOccupancy:
    def test_truncated_mass_identity(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        T = 25
        d = occupancy(small, A, B, horizon=T)
        g = small.gamma
        assert d.sum() == pytest.approx((1 - g ** (T + 1)) / (1 - g), abs=1e-12)

    def test_exact_mass_and_sign(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        d = occupancy_exact(small, A, B)
        assert d.sum() == pytest.approx(1 / (1 - small.gamma), rel=1e-12)
        assert np.all(d >= -1e-15)

    def test_truncated_approaches_exact(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        d_t = occupancy(small, A, B)
        d_x = occupancy_exact(small, A, B)
        assert np.max(np.abs(d_t - d_x)) < 1e-7

    def test_matches_reference_recursion(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        M = joint_state_kernel(small, A, B)
        d_ref = forward_occupancy(M, small.start_state, small.gamma)
        assert np.max(np.abs(occupancy_exact(small, A, B) - d_ref)) < 1e-8

    def test_einsum_kernel_matches_loops(self, small, rng):
        A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        assert np.allclose(
            joint_kernel(small, A, B), joint_state_kernel(small, A, B), atol=1e-14
        )


# =============================================================================
# competitive advantage
# =============================================================================

class TestAdvantage:
    def test_zero_mean_under_kernel_every_state(self, rng):
        for _ in range(5):
            g = random_game(rng)
            A = random_policy(g, "adversary", rng)
            B = random_policy(g, "victim", rng)
            assert np.max(advantage_mean_residual(g, A, B)) <= 1e-9

    def test_matrix_matches_scalar(self, small, rng):
        A = random_policy(small, "adversary", rng)
        B = random_policy(small, "victim", rng)
        M = advantage_matrix(small, A, B)
        assert competitive_advantage(small, A, B, 0, 2) == pytest.approx(
            M[0, 2], abs=1e-12
        )

    def test_absorbing_rows_vanish(self, small, rng):
        A = random_policy(small, "adversary", rng)
        B = random_policy(small, "victim", rng)
        M = advantage_matrix(small, A, B)
        for s in np.flatnonzero(small.absorbing):
            assert abs(M[s, s]) < 1e-9


# =============================================================================
# bound reports
# =============================================================================

class TestBoundReport:
    def test_margin_and_verdict(self):
        rep = BoundReport.make("x", measured=1.0, bound=1.5, foo=3)
        assert rep.margin == 0.5 and rep.passed and not rep.degenerate
        assert rep.context == {"foo": 3}

    def test_tolerance_edge(self):
        assert BoundReport.make("x", 1.0 + 5e-10, 1.0).passed
        assert not BoundReport.make("x", 1.0 + 1e-8, 1.0).passed

    def test_json_keys(self):
        data = BoundReport.make("x", 0.0, 1.0).to_json()
        assert set(data) == {
            "check_name", "measured", "bound", "margin", "passed",
            "degenerate", "context",
        }


class TestDriftBound:
    def test_perturbation_pair_passes(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        a = random_policy(rps, "adversary", rng)
        b = a.copy()
        b.apply_step(rng.normal(0, 0.05, b.params.shape))
        rep = drift_bound_check(rps, vic, a, b)
        assert rep.passed
        assert rep.context["h_under"] == "adv_a"
        assert rep.context["max_kl"] >= 0.0
        assert rep.context["coeff"] == pinsker_coeff("verbatim")
        assert abs(rep.context["gamma_b"] - rep.context["gamma_a"]) == pytest.approx(
            rep.measured
        )

    def test_identical_pair_is_tight(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        a = random_policy(rps, "adversary", rng)
        rep = drift_bound_check(rps, vic, a, a)
        assert rep.measured == 0.0 and rep.bound == 0.0 and rep.passed

    def test_missing_support_goes_degenerate(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        a = np.full((4, 3), 1 / 3)
        b = np.zeros((4, 3))
        b[:, 0] = 1.0  # KL(a || b) = inf
        rep = drift_bound_check(rps, vic, a, b)
        assert rep.degenerate and math.isinf(rep.bound) and rep.passed

    def test_nats_mode_shrinks_coeff(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        a = random_policy(rps, "adversary", rng)
        b = a.copy()
        b.apply_step(rng.normal(0, 0.05, b.params.shape))
        loose = drift_bound_check(rps, vic, a, b, pinsker="verbatim")
        tight = drift_bound_check(rps, vic, a, b, pinsker="nats")
        assert tight.bound > loose.bound  # sqrt 2 > sqrt(2 ln 2)

    def test_random_games_hold_the_bound(self, rng):
        for _ in range(10):
            g = random_game(rng, live_rewards=False)
            vic = random_policy(g, "victim", rng)
            a = random_policy(g, "adversary", rng)
            b = a.copy()
            b.apply_step(rng.normal(0, 0.1, b.params.shape))
            assert drift_bound_check(g, vic, a, b).passed


class TestGapConstant:
    def test_frozen_anchor_loose_clamp(self):
        got = imitation_gap_constant(0.9, 1.0, 0.1, 0.9)
        want = 0.9 * math.sqrt(2 * math.log(2)) * (1.0 - math.log(0.1 * 0.1)) / 0.01
        assert got == pytest.approx(want, rel=1e-14)
        assert got == pytest.approx(593.9625199398579, rel=1e-12)

    def test_frozen_anchor_tight_clamp(self):
        got = imitation_gap_constant(0.9, 1.0, 0.01, 0.99)
        want = 0.9 * math.sqrt(2 * math.log(2)) * (1.0 - math.log(0.01 * 0.01)) / 0.01
        assert got == pytest.approx(want, rel=1e-14)
        assert got == pytest.approx(1081.9581378533235, rel=1e-12)

    def test_monotone_in_clamp_and_discount(self):
        base = imitation_gap_constant(0.9, 1.0, 0.1, 0.9)
        assert imitation_gap_constant(0.9, 1.0, 0.05, 0.9) > base  # lower D_L
        assert imitation_gap_constant(0.9, 1.0, 0.1, 0.95) > base  # higher D_U
        assert imitation_gap_constant(0.95, 1.0, 0.1, 0.9) > base  # higher gamma

    @pytest.mark.parametrize(
        "args",
        [
            (0.9, 1.0, 0.0, 0.9),   # D_L must be positive
            (0.9, 1.0, 0.1, 1.0),   # D_U must stay below one
            (0.9, 1.0, 0.9, 0.1),   # ordering
            (1.0, 1.0, 0.1, 0.9),   # discount
        ],
    )
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ValueError):
            imitation_gap_constant(*args)

    def test_pinsker_mode(self):
        v = imitation_gap_constant(0.9, 1.0, 0.1, 0.9, pinsker="verbatim")
        n = imitation_gap_constant(0.9, 1.0, 0.1, 0.9, pinsker="nats")
        assert n / v == pytest.approx(math.sqrt(2) / math.sqrt(2 * math.log(2)))


# =============================================================================
# best response and the retraining probe
# =============================================================================

class TestBestResponse:
    def test_counters_a_deterministic_victim(self, rps):
        delta = rps.adv_reward - rps.vic_reward
        val, probs = best_response_value(rps, _rock_probs(rps), delta)
        # winning pays delta = 2 every round: gamma * 2 / (1 - gamma)
        assert val == pytest.approx(18.0, abs=1e-9)
        assert probs[rps.start_state].argmax() == 1  # the countering action
        assert np.allclose(probs.sum(axis=1), 1.0)
        assert np.all((probs == 0) | (probs == 1))

    def test_dominates_random_adversaries(self, small, rng):
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        delta = small.adv_reward - small.vic_reward
        val, _ = best_response_value(small, B, delta)
        for _ in range(10):
            A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
            other = value_function(small, A, B, side="delta").values[small.start_state]
            assert val >= other - 1e-9

    def test_deterministic_output(self, small, rng):
        B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
        v1, p1 = best_response_value(small, B, small.adv_reward)
        v2, p2 = best_response_value(small, B, small.adv_reward)
        assert v1 == v2 and np.array_equal(p1, p2)


class TestRetrainProbe:
    def test_zero_radius_short_circuits(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        rep = retrain_radius_probe(rps, vic, 0.0, 3, rng)
        assert rep.passed
        assert rep.measured == 0.0
        assert rep.context["attempts"] == 0
        assert rep.bound == 0.0

    def test_small_ball_passes(self, rps, rng):
        vic = random_policy(rps, "victim", rng, scale=0.5)
        rep = retrain_radius_probe(rps, vic, 0.02, 5, rng)
        assert rep.passed
        assert rep.context["y_est"] <= rep.context["y_star"] + 1e-12

    def test_negative_radius_rejected(self, rps, rng):
        vic = random_policy(rps, "victim", rng)
        with pytest.raises(ValueError):
            retrain_radius_probe(rps, vic, -0.1, 1, rng)

    def test_hopeless_rejection_hits_the_cap(self, grid):
        # 225 live states: the max-state KL of a sqrt(eps) logit kick clears
        # a large eps essentially always, so sampling must stall and say so.
        vic = random_policy(grid, "victim", np.random.default_rng(1), scale=0.0)
        with pytest.raises(RuntimeError, match="rejection sampling stalled"):
            retrain_radius_probe(grid, vic, 0.5, 1, np.random.default_rng(1))


# =============================================================================
# saddle objective pieces
# =============================================================================

class TestObjectives:
    def test_eta_routes_agree(self, small, rng):
        A = random_policy(small, "adversary", rng)
        B = random_policy(small, "victim", rng)
        D = random_disc(small, rng)
        tab = eta_table(small, D)
        back = state_action_objective(small, A, B, tab)
        forward = occupancy_route_objective(small, A, B, tab)
        assert back == pytest.approx(forward, abs=1e-9)
        assert exact_objective(small, A, B, "eta", disc=D) == pytest.approx(
            back, abs=1e-12
        )

    def test_eta_needs_a_discriminator(self, small, rng):
        A = random_policy(small, "adversary", rng)
        B = random_policy(small, "victim", rng)
        with pytest.raises(ValueError, match="discriminator"):
            exact_objective(small, A, B, "eta")

    def test_mixture_objective_averages(self, rps, rng):
        a = random_policy(rps, "adversary", rng)
        b = random_policy(rps, "adversary", rng)
        vic = random_policy(rps, "victim", rng)
        mix = mix_policies(a, b, 0.25)
        want = 0.25 * exact_objective(rps, a, vic, "adv") + 0.75 * exact_objective(
            rps, b, vic, "adv"
        )
        assert exact_objective(rps, mix, vic, "adv") == pytest.approx(want, abs=1e-12)

    def test_enhanced_identity_random_configs(self, rng):
        for _ in range(10):
            g = random_game(rng)
            parts = gail_objective_parts(
                g,
                random_policy(g, "adversary", rng),
                random_policy(g, "victim", rng),
                random_policy(g, "victim", rng),
                random_disc(g, rng),
                entropy_coeff=0.01,
            )
            assert abs(parts["phi_enhanced"] - parts["eta_route_enhanced"]) <= 1e-9
            assert parts["phi"] == pytest.approx(
                parts["imit_logd"] + parts["expert_term"] - 0.01 * parts["entropy"],
                abs=1e-12,
            )

    def test_delta_equals_difference_random_configs(self, rng):
        for _ in range(10):
            g = random_game(rng)
            A = random_policy(g, "adversary", rng)
            B = random_policy(g, "victim", rng)
            lhs = exact_objective(g, A, B, "delta")
            rhs = exact_objective(g, A, B, "adv") - exact_objective(g, A, B, "vic")
            assert abs(lhs - rhs) <= 1e-9


# =============================================================================
# exact gradients vs finite differences
# =============================================================================

def _fd_on_params(policy, objective):
    def f(flat):
        probe = policy.copy()
        probe.params = flat
        return objective(probe)

    return fd_gradient(f, policy.params)


class TestExactGradients:
    @pytest.mark.parametrize("select", ["adv", "vic", "delta"])
    def test_adversary_gradient(self, small, rng, select):
        A = random_policy(small, "adversary", rng, scale=0.6)
        B = random_policy(small, "victim", rng, scale=0.6)
        grad = exact_policy_gradient(small, A, B, wrt="adversary", reward_select=select)
        fd = _fd_on_params(A, lambda p: exact_objective(small, p, B, select))
        assert fd_agrees(fd, grad)

    def test_adversary_gradient_on_shaped_reward(self, small, rng):
        A = random_policy(small, "adversary", rng, scale=0.6)
        B = random_policy(small, "victim", rng, scale=0.6)
        D = random_disc(small, rng)
        grad = exact_policy_gradient(
            small, A, B, wrt="adversary", reward_select="eta", disc=D
        )
        fd = _fd_on_params(A, lambda p: exact_objective(small, p, B, "eta", disc=D))
        assert fd_agrees(fd, grad)

    @pytest.mark.parametrize("select", ["adv", "eta"])
    def test_victim_slot_gradient(self, small, rng, select):
        A = random_policy(small, "adversary", rng, scale=0.6)
        B = random_policy(small, "victim", rng, scale=0.6)
        D = random_disc(small, rng) if select == "eta" else None
        grad = exact_policy_gradient(
            small, A, B, wrt="victim_slot", reward_select=select, disc=D
        )
        fd = _fd_on_params(
            B, lambda p: exact_objective(small, A, p, select, disc=D)
        )
        assert fd_agrees(fd, grad)

    def test_entropy_gradient(self, small, rng):
        A = random_policy(small, "adversary", rng, scale=0.6)
        B = random_policy(small, "victim", rng, scale=0.6)
        grad = exact_entropy_gradient(small, A, B)
        fd = _fd_on_params(
            B, lambda p: entropy(p, occupancy_exact(small, A, p), small)
        )
        assert fd_agrees(fd, grad)

    def test_nonlinear_policies_refused(self, small, rng):
        mlp = MlpPolicy(small.obs_layout, small.n_adv_actions, hidden=4, rng=rng)
        B = random_policy(small, "victim", rng)
        with pytest.raises(TypeError, match="tabular"):
            exact_policy_gradient(small, mlp, B, wrt="adversary", reward_select="adv")


# =============================================================================
# policy matrices
# =============================================================================

class TestPolicyMatrix:
    def test_per_episode_mixture_rejected(self, rps, rng):
        a = random_policy(rps, "adversary", rng)
        mix = mix_policies(a, a.copy(), 0.5)
        with pytest.raises(TypeError, match="per-episode mixture"):
            policy_matrix(rps, mix, "adversary")

    def test_per_step_mixture_marginalizes(self, rps, rng):
        a = random_policy(rps, "adversary", rng)
        b = random_policy(rps, "adversary", rng)
        mix = mix_policies(a, b, 0.4, per_step=True)
        X = rps.dense_obs()
        want = 0.4 * a.batch_dist(X) + 0.6 * b.batch_dist(X)
        assert np.allclose(policy_matrix(rps, mix, "adversary"), want, atol=1e-15)

    def test_layout_mismatch_names_the_fix(self, rps, rng):
        aug = random_policy(rps, "adversary", rng, augmented=True)
        with pytest.raises(ValueError, match="marginal"):
            policy_matrix(rps, aug, "adversary")

    def test_wrong_shape_rejected(self, rps):
        with pytest.raises(ValueError, match="shape"):
            policy_matrix(rps, np.ones((4, 5)) / 5, "adversary")

    def test_marginal_of_augmented_adversary(self, rps, rng):
        aug = random_policy(rps, "adversary", rng, augmented=True)
        imit = random_policy(rps, "victim", rng)
        got = marginal_adv_matrix(rps, aug, imit)
        X = rps.dense_obs()
        imP = imit.batch_dist(X)
        want = np.zeros_like(got)
        for s in range(rps.n_states):
            for j in range(rps.n_vic_actions):
                pred = np.zeros(rps.n_vic_actions)
                pred[j] = 1.0
                obs = np.concatenate([X[s], pred])
                want[s] += imP[s, j] * aug.action_dist(obs)
        assert np.allclose(got, want, atol=1e-14)
        assert np.allclose(got.sum(axis=1), 1.0, atol=1e-12)

    def test_plain_policy_not_marginal(self, rps, rng):
        plain = random_policy(rps, "adversary", rng)
        imit = random_policy(rps, "victim", rng)
        with pytest.raises(ValueError, match="pred block"):
            marginal_adv_matrix(rps, plain, imit)


def test_kernels_are_consistent(small, rng):
    A = random_policy(small, "adversary", rng).batch_dist(small.dense_obs())
    B = random_policy(small, "victim", rng).batch_dist(small.dense_obs())
    Ka = adv_state_action_kernel(small, B)
    M = joint_kernel(small, A, B)
    assert np.allclose(np.einsum("sa,saj->sj", A, Ka), M, atol=1e-14)
