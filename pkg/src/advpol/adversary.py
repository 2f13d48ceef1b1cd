"""Adversary optimization on the differentiated reward.

The adversary's policy reads an augmented observation — the environment
blocks followed by a one-hot of the imitator's predicted victim action —
and ascends the return of delta(s) = r_adv(s) - r_vic(s) (plain mode uses
r_adv alone). Two estimators: the literal full-return times full-score-sum
form, exact enough to verify against the dynamic-programming gradient, and
a clipped-surrogate form with reward-to-go advantages for training.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import NO_IMITATOR, MarkovGame
from .oracle import MARGIN_TOL, exact_objective
from .policy import blind as blind_obs
from .rollout import EpisodeBatch, discounted_suffix_sums


def differentiated_reward(r_adv, r_vic):
    """delta = r_adv - r_vic, elementwise."""
    return np.asarray(r_adv, dtype=np.float64) - np.asarray(r_vic, dtype=np.float64)


def augment_observation(game: MarkovGame, s: int, imit_action: int, use_imitator: bool) -> np.ndarray:
    """Environment observation of s with a trailing prediction one-hot.

    The trailing block stays all-zero when the flag is off (or no
    prediction exists), keeping the observation length fixed at
    layout.size + n_vic_actions for every configuration.
    """
    pred = np.zeros(game.n_vic_actions)
    if use_imitator and imit_action != NO_IMITATOR:
        pred[imit_action] = 1.0
    return np.concatenate([game.dense_obs()[s], pred])


@dataclass
class AdversaryState:
    """The adversary's augmented-observation policy and its knobs."""

    policy: object
    clip_eps: float = 0.2
    use_imitator_input: bool = True
    blind_mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")


def _augmented_rows(state: AdversaryState, batch: EpisodeBatch) -> np.ndarray:
    """Observation matrix for the batch's real steps, in flat order."""
    game = batch.game
    m = batch.mask
    X = game.dense_obs()[batch.states[m]]
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    if state.policy.obs_layout == aug:
        preds = batch.imit_actions[m]
        onehot = np.zeros((len(preds), game.n_vic_actions))
        if state.use_imitator_input:
            have = preds != NO_IMITATOR
            onehot[np.flatnonzero(have), preds[have]] = 1.0
        rows = np.hstack([X, onehot])
    elif state.policy.obs_layout == game.obs_layout:
        if state.use_imitator_input:
            raise ValueError("policy layout has no pred block for imitator input")
        rows = X
    else:
        raise ValueError("adversary policy layout does not match the game")
    if state.blind_mask is not None:
        mask = np.zeros(rows.shape[1], dtype=bool)
        bm = np.asarray(state.blind_mask, dtype=bool)
        mask[: len(bm)] = bm
        rows = blind_obs(rows, mask)
    return rows


def _check_staleness(policy, batch: EpisodeBatch, method: str, stale_ok: int):
    if batch.policy_version < 0:
        return
    drift = policy.version - batch.policy_version
    limit = 0 if method == "reinforce" else stale_ok
    if drift < 0 or drift > limit:
        raise ValueError(
            f"stale batch: policy version {policy.version} vs batch "
            f"{batch.policy_version} (allowed drift {limit})"
        )


def adv_update(
    state: AdversaryState,
    batch: EpisodeBatch,
    lr: float,
    method: str = "reinforce",
    *,
    reward_select: str = "delta",
    stale_ok: int = 8,
    behavior_log_probs: np.ndarray | None = None,
):
    """One ascent step on the differentiated-reward return.

    reinforce: full inclusive return (with exact absorbing tails) times the
    full score sum, averaged over episodes — the literal estimator whose
    mean is the exact gradient. ppo_clip: ratio-clipped surrogate with
    reward-to-go returns against a batch-mean baseline.
    Mutates and returns the policy.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    policy = state.policy
    _check_staleness(policy, batch, method, stale_ok)
    game = batch.game
    if reward_select == "delta":
        rewards = differentiated_reward(game.adv_reward, game.vic_reward)
    elif reward_select == "adv":
        rewards = game.adv_reward
    else:
        raise ValueError(f"unknown reward_select {reward_select!r}")

    N = len(batch)
    m = batch.mask
    rows = _augmented_rows(state, batch)
    acts = batch.adv_actions[m]

    if method == "reinforce":
        returns = batch.state_returns(rewards)
        w = np.repeat(returns / N, batch.lengths)
        grad = policy.weighted_score_sum(rows, acts, w)
    elif method == "ppo_clip":
        gamma = game.gamma
        step_r = np.where(m, rewards[batch.states], 0.0)
        tail = np.where(
            batch.absorbed,
            gamma ** batch.lengths / (1.0 - gamma) * rewards[batch.final_states],
            0.0,
        )
        G = discounted_suffix_sums(step_r, m, gamma, tail, batch.lengths)
        adv = G[m] - G[m].mean()
        new_logp = policy.log_probs(rows, acts)
        old_logp = new_logp if behavior_log_probs is None else np.asarray(behavior_log_probs)
        ratio = np.exp(new_logp - old_logp)
        eps = state.clip_eps
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
        active = unclipped <= clipped + 1e-15
        w = np.where(active, ratio * adv, 0.0) * batch.discounts[m] / N
        grad = policy.weighted_score_sum(rows, acts, w)
    else:
        raise ValueError(f"unknown update method {method!r}")

    policy.apply_step(lr * grad)
    return policy


def enhanced_objective_value(game: MarkovGame, adv_policy, vic_policy) -> float:
    """Adversary value minus the victim's value at the start state.

    Computed as two exact solves and asserted (1e-9) against the
    single-solve differentiated-reward value they must equal.
    """
    lhs = exact_objective(game, adv_policy, vic_policy, "adv") - exact_objective(
        game, adv_policy, vic_policy, "vic"
    )
    rhs = exact_objective(game, adv_policy, vic_policy, "delta")
    if abs(lhs - rhs) > MARGIN_TOL:
        raise ArithmeticError(
            f"enhanced objective mismatch: {lhs!r} vs delta value {rhs!r}"
        )
    return lhs
