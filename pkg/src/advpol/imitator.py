"""Victim imitation: discriminator, shaped reward, and the imitator update.

The discriminator is a logistic model over one-hot (state, victim-action)
features whose output is clamped to [d_low, d_high]; the clamp is part of
the model (forward outputs are always inside it) but gradients flow through
the raw sigmoid. The imitator's per-step reward is
eta(s, a) = ln D(s, a) - r_adv(s) (the plain variant drops the subtraction),
and its update ascends the eta objective plus an entropy bonus.

Sign conventions: the discriminator DESCENDS toward D -> 0 on imitator
pairs and D -> 1 on expert pairs, which is the direction that makes ln D a
reward for resembling the expert. The entropy term enters the update as a
bonus (weight entropy_coeff), driving the policy toward uniform when the
shaped reward is uninformative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .game import NO_IMITATOR, MarkovGame
from .policy import (
    LOG_FLOOR,
    SCHEMA_VERSION,
    policy_from_json,
    policy_to_json,
)
from .rollout import EpisodeBatch, discounted_suffix_sums

DEFAULT_CLAMP = (0.01, 0.99)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Discriminator:
    """Logistic classifier of (state, victim-action) pairs.

    arch 'linear': score = w_state[s] + w_action[a] + bias.
    arch 'one_hidden': a tanh layer over the same one-hot features.
    """

    def __init__(self, n_states, n_vic_actions, arch="linear", hidden=16,
                 clamp=DEFAULT_CLAMP, rng=None, params=None):
        self.n_states = int(n_states)
        self.n_vic_actions = int(n_vic_actions)
        self.arch = arch
        self.hidden = int(hidden)
        lo, hi = float(clamp[0]), float(clamp[1])
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("clamp must satisfy 0 < d_low <= d_high < 1")
        self.clamp = (lo, hi)
        F = self.n_states + self.n_vic_actions
        if arch == "linear":
            self._shapes = [(F,), (1,)]
        elif arch == "one_hidden":
            self._shapes = [(self.hidden, F), (self.hidden,), (self.hidden,), (1,)]
        else:
            raise ValueError(f"unknown discriminator arch {arch!r}")
        if params is not None:
            self.params = params
        elif rng is not None:
            self.params = rng.uniform(-0.1, 0.1, size=self.n_params)
        else:
            self.params = np.zeros(self.n_params)

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes)

    @property
    def params(self) -> np.ndarray:
        return self._flat.copy()

    @params.setter
    def params(self, flat):
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != self.n_params:
            raise ValueError("parameter vector has the wrong length")
        self._flat = flat.copy()
        parts, off = [], 0
        for shape in self._shapes:
            n = int(np.prod(shape))
            parts.append(self._flat[off : off + n].reshape(shape))
            off += n
        if self.arch == "linear":
            self._w, self._b = parts
        else:
            self._W1, self._b1, self._w2, self._b2 = parts

    def copy(self) -> "Discriminator":
        return Discriminator(
            self.n_states, self.n_vic_actions, self.arch, self.hidden,
            self.clamp, params=self.params,
        )

    # -- scores -------------------------------------------------------------
    def scores(self, states, actions) -> np.ndarray:
        """Raw (unclamped) logits for index arrays of equal length."""
        s = np.asarray(states, dtype=np.int64)
        a = np.asarray(actions, dtype=np.int64)
        if self.arch == "linear":
            return self._w[s] + self._w[self.n_states + a] + self._b[0]
        pre = self._W1[:, s] + self._W1[:, self.n_states + a] + self._b1[:, None]
        return self._w2 @ np.tanh(pre) + self._b2[0]

    def forward(self, states, actions) -> np.ndarray:
        """Clamped probabilities D(s, a) in [d_low, d_high]."""
        return np.clip(_sigmoid(self.scores(states, actions)), *self.clamp)

    def state_action_matrix(self, game: MarkovGame) -> np.ndarray:
        """(S, A_vic) clamped outputs over a whole game (oracle coupling)."""
        if game.n_states != self.n_states or game.n_vic_actions != self.n_vic_actions:
            raise ValueError("discriminator was built for a different game shape")
        S, A = self.n_states, self.n_vic_actions
        s = np.repeat(np.arange(S), A)
        a = np.tile(np.arange(A), S)
        return self.forward(s, a).reshape(S, A)

    # -- gradients ------------------------------------------------------------
    def weighted_score_grad(self, states, actions, weights) -> np.ndarray:
        """sum_i weights[i] * d score(s_i, a_i) / d params, flat."""
        s = np.asarray(states, dtype=np.int64)
        a = np.asarray(actions, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        grad = np.zeros(self.n_params)
        if self.arch == "linear":
            gw = grad[: self.n_states + self.n_vic_actions]
            np.add.at(gw, s, w)
            np.add.at(gw, self.n_states + a, w)
            grad[-1] = w.sum()
            return grad
        F = self.n_states + self.n_vic_actions
        h = self.hidden
        pre = self._W1[:, s] + self._W1[:, self.n_states + a] + self._b1[:, None]
        H = np.tanh(pre)                       # (h, N)
        dpre = (1.0 - H * H) * self._w2[:, None] * w[None, :]
        dW1 = np.zeros((h, F))
        np.add.at(dW1.T, s, dpre.T)
        np.add.at(dW1.T, self.n_states + a, dpre.T)
        db1 = dpre.sum(axis=1)
        dw2 = H @ w
        db2 = w.sum()
        return np.concatenate([dW1.ravel(), db1, dw2, [db2]])


def disc_forward(d: Discriminator, s: int, a_vic: int) -> float:
    """Clamped discriminator output at a single (state, action) pair."""
    return float(d.forward([s], [a_vic])[0])


# ---------------------------------------------------------------------------
# imitator state
# ---------------------------------------------------------------------------

@dataclass
class ImitatorState:
    """The imitator's policy, its discriminator, and objective knobs."""

    policy: object
    discriminator: Discriminator
    entropy_coeff: float = 0.01
    enhanced: bool = True

    def __post_init__(self):
        if self.entropy_coeff < 0:
            raise ValueError("entropy_coeff must be >= 0")


def imitator_to_json(state: ImitatorState) -> dict:
    return {
        "kind": "imitator",
        "policy": policy_to_json(state.policy),
        "discriminator": {
            "arch": state.discriminator.arch,
            "n_states": state.discriminator.n_states,
            "n_vic_actions": state.discriminator.n_vic_actions,
            "hidden": state.discriminator.hidden,
            "clamp": list(state.discriminator.clamp),
            "params": state.discriminator.params.tolist(),
        },
        "entropy_coeff": state.entropy_coeff,
        "enhanced": state.enhanced,
        "schema_version": SCHEMA_VERSION,
    }


def imitator_from_json(data: dict) -> ImitatorState:
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema_version {data.get('schema_version')!r} not supported "
            f"(expected {SCHEMA_VERSION})"
        )
    d = data["discriminator"]
    disc = Discriminator(
        d["n_states"], d["n_vic_actions"], d["arch"], d["hidden"],
        tuple(d["clamp"]), params=np.asarray(d["params"]),
    )
    return ImitatorState(
        policy=policy_from_json(data["policy"]),
        discriminator=disc,
        entropy_coeff=float(data["entropy_coeff"]),
        enhanced=bool(data["enhanced"]),
    )


def save_imitator(state: ImitatorState, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(imitator_to_json(state), fh, sort_keys=True)
        fh.write("\n")


def load_imitator(path) -> ImitatorState:
    with open(path, encoding="utf-8") as fh:
        return imitator_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# discriminator update
# ---------------------------------------------------------------------------

@dataclass
class PairBatch:
    """Weighted (state, action) pairs for discriminator training."""

    states: np.ndarray
    actions: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def imit_pairs(batch: EpisodeBatch, discounted: bool = True) -> PairBatch:
    """The imitator's predicted actions, weighted gamma^t / n_episodes."""
    keep = batch.mask & (batch.imit_actions != NO_IMITATOR)
    w = batch.discounts if discounted else batch.mask.astype(np.float64)
    return PairBatch(
        states=batch.states[keep],
        actions=batch.imit_actions[keep],
        weights=w[keep] / max(len(batch), 1),
    )


def expert_pairs(batch: EpisodeBatch, discounted: bool = True) -> PairBatch:
    """The victim's actual actions, weighted gamma^t / n_episodes."""
    w = batch.discounts if discounted else batch.mask.astype(np.float64)
    return PairBatch(
        states=batch.states[batch.mask],
        actions=batch.vic_actions[batch.mask],
        weights=w[batch.mask] / max(len(batch), 1),
    )


def _as_pairs(batch, expert: bool, discounted: bool) -> PairBatch:
    if isinstance(batch, PairBatch):
        return batch
    if isinstance(batch, EpisodeBatch):
        return expert_pairs(batch, discounted) if expert else imit_pairs(batch, discounted)
    raise TypeError("discriminator batches must be PairBatch or EpisodeBatch")


def disc_update(
    state: ImitatorState, imit_batch, expert_batch, lr: float, *,
    discounted: bool = True, l2: float = 0.0,
) -> Discriminator:
    """One descent step: D falls on imitator pairs, rises on expert pairs.

    Descends L = E_imit[sum gamma^t ln sigma(z)] + E_expert[sum gamma^t
    ln(1 - sigma(z))] + (l2/2) ||params||^2 through the raw sigmoid (the
    clamp applies to outputs only). The l2 term shrinks toward D = 1/2 and
    keeps tanh units out of their flat, unrecoverable region. Mutates and
    returns the discriminator.
    """
    ib = _as_pairs(imit_batch, expert=False, discounted=discounted)
    eb = _as_pairs(expert_batch, expert=True, discounted=discounted)
    if len(ib) == 0 or len(eb) == 0:
        raise ValueError("discriminator update needs nonempty imitator and expert batches")
    d = state.discriminator
    si = _sigmoid(d.scores(ib.states, ib.actions))
    se = _sigmoid(d.scores(eb.states, eb.actions))
    grad = d.weighted_score_grad(ib.states, ib.actions, ib.weights * (1.0 - si))
    grad -= d.weighted_score_grad(eb.states, eb.actions, eb.weights * se)
    if l2:
        grad += l2 * d.params
    d.params = d.params - lr * grad
    return d


# ---------------------------------------------------------------------------
# shaped reward
# ---------------------------------------------------------------------------

def eta_reward(d: Discriminator, s: int, a_vic: int, r_adv: float, enhanced: bool) -> float:
    """eta = ln D(s, a) - r_adv when enhanced, ln D(s, a) otherwise."""
    val = float(np.log(max(disc_forward(d, s, a_vic), LOG_FLOOR)))
    return val - float(r_adv) if enhanced else val


def eta_step_rewards(state: ImitatorState, batch: EpisodeBatch, actions: np.ndarray) -> np.ndarray:
    """(N, T) per-step eta values at (batch.states, actions); zero on padding."""
    d = state.discriminator
    out = np.zeros(batch.states.shape)
    m = batch.mask
    logD = np.log(np.maximum(d.forward(batch.states[m], actions[m]), LOG_FLOOR))
    if state.enhanced:
        logD = logD - batch.game.adv_reward[batch.states[m]]
    out[m] = logD
    return out


def _eta_rows(state: ImitatorState, game: MarkovGame, states: np.ndarray) -> np.ndarray:
    """(len(states), A_vic) eta values over all actions at the given states."""
    A = game.n_vic_actions
    D = state.discriminator.forward(
        np.repeat(states, A), np.tile(np.arange(A), len(states))
    ).reshape(len(states), A)
    eta = np.log(np.maximum(D, LOG_FLOOR))
    if state.enhanced:
        eta = eta - game.adv_reward[states][:, None]
    return eta


def _eta_tail_values(state: ImitatorState, batch: EpisodeBatch) -> np.ndarray:
    """(N,) discounted tails gamma^L/(1-gamma) * E_{a~pi}[eta(s_abs, a)].

    After absorption the exact eta objective keeps sampling the actor in
    the absorbing state forever; the action average makes the tail exact
    in expectation.
    """
    g = batch.game.gamma
    tails = np.zeros(len(batch))
    idx = np.flatnonzero(batch.absorbed)
    if len(idx) == 0:
        return tails
    fin = batch.final_states[idx]
    eta = _eta_rows(state, batch.game, fin)
    probs = state.policy.batch_dist(batch.game.dense_obs()[fin])
    tails[idx] = g ** batch.lengths[idx] / (1.0 - g) * (probs * eta).sum(axis=1)
    return tails


# ---------------------------------------------------------------------------
# imitator policy update
# ---------------------------------------------------------------------------

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


def imit_policy_update(
    state: ImitatorState,
    batch: EpisodeBatch,
    lr: float,
    method: str = "reinforce",
    *,
    action_source: str = "imit",
    clip_eps: float = 0.2,
    stale_ok: int = 8,
    behavior_log_probs: np.ndarray | None = None,
):
    """One ascent step on the shaped-reward objective plus entropy bonus.

    reinforce: the literal estimator — full inclusive eta return times the
    full score sum, averaged over episodes — plus the exact product-rule
    entropy gradient. ppo_clip: clipped-ratio surrogate on eta
    reward-to-go with a batch-mean baseline and a direct entropy bonus.

    action_source picks which recorded stream the imitator is credited
    with: its own predictions ('imit', training) or the victim-slot
    actions ('vic', when the imitator itself occupied the victim slot).
    Mutates and returns the policy.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    policy = state.policy
    _check_staleness(policy, batch, method, stale_ok)
    actions = batch.imit_actions if action_source == "imit" else batch.vic_actions
    if action_source == "imit" and np.any((actions == NO_IMITATOR) & batch.mask):
        raise ValueError("batch has steps without imitator predictions")

    game = batch.game
    gamma = game.gamma
    N = len(batch)
    X = game.dense_obs()
    m = batch.mask
    flat_states = batch.states[m]
    flat_actions = actions[m]
    Xs = X[flat_states]
    lam = state.entropy_coeff

    step_eta = eta_step_rewards(state, batch, actions)
    eta_tail = _eta_tail_values(state, batch)

    if method == "reinforce":
        returns = (batch.discounts * step_eta).sum(axis=1) + eta_tail
        # entropy objective return per episode, same inclusive accounting
        ent_steps = np.zeros_like(step_eta)
        ent_steps[m] = policy.entropy_batch(Xs)
        ent_fin = policy.entropy_batch(X[batch.final_states])
        ent_tail = np.where(
            batch.absorbed, gamma ** batch.lengths / (1.0 - gamma) * ent_fin, 0.0
        )
        ent_returns = (batch.discounts * ent_steps).sum(axis=1) + ent_tail
        total = returns + lam * ent_returns
        w = np.repeat(total / N, batch.lengths)
        grad = policy.weighted_score_sum(Xs, flat_actions, w)
        idx = np.flatnonzero(batch.absorbed)
        if len(idx):
            fin = batch.final_states[idx]
            tw = gamma ** batch.lengths[idx] / (1.0 - gamma) / N
            # tail actions' reward-score covariance, taken in expectation
            grad += policy.weighted_expected_grad(X[fin], _eta_rows(state, game, fin), tw)
        if lam > 0.0:
            dw = batch.discounts[m] / N
            grad += lam * policy.weighted_entropy_grad(Xs, dw)
            if len(idx):
                grad += lam * policy.weighted_entropy_grad(X[batch.final_states[idx]], tw)
    elif method == "ppo_clip":
        G = discounted_suffix_sums(step_eta, m, gamma, eta_tail, batch.lengths)
        adv = G[m] - G[m].mean()
        new_logp = policy.log_probs(Xs, flat_actions)
        old_logp = new_logp if behavior_log_probs is None else np.asarray(behavior_log_probs)
        ratio = np.exp(new_logp - old_logp)
        unclipped = ratio * adv
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        active = unclipped <= clipped + 1e-15  # min picks the unclipped branch
        w = np.where(active, ratio * adv, 0.0) * batch.discounts[m] / N
        grad = policy.weighted_score_sum(Xs, flat_actions, w)
        if lam > 0.0:
            grad += lam * policy.weighted_entropy_grad(Xs, batch.discounts[m] / N)
    else:
        raise ValueError(f"unknown update method {method!r}")

    policy.apply_step(lr * grad)
    return policy


# ---------------------------------------------------------------------------
# progress metric
# ---------------------------------------------------------------------------

def imitation_gap(imit_policy, vic_policy, occupancy, game=None) -> float:
    """Occupancy-weighted total variation between imitator and victim.

    sum_s d(s) * TV(imit(.|s), vic(.|s)) / sum_s d(s), in [0, 1].
    Without a game the policies are read over the identity encoding.
    """
    d = np.asarray(occupancy, dtype=np.float64)
    X = game.dense_obs() if game is not None else np.eye(len(d))
    P = imit_policy.batch_dist(X)
    Q = vic_policy.batch_dist(X)
    tv = 0.5 * np.abs(P - Q).sum(axis=1)
    total = d.sum()
    if total <= 0:
        raise ValueError("occupancy weights sum to zero")
    return float((d * tv).sum() / total)
