"""Parametric stochastic policies with exact gradients.

Two families, both emitting softmax action distributions:

- ``LinearSoftmaxPolicy`` (kind ``tabular_softmax``): logits are a linear
  map of the observation vector. On a pure one-hot state encoding this is
  exactly a tabular softmax (one logit column per state); on factored or
  augmented encodings the same machinery gives a linear policy.
- ``MlpPolicy`` (kind ``mlp``): one hidden tanh layer, width 32 by default,
  with hand-derived backprop.

Gradients are flat vectors aligned with ``policy.params``. All logs are
floored at 1e-12; KL divergences are in nats.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .game import ObsLayout

LOG_FLOOR = 1e-12
SCHEMA_VERSION = 1


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy_of_dist(probs: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, LOG_FLOOR))).sum())


def dist_kl(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; +inf when q lacks support where p has mass."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    on = p > 0
    if np.any(q[on] == 0.0):
        return float("inf")
    return float((p[on] * (np.log(p[on]) - np.log(q[on]))).sum())


# ---------------------------------------------------------------------------
# policy classes
# ---------------------------------------------------------------------------

class LinearSoftmaxPolicy:
    """Softmax over logits = W @ obs; W has shape (n_actions, obs_dim)."""

    kind = "tabular_softmax"

    def __init__(self, obs_layout: ObsLayout, n_actions: int, weights=None):
        self.obs_layout = obs_layout
        self.n_actions = int(n_actions)
        if weights is None:
            weights = np.zeros((n_actions, obs_layout.size))
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.weights.shape != (n_actions, obs_layout.size):
            raise ValueError(f"weight shape {self.weights.shape} does not match layout")
        self.version = 0

    # -- parameters -------------------------------------------------------
    @property
    def n_params(self) -> int:
        return self.weights.size

    @property
    def params(self) -> np.ndarray:
        return self.weights.ravel().copy()

    @params.setter
    def params(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        self.weights = np.ascontiguousarray(flat.reshape(self.weights.shape).copy())
        self.version += 1

    def apply_step(self, delta_flat):
        self.params = self.params + delta_flat

    def copy(self) -> "LinearSoftmaxPolicy":
        return LinearSoftmaxPolicy(self.obs_layout, self.n_actions, self.weights.copy())

    # -- inference ----------------------------------------------------------
    def action_dist(self, obs) -> np.ndarray:
        return softmax(self.weights @ np.asarray(obs, dtype=np.float64))

    def batch_dist(self, X) -> np.ndarray:
        return softmax(X @ self.weights.T)

    def log_probs(self, X, actions) -> np.ndarray:
        P = self.batch_dist(X)
        picked = P[np.arange(len(actions)), actions]
        return np.log(np.maximum(picked, LOG_FLOOR))

    def entropy_batch(self, X) -> np.ndarray:
        P = self.batch_dist(X)
        return -(P * np.log(np.maximum(P, LOG_FLOOR))).sum(axis=1)

    # -- gradients ----------------------------------------------------------
    def log_prob_grad(self, obs, action: int) -> np.ndarray:
        """d log pi(action|obs) / d params: (e_action - pi) outer obs."""
        obs = np.asarray(obs, dtype=np.float64)
        p = self.action_dist(obs)
        coeff = -p
        coeff[action] += 1.0
        return np.outer(coeff, obs).ravel()

    def weighted_score_sum(self, X, actions, weights) -> np.ndarray:
        """sum_i weights[i] * d log pi(actions[i]|X[i]) / d params, flat."""
        P = self.batch_dist(X)
        C = -P
        C[np.arange(len(actions)), actions] += 1.0
        C *= np.asarray(weights, dtype=np.float64)[:, None]
        return (C.T @ X).ravel()

    def weighted_entropy_grad(self, X, weights) -> np.ndarray:
        """sum_i weights[i] * d H(pi(.|X[i])) / d params, flat.

        dH/dz = -p * (log p + H) for a softmax head.
        """
        P = self.batch_dist(X)
        logP = np.log(np.maximum(P, LOG_FLOOR))
        H = -(P * logP).sum(axis=1, keepdims=True)
        dz = -P * (logP + H)
        dz *= np.asarray(weights, dtype=np.float64)[:, None]
        return (dz.T @ X).ravel()

    def weighted_expected_grad(self, X, values, weights) -> np.ndarray:
        """sum_i weights[i] * d (sum_a values[i,a] pi(a|X[i])) / d params."""
        P = self.batch_dist(X)
        V = np.asarray(values, dtype=np.float64)
        vbar = (P * V).sum(axis=1, keepdims=True)
        dz = P * (V - vbar)
        dz *= np.asarray(weights, dtype=np.float64)[:, None]
        return (dz.T @ X).ravel()


class MlpPolicy:
    """One hidden tanh layer, softmax head, hand-derived backprop."""

    kind = "mlp"

    def __init__(self, obs_layout: ObsLayout, n_actions: int, hidden: int = 32, rng=None, params=None):
        self.obs_layout = obs_layout
        self.n_actions = int(n_actions)
        self.hidden = int(hidden)
        D, h, A = obs_layout.size, self.hidden, self.n_actions
        self._shapes = [(h, D), (h,), (A, h), (A,)]
        if params is not None:
            self.params = params
            self.version = 0
        else:
            rng = rng or np.random.default_rng(0)
            flat = rng.uniform(-0.1, 0.1, size=sum(int(np.prod(s)) for s in self._shapes))
            self._unflatten(flat)
            self.version = 0

    def _unflatten(self, flat):
        flat = np.asarray(flat, dtype=np.float64)
        out, off = [], 0
        for shape in self._shapes:
            n = int(np.prod(shape))
            out.append(np.ascontiguousarray(flat[off : off + n].reshape(shape).copy()))
            off += n
        if off != flat.size:
            raise ValueError("parameter vector has the wrong length")
        self.W1, self.b1, self.W2, self.b2 = out

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    @params.setter
    def params(self, flat):
        self._unflatten(flat)
        self.version = getattr(self, "version", -1) + 1

    def apply_step(self, delta_flat):
        self.params = self.params + delta_flat

    def copy(self) -> "MlpPolicy":
        return MlpPolicy(self.obs_layout, self.n_actions, self.hidden, params=self.params)

    # -- inference ----------------------------------------------------------
    def _forward(self, X):
        H1 = np.tanh(X @ self.W1.T + self.b1)
        P = softmax(H1 @ self.W2.T + self.b2)
        return P, H1

    def action_dist(self, obs) -> np.ndarray:
        P, _ = self._forward(np.asarray(obs, dtype=np.float64)[None, :])
        return P[0]

    def batch_dist(self, X) -> np.ndarray:
        return self._forward(X)[0]

    def log_probs(self, X, actions) -> np.ndarray:
        P = self.batch_dist(X)
        picked = P[np.arange(len(actions)), actions]
        return np.log(np.maximum(picked, LOG_FLOOR))

    def entropy_batch(self, X) -> np.ndarray:
        P = self.batch_dist(X)
        return -(P * np.log(np.maximum(P, LOG_FLOOR))).sum(axis=1)

    # -- gradients ----------------------------------------------------------
    def _backprop(self, X, H1, dz2) -> np.ndarray:
        """Flat gradient given the softmax-logit upstream gradient dz2."""
        dW2 = dz2.T @ H1
        db2 = dz2.sum(axis=0)
        dH1 = dz2 @ self.W2
        dz1 = dH1 * (1.0 - H1 * H1)
        dW1 = dz1.T @ X
        db1 = dz1.sum(axis=0)
        return np.concatenate([dW1.ravel(), db1, dW2.ravel(), db2])

    def log_prob_grad(self, obs, action: int) -> np.ndarray:
        X = np.asarray(obs, dtype=np.float64)[None, :]
        P, H1 = self._forward(X)
        dz2 = -P
        dz2[0, action] += 1.0
        return self._backprop(X, H1, dz2)

    def weighted_score_sum(self, X, actions, weights) -> np.ndarray:
        P, H1 = self._forward(X)
        dz2 = -P
        dz2[np.arange(len(actions)), actions] += 1.0
        dz2 = dz2 * np.asarray(weights, dtype=np.float64)[:, None]
        return self._backprop(X, H1, dz2)

    def weighted_entropy_grad(self, X, weights) -> np.ndarray:
        P, H1 = self._forward(X)
        logP = np.log(np.maximum(P, LOG_FLOOR))
        H = -(P * logP).sum(axis=1, keepdims=True)
        dz2 = -P * (logP + H)
        dz2 = dz2 * np.asarray(weights, dtype=np.float64)[:, None]
        return self._backprop(X, H1, dz2)

    def weighted_expected_grad(self, X, values, weights) -> np.ndarray:
        P, H1 = self._forward(X)
        V = np.asarray(values, dtype=np.float64)
        vbar = (P * V).sum(axis=1, keepdims=True)
        dz2 = P * (V - vbar)
        dz2 = dz2 * np.asarray(weights, dtype=np.float64)[:, None]
        return self._backprop(X, H1, dz2)


@dataclass
class MixedPolicy:
    """Per-episode mixture: play ``new`` with probability p_new, else ``base``.

    ``action_dist`` reports the per-state marginal; rollouts draw one
    component per episode (or per step when per_step is set), so episodes
    under the default stay stationary in a single component's kernel.
    """

    new: object
    base: object
    p_new: float
    per_step: bool = False

    kind = "mixture"

    def __post_init__(self):
        if not (0.0 <= self.p_new <= 1.0):
            raise ValueError("p_new outside [0, 1]")
        if self.new.n_actions != self.base.n_actions:
            raise ValueError("mixture components have different action spaces")
        if self.new.obs_layout != self.base.obs_layout:
            raise ValueError("mixture components have different observation layouts")

    @property
    def n_actions(self) -> int:
        return self.new.n_actions

    @property
    def obs_layout(self):
        return self.new.obs_layout

    @property
    def components(self):
        return (self.new, self.base)

    @property
    def component_probs(self):
        return (self.p_new, 1.0 - self.p_new)

    def action_dist(self, obs) -> np.ndarray:
        return self.p_new * self.new.action_dist(obs) + (1.0 - self.p_new) * self.base.action_dist(obs)

    def batch_dist(self, X) -> np.ndarray:
        return self.p_new * self.new.batch_dist(X) + (1.0 - self.p_new) * self.base.batch_dist(X)


def mix_policies(new, base, p_new: float, per_step: bool = False) -> MixedPolicy:
    """Mixture adversary: whole episodes come from ``new`` w.p. p_new."""
    return MixedPolicy(new, base, float(p_new), per_step)


# ---------------------------------------------------------------------------
# module-level distribution ops
# ---------------------------------------------------------------------------

def action_dist(policy, obs) -> np.ndarray:
    return policy.action_dist(obs)


def log_prob_grad(policy, obs, action: int) -> np.ndarray:
    return policy.log_prob_grad(obs, action)


def kl_divergence(p, q, obs) -> float:
    """KL(p(.|obs) || q(.|obs)) in nats at one observation."""
    return dist_kl(p.action_dist(obs), q.action_dist(obs))


def state_kl(p, q, game) -> np.ndarray:
    """Per-state KL(p || q) over the game's observation encoding."""
    X = game.dense_obs()
    P, Q = p.batch_dist(X), q.batch_dist(X)
    out = np.empty(game.n_states)
    for s in range(game.n_states):
        out[s] = dist_kl(P[s], Q[s])
    return out

def max_state_kl(p, q, game) -> float:
    """max_s KL(p(.|s) || q(.|s)) over non-absorbing states."""
    kl = state_kl(p, q, game)
    return float(np.max(kl[~game.absorbing]))


def entropy(policy, occupancy, game=None) -> float:
    """Occupancy-weighted Shannon entropy sum_s d(s) H(pi(.|s)).

    Without a game the policy must read a single one-hot block whose size
    matches len(occupancy) (identity encoding); with a game, states are
    encoded through the game's observation layout.
    """
    d = np.asarray(occupancy, dtype=np.float64)
    if np.any(d < 0):
        raise ValueError("occupancy weights must be nonnegative")
    if game is not None:
        X = game.dense_obs()
    else:
        X = np.eye(len(d))
    return float(d @ policy.entropy_batch(X))


def blind(obs, mask) -> np.ndarray:
    """Zero out the masked coordinates; idempotent."""
    obs = np.asarray(obs, dtype=np.float64)
    return np.where(np.asarray(mask, dtype=bool), 0.0, obs)


def state_blind_mask(game) -> np.ndarray:
    """Mask hiding the environment observation but not the prediction block.

    Covers exactly the game's own observation coordinates; rollouts pad the
    mask with False over any appended blocks, so an augmented adversary
    still sees its imitator input.
    """
    return np.ones(game.obs_layout.size, dtype=bool)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def policy_to_json(policy) -> dict:
    if isinstance(policy, MixedPolicy):
        return {
            "kind": "mixture",
            "obs_layout": policy.obs_layout.to_json(),
            "action_count": policy.n_actions,
            "p_new": policy.p_new,
            "per_step": policy.per_step,
            "components": [policy_to_json(policy.new), policy_to_json(policy.base)],
            "schema_version": SCHEMA_VERSION,
        }
    data = {
        "kind": policy.kind,
        "obs_layout": policy.obs_layout.to_json(),
        "action_count": policy.n_actions,
        "params": policy.params.tolist(),
        "schema_version": SCHEMA_VERSION,
    }
    if policy.kind == "mlp":
        data["hidden"] = policy.hidden
    return data


def policy_from_json(data) -> object:
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema_version {version!r} not supported (expected {SCHEMA_VERSION})"
        )
    layout = ObsLayout.from_json(data["obs_layout"])
    kind = data["kind"]
    if kind == "mixture":
        new = policy_from_json(data["components"][0])
        base = policy_from_json(data["components"][1])
        return MixedPolicy(new, base, float(data["p_new"]), bool(data["per_step"]))
    n_actions = int(data["action_count"])
    params = np.asarray(data["params"], dtype=np.float64)
    if kind == "tabular_softmax":
        return LinearSoftmaxPolicy(layout, n_actions, params.reshape(n_actions, layout.size))
    if kind == "mlp":
        return MlpPolicy(layout, n_actions, int(data["hidden"]), params=params)
    raise ValueError(f"unknown policy kind {kind!r}")


def save_policy(policy, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(policy_to_json(policy), fh, sort_keys=True)
        fh.write("\n")


def load_policy(path) -> object:
    with open(path, encoding="utf-8") as fh:
        return policy_from_json(json.load(fh))
