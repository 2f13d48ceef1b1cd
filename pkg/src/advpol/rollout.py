"""Episode sampling.

Every episode consumes one pre-drawn uniform block U of shape (horizon, 5):

    U[t, 0]  mixture-component pick (t=0 only for per-episode mixtures)
    U[t, 1]  imitator action
    U[t, 2]  adversary action
    U[t, 3]  victim action
    U[t, 4]  next-state draw

Batches draw all blocks in a single generator call, and each episode writes
its own rows of preallocated outputs, so results are bitwise invariant to
worker count and scheduling. The imitator's prediction is sampled before
the adversary acts (slot 1 before slot 2); the victim's own action is never
visible to the adversary.

Two interchangeable backends run the linear-policy fast path: a compiled
kernel (``advpol._speedups``) and a pure-Python twin. Both accumulate
logits column-by-column, exponentiate via libm, and walk running-sum cdfs,
so their trajectories are bitwise identical; set ADVPOL_PURE_PYTHON=1 to
force the Python twin. MLP policies and distribution-valued predictions
take a separate generic path.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .game import NO_IMITATOR, NO_OBS, MarkovGame, Trajectory
from .policy import LinearSoftmaxPolicy, MixedPolicy

try:  # pragma: no cover - exercised via the backend parity tests
    from . import _speedups
except ImportError:  # pragma: no cover
    _speedups = None

_FORCE_PY = bool(os.environ.get("ADVPOL_PURE_PYTHON"))


def backend_name() -> str:
    return "python" if (_speedups is None or _FORCE_PY) else "compiled"


# ---------------------------------------------------------------------------
# pure-Python episode kernel (twin of _speedups.run_episodes)
# ---------------------------------------------------------------------------

def _sparse_dist(W: np.ndarray, cols) -> np.ndarray:
    """Softmax of summed weight columns, in plain libm arithmetic."""
    A = W.shape[0]
    logits = [0.0] * A
    for c in cols:
        for a in range(A):
            logits[a] += float(W[a, c])
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    Z = 0.0
    for e in exps:
        Z += e
    return np.array([e / Z for e in exps])


def _pick(pmf: np.ndarray, u: float) -> int:
    cdf = np.cumsum(pmf)
    return min(int(np.searchsorted(cdf, u, side="right")), len(pmf) - 1)


def _pick_cdf(cdf: np.ndarray, u: float) -> int:
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


def _py_run_episodes(
    P, absorbing, obs_index, block_offsets, start_state, horizon,
    vic_W, has_imit, imit_W, adv_Ws, comp_cdf, per_step_mix, pred_offset,
    adv_mask, U, i0, i1, states, adv_a, vic_a, imit_a, lengths, absorbed,
):
    n_blocks = obs_index.shape[1]
    n_comp = adv_Ws.shape[0]
    for i in range(i0, i1):
        comp = 0
        if n_comp > 1 and not per_step_mix:
            comp = _pick_cdf(comp_cdf, U[i, 0, 0])
        s = start_state
        states[i, 0] = s
        t = 0
        done = False
        while t < horizon and not done:
            env_cols = [
                block_offsets[b] + obs_index[s, b]
                for b in range(n_blocks)
                if obs_index[s, b] != NO_OBS
            ]
            # imitator prediction is sampled first, then the adversary acts
            pred = NO_IMITATOR
            if has_imit:
                pred = _pick(_sparse_dist(imit_W, env_cols), U[i, t, 1])
            if n_comp > 1 and per_step_mix:
                comp = _pick_cdf(comp_cdf, U[i, t, 0])
            adv_cols = [c for c in env_cols if not adv_mask[c]]
            if pred_offset >= 0 and pred != NO_IMITATOR and not adv_mask[pred_offset + pred]:
                adv_cols.append(pred_offset + pred)
            aa = _pick(_sparse_dist(adv_Ws[comp], adv_cols), U[i, t, 2])
            av = _pick(_sparse_dist(vic_W, env_cols), U[i, t, 3])
            s = _pick(P[s, aa, av], U[i, t, 4])
            adv_a[i, t] = aa
            vic_a[i, t] = av
            imit_a[i, t] = pred
            states[i, t + 1] = s
            done = bool(absorbing[s])
            t += 1
        lengths[i] = t
        absorbed[i] = done


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _adv_components(adv_policy):
    if isinstance(adv_policy, MixedPolicy):
        comps = adv_policy.components
        probs = adv_policy.component_probs
        return list(comps), np.asarray(probs, dtype=np.float64), adv_policy.per_step
    return [adv_policy], np.array([1.0]), False


def _linear_fast_ok(game, comps, vic_policy, imitator, pred_mode):
    if pred_mode != "sample":
        return False
    pols = list(comps) + [vic_policy] + ([imitator] if imitator is not None else [])
    if not all(isinstance(p, LinearSoftmaxPolicy) for p in pols):
        return False
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    for c in comps:
        if c.obs_layout not in (game.obs_layout, aug):
            return False
    return True


def _check_shapes(game, comps, vic_policy, imitator):
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    for c in comps:
        if c.n_actions != game.n_adv_actions:
            raise ValueError("adversary action count does not match the game")
        if c.obs_layout not in (game.obs_layout, aug):
            raise ValueError("adversary observation layout does not match the game")
    if vic_policy.n_actions != game.n_vic_actions:
        raise ValueError("victim action count does not match the game")
    if vic_policy.obs_layout != game.obs_layout:
        raise ValueError("victim observation layout does not match the game")
    if imitator is not None:
        if imitator.n_actions != game.n_vic_actions:
            raise ValueError("imitator action count does not match the game")
        if imitator.obs_layout != game.obs_layout:
            raise ValueError("imitator observation layout does not match the game")


def rollout_batch(
    game: MarkovGame,
    adv_policy,
    vic_policy,
    n_episodes: int,
    *,
    imitator=None,
    rng=None,
    seed=None,
    blind_mask=None,
    workers: int = 1,
    pred_mode: str = "sample",
) -> list:
    """Sample n_episodes independent episodes; deterministic given the rng."""
    if rng is None:
        rng = np.random.default_rng(seed)
    comps, comp_probs, per_step = _adv_components(adv_policy)
    _check_shapes(game, comps, vic_policy, imitator)
    H = game.horizon
    U = rng.random((n_episodes, H, 5))

    states = np.zeros((n_episodes, H + 1), dtype=np.int64)
    adv_a = np.zeros((n_episodes, H), dtype=np.int64)
    vic_a = np.zeros((n_episodes, H), dtype=np.int64)
    imit_a = np.full((n_episodes, H), NO_IMITATOR, dtype=np.int64)
    lengths = np.zeros(n_episodes, dtype=np.int64)
    absorbed = np.zeros(n_episodes, dtype=np.uint8)

    if _linear_fast_ok(game, comps, vic_policy, imitator, pred_mode):
        aug = game.obs_layout.with_block("pred", game.n_vic_actions)
        obs_dim = aug.size
        adv_Ws = np.zeros((len(comps), game.n_adv_actions, obs_dim))
        for k, c in enumerate(comps):
            adv_Ws[k, :, : c.weights.shape[1]] = c.weights
        adv_Ws = np.ascontiguousarray(adv_Ws)
        pred_offset = game.obs_layout.size if any(
            c.obs_layout == aug for c in comps
        ) else -1
        mask = np.zeros(obs_dim, dtype=np.uint8)
        if blind_mask is not None:
            bm = np.asarray(blind_mask, dtype=bool)
            mask[: len(bm)] = bm
        block_offsets = np.cumsum(
            [0] + [size for _, size in game.obs_layout.blocks[:-1]]
        ).astype(np.int64)
        args_common = (
            game.transition,
            game.absorbing.astype(np.uint8),
            game.obs_index,
            block_offsets,
            int(game.start_state),
            H,
            vic_policy.weights,
            imitator is not None,
            (imitator.weights if imitator is not None else np.zeros((1, game.obs_layout.size))),
            adv_Ws,
            np.cumsum(comp_probs),
            per_step,
            int(pred_offset),
            mask,
            U,
        )
        run = (
            _speedups.run_episodes
            if backend_name() == "compiled"
            else _py_run_episodes
        )

        def work(lo, hi):
            run(*args_common, lo, hi, states, adv_a, vic_a, imit_a, lengths, absorbed)

        _parallel(work, n_episodes, workers)
    else:
        def work(lo, hi):
            _generic_episodes(
                game, comps, comp_probs, per_step, vic_policy, imitator,
                blind_mask, pred_mode, U, lo, hi,
                states, adv_a, vic_a, imit_a, lengths, absorbed,
            )

        _parallel(work, n_episodes, workers)

    out = []
    for i in range(n_episodes):
        T = int(lengths[i])
        st = states[i, : T + 1].copy()
        out.append(
            Trajectory(
                states=st,
                adv_actions=adv_a[i, :T].copy(),
                vic_actions=vic_a[i, :T].copy(),
                imit_actions=imit_a[i, :T].copy(),
                adv_rewards=game.adv_reward[st[1:]].copy(),
                vic_rewards=game.vic_reward[st[1:]].copy(),
                outcome=game.outcome_of(int(st[-1]), bool(absorbed[i])),
                absorbed=bool(absorbed[i]),
            )
        )
    return out


def rollout(game, adv_policy, vic_policy, *, imitator=None, rng=None, seed=None,
            blind_mask=None, pred_mode: str = "sample") -> Trajectory:
    """Sample a single episode (see rollout_batch)."""
    return rollout_batch(
        game, adv_policy, vic_policy, 1,
        imitator=imitator, rng=rng, seed=seed,
        blind_mask=blind_mask, pred_mode=pred_mode,
    )[0]


def _parallel(work, n: int, workers: int):
    workers = max(1, int(workers))
    if workers == 1 or n < 2 * workers:
        work(0, n)
        return
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(work, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:])
            if hi > lo
        ]
        for f in futures:
            f.result()


# ---------------------------------------------------------------------------
# padded step batches for gradient updates
# ---------------------------------------------------------------------------

@dataclass
class EpisodeBatch:
    """Trajectories padded into rectangular arrays for vectorized updates.

    ``states[i, t]`` is the state in which step t's actions were taken
    (current-state credit, the convention of the shaped and differentiated
    rewards); ``final_states`` and ``absorbed`` carry what is needed for
    closed-form discounted tails of state-reward returns.
    ``policy_version`` tags the parameters that generated the behavior, for
    on-policy staleness guards.
    """

    game: MarkovGame
    states: np.ndarray        # (N, T) int64
    adv_actions: np.ndarray   # (N, T) int64
    vic_actions: np.ndarray   # (N, T) int64
    imit_actions: np.ndarray  # (N, T) int64, NO_IMITATOR when absent
    mask: np.ndarray          # (N, T) bool, True on real steps
    lengths: np.ndarray       # (N,) int64
    absorbed: np.ndarray      # (N,) bool
    final_states: np.ndarray  # (N,) int64
    policy_version: int = -1

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return int(self.lengths.sum())

    @property
    def discounts(self) -> np.ndarray:
        """(N, T) gamma^t weights, zero on padding."""
        T = self.states.shape[1]
        w = self.game.gamma ** np.arange(T)
        return np.where(self.mask, w[None, :], 0.0)

    def state_returns(self, rewards: np.ndarray) -> np.ndarray:
        """(N,) inclusive returns sum_t gamma^t r(s_t) for a state reward.

        Absorbed episodes get the exact geometric tail: the chain sits in
        its absorbing state from step ``length`` on.
        """
        g = self.game.gamma
        body = (self.discounts * rewards[self.states] * self.mask).sum(axis=1)
        tail = np.where(
            self.absorbed, g ** self.lengths / (1.0 - g) * rewards[self.final_states], 0.0
        )
        return body + tail

    def flat(self, arr: np.ndarray) -> np.ndarray:
        """Select the real-step entries of an (N, T) array, flattened."""
        return arr[self.mask]

    def state_occupancy(self) -> np.ndarray:
        """(S,) Monte-Carlo estimate of the discounted state visitation.

        Per-episode sum_t gamma^t 1[s_t = s], with the closed geometric tail
        for absorbed episodes, averaged over episodes — an unbiased estimate
        of the exact discounted occupancy.
        """
        d = np.zeros(self.game.n_states)
        np.add.at(d, self.states[self.mask], self.discounts[self.mask])
        g = self.game.gamma
        tails = g ** self.lengths[self.absorbed] / (1.0 - g)
        np.add.at(d, self.final_states[self.absorbed], tails)
        return d / max(len(self), 1)


def discounted_suffix_sums(step_rewards, mask, gamma, tail, lengths) -> np.ndarray:
    """(N, T) reward-to-go G_t = r_t + gamma * G_{t+1}, zero on padding.

    ``tail`` is the episode's already-discounted continuation value from
    step ``lengths`` on (i.e. gamma^L * x), so the suffix starting at step
    ``lengths`` is tail / gamma^L.
    """
    N, T = step_rewards.shape
    G = np.zeros((N, T))
    carry = tail / np.where(lengths > 0, gamma ** lengths.astype(np.float64), 1.0)
    for t in range(T - 1, -1, -1):
        live = mask[:, t]
        carry = np.where(live, step_rewards[:, t] + gamma * carry, carry)
        G[:, t] = np.where(live, carry, 0.0)
    return G


def batch_from_trajectories(game: MarkovGame, trajs, policy_version: int = -1) -> EpisodeBatch:
    n = len(trajs)
    T = max(len(t) for t in trajs) if n else 0
    states = np.zeros((n, T), dtype=np.int64)
    adv_a = np.zeros((n, T), dtype=np.int64)
    vic_a = np.zeros((n, T), dtype=np.int64)
    imit_a = np.full((n, T), NO_IMITATOR, dtype=np.int64)
    mask = np.zeros((n, T), dtype=bool)
    lengths = np.zeros(n, dtype=np.int64)
    absorbed = np.zeros(n, dtype=bool)
    final_states = np.zeros(n, dtype=np.int64)
    for i, tr in enumerate(trajs):
        L = len(tr)
        states[i, :L] = tr.states[:-1]
        adv_a[i, :L] = tr.adv_actions
        vic_a[i, :L] = tr.vic_actions
        imit_a[i, :L] = tr.imit_actions
        mask[i, :L] = True
        lengths[i] = L
        absorbed[i] = tr.absorbed
        final_states[i] = tr.final_state
    return EpisodeBatch(
        game=game, states=states, adv_actions=adv_a, vic_actions=vic_a,
        imit_actions=imit_a, mask=mask, lengths=lengths, absorbed=absorbed,
        final_states=final_states, policy_version=policy_version,
    )


# ---------------------------------------------------------------------------
# generic path: any policy object with action_dist / batch_dist
# ---------------------------------------------------------------------------

def _generic_episodes(
    game, comps, comp_probs, per_step, vic_policy, imitator, blind_mask,
    pred_mode, U, i0, i1, states, adv_a, vic_a, imit_a, lengths, absorbed,
):
    X = game.dense_obs()
    n_vic = game.n_vic_actions
    aug = game.obs_layout.with_block("pred", n_vic)
    comp_cdf = np.cumsum(comp_probs)
    mask = None
    if blind_mask is not None:
        mask = np.zeros(aug.size, dtype=bool)
        bm = np.asarray(blind_mask, dtype=bool)
        mask[: len(bm)] = bm

    def adv_obs(policy, s, pred_onehot):
        if policy.obs_layout == aug:
            obs = np.concatenate([X[s], pred_onehot])
        else:
            obs = X[s].copy()
        if mask is not None:
            obs = np.where(mask[: len(obs)], 0.0, obs)
        return obs

    for i in range(i0, i1):
        comp = 0
        if len(comps) > 1 and not per_step:
            comp = _pick_cdf(comp_cdf, U[i, 0, 0])
        s = game.start_state
        states[i, 0] = s
        t, done = 0, False
        while t < game.horizon and not done:
            pred_onehot = np.zeros(n_vic)
            pred = NO_IMITATOR
            if imitator is not None:
                dist = imitator.action_dist(X[s])
                if pred_mode == "dist":
                    pred_onehot = dist
                else:
                    pred = _pick(dist, U[i, t, 1])
                    pred_onehot[pred] = 1.0
            if len(comps) > 1 and per_step:
                comp = _pick_cdf(comp_cdf, U[i, t, 0])
            aa = _pick(comps[comp].action_dist(adv_obs(comps[comp], s, pred_onehot)), U[i, t, 2])
            av = _pick(vic_policy.action_dist(X[s]), U[i, t, 3])
            s = _pick(game.transition[s, aa, av], U[i, t, 4])
            adv_a[i, t], vic_a[i, t], imit_a[i, t] = aa, av, pred
            states[i, t + 1] = s
            done = bool(game.absorbing[s])
            t += 1
        lengths[i] = t
        absorbed[i] = done
