"""Training orchestration: the interleaved imitator/adversary loop.

One coordinator owns all mutable state. Each cycle collects rollouts into
the four-buffer set until the step threshold, runs the inner update epochs
(discriminator, imitator policy, adversary policy), clears the buffers,
logs a metrics row, and occasionally checkpoints. A single master RNG
drives everything — rollout blocks are drawn in one call per chunk, so
results are independent of worker count — which makes runs reproducible
byte-for-byte and resumable from any checkpoint.

The victim stays frozen in adversary training; victim retraining unfreezes
it against a per-episode mixture of a trained and a baseline adversary,
maximizing its own reward with the same estimator machinery.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .adversary import AdversaryState, adv_update
from .game import NO_IMITATOR, EnvSpec, MarkovGame, make_env
from .imitator import (
    Discriminator,
    ImitatorState,
    disc_update,
    imit_policy_update,
    imitation_gap,
    imitator_from_json,
    imitator_to_json,
)
from .oracle import exact_objective, marginal_adv_matrix, policy_matrix
from .policy import (
    SCHEMA_VERSION,
    LinearSoftmaxPolicy,
    MixedPolicy,
    mix_policies,
    policy_from_json,
    policy_to_json,
)
from .rollout import EpisodeBatch, batch_from_trajectories, rollout_batch

log = logging.getLogger("advpol.trainer")

METRICS_HEADER = "step,win_rate,tie_rate,loss_rate,imitation_gap,adv_objective,eta_mean"

MODES = ("train_adversary", "retrain_victim", "ablation_no_imitator")
METHODS = ("reinforce", "ppo_clip")

_CHUNK_EPISODES = 64


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    """Everything a run needs; JSON-loadable, CLI-overridable."""

    env: EnvSpec
    mode: str = "train_adversary"
    enhanced: bool = True
    total_steps: int = 500_000
    batch_size: int = 2048
    inner_epochs: int = 4
    lr_adversary: float = 0.05
    lr_imitator: float = 0.05
    lr_disc: float = 0.2
    disc_l2: float = 0.0
    entropy_coeff: float = 0.01
    clamp: tuple = (0.01, 0.99)
    clip_eps: float = 0.2
    gamma: float | None = None
    mix_p: float = 0.5
    seed: int = 0
    output_dir: str = "run"
    victim: str | None = None
    adversary: str | None = None
    baseline_adversary: str | None = None
    imitator: str | None = None
    method: str = "ppo_clip"
    disc_arch: str = "linear"
    blind: bool = False
    warmup_cycles: int = 5
    checkpoint_every: int = 50_000
    eval_episodes: int = 1000
    verify_on_finish: bool = False
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.env, str):
            self.env = EnvSpec(self.env)
        elif isinstance(self.env, dict):
            self.env = EnvSpec.from_json(self.env)
        self.clamp = tuple(float(c) for c in self.clamp)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        for name in ("batch_size", "inner_epochs", "eval_episodes", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.disc_l2 < 0:
            raise ValueError("disc_l2 must be >= 0")
        if not (0.0 <= self.mix_p <= 1.0):
            raise ValueError("mix_p outside [0, 1]")
        if self.gamma is not None and not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma outside [0, 1)")

    def to_json(self) -> dict:
        data = dataclasses.asdict(self)
        data["env"] = self.env.to_json()
        data["clamp"] = list(self.clamp)
        return data

    @classmethod
    def from_json(cls, data) -> "TrainConfig":
        if isinstance(data, (str, os.PathLike)):
            with open(data, encoding="utf-8") as fh:
                data = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    def make_game(self) -> MarkovGame:
        overrides = {} if self.gamma is None else {"gamma": self.gamma}
        return make_env(self.env, **overrides)


# ---------------------------------------------------------------------------
# the four-buffer set
# ---------------------------------------------------------------------------

@dataclass
class BufferSet:
    """Algorithm's four rollout buffers; always cleared together.

    adv_replay rows are (next_state, adv_action, differentiated_reward);
    imit_replay rows are (state, predicted_action, adv_reward_at_state) —
    the shaped reward is recomputed from the live discriminator at update
    time; expert_traj and imit_traj hold the (state, action) pairs the
    discriminator consumes.
    """

    capacity: int
    trajectories: list = field(default_factory=list)
    adv_replay: list = field(default_factory=list)
    imit_replay: list = field(default_factory=list)
    expert_traj: list = field(default_factory=list)
    imit_traj: list = field(default_factory=list)
    steps: int = 0

    @property
    def full(self) -> bool:
        return self.steps >= self.capacity

    def add(self, game: MarkovGame, trajs):
        delta = game.adv_reward - game.vic_reward
        for tr in trajs:
            self.trajectories.append(tr)
            here = tr.states[:-1]
            self.steps += len(tr)
            self.adv_replay.extend(
                zip(tr.states[1:].tolist(), tr.adv_actions.tolist(), delta[tr.states[1:]].tolist())
            )
            self.imit_replay.extend(
                zip(here.tolist(), tr.imit_actions.tolist(), game.adv_reward[here].tolist())
            )
            self.expert_traj.extend(zip(here.tolist(), tr.vic_actions.tolist()))
            self.imit_traj.extend(zip(here.tolist(), tr.imit_actions.tolist()))

    def clear(self):
        self.trajectories.clear()
        self.adv_replay.clear()
        self.imit_replay.clear()
        self.expert_traj.clear()
        self.imit_traj.clear()
        self.steps = 0

    def empty(self) -> bool:
        return (
            self.steps == 0
            and not self.trajectories
            and not self.adv_replay
            and not self.imit_replay
            and not self.expert_traj
            and not self.imit_traj
        )


# ---------------------------------------------------------------------------
# metrics plumbing
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _metrics_row(step, rates, gap, objective, eta_mean) -> str:
    w, t, l = rates
    return ",".join(
        [str(step), _fmt(w), _fmt(t), _fmt(l), _fmt(gap), _fmt(objective), _fmt(eta_mean)]
    )


def _outcome_rates(trajs) -> tuple:
    n = len(trajs)
    w = sum(1 for t in trajs if t.outcome == "adv_win") / n
    tie = sum(1 for t in trajs if t.outcome == "tie") / n
    return w, tie, 1.0 - w - tie


class _MetricsFile:
    """Append-mode CSV that can be truncated to a checkpointed row count."""

    def __init__(self, path, rows_already: int = 0):
        self.path = path
        self.rows = 0
        if rows_already and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                lines = fh.read().splitlines()
            kept = lines[: 1 + rows_already]
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(kept) + "\n")
            self.rows = rows_already
        else:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(METRICS_HEADER + "\n")

    def append(self, row: str):
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(row + "\n")
        self.rows += 1


# ---------------------------------------------------------------------------
# trainer state and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class TrainerState:
    config: TrainConfig
    game: MarkovGame
    adv_state: AdversaryState
    imit_state: ImitatorState
    victim: object
    rng: np.random.Generator
    step: int = 0
    cycle: int = 0
    csv_rows: int = 0

    @property
    def trained_policy(self):
        """The policy being optimized in the current mode."""
        return self.victim if self.config.mode == "retrain_victim" else self.adv_state.policy


def checkpoint(state: TrainerState, path):
    data = {
        "kind": "train_state",
        "schema_version": SCHEMA_VERSION,
        "config": state.config.to_json(),
        "step": state.step,
        "cycle": state.cycle,
        "csv_rows": state.csv_rows,
        "rng_state": state.rng.bit_generator.state,
        "adversary": policy_to_json(state.adv_state.policy),
        "use_imitator_input": state.adv_state.use_imitator_input,
        "adv_version": state.adv_state.policy.version,
        "imitator": imitator_to_json(state.imit_state),
        "imit_version": state.imit_state.policy.version,
        "victim": policy_to_json(state.victim),
        "victim_version": state.victim.version,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, sort_keys=True)
        fh.write("\n")


def restore(path) -> TrainerState:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"checkpoint schema_version {data.get('schema_version')!r} not supported "
            f"(expected {SCHEMA_VERSION})"
        )
    if data.get("kind") != "train_state":
        raise ValueError(f"not a training checkpoint: kind={data.get('kind')!r}")
    config = TrainConfig.from_json(data["config"])
    game = config.make_game()
    adv_policy = policy_from_json(data["adversary"])
    adv_policy.version = int(data["adv_version"])
    imit_state = imitator_from_json(data["imitator"])
    imit_state.policy.version = int(data["imit_version"])
    victim = policy_from_json(data["victim"])
    victim.version = int(data["victim_version"])
    rng = np.random.default_rng()
    rng.bit_generator.state = data["rng_state"]
    from .policy import state_blind_mask

    return TrainerState(
        config=config,
        game=game,
        adv_state=AdversaryState(
            policy=adv_policy,
            clip_eps=config.clip_eps,
            use_imitator_input=bool(data["use_imitator_input"]),
            blind_mask=state_blind_mask(game) if config.blind else None,
        ),
        imit_state=imit_state,
        victim=victim,
        rng=rng,
        step=int(data["step"]),
        cycle=int(data["cycle"]),
        csv_rows=int(data["csv_rows"]),
    )


# ---------------------------------------------------------------------------
# shared update helpers
# ---------------------------------------------------------------------------

def _victim_update(policy, batch: EpisodeBatch, lr, method, clip_eps,
                   behavior_log_probs=None):
    """Plain policy-gradient ascent on the victim's own reward."""
    game = batch.game
    m = batch.mask
    rows = game.dense_obs()[batch.states[m]]
    acts = batch.vic_actions[m]
    N = len(batch)
    if method == "reinforce":
        returns = batch.state_returns(game.vic_reward)
        w = np.repeat(returns / N, batch.lengths)
        policy.apply_step(lr * policy.weighted_score_sum(rows, acts, w))
        return policy
    gamma = game.gamma
    step_r = np.where(m, game.vic_reward[batch.states], 0.0)
    tail = np.where(
        batch.absorbed,
        gamma ** batch.lengths / (1.0 - gamma) * game.vic_reward[batch.final_states],
        0.0,
    )
    from .rollout import discounted_suffix_sums

    G = discounted_suffix_sums(step_r, m, gamma, tail, batch.lengths)
    adv_w = G[m] - G[m].mean()
    new_logp = policy.log_probs(rows, acts)
    old_logp = new_logp if behavior_log_probs is None else np.asarray(behavior_log_probs)
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * adv_w
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv_w
    active = unclipped <= clipped + 1e-15
    w = np.where(active, ratio * adv_w, 0.0) * batch.discounts[m] / N
    policy.apply_step(lr * policy.weighted_score_sum(rows, acts, w))
    return policy


def _collect(state: TrainerState, buffers: BufferSet, adv_policy, vic_policy,
             imitator, blind_mask=None):
    """Fill the buffer set to capacity with fresh rollouts."""
    cfg = state.config
    while not buffers.full:
        trajs = rollout_batch(
            state.game, adv_policy, vic_policy, _CHUNK_EPISODES,
            imitator=imitator, rng=state.rng, workers=cfg.workers,
            blind_mask=blind_mask,
        )
        buffers.add(state.game, trajs)
    state.step += buffers.steps


def _marginal_probs(game, adv_policy, imit_probs, blind_mask=None) -> np.ndarray:
    """Marginal adversary matrix honoring an observation mask.

    pi(a|s) = sum_j imit(j|s) * adv(a | blind(s ++ onehot(j))).
    """
    from .policy import blind as blind_obs

    X = game.dense_obs()
    S, n_vic = imit_probs.shape
    out = np.zeros((S, game.n_adv_actions))
    for j in range(n_vic):
        pred = np.zeros((S, n_vic))
        pred[:, j] = 1.0
        rows = np.hstack([X, pred])
        if blind_mask is not None:
            full = np.zeros(rows.shape[1], dtype=bool)
            bm = np.asarray(blind_mask, dtype=bool)
            full[: len(bm)] = bm
            rows = blind_obs(rows, full)
        out += imit_probs[:, [j]] * adv_policy.batch_dist(rows)
    return out


def _exact_adv_objective(state: TrainerState) -> float:
    """Exact current objective of the adversary (marginalized over preds)."""
    game = state.game
    cfg = state.config
    pol = state.adv_state.policy
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    if pol.obs_layout == aug:
        if state.adv_state.use_imitator_input:
            imit_probs = policy_matrix(game, state.imit_state.policy, "victim")
        else:
            imit_probs = np.zeros((game.n_states, game.n_vic_actions))
            imit_probs[:, 0] = 1.0  # pred block is zeroed; any point mass works
        if not state.adv_state.use_imitator_input:
            # flag-off rollouts feed an all-zero pred block, not a one-hot
            X = np.hstack(
                [game.dense_obs(), np.zeros((game.n_states, game.n_vic_actions))]
            )
            if state.adv_state.blind_mask is not None:
                from .policy import blind as blind_obs

                full = np.zeros(X.shape[1], dtype=bool)
                bm = np.asarray(state.adv_state.blind_mask, dtype=bool)
                full[: len(bm)] = bm
                X = blind_obs(X, full)
            probs = pol.batch_dist(X)
        else:
            probs = _marginal_probs(game, pol, imit_probs, state.adv_state.blind_mask)
    else:
        probs = policy_matrix(game, pol, "adversary")
    select = "delta" if cfg.enhanced else "adv"
    return exact_objective(game, probs, state.victim, select)


def _eta_mean(state: TrainerState, batch: EpisodeBatch) -> float:
    keep = batch.mask & (batch.imit_actions != NO_IMITATOR)
    if not keep.any():
        return 0.0
    d = state.imit_state.discriminator
    s = batch.states[keep]
    vals = np.log(np.maximum(d.forward(s, batch.imit_actions[keep]), 1e-12))
    if state.imit_state.enhanced:
        vals = vals - state.game.adv_reward[s]
    return float(vals.mean())


def _behavior_logps(state: TrainerState, batch: EpisodeBatch):
    """Collection-time log-probs for the PPO ratio denominators."""
    game = state.game
    m = batch.mask
    X = game.dense_obs()
    imit_lp = None
    if state.config.mode != "ablation_no_imitator":
        imit_lp = state.imit_state.policy.log_probs(
            X[batch.states[m]], batch.imit_actions[m]
        )
    from .adversary import _augmented_rows

    adv_lp = state.adv_state.policy.log_probs(
        _augmented_rows(state.adv_state, batch), batch.adv_actions[m]
    )
    vic_lp = state.victim.log_probs(X[batch.states[m]], batch.vic_actions[m])
    return imit_lp, adv_lp, vic_lp


# ---------------------------------------------------------------------------
# main entry points
# ---------------------------------------------------------------------------

def _init_trainer(config: TrainConfig) -> TrainerState:
    if config.victim is None:
        raise FileNotFoundError("config.victim must point to a victim checkpoint")
    if not os.path.exists(config.victim):
        raise FileNotFoundError(f"victim checkpoint not found: {config.victim}")
    game = config.make_game()
    victim = _load_policy_file(config.victim)
    if victim.obs_layout != game.obs_layout or victim.n_actions != game.n_vic_actions:
        raise ValueError("victim checkpoint does not match the environment")
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    use_imit = config.mode != "ablation_no_imitator"
    adv_policy = LinearSoftmaxPolicy(aug, game.n_adv_actions)
    imit_policy = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
    rng = np.random.default_rng(config.seed)
    # seed-derived init: a zero-initialized hidden layer has no gradient
    # (w2 = 0 gates the backward pass), so the one_hidden arch never trains
    disc = Discriminator(
        game.n_states, game.n_vic_actions, arch=config.disc_arch,
        clamp=config.clamp, rng=rng,
    )
    from .policy import state_blind_mask

    return TrainerState(
        config=config,
        game=game,
        adv_state=AdversaryState(
            policy=adv_policy, clip_eps=config.clip_eps, use_imitator_input=use_imit,
            blind_mask=state_blind_mask(game) if config.blind else None,
        ),
        imit_state=ImitatorState(
            policy=imit_policy,
            discriminator=disc,
            entropy_coeff=config.entropy_coeff,
            enhanced=config.enhanced,
        ),
        victim=victim,
        rng=rng,
    )


def _load_policy_file(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("kind") == "train_state":
        return policy_from_json(data["victim"])
    if "policy" in data and "discriminator" in data:
        return imitator_from_json(data).policy
    return policy_from_json(data)


def _write_config_echo(config: TrainConfig):
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def train_apil(config: TrainConfig | None, resume_from=None) -> dict:
    """Run the full adversary-training loop; returns artifact paths.

    Each buffer cycle: collect to batch_size steps, then inner_epochs of
    {discriminator update, imitator update, adversary update}, then clear.
    The adversary sits out the first warmup_cycles (its prediction inputs
    are still collected, so the discriminator and imitator see the same
    data distribution they will train on). ``resume_from`` continues an
    earlier run from its checkpoint, which carries the resolved config.
    """
    if config is None and resume_from is None:
        raise ValueError("need a config or a checkpoint to resume from")
    if config is not None and config.mode == "retrain_victim":
        raise ValueError("use retrain_victim() for mode='retrain_victim'")
    state = restore(resume_from) if resume_from else _init_trainer(config)
    config = state.config
    _write_config_echo(config)
    out = config.output_dir
    metrics = _MetricsFile(
        os.path.join(out, "metrics.csv"),
        rows_already=state.csv_rows if resume_from else 0,
    )
    victim_before = state.victim.params

    ckpt_path = os.path.join(out, f"ckpt_{state.step}.json")
    if not resume_from:
        checkpoint(state, ckpt_path)
    use_imit = config.mode != "ablation_no_imitator"
    imitator = state.imit_state.policy if use_imit else None
    buffers = BufferSet(capacity=config.batch_size)
    next_ckpt = (state.step // config.checkpoint_every + 1) * config.checkpoint_every
    reward_select = "delta" if config.enhanced else "adv"

    while state.step < config.total_steps:
        _collect(
            state, buffers, state.adv_state.policy, state.victim, imitator,
            blind_mask=state.adv_state.blind_mask,
        )
        batch = batch_from_trajectories(
            state.game, buffers.trajectories, policy_version=state.adv_state.policy.version
        )
        imit_lp, adv_lp, _ = _behavior_logps(state, batch)
        imit_batch = dataclasses.replace(
            batch, policy_version=state.imit_state.policy.version
        )
        state.cycle += 1
        adv_active = state.cycle > config.warmup_cycles

        for epoch in range(config.inner_epochs):
            if use_imit:
                disc_update(state.imit_state, imit_batch, imit_batch,
                            config.lr_disc, l2=config.disc_l2)
                if config.method == "ppo_clip" or epoch == 0:
                    imit_policy_update(
                        state.imit_state, imit_batch, config.lr_imitator,
                        config.method, clip_eps=config.clip_eps,
                        stale_ok=config.inner_epochs,
                        behavior_log_probs=imit_lp,
                    )
            if adv_active and (config.method == "ppo_clip" or epoch == 0):
                adv_update(
                    state.adv_state, batch, config.lr_adversary, config.method,
                    reward_select=reward_select, stale_ok=config.inner_epochs,
                    behavior_log_probs=adv_lp,
                )

        gap = (
            imitation_gap(
                state.imit_state.policy, state.victim, batch.state_occupancy(), state.game
            )
            if use_imit
            else 1.0
        )
        row = _metrics_row(
            state.step,
            _outcome_rates(buffers.trajectories),
            gap,
            _exact_adv_objective(state),
            _eta_mean(state, batch),
        )
        metrics.append(row)
        state.csv_rows = metrics.rows
        buffers.clear()
        assert buffers.empty()

        if state.step >= next_ckpt or state.step >= config.total_steps:
            checkpoint(state, os.path.join(out, f"ckpt_{state.step}.json"))
            next_ckpt = (state.step // config.checkpoint_every + 1) * config.checkpoint_every
        log.info("cycle %d step %d: %s", state.cycle, state.step, row)

    if np.any(victim_before != state.victim.params):
        raise AssertionError("victim parameters changed during adversary training")

    final_ckpt = os.path.join(out, f"ckpt_{state.step}.json")
    checkpoint(state, final_ckpt)
    artifacts = {
        "final_checkpoint": final_ckpt,
        "metrics": metrics.path,
        "config": os.path.join(out, "config.json"),
        "step": state.step,
    }
    from .evalreport import evaluate, verify_bounds, write_report

    report = evaluate(
        state.game, state.adv_state.policy, state.victim,
        imitator=imitator, episodes=config.eval_episodes,
        rng=np.random.default_rng(config.seed + 1),
        blind_mask=state.adv_state.blind_mask,
        workers=config.workers,
    )
    artifacts["report"] = write_report(report, os.path.join(out, "report.json"))
    if config.verify_on_finish:
        artifacts["bounds"] = verify_bounds(
            state.game, {}, np.random.default_rng(config.seed + 2),
            out_path=os.path.join(out, "bounds.jsonl"),
        )[1]
    return artifacts


def retrain_victim(config: TrainConfig) -> dict:
    """Unfreeze the victim and train it against a mixed adversary.

    The opponent each episode is the trained adversary with probability
    mix_p, the baseline adversary otherwise. Emits the retrained victim
    and before/after evaluations against the trained adversary.
    """
    if config.mode != "retrain_victim":
        config = dataclasses.replace(config, mode="retrain_victim")
    for name in ("victim", "adversary", "baseline_adversary"):
        path = getattr(config, name)
        if path is None or not os.path.exists(path):
            raise FileNotFoundError(f"config.{name} checkpoint missing: {path}")
    game = config.make_game()
    victim = _load_policy_file(config.victim)
    trained_adv = _load_adversary_file(config.adversary)
    baseline_adv = _load_adversary_file(config.baseline_adversary)
    imitator = None
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    needs_imit = any(
        p.obs_layout == aug for p in (trained_adv, baseline_adv)
    )
    if config.imitator is not None:
        imitator = _load_policy_file(config.imitator)
    elif needs_imit:
        raise FileNotFoundError(
            "config.imitator required: an adversary checkpoint reads predictions"
        )
    if trained_adv.obs_layout != baseline_adv.obs_layout:
        # mixtures need a single layout; lift the plain one with zero pred weights
        trained_adv, baseline_adv = _align_layouts(game, trained_adv, baseline_adv)
    mixed = mix_policies(trained_adv, baseline_adv, config.mix_p)

    _write_config_echo(config)
    out = config.output_dir
    metrics = _MetricsFile(os.path.join(out, "metrics.csv"))
    rng = np.random.default_rng(config.seed)

    from .evalreport import evaluate, write_report

    eval_rng_seed = config.seed + 1
    before = evaluate(
        game, trained_adv, victim, imitator=imitator,
        episodes=config.eval_episodes, rng=np.random.default_rng(eval_rng_seed),
        workers=config.workers,
    )

    state = TrainerState(
        config=config, game=game,
        adv_state=AdversaryState(
            policy=mixed, clip_eps=config.clip_eps,
            use_imitator_input=needs_imit,
        ),
        imit_state=ImitatorState(
            policy=LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions),
            discriminator=Discriminator(game.n_states, game.n_vic_actions, clamp=config.clamp),
            entropy_coeff=config.entropy_coeff,
        ),
        victim=victim, rng=rng,
    )
    buffers = BufferSet(capacity=config.batch_size)
    while state.step < config.total_steps:
        _collect(state, buffers, mixed, victim, imitator)
        batch = batch_from_trajectories(game, buffers.trajectories, victim.version)
        m = batch.mask
        vic_lp = victim.log_probs(game.dense_obs()[batch.states[m]], batch.vic_actions[m])
        state.cycle += 1
        for epoch in range(config.inner_epochs):
            if config.method == "ppo_clip" or epoch == 0:
                _victim_update(
                    victim, batch, config.lr_imitator, config.method,
                    config.clip_eps, behavior_log_probs=vic_lp,
                )
        row = _metrics_row(
            state.step, _outcome_rates(buffers.trajectories), 1.0,
            exact_objective(game, _as_probs_for_metrics(game, mixed, imitator), victim, "delta"),
            0.0,
        )
        metrics.append(row)
        state.csv_rows = metrics.rows
        buffers.clear()

    victim_path = os.path.join(out, "victim_retrained.json")
    from .policy import save_policy

    save_policy(victim, victim_path)
    after = evaluate(
        game, trained_adv, victim, imitator=imitator,
        episodes=config.eval_episodes, rng=np.random.default_rng(eval_rng_seed),
        workers=config.workers,
    )
    after_base = evaluate(
        game, baseline_adv, victim, imitator=imitator,
        episodes=config.eval_episodes, rng=np.random.default_rng(eval_rng_seed),
        workers=config.workers,
    )
    artifacts = {
        "victim": victim_path,
        "metrics": metrics.path,
        "report_before": write_report(before, os.path.join(out, "report_before.json")),
        "report_after": write_report(after, os.path.join(out, "report_after.json")),
        "report_vs_baseline": write_report(
            after_base, os.path.join(out, "report_vs_baseline.json")
        ),
        "step": state.step,
    }
    return artifacts


def _as_probs_for_metrics(game, adv_policy, imitator):
    """Marginal adversary matrix for exact-objective metrics."""
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    if isinstance(adv_policy, MixedPolicy):
        p = adv_policy.p_new
        return p * _as_probs_for_metrics(game, adv_policy.new, imitator) + (
            1.0 - p
        ) * _as_probs_for_metrics(game, adv_policy.base, imitator)
    if adv_policy.obs_layout == aug and imitator is not None:
        return marginal_adv_matrix(game, adv_policy, imitator)
    if adv_policy.obs_layout == aug:
        zero_pred = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
        # no imitator attached: predictions behave as uniform
        return marginal_adv_matrix(game, adv_policy, zero_pred)
    return policy_matrix(game, adv_policy, "adversary")


def _align_layouts(game, a, b):
    """Zero-pad a plain-layout linear policy up to the augmented layout."""
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)

    def lift(p):
        if p.obs_layout == aug:
            return p
        if not isinstance(p, LinearSoftmaxPolicy):
            raise TypeError("cannot align a non-linear policy to the augmented layout")
        W = np.zeros((p.n_actions, aug.size))
        W[:, : p.weights.shape[1]] = p.weights
        return LinearSoftmaxPolicy(aug, p.n_actions, W)

    return lift(a), lift(b)


def _load_adversary_file(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if data.get("kind") == "train_state":
        return policy_from_json(data["adversary"])
    return policy_from_json(data)


def make_victim(env: EnvSpec | str, total_steps: int = 60_000, lr: float = 0.1,
                seed: int = 0, batch_size: int = 1024, method: str = "reinforce",
                gamma: float | None = None, workers: int = 1) -> LinearSoftmaxPolicy:
    """Pretrain a victim by self-play: both sides ascend their own reward.

    Returns the victim policy (the adversary side is discarded); the result
    is deterministic in the seed.
    """
    overrides = {} if gamma is None else {"gamma": gamma}
    game = make_env(env, **overrides)
    rng = np.random.default_rng(seed)
    vic = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
    adv = LinearSoftmaxPolicy(game.obs_layout, game.n_adv_actions)
    adv_state = AdversaryState(policy=adv, use_imitator_input=False)
    steps = 0
    buffers = BufferSet(capacity=batch_size)
    while steps < total_steps:
        while not buffers.full:
            trajs = rollout_batch(
                game, adv, vic, _CHUNK_EPISODES, rng=rng, workers=workers
            )
            buffers.add(game, trajs)
        steps += buffers.steps
        batch = batch_from_trajectories(game, buffers.trajectories)
        adv_update(adv_state, batch, lr, method, reward_select="adv")
        _victim_update(vic, batch, lr, method, 0.2)
        buffers.clear()
    return vic
