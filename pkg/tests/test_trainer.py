"""Trainer orchestration: configs, buffers, full runs, checkpoint/resume."""

import dataclasses
import json
import os

import numpy as np
import pytest

from advpol.game import EnvSpec, make_env
from advpol.policy import LinearSoftmaxPolicy, load_policy, save_policy
from advpol.rollout import rollout_batch
from advpol.trainer import (
    METRICS_HEADER,
    BufferSet,
    TrainConfig,
    make_victim,
    restore,
    retrain_victim,
    train_apil,
)


@pytest.fixture(scope="module")
def victim_file(tmp_path_factory):
    """A lightly pretrained rps victim on disk, plus the policy itself."""
    vic = make_victim("markov_rps", total_steps=1500, batch_size=500, seed=5)
    path = str(tmp_path_factory.mktemp("victim") / "victim.json")
    save_policy(vic, path)
    return path, vic


def tiny_config(out_dir, victim_path, **overrides):
    base = dict(
        env="markov_rps",
        total_steps=600,
        batch_size=200,
        inner_epochs=2,
        warmup_cycles=1,
        checkpoint_every=250,
        eval_episodes=64,
        seed=11,
        output_dir=str(out_dir),
        victim=victim_path,
    )
    base.update(overrides)
    return TrainConfig(**base)


# ===========================================================================
# configuration
# ===========================================================================

class TestTrainConfig:
    def test_env_string_coerces_to_spec(self):
        cfg = TrainConfig(env="markov_rps")
        assert cfg.env == EnvSpec("markov_rps")

    def test_env_dict_coerces_to_spec(self):
        cfg = TrainConfig(env={"name": "grid_pass", "params": {}})
        assert cfg.env == EnvSpec("grid_pass")

    def test_clamp_becomes_float_tuple(self):
        cfg = TrainConfig(env="markov_rps", clamp=[0.05, 0.95])
        assert cfg.clamp == (0.05, 0.95)
        assert isinstance(cfg.clamp, tuple)

    def test_json_roundtrip(self, tmp_path):
        cfg = TrainConfig(
            env="push_duel", total_steps=123, seed=9, gamma=0.8,
            mode="ablation_no_imitator", method="reinforce", blind=True,
        )
        assert TrainConfig.from_json(cfg.to_json()) == cfg
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_json()))
        assert TrainConfig.from_json(path) == cfg

    def test_unknown_field_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            TrainConfig.from_json({"env": "markov_rps", "learning_rate": 0.1})

    @pytest.mark.parametrize(
        "field,value,match",
        [
            ("mode", "sideways", "mode"),
            ("method", "sgd", "method"),
            ("total_steps", -1, "total_steps"),
            ("batch_size", 0, "batch_size"),
            ("inner_epochs", 0, "inner_epochs"),
            ("eval_episodes", 0, "eval_episodes"),
            ("checkpoint_every", 0, "checkpoint_every"),
            ("mix_p", 1.5, "mix_p"),
            ("gamma", 1.0, "gamma"),
        ],
    )
    def test_validation_rejects(self, field, value, match):
        with pytest.raises(ValueError, match=match):
            TrainConfig(env="markov_rps", **{field: value})

    def test_make_game_gamma_override(self):
        assert TrainConfig(env="markov_rps", gamma=0.7).make_game().gamma == 0.7
        default = make_env("markov_rps").gamma
        assert TrainConfig(env="markov_rps").make_game().gamma == default


# ===========================================================================
# rollout buffers
# ===========================================================================

class TestBufferSet:
    def test_add_indexes_every_row(self, rng):
        game = make_env("markov_rps")
        adv = LinearSoftmaxPolicy(game.obs_layout, game.n_adv_actions)
        vic = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
        imit = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
        trajs = rollout_batch(game, adv, vic, 8, imitator=imit, rng=rng)
        buf = BufferSet(capacity=10**9)
        buf.add(game, trajs)

        delta = game.adv_reward - game.vic_reward
        adv_rows, imit_rows, expert, shadow = [], [], [], []
        for tr in trajs:
            here = tr.states[:-1]
            adv_rows += list(
                zip(tr.states[1:].tolist(), tr.adv_actions.tolist(),
                    delta[tr.states[1:]].tolist())
            )
            imit_rows += list(
                zip(here.tolist(), tr.imit_actions.tolist(),
                    game.adv_reward[here].tolist())
            )
            expert += list(zip(here.tolist(), tr.vic_actions.tolist()))
            shadow += list(zip(here.tolist(), tr.imit_actions.tolist()))
        assert buf.steps == sum(len(t) for t in trajs)
        assert buf.trajectories == list(trajs)
        assert buf.adv_replay == adv_rows
        assert buf.imit_replay == imit_rows
        assert buf.expert_traj == expert
        assert buf.imit_traj == shadow

    def test_full_flag_and_clear(self, rng):
        game = make_env("markov_rps")
        adv = LinearSoftmaxPolicy(game.obs_layout, game.n_adv_actions)
        vic = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
        trajs = rollout_batch(game, adv, vic, 4, rng=rng)
        n = sum(len(t) for t in trajs)
        buf = BufferSet(capacity=n)
        assert not buf.full and buf.empty()
        buf.add(game, trajs)
        assert buf.full
        assert BufferSet(capacity=n + 1).capacity > n
        buf.clear()
        assert buf.empty() and buf.steps == 0 and not buf.trajectories


# ===========================================================================
# victim pretraining
# ===========================================================================

class TestMakeVictim:
    def test_deterministic_in_seed(self, victim_file):
        _, vic = victim_file
        again = make_victim("markov_rps", total_steps=1500, batch_size=500, seed=5)
        assert np.array_equal(vic.params, again.params)

    def test_shape_and_movement(self, victim_file):
        _, vic = victim_file
        game = make_env("markov_rps")
        assert vic.obs_layout == game.obs_layout
        assert vic.n_actions == game.n_vic_actions
        assert np.abs(vic.params).sum() > 0


# ===========================================================================
# the adversary-training loop
# ===========================================================================

@pytest.fixture(scope="module")
def run(victim_file, tmp_path_factory):
    """One complete tiny training run, shared read-only by the tests below."""
    victim_path, _ = victim_file
    out = tmp_path_factory.mktemp("run_a")
    cfg = tiny_config(out, victim_path)
    artifacts = train_apil(cfg)
    return cfg, artifacts


class TestTrainApil:
    def test_artifacts_exist(self, run):
        cfg, art = run
        assert sorted(art) == ["config", "final_checkpoint", "metrics", "report", "step"]
        for key in ("config", "final_checkpoint", "metrics", "report"):
            assert os.path.exists(art[key]), key
        assert art["step"] >= cfg.total_steps

    def test_metrics_file_shape(self, run):
        _, art = run
        lines = open(art["metrics"], encoding="utf-8").read().splitlines()
        assert lines[0] == METRICS_HEADER
        assert lines[0] == "step,win_rate,tie_rate,loss_rate,imitation_gap,adv_objective,eta_mean"
        steps = []
        for row in lines[1:]:
            parts = row.split(",")
            assert len(parts) == 7
            steps.append(int(parts[0]))
            w, t, l = (float(p) for p in parts[1:4])
            assert w + t + l == pytest.approx(1.0, abs=1e-12)
            assert 0.0 <= float(parts[4]) <= 1.0  # imitation gap is a TV distance
        assert steps == sorted(steps) and len(set(steps)) == len(steps)

    def test_checkpoint_naming(self, run):
        cfg, art = run
        out = cfg.output_dir
        assert os.path.exists(os.path.join(out, "ckpt_0.json"))
        assert art["final_checkpoint"] == os.path.join(out, f"ckpt_{art['step']}.json")
        state = restore(art["final_checkpoint"])
        assert state.step == art["step"]

    def test_config_echo_roundtrip(self, run):
        cfg, art = run
        assert TrainConfig.from_json(art["config"]) == cfg

    def test_report_contents(self, run):
        cfg, art = run
        rep = json.load(open(art["report"], encoding="utf-8"))
        assert rep["episodes"] == cfg.eval_episodes
        assert rep["wins"] + rep["ties"] + rep["losses"] == rep["episodes"]
        assert len(rep["fingerprint"]) == 64
        int(rep["fingerprint"], 16)

    def test_victim_stays_frozen(self, run, victim_file):
        _, art = run
        _, vic = victim_file
        state = restore(art["final_checkpoint"])
        assert np.array_equal(state.victim.params, vic.params)

    def test_same_seed_rerun_is_byte_identical(self, run, tmp_path):
        cfg, art = run
        again = train_apil(dataclasses.replace(cfg, output_dir=str(tmp_path)))
        for key in ("metrics", "report"):
            assert open(art[key], "rb").read() == open(again[key], "rb").read(), key

    def test_resume_matches_uninterrupted_run(self, victim_file, tmp_path):
        victim_path, _ = victim_file
        cfg = tiny_config(tmp_path, victim_path, seed=23)
        art = train_apil(cfg)
        snap = {
            key: open(art[key], "rb").read()
            for key in ("metrics", "report", "final_checkpoint")
        }
        mid = os.path.join(str(tmp_path), "ckpt_256.json")
        assert os.path.exists(mid) and mid != art["final_checkpoint"]
        resumed = train_apil(None, resume_from=mid)
        assert resumed["step"] == art["step"]
        for key, blob in snap.items():
            assert open(resumed[key], "rb").read() == blob, key

    def test_warmup_freezes_adversary(self, victim_file, tmp_path):
        victim_path, _ = victim_file
        cfg = tiny_config(tmp_path, victim_path, total_steps=500, warmup_cycles=10**6)
        art = train_apil(cfg)
        state = restore(art["final_checkpoint"])
        assert not np.any(state.adv_state.policy.params)
        assert state.adv_state.policy.version == 0
        assert np.any(state.imit_state.policy.params)
        assert np.any(state.imit_state.discriminator.params)

    def test_ablation_runs_without_imitator(self, victim_file, tmp_path):
        victim_path, _ = victim_file
        cfg = tiny_config(
            tmp_path, victim_path, mode="ablation_no_imitator",
            total_steps=500, warmup_cycles=0,
        )
        art = train_apil(cfg)
        rows = open(art["metrics"], encoding="utf-8").read().splitlines()[1:]
        assert rows and all(r.split(",")[4] == "1.0" for r in rows)
        assert all(r.split(",")[6] == "0.0" for r in rows)
        state = restore(art["final_checkpoint"])
        assert not state.adv_state.use_imitator_input
        assert np.any(state.adv_state.policy.params)  # adversary still trains

    def test_zero_steps_with_bound_sweep(self, victim_file, tmp_path):
        victim_path, _ = victim_file
        cfg = tiny_config(
            tmp_path, victim_path, total_steps=0, eval_episodes=16,
            verify_on_finish=True,
        )
        art = train_apil(cfg)
        assert art["step"] == 0
        lines = open(art["metrics"], encoding="utf-8").read().splitlines()
        assert lines == [METRICS_HEADER]
        assert os.path.exists(os.path.join(str(tmp_path), "ckpt_0.json"))
        assert os.path.exists(art["report"])
        bound_lines = open(art["bounds"], encoding="utf-8").read().splitlines()
        rows = [json.loads(line) for line in bound_lines]
        summary = rows[-1]["summary"]
        assert summary["total"] == len(rows) - 1
        assert summary["passed"] + summary["failed"] == summary["total"]
        assert all("check_name" in r for r in rows[:-1])

    def test_needs_config_or_checkpoint(self):
        with pytest.raises(ValueError, match="need a config or a checkpoint"):
            train_apil(None)

    def test_retrain_mode_is_rejected(self, victim_file):
        victim_path, _ = victim_file
        cfg = TrainConfig(env="markov_rps", mode="retrain_victim", victim=victim_path)
        with pytest.raises(ValueError, match="retrain_victim"):
            train_apil(cfg)

    def test_missing_victim_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="must point"):
            train_apil(TrainConfig(env="markov_rps", victim=None))
        ghost = str(tmp_path / "ghost.json")
        with pytest.raises(FileNotFoundError, match="ghost.json"):
            train_apil(TrainConfig(env="markov_rps", victim=ghost))

    def test_victim_environment_mismatch(self, victim_file, tmp_path):
        _, vic = victim_file
        wrong = LinearSoftmaxPolicy(vic.obs_layout, vic.n_actions + 1)
        path = str(tmp_path / "wrong.json")
        save_policy(wrong, path)
        cfg = tiny_config(tmp_path, path)
        with pytest.raises(ValueError, match="does not match the environment"):
            train_apil(cfg)

    def test_restore_rejects_policy_file(self, victim_file):
        victim_path, _ = victim_file
        with pytest.raises(ValueError, match="not a training checkpoint"):
            restore(victim_path)

    def test_restore_rejects_foreign_schema(self, run, tmp_path):
        _, art = run
        data = json.load(open(art["final_checkpoint"], encoding="utf-8"))
        data["schema_version"] = 999
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(data))
        with pytest.raises(ValueError, match="schema_version"):
            restore(bad)


# ===========================================================================
# victim retraining
# ===========================================================================

@pytest.fixture(scope="module")
def retrain_files(victim_file, tmp_path_factory):
    """Victim plus plain/augmented adversary checkpoints for retraining."""
    victim_path, _ = victim_file
    game = make_env("markov_rps")
    rng = np.random.default_rng(77)
    root = tmp_path_factory.mktemp("retrain_inputs")

    def dump(policy, name):
        path = str(root / name)
        save_policy(policy, path)
        return path

    trained = LinearSoftmaxPolicy(game.obs_layout, game.n_adv_actions)
    trained.params = rng.normal(0.0, 0.8, size=trained.params.shape)
    aug = game.obs_layout.with_block("pred", game.n_vic_actions)
    trained_aug = LinearSoftmaxPolicy(aug, game.n_adv_actions)
    trained_aug.params = rng.normal(0.0, 0.8, size=trained_aug.params.shape)
    imit = LinearSoftmaxPolicy(game.obs_layout, game.n_vic_actions)
    imit.params = rng.normal(0.0, 0.3, size=imit.params.shape)
    return {
        "victim": victim_path,
        "trained": dump(trained, "adv.json"),
        "trained_aug": dump(trained_aug, "adv_aug.json"),
        "baseline": dump(LinearSoftmaxPolicy(game.obs_layout, game.n_adv_actions), "base.json"),
        "imitator": dump(imit, "imit.json"),
    }


class TestRetrainVictim:
    def test_artifacts_and_victim_movement(self, retrain_files, victim_file, tmp_path):
        _, vic = victim_file
        cfg = TrainConfig(
            env="markov_rps", mode="retrain_victim", total_steps=400,
            batch_size=200, inner_epochs=2, eval_episodes=48, seed=3,
            output_dir=str(tmp_path), victim=retrain_files["victim"],
            adversary=retrain_files["trained"],
            baseline_adversary=retrain_files["baseline"],
        )
        art = retrain_victim(cfg)
        assert sorted(art) == [
            "metrics", "report_after", "report_before",
            "report_vs_baseline", "step", "victim",
        ]
        assert art["victim"] == os.path.join(str(tmp_path), "victim_retrained.json")
        retrained = load_policy(art["victim"])
        assert retrained.obs_layout == vic.obs_layout
        assert not np.array_equal(retrained.params, vic.params)

        rows = open(art["metrics"], encoding="utf-8").read().splitlines()
        assert rows[0] == METRICS_HEADER
        # no imitator in this mode: the gap/eta columns are placeholders
        assert all(r.split(",")[4] == "1.0" for r in rows[1:])
        assert all(r.split(",")[6] == "0.0" for r in rows[1:])

        before = json.load(open(art["report_before"], encoding="utf-8"))
        after = json.load(open(art["report_after"], encoding="utf-8"))
        base = json.load(open(art["report_vs_baseline"], encoding="utf-8"))
        assert {before["episodes"], after["episodes"], base["episodes"]} == {48}
        # the victim changed, so the before/after evals fingerprint differently
        assert before["fingerprint"] != after["fingerprint"]

    def test_missing_checkpoint_named_in_error(self, retrain_files, tmp_path):
        cfg = TrainConfig(
            env="markov_rps", mode="retrain_victim", output_dir=str(tmp_path),
            victim=retrain_files["victim"], adversary=retrain_files["trained"],
            baseline_adversary=None,
        )
        with pytest.raises(FileNotFoundError, match="baseline_adversary"):
            retrain_victim(cfg)

    def test_augmented_adversary_requires_imitator(self, retrain_files, tmp_path):
        cfg = TrainConfig(
            env="markov_rps", mode="retrain_victim", total_steps=200,
            batch_size=200, eval_episodes=16, output_dir=str(tmp_path),
            victim=retrain_files["victim"], adversary=retrain_files["trained_aug"],
            baseline_adversary=retrain_files["baseline"],
        )
        with pytest.raises(FileNotFoundError, match="imitator"):
            retrain_victim(cfg)

    def test_mixed_layouts_align(self, retrain_files, tmp_path):
        # augmented trained adversary vs plain baseline: the plain side is
        # lifted with zero prediction weights so the mixture has one layout
        cfg = TrainConfig(
            env="markov_rps", mode="retrain_victim", total_steps=200,
            batch_size=200, eval_episodes=16, seed=8, output_dir=str(tmp_path),
            victim=retrain_files["victim"], adversary=retrain_files["trained_aug"],
            baseline_adversary=retrain_files["baseline"],
            imitator=retrain_files["imitator"],
        )
        art = retrain_victim(cfg)
        assert os.path.exists(art["victim"])
        assert art["step"] >= 200

    def test_mode_is_coerced(self, retrain_files, tmp_path):
        cfg = TrainConfig(
            env="markov_rps", mode="train_adversary", total_steps=200,
            batch_size=200, eval_episodes=16, output_dir=str(tmp_path),
            victim=retrain_files["victim"], adversary=retrain_files["trained"],
            baseline_adversary=retrain_files["baseline"],
        )
        retrain_victim(cfg)
        echo = json.load(open(os.path.join(str(tmp_path), "config.json"), encoding="utf-8"))
        assert echo["mode"] == "retrain_victim"
