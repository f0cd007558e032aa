"""Runtime: config validation, deterministic training, checkpoints, CLI,
verification battery, concurrent mode smoke."""

import dataclasses
import json
import os

import numpy as np
import pytest

import fogduel.sim as sim
from fogduel import net
from fogduel.learner import init_optimizer
from fogduel.runtime import verify
from fogduel.runtime.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from fogduel.runtime.cli import main
from fogduel.runtime.config import (
    AblationSwitches,
    Budget,
    ConfigError,
    RunConfig,
    config_from_dict,
    load_config,
    validate_config,
)
from fogduel.runtime.metrics import MetricsWriter, read_metrics
from fogduel.runtime.orchestrate import (
    RuntimeCrashError,
    ablate,
    evaluate_checkpoint,
    train,
)
from fogduel.sim import MacroAction


def tiny_config(**overrides) -> RunConfig:
    cfg = RunConfig(
        n_actors=2,
        opponents=["rusher"],
        seed=3,
        mode="deterministic",
        budget=Budget(max_train_steps=12),
        eval_period_rounds=2,
        eval_games=1,
        final_eval_games=1,
        checkpoint_period_steps=8,
    )
    for key, value in overrides.items():
        setattr(cfg, key, value)
    return cfg


class TestConfig:
    def test_defaults_validate(self):
        validate_config(RunConfig())

    def test_all_violations_reported_at_once(self):
        cfg = RunConfig(n_actors=0, opponents=["nobody"], mode="sideways")
        cfg.learner.batch_size = 0
        cfg.replay.segment_capacity = 100  # not a power of two
        with pytest.raises(ConfigError) as excinfo:
            validate_config(cfg)
        message = str(excinfo.value)
        for needle in [
            "n_actors",
            "nobody",
            "mode",
            "batch_size",
            "segment_capacity",
        ]:
            assert needle in message

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict({"n_actors": 2, "bogus_key": 1})
        assert "bogus_key" in str(excinfo.value)

    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config()
        path = tmp_path / "config.json"
        path.write_text(cfg.to_json())
        loaded = load_config(str(path))
        assert loaded.to_dict() == cfg.to_dict()
        assert loaded.config_hash() == cfg.config_hash()

    def test_single_ablation_switch_enforced(self):
        cfg = RunConfig(ablation=AblationSwitches(no_lstm=True, sign_reward_only=True))
        with pytest.raises(ConfigError):
            validate_config(cfg)

    def test_high_exploration_overrides_schedule(self):
        cfg = RunConfig(ablation=AblationSwitches(high_exploration=True))
        assert cfg.effective_exploration() == (0.7, 11.0)
        assert RunConfig().effective_exploration() == (0.4, 7.0)


class TestDeterministicTraining:
    def test_two_runs_byte_identical(self, tmp_path):
        cfg = tiny_config()
        r1 = train(cfg, run_dir=str(tmp_path / "run1"))
        r2 = train(cfg, run_dir=str(tmp_path / "run2"))
        m1 = (tmp_path / "run1" / "metrics.jsonl").read_bytes()
        m2 = (tmp_path / "run2" / "metrics.jsonl").read_bytes()
        assert m1 == m2
        c1 = (tmp_path / "run1" / "checkpoints" / "final.ckpt").read_bytes()
        c2 = (tmp_path / "run2" / "checkpoints" / "final.ckpt").read_bytes()
        assert c1 == c2
        assert r1.train_steps == r2.train_steps == 12
        assert r1.episodes == r2.episodes

    def test_round_interleaving_pattern(self, tmp_path):
        cfg = tiny_config(budget=Budget(max_train_steps=20))
        train(cfg, run_dir=str(tmp_path / "run"))
        events = read_metrics(str(tmp_path / "run" / "metrics.jsonl"))
        rounds = [e for e in events if e["type"] == "round"]
        assert rounds, "round events missing"
        # one episode per actor per round
        episodes = [e["episodes"] for e in rounds]
        assert all(b - a == cfg.n_actors for a, b in zip(episodes, episodes[1:]))
        # at most 4 train steps per round, monotone
        steps = [e["step"] for e in rounds]
        assert all(0 <= b - a <= 4 for a, b in zip(steps, steps[1:]))

    def test_budget_zero_gives_empty_run(self, tmp_path):
        cfg = tiny_config(budget=Budget(max_train_steps=0))
        result = train(cfg, run_dir=str(tmp_path / "empty"))
        assert result.train_steps == 0 and result.episodes == 0
        assert (tmp_path / "empty" / "config.json").exists()
        assert (tmp_path / "empty" / "metrics.jsonl").read_bytes() == b""

    def test_episode_budget_respected(self, tmp_path):
        cfg = tiny_config(budget=Budget(max_train_steps=10_000, max_episodes=6))
        result = train(cfg, run_dir=str(tmp_path / "run"))
        assert result.stop_reason == "episode_budget"
        assert result.episodes >= 6

    def test_config_echo_written(self, tmp_path):
        cfg = tiny_config()
        train(cfg, run_dir=str(tmp_path / "run"))
        echoed = json.loads((tmp_path / "run" / "config.json").read_text())
        assert echoed == cfg.to_dict()

    def test_invalid_config_rejected_before_running(self, tmp_path):
        cfg = tiny_config(n_actors=0)
        with pytest.raises(ConfigError):
            train(cfg, run_dir=str(tmp_path / "run"))


class TestCheckpoints:
    def test_round_trip_bit_exact(self, tmp_path):
        params = net.init_params(1)
        target = params.copy()
        opt = init_optimizer(params)
        opt.step = 42
        opt.m.w_enc += 0.5
        path = str(tmp_path / "x.ckpt")
        save_checkpoint(path, params, target, opt, 100, 200, "cafe")
        data = load_checkpoint(path)
        assert data.train_steps == 100 and data.episodes == 200
        assert data.config_hash == "cafe"
        assert data.opt.step == 42
        for (_, a), (_, b) in zip(params.arrays(), data.params.arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(opt.m.w_enc, data.opt.m.w_enc)

    def test_truncated_rejected(self, tmp_path):
        params = net.init_params(2)
        path = str(tmp_path / "x.ckpt")
        save_checkpoint(path, params, params.copy(), init_optimizer(params), 1, 1, "h")
        blob = open(path, "rb").read()
        open(path, "wb").write(blob[: len(blob) - 50])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_rules_version_mismatch_rejected(self, tmp_path):
        params = net.init_params(3)
        path = str(tmp_path / "x.ckpt")
        save_checkpoint(path, params, params.copy(), init_optimizer(params), 1, 1, "h")
        blob = open(path, "rb").read()
        open(path, "wb").write(blob.replace(b"fogduel-v1", b"fogduel-v0"))
        with pytest.raises(CheckpointError) as excinfo:
            load_checkpoint(path)
        assert "rules" in str(excinfo.value)

    def test_not_a_checkpoint_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"hello world")
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))


class TestEvaluate:
    def make_checkpoint(self, tmp_path, params):
        path = str(tmp_path / "eval.ckpt")
        save_checkpoint(path, params, params.copy(), init_optimizer(params), 0, 0, "h")
        return path

    def test_wait_only_policy_never_wins(self, tmp_path):
        params = net.init_params(4)
        for _, arr in params.arrays():
            arr[...] = 0.0
        params.b_adv[MacroAction.WAIT] = 10.0  # agent does nothing, forced loss
        path = self.make_checkpoint(tmp_path, params)
        table = evaluate_checkpoint(path, ["rusher"], games=5)
        assert table["rusher"]["win_rate"] == 0.0
        assert table["rusher"]["games"] == 5

    def test_same_seeds_identical_tables(self, tmp_path):
        path = self.make_checkpoint(tmp_path, net.init_params(5))
        t1 = evaluate_checkpoint(path, ["rusher", "economist"], games=3, seed=11)
        t2 = evaluate_checkpoint(path, ["rusher", "economist"], games=3, seed=11)
        assert t1 == t2

    def test_unknown_opponent_rejected(self, tmp_path):
        path = self.make_checkpoint(tmp_path, net.init_params(6))
        with pytest.raises(ConfigError):
            evaluate_checkpoint(path, ["zerg"], games=1)


class TestMetricsWriter:
    def test_every_line_valid_json_and_flushed(self, tmp_path):
        path = str(tmp_path / "m.jsonl")
        writer = MetricsWriter(path, deterministic=False)
        writer.write({"type": "round", "step": 1})
        writer.write({"type": "eval", "step": 2})
        # read before close: lines must already be on disk
        events = read_metrics(path)
        assert len(events) == 2
        assert events[0]["wall"] is not None
        writer.close()

    def test_deterministic_mode_null_wall(self, tmp_path):
        path = str(tmp_path / "m.jsonl")
        with MetricsWriter(path, deterministic=True) as writer:
            writer.write({"type": "round"})
        assert read_metrics(path)[0]["wall"] is None

    def test_monotone_logical_clock(self, tmp_path):
        path = str(tmp_path / "m.jsonl")
        with MetricsWriter(path, deterministic=True) as writer:
            for i in range(5):
                writer.write({"i": i})
        ticks = [e["logical"] for e in read_metrics(path)]
        assert ticks == sorted(ticks) == list(range(5))


class TestCheckCommand:
    def test_pristine_build_passes(self):
        ok, lines = verify.check()
        assert ok, "\n".join(lines)
        assert len(lines) == len(verify.CHECKS)
        assert all(line.startswith("[pass]") for line in lines)

    def test_mutated_combat_constant_fails_golden_trace_only(self, monkeypatch):
        monkeypatch.setattr(sim, "KILL_COST", 5)
        ok, lines = verify.check()
        assert not ok
        by_name = {line.split("] ")[1].split(":")[0]: line for line in lines}
        assert by_name["env_golden_trace"].startswith("[FAIL]")
        assert by_name["sum_tree_audit"].startswith("[pass]")
        assert by_name["epsilon_schedule"].startswith("[pass]")


class TestCLI:
    def test_check_exit_zero(self, capsys):
        assert main(["check"]) == 0
        out = capsys.readouterr().out
        assert "env_golden_trace" in out

    def test_train_and_evaluate_flow(self, tmp_path, capsys):
        config_path = tmp_path / "cfg.json"
        config_path.write_text(tiny_config().to_json())
        run_dir = tmp_path / "run"
        assert main(["train", "--config", str(config_path), "--out", str(run_dir)]) == 0
        ckpt = run_dir / "checkpoints" / "final.ckpt"
        assert ckpt.exists()
        assert (
            main(
                ["evaluate", "--checkpoint", str(ckpt), "--games", "2", "--opponents", "rusher"]
            )
            == 0
        )
        out = capsys.readouterr().out
        assert "rusher" in out

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"n_actors": 0}))
        assert main(["train", "--config", str(bad)]) == 2

    def test_missing_config_file_exit_code(self):
        assert main(["train", "--config", "/nonexistent/cfg.json"]) == 2

    def test_check_failure_exit_code(self, monkeypatch, capsys):
        monkeypatch.setattr(verify, "GOLDEN_TRACE_DIGEST", "bogus")
        monkeypatch.setattr("fogduel.runtime.cli.check", verify.check)
        assert main(["check"]) == 1

    def test_runtime_crash_exit_code(self, monkeypatch, tmp_path, capsys):
        def boom(cfg, run_dir=None):
            raise RuntimeCrashError("worker died")

        monkeypatch.setattr("fogduel.runtime.cli.train", boom)
        config_path = tmp_path / "cfg.json"
        config_path.write_text(tiny_config().to_json())
        assert main(["train", "--config", str(config_path)]) == 3

    def test_output_root_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FOGDUEL_OUTPUT_ROOT", str(tmp_path / "root"))
        config_path = tmp_path / "cfg.json"
        cfg = tiny_config(budget=Budget(max_train_steps=0))
        config_path.write_text(cfg.to_json())
        assert main(["train", "--config", str(config_path)]) == 0
        runs = list((tmp_path / "root").iterdir())
        assert len(runs) == 1


class TestAblate:
    def test_paired_runs_and_report(self, tmp_path):
        cfg = tiny_config(
            opponents=["rusher"],
            budget=Budget(max_train_steps=8),
        )
        report = ablate(cfg, "sign_reward_only", run_dir=str(tmp_path / "ab"))
        assert report["variant"] == "sign_reward_only"
        assert os.path.exists(report["baseline"]["run_dir"])
        assert os.path.exists(report["variant_run"]["run_dir"])
        saved = json.loads((tmp_path / "ab" / "ablation.json").read_text())
        assert saved["seed"] == cfg.seed
        assert set(saved["aggregate_win_rate"]) == {"baseline", "variant"}

    def test_unknown_variant_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            ablate(tiny_config(), "noise_injection", run_dir=str(tmp_path / "x"))

    def test_no_lstm_variant_runs_feed_forward(self, tmp_path):
        cfg = tiny_config(opponents=["rusher"], budget=Budget(max_train_steps=4))
        report = ablate(cfg, "no_lstm", run_dir=str(tmp_path / "ab"))
        ckpt = os.path.join(report["variant_run"]["run_dir"], "checkpoints", "final.ckpt")
        data = load_checkpoint(ckpt)
        assert data.params.use_lstm is False
        base = os.path.join(report["baseline"]["run_dir"], "checkpoints", "final.ckpt")
        assert load_checkpoint(base).params.use_lstm is True


class TestConcurrentMode:
    def test_smoke_run_completes(self, tmp_path):
        cfg = tiny_config(
            mode="concurrent",
            n_actors=2,
            budget=Budget(max_train_steps=8, wall_clock_limit_s=60.0),
            final_eval_games=1,
        )
        result = train(cfg, run_dir=str(tmp_path / "conc"))
        assert result.train_steps == 8
        assert result.episodes > 0
        events = read_metrics(str(tmp_path / "conc" / "metrics.jsonl"))
        walls = [e["wall"] for e in events if e.get("wall") is not None]
        assert walls == sorted(walls)
