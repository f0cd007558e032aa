"""Training orchestration: actor/learner wiring in two modes.

Deterministic single-process mode interleaves exactly one episode per actor
round-robin followed by a fixed number of train steps, yielding byte-identical
outputs across runs. Concurrent mode runs the same components on threads with
an ingestion queue (high-water backpressure) and a snapshot channel.
"""

from __future__ import annotations

import json
import os
import queue
import threading
import time
from collections import deque
from dataclasses import dataclass, field

from .. import actor as actor_mod
from .. import learner as learner_mod
from .. import net
from ..actor import ActorConfig, SnapshotChannel, decode_episode, encode_episode, run_episode
from ..features import FEATURE_DIM
from ..learner import LearnerConfig, init_optimizer, sync_target, train_step
from ..replay import SegmentedReplay
from ..sim import DuelEnv, ScriptedPolicy
from .checkpoint import CheckpointData, load_checkpoint, save_checkpoint
from .config import TRAIN_STEPS_PER_ROUND, ConfigError, RunConfig, validate_config
from .metrics import MetricsWriter

OUTPUT_ROOT_ENV = "FOGDUEL_OUTPUT_ROOT"


class RuntimeCrashError(RuntimeError):
    """A component died; the run was aborted after flushing partial outputs."""


@dataclass
class TrainResult:
    run_dir: str
    train_steps: int
    episodes: int
    stop_reason: str
    final_eval: dict
    wall_seconds: float
    eval_history: list[dict] = field(default_factory=list)


def _episode_seed(master: int, actor_index: int, counter: int) -> int:
    return (master * 1_000_003 + actor_index * 8_191 + counter * 131 + 17) % (2**63)


def _eval_seed(master: int, opponent_index: int, game: int, salt: int = 0) -> int:
    return (master * 2_000_003 + opponent_index * 65_537 + game * 257 + salt * 7 + 3) % (2**63)


def resolve_out_root(explicit: str | None) -> str:
    return explicit or os.environ.get(OUTPUT_ROOT_ENV) or os.path.join(os.getcwd(), "runs")


def _prepare_run_dir(cfg: RunConfig, run_dir: str | None, label: str) -> str:
    if run_dir is None:
        root = resolve_out_root(cfg.out_dir)
        run_dir = os.path.join(root, f"{label}-seed{cfg.seed}-{cfg.config_hash()}")
    os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)
    with open(os.path.join(run_dir, "config.json"), "w", encoding="utf-8") as f:
        f.write(cfg.to_json() + "\n")
    return run_dir


def _make_actor_configs(cfg: RunConfig) -> list[ActorConfig]:
    eps_base, alpha = cfg.effective_exploration()
    configs = []
    for i in range(cfg.n_actors):
        opponent = ScriptedPolicy(cfg.opponents[i % len(cfg.opponents)])
        configs.append(
            ActorConfig(
                index=i,
                n_actors=cfg.n_actors,
                opponent=opponent,
                eps_base=eps_base,
                alpha=alpha,
                reward_decay=cfg.learner.reward_decay,
                sign_reward_only=cfg.ablation.sign_reward_only,
            )
        )
    return configs


def _eval_win_rates(
    params, opponents: list[str], games: int, master_seed: int, salt: int, cfg: RunConfig
) -> dict[str, float]:
    rates = {}
    env = DuelEnv()
    for oi, opp in enumerate(opponents):
        acfg = ActorConfig(
            index=0,
            n_actors=1,
            opponent=ScriptedPolicy(opp),
            evaluation=True,
            reward_decay=cfg.learner.reward_decay,
        )
        wins = 0
        for g in range(games):
            record = run_episode(env, params, acfg, _eval_seed(master_seed, oi, g, salt))
            wins += 1 if record.win else 0
        rates[opp] = wins / games
    return rates


class _TrainerState:
    """Shared learner-side state used by both run modes."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = net.init_params(
            cfg.seed,
            in_dim=FEATURE_DIM,
            enc_dim=cfg.net.enc_dim,
            cell_dim=cfg.net.cell_dim,
            use_lstm=not cfg.ablation.no_lstm,
        )
        self.target_params = sync_target(self.params)
        self.opt = init_optimizer(self.params)
        self.replay = SegmentedReplay(
            list(cfg.opponents),
            segment_capacity=cfg.replay.segment_capacity,
            priority_exponent=cfg.replay.priority_exponent,
            is_exponent=cfg.replay.is_exponent,
            min_priority=cfg.replay.min_priority,
            seed=cfg.seed + 104_729,
        )
        self.channel = SnapshotChannel()
        self.channel.publish(self.params)
        self.train_steps = 0
        self.episodes = 0
        self.losses = deque(maxlen=TRAIN_STEPS_PER_ROUND * 16)
        self.win_windows = {opp: deque(maxlen=100) for opp in cfg.opponents}
        self.stale_episodes = 0

    def ingest(self, message: bytes) -> None:
        record = decode_episode(message)
        self.episodes += 1
        self.win_windows[record.opponent_id].append(1 if record.win else 0)
        if record.snapshot_version < self.channel.version - 1:
            self.stale_episodes += 1
        self.replay.append(record.opponent_id, record.sequences)

    def try_train_step(self) -> bool:
        if len(self.replay) < self.cfg.learner.batch_size:
            return False
        report = train_step(self.replay, self.params, self.target_params, self.opt, self.cfg.learner)
        self.train_steps += 1
        self.losses.append(report.loss)
        if self.train_steps % self.cfg.learner.target_sync_period == 0:
            self.target_params = sync_target(self.params)
        return True

    def round_event(self) -> dict:
        stats = self.replay.stats()
        return {
            "type": "round",
            "step": self.train_steps,
            "episodes": self.episodes,
            "loss": (sum(self.losses) / len(self.losses)) if self.losses else None,
            "win_rate": {
                opp: (sum(w) / len(w) if w else None) for opp, w in self.win_windows.items()
            },
            "replay": {
                "total": stats.total_size,
                "segments": {k: v.size for k, v in stats.segments.items()},
                "evictions": {k: v.evictions for k, v in stats.segments.items()},
                "stale_refs": stats.stale_refs_skipped,
            },
            "stale_episodes": self.stale_episodes,
            "snapshot_version": self.channel.version,
        }


def train(cfg: RunConfig, run_dir: str | None = None, label: str = "train") -> TrainResult:
    validate_config(cfg)
    run_dir = _prepare_run_dir(cfg, run_dir, label)
    start = time.monotonic()
    if cfg.mode == "deterministic":
        result = _train_deterministic(cfg, run_dir, start)
    else:
        result = _train_concurrent(cfg, run_dir, start)
    return result


def _budget_reason(cfg: RunConfig, state: _TrainerState, start: float) -> str | None:
    if state.train_steps >= cfg.budget.max_train_steps:
        return "train_step_budget"
    if cfg.budget.max_episodes is not None and state.episodes >= cfg.budget.max_episodes:
        return "episode_budget"
    if (
        cfg.budget.wall_clock_limit_s is not None
        and time.monotonic() - start >= cfg.budget.wall_clock_limit_s
    ):
        return "wall_clock_budget"
    return None


def _finalize(
    cfg: RunConfig,
    state: _TrainerState,
    run_dir: str,
    metrics: MetricsWriter,
    stop_reason: str,
    start: float,
    eval_history: list[dict],
) -> TrainResult:
    final_path = os.path.join(run_dir, "checkpoints", "final.ckpt")
    save_checkpoint(
        final_path,
        state.params,
        state.target_params,
        state.opt,
        state.train_steps,
        state.episodes,
        cfg.config_hash(),
    )
    ran_anything = state.train_steps > 0 or state.episodes > 0
    if cfg.final_eval_games > 0 and ran_anything:
        final_eval = _eval_win_rates(
            state.params, cfg.opponents, cfg.final_eval_games, cfg.seed, salt=999_983, cfg=cfg
        )
    else:
        final_eval = {}
    if ran_anything:  # a zero-budget run leaves the metrics stream empty
        metrics.write(
            {
                "type": "final",
                "step": state.train_steps,
                "episodes": state.episodes,
                "stop_reason": stop_reason,
                "final_eval": final_eval,
            }
        )
    metrics.close()
    wall = time.monotonic() - start
    report = {
        "run_dir": run_dir,
        "train_steps": state.train_steps,
        "episodes": state.episodes,
        "stop_reason": stop_reason,
        "final_eval": final_eval,
        "wall_seconds": wall,
        "stale_episodes": state.stale_episodes,
    }
    with open(os.path.join(run_dir, "report.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return TrainResult(
        run_dir=run_dir,
        train_steps=state.train_steps,
        episodes=state.episodes,
        stop_reason=stop_reason,
        final_eval=final_eval,
        wall_seconds=wall,
        eval_history=eval_history,
    )


def _train_deterministic(cfg: RunConfig, run_dir: str, start: float) -> TrainResult:
    state = _TrainerState(cfg)
    actor_configs = _make_actor_configs(cfg)
    envs = [DuelEnv() for _ in actor_configs]
    episode_counters = [0] * len(actor_configs)
    metrics = MetricsWriter(os.path.join(run_dir, "metrics.jsonl"), deterministic=True)
    eval_history: list[dict] = []
    good_evals = 0
    round_index = 0
    stop_reason = _budget_reason(cfg, state, start)

    while stop_reason is None:
        for i, acfg in enumerate(actor_configs):
            params, version = state.channel.latest()
            record = run_episode(
                envs[i],
                params,
                acfg,
                _episode_seed(cfg.seed, i, episode_counters[i]),
                snapshot_version=version,
                episode_id=state.episodes,
            )
            episode_counters[i] += 1
            state.ingest(encode_episode(record))
        for _ in range(TRAIN_STEPS_PER_ROUND):
            if state.train_steps >= cfg.budget.max_train_steps:
                break
            if state.try_train_step():
                if state.train_steps % cfg.checkpoint_period_steps == 0:
                    save_checkpoint(
                        os.path.join(run_dir, "checkpoints", f"step-{state.train_steps:08d}.ckpt"),
                        state.params,
                        state.target_params,
                        state.opt,
                        state.train_steps,
                        state.episodes,
                        cfg.config_hash(),
                    )
        state.channel.publish(state.params)
        round_index += 1
        if round_index % cfg.eval_period_rounds == 0:
            rates = _eval_win_rates(
                state.params, cfg.opponents, cfg.eval_games, cfg.seed, salt=round_index, cfg=cfg
            )
            event = {
                "type": "eval",
                "round": round_index,
                "step": state.train_steps,
                "episodes": state.episodes,
                "eval_win_rate": rates,
            }
            metrics.write(event)
            eval_history.append(event)
            if cfg.early_stop_win_rate is not None:
                if min(rates.values()) >= cfg.early_stop_win_rate:
                    good_evals += 1
                    if good_evals >= cfg.early_stop_consecutive:
                        stop_reason = "early_stop"
                else:
                    good_evals = 0
        metrics.write(state.round_event())
        if stop_reason is None:
            stop_reason = _budget_reason(cfg, state, start)

    return _finalize(cfg, state, run_dir, metrics, stop_reason, start, eval_history)


def _train_concurrent(cfg: RunConfig, run_dir: str, start: float) -> TrainResult:
    state = _TrainerState(cfg)
    actor_configs = _make_actor_configs(cfg)
    inbox: queue.Queue[bytes] = queue.Queue()
    shutdown = threading.Event()
    crash: list[BaseException] = []
    metrics_lock = threading.Lock()
    metrics = MetricsWriter(os.path.join(run_dir, "metrics.jsonl"), deterministic=False)
    eval_history: list[dict] = []
    eval_rates: dict[str, float] = {}
    eval_rates_lock = threading.Lock()

    def actor_loop(i: int, acfg: ActorConfig) -> None:
        env = DuelEnv()
        counter = 0
        try:
            while not shutdown.is_set():
                while inbox.qsize() >= cfg.ingest_high_water and not shutdown.is_set():
                    time.sleep(0.005)  # backpressure: pause before starting a new episode
                if shutdown.is_set():
                    return
                params, version = state.channel.latest(timeout=5.0)
                record = run_episode(
                    env,
                    params,
                    acfg,
                    _episode_seed(cfg.seed, i, counter),
                    snapshot_version=version,
                )
                counter += 1
                inbox.put(encode_episode(record))
        except BaseException as exc:  # noqa: BLE001 - crash must abort the run
            crash.append(exc)
            shutdown.set()

    def eval_loop(oi: int, opponent: str) -> None:
        env = DuelEnv()
        acfg = ActorConfig(
            index=0,
            n_actors=1,
            opponent=ScriptedPolicy(opponent),
            evaluation=True,
            reward_decay=cfg.learner.reward_decay,
        )
        game = 0
        window: deque[int] = deque(maxlen=20)
        try:
            while not shutdown.is_set():
                params, _ = state.channel.latest(timeout=5.0)
                record = run_episode(env, params, acfg, _eval_seed(cfg.seed, oi, game, 1))
                game += 1
                window.append(1 if record.win else 0)
                with eval_rates_lock:
                    eval_rates[opponent] = sum(window) / len(window)
        except BaseException as exc:  # noqa: BLE001
            crash.append(exc)
            shutdown.set()

    threads = [
        threading.Thread(target=actor_loop, args=(i, acfg), daemon=True, name=f"actor-{i}")
        for i, acfg in enumerate(actor_configs)
    ]
    threads += [
        threading.Thread(target=eval_loop, args=(oi, opp), daemon=True, name=f"eval-{opp}")
        for oi, opp in enumerate(cfg.opponents)
    ]
    for t in threads:
        t.start()

    stop_reason = None
    good_evals = 0
    last_round_event = 0.0
    try:
        while stop_reason is None:
            if crash:
                raise RuntimeCrashError(f"worker crashed: {crash[0]!r}") from crash[0]
            try:
                message = inbox.get(timeout=0.05)
                state.ingest(message)
            except queue.Empty:
                pass
            stepped = False
            for _ in range(TRAIN_STEPS_PER_ROUND):
                if state.train_steps >= cfg.budget.max_train_steps:
                    break
                if not state.try_train_step():
                    break
                stepped = True
                if state.train_steps % cfg.checkpoint_period_steps == 0:
                    save_checkpoint(
                        os.path.join(run_dir, "checkpoints", f"step-{state.train_steps:08d}.ckpt"),
                        state.params,
                        state.target_params,
                        state.opt,
                        state.train_steps,
                        state.episodes,
                        cfg.config_hash(),
                    )
            if stepped:
                state.channel.publish(state.params)
            now = time.monotonic()
            if now - last_round_event >= 1.0:
                last_round_event = now
                with eval_rates_lock:
                    rates = dict(eval_rates)
                event = state.round_event()
                event["eval_win_rate"] = rates
                with metrics_lock:
                    metrics.write(event)
                if rates:
                    eval_history.append(
                        {
                            "type": "eval",
                            "step": state.train_steps,
                            "episodes": state.episodes,
                            "eval_win_rate": rates,
                        }
                    )
                if (
                    cfg.early_stop_win_rate is not None
                    and len(rates) == len(cfg.opponents)
                    and min(rates.values()) >= cfg.early_stop_win_rate
                ):
                    good_evals += 1
                    if good_evals >= cfg.early_stop_consecutive:
                        stop_reason = "early_stop"
                elif rates:
                    good_evals = 0
            if stop_reason is None:
                stop_reason = _budget_reason(cfg, state, start)
    except RuntimeCrashError:
        shutdown.set()
        for t in threads:
            t.join(timeout=2.0)
        metrics.close()
        raise
    finally:
        shutdown.set()
    for t in threads:
        t.join(timeout=5.0)
    if crash:
        metrics.close()
        raise RuntimeCrashError(f"worker crashed: {crash[0]!r}") from crash[0]
    return _finalize(cfg, state, run_dir, metrics, stop_reason, start, eval_history)


# --- evaluation -------------------------------------------------------------


def evaluate_checkpoint(
    checkpoint_path: str,
    opponents: list[str],
    games: int,
    seed: int = 7,
    reward_decay: float = 0.999,
) -> dict:
    """Zero-exploration win-rate table for a saved checkpoint."""
    known = {p.value for p in ScriptedPolicy}
    bad = [o for o in opponents if o not in known]
    if bad:
        raise ConfigError(f"unknown opponents {bad}; choose from {sorted(known)}")
    data: CheckpointData = load_checkpoint(checkpoint_path)
    env = DuelEnv()
    table = {}
    for oi, opp in enumerate(opponents):
        acfg = ActorConfig(
            index=0,
            n_actors=1,
            opponent=ScriptedPolicy(opp),
            evaluation=True,
            reward_decay=reward_decay,
        )
        wins = 0
        for g in range(games):
            record = run_episode(env, data.params, acfg, _eval_seed(seed, oi, g, 2))
            wins += 1 if record.win else 0
        table[opp] = {"games": games, "wins": wins, "win_rate": wins / games}
    return table


def render_eval_table(table: dict) -> str:
    lines = [f"{'opponent':<16} {'games':>6} {'wins':>6} {'win_rate':>9}"]
    for opp, row in table.items():
        lines.append(f"{opp:<16} {row['games']:>6} {row['wins']:>6} {row['win_rate']:>9.3f}")
    return "\n".join(lines)


# --- ablation ---------------------------------------------------------------


def ablate(cfg: RunConfig, variant: str, run_dir: str | None = None) -> dict:
    """Paired baseline/variant runs with shared seeds and budget."""
    from .config import ABLATION_VARIANTS, AblationSwitches

    if variant not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; choose from {ABLATION_VARIANTS}")
    validate_config(cfg)
    if run_dir is None:
        root = resolve_out_root(cfg.out_dir)
        run_dir = os.path.join(root, f"ablate-{variant}-seed{cfg.seed}-{cfg.config_hash()}")
    os.makedirs(run_dir, exist_ok=True)

    import dataclasses as _dc

    baseline_cfg = _dc.replace(cfg, ablation=AblationSwitches())
    variant_cfg = _dc.replace(cfg, ablation=AblationSwitches(**{variant: True}))

    baseline = train(baseline_cfg, run_dir=os.path.join(run_dir, "baseline"), label="baseline")
    varied = train(variant_cfg, run_dir=os.path.join(run_dir, "variant"), label=variant)

    def summary(result: TrainResult) -> dict:
        return {
            "run_dir": result.run_dir,
            "train_steps": result.train_steps,
            "episodes": result.episodes,
            "final_eval": result.final_eval,
            "curve": [
                {
                    "episodes": e["episodes"],
                    "step": e["step"],
                    "eval_win_rate": e["eval_win_rate"],
                }
                for e in result.eval_history
            ],
        }

    def aggregate(final_eval: dict) -> float | None:
        return sum(final_eval.values()) / len(final_eval) if final_eval else None

    report = {
        "variant": variant,
        "seed": cfg.seed,
        "baseline": summary(baseline),
        "variant_run": summary(varied),
        "aggregate_win_rate": {
            "baseline": aggregate(baseline.final_eval),
            "variant": aggregate(varied.final_eval),
        },
    }
    with open(os.path.join(run_dir, "ablation.json"), "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return report
