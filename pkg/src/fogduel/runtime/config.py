"""Run configuration: a single JSON document validated up front.

Validation collects every violation into one ConfigError so a bad config is
fixable in one pass.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from ..learner import LearnerConfig
from ..replay import DEFAULT_SEGMENT_CAPACITY, IS_EXPONENT, MIN_PRIORITY, PRIORITY_EXPONENT
from ..sim import ScriptedPolicy

TRAIN_STEPS_PER_ROUND = 4  # deterministic mode: N episodes round-robin, then this many steps

ABLATION_VARIANTS = ("no_lstm", "sign_reward_only", "high_exploration")
HIGH_EXPLORATION_EPS = 0.7
HIGH_EXPLORATION_ALPHA = 11.0


class ConfigError(ValueError):
    pass


@dataclass
class ActorParams:
    eps_base: float = 0.4
    alpha: float = 7.0


@dataclass
class ReplayParams:
    segment_capacity: int = DEFAULT_SEGMENT_CAPACITY
    priority_exponent: float = PRIORITY_EXPONENT
    is_exponent: float = IS_EXPONENT
    min_priority: float = MIN_PRIORITY


@dataclass
class NetParams:
    enc_dim: int = 64
    cell_dim: int = 64


@dataclass
class Budget:
    max_train_steps: int = 2000
    max_episodes: int | None = None
    wall_clock_limit_s: float | None = None


@dataclass
class AblationSwitches:
    no_lstm: bool = False
    sign_reward_only: bool = False
    high_exploration: bool = False


@dataclass
class RunConfig:
    n_actors: int = 8
    opponents: list[str] = field(
        default_factory=lambda: [p.value for p in ScriptedPolicy]
    )
    seed: int = 1
    mode: str = "deterministic"  # or "concurrent"
    out_dir: str | None = None
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    actor: ActorParams = field(default_factory=ActorParams)
    replay: ReplayParams = field(default_factory=ReplayParams)
    net: NetParams = field(default_factory=NetParams)
    budget: Budget = field(default_factory=Budget)
    ablation: AblationSwitches = field(default_factory=AblationSwitches)
    eval_period_rounds: int = 25
    eval_games: int = 1
    final_eval_games: int = 8
    early_stop_win_rate: float | None = None
    early_stop_consecutive: int = 2
    checkpoint_period_steps: int = 5000
    ingest_high_water: int = 1024

    def effective_exploration(self) -> tuple[float, float]:
        if self.ablation.high_exploration:
            return HIGH_EXPLORATION_EPS, HIGH_EXPLORATION_ALPHA
        return self.actor.eps_base, self.actor.alpha

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def _build(cls, data: dict, errors: list[str], path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{path}{key}: unknown field")
            continue
        if key in _NESTED:
            if isinstance(value, dict):
                kwargs[key] = _build(_NESTED[key], value, errors, f"{path}{key}.")
            else:
                errors.append(f"{path}{key}: expected an object")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{path.rstrip('.') or 'config'}: {exc}")
        return cls()


_NESTED = {
    "learner": LearnerConfig,
    "actor": ActorParams,
    "replay": ReplayParams,
    "net": NetParams,
    "budget": Budget,
    "ablation": AblationSwitches,
}


def config_from_dict(data: dict) -> RunConfig:
    errors: list[str] = []
    cfg = _build(RunConfig, data, errors, "")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = config_from_dict(data)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    """Raise ConfigError listing every violation at once."""
    errors = []
    if cfg.n_actors < 1:
        errors.append("n_actors must be >= 1")
    if not cfg.opponents:
        errors.append("opponents must be non-empty")
    known = {p.value for p in ScriptedPolicy}
    for opp in cfg.opponents:
        if opp not in known:
            errors.append(f"unknown opponent {opp!r}; choose from {sorted(known)}")
    if len(set(cfg.opponents)) != len(cfg.opponents):
        errors.append("opponents must be unique (one replay segment each)")
    if cfg.mode not in ("deterministic", "concurrent"):
        errors.append(f"mode must be 'deterministic' or 'concurrent', got {cfg.mode!r}")
    if not 0.0 < cfg.actor.eps_base < 1.0:
        errors.append("actor.eps_base must be in (0, 1)")
    if cfg.actor.alpha < 0.0:
        errors.append("actor.alpha must be >= 0")
    lc = cfg.learner
    if not 0.0 < lc.bootstrap_discount < 1.0:
        errors.append("learner.bootstrap_discount must be in (0, 1)")
    if not 0.0 < lc.reward_decay <= 1.0:
        errors.append("learner.reward_decay must be in (0, 1]")
    if lc.n_step < 1:
        errors.append("learner.n_step must be >= 1")
    if lc.batch_size < 1:
        errors.append("learner.batch_size must be >= 1")
    if lc.learning_rate <= 0.0:
        errors.append("learner.learning_rate must be > 0")
    if lc.target_sync_period < 1:
        errors.append("learner.target_sync_period must be >= 1")
    if lc.grad_clip_norm <= 0.0:
        errors.append("learner.grad_clip_norm must be > 0")
    rp = cfg.replay
    if rp.segment_capacity < 1 or rp.segment_capacity & (rp.segment_capacity - 1):
        errors.append("replay.segment_capacity must be a power of two")
    if not 0.0 <= rp.priority_exponent <= 1.0:
        errors.append("replay.priority_exponent must be in [0, 1]")
    if not 0.0 <= rp.is_exponent <= 1.0:
        errors.append("replay.is_exponent must be in [0, 1]")
    if rp.min_priority <= 0.0:
        errors.append("replay.min_priority must be > 0")
    if cfg.net.enc_dim < 1 or cfg.net.cell_dim < 1:
        errors.append("net dims must be >= 1")
    if cfg.budget.max_train_steps < 0:
        errors.append("budget.max_train_steps must be >= 0")
    if cfg.budget.max_episodes is not None and cfg.budget.max_episodes < 0:
        errors.append("budget.max_episodes must be >= 0")
    if cfg.budget.wall_clock_limit_s is not None and cfg.budget.wall_clock_limit_s < 0:
        errors.append("budget.wall_clock_limit_s must be >= 0")
    if cfg.eval_period_rounds < 1:
        errors.append("eval_period_rounds must be >= 1")
    if cfg.eval_games < 1:
        errors.append("eval_games must be >= 1")
    if cfg.final_eval_games < 0:
        errors.append("final_eval_games must be >= 0")
    if cfg.early_stop_win_rate is not None and not 0.0 <= cfg.early_stop_win_rate <= 1.0:
        errors.append("early_stop_win_rate must be in [0, 1]")
    if cfg.early_stop_consecutive < 1:
        errors.append("early_stop_consecutive must be >= 1")
    if cfg.checkpoint_period_steps < 1:
        errors.append("checkpoint_period_steps must be >= 1")
    if cfg.ingest_high_water < 1:
        errors.append("ingest_high_water must be >= 1")
    on = [name for name in ABLATION_VARIANTS if getattr(cfg.ablation, name)]
    if len(on) > 1:
        errors.append(f"at most one ablation switch may be on, got {on}")
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
