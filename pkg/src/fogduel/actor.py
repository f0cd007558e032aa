"""Episode workers: epsilon-greedy recurrent play, sequence slicing, wire format.

An actor owns its environment and hidden state, never talks to the learner
mid-episode, and ships one encoded EpisodeRecord per game. The same byte
encoding is used in-process and over any external transport.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from . import net
from .features import FEATURE_DIM, empty_history, encode, update_history
from .learner import shaped_terminal_reward, sign_terminal_reward
from .net import HiddenState, QNetParams
from .replay import SEQUENCE_LENGTH, SEQUENCE_STRIDE, StoredSequence
from .sim import RULES_VERSION, DuelEnv, MacroAction, ScriptedPolicy, Winner, legal_actions

EPISODE_FORMAT_VERSION = 1
_EPISODE_MAGIC = b"FDEP"


class EpisodeDecodeError(ValueError):
    pass


@dataclass
class ActorConfig:
    index: int
    n_actors: int
    opponent: ScriptedPolicy
    eps_base: float = 0.4
    alpha: float = 7.0
    evaluation: bool = False  # forces epsilon 0; such episodes never enter replay
    reward_decay: float = 0.999
    sign_reward_only: bool = False


def epsilon_for(index: int, n_actors: int, eps_base: float = 0.4, alpha: float = 7.0) -> float:
    """Per-actor exploration rate eps_base ** (1 + index/(N-1) * alpha)."""
    if not 0 <= index < n_actors:
        raise ValueError("actor index out of range")
    if n_actors == 1:
        return eps_base
    return eps_base ** (1.0 + (index / (n_actors - 1)) * alpha)


def act(
    params: QNetParams,
    features_vec: np.ndarray,
    hidden: HiddenState,
    epsilon: float,
    legal: set[MacroAction],
    rng: np.random.Generator,
) -> tuple[MacroAction, HiddenState]:
    """Pick a legal action; the hidden state advances on both branches.

    Greedy ties break toward the lowest action index.
    """
    q, new_hidden = net.forward_step(params, features_vec, hidden)
    choices = sorted(legal)
    if rng.random() < epsilon:
        action = choices[int(rng.integers(len(choices)))]
    else:
        action = max(choices, key=lambda a: (q[a], -a))
    return action, new_hidden


@dataclass
class EpisodeRecord:
    opponent_id: str
    sequences: list[StoredSequence]
    terminal_reward: float
    win: bool
    episode_len: int
    actor_index: int
    snapshot_version: int
    episode_id: int
    rules_version: str = RULES_VERSION


def slice_episode(
    opponent_id: str,
    feats: list[np.ndarray],
    actions: list[int],
    boundaries: list[HiddenState],
    terminal_reward: float,
    episode_id: int,
) -> list[StoredSequence]:
    """Tile one episode into overlapping fixed-length slices (stride 8).

    Every slice that reaches the episode's final step carries the terminal
    flag and reward; boundaries[k] is the hidden state entering step 8k.
    """
    episode_len = len(feats)
    sequences = []
    for start in range(0, episode_len, SEQUENCE_STRIDE):
        valid = min(SEQUENCE_LENGTH, episode_len - start)
        terminal = start + valid == episode_len
        feat_block = np.zeros((SEQUENCE_LENGTH, FEATURE_DIM))
        feat_block[:valid] = np.stack(feats[start : start + valid])
        action_block = np.zeros(SEQUENCE_LENGTH, dtype=np.int64)
        action_block[:valid] = actions[start : start + valid]
        boundary = boundaries[start // SEQUENCE_STRIDE]
        sequences.append(
            StoredSequence(
                opponent_id=opponent_id,
                features=feat_block,
                actions=action_block,
                valid_len=valid,
                boundary_h=boundary.h,
                boundary_c=boundary.c,
                terminal=terminal,
                terminal_reward=terminal_reward if terminal else None,
                episode_id=episode_id,
                start_tick=start,
            )
        )
    return sequences


def run_episode(
    env: DuelEnv,
    params: QNetParams,
    cfg: ActorConfig,
    seed: int,
    snapshot_version: int = 0,
    episode_id: int = 0,
) -> EpisodeRecord:
    """Play one full game and slice it into overlapping stored sequences."""
    epsilon = 0.0 if cfg.evaluation else epsilon_for(cfg.index, cfg.n_actors, cfg.eps_base, cfg.alpha)
    rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, 0x5EED])

    obs = env.reset(seed, cfg.opponent)
    hidden = net.zero_hidden(params)
    history = empty_history()

    feats: list[np.ndarray] = []
    actions: list[int] = []
    boundaries: list[HiddenState] = []
    winner = Winner.NONE
    score_agent = score_opponent = 0.0

    step_idx = 0
    while True:
        history = update_history(history, obs)
        vec = encode(obs, history)
        if step_idx % SEQUENCE_STRIDE == 0:
            boundaries.append(hidden.copy())
        action, hidden = act(params, vec, hidden, epsilon, legal_actions(obs), rng)
        result = env.step(action)
        feats.append(vec)
        actions.append(int(action))
        obs = result.obs
        step_idx += 1
        if result.terminal:
            winner = result.winner
            score_agent = result.score_agent
            score_opponent = result.score_opponent
            break

    episode_len = step_idx
    if cfg.sign_reward_only:
        reward = sign_terminal_reward(score_agent, score_opponent)
    else:
        reward = shaped_terminal_reward(score_agent, score_opponent, episode_len, cfg.reward_decay)

    sequences = slice_episode(
        cfg.opponent.value, feats, actions, boundaries, reward, episode_id
    )
    return EpisodeRecord(
        opponent_id=cfg.opponent.value,
        sequences=sequences,
        terminal_reward=reward,
        win=winner is Winner.AGENT,
        episode_len=episode_len,
        actor_index=cfg.index,
        snapshot_version=snapshot_version,
        episode_id=episode_id,
    )


# --- wire format ------------------------------------------------------------


def encode_episode(record: EpisodeRecord) -> bytes:
    """Length-prefixed little-endian episode message.

    Layout: magic "FDEP", u16 format version, rules-version string, opponent
    string, u16 actor index, u32 snapshot version, u64 episode id, u16 episode
    length, u8 win, f64 reward, u16 feature dim, u16 cell dim, u8 slice
    length, u16 sequence count, then per sequence: u16 start tick, u8 valid
    length, u8 terminal, [f64 reward when terminal], valid actions as u8,
    valid features as f64 rows, boundary h and c as f64.
    """
    if record.sequences:
        m = record.sequences[0].boundary_h.shape[0]
    else:
        m = 0
    out = [
        _EPISODE_MAGIC,
        struct.pack("<H", EPISODE_FORMAT_VERSION),
        _pack_str(record.rules_version),
        _pack_str(record.opponent_id),
        struct.pack(
            "<HIQHBdHHBH",
            record.actor_index,
            record.snapshot_version,
            record.episode_id,
            record.episode_len,
            1 if record.win else 0,
            record.terminal_reward,
            FEATURE_DIM,
            m,
            SEQUENCE_LENGTH,
            len(record.sequences),
        ),
    ]
    for seq in record.sequences:
        out.append(struct.pack("<HBB", seq.start_tick, seq.valid_len, 1 if seq.terminal else 0))
        if seq.terminal:
            out.append(struct.pack("<d", seq.terminal_reward))
        out.append(bytes(int(a) for a in seq.actions[: seq.valid_len]))
        out.append(np.ascontiguousarray(seq.features[: seq.valid_len], dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(seq.boundary_h, dtype="<f8").tobytes())
        out.append(np.ascontiguousarray(seq.boundary_c, dtype="<f8").tobytes())
    payload = b"".join(out)
    return struct.pack("<I", len(payload)) + payload


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EpisodeDecodeError("truncated episode message")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<B", len(raw)) + raw


def decode_episode(message: bytes) -> EpisodeRecord:
    r = _Reader(message)
    (length,) = r.unpack("<I")
    if length != len(message) - 4:
        raise EpisodeDecodeError("length prefix does not match payload")
    if r.take(4) != _EPISODE_MAGIC:
        raise EpisodeDecodeError("bad episode magic")
    (version,) = r.unpack("<H")
    if version != EPISODE_FORMAT_VERSION:
        raise EpisodeDecodeError(f"unsupported episode format version {version}")
    rules = r.take(r.unpack("<B")[0]).decode("utf-8")
    if rules != RULES_VERSION:
        raise EpisodeDecodeError(f"episode built under rules {rules!r}, expected {RULES_VERSION!r}")
    opponent = r.take(r.unpack("<B")[0]).decode("utf-8")
    (
        actor_index,
        snapshot_version,
        episode_id,
        episode_len,
        win,
        reward,
        feat_dim,
        cell_dim,
        seq_len,
        n_sequences,
    ) = r.unpack("<HIQHBdHHBH")
    if feat_dim != FEATURE_DIM or seq_len != SEQUENCE_LENGTH:
        raise EpisodeDecodeError("episode feature layout does not match this build")

    sequences = []
    for _ in range(n_sequences):
        start_tick, valid, terminal = r.unpack("<HBB")
        seq_reward = r.unpack("<d")[0] if terminal else None
        action_block = np.zeros(SEQUENCE_LENGTH, dtype=np.int64)
        action_block[:valid] = np.frombuffer(r.take(valid), dtype=np.uint8)
        feat_block = np.zeros((SEQUENCE_LENGTH, FEATURE_DIM))
        feat_block[:valid] = np.frombuffer(r.take(valid * FEATURE_DIM * 8), dtype="<f8").reshape(
            valid, FEATURE_DIM
        )
        boundary_h = np.frombuffer(r.take(cell_dim * 8), dtype="<f8").copy()
        boundary_c = np.frombuffer(r.take(cell_dim * 8), dtype="<f8").copy()
        sequences.append(
            StoredSequence(
                opponent_id=opponent,
                features=feat_block,
                actions=action_block,
                valid_len=valid,
                boundary_h=boundary_h,
                boundary_c=boundary_c,
                terminal=bool(terminal),
                terminal_reward=seq_reward,
                episode_id=episode_id,
                start_tick=start_tick,
            )
        )
    if r.pos != len(message):
        raise EpisodeDecodeError("trailing bytes in episode message")
    return EpisodeRecord(
        opponent_id=opponent,
        sequences=sequences,
        terminal_reward=reward,
        win=bool(win),
        episode_len=episode_len,
        actor_index=actor_index,
        snapshot_version=snapshot_version,
        episode_id=episode_id,
        rules_version=rules,
    )


class SnapshotChannel:
    """Versioned parameter snapshots: learner publishes, actors pull latest."""

    def __init__(self) -> None:
        self._lock = threading.Condition()
        self._params: QNetParams | None = None
        self._version = 0

    def publish(self, params: QNetParams) -> int:
        with self._lock:
            self._version += 1
            self._params = params.copy()
            self._lock.notify_all()
            return self._version

    def latest(self, timeout: float | None = None) -> tuple[QNetParams, int]:
        """Newest snapshot; blocks until the first publication."""
        with self._lock:
            if self._params is None and not self._lock.wait_for(
                lambda: self._params is not None, timeout=timeout
            ):
                raise TimeoutError("no parameter snapshot published yet")
            return self._params, self._version

    @property
    def version(self) -> int:
        with self._lock:
            return self._version
