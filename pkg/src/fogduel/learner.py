"""Targets, loss, and optimization for the recurrent Q-network.

Terminal episodes carry the only reward, so an n-step target is either a
discounted bootstrap q-value (action chosen online, valued by the target
network) or a discounted terminal reward when the episode end falls inside
the lookahead window. Steps whose window runs off the stored slice without a
terminal are masked out of the loss rather than bootstrapped across the
boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import net
from .net import Gradients, HiddenState, QNetParams
from .replay import SegmentedReplay, StoredSequence


@dataclass
class LearnerConfig:
    bootstrap_discount: float = 0.997  # per-step discount applied to the bootstrap/reward
    n_step: int = 3
    reward_decay: float = 0.999  # per-tick decay of the terminal reward
    batch_size: int = 32
    learning_rate: float = 1e-4
    target_sync_period: int = 2000  # train steps between target-network copies
    grad_clip_norm: float = 40.0
    sign_reward_only: bool = False


@dataclass
class OptimizerState:
    """Adam moments, one accumulator pair per parameter array."""

    m: Gradients
    v: Gradients
    step: int = 0


def init_optimizer(params: QNetParams) -> OptimizerState:
    return OptimizerState(m=net.zeros_gradients(params), v=net.zeros_gradients(params))


# --- rewards ----------------------------------------------------------------


def shaped_terminal_reward(
    score_our: float, score_enemy: float, timedecay: float, reward_decay: float = 0.999
) -> float:
    """Time-decayed normalized score difference, always in [-1, 1]."""
    if score_our < 0 or score_enemy < 0:
        raise ValueError("scores must be non-negative")
    if score_our == 0 and score_enemy == 0:
        return 0.0
    return reward_decay**timedecay * (score_our - score_enemy) / max(score_our, score_enemy)


def sign_terminal_reward(score_our: float, score_enemy: float) -> float:
    """Win/loss-style reward: the bare sign of the score difference."""
    if score_our < 0 or score_enemy < 0:
        raise ValueError("scores must be non-negative")
    if score_our > score_enemy:
        return 1.0
    if score_our < score_enemy:
        return -1.0
    return 0.0


# --- targets ----------------------------------------------------------------


def assemble_targets(
    q_online: np.ndarray,
    q_target: np.ndarray,
    valid_len: int,
    terminal: bool,
    terminal_reward: float | None,
    bootstrap_discount: float,
    n_step: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step targets and validity mask for one stored slice.

    q_online/q_target are (L, A) outputs of the two networks over the slice.
    Ties in the online argmax break toward the lowest action index.
    """
    length = q_online.shape[0]
    targets = np.zeros(length)
    mask = np.zeros(length, dtype=bool)
    last = valid_len - 1
    for t in range(valid_len):
        if terminal and last - t <= n_step:
            targets[t] = bootstrap_discount ** (last - t) * terminal_reward
            mask[t] = True
        elif t + n_step <= last:
            best = int(np.argmax(q_online[t + n_step]))
            targets[t] = bootstrap_discount**n_step * q_target[t + n_step, best]
            mask[t] = True
    return targets, mask


def _batch_forwards(
    batch: list[StoredSequence], params: QNetParams, target_params: QNetParams
):
    feats = np.stack([seq.features for seq in batch]).astype(np.float64)
    h0 = np.stack([seq.boundary_h for seq in batch])
    c0 = np.stack([seq.boundary_c for seq in batch])
    q_online, _, _, caches = net.forward_batch(params, feats, h0, c0)
    q_target, _, _, _ = net.forward_batch(target_params, feats, h0.copy(), c0.copy())
    return q_online, q_target, caches


def n_step_targets(
    batch: list[StoredSequence],
    params: QNetParams,
    target_params: QNetParams,
    bootstrap_discount: float,
    n_step: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Targets and mask, shape (B, L), from forwards over the stored slices."""
    q_online, q_target, _ = _batch_forwards(batch, params, target_params)
    targets = np.zeros(q_online.shape[:2])
    mask = np.zeros(q_online.shape[:2], dtype=bool)
    for b, seq in enumerate(batch):
        targets[b], mask[b] = assemble_targets(
            q_online[b],
            q_target[b],
            seq.valid_len,
            seq.terminal,
            seq.terminal_reward,
            bootstrap_discount,
            n_step,
        )
    return targets, mask


# --- optimization -----------------------------------------------------------


def clip_gradient_norm(grads: Gradients, max_norm: float) -> float:
    """Scale gradients in place to the global-norm budget; returns the norm."""
    norm = math.sqrt(math.fsum(float(np.sum(g * g)) for _, g in grads.arrays()))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, g in grads.arrays():
            g *= scale
    return norm


def adam_update(
    params: QNetParams,
    grads: Gradients,
    opt: OptimizerState,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    opt.step += 1
    bc1 = 1.0 - beta1**opt.step
    bc2 = 1.0 - beta2**opt.step
    for (_, p), (_, g), (_, m), (_, v) in zip(
        params.arrays(), grads.arrays(), opt.m.arrays(), opt.v.arrays()
    ):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + eps)


def sync_target(params: QNetParams) -> QNetParams:
    """Fresh bit-exact copy of the online parameters."""
    return params.copy()


def batch_loss(
    q_chosen: np.ndarray, targets: np.ndarray, mask: np.ndarray, weights: np.ndarray
) -> float:
    """Mean over unmasked steps of weight * half squared error.

    Uses exactly rounded summation, so the result is bit-identical under any
    permutation of the batch.
    """
    delta = np.where(mask, q_chosen - targets, 0.0)
    n_unmasked = int(mask.sum())
    if not n_unmasked:
        return 0.0
    terms = (weights[:, None] * 0.5 * delta * delta)[mask]
    return math.fsum(terms.tolist()) / n_unmasked


@dataclass
class TrainStepReport:
    loss: float
    grad_norm: float
    unmasked_steps: int
    stale_refs_skipped: int
    priorities: list[float] = field(default_factory=list)


def train_step(
    replay: SegmentedReplay,
    params: QNetParams,
    target_params: QNetParams,
    opt: OptimizerState,
    cfg: LearnerConfig,
) -> TrainStepReport:
    """One prioritized batch: loss, clipped BPTT update, priority refresh.

    Mutates params and opt in place; the loss reduction uses exact summation,
    so it is invariant to batch order.
    """
    items = replay.sample(cfg.batch_size)
    batch = [item.sequence for item in items]
    weights = np.array([item.weight for item in items])

    q_online, q_target, caches = _batch_forwards(batch, params, target_params)
    b, length, n_actions = q_online.shape
    targets = np.zeros((b, length))
    mask = np.zeros((b, length), dtype=bool)
    for i, seq in enumerate(batch):
        targets[i], mask[i] = assemble_targets(
            q_online[i],
            q_target[i],
            seq.valid_len,
            seq.terminal,
            seq.terminal_reward,
            cfg.bootstrap_discount,
            cfg.n_step,
        )

    actions = np.stack([seq.actions for seq in batch])
    q_chosen = np.take_along_axis(q_online, actions[:, :, None], axis=2)[:, :, 0]
    delta = np.where(mask, q_chosen - targets, 0.0)
    n_unmasked = int(mask.sum())
    loss = batch_loss(q_chosen, targets, mask, weights)

    dq = np.zeros_like(q_online)
    if n_unmasked:
        scaled = (weights[:, None] * delta) / n_unmasked
        np.put_along_axis(dq, actions[:, :, None], scaled[:, :, None] * mask[:, :, None], axis=2)

    grads = net.backward_batch(params, caches, dq)
    grad_norm = clip_gradient_norm(grads, cfg.grad_clip_norm)
    adam_update(params, grads, opt, cfg.learning_rate)

    priorities = np.where(mask, np.abs(delta), 0.0).max(axis=1).tolist()
    skipped = replay.update_priorities([item.ref for item in items], priorities)

    return TrainStepReport(
        loss=loss,
        grad_norm=grad_norm,
        unmasked_steps=n_unmasked,
        stale_refs_skipped=skipped,
        priorities=priorities,
    )
