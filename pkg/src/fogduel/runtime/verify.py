"""Fast self-verification battery behind the `check` command.

Each check is independent and prints one verdict line; any failure makes the
whole report fail. These are smoke-strength versions of the full test suite,
meant to catch a miscompiled or locally patched build in seconds.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .. import net
from ..actor import epsilon_for
from ..learner import assemble_targets, shaped_terminal_reward
from ..replay import SegmentedReplay, StoredSequence
from ..sim import DuelEnv, MacroAction, ScriptedPolicy

# Frozen digest of a fixed scripted playout; any rules change must bump
# RULES_VERSION and refresh this value (tests/test_sim.py shows the recipe).
GOLDEN_TRACE_DIGEST = "1dbe36a59273bde9c280ae5f5ca19366e8a97b3666deea05e2b588f978f77ec3"


def golden_trace_digest() -> str:
    """Digest of a deterministic playout exercising economy, scouting, combat.

    The attack cadence deliberately lands at odd army sizes so any change to
    the combat constants shifts the casualty arithmetic somewhere in the
    trace.
    """
    env = DuelEnv()
    obs = env.reset(123, ScriptedPolicy.TURTLE_TECH)
    script = (
        [MacroAction.PRODUCE_A] * 5
        + [MacroAction.ATTACK]
        + [MacroAction.PRODUCE_A] * 2
        + [MacroAction.ATTACK, MacroAction.SCOUT]
        + [MacroAction.PRODUCE_A] * 3
        + [MacroAction.ATTACK] * 7
        + [MacroAction.PRODUCE_WORKER, MacroAction.UPGRADE_TECH, MacroAction.PRODUCE_B] * 10
        + [MacroAction.ATTACK] * 60
    )
    lines = [f"start {obs.own} {obs.enemy_visible}"]
    for step_idx in range(200):
        action = script[step_idx] if step_idx < len(script) else MacroAction.WAIT
        result = env.step(action)
        o = result.obs
        lines.append(
            f"{o.tick} {o.own} vis={o.enemy_visible} enemy={o.enemy} "
            f"scores={result.score_agent}/{result.score_opponent} "
            f"illegal={result.illegal} terminal={result.terminal} winner={result.winner.value}"
        )
        if result.terminal:
            break
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()


def _check_sum_tree_audit() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    replay = SegmentedReplay(["a", "b"], segment_capacity=64, seed=5)
    refs = []
    for _ in range(1500):
        op = rng.integers(3)
        seg = "a" if rng.random() < 0.5 else "b"
        if op == 0:
            replay.append(seg, [_dummy_sequence(seg)], [float(rng.uniform(0.01, 5.0))])
        elif op == 1 and len(replay) >= 4:
            items = replay.sample(4)
            refs = [it.ref for it in items]
        elif op == 2 and refs:
            replay.update_priorities(refs, list(rng.uniform(0.0, 3.0, size=len(refs))))
    err = replay.audit_max_error()
    return bool(err <= 1e-9), f"max subtree error {err:.2e} after 1500 random ops"


def _dummy_sequence(opponent: str) -> StoredSequence:
    return StoredSequence(
        opponent_id=opponent,
        features=np.zeros((16, 24)),
        actions=np.zeros(16, dtype=np.int64),
        valid_len=16,
        boundary_h=np.zeros(4),
        boundary_c=np.zeros(4),
        terminal=False,
        terminal_reward=None,
        episode_id=0,
        start_tick=0,
    )


def _check_finite_diff() -> tuple[bool, str]:
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        params = net.init_params(seed, in_dim=24, enc_dim=16, cell_dim=12, n_actions=10)
        seq = rng.uniform(0.0, 1.0, size=(int(rng.integers(2, 7)), 24))
        worst = max(worst, net.finite_diff_check(params, seq, probe_seed=seed, n_coords=120))
    return worst < 1e-4, f"max relative gradient error {worst:.2e} over 5 instances"


def _check_target_oracle() -> tuple[bool, str]:
    rng = np.random.default_rng(21)
    worst = 0.0
    for _ in range(300):
        length = int(rng.integers(1, 7))
        q_on = rng.standard_normal((length, 3))
        q_tg = rng.standard_normal((length, 3))
        terminal = bool(rng.random() < 0.5)
        reward = float(rng.uniform(-1, 1)) if terminal else None
        lam = float(rng.uniform(0.9, 1.0))
        n = int(rng.integers(1, 4))
        got_g, got_m = assemble_targets(q_on, q_tg, length, terminal, reward, lam, n)
        # direct unrolled definition, independent of the implementation above
        for t in range(length):
            last = length - 1
            if terminal and last - t <= n:
                want = lam ** (last - t) * reward
                ok = True
            elif t + n <= last:
                row = q_on[t + n]
                best = 0
                for a in range(1, 3):
                    if row[a] > row[best]:
                        best = a
                want = lam**n * q_tg[t + n, best]
                ok = True
            else:
                want, ok = 0.0, False
            if got_m[t] != ok:
                return False, f"mask mismatch at t={t}"
            if ok:
                worst = max(worst, abs(got_g[t] - want))
    return worst < 1e-12, f"max target deviation {worst:.2e} over 300 instances"


def _check_epsilon_schedule() -> tuple[bool, str]:
    if epsilon_for(0, 1000) != 0.4:
        return False, "epsilon at i=0 is not eps_base"
    if epsilon_for(999, 1000) != 0.4**8:
        return False, "epsilon at i=N-1 is not eps_base**(1+alpha)"
    values = [epsilon_for(i, 64) for i in range(64)]
    if any(b >= a for a, b in zip(values, values[1:])):
        return False, "epsilon schedule is not strictly decreasing"
    return True, "endpoints exact, strictly decreasing across 64 actors"


def _check_reward_identities() -> tuple[bool, str]:
    rng = np.random.default_rng(31)
    for _ in range(3000):
        a = float(rng.uniform(0, 500))
        b = float(rng.uniform(0, 500))
        t = float(rng.integers(0, 200))
        r = shaped_terminal_reward(a, b, t)
        direct = 0.999**t * (a - b) / max(a, b) if max(a, b) > 0 else 0.0
        if abs(r - direct) > 1e-12:
            return False, f"reward mismatch at ({a}, {b}, {t})"
        if not -1.0 <= r <= 1.0:
            return False, "reward out of [-1, 1]"
        if abs(r + shaped_terminal_reward(b, a, t)) > 1e-12:
            return False, "reward not antisymmetric"
    if shaped_terminal_reward(7.0, 7.0, 3.0) != 0.0:
        return False, "equal scores must give exactly 0"
    return True, "formula, bounds, antisymmetry on 3000 random triples"


def _check_env_golden_trace() -> tuple[bool, str]:
    digest = golden_trace_digest()
    if digest != GOLDEN_TRACE_DIGEST:
        return False, f"trace digest {digest[:12]}... != frozen {GOLDEN_TRACE_DIGEST[:12]}..."
    return True, f"playout digest {digest[:12]}... matches frozen value"


CHECKS = [
    ("sum_tree_audit", _check_sum_tree_audit),
    ("gradient_finite_diff", _check_finite_diff),
    ("n_step_target_oracle", _check_target_oracle),
    ("epsilon_schedule", _check_epsilon_schedule),
    ("reward_shaping_identities", _check_reward_identities),
    ("env_golden_trace", _check_env_golden_trace),
]


def check() -> tuple[bool, list[str]]:
    """Run every verification; returns (all passed, one line per property)."""
    lines = []
    all_ok = True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crash is a failed check
            ok, detail = False, f"crashed: {exc!r}"
        all_ok = all_ok and bool(ok)
        lines.append(f"[{'pass' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok, lines
