"""Observation + accumulated enemy history -> fixed 24-entry feature vector.

History survives the fog of war: the encoder sees the freshest enemy snapshot
ever scouted, how stale it is, and monotone "ever seen" flags per enemy unit
type. Everything is normalized into [0, 1]; values past a cap clip to 1.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .sim import T_MAX, ObservationFrame, PlayerState

FEATURE_LAYOUT_VERSION = "features-v1"
FEATURE_DIM = 24

STALENESS_HORIZON = 50  # ticks after which a scouted snapshot counts as fully stale

CAP_MINERALS = 500
CAP_WORKERS = 32
CAP_ARMY_EACH = 40
CAP_ARMY_TOTAL = 120
CAP_BASES = 4
CAP_DEFENSES = 10
CAP_TECH = 2


@dataclass(frozen=True)
class HistoryFeatures:
    """Accumulated last-seen enemy information; flags never clear in-episode."""

    last_seen: PlayerState
    last_seen_tick: int | None
    seen_unit_a: bool = False
    seen_unit_b: bool = False
    seen_unit_c: bool = False
    seen_defenses: bool = False
    seen_expansion: bool = False  # enemy bases > 1
    seen_tech: bool = False  # enemy tech > 0


def empty_history() -> HistoryFeatures:
    return HistoryFeatures(last_seen=PlayerState(), last_seen_tick=None)


def update_history(h: HistoryFeatures, obs: ObservationFrame) -> HistoryFeatures:
    if not obs.enemy_visible:
        return h
    enemy = obs.enemy
    assert enemy is not None
    if h.last_seen_tick is not None and obs.tick < h.last_seen_tick:
        raise ValueError("observation older than recorded history")
    return HistoryFeatures(
        last_seen=enemy.copy(),
        last_seen_tick=obs.tick,
        seen_unit_a=h.seen_unit_a or enemy.army_a > 0,
        seen_unit_b=h.seen_unit_b or enemy.army_b > 0,
        seen_unit_c=h.seen_unit_c or enemy.army_c > 0,
        seen_defenses=h.seen_defenses or enemy.defenses > 0,
        seen_expansion=h.seen_expansion or enemy.bases > 1,
        seen_tech=h.seen_tech or enemy.tech > 0,
    )


def _norm(value: float, cap: float) -> float:
    return min(1.0, max(0.0, value / cap))


def _player_block(p: PlayerState) -> list[float]:
    return [
        _norm(p.minerals, CAP_MINERALS),
        _norm(p.workers, CAP_WORKERS),
        _norm(p.army_a, CAP_ARMY_EACH),
        _norm(p.army_b, CAP_ARMY_EACH),
        _norm(p.army_c, CAP_ARMY_EACH),
        _norm(p.army_total, CAP_ARMY_TOTAL),
        _norm(p.bases, CAP_BASES),
        _norm(p.defenses, CAP_DEFENSES),
        _norm(p.tech, CAP_TECH),
    ]


def encode(obs: ObservationFrame, h: HistoryFeatures) -> np.ndarray:
    """Deterministic layout; see feature_layout() for the index table."""
    if h.last_seen_tick is None:
        staleness = 1.0
    else:
        staleness = _norm(obs.tick - h.last_seen_tick, STALENESS_HORIZON)
    values = (
        _player_block(obs.own)
        + [_norm(obs.tick, T_MAX)]
        + [1.0 if obs.enemy_visible else 0.0]
        + _player_block(h.last_seen)
        + [staleness]
        + [
            1.0 if h.seen_unit_a else 0.0,
            1.0 if h.seen_unit_b else 0.0,
            1.0 if h.seen_unit_c else 0.0,
        ]
    )
    vec = np.asarray(values, dtype=np.float64)
    assert vec.shape == (FEATURE_DIM,)
    return vec


_BLOCK_FIELDS = [
    ("minerals", CAP_MINERALS),
    ("workers", CAP_WORKERS),
    ("army_a", CAP_ARMY_EACH),
    ("army_b", CAP_ARMY_EACH),
    ("army_c", CAP_ARMY_EACH),
    ("army_total", CAP_ARMY_TOTAL),
    ("bases", CAP_BASES),
    ("defenses", CAP_DEFENSES),
    ("tech", CAP_TECH),
]


def feature_layout() -> list[tuple[int, str, str]]:
    """(index, name, meaning) for every feature entry."""
    rows = []
    for i, (name, cap) in enumerate(_BLOCK_FIELDS):
        rows.append((i, f"own_{name}", f"own {name} / {cap}, clipped to [0, 1]"))
    rows.append((9, "tick", f"decision tick / {T_MAX}"))
    rows.append((10, "enemy_visible", "1 when the enemy is currently observed (scout or combat)"))
    for i, (name, cap) in enumerate(_BLOCK_FIELDS):
        rows.append((11 + i, f"seen_{name}", f"last scouted enemy {name} / {cap}, zeros if never seen"))
    rows.append((20, "staleness", f"min(1, ticks since last sighting / {STALENESS_HORIZON}); 1 if never seen"))
    rows.append((21, "ever_seen_a", "enemy has ever shown army type A"))
    rows.append((22, "ever_seen_b", "enemy has ever shown army type B"))
    rows.append((23, "ever_seen_c", "enemy has ever shown army type C"))
    assert len(rows) == FEATURE_DIM
    return rows


def render_layout_markdown() -> str:
    lines = [
        "# Feature layout",
        "",
        f"Layout version: `{FEATURE_LAYOUT_VERSION}`, {FEATURE_DIM} entries, all in [0, 1].",
        "",
        "| index | name | meaning |",
        "| --- | --- | --- |",
    ]
    for idx, name, meaning in feature_layout():
        lines.append(f"| {idx} | `{name}` | {meaning} |")
    lines.append("")
    return "\n".join(lines)


def write_layout_doc(path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(render_layout_markdown())
