"""Deterministic two-player fog-of-war macro-strategy duel.

Both players issue one macro action per tick. The agent (player 0) sees a
fog-filtered view; scripted opponents (player 1) see the full state. All
arithmetic is integer so episodes replay bit-exactly from (seed, opponent,
action stream).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

RULES_VERSION = "fogduel-v1"

T_MAX = 200
WORKER_CAP_PER_BASE = 8
SCOUT_DURATION = 3

START_MINERALS = 50
START_WORKERS = 4

# Combat tuning: unit u beats COUNTERED_BY-inverse; countered damage doubles.
COUNTER_BONUS = 2
DEFENSE_POWER = 3
KILL_COST = 6  # power required per unit removed (and per defense, from residual)

# Score weights (stand-in for an engine-defined score).
SCORE_PER_BASE = 50
SCORE_PER_DEFENSE = 10
SCORE_PER_WORKER = 5
UNIT_COST = (8, 8, 12)  # army types A, B, C


class MacroAction(enum.IntEnum):
    """The 10 macro actions, stable encoding 0..9."""

    PRODUCE_WORKER = 0
    PRODUCE_A = 1
    PRODUCE_B = 2
    PRODUCE_C = 3
    BUILD_BASE = 4
    BUILD_DEFENSE = 5
    UPGRADE_TECH = 6
    SCOUT = 7
    ATTACK = 8
    WAIT = 9


N_ACTIONS = len(MacroAction)

# action -> (mineral cost, minimum tech level)
ACTION_COST = {
    MacroAction.PRODUCE_WORKER: (20, 0),
    MacroAction.PRODUCE_A: (8, 0),
    MacroAction.PRODUCE_B: (8, 1),
    MacroAction.PRODUCE_C: (12, 2),
    MacroAction.BUILD_BASE: (120, 0),
    MacroAction.BUILD_DEFENSE: (30, 1),
    MacroAction.UPGRADE_TECH: (60, 0),
    MacroAction.SCOUT: (5, 0),
    MacroAction.ATTACK: (0, 0),
    MacroAction.WAIT: (0, 0),
}


class ScriptedPolicy(str, enum.Enum):
    RUSHER = "rusher"
    ECONOMIST = "economist"
    TURTLE_TECH = "turtle_tech"
    RANDOM_LEGAL = "random_legal"


class Winner(str, enum.Enum):
    AGENT = "agent"
    OPPONENT = "opponent"
    NONE = "none"


@dataclass
class PlayerState:
    minerals: int = 0
    workers: int = 0
    army_a: int = 0
    army_b: int = 0
    army_c: int = 0
    bases: int = 0
    defenses: int = 0
    tech: int = 0

    @property
    def army(self) -> tuple[int, int, int]:
        return (self.army_a, self.army_b, self.army_c)

    @property
    def army_total(self) -> int:
        return self.army_a + self.army_b + self.army_c

    def copy(self) -> "PlayerState":
        return replace(self)


def start_player() -> PlayerState:
    return PlayerState(minerals=START_MINERALS, workers=START_WORKERS, bases=1)


@dataclass
class GameState:
    tick: int = 0
    players: list[PlayerState] = field(default_factory=lambda: [start_player(), start_player()])
    scout_timers: list[int] = field(default_factory=lambda: [0, 0])
    terminal: bool = False
    winner: Winner = Winner.NONE
    last_combat_tick: int | None = None


@dataclass
class ObservationFrame:
    """Fog-filtered per-player view. `enemy` is valid only when `enemy_visible`."""

    tick: int
    own: PlayerState
    enemy_visible: bool
    enemy: PlayerState | None
    last_combat_tick: int | None


@dataclass
class StepResult:
    obs: ObservationFrame
    terminal: bool
    winner: Winner
    score_agent: float
    score_opponent: float
    illegal: bool


class EpisodeTerminatedError(RuntimeError):
    """Raised when step() is called on a finished episode; state is unchanged."""


def game_score(p: PlayerState) -> float:
    """Linear in-game score: buildings + units + resources."""
    army_value = sum(c * n for c, n in zip(UNIT_COST, p.army))
    return float(
        SCORE_PER_BASE * p.bases
        + SCORE_PER_DEFENSE * p.defenses
        + SCORE_PER_WORKER * p.workers
        + army_value
        + p.minerals
    )


def legal_for(p: PlayerState) -> set[MacroAction]:
    """Actions affordable and tech-unlocked for this player state."""
    legal = {MacroAction.WAIT}
    for action, (cost, min_tech) in ACTION_COST.items():
        if action is MacroAction.WAIT:
            continue
        if p.minerals < cost or p.tech < min_tech:
            continue
        if action is MacroAction.ATTACK and p.army_total == 0:
            continue
        if action is MacroAction.UPGRADE_TECH and p.tech >= 2:
            continue
        legal.add(action)
    return legal


def legal_actions(obs: ObservationFrame) -> set[MacroAction]:
    return legal_for(obs.own)


# --- combat -----------------------------------------------------------------

# A beats B, B beats C, C beats A.
_COUNTERS = {0: 1, 1: 2, 2: 0}

# Unit loss order: defenders lose B, C, A; attackers lose A, B, C.
_DEFENDER_LOSS_ORDER = (1, 2, 0)
_ATTACKER_LOSS_ORDER = (0, 1, 2)


def _majority_type(army: tuple[int, int, int]) -> int | None:
    if sum(army) == 0:
        return None
    return max(range(3), key=lambda u: (army[u], -u))


def _power(army: tuple[int, int, int], enemy_majority: int | None) -> int:
    total = 0
    for u, count in enumerate(army):
        bonus = COUNTER_BONUS if enemy_majority is not None and _COUNTERS[u] == enemy_majority else 1
        total += count * bonus
    return total


def _remove_units(p: PlayerState, count: int, order: tuple[int, int, int]) -> None:
    fields = ("army_a", "army_b", "army_c")
    for u in order:
        if count == 0:
            break
        taken = min(getattr(p, fields[u]), count)
        setattr(p, fields[u], getattr(p, fields[u]) - taken)
        count -= taken


def resolve_directed_attack(attacker: PlayerState, defender: PlayerState) -> tuple[PlayerState, PlayerState]:
    """One simultaneous combat round: attacker strikes the defender's position.

    Kills are floor(opposing power / KILL_COST), capped by available units.
    Attacker power left over after army kills chips defenses; the base falls
    only once army and defenses are both gone, at most one base per attack.
    """
    att, dfn = attacker.copy(), defender.copy()
    p_att = _power(att.army, _majority_type(dfn.army))
    p_def = _power(dfn.army, _majority_type(att.army)) + DEFENSE_POWER * dfn.defenses

    army_kills = min(dfn.army_total, p_att // KILL_COST)
    attacker_losses = min(att.army_total, p_def // KILL_COST)

    _remove_units(dfn, army_kills, _DEFENDER_LOSS_ORDER)
    residual = p_att - KILL_COST * army_kills
    dfn.defenses -= min(dfn.defenses, residual // KILL_COST)
    _remove_units(att, attacker_losses, _ATTACKER_LOSS_ORDER)

    if dfn.army_total == 0 and dfn.defenses == 0 and dfn.bases > 0:
        dfn.bases -= 1
    return att, dfn


def resolve_meeting_battle(a: PlayerState, b: PlayerState) -> tuple[PlayerState, PlayerState]:
    """Both sides attacked in the same tick: armies clash in the open.

    No defense bonus and no structural damage; both sides lose units in
    attacker order.
    """
    a, b = a.copy(), b.copy()
    p_a = _power(a.army, _majority_type(b.army))
    p_b = _power(b.army, _majority_type(a.army))
    a_losses = min(a.army_total, p_b // KILL_COST)
    b_losses = min(b.army_total, p_a // KILL_COST)
    _remove_units(a, a_losses, _ATTACKER_LOSS_ORDER)
    _remove_units(b, b_losses, _ATTACKER_LOSS_ORDER)
    return a, b


# --- scripted opponents -----------------------------------------------------


def _rusher(me: PlayerState, legal: set[MacroAction]) -> MacroAction:
    # Wave pattern: mass to 8, press the attack, rebuild. The gaps between
    # waves are the defender's only economic windows.
    if MacroAction.ATTACK in legal and me.army_total >= 8:
        return MacroAction.ATTACK
    if MacroAction.PRODUCE_A in legal:
        return MacroAction.PRODUCE_A
    return MacroAction.WAIT


def _economist(me: PlayerState, legal: set[MacroAction]) -> MacroAction:
    if me.army_total < 2 and MacroAction.PRODUCE_A in legal:
        return MacroAction.PRODUCE_A
    if me.workers < WORKER_CAP_PER_BASE * me.bases and MacroAction.PRODUCE_WORKER in legal:
        return MacroAction.PRODUCE_WORKER
    if me.bases < 4 and MacroAction.BUILD_BASE in legal:
        return MacroAction.BUILD_BASE
    if me.army_a < 4 and MacroAction.PRODUCE_A in legal:
        return MacroAction.PRODUCE_A
    return MacroAction.WAIT


def _turtle_tech(me: PlayerState, legal: set[MacroAction]) -> MacroAction:
    if me.army_a < 4 and MacroAction.PRODUCE_A in legal:
        return MacroAction.PRODUCE_A
    if me.tech == 0 and MacroAction.UPGRADE_TECH in legal:
        return MacroAction.UPGRADE_TECH
    if me.defenses < 2 and MacroAction.BUILD_DEFENSE in legal:
        return MacroAction.BUILD_DEFENSE
    if me.tech == 1 and MacroAction.UPGRADE_TECH in legal:
        return MacroAction.UPGRADE_TECH
    if me.army_c < 10 and MacroAction.PRODUCE_C in legal:
        return MacroAction.PRODUCE_C
    if MacroAction.ATTACK in legal and me.army_c >= 6:
        return MacroAction.ATTACK
    if me.workers < 8 and MacroAction.PRODUCE_WORKER in legal:
        return MacroAction.PRODUCE_WORKER
    return MacroAction.WAIT


def scripted_act(policy: ScriptedPolicy, state: GameState, seed: int, player: int = 1) -> MacroAction:
    """Deterministic opponent decision from the full state.

    Pure in (policy, state, seed): RandomLegal derives its randomness from
    (seed, tick, player) only.
    """
    me = state.players[player]
    legal = legal_for(me)
    if policy is ScriptedPolicy.RUSHER:
        action = _rusher(me, legal)
    elif policy is ScriptedPolicy.ECONOMIST:
        action = _economist(me, legal)
    elif policy is ScriptedPolicy.TURTLE_TECH:
        action = _turtle_tech(me, legal)
    elif policy is ScriptedPolicy.RANDOM_LEGAL:
        rng = np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, state.tick, player])
        choices = sorted(legal)
        action = choices[int(rng.integers(len(choices)))]
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown policy {policy!r}")
    return action if action in legal else MacroAction.WAIT


# --- environment ------------------------------------------------------------


class DuelEnv:
    """One episode at a time; single-threaded, independently owned."""

    def __init__(self) -> None:
        self._state: GameState | None = None
        self._seed = 0
        self._opponent = ScriptedPolicy.RUSHER

    @property
    def state(self) -> GameState:
        assert self._state is not None, "reset() before reading state"
        return self._state

    def reset(self, seed: int, opponent: ScriptedPolicy) -> ObservationFrame:
        self._seed = seed
        self._opponent = opponent
        self._state = GameState()
        return self._observe(combat_this_tick=False)

    def step(self, action: MacroAction) -> StepResult:
        s = self.state
        if s.terminal:
            raise EpisodeTerminatedError("episode already terminal")

        agent, opp = s.players
        agent_action = MacroAction(action)
        illegal = agent_action not in legal_for(agent)
        if illegal:
            agent_action = MacroAction.WAIT
        opp_action = scripted_act(self._opponent, s, self._seed)

        # Economy: each worker yields one mineral, capped per base.
        for p in s.players:
            p.minerals += min(p.workers, WORKER_CAP_PER_BASE * p.bases)

        # Scout timers from earlier ticks decay before this tick's scouts land.
        for i in (0, 1):
            if s.scout_timers[i] > 0:
                s.scout_timers[i] -= 1

        self._apply(0, agent_action)
        self._apply(1, opp_action)

        combat = False
        if agent_action is MacroAction.ATTACK and opp_action is MacroAction.ATTACK:
            s.players[0], s.players[1] = resolve_meeting_battle(agent, opp)
            combat = True
        elif agent_action is MacroAction.ATTACK:
            s.players[0], s.players[1] = resolve_directed_attack(agent, opp)
            combat = True
        elif opp_action is MacroAction.ATTACK:
            s.players[1], s.players[0] = resolve_directed_attack(opp, agent)
            combat = True
        if combat:
            s.last_combat_tick = s.tick

        s.tick += 1
        agent, opp = s.players
        if agent.bases == 0 or opp.bases == 0 or s.tick >= T_MAX:
            s.terminal = True
            if opp.bases == 0 and agent.bases > 0:
                s.winner = Winner.AGENT
            elif agent.bases == 0 and opp.bases > 0:
                s.winner = Winner.OPPONENT
            else:
                s.winner = Winner.NONE

        return StepResult(
            obs=self._observe(combat_this_tick=combat),
            terminal=s.terminal,
            winner=s.winner,
            score_agent=game_score(agent),
            score_opponent=game_score(opp),
            illegal=illegal,
        )

    def _apply(self, player: int, action: MacroAction) -> None:
        s = self.state
        p = s.players[player]
        cost, _ = ACTION_COST[action]
        p.minerals -= cost
        if action is MacroAction.PRODUCE_WORKER:
            p.workers += 1
        elif action is MacroAction.PRODUCE_A:
            p.army_a += 1
        elif action is MacroAction.PRODUCE_B:
            p.army_b += 1
        elif action is MacroAction.PRODUCE_C:
            p.army_c += 1
        elif action is MacroAction.BUILD_BASE:
            p.bases += 1
        elif action is MacroAction.BUILD_DEFENSE:
            p.defenses += 1
        elif action is MacroAction.UPGRADE_TECH:
            p.tech += 1
        elif action is MacroAction.SCOUT:
            s.scout_timers[player] = SCOUT_DURATION

    def _observe(self, combat_this_tick: bool) -> ObservationFrame:
        s = self.state
        visible = s.scout_timers[0] > 0 or combat_this_tick
        return ObservationFrame(
            tick=s.tick,
            own=s.players[0].copy(),
            enemy_visible=visible,
            enemy=s.players[1].copy() if visible else None,
            last_combat_tick=s.last_combat_tick,
        )
