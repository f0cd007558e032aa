"""Per-opponent segmented replay with proportional prioritized sampling.

Each opponent owns one FIFO ring segment with its own sum tree; sampling
normalizes priorities across all segments, so an item's draw probability is
p^alpha / sum(p^alpha) regardless of which segment holds it. A min tree per
segment tracks the smallest stored mass so importance weights can be
normalized to max 1 without scanning.

Thread contract: one ingesting writer per segment plus one sampler/updater are
safe concurrently; a single coarse lock around every mutation satisfies it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

PRIORITY_EXPONENT = 0.6
IS_EXPONENT = 0.4
MIN_PRIORITY = 1e-3
DEFAULT_SEGMENT_CAPACITY = 4096

SEQUENCE_LENGTH = 16
SEQUENCE_STRIDE = 8


@dataclass
class StoredSequence:
    """Fixed-length training slice of one episode, zero-padded past valid_len.

    boundary_h/boundary_c are the actor's recurrent state entering the first
    step of the slice (all zeros when start_tick is 0). terminal_reward is
    present exactly when the episode's final step lies inside the slice.
    """

    opponent_id: str
    features: np.ndarray  # (SEQUENCE_LENGTH, feature dim)
    actions: np.ndarray  # (SEQUENCE_LENGTH,) int64, zero-padded
    valid_len: int
    boundary_h: np.ndarray
    boundary_c: np.ndarray
    terminal: bool
    terminal_reward: float | None
    episode_id: int
    start_tick: int


class ReplayError(Exception):
    pass


class UnknownSegmentError(ReplayError):
    pass


class InsufficientSamplesError(ReplayError):
    pass


class SumTree:
    """Array-backed binary sum tree over a power-of-two leaf count."""

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ValueError("capacity must be a power of two")
        self.capacity = capacity
        self._nodes = np.zeros(2 * capacity)

    def set(self, index: int, value: float) -> None:
        i = index + self.capacity
        self._nodes[i] = value
        i //= 2
        while i >= 1:
            self._nodes[i] = self._nodes[2 * i] + self._nodes[2 * i + 1]
            i //= 2

    def get(self, index: int) -> float:
        return float(self._nodes[index + self.capacity])

    @property
    def total(self) -> float:
        return float(self._nodes[1])

    def find_prefix(self, mass: float) -> int:
        """Leaf index i such that the cumulative sum up to i covers `mass`."""
        i = 1
        while i < self.capacity:
            left = self._nodes[2 * i]
            if mass < left:
                i = 2 * i
            else:
                mass -= left
                i = 2 * i + 1
        return i - self.capacity

    def max_subtree_error(self) -> float:
        """Largest |node - sum(children)| anywhere; 0 for a consistent tree."""
        internal = self._nodes[1 : self.capacity]
        children = self._nodes[2 : 2 * self.capacity].reshape(-1, 2).sum(axis=1)
        return float(np.max(np.abs(internal - children))) if internal.size else 0.0

    def leaf_values(self) -> np.ndarray:
        return self._nodes[self.capacity :].copy()


class _MinTree:
    """Same layout as SumTree but tracks the minimum; empty slots are +inf."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._nodes = np.full(2 * capacity, np.inf)

    def set(self, index: int, value: float) -> None:
        i = index + self.capacity
        self._nodes[i] = value
        i //= 2
        while i >= 1:
            self._nodes[i] = min(self._nodes[2 * i], self._nodes[2 * i + 1])
            i //= 2

    @property
    def minimum(self) -> float:
        return float(self._nodes[1])


@dataclass
class _Slot:
    sequence: StoredSequence
    priority: float  # raw |TD| + floor, before the alpha exponent
    stamp: int  # global insertion counter; detects eviction of stale refs


@dataclass(frozen=True)
class SampleRef:
    segment: str
    index: int
    stamp: int


@dataclass
class SampleItem:
    ref: SampleRef
    sequence: StoredSequence
    weight: float
    probability: float


@dataclass
class SegmentStats:
    size: int
    evictions: int
    max_priority: float


@dataclass
class ReplayStats:
    segments: dict[str, SegmentStats]
    total_size: int
    stale_refs_skipped: int


class _Segment:
    def __init__(self, capacity: int):
        self.capacity = capacity
        self.slots: list[_Slot | None] = [None] * capacity
        self.sum_tree = SumTree(capacity)
        self.min_tree = _MinTree(capacity)
        self.size = 0
        self.write_pos = 0
        self.evictions = 0
        self.max_priority = 1.0  # max priority seen so far; default for new data


class SegmentedReplay:
    def __init__(
        self,
        opponent_ids: list[str],
        segment_capacity: int = DEFAULT_SEGMENT_CAPACITY,
        priority_exponent: float = PRIORITY_EXPONENT,
        is_exponent: float = IS_EXPONENT,
        min_priority: float = MIN_PRIORITY,
        seed: int = 0,
    ):
        if not opponent_ids:
            raise ValueError("need at least one opponent segment")
        self._segments = {oid: _Segment(segment_capacity) for oid in opponent_ids}
        self._alpha = priority_exponent
        self._beta = is_exponent
        self._min_priority = min_priority
        self._rng = np.random.default_rng(seed)
        self._stamp = 0
        self._stale_refs = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return self._total_size()

    def _total_size(self) -> int:
        return sum(seg.size for seg in self._segments.values())

    def _segment(self, opponent_id: str) -> _Segment:
        try:
            return self._segments[opponent_id]
        except KeyError:
            raise UnknownSegmentError(f"no replay segment for opponent {opponent_id!r}") from None

    def append(
        self,
        opponent_id: str,
        sequences: list[StoredSequence],
        priorities: list[float] | None = None,
    ) -> int:
        """FIFO-insert into one segment; returns how many items were evicted.

        Without explicit priorities, new data enters at the segment's max
        priority seen so far (1.0 while empty) so it is sampled at least once.
        """
        with self._lock:
            seg = self._segment(opponent_id)
            if priorities is None:
                priorities = [seg.max_priority] * len(sequences)
            if len(priorities) != len(sequences):
                raise ValueError("one priority per sequence required")
            if any(p <= 0.0 for p in priorities):
                raise ValueError("priorities must be positive")
            evicted = 0
            for sequence, priority in zip(sequences, priorities):
                pos = seg.write_pos
                if seg.slots[pos] is not None:
                    evicted += 1
                    seg.evictions += 1
                else:
                    seg.size += 1
                self._stamp += 1
                seg.slots[pos] = _Slot(sequence, priority, self._stamp)
                mass = priority**self._alpha
                seg.sum_tree.set(pos, mass)
                seg.min_tree.set(pos, mass)
                seg.max_priority = max(seg.max_priority, priority)
                seg.write_pos = (pos + 1) % seg.capacity
            return evicted

    def sample(self, batch_size: int) -> list[SampleItem]:
        """Stratified proportional draw across all segments; max IS weight 1."""
        with self._lock:
            if self._total_size() < batch_size:
                raise InsufficientSamplesError(
                    f"replay holds {self._total_size()} sequences, need {batch_size}"
                )
            order = list(self._segments.items())
            totals = [seg.sum_tree.total for _, seg in order]
            grand = sum(totals)
            min_mass = min(seg.min_tree.minimum for _, seg in order if seg.size > 0)

            items = []
            stratum = grand / batch_size
            for k in range(batch_size):
                mass = (k + self._rng.random()) * stratum
                mass = min(mass, np.nextafter(grand, 0.0))
                seg_id, seg = order[-1][0], order[-1][1]
                for (oid, s), seg_total in zip(order, totals):
                    if mass < seg_total:
                        seg_id, seg = oid, s
                        break
                    mass -= seg_total
                index = seg.sum_tree.find_prefix(mass)
                slot = seg.slots[index]
                if slot is None:  # numeric edge: landed on an empty zero-mass leaf
                    index, slot = self._nearest_occupied(seg, index)
                item_mass = seg.sum_tree.get(index)
                weight = (item_mass / min_mass) ** (-self._beta)
                items.append(
                    SampleItem(
                        ref=SampleRef(seg_id, index, slot.stamp),
                        sequence=slot.sequence,
                        weight=weight,
                        probability=item_mass / grand,
                    )
                )
            return items

    @staticmethod
    def _nearest_occupied(seg: _Segment, index: int) -> tuple[int, _Slot]:
        for offset in range(seg.capacity):
            for cand in (index - offset, index + offset):
                slot = seg.slots[cand % seg.capacity]
                if slot is not None:
                    return cand % seg.capacity, slot
        raise InsufficientSamplesError("segment is empty")

    def update_priorities(self, refs: list[SampleRef], td_errors: list[float]) -> int:
        """Set priority |td| + floor per ref; silently skips evicted refs.

        Returns the number of stale refs skipped.
        """
        if len(refs) != len(td_errors):
            raise ValueError("one TD error per ref required")
        with self._lock:
            skipped = 0
            for ref, td in zip(refs, td_errors):
                seg = self._segment(ref.segment)
                slot = seg.slots[ref.index]
                if slot is None or slot.stamp != ref.stamp:
                    skipped += 1
                    continue
                priority = abs(float(td)) + self._min_priority
                slot.priority = priority
                mass = priority**self._alpha
                seg.sum_tree.set(ref.index, mass)
                seg.min_tree.set(ref.index, mass)
                seg.max_priority = max(seg.max_priority, priority)
            self._stale_refs += skipped
            return skipped

    def stats(self) -> ReplayStats:
        with self._lock:
            per_segment = {
                oid: SegmentStats(seg.size, seg.evictions, seg.max_priority)
                for oid, seg in self._segments.items()
            }
            return ReplayStats(
                segments=per_segment,
                total_size=self._total_size(),
                stale_refs_skipped=self._stale_refs,
            )

    def audit_max_error(self) -> float:
        """Worst internal-node inconsistency across all segment trees."""
        with self._lock:
            return max(seg.sum_tree.max_subtree_error() for seg in self._segments.values())

    def raw_priorities(self) -> dict[str, list[tuple[int, float]]]:
        """(index, raw priority) per occupied slot, for brute-force checks."""
        with self._lock:
            return {
                oid: [
                    (i, slot.priority)
                    for i, slot in enumerate(seg.slots)
                    if slot is not None
                ]
                for oid, seg in self._segments.items()
            }
