"""Per-node concentric-ring neighbor store.

Neighbors are binned into exponentially spaced delay rings: ring i spans
(alpha_base * s^(i-1), alpha_base * s^i], delays at or below alpha_base fall
into ring 1, and everything beyond the outermost boundary collapses into
ring i_max.  Each entry keeps a moving-median latency filter, a cached copy
of the neighbor's coordinate, and the neighbor's advertised non-empty ring
count.  Over-full rings are thinned by greedy max-min dispersion over cached
coordinate distances, keeping the most geographically diverse subset without
any extra probing.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

from .coordinates import Coordinate

MEDIAN_WINDOW = 5

DEFAULT_CAPACITY = 8
DEFAULT_TOLERANCE = 2
DEFAULT_ALPHA_BASE = 1.0
DEFAULT_SPACING = 2.0
DEFAULT_MAX_RING = 20


def ring_index(delay: float, alpha_base: float = DEFAULT_ALPHA_BASE,
               s: float = DEFAULT_SPACING, i_max: int = DEFAULT_MAX_RING) -> int:
    """Smallest ring i >= 1 with delay <= alpha_base * s^i, clamped to [1, i_max]."""
    if delay <= 0:
        raise ValueError(f"delay must be > 0, got {delay}")
    if alpha_base <= 0 or s <= 1:
        raise ValueError("need alpha_base > 0 and s > 1")
    if delay <= alpha_base * s:
        return 1
    i = math.ceil(math.log(delay / alpha_base) / math.log(s))
    # repair float error at the interval boundaries
    while i > 1 and delay <= alpha_base * s ** (i - 1):
        i -= 1
    while i < i_max and delay > alpha_base * s ** i:
        i += 1
    return min(max(i, 1), i_max)


@dataclass
class RingEntry:
    neighbor: int
    window: deque = field(default_factory=lambda: deque(maxlen=MEDIAN_WINDOW))
    filtered_delay: float = 0.0
    coord: Coordinate | None = None
    nonempty_ring_count: int = 0
    last_seen: float = 0.0

    def push(self, sample: float) -> None:
        self.window.append(sample)
        w = sorted(self.window)
        n = len(w)
        mid = n // 2
        self.filtered_delay = w[mid] if n % 2 else (w[mid - 1] + w[mid]) / 2.0


class ConcentricRing:
    """Ring store owned by one node; never holds the owner itself."""

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        tolerance: int = DEFAULT_TOLERANCE,
        alpha_base: float = DEFAULT_ALPHA_BASE,
        s: float = DEFAULT_SPACING,
        i_max: int = DEFAULT_MAX_RING,
    ):
        if capacity < 1 or tolerance < 0:
            raise ValueError("capacity must be >= 1 and tolerance >= 0")
        self.capacity = capacity
        self.tolerance = tolerance
        self.alpha_base = alpha_base
        self.s = s
        self.i_max = i_max
        self.rings: list[list[RingEntry]] = [[] for _ in range(i_max + 1)]  # index 1..i_max
        self._where: dict[int, int] = {}  # neighbor id -> ring index

    # -- queries ----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._where)

    def __contains__(self, neighbor: int) -> bool:
        return neighbor in self._where

    def entry(self, neighbor: int) -> RingEntry | None:
        i = self._where.get(neighbor)
        if i is None:
            return None
        for e in self.rings[i]:
            if e.neighbor == neighbor:
                return e
        return None

    def all_entries(self) -> list[RingEntry]:
        out = []
        for i in range(1, self.i_max + 1):
            out.extend(self.rings[i])
        return out

    def nonempty_count(self) -> int:
        return sum(1 for i in range(1, self.i_max + 1) if self.rings[i])

    def nonempty_indices(self) -> list[int]:
        return [i for i in range(1, self.i_max + 1) if self.rings[i]]

    def index_for(self, delay: float) -> int:
        return ring_index(delay, self.alpha_base, self.s, self.i_max)

    def neighbors_in_rings(self, lo: int, hi: int) -> list[RingEntry]:
        """Entries of rings lo..min(hi, i_max), ordered by (ring, node id)."""
        if not 1 <= lo <= hi:
            raise ValueError(f"need 1 <= lo <= hi, got ({lo}, {hi})")
        out: list[RingEntry] = []
        for i in range(lo, min(hi, self.i_max) + 1):
            out.extend(sorted(self.rings[i], key=lambda e: e.neighbor))
        return out

    # -- updates ----------------------------------------------------------

    def observe(
        self,
        neighbor: int,
        sample: float,
        coord: Coordinate | None = None,
        nonempty_count: int = 0,
        now: float = 0.0,
    ) -> RingEntry:
        """Fold a fresh delay sample for ``neighbor`` into the store.

        Inserts or updates the entry, refreshes the median filter, and moves
        the entry between rings when the median crosses a boundary.
        """
        if sample <= 0:
            raise ValueError(f"delay sample must be > 0, got {sample}")
        cur = self._where.get(neighbor)
        if cur is None:
            e = RingEntry(neighbor=neighbor)
            e.push(sample)
            i = self.index_for(e.filtered_delay)
            self.rings[i].append(e)
            self._where[neighbor] = i
        else:
            e = self.entry(neighbor)
            assert e is not None
            e.push(sample)
            i = self.index_for(e.filtered_delay)
            if i != cur:
                self.rings[cur].remove(e)
                self.rings[i].append(e)
                self._where[neighbor] = i
        if coord is not None:
            e.coord = coord
        e.nonempty_ring_count = nonempty_count
        e.last_seen = now
        return e

    def remove(self, neighbor: int) -> bool:
        i = self._where.pop(neighbor, None)
        if i is None:
            return False
        self.rings[i] = [e for e in self.rings[i] if e.neighbor != neighbor]
        return True

    def manage(self, ring_i: int) -> list[int]:
        """Thin ring ``ring_i`` back to capacity when it is over threshold.

        Keeps the greedy max-min dispersion subset over cached coordinate
        distances (seeded with the farthest pair) and returns the evicted
        neighbor ids.  A ring under capacity + tolerance is a no-op.
        """
        entries = self.rings[ring_i]
        if len(entries) < self.capacity + self.tolerance:
            return []
        keep = _dispersed_subset(entries, self.capacity)
        kept_ids = {e.neighbor for e in keep}
        evicted = [e.neighbor for e in entries if e.neighbor not in kept_ids]
        self.rings[ring_i] = [e for e in entries if e.neighbor in kept_ids]
        for nid in evicted:
            self._where.pop(nid, None)
        return evicted

    def manage_all(self) -> list[int]:
        evicted = []
        for i in range(1, self.i_max + 1):
            if len(self.rings[i]) >= self.capacity + self.tolerance:
                evicted.extend(self.manage(i))
        return evicted


def _dispersed_subset(entries: list[RingEntry], size: int) -> list[RingEntry]:
    """Greedy max-min dispersion: farthest pair first, then repeatedly add the
    entry maximizing its minimum distance to the kept set.  Ties go to the
    smaller neighbor id so runs are reproducible."""
    if len(entries) <= size:
        return list(entries)
    import numpy as np

    order = sorted(entries, key=lambda e: e.neighbor)
    k = len(order)
    dim = max((len(e.coord.x) for e in order if e.coord is not None), default=1)
    pts = np.zeros((k, dim))
    for row, e in enumerate(order):
        if e.coord is not None:
            pts[row] = e.coord.x
    diff = pts[:, None, :] - pts[None, :, :]
    dmat = np.sqrt((diff * diff).sum(axis=2))
    a, b = divmod(int(dmat.argmax()), k)
    if a > b:
        a, b = b, a
    kept = [a, b]
    mind = np.minimum(dmat[a], dmat[b])
    mind[a] = mind[b] = -1.0
    while len(kept) < size:
        # argmax of min-distance; numpy argmax already prefers the lower index
        pick = int(mind.argmax())
        kept.append(pick)
        mind = np.minimum(mind, dmat[pick])
        mind[pick] = -1.0
    chosen = sorted(kept)
    return [order[i] for i in chosen]
