"""Timed blob-transaction pool with builder eligibility windows."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .transactions import BlobTx


@dataclass(frozen=True)
class EligibilityWindow:
    """A transaction counts as visible for a block expected at ``T`` iff
    ``T - max_age <= first_seen <= T - min_lead`` (both bounds closed)."""

    min_lead: float = 4.0
    max_age: float = 120.0

    def __post_init__(self) -> None:
        if not 0 < self.min_lead < self.max_age:
            raise ValueError("window needs 0 < min_lead < max_age")

    @property
    def min_lead_ms(self) -> int:
        return round(self.min_lead * 1000)

    @property
    def max_age_ms(self) -> int:
        return round(self.max_age * 1000)

    def contains(self, first_seen_ms: int, block_time_ms: int) -> bool:
        return block_time_ms - self.max_age_ms <= first_seen_ms <= block_time_ms - self.min_lead_ms


DEFAULT_WINDOW = EligibilityWindow()


def first_possible_block(
    first_seen: float,
    block_times: Sequence[float],
    window: EligibilityWindow = DEFAULT_WINDOW,
) -> Optional[int]:
    """Index into ``block_times`` of the earliest block whose window holds the tx."""
    seen_ms = round(first_seen * 1000)
    for i, t in enumerate(block_times):
        if window.contains(seen_ms, round(t * 1000)):
            return i
    return None


def first_possible_slot(
    first_seen: float, slot_seconds: int, window: EligibilityWindow = DEFAULT_WINDOW
) -> int:
    """Earliest slot number ``n`` (block time ``n * slot_seconds``) that can see the tx."""
    earliest_ms = round(first_seen * 1000) + window.min_lead_ms
    return max(1, math.ceil(earliest_ms / (slot_seconds * 1000)))


class TimedPool:
    """Pending blob transactions keyed by id.

    Private transactions are returned only by builder-scoped queries, and
    only to their designated builder (or to every builder when none is set).
    """

    def __init__(self, txs: Iterable[BlobTx] = ()) -> None:
        self._entries: Dict[str, BlobTx] = {}
        self._private_to: Dict[str, Optional[str]] = {}
        # (first_seen_ms, id), may hold ids already removed; pruned lazily
        self._order: List[Tuple[int, str]] = []
        self._stale = 0
        self.clock: float = 0.0
        for tx in txs:
            self.insert(tx)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, tx_id: object) -> bool:
        return tx_id in self._entries

    def __iter__(self):
        return iter(self._entries.values())

    def get(self, tx_id: str) -> BlobTx:
        return self._entries[tx_id]

    def insert(self, tx: BlobTx, builder: Optional[str] = None) -> None:
        if tx.id in self._entries:
            raise ValueError(f"duplicate transaction id {tx.id!r}")
        self._entries[tx.id] = tx
        if tx.is_private:
            self._private_to[tx.id] = builder
        key = (tx.first_seen_ms, tx.id)
        if not self._order or self._order[-1] < key:
            self._order.append(key)
        else:
            bisect.insort(self._order, key)
        self.clock = max(self.clock, tx.first_seen)

    def eligible_at(
        self,
        expected_block_time: float,
        window: EligibilityWindow = DEFAULT_WINDOW,
        builder: Optional[str] = None,
    ) -> List[BlobTx]:
        """Transactions inside ``window`` for a block expected at the given time,
        in first-seen order."""
        block_ms = round(expected_block_time * 1000)
        lo = bisect.bisect_left(self._order, (block_ms - window.max_age_ms,))
        hi = bisect.bisect_left(self._order, (block_ms - window.min_lead_ms + 1,))
        out = []
        entries = self._entries
        for _, tx_id in self._order[lo:hi]:
            tx = entries.get(tx_id)
            if tx is None:
                continue
            if tx.is_private:
                if builder is None:
                    continue
                target = self._private_to.get(tx_id)
                if target is not None and target != builder:
                    continue
            out.append(tx)
        return out

    def remove_included(self, tx_ids: Iterable[str]) -> None:
        ids = list(tx_ids)
        unknown = [i for i in ids if i not in self._entries]
        if unknown:
            raise KeyError(f"unknown transaction ids: {unknown}")
        for tx_id in ids:
            del self._entries[tx_id]
            self._private_to.pop(tx_id, None)
        self._stale += len(ids)
        if self._stale > len(self._entries) + 64:
            self._order = [k for k in self._order if k[1] in self._entries]
            self._stale = 0

    def expire(self, before: float) -> List[BlobTx]:
        """Drop and return transactions first seen strictly before ``before``."""
        cutoff = round(before * 1000)
        cut = bisect.bisect_left(self._order, (cutoff,))
        stale = [self._entries[k[1]] for k in self._order[:cut] if k[1] in self._entries]
        del self._order[:cut]
        for tx in stale:
            del self._entries[tx.id]
            self._private_to.pop(tx.id, None)
        return stale
