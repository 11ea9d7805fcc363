"""
Blob packing: naive greedy, exact optimal, brute-force oracle, and the
per-block verdict used to audit a builder's choice.

Capacity is tiny (six blobs), so the exact solver first discards views that
provably cannot appear in some optimal packing and then runs a depth-first
branch and bound over what is left.
"""

from __future__ import annotations

import enum
import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .fees import Wei
from .transactions import BlobTx, BuilderRevenueView, expand_group

DEFAULT_BLOB_CAPACITY = 6


@dataclass(frozen=True)
class PackingProblem:
    candidates: Tuple[BuilderRevenueView, ...]
    blob_capacity: int = DEFAULT_BLOB_CAPACITY
    gas_budget: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not 0 <= self.blob_capacity <= DEFAULT_BLOB_CAPACITY:
            raise ValueError("blob_capacity must be in 0..6")
        if self.gas_budget is not None and self.gas_budget < 0:
            raise ValueError("gas_budget must be non-negative")
        keys = set()
        for view in self.candidates:
            if view.blobs < 1 or view.gas < 0 or view.revenue < 0:
                raise ValueError(f"invalid candidate {view}")
            if view.key in keys:
                raise ValueError(f"duplicate candidate {view.key}")
            keys.add(view.key)

    @classmethod
    def from_transactions(
        cls,
        txs: Iterable[BlobTx],
        blob_capacity: int = DEFAULT_BLOB_CAPACITY,
        gas_budget: Optional[int] = None,
    ) -> "PackingProblem":
        views = [v for tx in txs for v in expand_group(tx)]
        return cls(tuple(views), blob_capacity, gas_budget)


@dataclass(frozen=True)
class PackingResult:
    chosen: Tuple[BuilderRevenueView, ...] = ()
    total_blobs: int = 0
    total_gas: int = 0
    total_revenue: Wei = 0

    @classmethod
    def of(cls, views: Iterable[BuilderRevenueView]) -> "PackingResult":
        chosen = tuple(sorted(views, key=BuilderRevenueView.sort_key))
        return cls(
            chosen,
            sum(v.blobs for v in chosen),
            sum(v.gas for v in chosen),
            sum(v.revenue for v in chosen),
        )

    @property
    def chosen_keys(self) -> frozenset:
        return frozenset(v.key for v in self.chosen)

    def is_feasible(self, problem: PackingProblem) -> bool:
        groups = [v.exclusion_group for v in self.chosen]
        keys = {v.key for v in problem.candidates}
        return (
            self.total_blobs <= problem.blob_capacity
            and (problem.gas_budget is None or self.total_gas <= problem.gas_budget)
            and len(set(groups)) == len(groups)
            and all(v.key in keys for v in self.chosen)
            and self.total_blobs == sum(v.blobs for v in self.chosen)
            and self.total_gas == sum(v.gas for v in self.chosen)
            and self.total_revenue == sum(v.revenue for v in self.chosen)
        )


def _set_key(views: Sequence[BuilderRevenueView]) -> tuple:
    # higher revenue, then fewer blobs, less gas, smallest key tuple
    return (
        -sum(v.revenue for v in views),
        sum(v.blobs for v in views),
        sum(v.gas for v in views),
        tuple(sorted(v.key for v in views)),
    )


def greedy_pack(problem: PackingProblem) -> PackingResult:
    """Scan by descending revenue, taking every candidate that still fits."""
    blobs_left = problem.blob_capacity
    gas_left = problem.gas_budget
    used = set()
    chosen = []
    for view in sorted(problem.candidates, key=BuilderRevenueView.sort_key):
        if view.blobs > blobs_left or view.exclusion_group in used:
            continue
        if gas_left is not None and view.gas > gas_left:
            continue
        chosen.append(view)
        used.add(view.exclusion_group)
        blobs_left -= view.blobs
        if gas_left is not None:
            gas_left -= view.gas
    return PackingResult.of(chosen)


def gas_budget_binds(problem: PackingProblem) -> bool:
    """False when even the ``capacity`` heaviest candidates fit the budget."""
    if problem.gas_budget is None:
        return False
    heaviest = sorted((v.gas for v in problem.candidates), reverse=True)[: problem.blob_capacity]
    return sum(heaviest) > problem.gas_budget


def prune_candidates(problem: PackingProblem) -> List[BuilderRevenueView]:
    """Drop views that some optimal packing provably avoids.

    A class-``b`` view ``v`` is dropped once ``capacity - b + 1`` earlier
    (in tie-break order) views of the same blob count, from pairwise distinct
    exclusion groups and using no more gas than ``v``, have been kept. Any
    packing holding ``v`` uses at most ``capacity - b`` other views, so one of
    those dominators is always free to take its place without losing revenue.
    """
    cap = problem.blob_capacity
    budget = problem.gas_budget
    if budget is not None and not gas_budget_binds(problem):
        budget = None
    by_class: Dict[int, List[BuilderRevenueView]] = defaultdict(list)
    for view in sorted(problem.candidates, key=BuilderRevenueView.sort_key):
        if view.blobs <= cap and (budget is None or view.gas <= budget):
            by_class[view.blobs].append(view)
    kept: List[BuilderRevenueView] = []
    for blobs, views in by_class.items():
        need = cap - blobs + 1
        kept_here: List[BuilderRevenueView] = []
        if budget is None:
            groups = set()
            for view in views:
                if len(groups) >= need:
                    break
                kept_here.append(view)
                groups.add(view.exclusion_group)
            kept.extend(kept_here)
            continue
        for view in views:
            groups = set()
            for other in kept_here:
                if budget is None or other.gas <= view.gas:
                    groups.add(other.exclusion_group)
                    if len(groups) >= need:
                        break
            if len(groups) < need:
                kept_here.append(view)
        kept.extend(kept_here)
    kept.sort(key=BuilderRevenueView.sort_key)
    return kept


def optimal_pack(problem: PackingProblem) -> PackingResult:
    """Revenue-maximising feasible selection (exact).

    Respects blob capacity, the optional gas budget and at most one view per
    exclusion group. Ties go to fewer blobs, then less gas, then the
    lexicographically smallest set of keys.
    """
    items = prune_candidates(problem)
    budget = problem.gas_budget if gas_budget_binds(problem) else None
    cap = problem.blob_capacity
    prefix = [0]
    for view in items:
        prefix.append(prefix[-1] + view.revenue)
    n = len(items)

    best_key = _set_key(())
    best: List[BuilderRevenueView] = []
    chosen: List[BuilderRevenueView] = []
    used: set = set()

    def dfs(start: int, blobs_left: int, gas_left: Optional[int], rev: int) -> None:
        nonlocal best_key, best
        for i in range(start, n):
            view = items[i]
            # at most blobs_left more views fit; items are sorted by revenue
            bound = rev + prefix[min(n, i + blobs_left)] - prefix[i]
            if bound < -best_key[0]:
                break
            if view.blobs > blobs_left or view.exclusion_group in used:
                continue
            if gas_left is not None and view.gas > gas_left:
                continue
            chosen.append(view)
            used.add(view.exclusion_group)
            key = _set_key(chosen)
            if key < best_key:
                best_key, best = key, list(chosen)
            dfs(
                i + 1,
                blobs_left - view.blobs,
                None if gas_left is None else gas_left - view.gas,
                rev + view.revenue,
            )
            chosen.pop()
            used.discard(view.exclusion_group)

    dfs(0, cap, budget, 0)
    return PackingResult.of(best)


def optimal_pack_subset(
    txs: Iterable[BlobTx],
    blob_capacity: int = DEFAULT_BLOB_CAPACITY,
    gas_budget: Optional[int] = None,
) -> PackingResult:
    """Optimal packing over transactions with every subset-bid option expanded."""
    return optimal_pack(PackingProblem.from_transactions(txs, blob_capacity, gas_budget))


def brute_force_pack(problem: PackingProblem) -> PackingResult:
    """Exhaustive search over all candidate subsets. Test oracle only."""
    best_key = _set_key(())
    best: Tuple[BuilderRevenueView, ...] = ()
    views = problem.candidates
    for size in range(1, min(len(views), problem.blob_capacity) + 1):
        for combo in itertools.combinations(views, size):
            if sum(v.blobs for v in combo) > problem.blob_capacity:
                continue
            if problem.gas_budget is not None and sum(v.gas for v in combo) > problem.gas_budget:
                continue
            groups = [v.exclusion_group for v in combo]
            if len(set(groups)) != len(groups):
                continue
            key = _set_key(combo)
            if key < best_key:
                best_key, best = key, combo
    return PackingResult.of(best)


class Verdict(str, enum.Enum):
    OPTIMAL = "Optimal"
    SUBOPTIMAL = "Suboptimal"
    UNKNOWN = "Unknown"
    OUT_OF_GAS = "OutOfGas"
    NO_BLOBS = "NoBlobs"

    def __str__(self) -> str:
        return self.value


RATED_VERDICTS = (Verdict.OPTIMAL, Verdict.SUBOPTIMAL, Verdict.UNKNOWN, Verdict.OUT_OF_GAS)


def relative_fee_loss(actual_revenue: int, optimal_revenue: int) -> Optional[Fraction]:
    """``(optimal - actual) / optimal`` as an exact fraction.

    Returns ``None`` when the optimum is zero: there is no loss to measure.
    """
    if actual_revenue < 0:
        raise ValueError("actual revenue must be non-negative")
    if optimal_revenue < actual_revenue:
        raise ValueError("actual revenue exceeds the optimum")
    if optimal_revenue == 0:
        return None
    return Fraction(optimal_revenue - actual_revenue, optimal_revenue)


def format_fraction(value: Optional[Fraction], digits: int = 9) -> str:
    """Fixed-point decimal rendering, rounded half-up; '' for ``None``."""
    if value is None:
        return ""
    scale = 10**digits
    scaled = (value.numerator * scale * 2 + value.denominator) // (2 * value.denominator)
    sign = "-" if scaled < 0 else ""
    scaled = abs(scaled)
    return f"{sign}{scaled // scale}.{scaled % scale:0{digits}d}"


@dataclass(frozen=True)
class Classification:
    verdict: Verdict
    actual_revenue: Wei = 0
    optimal_revenue: Wei = 0
    greedy_revenue: Wei = 0
    blobs_actual: int = 0
    blobs_optimal: int = 0
    relative_loss: Optional[Fraction] = None
    optimal: PackingResult = field(default_factory=PackingResult, compare=False, repr=False)


ActualItem = Union[BlobTx, BuilderRevenueView]


def _actual_view(item: ActualItem) -> BuilderRevenueView:
    if isinstance(item, BuilderRevenueView):
        return item
    if item.subset_options is not None:
        raise ValueError(f"tx {item.id} has subset options; pass the included option's view")
    return expand_group(item)[0]


def classify_block(
    actual_included: Iterable[ActualItem],
    eligible: Iterable[BlobTx],
    block_gas_limit: int,
    non_blob_gas_used: int,
    blob_capacity: int = DEFAULT_BLOB_CAPACITY,
) -> Classification:
    """Audit one block's blob packing against greedy and optimal packings.

    The candidate universe is every eligible view plus what the block
    actually included (deduplicated by key). The optimum is computed without
    a gas budget; if it would not fit next to the block's other gas the
    verdict is ``OutOfGas``.
    """
    actual = [_actual_view(item) for item in actual_included]
    universe: Dict[tuple, BuilderRevenueView] = {v.key: v for v in actual}
    for tx in eligible:
        for view in expand_group(tx):
            universe.setdefault(view.key, view)
    problem = PackingProblem(tuple(universe.values()), blob_capacity)
    opt = optimal_pack(problem)
    grd = greedy_pack(problem)
    a_rev = sum(v.revenue for v in actual)
    a_blobs = sum(v.blobs for v in actual)
    common = dict(
        actual_revenue=a_rev,
        optimal_revenue=opt.total_revenue,
        greedy_revenue=grd.total_revenue,
        blobs_actual=a_blobs,
        blobs_optimal=opt.total_blobs,
        optimal=opt,
    )
    if a_blobs == 0:
        return Classification(Verdict.NO_BLOBS, **common)
    if not PackingResult.of(actual).is_feasible(problem):
        raise ValueError("actual block contents violate capacity or group exclusion")
    if non_blob_gas_used + opt.total_gas > block_gas_limit:
        return Classification(Verdict.OUT_OF_GAS, **common)
    loss = relative_fee_loss(a_rev, opt.total_revenue)
    if a_rev < opt.total_revenue:
        verdict = Verdict.SUBOPTIMAL
    elif opt.total_revenue == grd.total_revenue:
        verdict = Verdict.UNKNOWN
    else:
        verdict = Verdict.OPTIMAL
    return Classification(verdict, relative_loss=loss, **common)


def inclusion_delay(
    tx: BlobTx, inclusion_time: float, inclusion_block: int, first_possible_block: int
) -> Tuple[float, int]:
    """Return ``(seconds waited since first seen, blocks after first possible)``."""
    if inclusion_time < tx.first_seen:
        raise ValueError("inclusion_time precedes first_seen")
    seconds = (round(inclusion_time * 1000) - tx.first_seen_ms) / 1000
    return seconds, inclusion_block - first_possible_block


def verdict_summary(classifications: Iterable[Classification]) -> dict:
    """Verdict counts and shares over blocks with blobs, plus loss aggregates.

    Shares and the mean loss are exact fractions; the mean loss covers
    suboptimal blocks only and is ``None`` when there are none.
    """
    counts = {v: 0 for v in Verdict}
    losses: List[Fraction] = []
    for c in classifications:
        counts[c.verdict] += 1
        if c.verdict is Verdict.SUBOPTIMAL and c.relative_loss is not None:
            losses.append(c.relative_loss)
    rated = sum(counts[v] for v in RATED_VERDICTS)
    shares = {v: (Fraction(counts[v], rated) if rated else None) for v in RATED_VERDICTS}
    return {
        "counts": counts,
        "rated_blocks": rated,
        "shares": shares,
        "mean_suboptimal_loss": (sum(losses, Fraction(0)) / len(losses)) if losses else None,
        "max_suboptimal_loss": max(losses) if losses else None,
    }


def delay_summary(seconds: Sequence[float], blocks: Sequence[int]) -> dict:
    out: dict = {"count": len(seconds)}
    for label, values in (("seconds", seconds), ("blocks", blocks)):
        if len(values):
            arr = np.asarray(values, dtype=float)
            out[label] = {
                "mean": float(arr.mean()),
                "p50": float(np.percentile(arr, 50)),
                "p90": float(np.percentile(arr, 90)),
                "max": float(arr.max()),
            }
        else:
            out[label] = None
    return out
