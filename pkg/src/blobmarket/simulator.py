"""
Slot-by-slot simulation of the blob market.

Each slot: admit new arrivals, draw the winning builder, pack blobs with its
strategy (or none, if it turns blob-averse), charge fees at the current fee
state, then advance the fee state for the next block. After the run every
block is audited with the same code path that replays exported traces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .demand import Arrival, BuilderConfig, Scenario, generate_arrivals
from .fees import BlockFeeState, FeeBreakdown, ProtocolParams, transaction_fees
from .ingest import BlockRecord, IncludedTx, audit_blocks, write_blocks_csv
from .mempool import TimedPool, first_possible_slot
from .packing import (
    PackingProblem,
    PackingResult,
    Verdict,
    delay_summary,
    format_fraction,
    greedy_pack,
    optimal_pack,
    verdict_summary,
)
from .transactions import BlobTx, BuilderRevenueView, default_view, option_view, write_transactions_csv


@dataclass
class SlotRecord:
    slot: int
    timestamp: int
    builder: str = ""
    strategy: str = ""
    blob_averse: bool = False
    base_fee_per_gas: int = 0
    excess_blob_gas: int = 0
    blob_base_fee: int = 0
    blobs: int = 0
    blob_txs: int = 0
    gas_used: int = 0
    eligible: int = 0
    fees: FeeBreakdown = field(default_factory=FeeBreakdown)
    # sum of independently computed per-transaction totals
    tx_fee_total: int = 0
    verdict: Optional[Verdict] = None
    actual_revenue: int = 0
    optimal_revenue: int = 0
    greedy_revenue: int = 0
    relative_loss: Optional[Fraction] = None
    shadow_greedy_revenue: Optional[int] = None
    shadow_optimal_revenue: Optional[int] = None
    shadow_subset_revenue: Optional[int] = None


@dataclass
class TxRecord:
    tx: BlobTx
    option_id: Optional[str] = None
    inclusion_slot: Optional[int] = None
    inclusion_time: Optional[int] = None
    delay_seconds: Optional[float] = None
    delay_blocks: Optional[int] = None
    fees: Optional[FeeBreakdown] = None
    dropped: bool = False


@dataclass
class ChainState:
    blocks: List[BlockFeeState] = field(default_factory=list)
    included: Dict[int, List[BuilderRevenueView]] = field(default_factory=dict)


@dataclass
class RunMetrics:
    slots: List[SlotRecord] = field(default_factory=list)
    transactions: List[TxRecord] = field(default_factory=list)

    def cumulative(self) -> List[Tuple[int, int, int, int]]:
        """``(slot, burned blob base, burned exec base, builder priority)`` running sums."""
        out = []
        blob = exec_base = prio = 0
        for s in self.slots:
            blob += s.fees.blob_base_burned
            exec_base += s.fees.exec_base_burned
            prio += s.fees.exec_priority_to_builder
            out.append((s.slot, blob, exec_base, prio))
        return out

    def per_sender(self) -> Dict[str, dict]:
        """Included-transaction tip statistics per sender (exact fractions)."""
        acc: Dict[str, List[int]] = {}
        for rec in self.transactions:
            if rec.fees is None:
                continue
            tips, blobs, count = acc.setdefault(rec.tx.sender, [0, 0, 0])
            view = option_view(rec.tx, rec.option_id)
            acc[rec.tx.sender] = [tips + rec.fees.exec_priority_to_builder, blobs + view.blobs, count + 1]
        return {
            sender: {
                "included_txs": count,
                "priority_fee_per_tx": Fraction(tips, count),
                "priority_fee_per_blob": Fraction(tips, blobs),
            }
            for sender, (tips, blobs, count) in sorted(acc.items())
        }


@dataclass
class RunResult:
    scenario: Scenario
    metrics: RunMetrics
    chain: ChainState
    # every admitted transaction, as admitted (after fee reactions)
    admitted: List[BlobTx]
    blocks: List[BlockRecord]

    @property
    def public_transactions(self) -> List[BlobTx]:
        return [tx for tx in self.admitted if not tx.is_private]


def _pick_builder(builders: Sequence[BuilderConfig], u: float) -> BuilderConfig:
    weights = np.array([b.selection_weight for b in builders], dtype=float)
    cdf = np.cumsum(weights / weights.sum())
    idx = int(np.searchsorted(cdf, u, side="right"))
    return builders[min(idx, len(builders) - 1)]


def _pack(strategy: str, txs: Sequence[BlobTx], capacity: int, budget: int) -> PackingResult:
    if strategy == "subset-optimal":
        views = tuple(v for tx in txs for v in tx.views)
        return optimal_pack(PackingProblem(views, capacity, budget))
    problem = PackingProblem(tuple(tx.views[0] for tx in txs), capacity, budget)
    return greedy_pack(problem) if strategy == "greedy" else optimal_pack(problem)


def run(scenario: Scenario, shadow_pricing: bool = False) -> RunResult:
    """Simulate ``scenario`` for ``horizon_slots`` slots. Deterministic."""
    builders = scenario.builders
    if not builders or sum(b.selection_weight for b in builders) <= 0:
        raise ValueError("scenario needs builders with positive total selection weight")
    params: ProtocolParams = scenario.params
    slot_s = params.slot_seconds

    arrivals: List[Arrival] = list(generate_arrivals(scenario)) if scenario.strategies else []
    arrivals.extend(Arrival(tx) for tx in scenario.transactions)
    arrivals.sort(key=lambda a: (a.tx.first_seen_ms, a.tx.id))

    rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 2]))
    pool = TimedPool()
    metrics = RunMetrics()
    chain = ChainState()
    records: Dict[str, TxRecord] = {}
    admitted: List[BlobTx] = []
    block_records: List[BlockRecord] = []
    budget = params.block_gas_limit - scenario.reserved_gas

    state = BlockFeeState(
        block_number=1,
        timestamp=scenario.genesis_time + slot_s,
        base_fee_per_gas=scenario.initial_base_fee,
        excess_blob_gas=scenario.initial_excess_blob_gas,
    )
    next_arrival = 0
    for slot in range(1, scenario.horizon_slots + 1):
        t_ms = state.timestamp * 1000
        blob_fee = state.blob_base_fee(params)

        while next_arrival < len(arrivals) and arrivals[next_arrival].tx.first_seen_ms <= t_ms:
            arrival = arrivals[next_arrival]
            next_arrival += 1
            tx = arrival.tx
            builder_scope = None
            if arrival.strategy is not None:
                tx = arrival.strategy.reprice(tx, blob_fee)
                builder_scope = arrival.strategy.private_builder
            pool.insert(tx, builder=builder_scope)
            admitted.append(tx)
            records[tx.id] = TxRecord(tx)

        builder = _pick_builder(builders, float(rng.random()))
        averse = float(rng.random()) < builder.blob_aversion_probability
        visible = pool.eligible_at(state.timestamp, scenario.builder_window, builder.name)
        base = state.base_fee_per_gas
        # can_pay, inlined: this is the hottest loop of a run
        eligible = [
            tx
            for tx in visible
            if tx.max_fee_per_blob_gas >= blob_fee and tx.max_fee_per_gas >= base + tx.priority_fee_per_gas
        ]

        rec = SlotRecord(
            slot=slot,
            timestamp=state.timestamp,
            builder=builder.name,
            strategy=builder.strategy,
            blob_averse=averse,
            base_fee_per_gas=state.base_fee_per_gas,
            excess_blob_gas=state.excess_blob_gas,
            blob_base_fee=blob_fee,
            eligible=len(eligible),
        )
        cap = params.max_blobs_per_block
        if shadow_pricing:
            rec.shadow_greedy_revenue = _pack("greedy", eligible, cap, budget).total_revenue
            rec.shadow_optimal_revenue = _pack("optimal", eligible, cap, budget).total_revenue
            rec.shadow_subset_revenue = _pack("subset-optimal", eligible, cap, budget).total_revenue
        packed = PackingResult() if averse else _pack(builder.strategy, eligible, cap, budget)

        per_tx_total = 0
        included: List[IncludedTx] = []
        for view in packed.chosen:
            tx = pool.get(view.tx_id)
            option = option_view(tx, view.option_id)
            prio = option.revenue // option.gas
            fees = transaction_fees(option.blobs, option.gas, prio, state, params)
            per_tx_total += fees.total
            r = records[tx.id]
            r.option_id = view.option_id
            r.inclusion_slot = slot
            r.inclusion_time = state.timestamp
            r.delay_seconds = (t_ms - tx.first_seen_ms) / 1000
            r.delay_blocks = slot - first_possible_slot(tx.first_seen - scenario.genesis_time, slot_s, scenario.window)
            r.fees = fees
            included.append(IncludedTx(tx.id, option.blobs, option.gas, prio, tx.sender, view.option_id))

        gas_used = scenario.reserved_gas + packed.total_gas
        blob_gas = packed.total_blobs * params.gas_per_blob
        rec.blobs = packed.total_blobs
        rec.blob_txs = len(packed.chosen)
        rec.gas_used = gas_used
        rec.fees = FeeBreakdown(
            exec_base_burned=packed.total_gas * state.base_fee_per_gas,
            exec_priority_to_builder=packed.total_revenue,
            blob_base_burned=blob_gas * blob_fee,
        )
        rec.tx_fee_total = per_tx_total
        metrics.slots.append(rec)

        done = state.with_usage(gas_used, blob_gas)
        done.check(params)
        chain.blocks.append(done)
        chain.included[slot] = list(packed.chosen)
        block_records.append(
            BlockRecord(
                block_number=slot,
                timestamp=state.timestamp,
                gas_used=gas_used,
                gas_limit=params.block_gas_limit,
                base_fee_per_gas=state.base_fee_per_gas,
                excess_blob_gas=state.excess_blob_gas,
                builder=builder.name,
                included=tuple(included),
            )
        )

        pool.remove_included(v.tx_id for v in packed.chosen)
        state = done.next(params)
        for tx in pool.expire((state.timestamp * 1000 - scenario.builder_window.max_age_ms) / 1000):
            records[tx.id].dropped = True

    metrics.transactions = [records[tx.id] for tx in admitted]
    public = [tx for tx in admitted if not tx.is_private]
    audits = audit_blocks(block_records, public, scenario.window, params)
    for rec, audit in zip(metrics.slots, audits):
        c = audit.classification
        rec.verdict = c.verdict
        rec.actual_revenue = c.actual_revenue
        rec.optimal_revenue = c.optimal_revenue
        rec.greedy_revenue = c.greedy_revenue
        rec.relative_loss = c.relative_loss
    return RunResult(scenario, metrics, chain, admitted, block_records)


# -- reporting --------------------------------------------------------------


def _fixed(value: Optional[Fraction], digits: int = 6) -> Optional[str]:
    return None if value is None else format_fraction(value, digits)


def summarize(metrics: RunMetrics) -> dict:
    """Verdict shares, delays, loss and cumulative fee totals of a run.

    Ratios are aggregated exactly and rendered as fixed 6-digit decimals;
    aggregates without data are ``None`` rather than zero.
    """
    vs = verdict_summary(s for s in metrics.slots if s.verdict is not None)
    included = [r for r in metrics.transactions if r.inclusion_slot is not None]
    cumulative = metrics.cumulative()
    last = cumulative[-1] if cumulative else (0, 0, 0, 0)
    slots = len(metrics.slots)
    return {
        "slots": slots,
        "verdict_counts": {v.value: n for v, n in vs["counts"].items()},
        "verdict_shares": {v.value: _fixed(share) for v, share in vs["shares"].items()},
        "rated_blocks": vs["rated_blocks"],
        "mean_suboptimal_loss": _fixed(vs["mean_suboptimal_loss"]),
        "max_suboptimal_loss": _fixed(vs["max_suboptimal_loss"]),
        "mean_blobs_per_block": _fixed(Fraction(sum(s.blobs for s in metrics.slots), slots)) if slots else None,
        "transactions": {
            "admitted": len(metrics.transactions),
            "included": len(included),
            "dropped": sum(1 for r in metrics.transactions if r.dropped),
        },
        "delays": delay_summary(
            [r.delay_seconds for r in included], [r.delay_blocks for r in included]
        ),
        "cumulative_wei": {
            "blob_base_burned": last[1],
            "exec_base_burned": last[2],
            "builder_priority": last[3],
        },
        "per_sender": {
            sender: {
                "included_txs": d["included_txs"],
                "priority_fee_per_tx": _fixed(d["priority_fee_per_tx"], 3),
                "priority_fee_per_blob": _fixed(d["priority_fee_per_blob"], 3),
            }
            for sender, d in metrics.per_sender().items()
        },
    }


SLOT_CSV_FIELDS = [
    "slot",
    "timestamp",
    "builder",
    "strategy",
    "blob_averse",
    "base_fee_per_gas",
    "excess_blob_gas",
    "blob_base_fee",
    "eligible",
    "blobs",
    "blob_txs",
    "gas_used",
    "exec_base_burned",
    "exec_priority_to_builder",
    "blob_base_burned",
    "tx_fee_total",
    "verdict",
    "actual_revenue_wei",
    "optimal_revenue_wei",
    "greedy_revenue_wei",
    "relative_loss",
    "shadow_greedy_revenue_wei",
    "shadow_optimal_revenue_wei",
    "shadow_subset_revenue_wei",
]

TX_METRIC_FIELDS = [
    "id",
    "sender",
    "num_blobs",
    "option_id",
    "priority_fee_per_gas_wei",
    "first_seen_unix_ms",
    "is_private",
    "inclusion_slot",
    "delay_seconds",
    "delay_blocks",
    "exec_base_burned",
    "exec_priority_to_builder",
    "blob_base_burned",
    "dropped",
]


def _blank(value) -> object:
    return "" if value is None else value


def export_run(result: RunResult, out_dir: Union[str, Path]) -> Path:
    """Write ``slots.csv``, ``transactions.csv``, ``cumulative.csv``,
    ``summary.json`` plus the replayable ``blocks.csv`` / ``mempool.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m = result.metrics
    with open(out / "slots.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SLOT_CSV_FIELDS)
        for s in m.slots:
            w.writerow([
                s.slot, s.timestamp, s.builder, s.strategy, int(s.blob_averse), s.base_fee_per_gas,
                s.excess_blob_gas, s.blob_base_fee, s.eligible, s.blobs, s.blob_txs, s.gas_used,
                s.fees.exec_base_burned, s.fees.exec_priority_to_builder, s.fees.blob_base_burned,
                s.tx_fee_total, _blank(s.verdict and s.verdict.value), s.actual_revenue, s.optimal_revenue,
                s.greedy_revenue, format_fraction(s.relative_loss), _blank(s.shadow_greedy_revenue),
                _blank(s.shadow_optimal_revenue), _blank(s.shadow_subset_revenue),
            ])
    with open(out / "transactions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TX_METRIC_FIELDS)
        for r in m.transactions:
            view = option_view(r.tx, r.option_id) if r.inclusion_slot is not None else default_view(r.tx)
            fees = r.fees or FeeBreakdown()
            w.writerow([
                r.tx.id, r.tx.sender, view.blobs, r.option_id or "", view.revenue // view.gas,
                r.tx.first_seen_ms, int(r.tx.is_private), _blank(r.inclusion_slot),
                "" if r.delay_seconds is None else f"{r.delay_seconds:.3f}", _blank(r.delay_blocks),
                fees.exec_base_burned, fees.exec_priority_to_builder, fees.blob_base_burned, int(r.dropped),
            ])
    with open(out / "cumulative.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "blob_base_burned", "exec_base_burned", "builder_priority"])
        w.writerows(m.cumulative())
    summary = summarize(m)
    summary["scenario"] = result.scenario.name
    summary["seed"] = result.scenario.seed
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_blocks_csv(out / "blocks.csv", result.blocks)
    write_transactions_csv(out / "mempool.csv", result.public_transactions)
    return out
