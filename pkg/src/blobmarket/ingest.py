"""
Offline replay of block and mempool dumps.

A mempool transaction is a packing candidate for block ``n`` when it was
first seen inside the eligibility window of ``n``, was eventually included
at block ``n`` or later, and its fee caps cover block ``n``'s base fees.
Included transactions missing from the mempool dump are treated as private.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Union

from .fees import DEFAULT_PARAMS, ProtocolParams, blob_base_fee
from .mempool import DEFAULT_WINDOW, EligibilityWindow
from .packing import (
    Classification,
    Verdict,
    classify_block,
    delay_summary,
    format_fraction,
    verdict_summary,
)
from .transactions import (
    BlobTx,
    BuilderRevenueView,
    CsvIssue,
    _parse_bool,
    can_pay,
    read_transactions_csv,
)

BLOCK_CSV_FIELDS = [
    "block_number",
    "timestamp",
    "builder",
    "is_pbs",
    "gas_used",
    "gas_limit",
    "base_fee_per_gas",
    "excess_blob_gas",
    "tx_id",
    "sender",
    "option_id",
    "num_blobs",
    "gas_usage",
    "priority_fee_per_gas_wei",
]

CLASSIFICATION_CSV_FIELDS = [
    "block_number",
    "verdict",
    "actual_revenue_wei",
    "optimal_revenue_wei",
    "greedy_revenue_wei",
    "relative_loss",
    "blobs_actual",
    "blobs_optimal",
]

MALFORMED = "Malformed"


@dataclass(frozen=True)
class IncludedTx:
    tx_id: str
    num_blobs: int
    gas_usage: int
    priority_fee_per_gas: int
    sender: str = ""
    option_id: Optional[str] = None

    def view(self) -> BuilderRevenueView:
        return BuilderRevenueView(
            self.tx_id,
            self.num_blobs,
            self.gas_usage,
            self.gas_usage * self.priority_fee_per_gas,
            self.option_id,
            self.tx_id if self.option_id else None,
        )


@dataclass(frozen=True)
class BlockRecord:
    block_number: int
    timestamp: int
    gas_used: int
    gas_limit: int
    base_fee_per_gas: int
    excess_blob_gas: int
    builder: str = ""
    is_pbs: Optional[bool] = None
    included: tuple = ()

    @property
    def num_blobs(self) -> int:
        return sum(t.num_blobs for t in self.included)

    @property
    def non_blob_gas_used(self) -> int:
        return self.gas_used - sum(t.gas_usage for t in self.included)


@dataclass
class ParsedBlocks:
    blocks: List[BlockRecord] = field(default_factory=list)
    issues: List[CsvIssue] = field(default_factory=list)
    malformed: Set[int] = field(default_factory=set)


def block_rows(block: BlockRecord) -> List[dict]:
    header = {
        "block_number": block.block_number,
        "timestamp": block.timestamp,
        "builder": block.builder,
        "is_pbs": "" if block.is_pbs is None else ("true" if block.is_pbs else "false"),
        "gas_used": block.gas_used,
        "gas_limit": block.gas_limit,
        "base_fee_per_gas": block.base_fee_per_gas,
        "excess_blob_gas": block.excess_blob_gas,
    }
    empty = {k: "" for k in BLOCK_CSV_FIELDS[8:]}
    if not block.included:
        return [dict(header, **empty)]
    return [
        dict(
            header,
            tx_id=t.tx_id,
            sender=t.sender,
            option_id=t.option_id or "",
            num_blobs=t.num_blobs,
            gas_usage=t.gas_usage,
            priority_fee_per_gas_wei=t.priority_fee_per_gas,
        )
        for t in block.included
    ]


def write_blocks_csv(path: Union[str, Path], blocks: Iterable[BlockRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=BLOCK_CSV_FIELDS)
        writer.writeheader()
        for block in blocks:
            writer.writerows(block_rows(block))


def read_blocks_csv(path: Union[str, Path], max_blobs: int = 6) -> ParsedBlocks:
    """Parse a block dump (one row per included blob transaction).

    Blocks without blob transactions carry a single row with empty tx
    columns. Rows that fail to parse are reported with their line number and
    their block, when its number is readable, is marked malformed.
    """
    out = ParsedBlocks()
    headers: Dict[int, dict] = {}
    txs: Dict[int, list] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in BLOCK_CSV_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            out.issues.append(CsvIssue(1, f"missing columns {missing}"))
            return out
        for row in reader:
            line = reader.line_num
            number = None
            try:
                number = int(row["block_number"])
                head = {
                    "block_number": number,
                    "timestamp": int(row["timestamp"]),
                    "gas_used": int(row["gas_used"]),
                    "gas_limit": int(row["gas_limit"]),
                    "base_fee_per_gas": int(row["base_fee_per_gas"]),
                    "excess_blob_gas": int(row["excess_blob_gas"]),
                    "builder": (row["builder"] or "").strip(),
                    "is_pbs": None if not (row["is_pbs"] or "").strip() else _parse_bool(row["is_pbs"]),
                }
                prev = headers.setdefault(number, head)
                if prev != head:
                    raise ValueError(f"block {number} header differs between rows")
                tx_id = (row["tx_id"] or "").strip()
                if tx_id:
                    included = IncludedTx(
                        tx_id=tx_id,
                        num_blobs=int(row["num_blobs"]),
                        gas_usage=int(row["gas_usage"]),
                        priority_fee_per_gas=int(row["priority_fee_per_gas_wei"]),
                        sender=(row["sender"] or "").strip(),
                        option_id=(row["option_id"] or "").strip() or None,
                    )
                    if not 1 <= included.num_blobs <= max_blobs or included.gas_usage < 0:
                        raise ValueError(f"bad blob/gas values for tx {tx_id}")
                    if included.priority_fee_per_gas < 0:
                        raise ValueError(f"negative priority fee for tx {tx_id}")
                    txs[number].append(included)
            except (ValueError, TypeError, AttributeError) as exc:
                out.issues.append(CsvIssue(line, str(exc)))
                if number is not None:
                    out.malformed.add(number)
    for number in sorted(headers):
        block = BlockRecord(included=tuple(txs.get(number, ())), **headers[number])
        if block.num_blobs > max_blobs:
            out.issues.append(CsvIssue(0, f"block {number} holds {block.num_blobs} blobs"))
            out.malformed.add(number)
        ids = [t.tx_id for t in block.included]
        if len(set(ids)) != len(ids):
            out.issues.append(CsvIssue(0, f"block {number} includes a transaction twice"))
            out.malformed.add(number)
        out.blocks.append(block)
    return out


@dataclass(frozen=True)
class BlockAudit:
    block_number: int
    verdict: Union[Verdict, str]
    classification: Optional[Classification] = None
    is_pbs: Optional[bool] = None

    def row(self) -> dict:
        c = self.classification
        if c is None:
            return {
                "block_number": self.block_number,
                "verdict": str(self.verdict),
                **{k: "" for k in CLASSIFICATION_CSV_FIELDS[2:]},
            }
        return {
            "block_number": self.block_number,
            "verdict": str(c.verdict),
            "actual_revenue_wei": c.actual_revenue,
            "optimal_revenue_wei": c.optimal_revenue,
            "greedy_revenue_wei": c.greedy_revenue,
            "relative_loss": format_fraction(c.relative_loss),
            "blobs_actual": c.blobs_actual,
            "blobs_optimal": c.blobs_optimal,
        }


@dataclass(frozen=True)
class TxDelay:
    tx_id: str
    sender: str
    block_number: int
    seconds: float
    blocks: Optional[int]


def expected_times(blocks: Sequence[BlockRecord], slot_seconds: int) -> List[int]:
    """Expected block time in ms: parent timestamp plus one slot."""
    out = []
    for i, block in enumerate(blocks):
        base = blocks[i - 1].timestamp + slot_seconds if i else block.timestamp
        out.append(base * 1000)
    return out


def audit_blocks(
    blocks: Sequence[BlockRecord],
    mempool: Iterable[BlobTx],
    window: EligibilityWindow = DEFAULT_WINDOW,
    params: ProtocolParams = DEFAULT_PARAMS,
    malformed: Iterable[int] = (),
) -> List[BlockAudit]:
    """Classify every block of an in-memory trace (sorted by number)."""
    bad = set(malformed)
    public = sorted(mempool, key=lambda t: (t.first_seen_ms, t.id))
    seen_ms = [t.first_seen_ms for t in public]
    included_at: Dict[str, int] = {}
    for block in blocks:
        for t in block.included:
            included_at.setdefault(t.tx_id, block.block_number)
    times = expected_times(blocks, params.slot_seconds)
    audits = []
    for block, t_ms in zip(blocks, times):
        if block.block_number in bad:
            audits.append(BlockAudit(block.block_number, MALFORMED, None, block.is_pbs))
            continue
        lo = bisect.bisect_left(seen_ms, t_ms - window.max_age_ms)
        hi = bisect.bisect_right(seen_ms, t_ms - window.min_lead_ms)
        fee = blob_base_fee(block.excess_blob_gas, params)
        candidates = [
            tx
            for tx in public[lo:hi]
            if included_at.get(tx.id, -1) >= block.block_number
            and can_pay(tx, block.base_fee_per_gas, fee)
        ]
        c = classify_block(
            [t.view() for t in block.included],
            candidates,
            block.gas_limit,
            block.non_blob_gas_used,
            params.max_blobs_per_block,
        )
        audits.append(BlockAudit(block.block_number, c.verdict, c, block.is_pbs))
    return audits


def inclusion_delays(
    blocks: Sequence[BlockRecord],
    mempool: Iterable[BlobTx],
    window: EligibilityWindow = DEFAULT_WINDOW,
    params: ProtocolParams = DEFAULT_PARAMS,
) -> List[TxDelay]:
    """Delays of included transactions that appear in the mempool dump."""
    by_id = {tx.id: tx for tx in mempool}
    times = expected_times(blocks, params.slot_seconds)
    out = []
    for idx, block in enumerate(blocks):
        for t in block.included:
            tx = by_id.get(t.tx_id)
            if tx is None:
                continue
            first = bisect.bisect_left(times, tx.first_seen_ms + window.min_lead_ms)
            blocks_late = None
            if first < len(times) and window.contains(tx.first_seen_ms, times[first]):
                blocks_late = idx - first
            seconds = (block.timestamp * 1000 - tx.first_seen_ms) / 1000
            out.append(TxDelay(t.tx_id, t.sender or tx.sender, block.block_number, seconds, blocks_late))
    return out


@dataclass
class TraceReport:
    audits: List[BlockAudit]
    delays: List[TxDelay]
    issues: List[CsvIssue]
    unresolved: int
    summary: dict


def _render(value):
    if isinstance(value, Fraction):
        return format_fraction(value, 6)
    if isinstance(value, Verdict):
        return value.value
    if isinstance(value, dict):
        return {(_render(k) if isinstance(k, Verdict) else k): _render(v) for k, v in value.items()}
    return value


def trace_summary(audits: Sequence[BlockAudit], delays: Sequence[TxDelay]) -> dict:
    rated = [a.classification for a in audits if a.classification is not None]
    out = {
        "blocks": len(audits),
        "malformed_blocks": sum(1 for a in audits if a.verdict == MALFORMED),
        "verdicts": _render(verdict_summary(rated)),
        "delays": delay_summary(
            [d.seconds for d in delays], [d.blocks for d in delays if d.blocks is not None]
        ),
    }
    for label, flag in (("pbs", True), ("non_pbs", False)):
        subset = [a.classification for a in audits if a.classification is not None and a.is_pbs is flag]
        if subset:
            out[f"verdicts_{label}"] = _render(verdict_summary(subset))
    return out


def classify_trace(
    blocks_file: Union[str, Path],
    mempool_file: Union[str, Path],
    window: EligibilityWindow = DEFAULT_WINDOW,
    params: ProtocolParams = DEFAULT_PARAMS,
    out_dir: Union[str, Path, None] = None,
) -> TraceReport:
    """Classify a block dump against a mempool dump; optionally write
    ``classification.csv``, ``delays.csv`` and ``summary.json``."""
    parsed_blocks = read_blocks_csv(blocks_file, params.max_blobs_per_block)
    parsed_pool = read_transactions_csv(mempool_file)
    known = {tx.id for tx in parsed_pool.transactions}
    unresolved = sum(1 for b in parsed_blocks.blocks for t in b.included if t.tx_id not in known)
    issues = parsed_blocks.issues + parsed_pool.issues
    audits = audit_blocks(
        parsed_blocks.blocks, parsed_pool.transactions, window, params, parsed_blocks.malformed
    )
    delays = inclusion_delays(parsed_blocks.blocks, parsed_pool.transactions, window, params)
    summary = trace_summary(audits, delays)
    summary["unresolved_tx_references"] = unresolved
    summary["issues"] = [str(i) for i in issues]
    report = TraceReport(audits, delays, issues, unresolved, summary)
    if out_dir is not None:
        write_trace_report(report, out_dir)
    return report


def write_trace_report(report: TraceReport, out_dir: Union[str, Path]) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "classification.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CLASSIFICATION_CSV_FIELDS)
        writer.writeheader()
        writer.writerows(a.row() for a in report.audits)
    with open(out / "delays.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tx_id", "sender", "block_number", "delay_seconds", "delay_blocks"])
        for d in report.delays:
            writer.writerow([d.tx_id, d.sender, d.block_number, f"{d.seconds:.3f}", "" if d.blocks is None else d.blocks])
    (out / "summary.json").write_text(json.dumps(report.summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- private order flow -----------------------------------------------------


@dataclass(frozen=True)
class DailyShare:
    day: dt.date
    blob_txs: int
    private_txs: int
    by_sender: Dict[str, int] = field(default_factory=dict)

    @property
    def share(self) -> Fraction:
        return Fraction(self.private_txs, self.blob_txs) if self.blob_txs else Fraction(0)

    def sender_share(self, sender: str) -> Fraction:
        return Fraction(self.by_sender.get(sender, 0), self.blob_txs) if self.blob_txs else Fraction(0)


def private_share_records(
    blocks: Sequence[BlockRecord],
    mempool_ids: Set[str],
    senders: Optional[Iterable[str]] = None,
) -> List[DailyShare]:
    """Daily share of included blob transactions absent from the mempool dump.

    ``by_sender`` counts private transactions per sender, restricted to
    ``senders`` when given.
    """
    wanted = set(senders) if senders is not None else None
    totals: Counter = Counter()
    private: Counter = Counter()
    per_sender: Dict[dt.date, Counter] = defaultdict(Counter)
    for block in blocks:
        day = dt.datetime.fromtimestamp(block.timestamp, tz=dt.timezone.utc).date()
        for t in block.included:
            totals[day] += 1
            if t.tx_id not in mempool_ids:
                private[day] += 1
                if wanted is None or t.sender in wanted:
                    per_sender[day][t.sender] += 1
    return [
        DailyShare(day, totals[day], private[day], dict(sorted(per_sender[day].items())))
        for day in sorted(totals)
    ]


def private_share(
    blocks_file: Union[str, Path],
    mempool_file: Union[str, Path],
    senders: Optional[Iterable[str]] = None,
) -> List[DailyShare]:
    blocks = read_blocks_csv(blocks_file).blocks
    ids = {tx.id for tx in read_transactions_csv(mempool_file).transactions}
    return private_share_records(blocks, ids, senders)


def write_private_share_csv(path_or_file, series: Sequence[DailyShare]) -> None:
    """Long format: one ``*`` row per day plus one row per private sender."""

    def _write(fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(["date", "sender", "blob_txs", "private_txs", "share"])
        for s in series:
            writer.writerow([s.day.isoformat(), "*", s.blob_txs, s.private_txs, format_fraction(s.share, 6)])
            for sender, count in s.by_sender.items():
                writer.writerow(
                    [s.day.isoformat(), sender, s.blob_txs, count, format_fraction(s.sender_share(sender), 6)]
                )

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
