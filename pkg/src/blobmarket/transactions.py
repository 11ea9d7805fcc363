"""Type-3 transactions, subset-bid groups and the builder-revenue view."""

from __future__ import annotations

import csv
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .fees import MIN_TX_GAS, Wei

MAX_BLOBS_PER_TX = 6

TX_CSV_FIELDS = [
    "id",
    "sender",
    "num_blobs",
    "gas_usage",
    "priority_fee_per_gas_wei",
    "max_fee_per_gas_wei",
    "max_fee_per_blob_gas_wei",
    "first_seen_unix_ms",
    "is_private",
    "group_id",
    "option_id",
]


def _check_bounds(num_blobs: int, gas_usage: int, priority_fee_per_gas: int) -> None:
    if not 1 <= num_blobs <= MAX_BLOBS_PER_TX:
        raise ValueError(f"num_blobs must be in 1..{MAX_BLOBS_PER_TX}, got {num_blobs}")
    if gas_usage < MIN_TX_GAS:
        raise ValueError(f"gas_usage must be at least {MIN_TX_GAS}, got {gas_usage}")
    if priority_fee_per_gas < 0:
        raise ValueError("priority_fee_per_gas must be non-negative")


@dataclass(frozen=True)
class SubsetBidOption:
    option_id: str
    num_blobs: int
    gas_usage: int
    priority_fee_per_gas: Wei

    def __post_init__(self) -> None:
        _check_bounds(self.num_blobs, self.gas_usage, self.priority_fee_per_gas)


@dataclass(frozen=True)
class SubsetBidGroup:
    """Mutually exclusive alternatives; a block includes at most one."""

    options: Tuple[SubsetBidOption, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "options", tuple(self.options))
        if len(self.options) < 2:
            raise ValueError("a subset-bid group needs at least two options")
        ids = [o.option_id for o in self.options]
        if len(set(ids)) != len(ids):
            raise ValueError("option ids within a group must be distinct")


@dataclass(frozen=True)
class BlobTx:
    """A type-3 transaction.

    ``first_seen`` is in seconds. For a subset-bid transaction the top-level
    blob/gas/fee fields mirror the first option, which is what a builder
    without subset-bid support sees.
    """

    id: str
    sender: str
    num_blobs: int
    gas_usage: int
    priority_fee_per_gas: Wei
    max_fee_per_gas: Wei
    max_fee_per_blob_gas: Wei
    first_seen: float
    is_private: bool = False
    subset_options: Optional[SubsetBidGroup] = None

    def __post_init__(self) -> None:
        _check_bounds(self.num_blobs, self.gas_usage, self.priority_fee_per_gas)
        if self.priority_fee_per_gas > self.max_fee_per_gas:
            raise ValueError(f"tx {self.id}: priority fee exceeds max fee per gas")
        if self.max_fee_per_blob_gas < 0:
            raise ValueError("max_fee_per_blob_gas must be non-negative")
        if self.subset_options is not None:
            first = self.subset_options.options[0]
            if (first.num_blobs, first.gas_usage, first.priority_fee_per_gas) != (
                self.num_blobs,
                self.gas_usage,
                self.priority_fee_per_gas,
            ):
                raise ValueError(f"tx {self.id}: top-level fields must match the first option")
            for option in self.subset_options.options:
                if option.priority_fee_per_gas > self.max_fee_per_gas:
                    raise ValueError(f"tx {self.id}: option priority fee exceeds max fee")

    @cached_property
    def first_seen_ms(self) -> int:
        return round(self.first_seen * 1000)

    @cached_property
    def views(self) -> Tuple["BuilderRevenueView", ...]:
        if self.subset_options is None:
            return (BuilderRevenueView(self.id, self.num_blobs, self.gas_usage, revenue(self)),)
        return tuple(
            BuilderRevenueView(self.id, o.num_blobs, o.gas_usage, revenue(o), o.option_id, self.id)
            for o in self.subset_options.options
        )

    @classmethod
    def with_options(
        cls,
        id: str,
        sender: str,
        options: Sequence[SubsetBidOption],
        max_fee_per_gas: Wei,
        max_fee_per_blob_gas: Wei,
        first_seen: float,
        is_private: bool = False,
    ) -> "BlobTx":
        group = SubsetBidGroup(tuple(options))
        first = group.options[0]
        return cls(
            id=id,
            sender=sender,
            num_blobs=first.num_blobs,
            gas_usage=first.gas_usage,
            priority_fee_per_gas=first.priority_fee_per_gas,
            max_fee_per_gas=max_fee_per_gas,
            max_fee_per_blob_gas=max_fee_per_blob_gas,
            first_seen=first_seen,
            is_private=is_private,
            subset_options=group,
        )


@dataclass(frozen=True)
class BuilderRevenueView:
    """What a builder sees of one includable unit: blobs, gas and tip revenue.

    ``group`` is shared by all options of one subset-bid transaction; plain
    transactions have ``group=None`` and option ``None``.
    """

    tx_id: str
    blobs: int
    gas: int
    revenue: Wei
    option_id: Optional[str] = None
    group: Optional[str] = None

    @cached_property
    def key(self) -> Tuple[str, str]:
        return (self.tx_id, self.option_id or "")

    @cached_property
    def exclusion_group(self) -> str:
        return self.group if self.group is not None else self.tx_id

    @cached_property
    def _order(self) -> tuple:
        # revenue desc, fewer blobs, less gas, then id
        return (-self.revenue, self.blobs, self.gas, self.tx_id, self.option_id or "")

    def sort_key(self) -> tuple:
        return self._order


def revenue(tx: Union[BlobTx, SubsetBidOption]) -> Wei:
    """Priority fee credited to the builder; base fees are burned."""
    return tx.gas_usage * tx.priority_fee_per_gas


def expand_group(tx: BlobTx) -> List[BuilderRevenueView]:
    """One view for a plain transaction, one per option (sharing the tx id as
    group) for a subset-bid transaction."""
    if tx.subset_options is not None and len(tx.subset_options.options) < 2:
        raise ValueError("a subset-bid group needs at least two options")
    return list(tx.views)


def default_view(tx: BlobTx) -> BuilderRevenueView:
    """The view a builder without subset-bid support works with."""
    return tx.views[0]


def option_view(tx: BlobTx, option_id: Optional[str]) -> BuilderRevenueView:
    for view in expand_group(tx):
        if (view.option_id or None) == (option_id or None):
            return view
    raise KeyError(f"tx {tx.id} has no option {option_id!r}")


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "t", "y"):
        return True
    if value in ("", "0", "false", "no", "f", "n"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def transaction_rows(tx: BlobTx) -> List[dict]:
    base = {
        "sender": tx.sender,
        "max_fee_per_gas_wei": tx.max_fee_per_gas,
        "max_fee_per_blob_gas_wei": tx.max_fee_per_blob_gas,
        "first_seen_unix_ms": tx.first_seen_ms,
        "is_private": "true" if tx.is_private else "false",
    }
    if tx.subset_options is None:
        return [
            dict(
                base,
                id=tx.id,
                num_blobs=tx.num_blobs,
                gas_usage=tx.gas_usage,
                priority_fee_per_gas_wei=tx.priority_fee_per_gas,
                group_id="",
                option_id="",
            )
        ]
    return [
        dict(
            base,
            id=f"{tx.id}#{o.option_id}",
            num_blobs=o.num_blobs,
            gas_usage=o.gas_usage,
            priority_fee_per_gas_wei=o.priority_fee_per_gas,
            group_id=tx.id,
            option_id=o.option_id,
        )
        for o in tx.subset_options.options
    ]


def write_transactions_csv(path: Union[str, Path], txs: Iterable[BlobTx]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TX_CSV_FIELDS)
        writer.writeheader()
        for tx in txs:
            writer.writerows(transaction_rows(tx))


@dataclass
class CsvIssue:
    line: int
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.message}"


@dataclass
class ParsedTransactions:
    transactions: List[BlobTx] = field(default_factory=list)
    issues: List[CsvIssue] = field(default_factory=list)


def parse_transaction_rows(rows: Iterable[Tuple[int, dict]]) -> ParsedTransactions:
    """Build transactions from ``(line_number, row)`` pairs.

    Rows sharing a ``group_id`` become one subset-bid transaction whose id is
    the group id; options keep file order. Bad rows are reported, not raised.
    A duplicated plain id keeps its earliest ``first_seen``.
    """
    out = ParsedTransactions()
    plain: dict = {}
    groups: dict = {}
    for line, row in rows:
        try:
            missing = [name for name in TX_CSV_FIELDS if name not in row or row[name] is None]
            if missing:
                raise ValueError(f"missing columns {missing}")
            parsed = {
                "id": row["id"].strip(),
                "sender": row["sender"].strip(),
                "num_blobs": int(row["num_blobs"]),
                "gas_usage": int(row["gas_usage"]),
                "priority_fee_per_gas": int(row["priority_fee_per_gas_wei"]),
                "max_fee_per_gas": int(row["max_fee_per_gas_wei"]),
                "max_fee_per_blob_gas": int(row["max_fee_per_blob_gas_wei"]),
                "first_seen": int(row["first_seen_unix_ms"]) / 1000,
                "is_private": _parse_bool(row["is_private"]),
            }
            if not parsed["id"]:
                raise ValueError("empty id")
            group_id = row["group_id"].strip()
            option_id = row["option_id"].strip()
            if group_id:
                if not option_id:
                    raise ValueError("group_id without option_id")
                option = SubsetBidOption(
                    option_id, parsed["num_blobs"], parsed["gas_usage"], parsed["priority_fee_per_gas"]
                )
                groups.setdefault(group_id, []).append((line, parsed, option))
            else:
                if option_id:
                    raise ValueError("option_id without group_id")
                tx = BlobTx(**parsed)
                prev = plain.get(tx.id)
                if prev is None or tx.first_seen < prev.first_seen:
                    plain[tx.id] = tx
        except (ValueError, TypeError, AttributeError) as exc:
            out.issues.append(CsvIssue(line, str(exc)))
    for group_id, members in groups.items():
        line, first, _ = members[0]
        try:
            if group_id in plain:
                raise ValueError(f"group id {group_id} collides with a plain transaction id")
            seen: dict = {}
            for _, parsed, option in members:
                # duplicate rows of one option collapse to the earliest sighting
                if option.option_id in seen:
                    prev_parsed, prev_option = seen[option.option_id]
                    if parsed["first_seen"] < prev_parsed["first_seen"]:
                        seen[option.option_id] = (parsed, prev_option)
                    continue
                seen[option.option_id] = (parsed, option)
            first_seen = min(p["first_seen"] for p, _ in seen.values())
            tx = BlobTx.with_options(
                id=group_id,
                sender=first["sender"],
                options=[o for _, o in seen.values()],
                max_fee_per_gas=min(p["max_fee_per_gas"] for p, _ in seen.values()),
                max_fee_per_blob_gas=min(p["max_fee_per_blob_gas"] for p, _ in seen.values()),
                first_seen=first_seen,
                is_private=first["is_private"],
            )
            plain[tx.id] = tx
        except ValueError as exc:
            out.issues.append(CsvIssue(line, f"group {group_id}: {exc}"))
    out.transactions = sorted(plain.values(), key=lambda t: (t.first_seen_ms, t.id))
    return out


def read_transactions_csv(path: Union[str, Path]) -> ParsedTransactions:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return parse_transaction_rows((reader.line_num, row) for row in reader)


def can_pay(tx: BlobTx, base_fee_per_gas: Wei, blob_base_fee: Wei) -> bool:
    """Whether the fee caps cover the block's base fees plus the full tip."""
    return (
        tx.max_fee_per_blob_gas >= blob_base_fee
        and tx.max_fee_per_gas >= base_fee_per_gas + tx.priority_fee_per_gas
    )
