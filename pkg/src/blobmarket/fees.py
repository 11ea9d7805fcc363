"""
Protocol fee rules for type-3 (blob) transactions.

Two fee markets are priced per block: the execution market (per-gas base
fee, adjusted from the parent block's gas usage) and the blob market (per
blob-gas base fee, exponential in the accumulated excess blob gas). All
quantities are plain Python ints, so wei amounts never overflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Mapping, Tuple

Wei = int
BlobGas = int

MIN_TX_GAS = 21_000


@dataclass(frozen=True)
class ProtocolParams:
    max_blobs_per_block: int = 6
    target_blobs_per_block: int = 3
    gas_per_blob: int = 131_072
    min_blob_base_fee: Wei = 1
    blob_fee_update_fraction: int = 3_338_477
    block_gas_limit: int = 30_000_000
    base_fee_max_change_denominator: int = 8
    slot_seconds: int = 12

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
                raise ValueError(f"{f.name} must be a positive integer, got {value!r}")
        if self.target_blobs_per_block > self.max_blobs_per_block:
            raise ValueError("target_blobs_per_block exceeds max_blobs_per_block")
        # one maximally full block may raise the blob fee by at most 12.5%
        step = (self.max_blobs_per_block - self.target_blobs_per_block) * self.gas_per_blob
        if step / self.blob_fee_update_fraction > math.log(1.1251):
            raise ValueError("blob_fee_update_fraction allows more than a 12.5% per-block increase")

    @property
    def target_blob_gas(self) -> BlobGas:
        return self.target_blobs_per_block * self.gas_per_blob

    @property
    def max_blob_gas(self) -> BlobGas:
        return self.max_blobs_per_block * self.gas_per_blob

    @property
    def gas_target(self) -> int:
        return self.block_gas_limit // 2

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ProtocolParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown protocol parameters: {sorted(unknown)}")
        return cls(**dict(data))

    @classmethod
    def from_json(cls, text: str) -> "ProtocolParams":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_PARAMS = ProtocolParams()


@dataclass(frozen=True)
class BlockFeeState:
    """Fee-relevant header fields of one block.

    ``excess_blob_gas`` is the excess accumulated *before* this block and
    therefore fixes this block's blob base fee.
    """

    block_number: int
    timestamp: int
    base_fee_per_gas: Wei
    excess_blob_gas: BlobGas = 0
    gas_used: int = 0
    blob_gas_used: BlobGas = 0

    def __post_init__(self) -> None:
        if self.base_fee_per_gas < 1:
            raise ValueError("base_fee_per_gas must be at least 1 wei")
        if self.excess_blob_gas < 0 or self.blob_gas_used < 0 or self.gas_used < 0:
            raise ValueError("gas quantities must be non-negative")

    def blob_base_fee(self, params: ProtocolParams = DEFAULT_PARAMS) -> Wei:
        return blob_base_fee(self.excess_blob_gas, params)

    def check(self, params: ProtocolParams = DEFAULT_PARAMS) -> None:
        if self.blob_gas_used > params.max_blob_gas:
            raise ValueError(f"block {self.block_number} uses {self.blob_gas_used} blob gas")
        if self.gas_used > params.block_gas_limit:
            raise ValueError(f"block {self.block_number} exceeds the gas limit")

    def next(self, params: ProtocolParams = DEFAULT_PARAMS) -> "BlockFeeState":
        """State of the following block, given this block's recorded usage."""
        return BlockFeeState(
            block_number=self.block_number + 1,
            timestamp=self.timestamp + params.slot_seconds,
            base_fee_per_gas=update_exec_base_fee(
                self.base_fee_per_gas, self.gas_used, params.gas_target, params
            ),
            excess_blob_gas=update_excess_blob_gas(self.excess_blob_gas, self.blob_gas_used, params),
        )

    def with_usage(self, gas_used: int, blob_gas_used: BlobGas) -> "BlockFeeState":
        return replace(self, gas_used=gas_used, blob_gas_used=blob_gas_used)


@dataclass(frozen=True)
class FeeBreakdown:
    exec_base_burned: Wei = 0
    exec_priority_to_builder: Wei = 0
    blob_base_burned: Wei = 0

    @property
    def total(self) -> Wei:
        return self.exec_base_burned + self.exec_priority_to_builder + self.blob_base_burned

    @property
    def burned(self) -> Wei:
        return self.exec_base_burned + self.blob_base_burned

    def __add__(self, other: "FeeBreakdown") -> "FeeBreakdown":
        return FeeBreakdown(
            self.exec_base_burned + other.exec_base_burned,
            self.exec_priority_to_builder + other.exec_priority_to_builder,
            self.blob_base_burned + other.blob_base_burned,
        )


def fake_exponential(factor: int, numerator: int, denominator: int) -> int:
    """Integer approximation of ``factor * e**(numerator / denominator)``.

    Taylor series accumulated with integer division; the loop stops once a
    term truncates to zero.
    """
    if denominator <= 0:
        raise ValueError("denominator must be positive")
    if factor < 0 or numerator < 0:
        raise ValueError("factor and numerator must be non-negative")
    i = 1
    output = 0
    accum = factor * denominator
    while accum > 0:
        output += accum
        accum = (accum * numerator) // (denominator * i)
        i += 1
    return output // denominator


def blob_base_fee(excess_blob_gas: BlobGas, params: ProtocolParams = DEFAULT_PARAMS) -> Wei:
    """Blob base fee per unit of blob gas."""
    return fake_exponential(
        params.min_blob_base_fee, excess_blob_gas, params.blob_fee_update_fraction
    )


def update_excess_blob_gas(
    prev_excess: BlobGas, blob_gas_used_prev_block: BlobGas, params: ProtocolParams = DEFAULT_PARAMS
) -> BlobGas:
    if blob_gas_used_prev_block > params.max_blob_gas:
        raise ValueError("blob gas used exceeds the per-block maximum")
    return max(prev_excess + blob_gas_used_prev_block - params.target_blob_gas, 0)


def update_exec_base_fee(
    prev_base_fee: Wei, gas_used: int, gas_target: int, params: ProtocolParams = DEFAULT_PARAMS
) -> Wei:
    """EIP-1559 execution base fee for the next block, floored at 1 wei.

    The change is truncated towards zero in both directions, so it never
    exceeds ``prev_base_fee / base_fee_max_change_denominator``.
    """
    if gas_target <= 0:
        raise ValueError("gas_target must be positive")
    delta = prev_base_fee * abs(gas_used - gas_target) // (
        gas_target * params.base_fee_max_change_denominator
    )
    new = prev_base_fee + delta if gas_used >= gas_target else prev_base_fee - delta
    return max(new, 1)


def fee_1559(gas_usage: int, priority_fee_per_gas: Wei, state: BlockFeeState) -> Tuple[Wei, Wei]:
    """Return ``(burned, to_builder)`` paid in the execution gas market."""
    if gas_usage < MIN_TX_GAS:
        raise ValueError(f"gas_usage {gas_usage} below the {MIN_TX_GAS} minimum")
    if priority_fee_per_gas < 0:
        raise ValueError("priority fee must be non-negative")
    return gas_usage * state.base_fee_per_gas, gas_usage * priority_fee_per_gas


def fee_4844(num_blobs: int, state: BlockFeeState, params: ProtocolParams = DEFAULT_PARAMS) -> Wei:
    """Blob-market fee for ``num_blobs`` blobs; burned in full."""
    if not 1 <= num_blobs <= params.max_blobs_per_block:
        raise ValueError(f"num_blobs must be in 1..{params.max_blobs_per_block}")
    return num_blobs * params.gas_per_blob * state.blob_base_fee(params)


def transaction_fees(
    num_blobs: int,
    gas_usage: int,
    priority_fee_per_gas: Wei,
    state: BlockFeeState,
    params: ProtocolParams = DEFAULT_PARAMS,
) -> FeeBreakdown:
    burned, to_builder = fee_1559(gas_usage, priority_fee_per_gas, state)
    return FeeBreakdown(burned, to_builder, fee_4844(num_blobs, state, params))
