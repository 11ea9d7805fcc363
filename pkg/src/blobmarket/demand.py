"""
Seeded blob-transaction demand.

Each sender submits as a Poisson process whose rate is scaled by any active
spike; spikes can also bring in short-lived single-blob senders. Streams are
a pure function of the scenario (including its seed).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .fees import DEFAULT_PARAMS, MIN_TX_GAS, ProtocolParams
from .mempool import EligibilityWindow
from .transactions import BlobTx, SubsetBidOption

GWEI = 10**9


# -- value policies ---------------------------------------------------------


@dataclass(frozen=True)
class Fixed:
    value: int

    def draw(self, rng: np.random.Generator, index: int) -> int:
        return self.value

    def bounds(self) -> Tuple[int, int]:
        return self.value, self.value


@dataclass(frozen=True)
class Cycle:
    values: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("empty cycle")

    def draw(self, rng: np.random.Generator, index: int) -> int:
        return self.values[index % len(self.values)]

    def bounds(self) -> Tuple[int, int]:
        return min(self.values), max(self.values)


@dataclass(frozen=True)
class Choice:
    values: Tuple[int, ...]
    weights: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))
        if not self.values:
            raise ValueError("empty choice")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
            if len(self.weights) != len(self.values) or min(self.weights) < 0 or sum(self.weights) <= 0:
                raise ValueError("bad choice weights")

    def draw(self, rng: np.random.Generator, index: int) -> int:
        if self.weights is None:
            return self.values[int(rng.integers(len(self.values)))]
        p = np.asarray(self.weights) / sum(self.weights)
        return self.values[int(rng.choice(len(self.values), p=p))]

    def bounds(self) -> Tuple[int, int]:
        return min(self.values), max(self.values)


@dataclass(frozen=True)
class UniformInt:
    low: int
    high: int

    def __post_init__(self) -> None:
        if self.low > self.high:
            raise ValueError("low > high")

    def draw(self, rng: np.random.Generator, index: int) -> int:
        return int(rng.integers(self.low, self.high, endpoint=True))

    def bounds(self) -> Tuple[int, int]:
        return self.low, self.high


@dataclass(frozen=True)
class Reactive:
    """Priority fee that is multiplied by ``factor`` when, at submission time,
    the blob base fee exceeds ``threshold`` wei."""

    base: "Policy"
    threshold: int
    factor: float

    def __post_init__(self) -> None:
        if self.factor < 1:
            raise ValueError("reaction factor must be >= 1")

    def draw(self, rng: np.random.Generator, index: int) -> int:
        return self.base.draw(rng, index)

    def bounds(self) -> Tuple[int, int]:
        low, high = self.base.bounds()
        return low, math.ceil(high * self.factor)

    def adjust(self, value: int, blob_base_fee: int) -> int:
        return int(value * self.factor) if blob_base_fee > self.threshold else value


Policy = Union[Fixed, Cycle, Choice, UniformInt, Reactive]


def policy_from_json(data: Any) -> Policy:
    if isinstance(data, int) and not isinstance(data, bool):
        return Fixed(data)
    if not isinstance(data, Mapping) or len(data) != 1:
        raise ValueError(f"bad policy {data!r}")
    (kind, arg), = data.items()
    if kind == "fixed":
        return Fixed(int(arg))
    if kind == "cycle":
        return Cycle(tuple(int(v) for v in arg))
    if kind == "choice":
        if isinstance(arg, Mapping):
            return Choice(tuple(int(v) for v in arg["values"]), arg.get("weights"))
        return Choice(tuple(int(v) for v in arg))
    if kind == "uniform":
        return UniformInt(int(arg[0]), int(arg[1]))
    if kind == "reactive":
        return Reactive(policy_from_json(arg["base"]), int(arg["threshold"]), float(arg["factor"]))
    raise ValueError(f"unknown policy kind {kind!r}")


def policy_to_json(policy: Policy) -> Any:
    if isinstance(policy, Fixed):
        return {"fixed": policy.value}
    if isinstance(policy, Cycle):
        return {"cycle": list(policy.values)}
    if isinstance(policy, Choice):
        return {"choice": {"values": list(policy.values), "weights": policy.weights and list(policy.weights)}}
    if isinstance(policy, UniformInt):
        return {"uniform": [policy.low, policy.high]}
    return {
        "reactive": {"base": policy_to_json(policy.base), "threshold": policy.threshold, "factor": policy.factor}
    }


# -- scenario description ---------------------------------------------------


@dataclass(frozen=True)
class SenderStrategy:
    sender: str
    blob_count: Policy = Fixed(1)
    gas: Policy = Fixed(MIN_TX_GAS)
    priority_fee: Policy = Fixed(GWEI)
    submit_interval: float = 60.0
    private: bool = False
    private_builder: Optional[str] = None
    max_base_fee_per_gas: int = 200 * GWEI
    max_fee_per_blob_gas: int = 10**18
    subset_bidding: bool = False

    def __post_init__(self) -> None:
        lo, hi = self.blob_count.bounds()
        if lo < 1 or hi > 6:
            raise ValueError(f"{self.sender}: blob counts must lie in 1..6")
        if self.gas.bounds()[0] < MIN_TX_GAS:
            raise ValueError(f"{self.sender}: gas must be at least {MIN_TX_GAS}")
        if self.priority_fee.bounds()[0] < 0:
            raise ValueError(f"{self.sender}: negative priority fee")
        if not self.submit_interval > 0:
            raise ValueError(f"{self.sender}: submit_interval must be positive")

    @property
    def mean_blobs(self) -> float:
        policy = self.blob_count
        if isinstance(policy, Fixed):
            return float(policy.value)
        if isinstance(policy, Cycle):
            return float(np.mean(policy.values))
        if isinstance(policy, Choice):
            weights = policy.weights or (1.0,) * len(policy.values)
            return float(np.average(policy.values, weights=weights))
        if isinstance(policy, UniformInt):
            return (policy.low + policy.high) / 2
        raise TypeError("blob_count cannot be reactive")

    def reprice(self, tx: BlobTx, blob_base_fee: int) -> BlobTx:
        """Apply a congestion-reactive priority fee at submission time."""
        if not isinstance(self.priority_fee, Reactive):
            return tx
        policy = self.priority_fee
        prio = policy.adjust(tx.priority_fee_per_gas, blob_base_fee)
        if prio == tx.priority_fee_per_gas:
            return tx
        max_fee = prio + self.max_base_fee_per_gas
        if tx.subset_options is None:
            return replace(tx, priority_fee_per_gas=prio, max_fee_per_gas=max_fee)
        options = [
            replace(o, priority_fee_per_gas=policy.adjust(o.priority_fee_per_gas, blob_base_fee))
            for o in tx.subset_options.options
        ]
        return BlobTx.with_options(
            tx.id, tx.sender, options, max_fee, tx.max_fee_per_blob_gas, tx.first_seen, tx.is_private
        )


@dataclass(frozen=True)
class SpikeEvent:
    start: float
    duration: float
    arrival_multiplier: float = 1.0
    extra_senders: int = 0
    extra_interval: float = 60.0
    extra_priority_fee: int = GWEI
    extra_max_fee_per_blob_gas: int = 10**18

    def __post_init__(self) -> None:
        if self.arrival_multiplier < 1:
            raise ValueError("arrival_multiplier must be >= 1")
        if not self.duration > 0:
            raise ValueError("spike duration must be positive")
        if self.extra_senders < 0 or not self.extra_interval > 0:
            raise ValueError("bad extra sender settings")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def active(self, t: float) -> bool:
        return self.start <= t < self.end


STRATEGIES = ("greedy", "optimal", "subset-optimal")


@dataclass(frozen=True)
class BuilderConfig:
    name: str
    strategy: str = "optimal"
    blob_aversion_probability: float = 0.0
    selection_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown builder strategy {self.strategy!r}")
        if not 0.0 <= self.blob_aversion_probability <= 1.0:
            raise ValueError("blob_aversion_probability must lie in [0, 1]")
        if self.selection_weight < 0:
            raise ValueError("selection_weight must be non-negative")


@dataclass(frozen=True)
class Scenario:
    seed: int = 0
    horizon_slots: int = 1000
    strategies: Tuple[SenderStrategy, ...] = ()
    spikes: Tuple[SpikeEvent, ...] = ()
    params: ProtocolParams = DEFAULT_PARAMS
    builders: Tuple[BuilderConfig, ...] = (BuilderConfig("builder"),)
    transactions: Tuple[BlobTx, ...] = ()
    # window used when auditing packing (and when exporting verdicts)
    window: EligibilityWindow = EligibilityWindow(4.0, 120.0)
    # what builders can see; transactions older than max_age are dropped
    builder_window: EligibilityWindow = EligibilityWindow(4.0, 1200.0)
    reserved_gas: int = 10_000_000
    initial_base_fee: int = 10 * GWEI
    initial_excess_blob_gas: int = 0
    genesis_time: int = 0
    name: str = "custom"

    def __post_init__(self) -> None:
        for attr in ("strategies", "spikes", "builders", "transactions"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        if self.horizon_slots < 1:
            raise ValueError("horizon_slots must be >= 1")
        if not 0 <= self.reserved_gas <= self.params.block_gas_limit:
            raise ValueError("reserved_gas must fit in the block gas limit")
        names = [b.name for b in self.builders]
        if len(set(names)) != len(names):
            raise ValueError("builder names must be unique")

    @property
    def horizon_seconds(self) -> int:
        return self.horizon_slots * self.params.slot_seconds

    def with_overrides(self, **changes: Any) -> "Scenario":
        return replace(self, **changes)

    # JSON ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Scenario":
        data = dict(data)
        kwargs: Dict[str, Any] = {}
        for key in (
            "seed",
            "horizon_slots",
            "reserved_gas",
            "initial_base_fee",
            "initial_excess_blob_gas",
            "genesis_time",
            "name",
        ):
            if key in data:
                kwargs[key] = data.pop(key)
        if "params" in data:
            kwargs["params"] = ProtocolParams.from_dict(data.pop("params"))
        for key in ("window", "builder_window"):
            if key in data:
                kwargs[key] = EligibilityWindow(**data.pop(key))
        if "strategies" in data:
            kwargs["strategies"] = tuple(_strategy_from_dict(s) for s in data.pop("strategies"))
        if "spikes" in data:
            kwargs["spikes"] = tuple(SpikeEvent(**s) for s in data.pop("spikes"))
        if "builders" in data:
            kwargs["builders"] = tuple(BuilderConfig(**b) for b in data.pop("builders"))
        if data:
            raise ValueError(f"unknown scenario fields: {sorted(data)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        if self.transactions:
            raise ValueError("scripted transactions are not serialisable as a scenario file")
        return {
            "name": self.name,
            "seed": self.seed,
            "horizon_slots": self.horizon_slots,
            "reserved_gas": self.reserved_gas,
            "initial_base_fee": self.initial_base_fee,
            "initial_excess_blob_gas": self.initial_excess_blob_gas,
            "genesis_time": self.genesis_time,
            "params": self.params.to_dict(),
            "window": {"min_lead": self.window.min_lead, "max_age": self.window.max_age},
            "builder_window": {
                "min_lead": self.builder_window.min_lead,
                "max_age": self.builder_window.max_age,
            },
            "strategies": [_strategy_to_dict(s) for s in self.strategies],
            "spikes": [vars(s).copy() for s in self.spikes],
            "builders": [vars(b).copy() for b in self.builders],
        }


_POLICY_FIELDS = ("blob_count", "gas", "priority_fee")


def _strategy_from_dict(data: Mapping[str, Any]) -> SenderStrategy:
    kwargs = dict(data)
    for key in _POLICY_FIELDS:
        if key in kwargs:
            kwargs[key] = policy_from_json(kwargs[key])
    return SenderStrategy(**kwargs)


def _strategy_to_dict(strategy: SenderStrategy) -> dict:
    out = vars(strategy).copy()
    for key in _POLICY_FIELDS:
        out[key] = policy_to_json(out[key])
    return out


def load_scenario(path: Union[str, Path]) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- generation -------------------------------------------------------------


@dataclass(frozen=True)
class Arrival:
    tx: BlobTx
    strategy: Optional[SenderStrategy] = None


def _poisson_times(
    rng: np.random.Generator,
    mean_interval: float,
    horizon: float,
    segments: Sequence[Tuple[float, float, float]],
) -> List[float]:
    """Arrival times on ``[0, horizon)`` for a piecewise-constant rate.

    ``segments`` is a list of ``(start, end, multiplier)`` covering the
    horizon; the base rate is ``1 / mean_interval``. Exponential gaps are
    redrawn at segment boundaries (memorylessness keeps this exact).
    """
    times = []
    for start, end, mult in segments:
        if mult <= 0:
            continue
        scale = mean_interval / mult
        t = start
        while True:
            t += float(rng.exponential(scale))
            if t >= end:
                break
            times.append(t)
    return times


def _segments(horizon: float, spikes: Sequence[SpikeEvent]) -> List[Tuple[float, float, float]]:
    cuts = {0.0, float(horizon)}
    for s in spikes:
        for c in (s.start, s.end):
            if 0 < c < horizon:
                cuts.add(float(c))
    points = sorted(cuts)
    out = []
    for a, b in zip(points, points[1:]):
        mult = 1.0
        for s in spikes:
            if s.active(a):
                mult *= s.arrival_multiplier
        out.append((a, b, mult))
    return out


def _quantise(t: float, origin: int) -> float:
    return (origin * 1000 + round(t * 1000)) / 1000


def _build_tx(
    strategy: SenderStrategy, rng: np.random.Generator, index: int, t: float
) -> BlobTx:
    blobs = strategy.blob_count.draw(rng, index)
    gas = strategy.gas.draw(rng, index)
    prio = strategy.priority_fee.draw(rng, index)
    tx_id = f"{strategy.sender}-{index:06d}"
    max_fee = prio + strategy.max_base_fee_per_gas
    if strategy.subset_bidding and blobs > 1:
        options = [
            SubsetBidOption(f"{k}b", k, gas, prio * k // blobs) for k in range(blobs, 0, -1)
        ]
        return BlobTx.with_options(
            tx_id, strategy.sender, options, max_fee, strategy.max_fee_per_blob_gas, t, strategy.private
        )
    return BlobTx(
        tx_id, strategy.sender, blobs, gas, prio, max_fee, strategy.max_fee_per_blob_gas, t, strategy.private
    )


def spike_senders(spike: SpikeEvent, spike_index: int) -> List[SenderStrategy]:
    return [
        SenderStrategy(
            sender=f"spike{spike_index}-{j:04d}",
            blob_count=Fixed(1),
            gas=Fixed(MIN_TX_GAS),
            priority_fee=Fixed(spike.extra_priority_fee),
            submit_interval=spike.extra_interval,
            max_fee_per_blob_gas=spike.extra_max_fee_per_blob_gas,
        )
        for j in range(spike.extra_senders)
    ]


def generate_arrivals(scenario: Scenario) -> List[Arrival]:
    """Seeded arrivals for every sender, sorted by ``(first_seen, id)``."""
    if not scenario.strategies:
        raise ValueError("scenario has no sender strategies")
    horizon = float(scenario.horizon_seconds)
    arrivals: List[Arrival] = []
    segments = _segments(horizon, scenario.spikes)
    for idx, strategy in enumerate(scenario.strategies):
        rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 0, idx]))
        times = _poisson_times(rng, strategy.submit_interval, horizon, segments)
        for k, t in enumerate(times):
            arrivals.append(Arrival(_build_tx(strategy, rng, k, _quantise(t, scenario.genesis_time)), strategy))
    for s_idx, spike in enumerate(scenario.spikes):
        window = [(max(spike.start, 0.0), min(spike.end, horizon), 1.0)]
        if window[0][0] >= window[0][1]:
            continue
        for j, strategy in enumerate(spike_senders(spike, s_idx)):
            rng = np.random.default_rng(np.random.SeedSequence([scenario.seed, 1, s_idx, j]))
            times = _poisson_times(rng, strategy.submit_interval, horizon, window)
            for k, t in enumerate(times):
                arrivals.append(Arrival(_build_tx(strategy, rng, k, _quantise(t, scenario.genesis_time)), strategy))
    arrivals.sort(key=lambda a: (a.tx.first_seen_ms, a.tx.id))
    return arrivals


def generate(scenario: Scenario) -> List[BlobTx]:
    """Time-ordered transaction stream for ``scenario`` (without fee reactions)."""
    return [a.tx for a in generate_arrivals(scenario)]


def expected_blobs_per_slot(scenario: Scenario, t: float) -> float:
    """Analytic mean blob arrivals per slot at time ``t``."""
    slot = scenario.params.slot_seconds
    mult = 1.0
    extra = 0.0
    for spike in scenario.spikes:
        if spike.active(t):
            mult *= spike.arrival_multiplier
            extra += spike.extra_senders * slot / spike.extra_interval
    base = sum(s.mean_blobs * slot / s.submit_interval for s in scenario.strategies)
    return base * mult + extra


# -- presets ----------------------------------------------------------------


def l2_senders(
    reactive: bool = False, blob_fee_cap: int = 10**18, subset_bidding: bool = False
) -> Tuple[SenderStrategy, ...]:
    """The rollup sender mix behind the presets, about 2.4 blobs per slot.

    ``subset_bidding`` lets the linea-like sender offer its batches as
    per-size options; no preset turns it on.
    """
    def prio(policy: Policy) -> Policy:
        # about one order of magnitude once blob fees leave the floor
        return Reactive(policy, threshold=GWEI, factor=10.0) if reactive else policy

    common = dict(max_fee_per_blob_gas=blob_fee_cap)
    return (
        SenderStrategy("base", Fixed(3), Fixed(MIN_TX_GAS), prio(UniformInt(GWEI * 3 // 2, GWEI * 7 // 2)), 60.0, **common),
        SenderStrategy("arbitrum", Fixed(2), UniformInt(MIN_TX_GAS, 60_000), prio(UniformInt(GWEI, 3 * GWEI)), 90.0, **common),
        SenderStrategy("optimism", Fixed(2), Fixed(MIN_TX_GAS), prio(UniformInt(GWEI, 3 * GWEI)), 120.0, **common),
        SenderStrategy("taiko", Fixed(1), UniformInt(150_000, 250_000), prio(UniformInt(GWEI, 2 * GWEI)), 24.0,
                       private=True, private_builder="titan", **common),
        SenderStrategy("scroll", Fixed(1), UniformInt(60_000, 120_000), prio(UniformInt(50_000_000, 90_000_000)), 60.0, **common),
        SenderStrategy("starknet", Choice((1, 2, 3, 4, 5, 6)), UniformInt(100_000, 300_000),
                       prio(UniformInt(80_000_000, 120_000_000)), 240.0, **common),
        SenderStrategy("linea", Cycle((6, 3, 2)), UniformInt(MIN_TX_GAS, 80_000), prio(UniformInt(2 * GWEI, 3 * GWEI)), 180.0,
                       subset_bidding=subset_bidding, **common),
        SenderStrategy("blast", Choice((1, 2, 3, 4, 5, 6)), Fixed(MIN_TX_GAS), prio(UniformInt(GWEI, 3 * GWEI)), 240.0, **common),
    )


_DEFAULT_BUILDERS = (
    BuilderConfig("titan", "subset-optimal", 0.05, 0.45),
    BuilderConfig("beaver", "greedy", 0.05, 0.35),
    BuilderConfig("vanilla", "greedy", 0.0, 0.20),
)

PRESETS = ("calm", "blobscriptions", "layerzero")


def preset(name: str, seed: int = 0) -> Scenario:
    """Built-in scenarios.

    ``calm`` keeps aggregate demand under the 3-blob target. ``blobscriptions``
    adds two hours of many small single-blob senders on top of it.
    ``layerzero`` saturates blob space for seven hours while rollups raise
    their tips tenfold once the blob fee leaves the floor.
    """
    if name == "calm":
        return Scenario(seed=seed, horizon_slots=3600, strategies=l2_senders(), builders=_DEFAULT_BUILDERS, name=name)
    if name == "blobscriptions":
        spike = SpikeEvent(
            start=3600.0,
            duration=7200.0,
            extra_senders=120,
            extra_interval=120.0,
            extra_priority_fee=GWEI,
            extra_max_fee_per_blob_gas=50 * GWEI,
        )
        return Scenario(
            seed=seed, horizon_slots=1800, strategies=l2_senders(), spikes=(spike,), builders=_DEFAULT_BUILDERS, name=name
        )
    if name == "layerzero":
        spike = SpikeEvent(
            start=3600.0,
            duration=7 * 3600.0,
            arrival_multiplier=3.0,
            extra_senders=150,
            extra_interval=150.0,
            extra_priority_fee=2 * GWEI,
            extra_max_fee_per_blob_gas=10**16,
        )
        return Scenario(
            seed=seed,
            horizon_slots=5000,
            strategies=l2_senders(reactive=True, blob_fee_cap=10**16),
            spikes=(spike,),
            builders=_DEFAULT_BUILDERS,
            name=name,
        )
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
