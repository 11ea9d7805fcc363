import json
import math

import numpy as np
import pytest

from blobmarket.demand import (
    GWEI,
    PRESETS,
    BuilderConfig,
    Choice,
    Cycle,
    Fixed,
    Reactive,
    Scenario,
    SenderStrategy,
    SpikeEvent,
    UniformInt,
    expected_blobs_per_slot,
    generate,
    load_scenario,
    policy_from_json,
    policy_to_json,
    preset,
)
from blobmarket.transactions import BlobTx


def one_sender(**kw):
    return Scenario(seed=kw.pop("seed", 1), horizon_slots=kw.pop("horizon_slots", 100), strategies=(SenderStrategy("s", **kw),))


def test_single_sender_rate_and_blobs():
    txs = generate(one_sender(blob_count=Fixed(1), submit_interval=60.0))
    # 1200 s at one per minute: 20 expected, Poisson sd ~4.5
    assert abs(len(txs) - 20) <= 3 * math.sqrt(20)
    assert all(t.num_blobs == 1 for t in txs)
    assert all(0 <= t.first_seen < 1200 for t in txs)


def test_fixed_six_blobs():
    assert all(t.num_blobs == 6 for t in generate(one_sender(blob_count=Fixed(6), horizon_slots=500)))


def test_sorted_and_unique_ids():
    txs = generate(preset("calm").with_overrides(horizon_slots=500))
    keys = [(t.first_seen_ms, t.id) for t in txs]
    assert keys == sorted(keys)
    assert len({t.id for t in txs}) == len(txs)


def test_deterministic_stream():
    a = generate(preset("blobscriptions", seed=4))
    b = generate(preset("blobscriptions", seed=4))
    c = generate(preset("blobscriptions", seed=5))
    assert a == b
    assert a != c


def test_spike_multiplier_rate():
    horizon = 2000
    half = horizon * 12 / 2
    scenario = Scenario(
        seed=11,
        horizon_slots=horizon,
        strategies=(SenderStrategy("s", submit_interval=120.0),),
        spikes=(SpikeEvent(start=half, duration=half, arrival_multiplier=10.0),),
    )
    txs = generate(scenario)
    calm = sum(1 for t in txs if t.first_seen < half)
    spiky = len(txs) - calm
    expect_calm = half / 120.0
    expect_spike = 10 * expect_calm
    assert abs(calm - expect_calm) <= 3 * math.sqrt(expect_calm)
    assert abs(spiky - expect_spike) <= 3 * math.sqrt(expect_spike)


def test_spike_extra_senders_single_blob():
    spike = SpikeEvent(start=600.0, duration=1200.0, extra_senders=40, extra_interval=120.0)
    scenario = Scenario(seed=3, horizon_slots=300, strategies=(SenderStrategy("l2", blob_count=Fixed(4)),), spikes=(spike,))
    extra = [t for t in generate(scenario) if t.sender.startswith("spike")]
    assert extra
    assert all(t.num_blobs == 1 and t.gas_usage == 21000 for t in extra)
    assert all(600.0 <= t.first_seen < 1800.0 for t in extra)
    expected = 40 * 1200 / 120
    assert abs(len(extra) - expected) <= 3 * math.sqrt(expected)


def test_rate_fidelity_per_sender():
    scenario = preset("calm", seed=2).with_overrides(horizon_slots=2000)
    txs = generate(scenario)
    horizon = scenario.horizon_seconds
    for s in scenario.strategies:
        n = sum(1 for t in txs if t.sender == s.sender)
        lam = horizon / s.submit_interval
        assert abs(n - lam) <= 3 * math.sqrt(lam), s.sender


def test_policies():
    rng = np.random.default_rng(0)
    assert [Cycle((6, 3, 2)).draw(rng, i) for i in range(5)] == [6, 3, 2, 6, 3]
    draws = {UniformInt(1, 3).draw(rng, 0) for _ in range(200)}
    assert draws == {1, 2, 3}
    assert {Choice((2, 5), (0.0, 1.0)).draw(rng, 0) for _ in range(50)} == {5}
    r = Reactive(Fixed(GWEI), threshold=100, factor=10.0)
    assert r.adjust(GWEI, 100) == GWEI
    assert r.adjust(GWEI, 101) == 10 * GWEI
    with pytest.raises(ValueError):
        Reactive(Fixed(1), 1, 0.5)


@pytest.mark.parametrize(
    "policy",
    [Fixed(3), Cycle((1, 2)), Choice((1, 6)), Choice((1, 6), (1.0, 3.0)), UniformInt(5, 9), Reactive(UniformInt(1, 4), 7, 2.5)],
)
def test_policy_json_roundtrip(policy):
    assert policy_from_json(json.loads(json.dumps(policy_to_json(policy)))) == policy


def test_strategy_validation():
    with pytest.raises(ValueError):
        SenderStrategy("x", blob_count=Fixed(7))
    with pytest.raises(ValueError):
        SenderStrategy("x", gas=Fixed(100))
    with pytest.raises(ValueError):
        SenderStrategy("x", submit_interval=0)
    with pytest.raises(ValueError):
        SpikeEvent(0, 10, arrival_multiplier=0.5)
    with pytest.raises(ValueError):
        BuilderConfig("b", strategy="magic")
    with pytest.raises(ValueError):
        BuilderConfig("b", blob_aversion_probability=1.5)


def test_subset_bidding_expansion():
    s = SenderStrategy("lin", blob_count=Fixed(3), priority_fee=Fixed(90), subset_bidding=True)
    tx = generate(Scenario(seed=0, horizon_slots=100, strategies=(s,)))[0]
    opts = tx.subset_options.options
    assert [(o.option_id, o.num_blobs, o.priority_fee_per_gas) for o in opts] == [("3b", 3, 90), ("2b", 2, 60), ("1b", 1, 30)]


def test_reactive_reprice():
    s = SenderStrategy("r", priority_fee=Reactive(Fixed(GWEI), GWEI, 10.0))
    tx = BlobTx("r-0", "r", 1, 21000, GWEI, GWEI + s.max_base_fee_per_gas, 10**18, 0.0)
    assert s.reprice(tx, GWEI) is tx
    hot = s.reprice(tx, GWEI + 1)
    assert hot.priority_fee_per_gas == 10 * GWEI
    assert hot.max_fee_per_gas == 10 * GWEI + s.max_base_fee_per_gas


def test_empty_strategies_rejected():
    with pytest.raises(ValueError):
        generate(Scenario(strategies=()))


def test_scenario_json_roundtrip(tmp_path):
    sc = preset("layerzero", seed=9)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(sc.to_dict()))
    assert load_scenario(path) == sc
    with pytest.raises(ValueError):
        Scenario.from_dict({"seed": 1, "surprise": True})


def test_preset_names():
    assert set(PRESETS) == {"calm", "blobscriptions", "layerzero"}
    with pytest.raises(ValueError):
        preset("nope")


def _demand_profile(scenario):
    slot = scenario.params.slot_seconds
    return np.array([expected_blobs_per_slot(scenario, n * slot) for n in range(scenario.horizon_slots)])


def test_preset_demand_shapes():
    calm = preset("calm")
    assert _demand_profile(calm).max() < 3

    blob = preset("blobscriptions")
    prof = _demand_profile(blob)
    assert (prof > 6).sum() * blob.params.slot_seconds >= 3600
    assert blob.spikes[0].extra_senders >= 50

    lz = preset("layerzero")
    prof = _demand_profile(lz)
    assert (prof > 6).sum() * lz.params.slot_seconds >= 6 * 3600
    assert any(isinstance(s.priority_fee, Reactive) for s in lz.strategies)


def test_empirical_demand_matches_analytic():
    scenario = preset("blobscriptions", seed=1)
    txs = generate(scenario)
    spike = scenario.spikes[0]
    blobs = sum(t.num_blobs for t in txs if spike.start <= t.first_seen < spike.end)
    slots = spike.duration / scenario.params.slot_seconds
    assert blobs / slots > 6
