import csv
import datetime as dt
import filecmp
from fractions import Fraction

import pytest

from blobmarket.demand import BuilderConfig, l2_senders, preset
from blobmarket.ingest import (
    BLOCK_CSV_FIELDS,
    CLASSIFICATION_CSV_FIELDS,
    MALFORMED,
    BlockRecord,
    IncludedTx,
    classify_trace,
    private_share,
    private_share_records,
    read_blocks_csv,
    write_blocks_csv,
    write_private_share_csv,
)
from blobmarket.mempool import EligibilityWindow
from blobmarket.packing import Verdict
from blobmarket.simulator import export_run, run
from blobmarket.transactions import BlobTx, write_transactions_csv

DAY = 86_400


def block(n, included=(), t=None, base=1, excess=0, builder="b", pbs=None):
    ts = 12 * n if t is None else t
    gas = 10_000_000 + sum(x.gas_usage for x in included)
    return BlockRecord(n, ts, gas, 30_000_000, base, excess, builder, pbs, tuple(included))


def mtx(id, blobs, prio, seen, sender="s"):
    return BlobTx(id, sender, blobs, 21000, prio, 10**12, 10**12, seen)


def inc(t):
    return IncludedTx(t.id, t.num_blobs, t.gas_usage, t.priority_fee_per_gas, t.sender)


def write_trace(tmp_path, blocks, pool):
    write_blocks_csv(tmp_path / "blocks.csv", blocks)
    write_transactions_csv(tmp_path / "mempool.csv", pool)
    return tmp_path / "blocks.csv", tmp_path / "mempool.csv"


def test_example_embedded_in_trace(tmp_path):
    big, m1, m2 = mtx("big", 5, 200, 10.0), mtx("m1", 3, 199, 10.0), mtx("m2", 3, 199, 10.0)
    blocks = [block(1), block(2, [inc(big)]), block(3, [inc(m1), inc(m2)])]
    bf, mf = write_trace(tmp_path, blocks, [big, m1, m2])
    report = classify_trace(bf, mf, out_dir=tmp_path / "out")
    verdicts = [a.verdict for a in report.audits]
    assert verdicts == [Verdict.NO_BLOBS, Verdict.SUBOPTIMAL, Verdict.UNKNOWN]
    assert abs(float(report.audits[1].classification.relative_loss) - 0.497487) < 1e-6
    with open(tmp_path / "out" / "classification.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == CLASSIFICATION_CSV_FIELDS
    assert rows[1]["verdict"] == "Suboptimal"
    assert rows[1]["relative_loss"].startswith("0.497487")
    assert rows[0]["relative_loss"] == ""
    # blob-less blocks do not count towards rates
    assert report.summary["verdicts"]["rated_blocks"] == 2


def test_unique_eligible_tx_per_block(tmp_path):
    pool = [mtx(f"t{n}", 2, 5, 12 * n - 6) for n in range(1, 20)]
    blocks = [block(n, [inc(pool[n - 1])]) for n in range(1, 20)]
    bf, mf = write_trace(tmp_path, blocks, pool)
    report = classify_trace(bf, mf)
    assert {a.verdict for a in report.audits} <= {Verdict.UNKNOWN, Verdict.OPTIMAL}
    assert all(a.classification.relative_loss == 0 for a in report.audits)


def test_empty_mempool_all_unknown(tmp_path):
    txs = [mtx(f"t{n}", 3, 5, 0.0) for n in range(5)]
    blocks = [block(n + 1, [inc(txs[n])]) for n in range(5)]
    bf, mf = write_trace(tmp_path, blocks, [])
    report = classify_trace(bf, mf)
    assert all(a.verdict is Verdict.UNKNOWN for a in report.audits)
    assert report.unresolved == 5


def test_window_boundaries_in_replay(tmp_path):
    # block 10 is expected at 12 * 9 + 12 = 120 s; tx first seen exactly 4 s and 120 s earlier
    early = mtx("early", 3, 9, 0.0)
    late = mtx("late", 3, 9, 116.0)
    decoy = mtx("decoy", 1, 1, 116.001)
    blocks = [block(n) for n in range(1, 10)] + [block(10, [inc(decoy)]), block(11, [inc(early), inc(late)])]
    bf, mf = write_trace(tmp_path, blocks, [early, late, decoy])
    report = classify_trace(bf, mf)
    assert report.audits[9].classification.optimal_revenue == 2 * 9 * 21000
    narrow = classify_trace(bf, mf, EligibilityWindow(min_lead=5, max_age=119))
    assert narrow.audits[9].classification.optimal_revenue == 1 * 21000


def test_never_included_txs_are_not_candidates(tmp_path):
    lone = mtx("lone", 6, 10**6, 0.0)
    small = mtx("small", 1, 1, 0.0)
    blocks = [block(1), block(2, [inc(small)])]
    bf, mf = write_trace(tmp_path, blocks, [lone, small])
    assert classify_trace(bf, mf).audits[1].verdict is Verdict.UNKNOWN


def test_malformed_rows_are_reported_not_fatal(tmp_path):
    good = mtx("g", 1, 5, 0.0)
    bf, mf = write_trace(tmp_path, [block(1, [inc(good)]), block(2, [inc(good)])], [good])
    rows = list(csv.DictReader(open(bf, newline="")))
    rows[1]["num_blobs"] = "nine"
    rows.append(dict(rows[0], block_number="oops"))
    with open(bf, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BLOCK_CSV_FIELDS)
        w.writeheader()
        w.writerows(rows)
    parsed = read_blocks_csv(bf)
    assert [i.line for i in parsed.issues] == [3, 4]
    assert parsed.malformed == {2}
    report = classify_trace(bf, mf)
    assert [a.verdict for a in report.audits] == [Verdict.UNKNOWN, MALFORMED]
    assert report.summary["malformed_blocks"] == 1
    assert len(report.summary["issues"]) == 2


def test_block_csv_roundtrip(tmp_path):
    blocks = [
        block(1),
        block(2, [IncludedTx("a", 2, 30000, 7, "x"), IncludedTx("g", 3, 21000, 4, "y", "3b")], pbs=True),
    ]
    write_blocks_csv(tmp_path / "b.csv", blocks)
    parsed = read_blocks_csv(tmp_path / "b.csv")
    assert parsed.issues == []
    assert parsed.blocks == blocks


def test_replay_is_deterministic(tmp_path):
    res = run(preset("calm", seed=3).with_overrides(horizon_slots=200))
    export_run(res, tmp_path / "run")
    classify_trace(tmp_path / "run/blocks.csv", tmp_path / "run/mempool.csv", out_dir=tmp_path / "a")
    classify_trace(tmp_path / "run/blocks.csv", tmp_path / "run/mempool.csv", out_dir=tmp_path / "b")
    for name in ("classification.csv", "delays.csv", "summary.json"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)


@pytest.mark.parametrize("seed", [0, 1])
def test_roundtrip_matches_simulator(tmp_path, seed):
    sc = preset("blobscriptions", seed=seed).with_overrides(
        horizon_slots=500,
        strategies=l2_senders(subset_bidding=True),
        builders=(
            BuilderConfig("titan", "subset-optimal", 0.1, 0.4),
            BuilderConfig("g", "greedy", 0.1, 0.4),
            BuilderConfig("o", "optimal", 0.0, 0.2),
        ),
    )
    res = run(sc)
    export_run(res, tmp_path)
    report = classify_trace(tmp_path / "blocks.csv", tmp_path / "mempool.csv", sc.window, sc.params)
    assert [a.verdict for a in report.audits] == [s.verdict for s in res.metrics.slots]
    assert [a.classification.relative_loss for a in report.audits] == [s.relative_loss for s in res.metrics.slots]


def test_private_share_all_public():
    txs = [mtx(f"t{i}", 1, 1, 0.0) for i in range(4)]
    blocks = [block(1, [inc(txs[0]), inc(txs[1])]), block(2, [inc(txs[2]), inc(txs[3])])]
    series = private_share_records(blocks, {t.id for t in txs})
    assert [s.share for s in series] == [0]


def test_private_share_one_hidden_sender():
    pub = [mtx(f"p{i}", 1, 1, 0.0, sender="scroll") for i in range(3)]
    hid = [mtx(f"h{i}", 1, 1, 0.0, sender="taiko") for i in range(5)]
    blocks = [
        block(1, [inc(pub[0]), inc(hid[0]), inc(hid[1])], t=100),
        block(2, [inc(pub[1]), inc(hid[2])], t=DAY + 100),
        block(3, [inc(pub[2]), inc(hid[3]), inc(hid[4])], t=DAY + 112),
    ]
    series = private_share_records(blocks, {t.id for t in pub})
    assert [s.day for s in series] == [dt.date(1970, 1, 1), dt.date(1970, 1, 2)]
    assert series[0].share == Fraction(2, 3)
    assert series[1].share == Fraction(3, 5)
    assert series[1].by_sender == {"taiko": 3}
    filtered = private_share_records(blocks, {t.id for t in pub}, senders=["scroll"])
    assert filtered[1].by_sender == {}
    assert filtered[1].private_txs == 3


def test_private_share_empty_blocks(tmp_path):
    write_blocks_csv(tmp_path / "b.csv", [])
    write_transactions_csv(tmp_path / "m.csv", [])
    assert private_share(tmp_path / "b.csv", tmp_path / "m.csv") == []


def test_private_share_csv(tmp_path):
    hid = mtx("h", 1, 1, 0.0, sender="taiko")
    pub = mtx("p", 1, 1, 0.0, sender="base")
    series = private_share_records([block(1, [inc(hid), inc(pub)])], {"p"})
    write_private_share_csv(tmp_path / "s.csv", series)
    rows = list(csv.reader(open(tmp_path / "s.csv", newline="")))
    assert rows == [
        ["date", "sender", "blob_txs", "private_txs", "share"],
        ["1970-01-01", "*", "2", "1", "0.500000"],
        ["1970-01-01", "taiko", "2", "1", "0.500000"],
    ]
