import csv
import json
import subprocess
import sys

from blobmarket.cli import main
from blobmarket.demand import preset


def test_simulate_preset(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", "calm", "--seed", "3", "--slots", "120", "--out", str(out)]) == 0
    for name in ("slots.csv", "transactions.csv", "cumulative.csv", "summary.json", "blocks.csv", "mempool.csv"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["slots"] == 120 and summary["seed"] == 3
    rows = list(csv.DictReader(open(out / "slots.csv", newline="")))
    assert rows[0]["shadow_greedy_revenue_wei"] == ""


def test_simulate_scenario_file_with_shadow(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(preset("blobscriptions").with_overrides(horizon_slots=50).to_dict()))
    out = tmp_path / "run"
    assert main(["simulate", "--scenario", str(path), "--out", str(out), "--shadow-pricing"]) == 0
    rows = list(csv.DictReader(open(out / "slots.csv", newline="")))
    assert len(rows) == 50
    assert all(int(r["shadow_optimal_revenue_wei"]) >= int(r["shadow_greedy_revenue_wei"]) for r in rows)


def test_classify_and_private_share(tmp_path, capsys):
    run_dir = tmp_path / "run"
    main(["simulate", "--scenario", "calm", "--slots", "200", "--out", str(run_dir)])
    capsys.readouterr()
    out = tmp_path / "cls"
    code = main(
        [
            "classify",
            "--blocks", str(run_dir / "blocks.csv"),
            "--mempool", str(run_dir / "mempool.csv"),
            "--min-lead", "4",
            "--max-age", "120",
            "--out", str(out),
        ]
    )
    assert code == 0
    counts = json.loads(capsys.readouterr().out)
    assert sum(counts.values()) == 200
    slots = list(csv.DictReader(open(run_dir / "slots.csv", newline="")))
    cls = list(csv.DictReader(open(out / "classification.csv", newline="")))
    assert [r["verdict"] for r in slots] == [r["verdict"] for r in cls]

    assert main(["private-share", "--blocks", str(run_dir / "blocks.csv"), "--mempool", str(run_dir / "mempool.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "date,sender,blob_txs,private_txs,share"
    # only the privately submitting rollup shows up
    assert {line.split(",")[1] for line in lines[1:]} <= {"*", "taiko"}


def test_classify_with_params_file(tmp_path, capsys):
    run_dir = tmp_path / "run"
    main(["simulate", "--scenario", "calm", "--slots", "30", "--out", str(run_dir)])
    params = tmp_path / "p.json"
    params.write_text(json.dumps({"slot_seconds": 12}))
    assert main(
        ["classify", "--blocks", str(run_dir / "blocks.csv"), "--mempool", str(run_dir / "mempool.csv"),
         "--params", str(params), "--out", str(tmp_path / "o")]
    ) == 0


def test_missing_file_exit_code(tmp_path, capsys):
    code = main(["classify", "--blocks", str(tmp_path / "nope.csv"), "--mempool", str(tmp_path / "x.csv"), "--out", str(tmp_path)])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "blobmarket", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("simulate", "classify", "private-share"):
        assert cmd in proc.stdout
