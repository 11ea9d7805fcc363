"""Export a simulated trace, then audit it as if it were observed chain data."""

# %%
import tempfile
from collections import Counter
from pathlib import Path

from blobmarket.demand import BuilderConfig, l2_senders, preset
from blobmarket.ingest import classify_trace, private_share
from blobmarket.simulator import export_run, run

sc = preset("blobscriptions", seed=3).with_overrides(
    horizon_slots=1500,
    strategies=l2_senders(subset_bidding=True),
    builders=(
        BuilderConfig("titan", "subset-optimal", 0.05, 0.4),
        BuilderConfig("beaver", "greedy", 0.05, 0.4),
        BuilderConfig("rsync", "optimal", 0.1, 0.2),
    ),
)
res = run(sc)
out = Path(tempfile.mkdtemp())
export_run(res, out)
print("exported", sorted(p.name for p in out.iterdir()))

# %%
report = classify_trace(out / "blocks.csv", out / "mempool.csv", sc.window, sc.params, out_dir=out / "audit")
print(Counter(str(a.verdict) for a in report.audits))
agree = sum(a.verdict == s.verdict for a, s in zip(report.audits, res.metrics.slots))
print(f"replayed verdicts agree with the simulator on {agree}/{len(report.audits)} slots")

# %%
by_builder = Counter()
for a, b in zip(report.audits, res.blocks):
    by_builder[b.builder, str(a.verdict)] += 1
for key in sorted(by_builder):
    print(key, by_builder[key])

# %%
for day in private_share(out / "blocks.csv", out / "mempool.csv"):
    print(day.day, f"{float(day.share):.3f} of blob txs never hit the public mempool", day.by_sender)
