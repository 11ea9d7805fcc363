"""A large rollup batch crowded out by a small high bidder, with and without subset bids."""

# %%
from blobmarket.demand import BuilderConfig, Scenario
from blobmarket.simulator import run
from blobmarket.transactions import BlobTx, SubsetBidOption


def scenario(subset):
    txs = []
    for n in range(1, 31):
        seen = 12 * n - 8
        if subset:
            # pay 1 wei/gas per blob for any prefix of the batch
            opts = [SubsetBidOption(f"{k}b", k, 21000, k) for k in range(6, 0, -1)]
            txs.append(BlobTx.with_options(f"batch{n}", "rollup", opts, 10**12, 10**18, seen))
        else:
            txs.append(BlobTx(f"batch{n}", "rollup", 6, 21000, 6, 10**12, 10**18, seen))
        txs.append(BlobTx(f"hot{n}", "user", 1, 21000, 7, 10**12, 10**18, seen))
    return Scenario(
        seed=0,
        horizon_slots=30,
        builders=(BuilderConfig("b", "subset-optimal"),),
        transactions=tuple(txs),
        initial_base_fee=1,
    )


# %%
for subset in (False, True):
    slots = run(scenario(subset)).metrics.slots[1:]
    blobs = sum(s.blobs for s in slots) / len(slots)
    tips = sum(s.fees.exec_priority_to_builder for s in slots) / len(slots)
    print(f"subset bids={subset!s:5}  blobs/block {blobs:.1f}  builder tips/slot {tips:,.0f} wei")
