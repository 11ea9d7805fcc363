"""How fast the blob base fee reacts to sustained full blocks."""

# %%
import numpy as np

from blobmarket.demand import preset
from blobmarket.fees import DEFAULT_PARAMS, blob_base_fee
from blobmarket.simulator import run

p = DEFAULT_PARAMS
step = p.max_blob_gas - p.target_blob_gas

# %%
# every full block adds 3 blobs' worth of excess, so the fee climbs by ~12.5%
excess = np.arange(0, 301) * step
fees = [blob_base_fee(int(e)) for e in excess]
for n in (0, 20, 40, 100, 200, 300):
    print(f"{n:4d} full blocks -> {fees[n]:.3e} wei")

# %%
# a bursty demand preset: the fee starts at 1 wei and needs hours to find a price
res = run(preset("layerzero"))
slots = res.metrics.slots
blob_fee = np.array([s.blob_base_fee for s in slots], dtype=float)
blobs = np.array([s.blobs for s in slots])
hit = int(np.argmax(blob_fee >= 1e15))
print(f"1e15 wei first reached at slot {slots[hit].slot} ({slots[hit].timestamp / 3600:.2f} h)")
print(f"saturated slots before that: {(blobs[:hit] == p.max_blobs_per_block).sum()}")
print(f"peak fee {blob_fee.max():.3e} wei, mean blobs/block {blobs.mean():.2f}")
