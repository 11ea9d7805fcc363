"""Greedy versus optimal blob packing on a three-candidate block."""

# %%
from blobmarket.packing import PackingProblem, greedy_pack, optimal_pack, relative_fee_loss
from blobmarket.transactions import BuilderRevenueView

# builder-side views: (tx, blobs, gas, tip revenue)
problem = PackingProblem(
    (
        BuilderRevenueView("big", 5, 1, 200),
        BuilderRevenueView("mid1", 3, 1, 199),
        BuilderRevenueView("mid2", 3, 1, 199),
    )
)

# %%
greedy = greedy_pack(problem)
best = optimal_pack(problem)
print("greedy :", [v.tx_id for v in greedy.chosen], greedy.total_revenue)
print("optimal:", [v.tx_id for v in best.chosen], best.total_revenue)

# %%
# greedy takes the single most valuable tx and strands one blob slot
loss = relative_fee_loss(greedy.total_revenue, best.total_revenue)
print(f"relative loss {float(loss):.6f}")
