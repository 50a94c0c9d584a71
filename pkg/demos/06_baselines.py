"""Classical baselines side by side, plus a regret probe.

VCG maximizes bid welfare plus gamma-weighted user experience and charges
pivots (truthful by construction). GSP ranks ads into preset positions at
next-bid prices and is famously manipulable. The virtual-value mechanism
ranks by Myerson's phi plus the user-experience bonus and charges critical
bids.
"""

import numpy as np

from jointauction import GspConfig, GspFixedPositions, IasMechanism, VcgMechanism
from jointauction.core import regret_grid_oracle, Advertiser, AuctionInstance, BidPair, OrganicItem, SlotProfile

ctx = tuple(np.zeros(12))
instance = AuctionInstance(
    SlotProfile((0.5, 0.3)),
    (
        Advertiser("store", BidPair(0.95, 0.0), ue=0.05, context=ctx),
        Advertiser("store", BidPair(0.90, 0.0), ue=0.10, context=ctx),
        Advertiser("joint", BidPair(0.10, 0.05), ue=0.45, context=ctx),
    ),
    (OrganicItem(0.85, ctx), OrganicItem(0.60, ctx)),
)

for mech in (VcgMechanism(gamma=0.5),
             GspFixedPositions(GspConfig(ad_positions=(0, 1))),
             IasMechanism(gamma=0.5)):
    out = mech.run(instance)
    winners = [int(np.argmax(out.hard_alloc[:, k])) for k in range(instance.k)]
    print(f"{mech.name:4s} slots -> items {winners}, payments {np.round(out.payments.sum(1), 4)}")

# Ex-post regret by brute-force grid search over misreports.
print("\nper-advertiser grid regret (step 0.05):")
for mech in (VcgMechanism(gamma=0.5), GspFixedPositions(GspConfig(ad_positions=(0, 1)))):
    regrets = [regret_grid_oracle(mech, instance, i, grid_step=0.05) for i in range(instance.m)]
    print(f"  {mech.name:4s}: {np.round(regrets, 4)}")
print("VCG is truthful; GSP's top bidder prefers the cheaper second position.")
