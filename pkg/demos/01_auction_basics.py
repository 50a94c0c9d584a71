"""Auction model basics: pages, feasibility, utilities, platform metrics.

A page holds K CTR-ordered slots. Stores bid (v, 0), brands (0, v), and
joint store-brand advertisers bid (v_store, v_brand); organic items never
bid or pay but carry user experience.
"""

import numpy as np

from jointauction import (
    Advertiser,
    AuctionInstance,
    BidPair,
    OrganicItem,
    Outcome,
    SlotProfile,
    check_feasibility,
    evaluate_metrics,
    expected_ctr,
    utility,
)

ctx = tuple(np.linspace(0, 1, 12))
instance = AuctionInstance(
    slots=SlotProfile((0.5, 0.3, 0.2)),
    advertisers=(
        Advertiser("store", BidPair(0.8, 0.0), ue=0.30, context=ctx),
        Advertiser("brand", BidPair(0.0, 0.6), ue=0.10, context=ctx),
        Advertiser("joint", BidPair(0.4, 0.5), ue=0.25, context=ctx),
    ),
    organics=(OrganicItem(0.9, ctx), OrganicItem(0.7, ctx), OrganicItem(0.55, ctx)),
)
print(f"page: {instance.m} ads + {instance.n} organics on {instance.k} slots")

# A hard allocation assigns each slot exactly one item.
hard = np.zeros((6, 3), dtype=int)
hard[0, 0] = hard[3, 1] = hard[2, 2] = 1
ok, violations = check_feasibility(hard)
print("feasible:", ok, violations)

# Over-allocating a slot is caught with a named violation.
bad = hard.copy()
bad[1, 0] = 1
print("over-allocated:", check_feasibility(bad))

# Expected CTR is the allocation row dotted with the slot CTRs.
print("expected CTR of item 0:", expected_ctr(hard[0], instance.slots))

# Advertiser utility is componentwise value times expected CTR minus payment.
u = utility(BidPair(0.8, 0.0), hard[0], instance.slots, payment=(0.15, 0.0))
print("store utility:", round(u, 4))

outcome = Outcome(
    soft_alloc=hard.astype(float),
    payments=np.array([[0.15, 0.0], [0.0, 0.0], [0.05, 0.06]]),
    hard_alloc=hard,
)
metrics = evaluate_metrics([outcome], [instance], gamma=0.5)
print(f"SW={metrics.sw:.4f} Rev={metrics.rev:.4f} UE={metrics.ue:.4f} Score={metrics.score:.4f}")
