"""Shared fixtures and toy mechanisms for the test suite."""

import numpy as np
import pytest

from jointauction.core import (
    Advertiser,
    AuctionInstance,
    BidPair,
    Mechanism,
    OrganicItem,
    Outcome,
    SlotProfile,
    truthful_bids,
)

CTX = tuple(float(x) for x in range(12))


def make_ad(kind="store", store=0.5, brand=0.0, ue=0.2, ctx=CTX):
    return Advertiser(kind=kind, value=BidPair(store, brand), ue=ue, context=ctx)


def make_org(ue=0.7, ctx=CTX):
    return OrganicItem(ue=ue, context=ctx)


def make_instance(ads, orgs, ctrs=(0.5, 0.3, 0.2)):
    return AuctionInstance(SlotProfile(tuple(ctrs)), tuple(ads), tuple(orgs))


def random_instance(rng, m=None, n=None, k=2, kinds=None, ue_ad=(0.0, 0.5), ue_na=(0.5, 1.0)):
    """Random small instance in the synthetic-family style."""
    m = int(rng.integers(1, 5)) if m is None else m
    n = int(rng.integers(max(0, k - m), 5)) if n is None else n
    ctrs = tuple(sorted(rng.uniform(0.05, 0.95, size=k), reverse=True))
    ads = []
    for i in range(m):
        kind = kinds[i] if kinds else ("store", "brand", "joint")[int(rng.integers(3))]
        s = float(rng.uniform(0, 1)) if kind in ("store", "joint") else 0.0
        b = float(rng.uniform(0, 1)) if kind in ("brand", "joint") else 0.0
        ads.append(Advertiser(kind, BidPair(s, b), float(rng.uniform(*ue_ad)), CTX))
    orgs = [OrganicItem(float(rng.uniform(*ue_na)), CTX) for _ in range(n)]
    return AuctionInstance(SlotProfile(ctrs), tuple(ads), tuple(orgs))


class HalfPayMechanism(Mechanism):
    """Toy non-IC mechanism: the lone advertiser always takes the top slot and
    pays half its reported total bid (expected, CTR-weighted). The analytic
    best response is bidding zero."""

    name = "half_pay"

    def run(self, instance, bids=None):
        if bids is None:
            bids = truthful_bids(instance)
        k = instance.k
        hard = np.zeros((instance.n_items, k), dtype=np.int64)
        for slot in range(k):
            hard[slot, slot] = 1
        payments = np.zeros((instance.m, 2))
        alpha1 = instance.slots.ctrs[0]
        payments[0] = 0.5 * bids[0].as_array() * alpha1
        return Outcome(soft_alloc=hard.astype(float), payments=payments, hard_alloc=hard)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
