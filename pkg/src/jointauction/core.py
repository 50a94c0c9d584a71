"""Auction model primitives.

Defines the data model for multi-slot hybrid auctions in which store, brand,
and joint advertisers compete with organic items for a page of CTR-ordered
slots, plus the contract every mechanism in this package implements and the
metrics / regret tooling used to evaluate them.

Conventions:
  * An item list always holds the ``m`` advertisers first, then the ``n``
    organic items (``N = m + n`` rows total).
  * Allocations are ``(N, K)`` matrices; ``soft`` entries live in ``[0, 1]``
    with row sums <= 1 and column sums <= 1 (doubly substochastic), ``hard``
    entries are binary with column sums exactly 1.
  * Payments are per-advertiser pairs ``(store_component, brand_component)``
    of expected (already CTR-weighted) monetary amounts.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, DomainError

# Advertiser kinds. A store bids (v, 0), a brand (0, v), a joint advertiser
# (a virtual bidder for a store-brand selling relationship) bids (v_s, v_b).
STORE = "store"
BRAND = "brand"
JOINT = "joint"
ADVERTISER_KINDS = (STORE, BRAND, JOINT)

#: Absolute tolerance on soft allocation row/column sums (finite-precision softmax).
FEASIBILITY_TOL = 1e-6


@dataclass(frozen=True)
class SlotProfile:
    """Ordered click-through rates of the ad slots, best slot first."""

    ctrs: tuple[float, ...]

    def __post_init__(self):
        ctrs = tuple(float(c) for c in self.ctrs)
        object.__setattr__(self, "ctrs", ctrs)
        if len(ctrs) < 1:
            raise DomainError("slot profile needs at least one slot")
        if not all(np.isfinite(ctrs)):
            raise DomainError("slot CTRs must be finite")
        if ctrs[0] >= 1.0 or ctrs[-1] < 0.0:
            raise DomainError(f"slot CTRs must satisfy 1 > ctr_1 and ctr_K >= 0, got {ctrs}")
        if any(a < b for a, b in zip(ctrs, ctrs[1:])):
            raise DomainError(f"slot CTRs must be non-increasing, got {ctrs}")

    @property
    def k(self) -> int:
        return len(self.ctrs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.ctrs, dtype=float)


@dataclass(frozen=True)
class BidPair:
    """A (store_component, brand_component) bid or value pair, per click."""

    store: float
    brand: float

    def __post_init__(self):
        if not (np.isfinite(self.store) and np.isfinite(self.brand)):
            raise DomainError("bid components must be finite")
        if self.store < 0 or self.brand < 0:
            raise DomainError("bid components must be nonnegative")

    @property
    def total(self) -> float:
        return self.store + self.brand

    def as_array(self) -> np.ndarray:
        return np.array([self.store, self.brand], dtype=float)


def validate_pair_shape(kind: str, pair: BidPair) -> None:
    """Check that a bid pair matches the structural shape of its advertiser kind."""
    if kind == STORE and pair.brand != 0.0:
        raise DomainError("store advertisers must have a zero brand component")
    if kind == BRAND and pair.store != 0.0:
        raise DomainError("brand advertisers must have a zero store component")


@dataclass(frozen=True)
class Advertiser:
    """An auction participant with a private per-click value pair."""

    kind: str
    value: BidPair
    ue: float
    context: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ADVERTISER_KINDS:
            raise DomainError(f"unknown advertiser kind {self.kind!r}")
        validate_pair_shape(self.kind, self.value)
        if not np.isfinite(self.ue):
            raise DomainError("advertiser ue must be finite")
        object.__setattr__(self, "context", tuple(float(x) for x in self.context))


@dataclass(frozen=True)
class OrganicItem:
    """A recommendation item: never pays, never misreports, implicit bid (0, 0)."""

    ue: float
    context: tuple[float, ...] = ()

    def __post_init__(self):
        if not np.isfinite(self.ue):
            raise DomainError("organic ue must be finite")
        object.__setattr__(self, "context", tuple(float(x) for x in self.context))


@dataclass(frozen=True)
class AuctionInstance:
    """One auction sample: slots, advertisers, and organic items."""

    slots: SlotProfile
    advertisers: tuple[Advertiser, ...]
    organics: tuple[OrganicItem, ...]

    def __post_init__(self):
        object.__setattr__(self, "advertisers", tuple(self.advertisers))
        object.__setattr__(self, "organics", tuple(self.organics))
        if self.m + self.n < self.k:
            raise DomainError(
                f"instance has {self.m + self.n} items for {self.k} slots; every slot must be fillable"
            )
        dims = {len(a.context) for a in self.advertisers} | {len(o.context) for o in self.organics}
        if len(dims) > 1:
            raise DimensionError(f"inconsistent context dimensions {sorted(dims)}")

    @property
    def m(self) -> int:
        return len(self.advertisers)

    @property
    def n(self) -> int:
        return len(self.organics)

    @property
    def k(self) -> int:
        return self.slots.k

    @property
    def n_items(self) -> int:
        return self.m + self.n

    def value_pairs(self) -> np.ndarray:
        """(m, 2) array of truthful value pairs."""
        return np.array([a.value.as_array() for a in self.advertisers], dtype=float).reshape(self.m, 2)

    def ue_profile(self) -> np.ndarray:
        """(m + n,) user experience values, advertisers first."""
        return np.array([a.ue for a in self.advertisers] + [o.ue for o in self.organics], dtype=float)

    def context_matrix(self) -> np.ndarray:
        """(m + n, d_c) context rows, advertisers first."""
        rows = [a.context for a in self.advertisers] + [o.context for o in self.organics]
        return np.array(rows, dtype=float).reshape(self.n_items, -1)


@dataclass
class Outcome:
    """Allocation and payments produced by a mechanism for one instance.

    ``soft_alloc`` is the mechanism of record; deterministic mechanisms store
    their binary assignment in both ``soft_alloc`` and ``hard_alloc``.
    """

    soft_alloc: np.ndarray
    payments: np.ndarray
    hard_alloc: np.ndarray | None = None

    def __post_init__(self):
        self.soft_alloc = np.asarray(self.soft_alloc, dtype=float)
        self.payments = np.asarray(self.payments, dtype=float).reshape(-1, 2)
        if self.soft_alloc.ndim != 2:
            raise DimensionError("soft_alloc must be a (items, slots) matrix")
        a = self.soft_alloc
        if a.min(initial=0.0) < -FEASIBILITY_TOL or a.max(initial=0.0) > 1.0 + FEASIBILITY_TOL:
            raise DomainError("soft allocation entries must lie in [0, 1]")
        if a.shape[0] and (a.sum(axis=1).max() > 1.0 + FEASIBILITY_TOL or a.sum(axis=0).max() > 1.0 + FEASIBILITY_TOL):
            raise DomainError("soft allocation must be doubly substochastic")
        if self.payments.size and self.payments.min() < -1e-12:
            raise DomainError("payments must be nonnegative")
        if self.hard_alloc is not None:
            self.hard_alloc = np.asarray(self.hard_alloc)
            ok, violations = check_feasibility(self.hard_alloc)
            if not ok:
                raise DomainError(f"hard allocation infeasible: {violations}")

    def expected_ctrs(self, slots: SlotProfile) -> np.ndarray:
        """Per-item expected CTR under the soft allocation."""
        if self.soft_alloc.shape[1] != slots.k:
            raise DimensionError(
                f"allocation has {self.soft_alloc.shape[1]} slots, profile has {slots.k}"
            )
        return self.soft_alloc @ slots.as_array()


def expected_ctr(alloc_row: Sequence[float], slots: SlotProfile) -> float:
    """Expected CTR of one item: sum_k alloc_row[k] * ctr_k."""
    row = np.asarray(alloc_row, dtype=float)
    if row.shape != (slots.k,):
        raise DimensionError(f"allocation row has length {row.shape}, expected ({slots.k},)")
    return float(row @ slots.as_array())


def check_feasibility(hard_alloc: np.ndarray) -> tuple[bool, list[str]]:
    """Validate a binary assignment: rows sum <= 1, every column sums to exactly 1.

    Returns (ok, violations); raises DomainError on non-binary entries.
    """
    a = np.asarray(hard_alloc)
    if a.ndim != 2:
        raise DimensionError("hard allocation must be a (items, slots) matrix")
    if not np.isin(a, (0, 1)).all():
        raise DomainError("hard allocation entries must be 0 or 1")
    violations = []
    row_sums = a.sum(axis=1)
    col_sums = a.sum(axis=0)
    for i in np.nonzero(row_sums > 1)[0]:
        violations.append(f"row {i} sum {int(row_sums[i])}")
    for k in np.nonzero(col_sums != 1)[0]:
        violations.append(f"column {k} sum {int(col_sums[k])}")
    return not violations, violations


def utility(
    advertiser_value: BidPair | Sequence[float],
    alloc_row: Sequence[float],
    slots: SlotProfile,
    payment: Sequence[float],
) -> float:
    """Quasi-linear advertiser utility, summed over the two bid components.

    u = sum_j (value_j * expected_ctr - payment_j).
    """
    value = advertiser_value.as_array() if isinstance(advertiser_value, BidPair) else np.asarray(advertiser_value, dtype=float)
    pay = np.asarray(payment, dtype=float)
    if value.shape != (2,) or pay.shape != (2,):
        raise DimensionError("value and payment must both be pairs")
    if pay.min() < 0:
        raise DomainError("payment components must be nonnegative")
    a_i = expected_ctr(alloc_row, slots)
    return float(value.sum() * a_i - pay.sum())


def outcome_utilities(instance: AuctionInstance, outcome: Outcome, values: np.ndarray | None = None) -> np.ndarray:
    """(m,) utilities of all advertisers at their true values under an outcome."""
    if values is None:
        values = instance.value_pairs()
    ctr = outcome.expected_ctrs(instance.slots)[: instance.m]
    return values.sum(axis=1) * ctr - outcome.payments.sum(axis=1)


@dataclass(frozen=True)
class Metrics:
    """Batch-mean platform metrics."""

    sw: float
    rev: float
    ue: float
    score: float


def sample_metrics(outcomes: Sequence[Outcome], instances: Sequence[AuctionInstance]) -> dict[str, np.ndarray]:
    """Per-sample social welfare, revenue, and user experience arrays."""
    if len(outcomes) != len(instances):
        raise DimensionError("outcomes and instances must align")
    if not outcomes:
        raise DomainError("empty batch")
    sw = np.empty(len(outcomes))
    rev = np.empty(len(outcomes))
    ue = np.empty(len(outcomes))
    for idx, (out, inst) in enumerate(zip(outcomes, instances)):
        ctr = out.expected_ctrs(inst.slots)
        sw[idx] = float(inst.value_pairs().sum(axis=1) @ ctr[: inst.m]) if inst.m else 0.0
        rev[idx] = float(out.payments.sum())
        ue[idx] = float(inst.ue_profile() @ ctr)
    return {"sw": sw, "rev": rev, "ue": ue}


def evaluate_metrics(
    outcomes: Sequence[Outcome], instances: Sequence[AuctionInstance], gamma: float
) -> Metrics:
    """Mean SW / Rev / UE over a batch, and Score = Rev + gamma * UE."""
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    per = sample_metrics(outcomes, instances)
    rev = float(per["rev"].mean())
    ue = float(per["ue"].mean())
    return Metrics(sw=float(per["sw"].mean()), rev=rev, ue=ue, score=rev + gamma * ue)


@dataclass
class RegretReport:
    """Ex-post regret estimates for a mechanism over a dataset.

    ``per_advertiser`` holds, per advertiser index, the mean regret over the
    samples where that index was present; ``mean``/``max`` aggregate over all
    (sample, advertiser) estimates.
    """

    method: str
    per_advertiser: np.ndarray
    mean: float
    max: float
    n_samples: int = 0
    details: dict = field(default_factory=dict)


class Mechanism(ABC):
    """Abstract auction mechanism: bid profiles in, Outcome out."""

    name: str = "mechanism"

    @abstractmethod
    def run(self, instance: AuctionInstance, bids: Sequence[BidPair] | None = None) -> Outcome:
        """Run the auction on one instance. ``bids`` defaults to truthful values."""

    def evaluate_bid_profiles(
        self, instance: AuctionInstance, profiles: Sequence[Sequence[BidPair]]
    ) -> list[Outcome]:
        """Run the mechanism for several bid profiles on the same instance.

        Subclasses with a batched fast path may override this.
        """
        return [self.run(instance, bids) for bids in profiles]


def truthful_bids(instance: AuctionInstance) -> list[BidPair]:
    return [a.value for a in instance.advertisers]


def misreport_grid(kind: str, grid_step: float, value_domain: tuple[float, float]) -> np.ndarray:
    """(G, 2) grid of candidate misreports respecting the advertiser's type shape."""
    lo, hi = value_domain
    if grid_step <= 0:
        raise DomainError("grid_step must be positive")
    n = int(round((hi - lo) / grid_step))
    axis = np.linspace(lo, hi, n + 1)
    if kind == STORE:
        return np.stack([axis, np.zeros_like(axis)], axis=1)
    if kind == BRAND:
        return np.stack([np.zeros_like(axis), axis], axis=1)
    s, b = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([s.ravel(), b.ravel()], axis=1)


def regret_grid_oracle(
    mechanism: Mechanism,
    instance: AuctionInstance,
    advertiser: int,
    grid_step: float,
    value_domain: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Brute-force ex-post regret of one advertiser over a misreport grid.

    Evaluates every type-shape-consistent misreport on a regular grid spanning
    the value domain, holding the other bids truthful, and returns the best
    utility gain over truthful bidding, clamped at zero.
    """
    if not 0 <= advertiser < instance.m:
        raise DomainError(f"advertiser index {advertiser} out of range")
    adv = instance.advertisers[advertiser]
    base = truthful_bids(instance)
    truthful_outcome = mechanism.run(instance, base)
    u_truth = _advertiser_utility(instance, truthful_outcome, advertiser)

    grid = misreport_grid(adv.kind, grid_step, value_domain)
    profiles = []
    for cand in grid:
        bids = list(base)
        bids[advertiser] = BidPair(float(cand[0]), float(cand[1]))
        profiles.append(bids)
    outcomes = mechanism.evaluate_bid_profiles(instance, profiles)
    best = max(_advertiser_utility(instance, out, advertiser) for out in outcomes)
    return max(0.0, best - u_truth)


def _advertiser_utility(instance: AuctionInstance, outcome: Outcome, i: int) -> float:
    value = instance.advertisers[i].value.as_array()
    ctr = float(outcome.soft_alloc[i] @ instance.slots.as_array())
    return float(value.sum() * ctr - outcome.payments[i].sum())
