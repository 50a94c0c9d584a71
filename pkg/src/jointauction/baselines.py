"""Classical reference mechanisms.

All three emit hard, feasible outcomes through the shared mechanism
contract:

  * ``VcgMechanism`` maximizes bid welfare plus gamma-weighted user
    experience over all items and charges Clarke-style pivots. The exclusion
    problem zeroes the advertiser's bid while keeping the item eligible for
    display on its user-experience merit, which keeps pivots nonnegative and
    the mechanism exactly DSIC; the user-experience term is platform-internal
    and never charged to organics.
  * ``GspFixedPositions`` ranks ads by total bid into preset slots at
    next-bid per-click prices, fills the rest with organics by user
    experience. Deliberately not incentive compatible.
  * ``IasMechanism`` ranks every item by virtual value plus gamma-weighted
    user experience and charges winning ads their critical bid, obtained by
    inverting the virtual value function.

Joint bid pairs are scalarized by their total for ranking in GSP/IAS; all
payments split across components proportionally to the bid components.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

from .core import (
    AuctionInstance,
    BidPair,
    Mechanism,
    Outcome,
    truthful_bids,
)
from .datagen import DistributionSpec, TruncatedLognormalMixture, TruncatedNormal, Uniform
from .errors import ConfigError, DomainError, NumericError


def _split_payment(total: float, bid: BidPair) -> np.ndarray:
    """Split a total payment across components in proportion to the bid pair."""
    if total <= 0:
        return np.zeros(2)
    denom = bid.total
    if denom <= 0:
        return np.array([total / 2.0, total / 2.0])
    return total * bid.as_array() / denom


# ---------------------------------------------------------------------------
# Priors and virtual values
# ---------------------------------------------------------------------------


class ValuePrior(ABC):
    """A value distribution with evaluable cdf/pdf on its support."""

    lo: float
    hi: float

    @abstractmethod
    def cdf(self, v: float) -> float: ...

    @abstractmethod
    def pdf(self, v: float) -> float: ...


class UniformPrior(ValuePrior):
    def __init__(self, lo: float = 0.0, hi: float = 1.0):
        if not lo < hi:
            raise ConfigError("uniform prior needs lo < hi")
        self.lo, self.hi = lo, hi

    def cdf(self, v):
        return np.clip((v - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def pdf(self, v):
        inside = (v >= self.lo) & (v <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)


class TruncatedNormalPrior(ValuePrior):
    def __init__(self, mean: float = 0.5, sd: float = 0.5, lo: float = 0.0, hi: float = 1.0):
        if sd <= 0 or not lo < hi:
            raise ConfigError("truncated normal prior needs sd > 0 and lo < hi")
        self.mean, self.sd, self.lo, self.hi = mean, sd, lo, hi
        self._za = ndtr((lo - mean) / sd)
        self._zb = ndtr((hi - mean) / sd)

    def cdf(self, v):
        z = ndtr((np.asarray(v) - self.mean) / self.sd)
        return np.clip((z - self._za) / (self._zb - self._za), 0.0, 1.0)

    def pdf(self, v):
        v = np.asarray(v)
        x = (v - self.mean) / self.sd
        dens = np.exp(-0.5 * x * x) / (self.sd * np.sqrt(2.0 * np.pi))
        inside = (v >= self.lo) & (v <= self.hi)
        return np.where(inside, dens / (self._zb - self._za), 0.0)


class UniformSumPrior(ValuePrior):
    """Sum of two independent U[0, c] draws (triangular on [0, 2c]);
    the natural prior for a joint advertiser's total bid under uniform
    component bids."""

    def __init__(self, component_hi: float = 1.0):
        if component_hi <= 0:
            raise ConfigError("component_hi must be positive")
        self.c = component_hi
        self.lo, self.hi = 0.0, 2.0 * component_hi

    def cdf(self, v):
        t = np.clip(np.asarray(v) / self.c, 0.0, 2.0)
        left = 0.5 * t * t
        right = 1.0 - 0.5 * (2.0 - t) ** 2
        return np.where(t <= 1.0, left, right)

    def pdf(self, v):
        t = np.asarray(v) / self.c
        dens = np.where(t <= 1.0, t, 2.0 - t) / self.c
        inside = (t >= 0) & (t <= 2.0)
        return np.where(inside, np.maximum(dens, 0.0), 0.0)


class LognormalMixturePrior(ValuePrior):
    """Uniform lognormal mixture truncated to [lo, hi]."""

    def __init__(self, components=((0.3, 0.2), (0.5, 0.3), (0.7, 0.4), (0.9, 0.5)),
                 lo: float = 0.0, hi: float = 1.0):
        if not lo < hi:
            raise ConfigError("mixture prior needs lo < hi")
        self.components = tuple((float(m), float(s)) for m, s in components)
        self.lo, self.hi = lo, hi
        self._mass = np.mean([self._comp_cdf(hi, m, s) - self._comp_cdf(lo, m, s)
                              for m, s in self.components])

    @staticmethod
    def _comp_cdf(v, mu, sigma):
        if v <= 0:
            return 0.0
        return float(ndtr((np.log(v) - mu) / sigma))

    @staticmethod
    def _comp_pdf(v, mu, sigma):
        if v <= 0:
            return 0.0
        z = (np.log(v) - mu) / sigma
        return float(np.exp(-0.5 * z * z) / (v * sigma * np.sqrt(2.0 * np.pi)))

    def cdf(self, v):
        v = float(np.clip(v, self.lo, self.hi))
        raw = np.mean([self._comp_cdf(v, m, s) - self._comp_cdf(self.lo, m, s) for m, s in self.components])
        return raw / self._mass

    def pdf(self, v):
        if v < self.lo or v > self.hi:
            return 0.0
        return float(np.mean([self._comp_pdf(v, m, s) for m, s in self.components]) / self._mass)


def prior_from_distribution(dist: DistributionSpec) -> ValuePrior:
    if isinstance(dist, Uniform):
        return UniformPrior(dist.lo, dist.hi)
    if isinstance(dist, TruncatedNormal):
        return TruncatedNormalPrior(dist.mean, dist.sd, dist.lo, dist.hi)
    if isinstance(dist, TruncatedLognormalMixture):
        return LognormalMixturePrior(dist.components, dist.lo, dist.hi)
    raise ConfigError(f"no prior for distribution {type(dist).__name__}")


def fit_lognormal_prior(samples: np.ndarray, lo: float, hi: float) -> LognormalMixturePrior:
    """Fit a single truncated lognormal by moment-matched MLE on log values."""
    samples = np.asarray(samples, dtype=float)
    samples = samples[(samples > 0) & np.isfinite(samples)]
    if samples.size < 2:
        raise DomainError("need at least two positive samples to fit a prior")
    logs = np.log(samples)
    mu = float(logs.mean())
    sigma = float(max(logs.std(ddof=1), 1e-3))
    return LognormalMixturePrior(((mu, sigma),), lo, hi)


def myerson_virtual_value(v: float, prior: ValuePrior) -> float:
    """phi(v) = v - (1 - F(v)) / f(v)."""
    f = float(prior.pdf(v))
    if f <= 0:
        raise DomainError(f"prior density is zero at v={v}")
    return float(v - (1.0 - float(prior.cdf(v))) / f)


def invert_virtual_score(prior: ValuePrior, target: float, hi_cap: float, tol: float = 1e-9) -> float:
    """Smallest v in [lo, hi_cap] with phi(v) >= target, by scan plus bisection."""
    lo = prior.lo
    hi = min(prior.hi, hi_cap)
    eps = 1e-12 * max(1.0, abs(prior.hi - prior.lo))
    if hi <= lo + eps:
        return lo

    def phi(v):
        # Evaluate strictly inside the support; densities may vanish at the ends.
        return myerson_virtual_value(min(max(v, lo + eps), hi - eps), prior)

    if phi(lo + eps) >= target:
        return lo
    if phi(hi) < target:
        # Winners at exact score ties can land a hair below after clipping.
        if phi(hi) >= target - 1e-9:
            return float(hi)
        raise NumericError(
            f"virtual value never reaches {target:.6g} on [{lo:.6g}, {hi:.6g}]"
        )
    grid = np.linspace(lo + eps, hi, 257)
    vals = np.array([phi(v) for v in grid])
    above = np.nonzero(vals >= target)[0]
    j = int(above[0])
    a, b = grid[j - 1], grid[j]
    while b - a > tol:
        mid = 0.5 * (a + b)
        if phi(mid) >= target:
            b = mid
        else:
            a = mid
    return float(b)


# ---------------------------------------------------------------------------
# VCG
# ---------------------------------------------------------------------------


class VcgMechanism(Mechanism):
    """Welfare-maximizing auction over the hybrid list with pivot payments."""

    name = "vcg"

    def __init__(self, gamma: float = 0.5):
        if gamma < 0:
            raise DomainError("gamma must be nonnegative")
        self.gamma = gamma

    def _scores(self, instance: AuctionInstance, bids) -> np.ndarray:
        """Per-click welfare score per item: total bid (ads) + gamma * ue."""
        ue = instance.ue_profile()
        scores = self.gamma * ue
        for i, bid in enumerate(bids):
            scores[i] += bid.total
        return scores

    @staticmethod
    def _best(scores: np.ndarray, alphas: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
        weights = np.outer(scores, alphas)
        rows, cols = linear_sum_assignment(weights, maximize=True)
        return float(weights[rows, cols].sum()), rows, cols

    def run(self, instance: AuctionInstance, bids=None) -> Outcome:
        if bids is None:
            bids = truthful_bids(instance)
        alphas = instance.slots.as_array()
        scores = self._scores(instance, bids)
        total, rows, cols = self._best(scores, alphas)
        hard = np.zeros((instance.n_items, instance.k), dtype=np.int64)
        hard[rows, cols] = 1
        ctr = hard @ alphas
        payments = np.zeros((instance.m, 2))
        for i in range(instance.m):
            contrib = bids[i].total * ctr[i]
            if contrib <= 0:
                # Losers and zero-bid winners exert no bid externality:
                # zeroing their bid leaves the chosen assignment optimal.
                continue
            # Exclusion zeroes the bid but keeps the item displayable for its
            # user experience, so the pivot is nonnegative by construction.
            excl = scores.copy()
            excl[i] = self.gamma * instance.advertisers[i].ue
            w_excl, _, _ = self._best(excl, alphas)
            pivot = w_excl - (total - contrib)
            payments[i] = _split_payment(max(0.0, pivot), bids[i])
        return Outcome(soft_alloc=hard.astype(float), payments=payments, hard_alloc=hard)


# ---------------------------------------------------------------------------
# GSP with fixed positions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GspConfig:
    """Preset ad slots (0-based indices) and a per-click reserve price."""

    ad_positions: tuple[int, ...]
    reserve: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "ad_positions", tuple(int(p) for p in self.ad_positions))
        if len(set(self.ad_positions)) != len(self.ad_positions):
            raise ConfigError("ad positions must be distinct")
        if any(p < 0 for p in self.ad_positions):
            raise ConfigError("ad positions must be nonnegative slot indices")

    @classmethod
    def default(cls, n_slots: int, reserve: float = 0.0) -> "GspConfig":
        # Alternate from the top slot: 0, 2, 4, ... up to ceil(K / 2) positions.
        count = (n_slots + 1) // 2
        return cls(tuple(range(0, 2 * count, 2))[:count], reserve)


class GspFixedPositions(Mechanism):
    """Generalized second price on preset ad slots, organics fill the rest."""

    name = "gsp"

    def __init__(self, config: GspConfig | None = None, n_slots: int | None = None):
        if config is None:
            if n_slots is None:
                raise ConfigError("GspFixedPositions needs a config or a slot count")
            config = GspConfig.default(n_slots)
        self.config = config

    def run(self, instance: AuctionInstance, bids=None) -> Outcome:
        if bids is None:
            bids = truthful_bids(instance)
        k = instance.k
        positions = [p for p in self.config.ad_positions if p < k]
        totals = np.array([b.total for b in bids]) if bids else np.zeros(0)
        order = np.argsort(-totals, kind="stable")
        eligible = [i for i in order if totals[i] >= self.config.reserve]
        winners = eligible[: len(positions)]
        hard = np.zeros((instance.n_items, k), dtype=np.int64)
        payments = np.zeros((instance.m, 2))
        used_slots = set()
        for rank, adv in enumerate(winners):
            slot = positions[rank]
            hard[adv, slot] = 1
            used_slots.add(slot)
            nxt = eligible[rank + 1] if rank + 1 < len(eligible) else None
            per_click = totals[nxt] if nxt is not None else self.config.reserve
            payments[adv] = _split_payment(per_click * instance.slots.ctrs[slot], bids[adv])
        organic_order = np.argsort(-instance.ue_profile()[instance.m:], kind="stable")
        remaining = [s for s in range(k) if s not in used_slots]
        fillers = [instance.m + int(o) for o in organic_order]
        # Thin pages: if organics run out, unplaced ads fill leftover slots free
        # of charge so that every slot stays occupied.
        fillers += [i for i in order if i not in set(winners)]
        for slot, item in zip(remaining, fillers):
            hard[item, slot] = 1
        return Outcome(soft_alloc=hard.astype(float), payments=payments, hard_alloc=hard)


# ---------------------------------------------------------------------------
# IAS: Myerson-style integrated ad system
# ---------------------------------------------------------------------------


class IasMechanism(Mechanism):
    """Virtual-value ranking of ads and organics with critical-bid payments."""

    name = "ias"

    def __init__(self, gamma: float = 0.5, priors: dict[str, ValuePrior] | ValuePrior | None = None):
        if gamma < 0:
            raise DomainError("gamma must be nonnegative")
        self.gamma = gamma
        if priors is None:
            priors = {
                "store": UniformPrior(),
                "brand": UniformPrior(),
                "joint": UniformSumPrior(),
            }
        self.priors = priors

    def prior_for(self, kind: str) -> ValuePrior:
        if isinstance(self.priors, dict):
            if kind not in self.priors:
                raise ConfigError(f"no prior configured for advertiser kind {kind!r}")
            return self.priors[kind]
        return self.priors

    def run(self, instance: AuctionInstance, bids=None) -> Outcome:
        if bids is None:
            bids = truthful_bids(instance)
        k = instance.k
        ue = instance.ue_profile()
        scores = np.empty(instance.n_items)
        for i in range(instance.m):
            prior = self.prior_for(instance.advertisers[i].kind)
            scores[i] = myerson_virtual_value(_clip_to_support(bids[i].total, prior), prior) \
                + self.gamma * ue[i]
        scores[instance.m:] = self.gamma * ue[instance.m:]
        order = np.argsort(-scores, kind="stable")
        hard = np.zeros((instance.n_items, k), dtype=np.int64)
        payments = np.zeros((instance.m, 2))
        for rank in range(k):
            item = order[rank]
            hard[item, rank] = 1
            if item >= instance.m:
                continue
            adv = instance.advertisers[item]
            prior = self.prior_for(adv.kind)
            next_score = scores[order[rank + 1]] if rank + 1 < instance.n_items else -np.inf
            target = next_score - self.gamma * ue[item]
            if target == -np.inf:
                per_click = prior.lo
            else:
                per_click = invert_virtual_score(prior, target, hi_cap=bids[item].total)
            payments[item] = _split_payment(per_click * instance.slots.ctrs[rank], bids[item])
        return Outcome(soft_alloc=hard.astype(float), payments=payments, hard_alloc=hard)


def _clip_to_support(v: float, prior: ValuePrior) -> float:
    eps = 1e-12 * max(1.0, prior.hi - prior.lo)
    return float(min(max(v, prior.lo + eps), prior.hi - eps if prior.hi < np.inf else v))
