"""Synthetic dataset generation and industrial log ingestion.

Synthetic generators cover two families:

  * random-count pages: 20 items total, a random 3..10 of them ads with at
    least one store, one brand, and one joint advertiser each, the rest
    organic items, on 4/5/6 CTR-preset slots;
  * fixed pages A/B/C: 4x6, 5x5, 6x4 ads x organics on 3 slots with CTRs
    (0.5, 0.3, 0.2).

Bid components are drawn i.i.d. from a configurable distribution (uniform,
truncated normal, or a truncated lognormal mixture); ad user experience from
U[0, 0.5] and organic user experience from U[0.5, 1]. Contexts are 8 uniform
continuous features plus a one-hot of {store, brand, joint, organic}.

Generation is deterministic: sample ``i`` of seed ``s`` uses an independent
RNG stream seeded by ``(s, i)``, so results never depend on worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.special import ndtr, ndtri

from .core import (
    ADVERTISER_KINDS,
    BRAND,
    JOINT,
    STORE,
    Advertiser,
    AuctionInstance,
    BidPair,
    OrganicItem,
    SlotProfile,
)
from .errors import ConfigError, ParseError, SchemaError

# CTR presets: random-count pages by slot count, fixed pages A/B/C.
RANDOM_COUNT_CTRS = {
    4: (0.7, 0.6, 0.5, 0.4),
    5: (0.7, 0.6, 0.5, 0.4, 0.3),
    6: (0.7, 0.6, 0.5, 0.4, 0.3, 0.2),
}
FIXED_SETTINGS = {"A": (4, 6, 3), "B": (5, 5, 3), "C": (6, 4, 3)}
FIXED_CTRS = (0.5, 0.3, 0.2)

N_CONTINUOUS_CTX = 8
CTX_ONE_HOT = (STORE, BRAND, JOINT, "organic")


# ---------------------------------------------------------------------------
# Value distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError("uniform distribution needs lo < hi")


@dataclass(frozen=True)
class TruncatedNormal:
    mean: float = 0.5
    sd: float = 0.5
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.sd <= 0:
            raise ConfigError("truncated normal needs sd > 0")
        if not self.lo < self.hi:
            raise ConfigError("truncated normal needs lo < hi")


@dataclass(frozen=True)
class TruncatedLognormalMixture:
    """Uniform mixture of lognormal components, rejected outside [lo, hi]."""

    components: tuple[tuple[float, float], ...] = ((0.3, 0.2), (0.5, 0.3), (0.7, 0.4), (0.9, 0.5))
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple((float(m), float(s)) for m, s in self.components))
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        if any(s <= 0 for _, s in self.components):
            raise ConfigError("mixture component sigmas must be positive")
        if not self.lo < self.hi:
            raise ConfigError("mixture needs lo < hi")


DistributionSpec = Uniform | TruncatedNormal | TruncatedLognormalMixture


def distribution_from_dict(obj: dict) -> DistributionSpec:
    kind = obj.get("kind")
    if kind == "uniform":
        return Uniform(float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)))
    if kind == "truncated_normal":
        return TruncatedNormal(
            float(obj.get("mean", 0.5)), float(obj.get("sd", 0.5)),
            float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)),
        )
    if kind == "lognormal_mixture":
        comps = tuple((float(m), float(s)) for m, s in obj.get("components", TruncatedLognormalMixture().components))
        return TruncatedLognormalMixture(comps, float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)))
    raise ConfigError(f"unknown distribution kind {kind!r}")


def distribution_to_dict(dist: DistributionSpec) -> dict:
    if isinstance(dist, Uniform):
        return {"kind": "uniform", "lo": dist.lo, "hi": dist.hi}
    if isinstance(dist, TruncatedNormal):
        return {"kind": "truncated_normal", "mean": dist.mean, "sd": dist.sd, "lo": dist.lo, "hi": dist.hi}
    return {"kind": "lognormal_mixture", "components": [list(c) for c in dist.components], "lo": dist.lo, "hi": dist.hi}


def sample_value(dist: DistributionSpec, rng: np.random.Generator, size=None):
    """Draw from a value distribution; always lands inside [lo, hi]."""
    if isinstance(dist, Uniform):
        return rng.uniform(dist.lo, dist.hi, size=size)
    if isinstance(dist, TruncatedNormal):
        # Inverse-CDF sampling restricted to the truncation window.
        a = ndtr((dist.lo - dist.mean) / dist.sd)
        b = ndtr((dist.hi - dist.mean) / dist.sd)
        u = rng.uniform(a, b, size=size)
        x = dist.mean + dist.sd * ndtri(u)
        return np.clip(x, dist.lo, dist.hi)
    if isinstance(dist, TruncatedLognormalMixture):
        return _sample_mixture(dist, rng, size)
    raise ConfigError(f"unsupported distribution {type(dist).__name__}")


def _sample_mixture(dist: TruncatedLognormalMixture, rng: np.random.Generator, size):
    scalar = size is None
    n = 1 if scalar else int(np.prod(size))
    mus = np.array([m for m, _ in dist.components])
    sigmas = np.array([s for _, s in dist.components])
    out = np.empty(n)
    pending = np.arange(n)
    while pending.size:
        comp = rng.integers(0, len(dist.components), size=pending.size)
        draws = rng.lognormal(mean=mus[comp], sigma=sigmas[comp])
        ok = (draws >= dist.lo) & (draws <= dist.hi)
        out[pending[ok]] = draws[ok]
        pending = pending[~ok]
    if scalar:
        return float(out[0])
    return out.reshape(size)


# ---------------------------------------------------------------------------
# Setting specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomCountSpec:
    """Random-count page family: `total_items` items, random ad count."""

    n_slots: int = 4
    total_items: int = 20
    min_ads: int = 3
    max_ads: int = 10
    bid_dist: DistributionSpec = field(default_factory=Uniform)
    ue_ad_dist: DistributionSpec = field(default_factory=lambda: Uniform(0.0, 0.5))
    ue_na_dist: DistributionSpec = field(default_factory=lambda: Uniform(0.5, 1.0))
    ctrs: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.ctrs is None and self.n_slots not in RANDOM_COUNT_CTRS:
            raise ConfigError(f"no CTR preset for {self.n_slots} slots; pass ctrs explicitly")
        if not (3 <= self.min_ads <= self.max_ads):
            raise ConfigError("need 3 <= min_ads <= max_ads (one ad of each kind)")
        if self.max_ads >= self.total_items:
            raise ConfigError("max_ads must leave room for organic items")

    def slot_profile(self) -> SlotProfile:
        return SlotProfile(self.ctrs if self.ctrs is not None else RANDOM_COUNT_CTRS[self.n_slots])


@dataclass(frozen=True)
class FixedSpec:
    """Fixed-count page family: settings A (4x6x3), B (5x5x3), C (6x4x3)."""

    setting: str = "A"
    bid_dist: DistributionSpec = field(default_factory=Uniform)
    ue_ad_dist: DistributionSpec = field(default_factory=lambda: Uniform(0.0, 0.5))
    ue_na_dist: DistributionSpec = field(default_factory=lambda: Uniform(0.5, 1.0))

    def __post_init__(self):
        if self.setting not in FIXED_SETTINGS:
            raise ConfigError(f"unknown fixed setting {self.setting!r}, expected one of {sorted(FIXED_SETTINGS)}")

    @property
    def counts(self) -> tuple[int, int, int]:
        return FIXED_SETTINGS[self.setting]

    def slot_profile(self) -> SlotProfile:
        return SlotProfile(FIXED_CTRS)


@dataclass
class Dataset:
    """A list of auction instances plus generation metadata.

    ``meta['value_domain']`` declares the misreport box used by regret tools.
    """

    instances: list[AuctionInstance]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def value_domain(self) -> tuple[float, float]:
        lo, hi = self.meta.get("value_domain", (0.0, 1.0))
        return float(lo), float(hi)


def _value_domain(dist: DistributionSpec) -> tuple[float, float]:
    return float(dist.lo), float(dist.hi)


def _split_ad_kinds(num_ad: int, rng: np.random.Generator) -> tuple[int, int, int]:
    """Uniform composition of num_ad into (store, brand, joint), each >= 1."""
    cuts = np.sort(rng.choice(np.arange(1, num_ad), size=2, replace=False))
    return int(cuts[0]), int(cuts[1] - cuts[0]), int(num_ad - cuts[1])


def _draw_ad_count(rng: np.random.Generator, lo: int, hi: int) -> int:
    return int(rng.integers(lo, hi + 1))


def _make_context(kind: str, rng: np.random.Generator) -> tuple[float, ...]:
    cont = rng.uniform(0.0, 1.0, size=N_CONTINUOUS_CTX)
    onehot = [1.0 if kind == k else 0.0 for k in CTX_ONE_HOT]
    return tuple(cont.tolist() + onehot)


def _make_advertiser(kind: str, bid_dist, ue_dist, rng: np.random.Generator) -> Advertiser:
    if kind == STORE:
        value = BidPair(float(sample_value(bid_dist, rng)), 0.0)
    elif kind == BRAND:
        value = BidPair(0.0, float(sample_value(bid_dist, rng)))
    else:
        value = BidPair(float(sample_value(bid_dist, rng)), float(sample_value(bid_dist, rng)))
    return Advertiser(kind=kind, value=value, ue=float(sample_value(ue_dist, rng)), context=_make_context(kind, rng))


def _make_organic(ue_dist, rng: np.random.Generator) -> OrganicItem:
    return OrganicItem(ue=float(sample_value(ue_dist, rng)), context=_make_context("organic", rng))


def _sample_random_count_instance(spec: RandomCountSpec, rng: np.random.Generator) -> AuctionInstance:
    num_ad = _draw_ad_count(rng, spec.min_ads, spec.max_ads)
    n_store, n_brand, n_joint = _split_ad_kinds(num_ad, rng)
    kinds = [STORE] * n_store + [BRAND] * n_brand + [JOINT] * n_joint
    ads = tuple(_make_advertiser(k, spec.bid_dist, spec.ue_ad_dist, rng) for k in kinds)
    organics = tuple(_make_organic(spec.ue_na_dist, rng) for _ in range(spec.total_items - num_ad))
    return AuctionInstance(spec.slot_profile(), ads, organics)


def _sample_fixed_instance(spec: FixedSpec, rng: np.random.Generator) -> AuctionInstance:
    num_ad, num_na, _ = spec.counts
    n_store, n_brand, n_joint = _split_ad_kinds(num_ad, rng)
    kinds = [STORE] * n_store + [BRAND] * n_brand + [JOINT] * n_joint
    ads = tuple(_make_advertiser(k, spec.bid_dist, spec.ue_ad_dist, rng) for k in kinds)
    organics = tuple(_make_organic(spec.ue_na_dist, rng) for _ in range(num_na))
    return AuctionInstance(spec.slot_profile(), ads, organics)


def generate_random_count(spec: RandomCountSpec, n_samples: int, seed: int) -> Dataset:
    """Generate a random-count dataset of ``n_samples`` instances."""
    instances = [
        _sample_random_count_instance(spec, np.random.default_rng([seed, i])) for i in range(n_samples)
    ]
    meta = {
        "family": "random_count",
        "n_slots": spec.slot_profile().k,
        "seed": seed,
        "value_domain": _value_domain(spec.bid_dist),
        "bid_dist": distribution_to_dict(spec.bid_dist),
    }
    return Dataset(instances, meta)


def generate_fixed(
    setting: str, n_samples: int, seed: int, bid_dist: DistributionSpec | None = None
) -> Dataset:
    """Generate a fixed-count dataset for setting "A", "B", or "C"."""
    spec = FixedSpec(setting=setting, bid_dist=bid_dist or Uniform())
    instances = [_sample_fixed_instance(spec, np.random.default_rng([seed, i])) for i in range(n_samples)]
    meta = {
        "family": "fixed",
        "setting": setting,
        "seed": seed,
        "value_domain": _value_domain(spec.bid_dist),
        "bid_dist": distribution_to_dict(spec.bid_dist),
    }
    return Dataset(instances, meta)


# ---------------------------------------------------------------------------
# JSONL serialization and industrial ingestion
# ---------------------------------------------------------------------------


def instance_to_obj(instance: AuctionInstance) -> dict:
    return {
        "slots": list(instance.slots.ctrs),
        "ads": [
            {"type": a.kind, "value": [a.value.store, a.value.brand], "ue": a.ue, "ctx": list(a.context)}
            for a in instance.advertisers
        ],
        "organics": [{"ue": o.ue, "ctx": list(o.context)} for o in instance.organics],
    }


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise SchemaError(f"{where}: missing required field {key!r}")
    return obj[key]


def _parse_ads(obj: dict, where: str) -> tuple[Advertiser, ...]:
    ads = []
    for j, rec in enumerate(_require(obj, "ads", where)):
        kind = _require(rec, "type", f"{where} ad {j}")
        if kind not in ADVERTISER_KINDS:
            raise SchemaError(f"{where} ad {j}: unknown type {kind!r}")
        value = _require(rec, "value", f"{where} ad {j}")
        ads.append(
            Advertiser(
                kind=kind,
                value=BidPair(float(value[0]), float(value[1])),
                ue=float(_require(rec, "ue", f"{where} ad {j}")),
                context=tuple(rec.get("ctx", ())),
            )
        )
    return tuple(ads)


def _parse_organics(obj: dict, where: str) -> tuple[OrganicItem, ...]:
    organics = []
    for j, rec in enumerate(_require(obj, "organics", where)):
        organics.append(
            OrganicItem(
                ue=float(_require(rec, "ue", f"{where} organic {j}")),
                context=tuple(rec.get("ctx", ())),
            )
        )
    return tuple(organics)


def instance_from_obj(obj: dict, where: str = "record") -> AuctionInstance:
    slots = SlotProfile(tuple(_require(obj, "slots", where)))
    return AuctionInstance(slots, _parse_ads(obj, where), _parse_organics(obj, where))


def save_jsonl(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in dataset.instances:
            fh.write(json.dumps(instance_to_obj(inst)) + "\n")


def dataset_bytes(dataset: Dataset) -> bytes:
    """Canonical JSONL encoding of a dataset, used for determinism checks."""
    return "".join(json.dumps(instance_to_obj(i)) + "\n" for i in dataset.instances).encode("utf-8")


def load_jsonl(path, value_domain: tuple[float, float] = (0.0, 1.0)) -> Dataset:
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: {exc}") from exc
            instances.append(instance_from_obj(obj, where=f"line {lineno}"))
    return Dataset(instances, {"family": "jsonl", "path": str(path), "value_domain": list(value_domain)})


@dataclass
class IngestStats:
    n_lines: int = 0
    n_kept: int = 0
    n_dropped: int = 0


def ingest_logs(
    path,
    target_k: int,
    max_ads: int,
    max_organics: int,
    ctrs_override: tuple[float, ...] | None = None,
    value_domain: tuple[float, float] = (0.0, 1.0),
) -> tuple[Dataset, IngestStats]:
    """Ingest line-delimited request logs into auction instances.

    Every record becomes an instance with exactly ``target_k`` slots; ad
    candidates are truncated to ``max_ads`` by descending total bid and
    organics to ``max_organics`` by descending user experience. Records left
    with fewer than ``target_k`` candidates are dropped and counted. Unknown
    fields are ignored; malformed lines raise ParseError with the line
    number, missing fields raise SchemaError naming the field.
    """
    if ctrs_override is not None and len(ctrs_override) != target_k:
        raise ConfigError("ctrs_override length must equal target_k")
    stats = IngestStats()
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            stats.n_lines += 1
            where = f"line {lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{where}: {exc}") from exc
            if ctrs_override is not None:
                ctrs = tuple(ctrs_override)
            else:
                raw = _require(obj, "slots", where)
                if len(raw) < target_k:
                    raise SchemaError(f"{where}: record has {len(raw)} slot CTRs, need {target_k}")
                ctrs = tuple(sorted((float(c) for c in raw), reverse=True)[:target_k])
            ads = sorted(_parse_ads(obj, where), key=lambda a: -a.value.total)[:max_ads]
            organics = sorted(_parse_organics(obj, where), key=lambda o: -o.ue)[:max_organics]
            if len(ads) + len(organics) < target_k:
                stats.n_dropped += 1
                continue
            instances.append(AuctionInstance(SlotProfile(ctrs), tuple(ads), tuple(organics)))
            stats.n_kept += 1
    meta = {
        "family": "industrial",
        "path": str(path),
        "target_k": target_k,
        "dropped": stats.n_dropped,
        "value_domain": list(value_domain),
    }
    return Dataset(instances, meta), stats
