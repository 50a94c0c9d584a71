"""Synthetic dataset families and value distributions.

Random-count pages hold 20 items with 3..10 ads (at least one store, brand,
and joint each); fixed pages A/B/C hold 4x6, 5x5, 6x4 ads x organics on
three slots. Bid values can come from uniform, truncated normal, or a
truncated lognormal mixture.
"""

import collections

import numpy as np

from jointauction import (
    RandomCountSpec,
    TruncatedLognormalMixture,
    TruncatedNormal,
    Uniform,
    generate_fixed,
    generate_random_count,
    sample_value,
)
from jointauction.datagen import dataset_bytes

random_pages = generate_random_count(RandomCountSpec(n_slots=4), n_samples=500, seed=7)
counts = collections.Counter(inst.m for inst in random_pages.instances)
print("ad-count histogram:", dict(sorted(counts.items())))
print("slots:", random_pages.instances[0].slots.ctrs)

fixed = generate_fixed("A", n_samples=3, seed=1)
inst = fixed.instances[0]
print(f"setting A: {inst.m} ads, {inst.n} organics, ctrs {inst.slots.ctrs}")
for a in inst.advertisers:
    print(f"  {a.kind:6s} value=({a.value.store:.3f}, {a.value.brand:.3f}) ue={a.ue:.3f}")

# Same seed, same bytes: generation is deterministic per (spec, seed).
assert dataset_bytes(generate_fixed("A", 3, seed=1)) == dataset_bytes(fixed)
print("determinism: byte-identical regeneration")

rng = np.random.default_rng(0)
for dist in (Uniform(0, 1), TruncatedNormal(0.5, 0.5, 0, 1), TruncatedLognormalMixture()):
    xs = sample_value(dist, rng, size=20000)
    print(f"{type(dist).__name__:28s} mean={xs.mean():.3f} min={xs.min():.3f} max={xs.max():.3f}")
