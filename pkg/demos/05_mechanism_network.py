"""The trainable mechanism, end to end on one page.

Even untrained, the network's structure guarantees a doubly substochastic
soft allocation and nonnegative truthful utilities: row/column softmaxes
meet in an entrywise min, a sigmoid gate damps losing items, and payments
are a sigmoid fraction of each advertiser's realized bid-weighted CTR.
"""

import time

import numpy as np

from jointauction import AuctionNetwork, ModelConfig, round_allocation
from jointauction.core import check_feasibility
from jointauction.datagen import generate_fixed

net = AuctionNetwork(ModelConfig(), seed=0)
print("parameters:", sum(net.store[k].size for k in net.store.names()))

instance = generate_fixed("A", 1, seed=3).instances[0]
outcome = net.outcome(instance)
print("soft allocation row sums:", np.round(outcome.soft_alloc.sum(1), 3))
print("soft allocation col sums:", np.round(outcome.soft_alloc.sum(0), 3))

values = instance.value_pairs()
ctr = outcome.expected_ctrs(instance.slots)[: instance.m]
utils = values.sum(1) * ctr - outcome.payments.sum(1)
print("truthful utilities (all nonnegative):", np.round(utils, 4))

hard = round_allocation(outcome.soft_alloc)
ok, _ = check_feasibility(hard)
print("rounded assignment feasible:", ok)
print(hard)

# Inference speed: one page forward, single process.
for _ in range(10):
    net.outcome(instance)
t0 = time.perf_counter()
reps = 100
for _ in range(reps):
    net.outcome(instance)
print(f"forward latency: {(time.perf_counter() - t0) / reps * 1e3:.2f} ms per page")
