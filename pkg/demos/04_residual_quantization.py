"""Residual quantization of bid features.

Bid pairs scaled by slot CTRs are snapped to a learned codebook, depth by
depth, each round quantizing the previous residual. Code 0 is pinned to the
zero vector (organic cells quantize exactly; reconstruction error can only
shrink with depth). The codebook adapts to the bid distribution by EMA.
"""

import numpy as np

from jointauction.extraction import Codebook, ema_update, rq_quantize, vq_nearest

rng = np.random.default_rng(0)

# A hand-sized trace: codebook {0, 1}, input 0.7, two depths.
book = Codebook(embed=np.array([[0.0], [1.0]]), ema_count=np.zeros(2),
                ema_sum=np.zeros((2, 1)), unused=np.zeros(2, dtype=np.int64))
state = rq_quantize(np.array([0.7]), book, depth=2)
print("codes:", state.codes.ravel(), " reconstruction:", state.quantized, " residual:", state.final_residual)
assert state.quantized[0] + state.final_residual[0] == np.float64(0.7)

# Reconstruction error is non-increasing in depth.
book = Codebook.create(16, 2, rng)
x = rng.uniform(0, 0.5, size=(4000, 2))
deep = rq_quantize(x, book, depth=4)
for d in range(4):
    err = ((x - deep.partial_sums[d]) ** 2).sum(-1).mean()
    print(f"depth {d + 1}: mean squared reconstruction error {err:.5f}")

# EMA adaptation: feed a bimodal bid distribution and watch codes settle
# onto the modes.
book = Codebook.create(8, 1, rng, scale=0.05)
lo_mode = rng.normal(0.2, 0.01, size=(256, 1))
hi_mode = rng.normal(0.8, 0.01, size=(256, 1))
data = np.concatenate([lo_mode, hi_mode])
for _ in range(200):
    state = rq_quantize(data, book, depth=1)
    ema_update(book, state, rng)
used = np.unique(vq_nearest(data, book.embed))
print("codes in use:", used, " embeddings:", np.round(book.embed[used, 0], 3))
