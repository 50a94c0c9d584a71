"""Adaptive bid-feature extraction.

Builds per-(item, slot) input features for the auction network and runs the
residual quantizer that adapts to the bid distribution:

  * ``e[i, k] = (bid_store * ctr_k, bid_brand * ctr_k)`` for advertisers and
    zeros for organic items;
  * ``z[i, k] = Emb(ue_i) * ctr_k`` where Emb is a small perceptron on the
    scalar user experience;
  * ``t[i]`` a learned linear embedding of the item context.

The quantizer recursively snaps the residual of ``e`` to the nearest entry
of a shared codebook. Index 0 of every codebook is pinned to the zero vector
and never updated, which makes organic cells quantize exactly and makes the
reconstruction error non-increasing in quantization depth. Codebook entries
learn by exponential-moving-average updates toward their assigned residuals,
with dead entries reseeded from batch residuals after a fixed idle period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DimensionError, DomainError
from .params import ParameterStore

EMA_DECAY = 0.99
EMA_EPS = 1e-5
DEAD_CODE_STEPS = 256


@dataclass
class Codebook:
    """Shared code embeddings plus EMA statistics. Row 0 is pinned to zero."""

    embed: np.ndarray
    ema_count: np.ndarray
    ema_sum: np.ndarray
    unused: np.ndarray

    @classmethod
    def create(cls, size: int, dim: int, rng: np.random.Generator, scale: float = 0.1) -> "Codebook":
        if size < 2:
            raise DomainError("codebook needs at least two codes")
        embed = rng.normal(0.0, scale, size=(size, dim))
        embed[0] = 0.0
        return cls(
            embed=embed,
            ema_count=np.zeros(size),
            ema_sum=np.zeros((size, dim)),
            unused=np.zeros(size, dtype=np.int64),
        )

    @property
    def size(self) -> int:
        return self.embed.shape[0]

    @property
    def dim(self) -> int:
        return self.embed.shape[1]


def vq_nearest(x: np.ndarray, embed: np.ndarray) -> np.ndarray:
    """Index of the nearest code by squared distance; ties go to the smallest index."""
    x = np.asarray(x)
    if embed.size == 0:
        raise DomainError("empty codebook")
    if x.shape[-1] != embed.shape[1]:
        raise DimensionError(f"vector dim {x.shape[-1]} does not match codebook dim {embed.shape[1]}")
    # ||x - t||^2 up to the constant ||x||^2, argmin is unaffected.
    scores = x @ embed.T
    scores *= -2.0
    scores += (embed * embed).sum(axis=1)
    return np.argmin(scores, axis=-1)


@dataclass
class RQState:
    """Residual quantization trace for a batch of vectors.

    ``codes[d]`` are the depth-d code indices, ``residuals[d]`` the residual
    before depth d+1 (``residuals[0]`` is the input), and ``partial_sums[d]``
    the reconstruction using the first d+1 codes, stored as input minus
    residual so that reconstruction plus residual returns the input bit for
    bit.
    """

    codes: np.ndarray        # (D, ...) int
    residuals: np.ndarray    # (D + 1, ..., dim)
    partial_sums: np.ndarray  # (D, ..., dim)

    @property
    def depth(self) -> int:
        return self.codes.shape[0]

    @property
    def quantized(self) -> np.ndarray:
        return self.partial_sums[-1]

    @property
    def final_residual(self) -> np.ndarray:
        return self.residuals[-1]


def rq_quantize(x: np.ndarray, codebooks: Codebook | list[Codebook], depth: int) -> RQState:
    """Recursively quantize ``x`` with ``depth`` nearest-code rounds.

    A single codebook is shared across depths; a list supplies one per depth.
    """
    if depth < 1:
        raise DomainError("quantization depth must be >= 1")
    books = codebooks if isinstance(codebooks, list) else [codebooks] * depth
    if len(books) != depth:
        raise DomainError(f"need {depth} codebooks, got {len(books)}")
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(float)
    codes = np.empty((depth,) + x.shape[:-1], dtype=np.int64)
    residuals = np.empty((depth + 1,) + x.shape, dtype=x.dtype)
    partials = np.empty((depth,) + x.shape, dtype=x.dtype)
    residuals[0] = x
    for d in range(depth):
        idx = vq_nearest(residuals[d], books[d].embed)
        codes[d] = idx
        chosen = books[d].embed[idx]
        residuals[d + 1] = residuals[d] - chosen
        partials[d] = x - residuals[d + 1]
    return RQState(codes=codes, residuals=residuals, partial_sums=partials)


def ema_update(
    codebook: Codebook,
    state: RQState,
    rng: np.random.Generator,
    decay: float = EMA_DECAY,
    eps: float = EMA_EPS,
    reseed_after: int = DEAD_CODE_STEPS,
) -> None:
    """EMA-update a shared codebook from one quantization pass.

    Each depth contributes its residual inputs to the statistics of the code
    they were assigned to. Code 0 stays pinned at zero. Codes unused for
    ``reseed_after`` consecutive updates are reseeded from random batch
    residual inputs.
    """
    size, dim = codebook.size, codebook.dim
    counts = np.zeros(size)
    sums = np.zeros((size, dim))
    for d in range(state.depth):
        idx = state.codes[d].reshape(-1)
        flat = state.residuals[d].reshape(-1, dim)
        counts += np.bincount(idx, minlength=size)
        np.add.at(sums, idx, flat)
    codebook.ema_count *= decay
    codebook.ema_count += (1.0 - decay) * counts
    codebook.ema_sum *= decay
    codebook.ema_sum += (1.0 - decay) * sums
    total = codebook.ema_count.sum()
    norm = (codebook.ema_count + eps) / (total + size * eps) * total
    codebook.embed = codebook.ema_sum / norm[:, None]
    codebook.unused = np.where(counts > 0, 0, codebook.unused + 1)
    dead = np.nonzero(codebook.unused >= reseed_after)[0]
    dead = dead[dead != 0]
    if dead.size:
        pool = state.residuals[: state.depth].reshape(-1, dim)
        picks = rng.integers(0, pool.shape[0], size=dead.size)
        codebook.embed[dead] = pool[picks]
        codebook.ema_sum[dead] = pool[picks]
        codebook.ema_count[dead] = 1.0
        codebook.unused[dead] = 0
    codebook.embed[0] = 0.0
    codebook.ema_sum[0] = 0.0


def quantization_losses(targets: np.ndarray, decoded: Node, e, partial_sums: np.ndarray, beta: float):
    """Reconstruction + commitment losses of the quantizer.

    ``targets`` is the raw bid-feature block the decoder reconstructs,
    ``decoded`` the decoder output, ``e`` the (possibly graph-tracked)
    bid features, and ``partial_sums`` the per-depth reconstructions, which
    enter under a stop-gradient so only ``e`` receives commitment gradient.
    Losses are means over cells, summed over feature dims and depths.
    Returns (recon, commit, total) graph nodes.
    """
    if beta <= 0:
        raise DomainError("beta must be positive")
    targets = np.asarray(targets, dtype=float)
    n_cells = max(1, int(np.prod(targets.shape[:-1])))
    diff = ad.sub(targets, decoded)
    recon = ad.mul(ad.sum_(ad.square(diff)), 1.0 / n_cells)
    commit = None
    for d in range(partial_sums.shape[0]):
        term = ad.sum_(ad.square(ad.sub(e, ad.stop_gradient(partial_sums[d]))))
        commit = term if commit is None else ad.add(commit, term)
    commit = ad.mul(commit, 1.0 / n_cells)
    total = ad.add(recon, ad.mul(commit, beta))
    return recon, commit, total


class AdaptiveExtractor:
    """Parameter-owning front end: embeddings, quantizer, decoder, reducer.

    Parameters live in a ParameterStore under the ``aem.`` prefix; the
    codebook serializes as ``aem.codebook.*``.
    """

    def __init__(self, d_ctx: int, d_code: int, d_ue: int, d_feat: int,
                 codebook_size: int, rq_depth: int, use_quantizer: bool = True,
                 shared_codebook: bool = True):
        if d_feat < 4:
            raise DomainError("joint feature width must be at least 4")
        self.d_ctx = d_ctx
        self.d_code = d_code
        self.d_ue = d_ue
        self.d_feat = d_feat
        self.codebook_size = codebook_size
        self.rq_depth = rq_depth
        self.use_quantizer = use_quantizer
        self.shared_codebook = shared_codebook

    # -- parameters ----------------------------------------------------------

    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        def lin(name, d_in, d_out):
            store.add(f"aem.{name}.w", rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_in, d_out)))
            store.add(f"aem.{name}.b", np.zeros(d_out))

        lin("ctx_embed", self.d_ctx, self.d_code)
        lin("ue_embed.0", 1, self.d_ue)
        lin("ue_embed.1", self.d_ue, self.d_ue)
        reduced = self.d_feat - 3
        d_in = 2 + self.d_code + self.d_ue
        lin("reduce.0", d_in, max(d_in, reduced))
        lin("reduce.1", max(d_in, reduced), reduced)
        if self.use_quantizer:
            lin("decoder.0", 2, 8)
            lin("decoder.1", 8, 2)
            n_books = 1 if self.shared_codebook else self.rq_depth
            for b in range(n_books):
                cb = Codebook.create(self.codebook_size, 2, rng)
                store.add(f"aem.codebook.{b}.embed", cb.embed)
                store.add(f"aem.codebook.{b}.ema_count", cb.ema_count)
                store.add(f"aem.codebook.{b}.ema_sum", cb.ema_sum)
                store.add(f"aem.codebook.{b}.unused", cb.unused.astype(np.float64))

    def codebooks(self, store: ParameterStore) -> list[Codebook]:
        n_books = 1 if self.shared_codebook else self.rq_depth
        books = []
        for b in range(n_books):
            books.append(Codebook(
                embed=store[f"aem.codebook.{b}.embed"],
                ema_count=store[f"aem.codebook.{b}.ema_count"],
                ema_sum=store[f"aem.codebook.{b}.ema_sum"],
                unused=store[f"aem.codebook.{b}.unused"].astype(np.int64),
            ))
        return books if not self.shared_codebook else books * self.rq_depth

    def write_codebook(self, store: ParameterStore, index: int, cb: Codebook) -> None:
        store[f"aem.codebook.{index}.embed"] = cb.embed
        store[f"aem.codebook.{index}.ema_count"] = cb.ema_count
        store[f"aem.codebook.{index}.ema_sum"] = cb.ema_sum
        store[f"aem.codebook.{index}.unused"] = cb.unused.astype(np.float64)

    @staticmethod
    def gradient_param_names(store: ParameterStore, include_decoder: bool = True) -> list[str]:
        names = [n for n in store.names() if n.startswith("aem.") and ".codebook." not in n]
        if not include_decoder:
            names = [n for n in names if not n.startswith("aem.decoder.")]
        return names

    # -- forward pieces ------------------------------------------------------

    def build_features(self, nodes: dict[str, Node], alphas: np.ndarray, bids,
                       ue: np.ndarray, ctx: np.ndarray, comp_mask: np.ndarray):
        """Compute (e, z, t) for a batch.

        ``alphas`` (B, K), ``bids`` (B, N, 2) array or Node, ``ue`` (B, N),
        ``ctx`` (B, N, d_ctx), ``comp_mask`` (B, N, 2) zeroing components an
        item cannot bid on (organics mask to zero entirely).
        """
        b, k = alphas.shape
        n = ue.shape[1]
        if ad._value(bids).shape != (b, n, 2):
            raise DimensionError(f"bids shaped {ad._value(bids).shape}, expected {(b, n, 2)}")
        alpha_bc = alphas[:, None, :, None]  # (B, 1, K, 1)
        masked = ad.mul(bids, comp_mask)
        e = ad.mul(ad.reshape(masked, (b, n, 1, 2)), alpha_bc)  # (B, N, K, 2)

        ue_in = ue.reshape(b * n, 1)
        h = ad.relu(ad.add(ad.matmul(ue_in, nodes["aem.ue_embed.0.w"]), nodes["aem.ue_embed.0.b"]))
        emb = ad.add(ad.matmul(h, nodes["aem.ue_embed.1.w"]), nodes["aem.ue_embed.1.b"])
        z = ad.mul(ad.reshape(emb, (b, n, 1, self.d_ue)), alpha_bc)  # (B, N, K, d_ue)

        t = ad.add(ad.matmul(ctx.reshape(b * n, -1), nodes["aem.ctx_embed.w"]), nodes["aem.ctx_embed.b"])
        t = ad.reshape(t, (b, n, self.d_code))
        return e, z, t

    def decode(self, nodes: dict[str, Node], quantized) -> Node:
        h = ad.relu(ad.add(ad.matmul(quantized, nodes["aem.decoder.0.w"]), nodes["aem.decoder.0.b"]))
        return ad.add(ad.matmul(h, nodes["aem.decoder.1.w"]), nodes["aem.decoder.1.b"])

    def assemble(self, nodes: dict[str, Node], e_for_stack, z: Node, t: Node,
                 e_raw, ue: np.ndarray, alphas: np.ndarray) -> Node:
        """Concatenate, reduce, and re-append the raw bid / ue channels.

        ``e_for_stack`` is the quantized bid feature (straight-through) or the
        raw one when the quantizer is disabled; ``e_raw`` is always the raw
        bid feature block that bypasses the reducer.
        """
        b, n, k, _ = ad._value(e_raw).shape
        t_bc = ad.broadcast_to(ad.reshape(t, (b, n, 1, self.d_code)), (b, n, k, self.d_code))
        stacked = ad.concat([e_for_stack, z, t_bc], axis=-1)
        h = ad.relu(ad.add(ad.matmul(stacked, nodes["aem.reduce.0.w"]), nodes["aem.reduce.0.b"]))
        reduced = ad.add(ad.matmul(h, nodes["aem.reduce.1.w"]), nodes["aem.reduce.1.b"])
        ue_alpha = (ue[:, :, None] * alphas[:, None, :])[..., None]  # (B, N, K, 1)
        return ad.concat([reduced, e_raw, ue_alpha], axis=-1)
