"""Differentiable joint auction mechanism.

The network maps a page of items (advertisers + organics) and slots to a
feasible soft allocation and advertiser payments:

  1. the adaptive extractor builds per-(item, slot) features and quantizes
     the bid block (straight-through for gradients);
  2. a row-wise encoder mixes each item's slot cells, a column-wise encoder
     mixes each slot's item cells, and a global mean feature is appended;
     neither encoder uses positional information, so the mechanism is
     equivariant to item and slot permutations;
  3. five output heads per cell drive the allocation (row softmax, column
     softmax, entrywise min, sigmoid gate) and the payments (a sigmoid
     fraction of the realized bid-weighted CTR, which makes truthful utility
     nonnegative by construction).

Soft allocations are the mechanism of record; ``round_allocation`` extracts
the maximum-weight deterministic assignment when a hard list is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import autodiff as ad
from .autodiff import Node
from .core import AuctionInstance, BidPair, Mechanism, Outcome, truthful_bids
from .errors import ConfigError, DimensionError, DomainError
from .extraction import AdaptiveExtractor, rq_quantize
from .params import ParameterStore

ENCODER_KINDS = ("transformer", "mlp")
N_HEADS_OUT = 5  # allocation row/col/gate + two payment heads


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; defaults are desk scale."""

    d_ctx: int = 12
    d_code: int = 16
    d_ue: int = 8
    d_feat: int = 64
    d_hidden: int = 32
    n_heads: int = 2
    n_layers: int = 2
    codebook_size: int = 128
    rq_depth: int = 2
    shared_codebook: bool = True
    use_quantizer: bool = True
    encoder: str = "transformer"
    mlp_widths: tuple[int, ...] = (64, 32, 16)
    dtype: str = "float64"

    def __post_init__(self):
        if self.encoder not in ENCODER_KINDS:
            raise ConfigError(f"encoder must be one of {ENCODER_KINDS}")
        if self.d_feat < 4:
            raise ConfigError("d_feat must be at least 4")
        if self.d_hidden % self.n_heads:
            raise ConfigError("d_hidden must be divisible by n_heads")
        object.__setattr__(self, "mlp_widths", tuple(self.mlp_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(obj) - known
        if bad:
            raise ConfigError(f"unknown model config fields: {sorted(bad)}")
        return cls(**obj)


@dataclass
class InstanceBatch:
    """Uniform-shape batch of instances as dense arrays (ads first)."""

    alphas: np.ndarray     # (B, K)
    bids: np.ndarray       # (B, N, 2) truthful value pairs, zeros for organics
    ue: np.ndarray         # (B, N)
    ctx: np.ndarray        # (B, N, d_ctx)
    comp_mask: np.ndarray  # (B, N, 2) allowed bid components
    ad_mask: np.ndarray    # (B, N) 1.0 for advertiser rows
    n_ads: np.ndarray      # (B,) int

    @property
    def size(self) -> int:
        return self.alphas.shape[0]

    @property
    def n_items(self) -> int:
        return self.ue.shape[1]

    @property
    def n_slots(self) -> int:
        return self.alphas.shape[1]

    @property
    def max_ads(self) -> int:
        return int(self.n_ads.max(initial=0))

    @classmethod
    def from_instances(cls, instances) -> "InstanceBatch":
        if not instances:
            raise DomainError("empty batch")
        n_items = {inst.n_items for inst in instances}
        n_slots = {inst.k for inst in instances}
        if len(n_items) > 1 or len(n_slots) > 1:
            raise DimensionError("instances in a batch must share item and slot counts")
        b, n, k = len(instances), n_items.pop(), n_slots.pop()
        first_ctx = instances[0].context_matrix()
        d_ctx = first_ctx.shape[1]
        alphas = np.empty((b, k))
        bids = np.zeros((b, n, 2))
        ue = np.empty((b, n))
        ctx = np.empty((b, n, d_ctx))
        comp = np.zeros((b, n, 2))
        ad_mask = np.zeros((b, n))
        n_ads = np.empty(b, dtype=np.int64)
        for i, inst in enumerate(instances):
            alphas[i] = inst.slots.as_array()
            m = inst.m
            n_ads[i] = m
            if m:
                bids[i, :m] = inst.value_pairs()
            ue[i] = inst.ue_profile()
            ctx[i] = inst.context_matrix()
            ad_mask[i, :m] = 1.0
            for j, adv in enumerate(inst.advertisers):
                if adv.kind in ("store", "joint"):
                    comp[i, j, 0] = 1.0
                if adv.kind in ("brand", "joint"):
                    comp[i, j, 1] = 1.0
        return cls(alphas, bids, ue, ctx, comp, ad_mask, n_ads)

    def subset(self, idx) -> "InstanceBatch":
        return InstanceBatch(
            self.alphas[idx], self.bids[idx], self.ue[idx], self.ctx[idx],
            self.comp_mask[idx], self.ad_mask[idx], self.n_ads[idx],
        )

    def astype(self, dtype) -> "InstanceBatch":
        """Cast all float fields; avoids silent promotion inside the network."""
        if self.alphas.dtype == dtype:
            return self
        return InstanceBatch(
            *(a.astype(dtype) for a in (self.alphas, self.bids, self.ue, self.ctx,
                                        self.comp_mask, self.ad_mask)),
            self.n_ads,
        )

    def tile(self, reps: int) -> "InstanceBatch":
        """Repeat the whole batch ``reps`` times along the sample axis."""
        return InstanceBatch(
            *(np.repeat(a[None], reps, axis=0).reshape((-1,) + a.shape[1:])
              for a in (self.alphas, self.bids, self.ue, self.ctx, self.comp_mask, self.ad_mask)),
            np.repeat(self.n_ads[None], reps, axis=0).reshape(-1),
        )


def group_by_shape(instances) -> list[tuple[list[int], InstanceBatch]]:
    """Split instances into uniform-shape groups; returns (original indices, batch)."""
    groups: dict[tuple, list[int]] = {}
    for i, inst in enumerate(instances):
        key = (inst.n_items, inst.k, inst.context_matrix().shape[1])
        groups.setdefault(key, []).append(i)
    out = []
    for key, idxs in groups.items():
        out.append((idxs, InstanceBatch.from_instances([instances[i] for i in idxs])))
    return out


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


class _TransformerEncoder:
    """Stack of self-attention blocks over one axis of the cell grid."""

    def __init__(self, prefix: str, d_in: int, d_h: int, heads: int, layers: int):
        self.prefix = prefix
        self.d_in = d_in
        self.d_h = d_h
        self.heads = heads
        self.layers = layers

    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        def lin(name, a, b):
            store.add(f"{self.prefix}.{name}.w", rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)))
            store.add(f"{self.prefix}.{name}.b", np.zeros(b))

        lin("proj", self.d_in, self.d_h)
        for l in range(self.layers):
            for head in ("q", "k", "v", "o"):
                lin(f"{l}.{head}", self.d_h, self.d_h)
            lin(f"{l}.ff0", self.d_h, self.d_h)
            lin(f"{l}.ff1", self.d_h, self.d_h)
            store.add(f"{self.prefix}.{l}.ln1.g", np.ones(self.d_h))
            store.add(f"{self.prefix}.{l}.ln1.b", np.zeros(self.d_h))
            store.add(f"{self.prefix}.{l}.ln2.g", np.ones(self.d_h))
            store.add(f"{self.prefix}.{l}.ln2.b", np.zeros(self.d_h))

    def forward(self, nodes: dict[str, Node], x) -> Node:
        """Encode (batch, seq, d_in) -> (batch, seq, d_h)."""
        p = self.prefix

        def lin(h, name):
            return ad.add(ad.matmul(h, nodes[f"{p}.{name}.w"]), nodes[f"{p}.{name}.b"])

        h = lin(x, "proj")
        for l in range(self.layers):
            q, k, v = lin(h, f"{l}.q"), lin(h, f"{l}.k"), lin(h, f"{l}.v")
            attn = lin(ad.scaled_dot_attention(q, k, v, self.heads), f"{l}.o")
            h = ad.layer_norm(ad.add(h, attn), nodes[f"{p}.{l}.ln1.g"], nodes[f"{p}.{l}.ln1.b"])
            ff = lin(ad.relu(lin(h, f"{l}.ff0")), f"{l}.ff1")
            h = ad.layer_norm(ad.add(h, ff), nodes[f"{p}.{l}.ln2.g"], nodes[f"{p}.{l}.ln2.b"])
        return h


class CellEncoder:
    """Externality encoder: row + column attention with a global mean, or a
    per-cell perceptron in the ablation variant."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        if cfg.encoder == "transformer":
            self.row = _TransformerEncoder("etm.row", cfg.d_feat, cfg.d_hidden, cfg.n_heads, cfg.n_layers)
            self.col = _TransformerEncoder("etm.col", cfg.d_feat, cfg.d_hidden, cfg.n_heads, cfg.n_layers)

    def init_params(self, store: ParameterStore, rng: np.random.Generator) -> None:
        cfg = self.cfg

        def lin(name, a, b):
            store.add(f"{name}.w", rng.normal(0.0, 1.0 / np.sqrt(a), size=(a, b)))
            store.add(f"{name}.b", np.zeros(b))

        if cfg.encoder == "transformer":
            self.row.init_params(store, rng)
            self.col.init_params(store, rng)
            d_cat = 2 * cfg.d_hidden + cfg.d_feat
            lin("etm.out.0", d_cat, cfg.d_hidden)
            lin("etm.out.1", cfg.d_hidden, N_HEADS_OUT)
        else:
            widths = (cfg.d_feat,) + cfg.mlp_widths
            for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
                lin(f"etm.mlp.{i}", a, b)
            lin("etm.mlp.out", widths[-1], N_HEADS_OUT)

    def forward(self, nodes: dict[str, Node], t_feat: Node) -> Node:
        """Map the joint feature grid (B, N, K, d_feat) to head values (B, N, K, 5)."""
        cfg = self.cfg
        b, n, k, d = t_feat.value.shape
        if cfg.encoder == "mlp":
            h = t_feat
            for i in range(len(cfg.mlp_widths)):
                h = ad.relu(ad.add(ad.matmul(h, nodes[f"etm.mlp.{i}.w"]), nodes[f"etm.mlp.{i}.b"]))
            return ad.add(ad.matmul(h, nodes["etm.mlp.out.w"]), nodes["etm.mlp.out.b"])

        rows = self.row.forward(nodes, ad.reshape(t_feat, (b * n, k, d)))
        rows = ad.reshape(rows, (b, n, k, cfg.d_hidden))
        cols_in = ad.reshape(ad.swapaxes(t_feat, 1, 2), (b * k, n, d))
        cols = self.col.forward(nodes, cols_in)
        cols = ad.swapaxes(ad.reshape(cols, (b, k, n, cfg.d_hidden)), 1, 2)
        global_feat = ad.broadcast_to(ad.reshape(ad.mean(t_feat, axis=(1, 2)), (b, 1, 1, d)), (b, n, k, d))
        cat = ad.concat([rows, cols, global_feat], axis=-1)
        h = ad.relu(ad.add(ad.matmul(cat, nodes["etm.out.0.w"]), nodes["etm.out.0.b"]))
        return ad.add(ad.matmul(h, nodes["etm.out.1.w"]), nodes["etm.out.1.b"])


# ---------------------------------------------------------------------------
# Mechanism heads
# ---------------------------------------------------------------------------


def allocation_head(o_row, o_col, o_gate) -> tuple[Node, Node]:
    """Feasible soft allocation from three head grids of shape (..., N, K).

    Row softmax keeps each item on at most one slot in expectation, column
    softmax keeps each slot at most fully allocated, the entrywise min makes
    the result doubly substochastic, and the sigmoid gate damps items that
    should stay unallocated. Returns (pre_gate, final).
    """
    row_probs = ad.softmax(o_row, axis=-1)
    col_probs = ad.softmax(o_col, axis=-2)
    pre = ad.minimum(row_probs, col_probs)
    return pre, ad.mul(pre, ad.sigmoid(o_gate))


def payment_head(o_pay1, o_pay2, alloc, e, ad_mask) -> tuple[Node, Node]:
    """Per-advertiser payment pairs.

    The payment fraction is sigmoid(mean over slots of the payment head);
    each component pays that fraction of its realized bid-weighted expected
    CTR, so truthful utility is nonnegative for any head values. Returns
    (pay_frac (..., N, 2), payments (..., N, 2)); organic rows are zero.
    """
    frac1 = ad.sigmoid(ad.mean(o_pay1, axis=-1))
    frac2 = ad.sigmoid(ad.mean(o_pay2, axis=-1))
    spend1 = ad.sum_(ad.mul(alloc, ad.getitem(e, (Ellipsis, 0))), axis=-1)
    spend2 = ad.sum_(ad.mul(alloc, ad.getitem(e, (Ellipsis, 1))), axis=-1)
    mask = ad._value(ad_mask)
    pay1 = ad.mul(ad.mul(frac1, spend1), mask)
    pay2 = ad.mul(ad.mul(frac2, spend2), mask)
    b, n = pay1.value.shape
    frac = ad.concat([ad.reshape(frac1, (b, n, 1)), ad.reshape(frac2, (b, n, 1))], axis=-1)
    pay = ad.concat([ad.reshape(pay1, (b, n, 1)), ad.reshape(pay2, (b, n, 1))], axis=-1)
    return frac, pay


def _assignment_value(weights: np.ndarray) -> float:
    if min(weights.shape) == 0:
        return 0.0
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum())


def round_allocation(soft: np.ndarray) -> np.ndarray:
    """Deterministic assignment with maximum total soft probability.

    Solves the maximum-weight bipartite matching of items to slots with every
    slot matched. Among maximizers, picks the one whose chosen (item, slot)
    cells come earliest in lexicographic order, fixing cells greedily and
    re-solving the remainder.
    """
    soft = np.asarray(soft, dtype=float)
    n, k = soft.shape
    if k > n:
        raise DomainError(f"cannot assign {k} slots to {n} items")
    best = _assignment_value(soft)
    tol = 1e-12 * max(1.0, abs(best))
    free_rows = np.ones(n, dtype=bool)
    free_cols = np.ones(k, dtype=bool)
    fixed_value = 0.0
    hard = np.zeros((n, k), dtype=np.int64)
    n_fixed = 0
    for i in range(n):
        if n_fixed == k:
            break
        if not free_rows[i]:
            continue
        for kk in range(k):
            if not free_cols[kk]:
                continue
            rows = np.nonzero(free_rows)[0]
            cols = np.nonzero(free_cols)[0]
            sub = soft[np.ix_(rows[rows != i], cols[cols != kk])]
            completion = _assignment_value(sub)
            if fixed_value + soft[i, kk] + completion >= best - tol:
                hard[i, kk] = 1
                fixed_value += soft[i, kk]
                free_rows[i] = False
                free_cols[kk] = False
                n_fixed += 1
                break
    return hard


# ---------------------------------------------------------------------------
# Full network
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    """Graph nodes of one forward pass."""

    alloc: Node          # (B, N, K) final soft allocation
    pre_alloc: Node      # (B, N, K) before the sigmoid gate
    exp_ctr: Node        # (B, N) expected CTR per item
    pay: Node            # (B, N, 2) payments, organic rows zero
    pay_frac: Node       # (B, N, 2) payment fractions
    e: Node              # (B, N, K, 2) raw bid features
    heads: Node          # (B, N, K, 5) encoder output
    rq_codes: np.ndarray | None = None


class AuctionNetwork:
    """The trainable joint auction mechanism."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.cfg = config
        self.store = ParameterStore(dtype=np.dtype(config.dtype))
        rng = np.random.default_rng(seed)
        self.extractor = AdaptiveExtractor(
            d_ctx=config.d_ctx, d_code=config.d_code, d_ue=config.d_ue, d_feat=config.d_feat,
            codebook_size=config.codebook_size, rq_depth=config.rq_depth,
            use_quantizer=config.use_quantizer, shared_codebook=config.shared_codebook,
        )
        self.encoder = CellEncoder(config)
        self.extractor.init_params(self.store, rng)
        self.encoder.init_params(self.store, rng)

    def trainable_names(self, include_frozen_front_end: bool = True) -> list[str]:
        names = [n for n in self.store.names() if ".codebook." not in n]
        if not include_frozen_front_end:
            names = [n for n in names if not n.startswith("aem.decoder.")]
        return names

    def forward(self, batch: InstanceBatch, bids=None, nodes: dict[str, Node] | None = None,
                frozen: bool = False) -> ForwardResult:
        """Run the mechanism on a batch; ``bids`` defaults to truthful values.

        Pass a Node for ``bids`` to obtain gradients with respect to reports.
        With ``frozen=True`` parameters enter as plain constants, skipping all
        parameter-gradient work (misreport search, evaluation).
        """
        cfg = self.cfg
        if batch.ctx.shape[-1] != cfg.d_ctx:
            raise DimensionError(f"context dim {batch.ctx.shape[-1]} does not match model d_ctx {cfg.d_ctx}")
        batch = batch.astype(self.store.dtype)
        if bids is None:
            bids = batch.bids
        if nodes is None:
            nodes = dict(self.store.params) if frozen else self.store.nodes()
        e, z, t = self.extractor.build_features(nodes, batch.alphas, bids, batch.ue, batch.ctx, batch.comp_mask)
        rq_codes = None
        if cfg.use_quantizer:
            rq = rq_quantize(e.value, self.extractor.codebooks(self.store), cfg.rq_depth)
            e_stack = ad.straight_through(rq.quantized, e)
            rq_codes = rq.codes
        else:
            e_stack = e
        t_feat = self.extractor.assemble(nodes, e_stack, z, t, e, batch.ue, batch.alphas)
        heads = self.encoder.forward(nodes, t_feat)
        o_row = ad.getitem(heads, (Ellipsis, 0))
        o_col = ad.getitem(heads, (Ellipsis, 1))
        o_gate = ad.getitem(heads, (Ellipsis, 2))
        o_pay1 = ad.getitem(heads, (Ellipsis, 3))
        o_pay2 = ad.getitem(heads, (Ellipsis, 4))
        pre, alloc = allocation_head(o_row, o_col, o_gate)
        exp_ctr = ad.sum_(ad.mul(alloc, batch.alphas[:, None, :]), axis=-1)
        frac, pay = payment_head(o_pay1, o_pay2, alloc, e, batch.ad_mask)
        return ForwardResult(alloc=alloc, pre_alloc=pre, exp_ctr=exp_ctr, pay=pay,
                             pay_frac=frac, e=e, heads=heads, rq_codes=rq_codes)

    def outcome(self, instance: AuctionInstance, bids=None, deterministic: bool = False) -> Outcome:
        batch = InstanceBatch.from_instances([instance])
        if bids is not None:
            arr = np.zeros_like(batch.bids)
            arr[0, : instance.m] = np.array([p.as_array() for p in bids]).reshape(instance.m, 2)
            bids = arr
        res = self.forward(batch, bids=bids, frozen=True)
        return self._outcome_from_arrays(instance, res.alloc.value[0], res.pay.value[0],
                                         res.pay_frac.value[0], res.e.value[0], deterministic)

    def _outcome_from_arrays(self, instance, soft, pay, frac, e, deterministic: bool) -> Outcome:
        m = instance.m
        if deterministic:
            hard = round_allocation(soft)
            spend = np.einsum("nk,nkj->nj", hard.astype(float), e)
            payments = (frac * spend)[:m]
            return Outcome(soft_alloc=hard.astype(float), payments=payments, hard_alloc=hard)
        return Outcome(soft_alloc=soft, payments=pay[:m])

    def mechanism(self, deterministic: bool = False) -> "NetworkMechanism":
        return NetworkMechanism(self, deterministic=deterministic)

    # -- persistence ----------------------------------------------------------

    def save(self, path, meta: dict | None = None) -> None:
        merged = {"model_config": self.cfg.to_dict()}
        if meta:
            merged.update(meta)
        self.store.save(path, config_digest=config_digest(self.cfg.to_dict()), meta=merged)

    @classmethod
    def load(cls, path) -> "AuctionNetwork":
        store, header = ParameterStore.load(path)
        cfg = ModelConfig.from_dict(header["meta"]["model_config"])
        net = cls(cfg, seed=0)
        for name in list(net.store.names()):
            net.store[name] = store[name]
            net.store.adam_m[name] = store.adam_m[name]
            net.store.adam_v[name] = store.adam_v[name]
        net.store.step = store.step
        net.store.lam = store.lam
        net.store.rho = store.rho
        return net


def config_digest(obj: dict) -> str:
    import hashlib
    import json

    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()[:16]


class NetworkMechanism(Mechanism):
    """Adapter exposing the network through the mechanism contract."""

    name = "jeanet"

    def __init__(self, net: AuctionNetwork, deterministic: bool = False):
        self.net = net
        self.deterministic = deterministic

    def run(self, instance: AuctionInstance, bids=None) -> Outcome:
        return self.net.outcome(instance, bids=bids, deterministic=self.deterministic)

    def evaluate_bid_profiles(self, instance: AuctionInstance, profiles) -> list[Outcome]:
        base = InstanceBatch.from_instances([instance] * len(profiles))
        for i, prof in enumerate(profiles):
            base.bids[i, : instance.m] = np.array([p.as_array() for p in prof]).reshape(instance.m, 2)
        res = self.net.forward(base, frozen=True)
        outs = []
        for i in range(len(profiles)):
            outs.append(self.net._outcome_from_arrays(
                instance, res.alloc.value[i], res.pay.value[i], res.pay_frac.value[i],
                res.e.value[i], self.deterministic))
        return outs
