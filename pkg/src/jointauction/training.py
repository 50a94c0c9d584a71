"""Constrained training of the differentiable auction mechanism.

Training alternates two phases. The front-end phase fits the decoder and the
EMA codebook with the reconstruction + commitment loss; those parameters are
then frozen. The mechanism phase minimizes an augmented Lagrangian

    C(w; lambda) = -mean(revenue + gamma * user_experience)
                   + sum_i lambda_i * rgt_i + (rho / 2) * sum_i rgt_i^2

where rgt_i is the empirical ex-post regret of advertiser slot i, estimated
each iteration by projected gradient ascent over type-constrained misreport
boxes (one truthful restart, optional warm-started and random restarts, all
evaluated jointly in a single batched pass). Multipliers grow by
lambda_i += rho * rgt_i on a fixed period and the penalty weight rho grows
geometrically up to a cap.

Misreport search always evaluates the truthful bid, so estimated regret is
nonnegative by construction; evaluation-grade searches use the same seeded
restart stream as training-grade ones, so spending more restarts or steps can
only find more regret.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node, backward
from .core import (
    AuctionInstance,
    BidPair,
    Mechanism,
    RegretReport,
    truthful_bids,
)
from .datagen import Dataset
from .errors import ConfigError, DomainError, NumericError
from .extraction import AdaptiveExtractor, ema_update, quantization_losses, rq_quantize
from .network import AuctionNetwork, InstanceBatch, ModelConfig, NetworkMechanism, group_by_shape


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of the constrained training loop."""

    gamma: float = 0.5
    beta: float = 0.25
    iterations: int = 30000
    batch_size: int = 128
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # Inner misreport search (training grade).
    misreport_steps: int = 25
    misreport_lr: float = 0.1
    misreport_restarts: int = 10
    warm_start_misreports: bool = True
    # Lagrangian schedule.
    lambda_period: int = 100
    rho_init: float = 1.0
    rho_growth: float = 2.0
    rho_period_epochs: int = 2
    rho_max: float = 64.0
    # Front-end pretraining.
    aem_epochs: int = 5
    aem_lr: float = 1e-3
    # Evaluation windows (evaluation grade misreport search).
    eval_every: int = 500
    eval_samples: int = 512
    eval_misreport_steps: int = 30
    eval_misreport_restarts: int = 12
    seed: int = 0
    precision: str = "float64"

    def __post_init__(self):
        for name in ("gamma", "beta", "iterations", "batch_size", "lr", "misreport_steps",
                     "misreport_lr", "misreport_restarts", "lambda_period", "rho_init",
                     "rho_growth", "rho_period_epochs", "rho_max", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train config field {name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        bad = set(obj) - set(cls.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown train config fields: {sorted(bad)}")
        return cls(**obj)


@dataclass
class MisreportResult:
    """Best found misreports and utilities for a batch of advertisers."""

    best_bids: np.ndarray     # (B, M, 2)
    best_utility: np.ndarray  # (B, M)
    truthful_utility: np.ndarray  # (B, M)
    active: np.ndarray        # (B, M) 1.0 where the advertiser exists

    def regrets(self) -> np.ndarray:
        return np.maximum(0.0, self.best_utility - self.truthful_utility) * self.active


# ---------------------------------------------------------------------------
# Batched misreport search against the network
# ---------------------------------------------------------------------------


def _scatter_candidates(batch: InstanceBatch, candidates: np.ndarray) -> tuple[InstanceBatch, np.ndarray]:
    """Build the joint evaluation batch for per-advertiser misreports.

    ``candidates`` is (R, B, M, 2). Row (r, b, i) of the result is instance b
    with advertiser i's bid replaced by candidates[r, b, i]; everything else
    stays truthful. Returns the tiled batch and the flat bids (R*B*M, N, 2).
    """
    r, b, m, _ = candidates.shape
    n = batch.n_items
    bids = np.broadcast_to(batch.bids[None, :, None], (r, b, m, n, 2)).copy()
    ar = np.arange(m)
    bids[:, :, ar, ar, :] = candidates
    flat = bids.reshape(r * b * m, n, 2)

    def rep(a):
        return np.broadcast_to(a[None, :, None], (r, b, m) + a.shape[1:]).reshape((r * b * m,) + a.shape[1:]).copy()

    mega = InstanceBatch(rep(batch.alphas), flat, rep(batch.ue), rep(batch.ctx),
                         rep(batch.comp_mask), rep(batch.ad_mask), rep(batch.n_ads))
    return mega, flat


class _MisreportWorkspace:
    """Preassembled tiled inputs for the joint misreport evaluation pass.

    Row (r, b, i) of the tiled batch is instance b with advertiser i's bid
    replaced by candidate (r, b, i); only those bid cells change between
    inner-loop steps, so everything else is tiled once.
    """

    def __init__(self, batch: InstanceBatch, restarts: int, dtype=np.float64):
        batch = batch.astype(dtype)
        self.batch = batch
        r, bsz, m, n = restarts, batch.size, batch.max_ads, batch.n_items
        self.shape = (r, bsz, m)
        self.n = n

        def rep(a):
            tiled = np.broadcast_to(a[None, :, None], (r, bsz, m) + a.shape[1:])
            return tiled.reshape((r * bsz * m,) + a.shape[1:]).copy()

        self._bids = np.broadcast_to(batch.bids[None, :, None], (r, bsz, m, n, 2)).copy()
        self.mega = InstanceBatch(
            rep(batch.alphas), self._bids.reshape(r * bsz * m, n, 2), rep(batch.ue),
            rep(batch.ctx), rep(batch.comp_mask), rep(batch.ad_mask), rep(batch.n_ads),
        )
        self._ar = np.arange(m)
        vtot = batch.bids.sum(-1)
        self._vtot = np.broadcast_to(vtot[None, :, None], (r, bsz, m, n)).reshape(-1, n).copy()
        sel = np.zeros((m, n), dtype=dtype)
        sel[self._ar, self._ar] = 1.0
        self._sel = np.broadcast_to(sel[None, None], (r, bsz, m, n)).reshape(-1, n).copy()

    def utilities(self, net: AuctionNetwork, candidates: np.ndarray,
                  need_grad: bool) -> tuple[np.ndarray, np.ndarray | None]:
        r, bsz, m = self.shape
        self._bids[:, :, self._ar, self._ar, :] = candidates
        flat = self.mega.bids  # view of self._bids
        bids_in = Node(flat) if need_grad else flat
        with ad.no_finite_check():
            res = net.forward(self.mega, bids=bids_in, frozen=True)
            pay_tot = ad.sum_(res.pay, axis=-1)
            util_rows = ad.sub(ad.mul(res.exp_ctr, self._vtot), pay_tot)
            util_sel = ad.sum_(ad.mul(util_rows, self._sel), axis=-1)
            utils = util_sel.value.reshape(r, bsz, m).copy()
            grads = None
            if need_grad:
                backward(ad.sum_(util_sel))
                g = bids_in.grad.reshape(r, bsz, m, self.n, 2)
                grads = g[:, :, self._ar, self._ar, :].copy()
        if not np.isfinite(utils).all():
            raise NumericError("non-finite misreport utility")
        return utils, grads


def optimize_misreports_batch(
    net: AuctionNetwork,
    batch: InstanceBatch,
    steps: int,
    lr: float,
    restarts: int,
    seed: int,
    value_domain: tuple[float, float] = (0.0, 1.0),
    warm_start: np.ndarray | None = None,
) -> MisreportResult:
    """Projected gradient-ascent misreport search, jointly over a batch.

    Restart 0 is the truthful bid; restart 1 an optional warm start; the rest
    are uniform draws in the type-constrained box. The best utility over every
    evaluation (including the initial truthful one) is returned, so the result
    is never below the truthful utility.
    """
    if restarts < 1 or steps < 0:
        raise ConfigError("need restarts >= 1 and steps >= 0")
    b = batch.size
    m = batch.max_ads
    lo, hi = value_domain
    comp = batch.comp_mask[:, :m, :]
    active = batch.ad_mask[:, :m].copy()
    truthful = batch.bids[:, :m, :].copy()
    if m == 0:
        z = np.zeros((b, 0))
        return MisreportResult(np.zeros((b, 0, 2)), z, z, z)

    rng = np.random.default_rng(seed)
    cand = np.empty((restarts, b, m, 2))
    cand[0] = truthful
    nxt = 1
    if warm_start is not None and restarts > 1:
        cand[1] = warm_start
        nxt = 2
    if restarts > nxt:
        cand[nxt:] = rng.uniform(lo, hi, size=(restarts - nxt, b, m, 2))
    cand = np.clip(cand, lo, hi) * comp[None]

    best_u = np.full((b, m), -np.inf)
    best_bids = truthful.copy()
    u_truth = np.zeros((b, m))
    workspace = _MisreportWorkspace(batch, restarts, dtype=net.store.dtype)
    # Adam-style normalized ascent: step size is roughly lr per iteration,
    # which searches the box far better than raw-gradient steps.
    mom = np.zeros_like(cand)
    sq = np.zeros_like(cand)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(steps + 1):
        need_grad = step < steps
        utils, grads = workspace.utilities(net, cand, need_grad)
        if step == 0:
            u_truth = utils[0].copy()
        r_star = utils.argmax(axis=0)
        u_star = np.take_along_axis(utils, r_star[None], axis=0)[0]
        cand_star = np.take_along_axis(cand, r_star[None, :, :, None], axis=0)[0]
        improved = u_star > best_u
        best_u = np.where(improved, u_star, best_u)
        best_bids = np.where(improved[..., None], cand_star, best_bids)
        if need_grad:
            mom = b1 * mom + (1 - b1) * grads
            sq = b2 * sq + (1 - b2) * grads * grads
            t = step + 1
            update = (mom / (1 - b1**t)) / (np.sqrt(sq / (1 - b2**t)) + eps)
            cand = np.clip(cand + lr * update, lo, hi) * comp[None]
    return MisreportResult(best_bids, best_u, u_truth, active)


# ---------------------------------------------------------------------------
# Generic-mechanism misreport search (numerical gradients)
# ---------------------------------------------------------------------------


def _utility_of(instance: AuctionInstance, outcome, i: int) -> float:
    value = instance.advertisers[i].value.as_array()
    ctr = float(outcome.soft_alloc[i] @ instance.slots.as_array())
    return float(value.sum() * ctr - outcome.payments[i].sum())


def optimize_misreports(
    mechanism: Mechanism | AuctionNetwork,
    instance: AuctionInstance,
    steps: int = 25,
    lr: float = 0.1,
    restarts: int = 10,
    seed: int = 0,
    value_domain: tuple[float, float] = (0.0, 1.0),
    fd_step: float = 1e-3,
) -> MisreportResult:
    """Per-instance misreport search.

    Differentiable mechanisms use exact bid gradients in one joint batched
    pass; other mechanisms fall back to central-difference gradients on the
    free bid components. The truthful bid is always part of the candidate
    set, so the reported utility never falls below the truthful one.
    """
    net = mechanism.net if isinstance(mechanism, NetworkMechanism) else mechanism
    if isinstance(net, AuctionNetwork):
        batch = InstanceBatch.from_instances([instance])
        return optimize_misreports_batch(net, batch, steps, lr, restarts, seed, value_domain)

    lo, hi = value_domain
    m = instance.m
    base = truthful_bids(instance)
    truth_out = mechanism.run(instance, base)
    best_bids = np.array([p.as_array() for p in base]).reshape(m, 2)
    u_truth = np.array([_utility_of(instance, truth_out, i) for i in range(m)])
    best_u = u_truth.copy()
    rng = np.random.default_rng(seed)
    for i in range(m):
        kind = instance.advertisers[i].kind
        comp = np.array([
            1.0 if kind in ("store", "joint") else 0.0,
            1.0 if kind in ("brand", "joint") else 0.0,
        ])
        free = np.nonzero(comp)[0]
        cand = np.empty((restarts, 2))
        cand[0] = best_bids[i]
        if restarts > 1:
            cand[1:] = rng.uniform(lo, hi, size=(restarts - 1, 2))
        cand = np.clip(cand, lo, hi) * comp

        def utilities(points: np.ndarray) -> np.ndarray:
            profiles = []
            for p in points:
                prof = list(base)
                prof[i] = BidPair(float(p[0]), float(p[1]))
                profiles.append(prof)
            outs = mechanism.evaluate_bid_profiles(instance, profiles)
            return np.array([_utility_of(instance, out, i) for out in outs])

        mom = np.zeros_like(cand)
        sq = np.zeros_like(cand)
        b1, b2, eps = 0.9, 0.999, 1e-8
        for step in range(steps + 1):
            u = utilities(cand)
            j = int(u.argmax())
            if u[j] > best_u[i]:
                best_u[i] = float(u[j])
                best_bids[i] = cand[j]
            if step == steps:
                break
            grad = np.zeros_like(cand)
            for dim in free:
                up = cand.copy()
                up[:, dim] = np.clip(up[:, dim] + fd_step, lo, hi)
                down = cand.copy()
                down[:, dim] = np.clip(down[:, dim] - fd_step, lo, hi)
                du = utilities(up) - utilities(down)
                span = up[:, dim] - down[:, dim]
                grad[:, dim] = np.where(span > 0, du / span, 0.0)
            mom = b1 * mom + (1 - b1) * grad
            sq = b2 * sq + (1 - b2) * grad * grad
            t = step + 1
            update = (mom / (1 - b1**t)) / (np.sqrt(sq / (1 - b2**t)) + eps)
            cand = np.clip(cand + lr * update, lo, hi) * comp
    active = np.ones((1, m))
    return MisreportResult(best_bids[None], best_u[None], u_truth[None], active)


# ---------------------------------------------------------------------------
# Lagrangian pieces
# ---------------------------------------------------------------------------


def c_rho_value(rev: float, ue: float, regrets: np.ndarray, lam: np.ndarray,
                rho: float, gamma: float) -> float:
    """Closed-form augmented Lagrangian value from its components."""
    regrets = np.asarray(regrets, dtype=float)
    lam = np.asarray(lam, dtype=float)[: regrets.size]
    return float(-(rev + gamma * ue) + lam @ regrets + 0.5 * rho * (regrets @ regrets))


def update_multipliers(lam: np.ndarray, regrets: np.ndarray, rho: float) -> np.ndarray:
    """lambda_i <- lambda_i + rho * rgt_i."""
    if rho <= 0:
        raise DomainError("rho must be positive")
    lam = np.asarray(lam, dtype=float)
    regrets = np.asarray(regrets, dtype=float)
    if lam.shape != regrets.shape:
        raise DomainError(f"multiplier shape {lam.shape} does not match regrets {regrets.shape}")
    return lam + rho * regrets


def lagrangian_loss(
    net: AuctionNetwork,
    batch: InstanceBatch,
    misreports: np.ndarray,
    lam: np.ndarray,
    rho: float,
    gamma: float,
    nodes: dict[str, Node] | None = None,
) -> tuple[Node, dict]:
    """Build the augmented Lagrangian graph for one batch.

    ``misreports`` is (B, M, 2), the fixed best-response bids from the inner
    loop. Returns the scalar loss node and a dict of detached diagnostics
    (rev, ue, score, regret vector).
    """
    if nodes is None:
        nodes = net.store.nodes()
    batch = batch.astype(net.store.dtype)
    b = batch.size
    m = batch.max_ads
    n = batch.n_items
    lam = np.asarray(lam, dtype=float)
    if lam.size < m:
        raise ConfigError(f"lambda has {lam.size} entries, batch needs {m}")

    res = net.forward(batch, nodes=nodes)
    rev = ad.sum_(res.pay, axis=(1, 2))
    ue_term = ad.sum_(ad.mul(res.exp_ctr, batch.ue), axis=1)
    objective = ad.neg(ad.mean(ad.add(rev, ad.mul(ue_term, gamma))))

    vtot = batch.bids.sum(-1)
    util_rows = ad.sub(ad.mul(res.exp_ctr, vtot), ad.sum_(res.pay, axis=-1))
    util_truth = ad.getitem(util_rows, (slice(None), slice(0, m)))

    mega, flat = _scatter_candidates(batch, misreports[None])
    res_mis = net.forward(mega, bids=flat, nodes=nodes)
    vtot_mis = np.broadcast_to(vtot[:, None], (b, m, n)).reshape(b * m, n)
    sel = np.zeros((m, n))
    sel[np.arange(m), np.arange(m)] = 1.0
    sel_flat = np.broadcast_to(sel[None], (b, m, n)).reshape(b * m, n)
    util_mis_rows = ad.sub(ad.mul(res_mis.exp_ctr, vtot_mis), ad.sum_(res_mis.pay, axis=-1))
    util_mis = ad.reshape(ad.sum_(ad.mul(util_mis_rows, sel_flat), axis=-1), (b, m))

    active = batch.ad_mask[:, :m]
    delta = ad.mul(ad.relu(ad.sub(util_mis, util_truth)), active)
    rgt = ad.mean(delta, axis=0)  # (M,)
    lam_t = lam[:m].astype(net.store.dtype)
    penalty = ad.add(ad.sum_(ad.mul(rgt, lam_t)), ad.mul(ad.sum_(ad.square(rgt)), 0.5 * rho))
    loss = ad.add(objective, penalty)
    parts = {
        "rev": float(rev.value.mean()),
        "ue": float(ue_term.value.mean()),
        "score": float(rev.value.mean() + gamma * ue_term.value.mean()),
        "regrets": rgt.value.copy(),
        "objective": float(objective.value),
    }
    return loss, parts


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    net: AuctionNetwork
    log: list[dict]
    config: TrainConfig
    wall_s: float


def _front_end_phase(net: AuctionNetwork, batch_all: InstanceBatch, cfg: TrainConfig,
                     rng: np.random.Generator) -> None:
    """Fit decoder and codebook on the bid-feature distribution, then freeze."""
    extractor = net.extractor
    if not extractor.use_quantizer:
        return
    n = batch_all.size
    n_batches = max(1, n // cfg.batch_size)
    decoder_names = [name for name in net.store.names() if name.startswith("aem.decoder.")]
    for _ in range(cfg.aem_epochs):
        perm = rng.permutation(n)
        for bi in range(n_batches):
            idx = perm[bi * cfg.batch_size: (bi + 1) * cfg.batch_size]
            sub = batch_all.subset(idx)
            masked = sub.bids * sub.comp_mask
            e_vals = masked[:, :, None, :] * sub.alphas[:, None, :, None]
            books = extractor.codebooks(net.store)
            state = rq_quantize(e_vals, books, extractor.rq_depth)
            nodes = net.store.nodes(decoder_names)
            e_node = Node(e_vals)
            decoded = extractor.decode(nodes, ad.straight_through(state.quantized, e_node))
            _, _, total = quantization_losses(e_vals, decoded, e_node, state.partial_sums, cfg.beta)
            backward(total)
            grads = {k: v.grad for k, v in nodes.items() if v.grad is not None}
            net.store.adam_step(grads, cfg.aem_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            if extractor.shared_codebook:
                cb = extractor.codebooks(net.store)[0]
                ema_update(cb, state, rng)
                extractor.write_codebook(net.store, 0, cb)
            else:
                from .extraction import RQState

                books = extractor.codebooks(net.store)
                for d in range(extractor.rq_depth):
                    sliced = RQState(codes=state.codes[d: d + 1],
                                     residuals=state.residuals[d: d + 2],
                                     partial_sums=state.partial_sums[d: d + 1])
                    ema_update(books[d], sliced, rng)
                    extractor.write_codebook(net.store, d, books[d])


def evaluate_network(net: AuctionNetwork, batch: InstanceBatch, gamma: float,
                     steps: int, restarts: int, lr: float, seed: int,
                     value_domain: tuple[float, float]) -> dict:
    """Metrics and gradient-based regret of the current network on a batch."""
    res = net.forward(batch, frozen=True)
    rev = res.pay.value.sum(axis=(1, 2))
    ue = (res.exp_ctr.value * batch.ue).sum(axis=1)
    mis = optimize_misreports_batch(net, batch, steps=steps, lr=lr, restarts=restarts,
                                    seed=seed, value_domain=value_domain)
    rgt = mis.regrets()
    n_active = max(1.0, mis.active.sum())
    return {
        "rev": float(rev.mean()),
        "ue": float(ue.mean()),
        "score": float(rev.mean() + gamma * ue.mean()),
        "mean_rgt": float(rgt.sum() / n_active),
        "max_rgt": float(rgt.max(initial=0.0)),
    }


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    train_set: Dataset,
    eval_set: Dataset | None = None,
    log_path=None,
    checkpoint_path=None,
) -> TrainResult:
    """Run both training phases and return the trained mechanism plus its log.

    The log holds one entry per evaluation window with keys
    iter/rev/ue/score/mean_rgt/max_rgt/lambda_mean/rho/wall_ms.
    """
    if not train_set.instances:
        raise ConfigError("training dataset is empty")
    if train_cfg.precision != model_cfg.dtype:
        model_cfg = replace(model_cfg, dtype=train_cfg.precision)
    groups = group_by_shape(train_set.instances)
    if len(groups) != 1:
        raise ConfigError("training requires a uniform-shape dataset")
    batch_all = groups[0][1].astype(np.dtype(train_cfg.precision))
    if train_cfg.batch_size > batch_all.size:
        raise ConfigError("batch size exceeds dataset size")
    value_domain = train_set.value_domain

    t0 = time.perf_counter()
    net = AuctionNetwork(model_cfg, seed=train_cfg.seed)
    rng = np.random.default_rng([train_cfg.seed, 1])
    m_max = batch_all.max_ads
    net.store.init_lambda(m_max)
    net.store.rho = train_cfg.rho_init

    _front_end_phase(net, batch_all, train_cfg, rng)

    eval_batch = None
    if eval_set is not None and eval_set.instances:
        eval_instances = eval_set.instances[: train_cfg.eval_samples]
        eval_batch = InstanceBatch.from_instances(eval_instances).astype(net.store.dtype)

    trainable = net.trainable_names(include_frozen_front_end=False)
    buffer = batch_all.bids[:, :m_max, :].copy() if train_cfg.warm_start_misreports else None
    iters_per_epoch = max(1, batch_all.size // train_cfg.batch_size)
    rho_period = train_cfg.rho_period_epochs * iters_per_epoch
    log: list[dict] = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None

    def emit(entry: dict):
        log.append(entry)
        if log_fh:
            log_fh.write(json.dumps(entry) + "\n")
            log_fh.flush()

    try:
        for it in range(1, train_cfg.iterations + 1):
            idx = rng.choice(batch_all.size, size=train_cfg.batch_size, replace=False)
            batch = batch_all.subset(idx)
            warm = buffer[idx] if buffer is not None else None
            mis = optimize_misreports_batch(
                net, batch, steps=train_cfg.misreport_steps, lr=train_cfg.misreport_lr,
                restarts=train_cfg.misreport_restarts, seed=int(rng.integers(2**31)),
                value_domain=value_domain, warm_start=warm,
            )
            if buffer is not None:
                buffer[idx] = mis.best_bids
            nodes = net.store.nodes()
            with ad.no_finite_check():
                loss, parts = lagrangian_loss(
                    net, batch, mis.best_bids, net.store.lam, net.store.rho,
                    train_cfg.gamma, nodes=nodes,
                )
            if not np.isfinite(loss.value):
                snapshot = {"iteration": it, "rho": net.store.rho,
                            "lambda_mean": float(net.store.lam.mean()), "parts": str(parts)}
                raise NumericError(f"non-finite training loss; diagnostics: {snapshot}")
            backward(loss)
            grads = {k: nodes[k].grad for k in trainable if nodes[k].grad is not None}
            net.store.adam_step(grads, train_cfg.lr, train_cfg.adam_beta1,
                                train_cfg.adam_beta2, train_cfg.adam_eps)
            if it % train_cfg.lambda_period == 0:
                pad = np.zeros(m_max)
                pad[: parts["regrets"].size] = parts["regrets"]
                net.store.lam = update_multipliers(net.store.lam, pad, net.store.rho)
            if it % rho_period == 0:
                net.store.rho = min(net.store.rho * train_cfg.rho_growth, train_cfg.rho_max)
            if eval_batch is not None and (it % train_cfg.eval_every == 0 or it == train_cfg.iterations):
                stats = evaluate_network(
                    net, eval_batch, train_cfg.gamma,
                    steps=train_cfg.eval_misreport_steps, restarts=train_cfg.eval_misreport_restarts,
                    lr=train_cfg.misreport_lr, seed=train_cfg.seed + 7,
                    value_domain=value_domain,
                )
                emit({"iter": it, **stats, "lambda_mean": float(net.store.lam.mean()),
                      "rho": net.store.rho, "wall_ms": int(1000 * (time.perf_counter() - t0))})
    finally:
        if log_fh:
            log_fh.close()
    wall = time.perf_counter() - t0
    if checkpoint_path:
        net.save(checkpoint_path, meta={"train_config": train_cfg.to_dict()})
    return TrainResult(net=net, log=log, config=train_cfg, wall_s=wall)


# ---------------------------------------------------------------------------
# Regret estimation
# ---------------------------------------------------------------------------


def estimate_regret(
    mechanism: Mechanism | AuctionNetwork,
    dataset: Dataset | list[AuctionInstance],
    steps: int = 25,
    lr: float = 0.1,
    restarts: int = 10,
    seed: int = 0,
    value_domain: tuple[float, float] | None = None,
    chunk_size: int = 512,
) -> RegretReport:
    """Gradient-based ex-post regret over a dataset.

    Mean and max aggregate over every (sample, advertiser) estimate;
    ``per_advertiser`` holds per-index means over the samples where that
    advertiser slot exists.
    """
    instances = dataset.instances if isinstance(dataset, Dataset) else list(dataset)
    if value_domain is None:
        value_domain = dataset.value_domain if isinstance(dataset, Dataset) else (0.0, 1.0)
    if not instances:
        raise DomainError("empty dataset")
    net = mechanism.net if isinstance(mechanism, NetworkMechanism) else mechanism
    all_regrets: list[np.ndarray] = []
    all_active: list[np.ndarray] = []
    if isinstance(net, AuctionNetwork):
        for _, batch in group_by_shape(instances):
            for start in range(0, batch.size, chunk_size):
                sub = batch.subset(np.arange(start, min(start + chunk_size, batch.size)))
                mis = optimize_misreports_batch(net, sub, steps, lr, restarts, seed, value_domain)
                all_regrets.append(mis.regrets())
                all_active.append(mis.active)
    else:
        for j, inst in enumerate(instances):
            mis = optimize_misreports(mechanism, inst, steps, lr, restarts,
                                      seed=seed + j, value_domain=value_domain)
            all_regrets.append(mis.regrets())
            all_active.append(mis.active)
    m_max = max(r.shape[1] for r in all_regrets)

    def pad(a):
        out = np.zeros((a.shape[0], m_max))
        out[:, : a.shape[1]] = a
        return out

    regrets = np.concatenate([pad(r) for r in all_regrets], axis=0)
    active = np.concatenate([pad(a) for a in all_active], axis=0)
    counts = np.maximum(active.sum(axis=0), 1.0)
    per_adv = regrets.sum(axis=0) / counts
    flat = regrets[active > 0]
    return RegretReport(
        method="gradient",
        per_advertiser=per_adv,
        mean=float(flat.mean()) if flat.size else 0.0,
        max=float(flat.max()) if flat.size else 0.0,
        n_samples=len(instances),
        details={"steps": steps, "restarts": restarts, "lr": lr},
    )
