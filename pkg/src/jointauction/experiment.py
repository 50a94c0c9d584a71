"""Experiment harness: evaluation protocol, normalized reports, audits.

Every mechanism in a run is evaluated on the same test set. SW/Rev/UE
columns are normalized by the anchor mechanism (vcg by default) and the
normalized score is ``rev_norm + gamma * ue_norm``, so the anchor row reads
(1, 1, 1, 1 + gamma). Score significance uses a paired t-test on per-sample
scores. Reports serialize to a fixed-column CSV and a JSON document carrying
the config digest and the baseline design flags in force.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.stats import t as student_t

from .baselines import (
    GspConfig,
    GspFixedPositions,
    IasMechanism,
    LognormalMixturePrior,
    TruncatedNormalPrior,
    UniformPrior,
    UniformSumPrior,
    VcgMechanism,
    fit_lognormal_prior,
    prior_from_distribution,
)
from .core import Mechanism, Outcome, RegretReport, evaluate_metrics, regret_grid_oracle, sample_metrics
from .datagen import (
    Dataset,
    TruncatedLognormalMixture,
    TruncatedNormal,
    Uniform,
    distribution_from_dict,
    generate_fixed,
    generate_random_count,
    ingest_logs,
    load_jsonl,
    FixedSpec,
    RandomCountSpec,
)
from .errors import ConfigError, NumericError
from .network import AuctionNetwork, ModelConfig, NetworkMechanism, group_by_shape
from .training import TrainConfig, TrainResult, estimate_regret, train

KNOWN_MECHANISMS = ("jeanet", "vcg", "gsp", "ias", "ablation:etm+dmm", "ablation:mlp+dmm")
CSV_COLUMNS = ("mechanism", "SW", "Rev", "UE", "Score",
               "SW_norm", "Rev_norm", "UE_norm", "Score_norm", "mean_rgt", "max_rgt")


def paired_ttest(scores_a, scores_b) -> tuple[float, float]:
    """Two-sided paired t-test on per-sample scores.

    Zero-variance differences: p = 1 when the mean difference is zero,
    otherwise p = 0 (a deterministic, nonzero shift).
    """
    a = np.asarray(scores_a, dtype=float)
    b = np.asarray(scores_b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ConfigError("paired t-test needs two equal-length vectors of size >= 2")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    t_stat = mean / (sd / math.sqrt(d.size))
    p = 2.0 * float(student_t.sf(abs(t_stat), df=d.size - 1))
    return float(t_stat), p


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Config document driving a run; mirrors the JSON accepted by the CLI."""

    dataset: dict = field(default_factory=lambda: {
        "kind": "fixed", "setting": "A", "train_samples": 4096, "test_samples": 1024, "seed": 0,
    })
    mechanisms: tuple[str, ...] = ("vcg", "gsp", "ias")
    anchor: str = "vcg"
    gamma: float = 0.5
    seed: int = 0
    threads: int = 1
    out_dir: str | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    gsp: dict = field(default_factory=dict)
    ias: dict = field(default_factory=dict)
    audit: dict = field(default_factory=lambda: {"enabled": False, "n_samples": 128, "grid_step": 0.05})
    checkpoints: dict = field(default_factory=dict)
    report: dict = field(default_factory=lambda: {"csv": "report.csv", "json": "report.json"})

    def __post_init__(self):
        self.mechanisms = tuple(self.mechanisms)
        for name in self.mechanisms:
            if name not in KNOWN_MECHANISMS:
                raise ConfigError(f"unknown mechanism {name!r}; known: {KNOWN_MECHANISMS}")
        if self.anchor not in self.mechanisms:
            raise ConfigError(f"anchor {self.anchor!r} must be in the mechanism list")
        if self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mechanisms"] = list(self.mechanisms)
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        bad = set(obj) - set(cls.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown experiment config fields: {sorted(bad)}")
        return cls(**obj)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")).hexdigest()[:16]


def build_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) datasets from the config's dataset block."""
    spec = dict(cfg.dataset)
    kind = spec.get("kind")
    seed = int(spec.get("seed", cfg.seed))
    n_train = int(spec.get("train_samples", 4096))
    n_test = int(spec.get("test_samples", 1024))
    bid_dist = distribution_from_dict(spec["bid_dist"]) if "bid_dist" in spec else Uniform()
    if kind == "fixed":
        setting = spec.get("setting", "A")
        return (generate_fixed(setting, n_train, seed, bid_dist),
                generate_fixed(setting, n_test, seed + 1, bid_dist))
    if kind == "random_count":
        rc = RandomCountSpec(n_slots=int(spec.get("n_slots", 4)), bid_dist=bid_dist)
        return (generate_random_count(rc, n_train, seed),
                generate_random_count(rc, n_test, seed + 1))
    if kind == "jsonl":
        dom = tuple(spec.get("value_domain", (0.0, 1.0)))
        return load_jsonl(spec["train_path"], dom), load_jsonl(spec["test_path"], dom)
    if kind == "industrial":
        dom = tuple(spec.get("value_domain", (0.0, 1.0)))
        common = dict(
            target_k=int(spec["target_k"]), max_ads=int(spec.get("max_ads", 10)),
            max_organics=int(spec.get("max_organics", 10)),
            ctrs_override=tuple(spec["ctrs"]) if "ctrs" in spec else None,
            value_domain=dom,
        )
        train_ds, _ = ingest_logs(spec["train_path"], **common)
        test_ds, _ = ingest_logs(spec["test_path"], **common)
        return train_ds, test_ds
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _ias_priors(cfg: ExperimentConfig, train_set: Dataset):
    mode = cfg.ias.get("priors", "match_bid_dist")
    if mode == "match_bid_dist":
        dist = distribution_from_dict(train_set.meta["bid_dist"]) if "bid_dist" in train_set.meta else Uniform()
        base = prior_from_distribution(dist)
        joint = UniformSumPrior(dist.hi) if isinstance(dist, Uniform) else base
        return {"store": base, "brand": base, "joint": joint}
    if mode == "fit_lognormal":
        lo, hi = train_set.value_domain
        pools = {"store": [], "brand": [], "joint": []}
        for inst in train_set.instances:
            for a in inst.advertisers:
                pools[a.kind].append(a.value.total)
        return {k: fit_lognormal_prior(np.array(v), lo, max(hi, 2 * hi if k == "joint" else hi))
                for k, v in pools.items()}
    raise ConfigError(f"unknown ias prior mode {mode!r}")


def build_baseline(name: str, cfg: ExperimentConfig, train_set: Dataset, n_slots: int) -> Mechanism:
    if name == "vcg":
        return VcgMechanism(gamma=cfg.gamma)
    if name == "gsp":
        positions = cfg.gsp.get("ad_positions")
        gsp_cfg = (GspConfig(tuple(positions), float(cfg.gsp.get("reserve", 0.0)))
                   if positions is not None else GspConfig.default(n_slots, float(cfg.gsp.get("reserve", 0.0))))
        return GspFixedPositions(gsp_cfg)
    if name == "ias":
        return IasMechanism(gamma=cfg.gamma, priors=_ias_priors(cfg, train_set))
    raise ConfigError(f"{name!r} is not a baseline")


def variant_model_config(base: dict, variant: str) -> ModelConfig:
    """Model config for the full network or one of its ablation variants."""
    cfg = dict(base)
    if variant == "jeanet":
        pass
    elif variant == "ablation:etm+dmm":
        cfg["use_quantizer"] = False
    elif variant == "ablation:mlp+dmm":
        cfg["use_quantizer"] = False
        cfg["encoder"] = "mlp"
    else:
        raise ConfigError(f"unknown network variant {variant!r}")
    return ModelConfig.from_dict(cfg)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------


@dataclass
class MechanismRow:
    name: str
    sw: float
    rev: float
    ue: float
    score: float
    sw_norm: float = math.nan
    rev_norm: float = math.nan
    ue_norm: float = math.nan
    score_norm: float = math.nan
    mean_rgt: float = math.nan
    max_rgt: float = math.nan


@dataclass
class ExperimentReport:
    rows: list[MechanismRow]
    ttests: dict[str, dict]
    gamma: float
    anchor: str
    config_digest: str
    runtime_s: float
    flags: dict = field(default_factory=dict)
    per_sample_scores: dict[str, np.ndarray] = field(default_factory=dict)
    train_logs: dict[str, list] = field(default_factory=dict)

    def row(self, name: str) -> MechanismRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            vals = (r.name, r.sw, r.rev, r.ue, r.score, r.sw_norm, r.rev_norm,
                    r.ue_norm, r.score_norm, r.mean_rgt, r.max_rgt)
            lines.append(",".join(v if isinstance(v, str) else f"{v:.10g}" for v in vals))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "anchor": self.anchor,
            "gamma": self.gamma,
            "config_digest": self.config_digest,
            "runtime_s": round(self.runtime_s, 3),
            "flags": self.flags,
            "rows": [asdict(r) for r in self.rows],
            "ttests": self.ttests,
        }
        return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)

    def write(self, out_dir, csv_name="report.csv", json_name="report.json") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / csv_name).write_text(self.to_csv(), encoding="utf-8")
        (out / json_name).write_text(self.to_json(), encoding="utf-8")


def normalize_rows(rows: list[MechanismRow], anchor: str, gamma: float) -> None:
    """Normalize SW/Rev/UE by the anchor row; normalized score is
    rev_norm + gamma * ue_norm, so the anchor row reads (1, 1, 1, 1 + gamma)."""
    anchor_row = next(r for r in rows if r.name == anchor)
    if min(abs(anchor_row.sw), abs(anchor_row.rev), abs(anchor_row.ue)) == 0.0:
        raise NumericError("anchor metrics contain zeros; normalization undefined")
    for r in rows:
        r.sw_norm = r.sw / anchor_row.sw
        r.rev_norm = r.rev / anchor_row.rev
        r.ue_norm = r.ue / anchor_row.ue
        r.score_norm = r.rev_norm + gamma * r.ue_norm


def evaluate_mechanism(mechanism: Mechanism, test_set: Dataset) -> list[Outcome]:
    """Outcomes of a mechanism over a dataset (batched for networks)."""
    instances = test_set.instances
    if isinstance(mechanism, NetworkMechanism):
        outcomes: list[Outcome | None] = [None] * len(instances)
        for idxs, batch in group_by_shape(instances):
            res = mechanism.net.forward(batch, frozen=True)
            for pos, orig in enumerate(idxs):
                outcomes[orig] = mechanism.net._outcome_from_arrays(
                    instances[orig], res.alloc.value[pos], res.pay.value[pos],
                    res.pay_frac.value[pos], res.e.value[pos], mechanism.deterministic)
        return outcomes
    return [mechanism.run(inst) for inst in instances]


def run_experiment(cfg: ExperimentConfig, datasets: tuple[Dataset, Dataset] | None = None) -> ExperimentReport:
    """Evaluate every configured mechanism on a shared test set."""
    t0 = time.perf_counter()
    train_set, test_set = datasets if datasets is not None else build_datasets(cfg)
    n_slots = test_set.instances[0].k if test_set.instances else 3

    mechanisms: dict[str, Mechanism] = {}
    train_logs: dict[str, list] = {}
    for name in cfg.mechanisms:
        if name in ("vcg", "gsp", "ias"):
            mechanisms[name] = build_baseline(name, cfg, train_set, n_slots)
        else:
            if name in cfg.checkpoints:
                net = AuctionNetwork.load(cfg.checkpoints[name])
            else:
                model_cfg = variant_model_config(cfg.model, name)
                train_cfg = TrainConfig.from_dict({"seed": cfg.seed, "gamma": cfg.gamma, **cfg.train})
                result = train(model_cfg, train_cfg, train_set, eval_set=test_set)
                net = result.net
                train_logs[name] = result.log
            mechanisms[name] = net.mechanism()

    rows = []
    per_scores: dict[str, np.ndarray] = {}
    audits: dict[str, RegretReport] = {}
    for name, mech in mechanisms.items():
        try:
            outcomes = evaluate_mechanism(mech, test_set)
            metrics = evaluate_metrics(outcomes, test_set.instances, cfg.gamma)
        except Exception:
            if name == cfg.anchor:
                raise NumericError(f"anchor mechanism {name!r} failed to evaluate")
            raise
        per = sample_metrics(outcomes, test_set.instances)
        per_scores[name] = per["rev"] + cfg.gamma * per["ue"]
        row = MechanismRow(name=name, sw=metrics.sw, rev=metrics.rev, ue=metrics.ue, score=metrics.score)
        if cfg.audit.get("enabled", False):
            audits[name] = regret_audit(
                mech, test_set, grid_step=float(cfg.audit.get("grid_step", 0.05)),
                n_samples=int(cfg.audit.get("n_samples", 128)), seed=cfg.seed,
            )
            row.mean_rgt = audits[name].mean
            row.max_rgt = audits[name].max
        rows.append(row)

    normalize_rows(rows, cfg.anchor, cfg.gamma)

    ttests = {}
    names = list(mechanisms)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            t_stat, p = paired_ttest(per_scores[a], per_scores[b])
            ttests[f"{a}|{b}"] = {
                "t": t_stat, "p": p,
                "mean_diff": float(per_scores[a].mean() - per_scores[b].mean()),
            }

    flags = {
        "vcg_ue_weighted_welfare": True,
        "gsp_ad_positions": list(cfg.gsp.get("ad_positions", GspConfig.default(n_slots).ad_positions)),
        "ias_priors": cfg.ias.get("priors", "match_bid_dist"),
        "joint_bid_scalarization": "total",
        "payment_split": "proportional_to_bid_components",
    }
    report = ExperimentReport(
        rows=rows, ttests=ttests, gamma=cfg.gamma, anchor=cfg.anchor,
        config_digest=cfg.digest(), runtime_s=time.perf_counter() - t0, flags=flags,
        per_sample_scores=per_scores, train_logs=train_logs,
    )
    if cfg.out_dir:
        report.write(cfg.out_dir, cfg.report.get("csv", "report.csv"), cfg.report.get("json", "report.json"))
    return report


def run_ablation(cfg: ExperimentConfig, variant: str) -> ExperimentReport:
    """Train and evaluate one ablation variant alongside the anchor."""
    if variant not in ("ablation:etm+dmm", "ablation:mlp+dmm"):
        raise ConfigError(f"unknown ablation variant {variant!r}")
    mechs = tuple(dict.fromkeys((cfg.anchor, variant)))
    sub = ExperimentConfig.from_dict({**cfg.to_dict(), "mechanisms": list(mechs)})
    return run_experiment(sub)


def regret_audit(
    mechanism: Mechanism,
    dataset: Dataset,
    grid_step: float = 0.05,
    n_samples: int = 128,
    seed: int = 0,
    gradient_steps: int = 25,
    gradient_restarts: int = 10,
    flag_gap: float = 0.002,
) -> RegretReport:
    """Estimate regret by gradient ascent and by grid search; flag disagreement.

    The grid oracle runs on a subsample for tractability; the report's
    headline numbers come from the gradient estimate, with the grid results
    and a ``grid_exceeds_gradient`` flag in ``details``.
    """
    instances = dataset.instances[:n_samples]
    sub = Dataset(instances, dict(dataset.meta))
    grad_report = estimate_regret(
        mechanism, sub, steps=gradient_steps, restarts=gradient_restarts,
        seed=seed, value_domain=dataset.value_domain,
    )
    grid_vals = []
    for inst in instances:
        for i in range(inst.m):
            grid_vals.append(regret_grid_oracle(mechanism, inst, i, grid_step, dataset.value_domain))
    grid_arr = np.asarray(grid_vals) if grid_vals else np.zeros(1)
    grad_report.method = "gradient+grid"
    grad_report.details.update({
        "grid_mean": float(grid_arr.mean()),
        "grid_max": float(grid_arr.max()),
        "grid_step": grid_step,
        "grid_exceeds_gradient": bool(grid_arr.mean() > grad_report.mean + flag_gap),
    })
    return grad_report
