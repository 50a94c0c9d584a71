"""Joint advertising auction laboratory.

A numpy/scipy implementation of externality-aware multi-slot joint auctions:
a trainable differentiable mechanism with residual-quantized bid features and
cross-item attention encoders, classical baselines (VCG, GSP with fixed
positions, Myerson-style ranking), synthetic and industrial data pipelines,
regret oracles, and a normalized experiment harness.
"""

from .core import (
    Advertiser,
    AuctionInstance,
    BidPair,
    Mechanism,
    Metrics,
    Outcome,
    OrganicItem,
    RegretReport,
    SlotProfile,
    check_feasibility,
    evaluate_metrics,
    expected_ctr,
    regret_grid_oracle,
    utility,
)
from .datagen import (
    Dataset,
    FixedSpec,
    RandomCountSpec,
    TruncatedLognormalMixture,
    TruncatedNormal,
    Uniform,
    generate_fixed,
    generate_random_count,
    ingest_logs,
    load_jsonl,
    sample_value,
    save_jsonl,
)
from .baselines import (
    GspConfig,
    GspFixedPositions,
    IasMechanism,
    VcgMechanism,
    myerson_virtual_value,
)
from .network import AuctionNetwork, InstanceBatch, ModelConfig, round_allocation
from .training import TrainConfig, estimate_regret, optimize_misreports, train
from .experiment import ExperimentConfig, paired_ttest, regret_audit, run_experiment

__version__ = "0.1.0"
