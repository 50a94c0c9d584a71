"""Calibration: train on setting A, track regret/score vs VCG."""
import json, sys, time
import numpy as np
from jointauction.baselines import VcgMechanism
from jointauction.core import evaluate_metrics
from jointauction.datagen import generate_fixed
from jointauction.network import AuctionNetwork, InstanceBatch, ModelConfig
from jointauction.training import TrainConfig, train, estimate_regret
from jointauction.experiment import evaluate_mechanism

tag = sys.argv[1]
model_cfg = ModelConfig(**json.loads(sys.argv[2]))
train_cfg = TrainConfig(**json.loads(sys.argv[3]))
n_train, n_test = int(sys.argv[4]), int(sys.argv[5])

train_set = generate_fixed("A", n_train, seed=11)
test_set = generate_fixed("A", n_test, seed=12)

vcg = VcgMechanism(gamma=0.5)
vcg_metrics = evaluate_metrics(evaluate_mechanism(vcg, test_set), test_set.instances, 0.5)
print(f"[{tag}] VCG: rev={vcg_metrics.rev:.4f} ue={vcg_metrics.ue:.4f} score={vcg_metrics.score:.4f}", flush=True)

t0 = time.perf_counter()
result = train(model_cfg, train_cfg, train_set, eval_set=test_set,
               log_path=f"calib/{tag}_log.jsonl", checkpoint_path=f"calib/{tag}.ckpt")
print(f"[{tag}] trained {train_cfg.iterations} iters in {result.wall_s/60:.1f} min", flush=True)
for e in result.log:
    print(f"[{tag}] iter={e['iter']} rev={e['rev']:.4f} ue={e['ue']:.4f} score={e['score']:.4f} "
          f"rgt={e['mean_rgt']:.5f} max={e['max_rgt']:.5f} lam={e['lambda_mean']:.3f} rho={e['rho']}", flush=True)

net = result.net
report = estimate_regret(net.mechanism(), test_set, steps=30, restarts=10, lr=0.1, seed=99)
jm = evaluate_metrics(evaluate_mechanism(net.mechanism(), test_set), test_set.instances, 0.5)
print(f"[{tag}] FINAL eval-grade regret mean={report.mean:.6f} max={report.max:.6f}", flush=True)
print(f"[{tag}] FINAL jeanet: rev={jm.rev:.4f} ue={jm.ue:.4f} score={jm.score:.4f}", flush=True)
print(f"[{tag}] score_norm = {jm.rev/vcg_metrics.rev + 0.5*jm.ue/vcg_metrics.ue:.4f} (vcg=1.5)", flush=True)
