"""A short constrained training run (a few minutes on a laptop).

Phase one fits the quantizer codebook and decoder on bid features; phase two
minimizes the augmented Lagrangian: maximize revenue + gamma * user
experience subject to vanishing misreport regret, with multipliers updated
from the measured regret. Watch regret fall while the score climbs.
"""

from jointauction import ModelConfig, TrainConfig
from jointauction.datagen import generate_fixed
from jointauction.training import train

model_cfg = ModelConfig(d_code=6, d_ue=4, d_feat=24, d_hidden=12, n_heads=1,
                        n_layers=1, codebook_size=32, rq_depth=2, dtype="float32")
train_cfg = TrainConfig(
    iterations=600, batch_size=32, lr=2e-3,
    misreport_steps=2, misreport_restarts=2, misreport_lr=0.1,
    lambda_period=50, rho_init=1.0, rho_growth=2.0, rho_period_epochs=2, rho_max=32.0,
    aem_epochs=2, eval_every=150, eval_samples=128,
    eval_misreport_steps=6, eval_misreport_restarts=4,
    seed=0, precision="float32",
)

train_set = generate_fixed("A", 1024, seed=11)
test_set = generate_fixed("A", 256, seed=12)
result = train(model_cfg, train_cfg, train_set, eval_set=test_set)

print(f"done in {result.wall_s / 60:.1f} min")
for entry in result.log:
    print(f"iter {entry['iter']:4d}: rev={entry['rev']:.4f} ue={entry['ue']:.4f} "
          f"score={entry['score']:.4f} mean_rgt={entry['mean_rgt']:.5f} "
          f"rho={entry['rho']:.0f} lambda~{entry['lambda_mean']:.2f}")
print("longer budgets (see README) push mean regret under 1e-3")
