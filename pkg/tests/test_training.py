"""Misreport search, augmented Lagrangian, training loop, regret estimation."""

import numpy as np
import pytest

from jointauction.baselines import VcgMechanism
from jointauction.core import regret_grid_oracle
from jointauction.datagen import Dataset, generate_fixed
from jointauction.errors import ConfigError, DomainError
from jointauction.network import AuctionNetwork, InstanceBatch, ModelConfig
from jointauction.training import (
    TrainConfig,
    c_rho_value,
    estimate_regret,
    evaluate_network,
    lagrangian_loss,
    optimize_misreports,
    optimize_misreports_batch,
    train,
    update_multipliers,
)

from conftest import HalfPayMechanism, make_ad, make_instance, make_org

TINY_CFG = ModelConfig(d_code=8, d_ue=4, d_feat=16, d_hidden=8, n_heads=2,
                       n_layers=1, codebook_size=16, rq_depth=2)


class TestMultipliers:
    def test_formula(self):
        np.testing.assert_allclose(update_multipliers(np.array([0.1]), np.array([0.05]), 1.0), [0.15])

    def test_zero_regret_unchanged(self):
        lam = np.array([0.3, 0.7])
        np.testing.assert_array_equal(update_multipliers(lam, np.zeros(2), 2.0), lam)

    def test_vectorized_matches_scalar(self):
        lam = np.array([0.1, 0.2, 0.3])
        rgt = np.array([0.0, 0.05, 0.5])
        got = update_multipliers(lam, rgt, 4.0)
        for i in range(3):
            assert got[i] == update_multipliers(lam[i: i + 1], rgt[i: i + 1], 4.0)[0]

    def test_rho_positive_required(self):
        with pytest.raises(DomainError):
            update_multipliers(np.zeros(1), np.zeros(1), 0.0)


class TestCRho:
    def test_hand_example(self):
        # -(0.3 + 0.5*0.4) + 0.2*0.1 + 0.5*1*0.01 = -0.475.
        got = c_rho_value(rev=0.3, ue=0.4, regrets=np.array([0.1]), lam=np.array([0.2]),
                          rho=1.0, gamma=0.5)
        assert got == pytest.approx(-0.475)

    def test_zero_regret_is_negated_objective(self):
        got = c_rho_value(0.3, 0.4, np.zeros(3), np.ones(3), rho=8.0, gamma=0.5)
        assert got == pytest.approx(-0.5)

    def test_monotone_in_rho(self):
        lo = c_rho_value(0.3, 0.4, np.array([0.1]), np.array([0.0]), rho=1.0, gamma=0.5)
        hi = c_rho_value(0.3, 0.4, np.array([0.1]), np.array([0.0]), rho=2.0, gamma=0.5)
        assert hi > lo


class TestLagrangianGraph:
    def test_matches_closed_form(self):
        net = AuctionNetwork(TINY_CFG, seed=0)
        ds = generate_fixed("A", 8, seed=1)
        batch = InstanceBatch.from_instances(ds.instances)
        mis = optimize_misreports_batch(net, batch, steps=2, lr=0.1, restarts=2, seed=0)
        lam = np.full(batch.max_ads, 0.25)
        loss, parts = lagrangian_loss(net, batch, mis.best_bids, lam, rho=2.0, gamma=0.5)
        expect = c_rho_value(parts["rev"], parts["ue"], parts["regrets"], lam, 2.0, 0.5)
        assert float(loss.value) == pytest.approx(expect, abs=1e-10)

    def test_descent_without_penalty(self):
        # One tiny plain-gradient step on the unpenalized objective cannot
        # increase -(rev + gamma * ue) on the same batch and misreports.
        net = AuctionNetwork(TINY_CFG, seed=1)
        ds = generate_fixed("A", 16, seed=2)
        batch = InstanceBatch.from_instances(ds.instances)
        mis = optimize_misreports_batch(net, batch, steps=1, lr=0.1, restarts=2, seed=1)
        lam = np.zeros(batch.max_ads)
        from jointauction.autodiff import backward

        nodes = net.store.nodes()
        loss, parts = lagrangian_loss(net, batch, mis.best_bids, lam, rho=1e-12, gamma=0.5, nodes=nodes)
        before = parts["objective"]
        backward(loss)
        grads = {k: nodes[k].grad for k in net.trainable_names() if nodes[k].grad is not None}
        net.store.sgd_step(grads, lr=1e-5)
        _, parts_after = lagrangian_loss(net, batch, mis.best_bids, lam, rho=1e-12, gamma=0.5)
        assert parts_after["objective"] <= before + 1e-12


class TestMisreportSearch:
    def test_vcg_stays_truthful(self):
        mech = VcgMechanism(gamma=0.5)
        inst = make_instance(
            [make_ad("store", 0.7, 0.0, 0.1), make_ad("joint", 0.3, 0.4, 0.3)],
            [make_org(0.8), make_org(0.6)], ctrs=(0.5, 0.3))
        res = optimize_misreports(mech, inst, steps=4, lr=0.2, restarts=4, seed=0)
        assert (res.best_utility <= res.truthful_utility + 1e-6).all()
        assert res.regrets().max() <= 1e-9

    def test_half_pay_finds_zero_bid(self):
        inst = make_instance([make_ad("store", 0.8, 0.0)], [], ctrs=(0.5,))
        res = optimize_misreports(HalfPayMechanism(), inst, steps=40, lr=0.5, restarts=4, seed=0)
        # Analytic optimum: bid zero, utility alpha * v = 0.4.
        assert res.best_utility[0, 0] == pytest.approx(0.4, abs=1e-3)
        assert res.best_bids[0, 0, 0] == pytest.approx(0.0, abs=5e-3)

    def test_never_below_truthful(self):
        net = AuctionNetwork(TINY_CFG, seed=2)
        batch = InstanceBatch.from_instances(generate_fixed("B", 12, seed=3).instances)
        res = optimize_misreports_batch(net, batch, steps=3, lr=0.2, restarts=3, seed=5)
        assert (res.best_utility >= res.truthful_utility - 1e-9).all()

    def test_gradient_vs_grid_oracle(self):
        # Gradient search should not trail a 0.05 grid by more than 0.005.
        net = AuctionNetwork(TINY_CFG, seed=3)
        ds = generate_fixed("A", 100, seed=4)
        batch = InstanceBatch.from_instances(ds.instances)
        res = optimize_misreports_batch(net, batch, steps=25, lr=0.1, restarts=10, seed=6)
        grad_rgt = res.regrets()
        mech = net.mechanism()
        for s in range(0, batch.size, 9):
            inst = ds.instances[s]
            for i in range(inst.m):
                grid = regret_grid_oracle(mech, inst, i, grid_step=0.05)
                assert grad_rgt[s, i] >= grid - 0.005

    def test_eval_budget_superset_of_training_budget(self):
        net = AuctionNetwork(TINY_CFG, seed=4)
        batch = InstanceBatch.from_instances(generate_fixed("A", 24, seed=5).instances)
        small = optimize_misreports_batch(net, batch, steps=4, lr=0.1, restarts=3, seed=9)
        big = optimize_misreports_batch(net, batch, steps=8, lr=0.1, restarts=6, seed=9)
        assert (big.best_utility >= small.best_utility - 1e-12).all()

    def test_type_shapes_respected(self):
        net = AuctionNetwork(TINY_CFG, seed=5)
        batch = InstanceBatch.from_instances(generate_fixed("C", 8, seed=6).instances)
        res = optimize_misreports_batch(net, batch, steps=5, lr=0.3, restarts=4, seed=1)
        comp = batch.comp_mask[:, : batch.max_ads, :]
        assert np.all(res.best_bids * (1 - comp) == 0.0)
        assert res.best_bids.min() >= 0.0 and res.best_bids.max() <= 1.0


class TestEstimateRegret:
    def test_vcg_wrapped(self):
        ds = generate_fixed("A", 12, seed=7)
        report = estimate_regret(VcgMechanism(gamma=0.5), ds, steps=2, lr=0.2, restarts=3, seed=0)
        assert report.mean < 1e-6
        assert report.max < 1e-6
        assert report.method == "gradient"

    def test_half_pay_analytic_mean(self):
        # Mean regret = alpha * E[v] / 2 = 0.5 * 0.5 / 2 = 0.125 on U[0,1] values.
        rng = np.random.default_rng(0)
        instances = [make_instance([make_ad("store", float(rng.uniform()), 0.0)], [], ctrs=(0.5,))
                     for _ in range(300)]
        ds = Dataset(instances, {"value_domain": (0.0, 1.0)})
        report = estimate_regret(HalfPayMechanism(), ds, steps=30, lr=0.3, restarts=4, seed=1)
        assert report.mean == pytest.approx(0.125, abs=0.015)

    def test_reports_mean_and_max(self):
        net = AuctionNetwork(TINY_CFG, seed=6)
        ds = generate_fixed("A", 16, seed=8)
        report = estimate_regret(net.mechanism(), ds, steps=3, restarts=3, seed=2)
        assert report.max >= report.mean >= 0.0
        assert report.per_advertiser.shape == (4,)


class TestTrainLoop:
    def _smoke_config(self, iters=24):
        return TrainConfig(
            iterations=iters, batch_size=16, lr=2e-3,
            misreport_steps=2, misreport_restarts=3, misreport_lr=0.2,
            lambda_period=8, rho_init=1.0, rho_growth=2.0, rho_period_epochs=2, rho_max=8.0,
            aem_epochs=2, eval_every=8, eval_samples=32,
            eval_misreport_steps=3, eval_misreport_restarts=3, seed=3,
        )

    def test_runs_and_logs(self, tmp_path):
        train_set = generate_fixed("A", 64, seed=10)
        test_set = generate_fixed("A", 32, seed=11)
        result = train(TINY_CFG, self._smoke_config(), train_set, test_set,
                       log_path=tmp_path / "log.jsonl", checkpoint_path=tmp_path / "m.ckpt")
        assert result.log, "expected evaluation windows"
        entry = result.log[0]
        for key in ("iter", "rev", "ue", "score", "mean_rgt", "max_rgt", "lambda_mean", "rho", "wall_ms"):
            assert key in entry
        assert (tmp_path / "log.jsonl").exists()
        assert (tmp_path / "m.ckpt").exists()
        loaded = AuctionNetwork.load(tmp_path / "m.ckpt")
        batch = InstanceBatch.from_instances(test_set.instances[:4])
        np.testing.assert_array_equal(loaded.forward(batch).alloc.value,
                                      result.net.forward(batch).alloc.value)

    def test_deterministic_given_seed(self):
        train_set = generate_fixed("A", 48, seed=12)
        test_set = generate_fixed("A", 24, seed=13)
        cfg = self._smoke_config(iters=16)
        a = train(TINY_CFG, cfg, train_set, test_set)
        b = train(TINY_CFG, cfg, train_set, test_set)
        drop_wall = lambda e: {k: v for k, v in e.items() if k != "wall_ms"}
        assert drop_wall(a.log[-1]) == drop_wall(b.log[-1])
        for name in a.net.store.names():
            np.testing.assert_array_equal(a.net.store[name], b.net.store[name])

    def test_multipliers_and_rho_advance(self):
        train_set = generate_fixed("A", 48, seed=14)
        result = train(TINY_CFG, self._smoke_config(iters=16), train_set, None)
        assert result.net.store.rho > 1.0
        assert result.net.store.lam.shape == (4,)

    def test_front_end_frozen_after_phase_one(self):
        train_set = generate_fixed("A", 48, seed=15)
        cfg = self._smoke_config(iters=8)
        result = train(TINY_CFG, cfg, train_set, None)
        # Re-running only the mechanism phase must not touch decoder weights:
        # compare against a fresh run with zero joint iterations.
        probe = train(TINY_CFG, TrainConfig.from_dict({**cfg.to_dict(), "iterations": 1}),
                      generate_fixed("A", 48, seed=15), None)
        np.testing.assert_array_equal(result.net.store["aem.decoder.0.w"],
                                      probe.net.store["aem.decoder.0.w"])

    def test_batch_size_validated(self):
        with pytest.raises(ConfigError):
            train(TINY_CFG, self._smoke_config(), generate_fixed("A", 8, seed=0), None)

    def test_config_round_trip(self):
        cfg = self._smoke_config()
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"mystery": 1})
