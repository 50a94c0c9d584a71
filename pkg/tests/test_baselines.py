"""VCG, GSP with fixed positions, and virtual-value ranking mechanisms."""

import itertools

import numpy as np
import pytest
from scipy.integrate import quad

from jointauction.baselines import (
    GspConfig,
    GspFixedPositions,
    IasMechanism,
    TruncatedNormalPrior,
    UniformPrior,
    UniformSumPrior,
    VcgMechanism,
    invert_virtual_score,
    myerson_virtual_value,
)
from jointauction.core import check_feasibility, regret_grid_oracle, truthful_bids
from jointauction.errors import ConfigError, DomainError

from conftest import make_ad, make_instance, make_org, random_instance

GAMMA = 0.5


def brute_force_vcg(instance, bids, gamma):
    """Enumerate all feasible assignments, maximize welfare, Clarke pivots with
    the advertiser's bid zeroed (item still displayable on its ue)."""
    n, k = instance.n_items, instance.k
    ue = instance.ue_profile()
    totals = np.array([b.total for b in bids] + [0.0] * instance.n)
    scores = totals + gamma * ue
    alphas = instance.slots.as_array()

    def best_welfare(scr):
        best = -np.inf
        best_assign = None
        for items in itertools.permutations(range(n), k):
            w = sum(scr[i] * alphas[s] for s, i in enumerate(items))
            if w > best + 1e-15:
                best = w
                best_assign = items
        return best, best_assign

    w_star, assign = best_welfare(scores)
    ctr = np.zeros(n)
    for s, i in enumerate(assign):
        ctr[i] = alphas[s]
    payments = np.zeros(instance.m)
    for i in range(instance.m):
        zeroed = scores.copy()
        zeroed[i] = gamma * ue[i]
        w_without, _ = best_welfare(zeroed)
        payments[i] = max(0.0, w_without - (w_star - totals[i] * ctr[i]))
    return ctr, payments


class TestVirtualValue:
    def test_uniform_closed_form(self):
        prior = UniformPrior(0, 1)
        assert myerson_virtual_value(0.75, prior) == pytest.approx(0.5)
        assert myerson_virtual_value(0.5, prior) == pytest.approx(0.0)

    def test_truncated_normal_against_quadrature(self):
        mean, sd = 0.5, 0.5
        dens = lambda x: np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
        mass, _ = quad(dens, 0.0, 1.0)
        v = 0.5
        cdf, _ = quad(dens, 0.0, v)
        phi_oracle = v - (1 - cdf / mass) / (dens(v) / mass)
        prior = TruncatedNormalPrior(mean, sd, 0.0, 1.0)
        assert myerson_virtual_value(v, prior) == pytest.approx(phi_oracle, abs=1e-6)

    @pytest.mark.parametrize("prior", [UniformPrior(0, 1),
                                       TruncatedNormalPrior(0.5, 0.5, 0, 1),
                                       UniformSumPrior(1.0)])
    def test_monotone_on_support(self, prior):
        lo = prior.lo + 1e-6
        hi = prior.hi - 1e-6
        grid = np.linspace(lo, hi, 400)
        vals = [myerson_virtual_value(v, prior) for v in grid]
        assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))

    def test_zero_density_rejected(self):
        with pytest.raises(DomainError):
            myerson_virtual_value(1.5, UniformPrior(0, 1))

    def test_inversion_matches_closed_form(self):
        # Uniform [0,1]: phi(v) = 2v - 1, inverse (x + 1) / 2.
        prior = UniformPrior(0, 1)
        for target in (-0.5, 0.0, 0.35, 0.8):
            got = invert_virtual_score(prior, target, hi_cap=1.0)
            assert got == pytest.approx(max(0.0, (target + 1) / 2), abs=1e-8)


class TestVcg:
    def test_single_slot_second_price(self):
        # gamma 0: classical second price on totals.
        inst = make_instance([make_ad("store", 0.8, 0.0, ue=0.0), make_ad("store", 0.5, 0.0, ue=0.0)],
                             [], ctrs=(0.8,))
        out = VcgMechanism(gamma=0.0).run(inst)
        assert out.hard_alloc[0, 0] == 1
        assert out.payments[0].sum() == pytest.approx(0.5 * 0.8)
        assert out.payments[1].sum() == 0.0

    def test_ad_vs_organic_pivot(self):
        # Welfare 0.5a vs 0.45a: ad wins and pays (0.45 - 0.1) * alpha.
        inst = make_instance([make_ad("store", 0.4, 0.0, ue=0.2)], [make_org(0.9)], ctrs=(0.5,))
        out = VcgMechanism(gamma=GAMMA).run(inst)
        assert out.hard_alloc[0, 0] == 1
        assert out.payments[0].sum() == pytest.approx(0.35 * 0.5)

    def test_all_organic_page(self):
        inst = make_instance([], [make_org(0.9), make_org(0.4), make_org(0.6), make_org(0.7)],
                             ctrs=(0.5, 0.3))
        out = VcgMechanism(gamma=GAMMA).run(inst)
        assert out.hard_alloc[0, 0] == 1 and out.hard_alloc[3, 1] == 1
        assert out.payments.size == 0

    def test_matches_brute_force(self, rng):
        mech = VcgMechanism(gamma=GAMMA)
        for _ in range(60):
            inst = random_instance(rng, k=int(rng.integers(1, 3)))
            bids = truthful_bids(inst)
            out = mech.run(inst)
            ctr_o, pay_o = brute_force_vcg(inst, bids, GAMMA)
            got_ctr = out.hard_alloc @ inst.slots.as_array()
            scores = np.array([b.total for b in bids] + [0.0] * inst.n) + GAMMA * inst.ue_profile()
            assert scores @ got_ctr == pytest.approx(scores @ np.concatenate([ctr_o[: inst.m], ctr_o[inst.m:]]), abs=1e-12)
            np.testing.assert_allclose(out.payments.sum(axis=1), pay_o, atol=1e-9)

    def test_payment_at_most_bid_contribution_and_ir(self, rng):
        mech = VcgMechanism(gamma=GAMMA)
        for _ in range(100):
            inst = random_instance(rng, k=2)
            out = mech.run(inst)
            ctr = out.hard_alloc @ inst.slots.as_array()
            for i, adv in enumerate(inst.advertisers):
                assert out.payments[i].sum() <= adv.value.total * ctr[i] + 1e-9
                # Componentwise individual rationality at truthful bids.
                assert out.payments[i, 0] <= adv.value.store * ctr[i] + 1e-9
                assert out.payments[i, 1] <= adv.value.brand * ctr[i] + 1e-9

    def test_feasible(self, rng):
        mech = VcgMechanism(gamma=GAMMA)
        for _ in range(30):
            out = mech.run(random_instance(rng, k=2))
            ok, _ = check_feasibility(out.hard_alloc)
            assert ok


class TestGsp:
    def test_second_bid_price(self):
        inst = make_instance([make_ad("store", 0.9, 0.0), make_ad("store", 0.6, 0.0)],
                             [make_org(0.7)], ctrs=(0.5, 0.3))
        out = GspFixedPositions(GspConfig(ad_positions=(0,))).run(inst)
        assert out.hard_alloc[0, 0] == 1
        assert out.payments[0].sum() == pytest.approx(0.6 * 0.5)

    def test_single_ad_zero_reserve(self):
        inst = make_instance([make_ad("store", 0.9, 0.0)], [make_org(0.7)], ctrs=(0.5, 0.3))
        out = GspFixedPositions(GspConfig(ad_positions=(0,))).run(inst)
        assert out.payments[0].sum() == 0.0

    def test_organics_ranked_by_ue(self):
        inst = make_instance([make_ad("store", 0.9, 0.0)], [make_org(0.3), make_org(0.9)],
                             ctrs=(0.5, 0.3, 0.2))
        out = GspFixedPositions(GspConfig(ad_positions=(0,))).run(inst)
        # Better organic takes the better remaining slot.
        assert out.hard_alloc[2, 1] == 1
        assert out.hard_alloc[1, 2] == 1

    def test_default_positions_alternate(self):
        assert GspConfig.default(3).ad_positions == (0, 2)
        assert GspConfig.default(6).ad_positions == (0, 2, 4)

    def test_known_non_ic_instance(self):
        # Top bidder prefers the cheaper lower position: regret well over 0.01.
        inst = make_instance(
            [make_ad("store", 1.0 - 1e-9, 0.0, ue=0.0), make_ad("store", 0.9, 0.0, ue=0.0),
             make_ad("store", 0.1, 0.0, ue=0.0)],
            [make_org(0.5)], ctrs=(0.5, 0.3))
        mech = GspFixedPositions(GspConfig(ad_positions=(0, 1)))
        rgt = regret_grid_oracle(mech, inst, 0, grid_step=0.05)
        assert rgt > 0.01

    def test_feasible(self, rng):
        mech = GspFixedPositions(GspConfig(ad_positions=(0,)))
        for _ in range(30):
            inst = random_instance(rng, m=int(rng.integers(1, 4)), k=2)
            out = mech.run(inst)
            ok, _ = check_feasibility(out.hard_alloc)
            assert ok

    def test_duplicate_positions_rejected(self):
        with pytest.raises(ConfigError):
            GspConfig(ad_positions=(1, 1))


class TestIas:
    def test_single_slot_example(self):
        # Ad: phi(0.9) = 0.8, score 0.9; organic score 0.45; critical value
        # solves phi(v) + 0.1 = 0.45 so v* = 0.675.
        inst = make_instance([make_ad("store", 0.9, 0.0, ue=0.2)], [make_org(0.9)], ctrs=(0.5,))
        out = IasMechanism(gamma=GAMMA).run(inst)
        assert out.hard_alloc[0, 0] == 1
        assert out.payments[0].sum() == pytest.approx(0.675 * 0.5, abs=1e-8)

    def test_losing_ad_pays_nothing(self):
        inst = make_instance([make_ad("store", 0.2, 0.0, ue=0.0)], [make_org(0.99)], ctrs=(0.5,))
        out = IasMechanism(gamma=GAMMA).run(inst)
        assert out.hard_alloc[0, 0] == 0
        assert out.payments[0].sum() == 0.0

    def test_identical_ads_tie_by_index(self):
        a = make_ad("store", 0.8, 0.0, ue=0.2)
        inst = make_instance([a, a], [make_org(0.6)], ctrs=(0.5,))
        out = IasMechanism(gamma=GAMMA).run(inst)
        assert out.hard_alloc[0, 0] == 1
        # Critical value equals the tied competitor's bid.
        assert out.payments[0].sum() == pytest.approx(0.8 * 0.5, abs=1e-8)

    def test_single_slot_truthful(self, rng):
        mech = IasMechanism(gamma=GAMMA)
        for _ in range(25):
            inst = random_instance(rng, k=1)
            for i in range(inst.m):
                assert regret_grid_oracle(mech, inst, i, grid_step=0.05,
                                          value_domain=(0.0, 1.0)) < 1e-6

    def test_ir_and_feasibility(self, rng):
        mech = IasMechanism(gamma=GAMMA)
        for _ in range(60):
            inst = random_instance(rng, k=2)
            out = mech.run(inst)
            ok, _ = check_feasibility(out.hard_alloc)
            assert ok
            ctr = out.hard_alloc @ inst.slots.as_array()
            for i, adv in enumerate(inst.advertisers):
                assert adv.value.total * ctr[i] - out.payments[i].sum() >= -1e-9

    def test_missing_prior_rejected(self):
        inst = make_instance([make_ad("joint", 0.5, 0.5)], [make_org()], ctrs=(0.5,))
        mech = IasMechanism(gamma=GAMMA, priors={"store": UniformPrior()})
        with pytest.raises(ConfigError):
            mech.run(inst)
