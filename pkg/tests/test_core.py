"""Auction model primitives: CTRs, feasibility, utility, metrics, grid regret."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jointauction.core import (
    Advertiser,
    AuctionInstance,
    BidPair,
    Outcome,
    SlotProfile,
    check_feasibility,
    evaluate_metrics,
    expected_ctr,
    regret_grid_oracle,
    sample_metrics,
    utility,
)
from jointauction.baselines import VcgMechanism
from jointauction.errors import DimensionError, DomainError

from conftest import CTX, HalfPayMechanism, make_ad, make_instance, make_org, random_instance


class TestSlotProfile:
    def test_descending_required(self):
        with pytest.raises(DomainError):
            SlotProfile((0.3, 0.5))

    def test_ctr_below_one(self):
        with pytest.raises(DomainError):
            SlotProfile((1.0, 0.5))

    def test_valid(self):
        s = SlotProfile((0.5, 0.3, 0.2))
        assert s.k == 3


class TestBidShapes:
    def test_store_shape_enforced(self):
        with pytest.raises(DomainError):
            Advertiser("store", BidPair(0.5, 0.1), 0.2, CTX)

    def test_brand_shape_enforced(self):
        with pytest.raises(DomainError):
            Advertiser("brand", BidPair(0.1, 0.5), 0.2, CTX)

    def test_joint_allows_both(self):
        Advertiser("joint", BidPair(0.1, 0.5), 0.2, CTX)

    def test_negative_bid_rejected(self):
        with pytest.raises(DomainError):
            BidPair(-0.1, 0.0)


class TestExpectedCtr:
    def test_single_assignment(self):
        assert expected_ctr([1, 0, 0], SlotProfile((0.5, 0.3, 0.2))) == 0.5

    def test_empty_allocation(self):
        assert expected_ctr([0, 0, 0], SlotProfile((0.5, 0.3, 0.2))) == 0.0

    def test_fractional(self):
        # 0.25 * 0.5 + 0.25 * 0.3 = 0.2, dot product by hand.
        assert expected_ctr([0.25, 0.25, 0], SlotProfile((0.5, 0.3, 0.2))) == pytest.approx(0.2)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            expected_ctr([1, 0], SlotProfile((0.5, 0.3, 0.2)))


class TestFeasibility:
    def test_permutation_ok(self):
        ok, violations = check_feasibility(np.eye(3, dtype=int))
        assert ok and not violations

    def test_overallocated_slot(self):
        a = np.zeros((3, 3), dtype=int)
        a[0, 0] = a[1, 0] = 1
        ok, violations = check_feasibility(a)
        assert not ok
        assert "column 0 sum 2" in violations

    def test_overallocated_item(self):
        a = np.zeros((2, 2), dtype=int)
        a[0, :] = 1
        ok, violations = check_feasibility(a)
        assert not ok
        assert any(v.startswith("row 0 sum 2") for v in violations)

    def test_non_binary_rejected(self):
        with pytest.raises(DomainError):
            check_feasibility(np.full((2, 2), 0.5))


class TestUtility:
    def test_store_arithmetic(self):
        slots = SlotProfile((0.5,))
        # expected ctr 0.5 forced via half-allocated single slot of ctr 1 is
        # not representable; use alloc=1 on ctr 0.5 for a_i = 0.5.
        assert utility(BidPair(0.8, 0.0), [1.0], slots, (0.1, 0.0)) == pytest.approx(0.3)

    def test_loser_zero(self):
        slots = SlotProfile((0.5, 0.3, 0.2))
        assert utility(BidPair(0.6, 0.4), [0, 0, 0], slots, (0.0, 0.0)) == 0.0

    def test_componentwise_sum(self):
        slots = SlotProfile((0.5, 0.3, 0.2))
        got = utility(BidPair(0.6, 0.4), [1, 0, 0], slots, (0.2, 0.1))
        assert got == pytest.approx(0.6 * 0.5 + 0.4 * 0.5 - 0.3)

    def test_negative_payment_rejected(self):
        with pytest.raises(DomainError):
            utility(BidPair(0.6, 0.4), [1, 0, 0], SlotProfile((0.5, 0.3, 0.2)), (-0.1, 0.0))


def _one_sample_batch():
    inst = make_instance(
        [make_ad("store", 0.8, 0.0, ue=0.3)],
        [make_org(0.9), make_org(0.1)],
        ctrs=(0.5, 0.3, 0.2),
    )
    soft = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    out = Outcome(soft_alloc=soft, payments=np.array([[0.25, 0.0]]))
    return inst, out


class TestMetrics:
    def test_hand_example(self):
        inst = make_instance(
            [make_ad("store", 0.8, 0.0, ue=0.3)],
            [make_org(0.9), make_org(0.0)],
            ctrs=(0.5, 0.3, 0.2),
        )
        soft = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        out = Outcome(soft_alloc=soft, payments=np.array([[0.25, 0.0]]))
        m = evaluate_metrics([out], [inst], gamma=0.5)
        # SW = 0.8*0.5, Rev = 0.25, UE = 0.3*0.5 + 0.9*0.3 + 0, Score = Rev + 0.5*UE.
        assert m.sw == pytest.approx(0.4)
        assert m.rev == pytest.approx(0.25)
        assert m.ue == pytest.approx(0.42)
        assert m.score == pytest.approx(0.46)

    def test_zero_allocation(self):
        inst = make_instance([make_ad()], [make_org(), make_org(), make_org()])
        out = Outcome(soft_alloc=np.zeros((4, 3)), payments=np.zeros((1, 2)))
        m = evaluate_metrics([out], [inst], gamma=0.5)
        assert (m.sw, m.rev, m.ue, m.score) == (0, 0, 0, 0)

    def test_gamma_zero_score_is_rev(self):
        inst, out = _one_sample_batch()
        m = evaluate_metrics([out], [inst], gamma=0.0)
        assert m.score == m.rev

    def test_empty_batch_rejected(self):
        with pytest.raises(DomainError):
            evaluate_metrics([], [], gamma=0.5)

    def test_rev_linear_in_payment_scaling(self):
        # Exact scaling along powers of two.
        inst, out = _one_sample_batch()
        base = evaluate_metrics([out], [inst], gamma=0.5).rev
        for c in (2.0, 4.0, 0.5):
            scaled = Outcome(soft_alloc=out.soft_alloc, payments=out.payments * c)
            assert evaluate_metrics([scaled], [inst], gamma=0.5).rev == c * base

    @given(g1=st.floats(0, 2), g2=st.floats(0, 2))
    @settings(max_examples=30, deadline=None)
    def test_score_monotone_in_gamma(self, g1, g2):
        inst, out = _one_sample_batch()
        lo, hi = sorted([g1, g2])
        assert evaluate_metrics([out], [inst], lo).score <= evaluate_metrics([out], [inst], hi).score + 1e-15


class TestOutcomeInvariants:
    def test_row_sum_violation_rejected(self):
        with pytest.raises(DomainError):
            Outcome(soft_alloc=np.array([[0.7, 0.7]]), payments=np.zeros((1, 2)))

    def test_column_sum_violation_rejected(self):
        with pytest.raises(DomainError):
            Outcome(soft_alloc=np.array([[0.9], [0.9]]), payments=np.zeros((1, 2)))

    def test_negative_payments_rejected(self):
        with pytest.raises(DomainError):
            Outcome(soft_alloc=np.array([[0.5]]), payments=np.array([[-0.1, 0.0]]))


class TestGridRegretOracle:
    def test_vcg_is_truthful(self, rng):
        mech = VcgMechanism(gamma=0.5)
        for _ in range(8):
            inst = random_instance(rng, k=2)
            for i in range(inst.m):
                assert regret_grid_oracle(mech, inst, i, grid_step=0.05) <= 1e-9

    def test_half_pay_toy_analytic(self):
        # Lone bidder on a single slot of ctr a, charged half its bid:
        # truthful utility a*v/2, best misreport 0 gives a*v, regret a*v/2.
        inst = make_instance([make_ad("store", 0.8, 0.0)], [], ctrs=(0.5,))
        got = regret_grid_oracle(HalfPayMechanism(), inst, 0, grid_step=0.05)
        assert got == pytest.approx(0.5 * 0.8 / 2)

    def test_half_pay_coarse_grid(self):
        # The coarse grid still contains the optimum b' = 0.
        inst = make_instance([make_ad("store", 0.8, 0.0)], [], ctrs=(0.5,))
        got = regret_grid_oracle(HalfPayMechanism(), inst, 0, grid_step=0.5)
        assert got == pytest.approx(0.2)

    def test_grid_respects_type_shape(self):
        inst = make_instance([make_ad("brand", 0.0, 0.7)], [make_org()], ctrs=(0.5, 0.3))
        # Brand misreports vary only the brand component; oracle must run clean.
        assert regret_grid_oracle(VcgMechanism(0.5), inst, 0, 0.25) <= 1e-9

    def test_nonnegative(self, rng):
        mech = HalfPayMechanism()
        inst = make_instance([make_ad("store", 0.01, 0.0)], [], ctrs=(0.5,))
        assert regret_grid_oracle(mech, inst, 0, 0.1) >= 0.0
