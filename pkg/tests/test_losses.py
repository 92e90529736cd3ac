"""Loss-variant contracts: equivalences, recovery, hinge behavior, gradients."""

import math

import mpmath
import numpy as np
import pytest

from marginlab.errors import ConfigError, ShapeError
from marginlab.losses import (
    VARIANTS,
    LabeledLogits,
    MarginConfig,
    am_loss_from_gaps,
    am_softmax,
    am_softmax_factored,
    am_softmax_reformulated,
    easy_set_approximation,
    evaluate,
    hard_set_approximation,
    hardness_report,
    loss_gradient_check,
    margin_gap_clearance,
    ram_loss_from_gaps,
    ram_softmax,
    softmax_ce,
    triplet_margin,
)

AM_FORMS = (am_softmax, am_softmax_reformulated, am_softmax_factored)


def random_batch(rng, max_n=16, max_c=32):
    n = int(rng.integers(1, max_n + 1))
    c = int(rng.integers(2, max_c + 1))
    logits = rng.uniform(-1.0, 1.0, size=(n, c))
    labels = rng.integers(0, c, size=n)
    return LabeledLogits(logits, labels)


def gap_separated_batch(rng, n, c):
    """Every logit close to the row top or far below it, so that at scale 30
    no softmax entry lands where finite differences cannot resolve it."""
    logits = np.empty((n, c))
    for i in range(n):
        top = rng.uniform(0.5, 0.9)
        near = rng.random(c) < 0.5
        logits[i] = np.where(near,
                             top - rng.uniform(0.0, 0.15, size=c),
                             top - rng.uniform(0.9, 1.6, size=c))
    labels = rng.integers(0, c, size=n)
    return LabeledLogits(np.clip(logits, -1.0, 1.0), labels)


class TestConfigAndContainers:
    def test_margin_config_validation(self):
        with pytest.raises(ConfigError):
            MarginConfig("angular", 0.2, 30.0)
        with pytest.raises(ConfigError):
            MarginConfig("am", -0.1, 30.0)
        with pytest.raises(ConfigError):
            MarginConfig("am", 2.5, 30.0)
        with pytest.raises(ConfigError):
            MarginConfig("am", 0.2, 0.0)
        with pytest.raises(ConfigError):
            MarginConfig("ram", 0.2, 30.0, "clamp")

    def test_shipped_presets_construct(self):
        MarginConfig("am", 0.20, 30.0)
        MarginConfig("ram", 0.30, 30.0)
        MarginConfig("am", 0.10, 30.0)
        MarginConfig("ram", 0.20, 30.0)

    def test_labeled_logits_validation(self):
        with pytest.raises(ConfigError):
            LabeledLogits(np.array([[1.5, 0.0]]), np.array([0]))
        LabeledLogits(np.array([[6.0, 0.0]]), np.array([0]), unbounded=True)
        with pytest.raises(ShapeError):
            LabeledLogits(np.array([[0.5]]), np.array([0]))
        with pytest.raises(ConfigError):
            LabeledLogits(np.array([[0.5, 0.1]]), np.array([2]))
        with pytest.raises(ShapeError):
            LabeledLogits(np.empty((0, 3)), np.empty(0, dtype=int))


class TestSoftmaxCe:
    def test_equal_logits_uniform_posterior(self):
        data = LabeledLogits(np.array([[1.0, 1.0]]), np.array([0]))
        out = softmax_ce(data, MarginConfig("softmax", 0.0, 1.0))
        assert out.value == pytest.approx(math.log(2.0), rel=1e-15)
        assert np.allclose(out.grad, [[-0.5, 0.5]], atol=1e-15)

    def test_saturated_easy_sample(self):
        data = LabeledLogits(np.array([[1.0, -1.0, -1.0]]), np.array([0]))
        out = softmax_ce(data, MarginConfig("softmax", 0.0, 30.0))
        # Target dominates by e^60; the loss is 2e-60 up to rounding.
        assert 0.0 <= out.value < 1e-25

    def test_matches_naive_exponent_sum_oracle(self):
        rng = np.random.default_rng(30)
        data = random_batch(rng, max_n=4, max_c=5)
        z, y = data.logits, data.labels
        s = 2.0
        per_sample = []
        for i in range(z.shape[0]):
            denom = sum(math.exp(s * v) for v in z[i])
            per_sample.append(-math.log(math.exp(s * z[i, y[i]]) / denom))
        want = sum(per_sample) / len(per_sample)
        got = softmax_ce(data, MarginConfig("softmax", 0.0, s)).value
        assert got == pytest.approx(want, rel=1e-12)

    def test_margin_ignored(self):
        rng = np.random.default_rng(31)
        data = random_batch(rng)
        a = softmax_ce(data, MarginConfig("softmax", 0.0, 3.0))
        b = softmax_ce(data, MarginConfig("am", 0.7, 3.0))
        assert a.value == b.value


class TestAmSoftmax:
    def test_zero_margin_recovers_softmax(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            data = random_batch(rng)
            plain = softmax_ce(data, MarginConfig("softmax", 0.0, 1.0)).value
            for op in AM_FORMS:
                got = op(data, MarginConfig("am", 0.0, 1.0)).value
                assert got == pytest.approx(plain, abs=1e-12, rel=1e-12)

    def test_two_class_hand_calculator_case(self):
        data = LabeledLogits(np.array([[0.9, 0.2]]), np.array([0]))
        out = am_softmax(data, MarginConfig("am", 0.2, 30.0))
        # log(1 + e^{-30(0.9 - 0.2 - 0.2)}) = log(1 + e^-15)
        assert out.value == pytest.approx(math.log(1.0 + math.exp(-15.0)), rel=1e-12)

    def test_equivalence_chain_on_seeded_batches(self):
        rng = np.random.default_rng(33)
        for _ in range(100):
            data = random_batch(rng)
            for m in (0.0, 0.2, 0.35):
                for s in (1.0, 30.0):
                    cfg = MarginConfig("am", m, s)
                    values = [op(data, cfg).value for op in AM_FORMS]
                    scale = max(abs(v) for v in values) or 1.0
                    assert abs(values[0] - values[1]) / scale < 1e-10
                    assert abs(values[1] - values[2]) / scale < 1e-10

    def test_gap_equal_to_margin_gives_log2_for_any_scale(self):
        # 0.5 - 0.25 = 0.25 exactly in binary, so the exponent is exactly 0.
        data = LabeledLogits(np.array([[0.5, 0.25]]), np.array([0]))
        for s in (1.0, 7.3, 30.0, 400.0):
            got = am_softmax_reformulated(data, MarginConfig("am", 0.25, s)).value
            assert got == math.log(2.0)

    def test_factored_bitwise_equals_reformulated_at_zero_margin(self):
        rng = np.random.default_rng(34)
        for _ in range(20):
            data = random_batch(rng)
            a = am_softmax_reformulated(data, MarginConfig("am", 0.0, 30.0)).value
            b = am_softmax_factored(data, MarginConfig("am", 0.0, 30.0)).value
            assert a == b

    def test_factored_stable_at_large_scale_margin_product(self):
        # s*m = 70 with the gap near 2: the e^{sm} factor alone is ~2.5e30.
        data = LabeledLogits(np.array([[0.99, -0.99]]), np.array([0]))
        got = am_softmax_factored(data, MarginConfig("am", 2.0, 35.0)).value
        with mpmath.workdps(60):
            want = float(mpmath.log(1 + mpmath.e ** mpmath.mpf(70.0 - 35.0 * 1.98)))
        assert math.isfinite(got)
        assert got == pytest.approx(want, rel=1e-12)

    def test_gradient_rows_sum_to_zero(self):
        rng = np.random.default_rng(35)
        data = random_batch(rng)
        for op, variant in ((softmax_ce, "softmax"), (am_softmax, "am")):
            grad = op(data, MarginConfig(variant, 0.2, 30.0)).grad
            assert np.max(np.abs(grad.sum(axis=1))) < 1e-10

    def test_monotone_in_target_logit(self):
        rng = np.random.default_rng(36)
        for _ in range(10):
            data = random_batch(rng, max_n=6, max_c=8)
            z2 = data.logits.copy()
            i = int(rng.integers(0, z2.shape[0]))
            z2[i, data.labels[i]] = min(1.0, z2[i, data.labels[i]] + 0.05)
            if z2[i, data.labels[i]] == data.logits[i, data.labels[i]]:
                continue
            bumped = LabeledLogits(z2, data.labels)
            for variant in ("softmax", "am"):
                cfg = MarginConfig(variant, 0.2, 5.0)
                assert evaluate(bumped, cfg).value < evaluate(data, cfg).value

    def test_nontarget_permutation_invariance(self):
        rng = np.random.default_rng(37)
        for _ in range(10):
            data = random_batch(rng, max_n=5, max_c=7)
            perm = rng.permutation(data.num_classes)
            permuted = LabeledLogits(data.logits[:, perm],
                                     np.argsort(perm)[data.labels])
            for variant in VARIANTS:
                cfg = MarginConfig(variant, 0.2, 4.0)
                a = evaluate(data, cfg).value
                b = evaluate(permuted, cfg).value
                assert b == pytest.approx(a, rel=1e-12, abs=1e-12)


class TestRamSoftmax:
    def test_all_satisfied_literal_floor(self):
        for c in (2, 3, 5, 20):
            for n in (1, 3, 4):
                z = np.full((n, c), -0.5)
                z[:, 0] = 0.9
                data = LabeledLogits(z, np.zeros(n, dtype=int))
                out = ram_softmax(data, MarginConfig("ram", 0.3, 30.0, "literal"))
                assert out.value == math.log(c)
                assert np.all(out.grad == 0.0)

    def test_all_satisfied_zero_floor(self):
        z = np.array([[0.9, -0.5, -0.4]])
        data = LabeledLogits(z, np.array([0]))
        out = ram_softmax(data, MarginConfig("ram", 0.3, 30.0, "zero_floor"))
        assert out.value == 0.0
        assert np.all(out.grad == 0.0)

    def test_all_violated_equals_reformulated_exactly(self):
        rng = np.random.default_rng(38)
        for _ in range(20):
            n, c = int(rng.integers(1, 8)), int(rng.integers(2, 10))
            z = rng.uniform(0.2, 0.9, size=(n, c))
            y = rng.integers(0, c, size=n)
            z[np.arange(n), y] = rng.uniform(-0.9, -0.5, size=n)
            data = LabeledLogits(z, y)
            ram = ram_softmax(data, MarginConfig("ram", 0.1, 30.0, "literal")).value
            ref = am_softmax_reformulated(data, MarginConfig("am", 0.1, 30.0)).value
            assert ram == ref

    def test_gradient_sparsity_on_mixed_batch(self):
        # Row gaps: one violated non-target, one comfortably satisfied.
        z = np.array([[0.6, 0.55, -0.8], [0.7, -0.9, 0.65]])
        y = np.array([0, 0])
        data = LabeledLogits(z, y)
        m = 0.2
        out = ram_softmax(data, MarginConfig("ram", m, 30.0, "literal"))
        gaps = z[np.arange(2), y][:, None] - z
        for i in range(2):
            for j in range(3):
                if j == y[i]:
                    continue
                if gaps[i, j] > m:
                    assert out.grad[i, j] == 0.0
                else:
                    assert out.grad[i, j] > 0.0
        assert not np.all(out.grad == 0.0)

    def test_subgradient_zero_at_hinge(self):
        # 0.5 - 0.25 = 0.25 = m exactly: the hinge point takes the flat branch.
        data = LabeledLogits(np.array([[0.5, 0.25]]), np.array([0]))
        out = ram_softmax(data, MarginConfig("ram", 0.25, 30.0, "literal"))
        assert out.grad[0, 1] == 0.0
        assert out.value == math.log(2.0)

    def test_floor_modes_differ_by_log_c_when_satisfied(self):
        z = np.array([[0.9, -0.5, -0.5, -0.5]])
        data = LabeledLogits(z, np.array([0]))
        lit = ram_softmax(data, MarginConfig("ram", 0.2, 30.0, "literal")).value
        zero = ram_softmax(data, MarginConfig("ram", 0.2, 30.0, "zero_floor")).value
        assert lit - zero == pytest.approx(math.log(4.0), rel=1e-15)

    def test_weak_monotonicity_in_target_logit(self):
        z = np.array([[0.4, 0.35, -0.9]])
        data = LabeledLogits(z, np.array([0]))
        cfg = MarginConfig("ram", 0.2, 10.0, "literal")
        base = ram_softmax(data, cfg).value
        z2 = z.copy()
        z2[0, 0] = 0.5  # still violated against column 1
        assert ram_softmax(LabeledLogits(z2, np.array([0])), cfg).value < base
        z3 = z.copy()
        z3[0, 0] = 0.9  # everything satisfied: flat region
        z4 = z3.copy()
        z4[0, 0] = 0.95
        v3 = ram_softmax(LabeledLogits(z3, np.array([0])), cfg).value
        v4 = ram_softmax(LabeledLogits(z4, np.array([0])), cfg).value
        assert v4 <= v3


class TestTripletMargin:
    def test_well_separated_clamps(self):
        assert triplet_margin(0.1, 0.9, 0.2) == 0.0

    def test_equal_distances(self):
        assert triplet_margin(0.5, 0.5, 0.2) == pytest.approx(0.2, rel=1e-15)

    def test_direct_arithmetic(self):
        assert triplet_margin(0.8, 0.3, 0.1) == pytest.approx(0.6, rel=1e-15)

    def test_negative_margin_rejected(self):
        with pytest.raises(ConfigError):
            triplet_margin(0.1, 0.2, -0.1)


class TestGradientCheck:
    def test_softmax_seeded_batch(self):
        rng = np.random.default_rng(40)
        data = gap_separated_batch(rng, 4, 6)
        err = loss_gradient_check(data, MarginConfig("softmax", 0.0, 30.0), eps=1e-5)
        assert err < 1e-5

    def test_am_seeded_batch(self):
        rng = np.random.default_rng(41)
        data = gap_separated_batch(rng, 4, 6)
        err = loss_gradient_check(data, MarginConfig("am", 0.2, 30.0), eps=1e-5)
        assert err < 1e-5

    def test_all_variants_at_unit_scale(self):
        rng = np.random.default_rng(42)
        data = random_batch(rng, max_n=5, max_c=7)
        for variant in VARIANTS:
            for floor in ("literal", "zero_floor"):
                err = loss_gradient_check(data, MarginConfig(variant, 0.2, 1.0, floor),
                                          eps=1e-5)
                assert err < 1e-7, (variant, floor, err)

    def test_ram_flat_region_exactly_zero(self):
        z = np.full((3, 4), -0.5)
        z[:, 0] = 0.9
        data = LabeledLogits(z, np.zeros(3, dtype=int))
        err = loss_gradient_check(data, MarginConfig("ram", 0.2, 30.0), eps=1e-5)
        assert err <= 1e-9

    def test_eps_range_enforced(self):
        rng = np.random.default_rng(43)
        data = random_batch(rng, max_n=3, max_c=4)
        with pytest.raises(ConfigError):
            loss_gradient_check(data, MarginConfig("am", 0.2, 1.0), eps=1e-3)

    def test_clearance_helper(self):
        z = np.array([[0.5, 0.25, -0.7]])
        assert margin_gap_clearance(z, np.array([0]), 0.25) == 0.0
        assert margin_gap_clearance(z, np.array([0]), 0.1) == pytest.approx(0.15)


class TestAsymptotics:
    def test_easy_set_ratio_approaches_margin_factor(self):
        gaps = np.full(1, 10.0)
        ratio = am_loss_from_gaps(gaps, 0.5) / am_loss_from_gaps(gaps, 0.0)
        assert abs(ratio / math.exp(0.5) - 1.0) < 0.01

    def test_hard_set_shift_approaches_margin(self):
        gaps = np.full(1, -10.0)
        diff = am_loss_from_gaps(gaps, 0.5) - am_loss_from_gaps(gaps, 0.0)
        assert abs(diff - 0.5) < 1e-3

    def test_easy_approximation_formula(self):
        gaps = np.array([6.0, 6.0])
        exact = am_loss_from_gaps(gaps, 0.5)
        approx = easy_set_approximation(gaps, 0.5)
        # Both sides evaluated numerically; the dominant-target form.
        by_hand = math.exp(0.5) * 2.0 * math.exp(-6.0)
        assert approx == pytest.approx(by_hand, rel=1e-14)
        assert abs(exact - approx) / exact < 1e-2

    def test_hard_approximation_formula(self):
        gaps = np.array([-6.0, -6.0])
        exact = am_loss_from_gaps(gaps, 0.5)
        approx = hard_set_approximation(gaps, 0.5)
        by_hand = 0.5 + math.log(2.0 * math.exp(6.0))
        assert approx == pytest.approx(by_hand, rel=1e-14)
        assert abs(exact - approx) / exact < 1e-2

    def test_ram_from_gaps_matches_batch_op(self):
        gaps = np.array([0.1, -0.4])
        # 2-class decompositions: one satisfied + one violated gap, m = 0.2.
        direct = ram_loss_from_gaps(gaps, 0.2, s=5.0)
        z = np.array([[0.25, 0.15, 0.65]])  # gaps 0.1 and -0.4 against label 0
        batch = ram_softmax(LabeledLogits(z, np.array([0])),
                            MarginConfig("ram", 0.2, 5.0)).value
        assert direct == pytest.approx(batch, rel=1e-12)


class TestHardnessReport:
    def test_dominant_target_classified_easy(self):
        data = LabeledLogits(np.array([[3.5, -2.5, -2.5]]), np.array([0]),
                             unbounded=True)
        rep = hardness_report(data, MarginConfig("am", 0.5, 1.0))
        assert rep.labels == ["easy"]
        exact = am_loss_from_gaps(np.array([6.0, 6.0]), 0.5)
        assert rep.easy_error[0] / exact < 1e-2

    def test_weak_target_classified_hard(self):
        data = LabeledLogits(np.array([[-3.5, 2.5, 2.5]]), np.array([0]),
                             unbounded=True)
        rep = hardness_report(data, MarginConfig("am", 0.5, 1.0))
        assert rep.labels == ["hard"]
        exact = am_loss_from_gaps(np.array([-6.0, -6.0]), 0.5)
        assert rep.hard_error[0] / exact < 1e-2

    def test_uniform_posterior_between_thresholds_unclassified(self):
        # All logits equal at zero margin: target posterior is exactly 1/C.
        data = LabeledLogits(np.zeros((1, 3)), np.array([0]))
        rep = hardness_report(data, MarginConfig("am", 0.0, 1.0),
                              easy_threshold=0.99, hard_threshold=0.25)
        assert rep.posterior[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
        assert rep.labels == ["unclassified"]

    def test_partition_covers_batch_once(self):
        rng = np.random.default_rng(44)
        data = random_batch(rng, max_n=12, max_c=6)
        rep = hardness_report(data, MarginConfig("am", 0.2, 1.0))
        assert not np.any(rep.easy & rep.hard)
        assert len(rep.labels) == data.batch_size

    def test_threshold_ordering_enforced(self):
        data = LabeledLogits(np.zeros((1, 3)), np.array([0]))
        with pytest.raises(ConfigError):
            hardness_report(data, MarginConfig("am", 0.2, 1.0),
                            easy_threshold=0.5, hard_threshold=0.9)


class TestLossOutputInvariants:
    def test_values_nonnegative_grads_finite(self):
        rng = np.random.default_rng(45)
        for _ in range(20):
            data = random_batch(rng)
            for variant in VARIANTS:
                out = evaluate(data, MarginConfig(variant, 0.2, 30.0))
                assert out.value >= 0.0 and math.isfinite(out.value)
                assert np.all(np.isfinite(out.grad))

    def test_ram_floor_bounds(self):
        rng = np.random.default_rng(46)
        for _ in range(20):
            data = random_batch(rng, max_n=8, max_c=12)
            c = data.num_classes
            lit = ram_softmax(data, MarginConfig("ram", 0.2, 30.0, "literal")).value
            zero = ram_softmax(data, MarginConfig("ram", 0.2, 30.0, "zero_floor")).value
            assert lit >= math.log(c) - 1e-12
            assert zero >= 0.0
