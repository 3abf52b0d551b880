import math

import numpy as np
import pytest

from dpaudit.accountant import SgdConfig
from dpaudit.attack import (
    AttackResult,
    averaged_attack,
    best_advantage,
    export_losses,
    roc_curve,
    threshold_attack,
    tpr_at_fpr,
    yeom_attack,
)
from dpaudit.trainer import Dataset, Model, generate_synthetic, train_dpsgd


def _controlled_trial(low_loss_members: int, low_loss_nonmembers: int, n: int = 1000):
    """A model/dataset pair whose losses split into two known groups.

    With weights [[8, 0]] and label 0 everywhere, feature 10 gives a loss
    near zero and feature -1 a loss near 8, so membership counts at any
    threshold in between are exact.
    """
    model = Model(weights=np.array([[8.0, 0.0]]), bias=np.zeros(2))

    def make(low: int) -> Dataset:
        features = np.full((n, 1), -1.0)
        features[:low] = 10.0
        return Dataset(features=features, labels=np.zeros(n, dtype=int))

    return model, make(low_loss_members), make(low_loss_nonmembers)


class TestThresholdAttack:
    def test_hand_enumeration(self):
        result = threshold_attack([0.1, 0.2], [0.9, 1.0], 0.15)
        assert result.tpr == 0.5
        assert result.fpr == 0.0
        assert result.advantage == 0.5

    def test_ties_count_as_member(self):
        result = threshold_attack([0.3], [0.3], 0.3)
        assert result.tpr == result.fpr == 1.0


class TestYeomAttack:
    def test_threshold_is_mean_training_loss(self):
        train, holdout = generate_synthetic(500, 10, 3, 1.0, 4)
        model, _ = train_dpsgd(
            train, SgdConfig.from_epochs(sigma=0, clip=1, q=0.05, lr=0.1, epochs=20, seed=2)
        )
        from dpaudit.trainer import per_example_losses

        result = yeom_attack(model, train, holdout)
        member = per_example_losses(model, train)
        assert result.threshold == float(member.mean())
        expected = threshold_attack(member, per_example_losses(model, holdout), result.threshold)
        assert result == expected

    def test_no_signal_no_advantage(self):
        # Separation 0 makes train and holdout indistinguishable. Capacity is
        # kept tiny (12 parameters on 4000 examples) so residual memorization
        # is far below sampling noise; advantage then stays within 3 binomial
        # standard errors of zero.
        train, holdout = generate_synthetic(4000, 5, 2, 0.0, 13)
        model, _ = train_dpsgd(
            train, SgdConfig.from_epochs(sigma=0, clip=1, q=0.05, lr=0.1, epochs=10, seed=3)
        )
        result = yeom_attack(model, train, holdout)
        stderr = math.sqrt(0.25 / train.n + 0.25 / holdout.n)
        assert abs(result.advantage) <= 3 * stderr

    def test_overfit_model_leaks(self):
        train, holdout = generate_synthetic(200, 50, 10, 0.5, 21)
        model, _ = train_dpsgd(
            train, SgdConfig.from_epochs(sigma=0, clip=1, q=0.1, lr=0.2, epochs=150, seed=5)
        )
        assert yeom_attack(model, train, holdout).advantage > 0.1


class TestRocCurve:
    def test_perfect_separation(self):
        curve = roc_curve([0.1, 0.2], [0.8, 0.9])
        assert (0.0, 1.0) in {(f, t) for _, f, t in curve.points}
        assert best_advantage(curve)[0] == 1.0

    def test_identical_singletons(self):
        curve = roc_curve([0.5], [0.5])
        assert [(f, t) for _, f, t in curve.points] == [(0.0, 0.0), (1.0, 1.0), (1.0, 1.0)]
        assert best_advantage(curve)[0] == 0.0

    def test_hand_enumerated_staircase(self):
        curve = roc_curve([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
        by_threshold = {p[0]: (p[1], p[2]) for p in curve.points}
        third = 1.0 / 3.0
        assert by_threshold[1.0] == (0.0, pytest.approx(third))
        assert by_threshold[2.0] == (pytest.approx(third), pytest.approx(2 * third))
        assert by_threshold[3.0] == (pytest.approx(2 * third), pytest.approx(1.0))

    def test_staircase_invariants(self):
        rng = np.random.default_rng(10)
        for _ in range(10):
            curve = roc_curve(rng.normal(size=37), rng.normal(size=53))
            fprs = [p[1] for p in curve.points]
            tprs = [p[2] for p in curve.points]
            assert all(0 <= r <= 1 for r in fprs + tprs)
            assert fprs == sorted(fprs)
            assert tprs == sorted(tprs)
            assert (fprs[0], tprs[0]) == (0.0, 0.0)
            assert (fprs[-1], tprs[-1]) == (1.0, 1.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            roc_curve([], [0.5])


class TestTprAtFpr:
    def test_accept_all_endpoint(self):
        curve = roc_curve([1.0, 2.0], [3.0, 4.0])
        assert tpr_at_fpr(curve, 1.0).tpr == 1.0

    def test_strictest_threshold_at_zero(self):
        curve = roc_curve([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
        result = tpr_at_fpr(curve, 0.0)
        assert result.fpr == 0.0
        assert result.tpr == pytest.approx(1.0 / 3.0)

    def test_five_percent_protocol(self):
        # 5.6% of members and exactly 5% of non-members sit below the
        # separating threshold: the 5% operating point reads tpr 0.056.
        model, train, holdout = _controlled_trial(56, 50)
        from dpaudit.trainer import per_example_losses

        curve = roc_curve(
            per_example_losses(model, train), per_example_losses(model, holdout)
        )
        result = tpr_at_fpr(curve, 0.05)
        assert result.fpr == 0.05
        assert result.tpr == pytest.approx(0.056)
        assert result.advantage == pytest.approx(0.006)

    def test_no_interpolation(self):
        # fpr jumps from 0 to 0.5; at target 0.25 the achievable point is 0.
        curve = roc_curve([1.0, 1.0], [2.0, 3.0])
        assert tpr_at_fpr(curve, 0.25).fpr == 0.0

    def test_rejects_out_of_range(self):
        curve = roc_curve([1.0], [2.0])
        with pytest.raises(ValueError):
            tpr_at_fpr(curve, 1.5)


class TestBestAdvantage:
    def test_identical_distributions_zero(self):
        values = [0.1, 0.5, 0.9]
        assert best_advantage(roc_curve(values, values))[0] == 0.0

    def test_perfect_separation_one(self):
        assert best_advantage(roc_curve([0.0, 0.1], [1.0, 1.1]))[0] == 1.0

    def test_tie_break_smallest_fpr(self):
        curve = roc_curve([1.0, 2.0, 3.0], [2.0, 3.0, 4.0])
        advantage, threshold = best_advantage(curve)
        assert advantage == pytest.approx(1.0 / 3.0)
        assert threshold == 1.0  # thresholds 1, 2, 3 tie; smallest fpr wins

    def test_dominates_average_loss_threshold(self):
        train, holdout = generate_synthetic(300, 30, 5, 0.5, 31)
        model, _ = train_dpsgd(
            train, SgdConfig.from_epochs(sigma=0, clip=1, q=0.1, lr=0.1, epochs=60, seed=8)
        )
        from dpaudit.trainer import per_example_losses

        curve = roc_curve(
            per_example_losses(model, train), per_example_losses(model, holdout)
        )
        assert best_advantage(curve)[0] >= yeom_attack(model, train, holdout).advantage

    def test_zero_signal_stays_below_empirical_process_bound(self):
        # Two samples from one distribution, n = m = 1000: the best sweep
        # advantage is a two-sample KS statistic, below 3 sqrt(2/1000) with
        # overwhelming probability; checked across 20 fixed seeds.
        bound = 3 * math.sqrt(2.0 / 1000.0)
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            curve = roc_curve(rng.exponential(size=1000), rng.exponential(size=1000))
            assert best_advantage(curve)[0] < bound


class TestAveragedAttack:
    def test_single_trial_equals_fixed_point(self):
        model, train, holdout = _controlled_trial(56, 50)
        from dpaudit.trainer import per_example_losses

        single = averaged_attack([model], [(train, holdout)])
        direct = tpr_at_fpr(
            roc_curve(
                per_example_losses(model, train), per_example_losses(model, holdout)
            ),
            0.05,
        )
        assert single.tpr == direct.tpr
        assert single.fpr == direct.fpr
        assert single.trials == 1

    def test_arithmetic_mean_of_trials(self):
        trial_a = _controlled_trial(50, 50)
        trial_b = _controlled_trial(70, 50)
        result = averaged_attack(
            [trial_a[0], trial_b[0]],
            [(trial_a[1], trial_a[2]), (trial_b[1], trial_b[2])],
        )
        assert result.tpr == pytest.approx(0.06)
        assert result.fpr == pytest.approx(0.05)
        assert result.advantage == result.tpr - result.fpr
        assert result.trials == 2

    def test_rejects_mismatched_lengths(self):
        model, train, holdout = _controlled_trial(10, 10)
        with pytest.raises(ValueError):
            averaged_attack([model], [])


class TestAttackResult:
    def test_advantage_consistency_enforced(self):
        with pytest.raises(ValueError):
            AttackResult(threshold=0.0, tpr=0.5, fpr=0.1, advantage=0.3)

    def test_rate_bounds_enforced(self):
        with pytest.raises(ValueError):
            AttackResult(threshold=0.0, tpr=1.5, fpr=0.0, advantage=1.5)


class TestExportLosses:
    def test_single_column_csv(self, tmp_path):
        path = tmp_path / "losses.csv"
        export_losses([0.5, 1.25], str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "loss"
        assert [float(x) for x in lines[1:]] == [0.5, 1.25]
