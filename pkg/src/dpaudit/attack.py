"""Loss-threshold membership inference and its ROC sweep.

The attack classifies an example as a training-set member when its
cross-entropy loss is at or below a threshold (ties count as member). The
basic variant thresholds at the mean training loss; the sweep enumerates
every distinct pooled loss value to find the operating point with the
largest advantage TPR - FPR, and the fixed-FPR helper realizes the
5%-false-positive protocol.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .trainer import Dataset, Model, per_example_losses


@dataclass(frozen=True)
class AttackResult:
    """One membership-inference operating point.

    ``advantage`` is TPR - FPR; the false-negative rate is 1 - tpr.
    """

    threshold: float
    tpr: float
    fpr: float
    advantage: float
    trials: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.tpr <= 1 or not 0 <= self.fpr <= 1:
            raise ValueError("tpr and fpr must lie in [0, 1]")
        if self.advantage != self.tpr - self.fpr:
            raise ValueError("advantage must equal tpr - fpr exactly")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")


@dataclass(frozen=True)
class RocCurve:
    """Operating points (threshold, fpr, tpr) sorted by fpr ascending."""

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        fprs = [p[1] for p in self.points]
        tprs = [p[2] for p in self.points]
        if any(not 0 <= r <= 1 for r in fprs + tprs):
            raise ValueError("rates must lie in [0, 1]")
        if any(b < a for a, b in zip(fprs, fprs[1:])):
            raise ValueError("fpr must be non-decreasing along the curve")
        if any(b < a for a, b in zip(tprs, tprs[1:])):
            raise ValueError("tpr must be non-decreasing along the curve")
        if (fprs[0], tprs[0]) != (0.0, 0.0) or (fprs[-1], tprs[-1]) != (1.0, 1.0):
            raise ValueError("curve must span (0,0) to (1,1)")


def roc_curve(member_losses: Sequence[float], nonmember_losses: Sequence[float]) -> RocCurve:
    """Sweeps every distinct pooled loss value as a membership threshold.

    Membership is predicted when loss <= threshold. Sentinel thresholds at
    -inf and +inf pin the (0,0) and (1,1) endpoints.
    """
    members = np.sort(np.asarray(member_losses, dtype=float))
    nonmembers = np.sort(np.asarray(nonmember_losses, dtype=float))
    if members.size == 0 or nonmembers.size == 0:
        raise ValueError("both loss vectors must be non-empty")
    thresholds = np.concatenate(
        ([-np.inf], np.unique(np.concatenate([members, nonmembers])), [np.inf])
    )
    tprs = np.searchsorted(members, thresholds, side="right") / members.size
    fprs = np.searchsorted(nonmembers, thresholds, side="right") / nonmembers.size
    points = tuple(
        (float(t), float(f), float(p)) for t, f, p in zip(thresholds, fprs, tprs)
    )
    return RocCurve(points=points)


def threshold_attack(
    member_losses: Sequence[float],
    nonmember_losses: Sequence[float],
    threshold: float,
) -> AttackResult:
    """Evaluates the member-iff-loss-at-most-threshold rule at one threshold."""
    member = np.asarray(member_losses, dtype=float)
    nonmember = np.asarray(nonmember_losses, dtype=float)
    if member.size == 0 or nonmember.size == 0:
        raise ValueError("both loss vectors must be non-empty")
    tpr = float(np.mean(member <= threshold))
    fpr = float(np.mean(nonmember <= threshold))
    return AttackResult(threshold=threshold, tpr=tpr, fpr=fpr, advantage=tpr - fpr)


def yeom_attack(model: Model, train: Dataset, holdout: Dataset) -> AttackResult:
    """Thresholds losses at the mean training loss; members score at or below.

    TPR is measured on the training split, FPR on the holdout split.
    """
    member_losses = per_example_losses(model, train)
    nonmember_losses = per_example_losses(model, holdout)
    return threshold_attack(member_losses, nonmember_losses, float(member_losses.mean()))


def tpr_at_fpr(curve: RocCurve, target_fpr: float) -> AttackResult:
    """Best operating point at the largest achievable FPR <= target.

    Step-function convention, no interpolation: the reported TPR is always
    achieved by an actual threshold, so downstream lower bounds come from
    realizable attacks.
    """
    if not 0 <= target_fpr <= 1:
        raise ValueError(f"target_fpr must be in [0, 1], got {target_fpr}")
    eligible = [p for p in curve.points if p[1] <= target_fpr]
    achieved_fpr = max(p[1] for p in eligible)
    threshold, fpr, tpr = max(
        (p for p in eligible if p[1] == achieved_fpr), key=lambda p: p[2]
    )
    return AttackResult(threshold=threshold, tpr=tpr, fpr=fpr, advantage=tpr - fpr)


def best_advantage(curve: RocCurve) -> tuple[float, float]:
    """Maximum TPR - FPR over the curve; ties break toward the smaller FPR.

    Advantages within 1e-12 of the maximum count as tied, so rationally equal
    operating points (e.g. 1/3 vs 1 - 2/3) are not separated by float
    rounding. Returns (advantage, threshold).
    """
    best = max(p[2] - p[1] for p in curve.points)
    chosen = min(
        (p for p in curve.points if p[2] - p[1] >= best - 1e-12), key=lambda p: p[1]
    )
    return chosen[2] - chosen[1], chosen[0]


def averaged_attack(
    models: Sequence[Model],
    datasets: Sequence[tuple[Dataset, Dataset]],
    target_fpr: float = 0.05,
) -> AttackResult:
    """Arithmetic mean of per-trial fixed-FPR operating points.

    Each trial contributes its TPR at the largest achievable FPR <= target;
    the averaged advantage is the mean TPR minus the mean FPR.
    """
    if len(models) == 0 or len(models) != len(datasets):
        raise ValueError("need one (train, holdout) pair per model")
    results = []
    for model, (train, holdout) in zip(models, datasets):
        member = per_example_losses(model, train)
        nonmember = per_example_losses(model, holdout)
        results.append(tpr_at_fpr(roc_curve(member, nonmember), target_fpr))
    tpr = float(np.mean([r.tpr for r in results]))
    fpr = float(np.mean([r.fpr for r in results]))
    threshold = float(np.mean([r.threshold for r in results]))
    return AttackResult(
        threshold=threshold, tpr=tpr, fpr=fpr, advantage=tpr - fpr, trials=len(results)
    )


def export_losses(losses: Sequence[float], path: str) -> None:
    """Writes a loss vector as a single-column CSV with a header row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("loss\n")
        for value in losses:
            fh.write(format(float(value), ".17g") + "\n")
