"""Attack-success bounds and the attack-derived epsilon lower bound.

Three closed forms connect (eps, delta)-DP to membership inference:

  * any hypothesis test against a DP mechanism has TPR <= e^eps * FPR + delta;
  * membership advantage (TPR - FPR) is at most 1 - e^-eps + delta e^-eps,
    which tightens the older e^eps - 1 cap;
  * inverting the advantage bound, an observed advantage gamma certifies
    eps >= ln((1 - delta) / (1 - gamma)).

Combining the best attack-derived lower bound with the best accounting upper
bound brackets the model's actual privacy loss: the region of privacy.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from . import attack as attack_mod
from .accountant import AnalysisKind, PrivacyBudget, SgdConfig, account
from .mechanisms import derive_seed
from .trainer import SyntheticSpec, generate_synthetic, per_example_losses, train_dpsgd


def tpr_upper_bound(fpr: float, budget: PrivacyBudget) -> float:
    """Largest TPR any test at this FPR can reach: min(1, e^eps fpr + delta)."""
    if not 0 <= fpr <= 1:
        raise ValueError(f"fpr must be in [0, 1], got {fpr}")
    return min(1.0, math.exp(budget.eps) * fpr + budget.delta)


def advantage_upper_bound(budget: PrivacyBudget) -> float:
    """Cap on membership advantage: 1 - e^-eps + delta e^-eps."""
    return 1.0 - math.exp(-budget.eps) + budget.delta * math.exp(-budget.eps)


def yeom_advantage_bound(eps: float) -> float:
    """The older advantage cap min(1, e^eps - 1), kept as a comparator.

    Strictly looser than :func:`advantage_upper_bound` wherever it is below
    its cap.
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    return min(1.0, math.expm1(eps))


def eps_lower_bound(advantage: float, delta: float) -> float:
    """Epsilon any (eps, delta)-DP claim must exceed given observed advantage.

    max(0, ln((1 - delta) / (1 - advantage))); clamped at 0 because a tiny or
    negative advantage certifies nothing. Advantage 1 returns +inf: no finite
    epsilon is consistent with a perfect attack.
    """
    if not 0 <= delta < 1:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    if advantage > 1:
        raise ValueError(f"advantage must be <= 1, got {advantage}")
    if advantage == 1:
        return math.inf
    return max(0.0, math.log((1.0 - delta) / (1.0 - advantage)))


@dataclass(frozen=True)
class PrivacyRegionPoint:
    """One noise level's bracket [eps_lower, eps_upper] on the true loss."""

    sigma: float
    eps_lower: float
    eps_upper: float
    advantage_used: float
    analysis_used: AnalysisKind
    error: str | None = None

    def __post_init__(self) -> None:
        if self.error is None and not self.eps_lower <= self.eps_upper:
            raise ValueError(
                f"eps lower bound {self.eps_lower} exceeds upper bound "
                f"{self.eps_upper} at sigma {self.sigma}: the attack refutes "
                "the claimed guarantee or the implementation is wrong"
            )


def privacy_region(
    sigma_grid: list[float],
    synth: SyntheticSpec,
    template: SgdConfig,
    delta: float,
    trials: int = 5,
    seed: int = 0,
    advantage_source: str = "best",
) -> list[PrivacyRegionPoint]:
    """Trains along a noise grid and brackets epsilon at each point.

    Per sigma: ``trials`` models are trained on fresh same-distribution
    splits, the attack advantage (the best threshold-sweep advantage, or
    with ``advantage_source="fixed_fpr"`` the 5%-FPR operating point) is
    averaged across trials and converted through the advantage bound into an
    epsilon lower bound, and the RDP accountant supplies the upper bound.
    Failed grid points are kept with their error message; the rest of the
    grid continues. Points are returned sorted by sigma descending.
    """
    if not sigma_grid:
        raise ValueError("sigma grid must be non-empty")
    if any(not s > 0 for s in sigma_grid):
        raise ValueError("all grid sigmas must be positive")
    if advantage_source not in ("best", "fixed_fpr"):
        raise ValueError(f"unknown advantage_source {advantage_source!r}")
    points = []
    for sigma in sorted(sigma_grid, reverse=True):
        try:
            advantages = []
            for trial in range(trials):
                data_seed = derive_seed(seed, trial, 0)
                train, holdout = generate_synthetic(
                    synth.n, synth.dim, synth.classes, synth.separation, data_seed
                )
                # One training seed per trial across the grid: Poisson masks
                # are shared and only the injected noise varies with sigma.
                run = dataclasses.replace(
                    template, sigma=sigma, seed=derive_seed(seed, trial, 1)
                )
                model, _ = train_dpsgd(train, run)
                curve = attack_mod.roc_curve(
                    per_example_losses(model, train), per_example_losses(model, holdout)
                )
                if advantage_source == "best":
                    advantages.append(attack_mod.best_advantage(curve)[0])
                else:
                    point = attack_mod.tpr_at_fpr(curve, 0.05)
                    advantages.append(point.advantage)
            gamma = float(np.mean(advantages))
            upper = account(template.with_sigma(sigma), AnalysisKind.RDP, delta)
            points.append(
                PrivacyRegionPoint(
                    sigma=sigma,
                    eps_lower=eps_lower_bound(gamma, delta),
                    eps_upper=upper.eps,
                    advantage_used=gamma,
                    analysis_used=AnalysisKind.RDP,
                )
            )
        except (ValueError, RuntimeError) as exc:
            points.append(
                PrivacyRegionPoint(
                    sigma=sigma,
                    eps_lower=math.nan,
                    eps_upper=math.nan,
                    advantage_used=math.nan,
                    analysis_used=AnalysisKind.RDP,
                    error=str(exc),
                )
            )
    return points


def write_region_csv(points: list[PrivacyRegionPoint], path: str) -> None:
    """Emits region points as CSV: sigma,eps_lower,eps_upper,advantage,analysis.

    Failed or refuted points carry no plot data and are skipped.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("sigma,eps_lower,eps_upper,advantage,analysis\n")
        for p in points:
            if p.error is not None:
                continue
            fh.write(
                ",".join(
                    [
                        format(p.sigma, ".17g"),
                        format(p.eps_lower, ".17g"),
                        format(p.eps_upper, ".17g"),
                        format(p.advantage_used, ".17g"),
                        p.analysis_used.value,
                    ]
                )
                + "\n"
            )
