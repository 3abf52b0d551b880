"""Exact verification of the attack-success bounds on finite mechanisms.

For a mechanism with a finite output alphabet and known probability tables
under two neighboring inputs, every achievable (FPR, TPR) pair of a
deterministic test is enumerable: Neyman-Pearson says the optimal staircase
comes from thresholding the likelihood ratio. That staircase is ground truth
against which the TPR and advantage bounds are checked pointwise, with no
sampling error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accountant import PrivacyBudget
from .attack import RocCurve
from .bounds import advantage_upper_bound, tpr_upper_bound
from .mechanisms import randomized_response_epsilon

VERIFY_TOLERANCE = 1e-12


class BoundViolation(RuntimeError):
    """An exactly enumerated test beats a bound: unsound budget or a bug."""


@dataclass(frozen=True)
class FiniteMechanism:
    """Output distributions of one mechanism on two neighboring inputs."""

    outputs: tuple[str, ...]
    p_in: tuple[float, ...]
    p_out: tuple[float, ...]
    budget: PrivacyBudget

    def __post_init__(self) -> None:
        k = len(self.outputs)
        if len(self.p_in) != k or len(self.p_out) != k or k == 0:
            raise ValueError("outputs, p_in, p_out must be equal-length and non-empty")
        for name, vec in (("p_in", self.p_in), ("p_out", self.p_out)):
            if any(p < 0 for p in vec):
                raise ValueError(f"{name} has negative entries")
            if abs(sum(vec) - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1, got {sum(vec)}")

    def verify_declared_budget(self) -> None:
        """Checks the declared (eps, delta) against the probability tables.

        Uses the hockey-stick divergence, exact for finite alphabets: the
        mass by which one table exceeds e^eps times the other, in both
        directions, must not exceed delta.
        """
        e_eps = math.exp(self.budget.eps)
        fwd = sum(max(0.0, pi - e_eps * po) for pi, po in zip(self.p_in, self.p_out))
        bwd = sum(max(0.0, po - e_eps * pi) for pi, po in zip(self.p_in, self.p_out))
        required = max(fwd, bwd)
        if required > self.budget.delta + VERIFY_TOLERANCE:
            raise ValueError(
                f"declared budget (eps={self.budget.eps:.6g}, "
                f"delta={self.budget.delta:.6g}) is unsound: needs delta >= "
                f"{required:.6g}"
            )

    @classmethod
    def randomized_response(cls, p: float) -> "FiniteMechanism":
        """Binary randomized response with truth probability p in (0.5, 1)."""
        eps = randomized_response_epsilon(p)
        return cls(
            outputs=("0", "1"),
            p_in=(1.0 - p, p),
            p_out=(p, 1.0 - p),
            budget=PrivacyBudget(eps=eps, delta=0.0),
        )

    @classmethod
    def random(cls, n_outputs: int, rng: np.random.Generator) -> "FiniteMechanism":
        """A random mechanism whose pure-DP budget is computed exactly.

        Probabilities are bounded away from zero so every log-ratio is
        finite; eps is the largest absolute log-ratio, delta is 0.
        """
        p_in = rng.random(n_outputs) + 0.05
        p_out = rng.random(n_outputs) + 0.05
        p_in /= p_in.sum()
        p_out /= p_out.sum()
        eps = float(np.max(np.abs(np.log(p_in / p_out))))
        return cls(
            outputs=tuple(str(i) for i in range(n_outputs)),
            p_in=tuple(float(p) for p in p_in),
            p_out=tuple(float(p) for p in p_out),
            budget=PrivacyBudget(eps=eps, delta=0.0),
        )

    @classmethod
    def from_csv(cls, path: str, budget: PrivacyBudget | None = None) -> "FiniteMechanism":
        """Loads rows ``output_id,p_in,p_out``; header auto-detected.

        Without an explicit budget the exact pure-DP epsilon is declared
        (infinite log-ratios are rejected).
        """
        outputs: list[str] = []
        p_in: list[float] = []
        p_out: list[float] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 fields")
                if lineno == 1:
                    try:
                        float(fields[1])
                    except ValueError:
                        continue  # header
                outputs.append(fields[0])
                p_in.append(float(fields[1]))
                p_out.append(float(fields[2]))
        if budget is None:
            if any(a == 0 or b == 0 for a, b in zip(p_in, p_out)):
                raise ValueError(
                    f"{path}: zero probabilities need an explicit (eps, delta) budget"
                )
            eps = max(abs(math.log(a / b)) for a, b in zip(p_in, p_out))
            budget = PrivacyBudget(eps=eps, delta=0.0)
        return cls(
            outputs=tuple(outputs), p_in=tuple(p_in), p_out=tuple(p_out), budget=budget
        )


def exact_roc(m: FiniteMechanism) -> RocCurve:
    """The exact achievable ROC staircase of deterministic tests.

    Outputs are accepted in order of decreasing likelihood ratio
    p_in/p_out (zero-ratio outputs last, in input order); the cumulative
    (p_out, p_in) sums after each prefix are the staircase vertices, optimal
    by Neyman-Pearson. The stored threshold is the prefix's smallest ratio.
    """
    ratios = []
    for i, (pi, po) in enumerate(zip(m.p_in, m.p_out)):
        if po == 0:
            ratio = math.inf if pi > 0 else 0.0
        else:
            ratio = pi / po
        ratios.append((ratio, i))
    ratios.sort(key=lambda t: (-t[0], t[1]))

    points = [(math.inf, 0.0, 0.0)]
    fpr = tpr = 0.0
    for ratio, i in ratios:
        fpr += m.p_out[i]
        tpr += m.p_in[i]
        points.append((ratio, min(1.0, fpr), min(1.0, tpr)))
    # Cumulative sums end at (1, 1) up to rounding; pin the endpoint.
    last = points[-1]
    points[-1] = (last[0], 1.0, 1.0)
    return RocCurve(points=tuple(points))


@dataclass(frozen=True)
class VerificationReport:
    """Outcome of checking one bound over a full exact staircase."""

    mechanism_outputs: int
    points_checked: int
    max_slack: float
    min_slack: float
    min_slack_point: tuple[float, float]


def verify_prop1(m: FiniteMechanism) -> VerificationReport:
    """Checks TPR <= e^eps FPR + delta at every exact ROC vertex.

    Raises :class:`BoundViolation` naming the first violating point;
    otherwise reports the largest and smallest slack (bound minus achieved).
    """
    curve = exact_roc(m)
    slacks = []
    for threshold, fpr, tpr in curve.points:
        bound = tpr_upper_bound(fpr, m.budget)
        if tpr > bound + VERIFY_TOLERANCE:
            raise BoundViolation(
                f"TPR bound violated at (fpr={fpr:.6g}, tpr={tpr:.6g}): "
                f"bound {bound:.6g} under declared eps={m.budget.eps:.6g}, "
                f"delta={m.budget.delta:.6g}"
            )
        slacks.append((bound - tpr, fpr, tpr))
    min_slack = min(slacks, key=lambda s: s[0])
    return VerificationReport(
        mechanism_outputs=len(m.outputs),
        points_checked=len(slacks),
        max_slack=max(s[0] for s in slacks),
        min_slack=min_slack[0],
        min_slack_point=(min_slack[1], min_slack[2]),
    )


def verify_prop2(m: FiniteMechanism) -> VerificationReport:
    """Checks the best exact advantage against the advantage cap."""
    curve = exact_roc(m)
    best = max(tpr - fpr for _, fpr, tpr in curve.points)
    bound = advantage_upper_bound(m.budget)
    if best > bound + VERIFY_TOLERANCE:
        raise BoundViolation(
            f"advantage bound violated: best {best:.6g} exceeds cap "
            f"{bound:.6g} under declared eps={m.budget.eps:.6g}, "
            f"delta={m.budget.delta:.6g}"
        )
    best_point = max(curve.points, key=lambda p: p[2] - p[1])
    return VerificationReport(
        mechanism_outputs=len(m.outputs),
        points_checked=len(curve.points),
        max_slack=bound - best,
        min_slack=bound - best,
        min_slack_point=(best_point[1], best_point[2]),
    )


@dataclass(frozen=True)
class SuiteResult:
    """Summary of the built-in verification suite."""

    mechanisms: int
    prop1_passed: bool
    prop2_passed: bool
    prop1_min_slack: float
    prop2_min_gap: float


def run_suite(seed: int = 20240, random_mechanisms: int = 20) -> SuiteResult:
    """Verifies both bounds on randomized response and random mechanisms.

    Randomized response is swept over truth probabilities 0.55 to 0.95;
    the random mechanisms have 8 outputs and exactly computed pure budgets.
    Any violation raises; success returns the tightest observed slacks.
    """
    mechanisms = [
        FiniteMechanism.randomized_response(p)
        for p in np.arange(0.55, 0.951, 0.05).round(10)
    ]
    rng = np.random.Generator(np.random.PCG64(seed))
    mechanisms += [FiniteMechanism.random(8, rng) for _ in range(random_mechanisms)]

    prop1_min = math.inf
    prop2_min = math.inf
    for m in mechanisms:
        m.verify_declared_budget()
        prop1_min = min(prop1_min, verify_prop1(m).min_slack)
        prop2_min = min(prop2_min, verify_prop2(m).min_slack)
    return SuiteResult(
        mechanisms=len(mechanisms),
        prop1_passed=True,
        prop2_passed=True,
        prop1_min_slack=prop1_min,
        prop2_min_gap=prop2_min,
    )
