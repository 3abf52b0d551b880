"""Experiment orchestration: grids of audited training runs and their reports.

One experiment trains models across a noise grid (or across target-epsilon /
analysis pairs, calibrating the noise first), mounts the loss-threshold
attack on every run, and assembles per-noise rows holding utility, attack
metrics, all four accounting upper bounds, and the attack-derived lower
bounds. Reports are written as JSON (exact, round-trippable), compact CSV
tables, region plot data, and a rendered region figure.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .accountant import AnalysisKind, SgdConfig, account, calibrate_sigma
from .attack import averaged_attack, best_advantage, roc_curve
from .bounds import PrivacyRegionPoint, eps_lower_bound, write_region_csv
from .mechanisms import GENERATOR_DESCRIPTION, derive_seed, rng_from_seed
from .trainer import (
    Dataset,
    SyntheticSpec,
    accuracy,
    generate_synthetic,
    load_csv,
    per_example_losses,
    train_dpsgd,
)

CONFIG_VERSION = 1
TARGET_FPR = 0.05


def _decimal(x: float) -> str:
    """Decimal string with 17 significant digits; round-trips float64 exactly."""
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one audit run needs, loadable from a JSON file."""

    data: SyntheticSpec | str  # synthetic spec or CSV path
    sgd: SgdConfig  # sigma and seed fields are placeholders
    delta: float
    trials: int
    output_dir: str
    seed: int
    sigma_grid: tuple[float, ...] | None = None
    target_eps: tuple[float, ...] | None = None
    target_analyses: tuple[AnalysisKind, ...] | None = None

    def __post_init__(self) -> None:
        sigma_mode = self.sigma_grid is not None
        target_mode = self.target_eps is not None or self.target_analyses is not None
        if sigma_mode == target_mode:
            raise ValueError("exactly one of sigma_grid / target mode must be set")
        if target_mode and (not self.target_eps or not self.target_analyses):
            raise ValueError("target mode needs both target_eps and target_analyses")
        if sigma_mode and (len(self.sigma_grid) == 0 or any(s < 0 for s in self.sigma_grid)):
            raise ValueError("sigma_grid must be non-empty with sigma >= 0")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        if raw.get("config_version") != CONFIG_VERSION:
            raise ValueError(
                f"unsupported config_version {raw.get('config_version')!r}; "
                f"expected {CONFIG_VERSION}"
            )
        data_raw = raw["data"]
        if "synthetic" in data_raw:
            s = data_raw["synthetic"]
            data: SyntheticSpec | str = SyntheticSpec(
                n=int(s.get("n", 10000)),
                dim=int(s.get("dim", 50)),
                classes=int(s.get("classes", 10)),
                separation=float(s.get("separation", 0.5)),
            )
        elif "csv" in data_raw:
            data = str(data_raw["csv"])
        else:
            raise ValueError("data must contain either 'synthetic' or 'csv'")
        sgd_raw = raw.get("sgd", {})
        sgd = SgdConfig.from_epochs(
            sigma=0.0,
            clip=float(sgd_raw.get("clip", 1.0)),
            q=float(sgd_raw.get("q", 0.02)),
            lr=float(sgd_raw.get("lr", 0.1)),
            epochs=int(sgd_raw.get("epochs", 100)),
            seed=0,
        )
        targets_raw = raw.get("targets")
        return cls(
            data=data,
            sgd=sgd,
            delta=float(raw.get("delta", 1e-5)),
            trials=int(raw.get("trials", 5)),
            output_dir=str(raw.get("output_dir", "audit-out")),
            seed=int(raw.get("seed", 0)),
            sigma_grid=(
                tuple(float(s) for s in raw["sigma_grid"])
                if raw.get("sigma_grid") is not None
                else None
            ),
            target_eps=(
                tuple(float(t) for t in targets_raw["eps"]) if targets_raw else None
            ),
            target_analyses=(
                tuple(AnalysisKind(a) for a in targets_raw["analyses"])
                if targets_raw
                else None
            ),
        )

    def to_json(self) -> str:
        if isinstance(self.data, SyntheticSpec):
            data_raw = {
                "synthetic": {
                    "n": self.data.n,
                    "dim": self.data.dim,
                    "classes": self.data.classes,
                    "separation": self.data.separation,
                }
            }
        else:
            data_raw = {"csv": self.data}
        raw: dict = {
            "config_version": CONFIG_VERSION,
            "data": data_raw,
            "sgd": {
                "clip": self.sgd.clip,
                "q": self.sgd.q,
                "lr": self.sgd.lr,
                "epochs": self.sgd.epochs,
            },
            "delta": self.delta,
            "trials": self.trials,
            "output_dir": self.output_dir,
            "seed": self.seed,
        }
        if self.sigma_grid is not None:
            raw["sigma_grid"] = list(self.sigma_grid)
        else:
            raw["targets"] = {
                "eps": list(self.target_eps),
                "analyses": [k.value for k in self.target_analyses],
            }
        return json.dumps(raw, indent=2, sort_keys=True)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class AuditRow:
    """Per-noise-level audit metrics; None everywhere but sigma on failure."""

    sigma: float
    target_eps: float | None = None
    target_analysis: str | None = None
    accuracy: float | None = None
    accuracy_rel_baseline: float | None = None
    attack_tpr: float | None = None
    attack_fpr: float | None = None
    advantage: float | None = None
    advantage_ci_low: float | None = None
    advantage_ci_high: float | None = None
    best_advantage: float | None = None
    eps_naive: float | None = None
    eps_advanced: float | None = None
    eps_zcdp: float | None = None
    eps_rdp: float | None = None
    eps_lower: float | None = None
    eps_lower_best: float | None = None
    error: str | None = None


@dataclass(frozen=True)
class AuditReport:
    """All rows of one experiment plus its provenance metadata."""

    rows: tuple[AuditRow, ...]
    metadata: dict


def _trial_datasets(config: ExperimentConfig, trial: int) -> tuple[Dataset, Dataset]:
    data_seed = derive_seed(config.seed, trial, 0)
    if isinstance(config.data, SyntheticSpec):
        s = config.data
        return generate_synthetic(s.n, s.dim, s.classes, s.separation, data_seed)
    full = load_csv(config.data)
    perm = rng_from_seed(data_seed).permutation(full.n)
    half = full.n // 2
    train_idx, holdout_idx = perm[:half], perm[half : 2 * half]
    return (
        Dataset(full.features[train_idx], full.labels[train_idx], "train"),
        Dataset(full.features[holdout_idx], full.labels[holdout_idx], "holdout"),
    )


def run_experiment(config: ExperimentConfig) -> AuditReport:
    """Runs the full audit grid and assembles the report.

    Sigma mode: one row per grid value, ``sigma = 0`` meaning the noiseless
    baseline (accounting columns become +inf). Target mode: one row per
    (target eps, analysis) pair, with sigma calibrated first. Per-row
    failures are recorded on the row and the grid continues. Deterministic
    given the root seed.
    """
    if config.sigma_grid is not None:
        row_specs: list[tuple[float | None, float | None, AnalysisKind | None]] = [
            (s, None, None) for s in config.sigma_grid
        ]
    else:
        row_specs = []
        for target in config.target_eps:
            for kind in config.target_analyses:
                try:
                    sigma = calibrate_sigma(target, kind, config.sgd, config.delta)
                except (ValueError, RuntimeError) as exc:
                    row_specs.append((None, target, kind))
                    continue
                row_specs.append((sigma, target, kind))

    datasets = [_trial_datasets(config, t) for t in range(config.trials)]
    baselines = [
        train_dpsgd(
            datasets[t][0],
            dataclasses.replace(config.sgd, sigma=0.0, seed=derive_seed(config.seed, t, 1)),
        )[0]
        for t in range(config.trials)
    ]
    baseline_accs = [accuracy(baselines[t], datasets[t][0]) for t in range(config.trials)]

    rows = []
    for k, (sigma, target, kind) in enumerate(row_specs):
        if sigma is None:
            rows.append(
                AuditRow(
                    sigma=math.nan,
                    target_eps=target,
                    target_analysis=kind.value,
                    error=f"calibration failed for target eps {target} under {kind.value}",
                )
            )
            continue
        try:
            rows.append(
                _run_row(config, sigma, target, kind, datasets, baselines, baseline_accs)
            )
        except (ValueError, RuntimeError) as exc:
            rows.append(
                AuditRow(
                    sigma=sigma,
                    target_eps=target,
                    target_analysis=kind.value if kind else None,
                    error=str(exc),
                )
            )

    metadata = {
        "artifact": "dpaudit",
        "version": __version__,
        "config_version": CONFIG_VERSION,
        "config_hash": config.content_hash(),
        "seed": config.seed,
        "trials": config.trials,
        "delta": _decimal(config.delta),
        "target_fpr": TARGET_FPR,
        "rng": GENERATOR_DESCRIPTION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    return AuditReport(rows=tuple(rows), metadata=metadata)


def _run_row(
    config: ExperimentConfig,
    sigma: float,
    target: float | None,
    kind: AnalysisKind | None,
    datasets: list[tuple[Dataset, Dataset]],
    baselines: list,
    baseline_accs: list[float],
) -> AuditRow:
    # All rows of a trial share one training seed: the sampling stream (and
    # with it the Poisson masks) is then identical across noise levels and
    # only the injected noise differs, so cross-row comparisons are paired.
    models = []
    for t in range(config.trials):
        if sigma == 0:
            models.append(baselines[t])  # identical run; rel-accuracy is exactly 1
        else:
            run = dataclasses.replace(
                config.sgd, sigma=sigma, seed=derive_seed(config.seed, t, 1)
            )
            models.append(train_dpsgd(datasets[t][0], run)[0])

    accs = [accuracy(models[t], datasets[t][0]) for t in range(config.trials)]
    rels = [accs[t] / baseline_accs[t] for t in range(config.trials)]
    fixed = averaged_attack(models, datasets, TARGET_FPR)
    # Wald 95% CI on the advantage point estimate, pooling trials; the lower
    # bound itself stays a point-estimate translation, the CI is advisory.
    n_members = sum(datasets[t][0].n for t in range(config.trials))
    n_nonmembers = sum(datasets[t][1].n for t in range(config.trials))
    se = math.sqrt(
        fixed.tpr * (1 - fixed.tpr) / n_members
        + fixed.fpr * (1 - fixed.fpr) / n_nonmembers
    )
    advantage = fixed.tpr - fixed.fpr
    best = float(
        np.mean(
            [
                best_advantage(
                    roc_curve(
                        per_example_losses(models[t], datasets[t][0]),
                        per_example_losses(models[t], datasets[t][1]),
                    )
                )[0]
                for t in range(config.trials)
            ]
        )
    )

    if sigma == 0:
        eps = {k: math.inf for k in AnalysisKind}
    else:
        eps = {
            k: account(config.sgd.with_sigma(sigma), k, config.delta).eps
            for k in AnalysisKind
        }

    return AuditRow(
        sigma=sigma,
        target_eps=target,
        target_analysis=kind.value if kind else None,
        accuracy=float(np.mean(accs)),
        accuracy_rel_baseline=float(np.mean(rels)),
        attack_tpr=fixed.tpr,
        attack_fpr=fixed.fpr,
        advantage=advantage,
        advantage_ci_low=advantage - 1.96 * se,
        advantage_ci_high=advantage + 1.96 * se,
        best_advantage=best,
        eps_naive=eps[AnalysisKind.NAIVE],
        eps_advanced=eps[AnalysisKind.ADVANCED],
        eps_zcdp=eps[AnalysisKind.ZCDP],
        eps_rdp=eps[AnalysisKind.RDP],
        eps_lower=eps_lower_bound(advantage, config.delta),
        eps_lower_best=eps_lower_bound(best, config.delta),
    )


_BUDGET_FIELDS = (
    "eps_naive",
    "eps_advanced",
    "eps_zcdp",
    "eps_rdp",
    "eps_lower",
    "eps_lower_best",
)


def _row_to_json(row: AuditRow) -> dict:
    out: dict = {}
    for f in dataclasses.fields(AuditRow):
        value = getattr(row, f.name)
        if f.name in _BUDGET_FIELDS and value is not None:
            out[f.name] = _decimal(value)
        elif f.name == "sigma" and math.isnan(value):
            out[f.name] = None  # calibration-failure rows have no sigma
        else:
            out[f.name] = value
    return out


def _row_from_json(raw: dict) -> AuditRow:
    kwargs = dict(raw)
    for f in _BUDGET_FIELDS:
        if kwargs.get(f) is not None:
            kwargs[f] = float(kwargs[f])
    if kwargs.get("sigma") is None:
        kwargs["sigma"] = math.nan
    return AuditRow(**kwargs)


def report_to_json(report: AuditReport) -> str:
    """Serializes a report; budget values become exact decimal strings."""
    payload = {
        "metadata": report.metadata,
        "rows": [_row_to_json(r) for r in report.rows],
    }
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_report(path: str) -> AuditReport:
    """Parses a report.json back into an :class:`AuditReport`."""
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return AuditReport(
        rows=tuple(_row_from_json(r) for r in payload["rows"]),
        metadata=payload["metadata"],
    )


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _region_points(report: AuditReport) -> list[PrivacyRegionPoint]:
    points = []
    for r in report.rows:
        if r.error is not None or r.sigma <= 0:
            continue
        try:
            points.append(
                PrivacyRegionPoint(
                    sigma=r.sigma,
                    eps_lower=r.eps_lower_best,
                    eps_upper=r.eps_rdp,
                    advantage_used=r.best_advantage,
                    analysis_used=AnalysisKind.RDP,
                )
            )
        except ValueError as exc:
            # The empirical sweep advantage refuted the accounting bound
            # (statistical noise can do this at extreme noise levels); keep
            # the point marked instead of aborting the report.
            points.append(
                PrivacyRegionPoint(
                    sigma=r.sigma,
                    eps_lower=math.nan,
                    eps_upper=math.nan,
                    advantage_used=r.best_advantage,
                    analysis_used=AnalysisKind.RDP,
                    error=str(exc),
                )
            )
    points.sort(key=lambda p: -p.sigma)
    return points


def _render_region_figure(points: list[PrivacyRegionPoint], path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "dpaudit"  # deterministic element ids
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    finite = [p for p in points if math.isfinite(p.eps_upper)]
    if finite:
        sigmas = [p.sigma for p in finite]
        uppers = [p.eps_upper for p in finite]
        # Zero lower bounds cannot sit on a log axis; floor them for display.
        floor = min(u for u in uppers) * 1e-4
        lowers = [max(p.eps_lower, floor) for p in finite]
        ax.plot(sigmas, uppers, marker="o", label="accounting upper bound (RDP)")
        ax.plot(sigmas, lowers, marker="s", label="attack-derived lower bound")
        ax.fill_between(sigmas, lowers, uppers, alpha=0.2, label="region of privacy")
        ax.legend(loc="best", fontsize=8)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("noise multiplier")
    ax.set_ylabel("epsilon")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def emit_report(
    report: AuditReport,
    out_dir: str,
    formats: tuple[str, ...] = ("json", "csv", "svg"),
) -> list[str]:
    """Writes the report files into ``out_dir`` and returns their paths.

    json: report.json (exact, round-trippable). csv: table1.csv (utility and
    attack TPR against the upper bounds), table2.csv (lower bound against
    upper bounds), region.csv (plot data). svg: region.svg, the log-log
    region-of-privacy chart.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    ok_rows = [r for r in report.rows if r.error is None]

    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report_to_json(report))
        written.append(path)

    if "csv" in formats:
        path = os.path.join(out_dir, "table1.csv")
        _write_csv(
            path,
            ["sigma", "accuracy", "attack_tpr", "eps_naive", "eps_advanced", "eps_rdp"],
            [
                [
                    _decimal(r.sigma),
                    _decimal(r.accuracy),
                    _decimal(r.attack_tpr),
                    _decimal(r.eps_naive),
                    _decimal(r.eps_advanced),
                    _decimal(r.eps_rdp),
                ]
                for r in ok_rows
            ],
        )
        written.append(path)

        path = os.path.join(out_dir, "table2.csv")
        _write_csv(
            path,
            ["sigma", "eps_lower", "eps_rdp", "eps_advanced", "eps_naive"],
            [
                [
                    _decimal(r.sigma),
                    _decimal(r.eps_lower),
                    _decimal(r.eps_rdp),
                    _decimal(r.eps_advanced),
                    _decimal(r.eps_naive),
                ]
                for r in ok_rows
            ],
        )
        written.append(path)

        path = os.path.join(out_dir, "region.csv")
        write_region_csv(_region_points(report), path)
        written.append(path)

    if "svg" in formats:
        path = os.path.join(out_dir, "region.svg")
        _render_region_figure(_region_points(report), path)
        written.append(path)

    return written
