"""Logistic-regression training with DP-SGD, at audit desk scale.

Trains multinomial logistic regression with per-example L2 gradient clipping,
Poisson sampling, and Gaussian noise on the summed gradient. The noiseless
baseline is the same loop with sigma = 0. Per-example cross-entropy losses
are exposed for the membership-inference attack.

RNG protocol (relied on by reproducibility tests): the run seed is split
into a sampling stream and a noise stream. Each step draws exactly one
uniform vector of length n from the sampling stream for the Poisson mask;
the noise stream is consumed only when sigma > 0, so noiseless runs and the
baseline share sampling decisions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .accountant import SgdConfig
from .mechanisms import gaussian_noise, rng_from_seed

LOSS_FLOOR = 1e-12  # probability floor before the log; affects losses above ~27.6 only


class TrainingDiverged(RuntimeError):
    """Training loss became non-finite."""


@dataclass(frozen=True)
class Dataset:
    """A feature matrix with integer class labels and a split tag."""

    features: np.ndarray  # (n, d) float
    labels: np.ndarray  # (n,) int in [0, classes)
    split: str = "train"

    def __post_init__(self) -> None:
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must be one per feature row")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the Gaussian-mixture synthetic data source.

    The default separation 0.5 keeps the classes heavily overlapped so the
    trained model memorizes noise and the membership attack has signal to
    find; large separations make the task separable and the attack vacuous.
    """

    n: int = 10000
    dim: int = 50
    classes: int = 10
    separation: float = 0.5

    def __post_init__(self) -> None:
        if self.n < 1 or self.dim < 1 or self.classes < 1:
            raise ValueError("n, dim and classes must be positive")
        if self.separation < 0:
            raise ValueError("separation must be non-negative")


@dataclass
class Model:
    """Multinomial logistic-regression parameters plus training metadata."""

    weights: np.ndarray  # (d, classes)
    bias: np.ndarray  # (classes,)
    config: SgdConfig | None = None
    steps_run: int = 0
    final_train_loss: float = float("nan")

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def classes(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class TrainTrace:
    """Per-epoch average training loss and accuracy."""

    losses: tuple[float, ...] = field(default_factory=tuple)
    accuracies: tuple[float, ...] = field(default_factory=tuple)


def generate_synthetic(
    n: int, dim: int, classes: int, separation: float, seed: int
) -> tuple[Dataset, Dataset]:
    """Samples equal-sized train and holdout splits from one mixture.

    Class centers are random unit directions scaled by ``separation``;
    features are the center plus standard normal noise, so separation 0
    makes labels independent of features (chance-level Bayes accuracy) and
    large separations make the classes linearly separable. Both splits are
    i.i.d. from the same distribution.
    """
    spec = SyntheticSpec(n=n, dim=dim, classes=classes, separation=separation)
    rng = rng_from_seed(seed)
    centers = rng.normal(size=(spec.classes, spec.dim))
    norms = np.linalg.norm(centers, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    centers = centers / norms * spec.separation

    def draw(split: str) -> Dataset:
        labels = rng.integers(0, spec.classes, size=spec.n)
        features = centers[labels] + rng.normal(size=(spec.n, spec.dim))
        return Dataset(features=features, labels=labels, split=split)

    return draw("train"), draw("holdout")


def load_csv(path: str) -> Dataset:
    """Parses a dataset from CSV: integer label first, features after.

    A header row is auto-detected by a non-numeric first field. Malformed
    rows and inconsistent dimensions are reported with their line number.
    """
    rows: list[list[float]] = []
    dim: int | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(",")
            if lineno == 1:
                try:
                    float(fields[0])
                except ValueError:
                    continue  # header row
            try:
                values = [float(f) for f in fields]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {exc}") from None
            if len(values) < 2:
                raise ValueError(f"{path}:{lineno}: need a label and at least one feature")
            if dim is None:
                dim = len(values) - 1
            elif len(values) - 1 != dim:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} features, got {len(values) - 1}"
                )
            label = values[0]
            if label != int(label) or label < 0:
                raise ValueError(f"{path}:{lineno}: label must be a non-negative integer")
            rows.append(values)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=float)
    return Dataset(features=arr[:, 1:], labels=arr[:, 0].astype(int))


def save_csv(data: Dataset, path: str) -> None:
    """Writes a dataset in the load_csv format, with a header row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("label," + ",".join(f"f{i}" for i in range(data.dim)) + "\n")
        for label, row in zip(data.labels, data.features):
            fh.write(str(int(label)) + "," + ",".join(format(x, ".17g") for x in row) + "\n")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _probabilities(model: Model, features: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(features @ model.weights + model.bias))


def per_example_losses(model: Model, data: Dataset) -> np.ndarray:
    """Cross-entropy -ln p(true label) per example, floored at -ln 1e-12."""
    if data.dim != model.dim:
        raise ValueError(f"feature dimension {data.dim} != model dimension {model.dim}")
    probs = _probabilities(model, data.features)
    true_probs = probs[np.arange(data.n), data.labels]
    return -np.log(np.maximum(true_probs, LOSS_FLOOR))


def accuracy(model: Model, data: Dataset) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class."""
    if data.dim != model.dim:
        raise ValueError(f"feature dimension {data.dim} != model dimension {model.dim}")
    logits = data.features @ model.weights + model.bias
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def train_dpsgd(train: Dataset, config: SgdConfig) -> tuple[Model, TrainTrace]:
    """Runs DP-SGD on multinomial logistic regression.

    Each step Poisson-samples examples at rate q, clips each per-example
    gradient (weights and bias jointly) to the clip norm, sums, adds
    N(0, (sigma * clip)^2) noise per coordinate, and normalizes by the
    expected batch size q * n so the per-example sensitivity is exactly
    clip/(q n). Deterministic given the config seed.
    """
    n, d = train.n, train.dim
    classes = int(train.labels.max()) + 1
    if config.q * n < 1:
        raise ValueError(f"expected batch size q*n = {config.q * n:.3g} < 1")

    sample_ss, noise_ss = np.random.SeedSequence(config.seed).spawn(2)
    sample_rng = rng_from_seed(sample_ss)
    noise_rng = rng_from_seed(noise_ss)

    weights = np.zeros((d, classes))
    bias = np.zeros(classes)
    onehot = np.eye(classes)
    # Epoch i ends after ceil((i+1) * steps / epochs) steps.
    boundaries = [math.ceil((i + 1) * config.steps / config.epochs) for i in range(config.epochs)]

    epoch_losses: list[float] = []
    epoch_accs: list[float] = []
    model = Model(weights=weights, bias=bias, config=config)

    for step in range(config.steps):
        mask = sample_rng.random(n) < config.q
        if mask.any():
            x = train.features[mask]
            y = train.labels[mask]
            probs = _probabilities(model, x)
            grad_logits = probs - onehot[y]  # (m, classes)
            # ||per-example grad||^2 = ||g||^2 (||x||^2 + 1) with the bias row.
            sq_norms = (grad_logits**2).sum(axis=1) * ((x**2).sum(axis=1) + 1.0)
            norms = np.sqrt(sq_norms)
            scale = np.minimum(1.0, config.clip / np.maximum(norms, 1e-300))
            clipped = (norms * scale)[np.isfinite(norms)]
            assert float(clipped.max(initial=0.0)) <= config.clip + 1e-9
            scaled = grad_logits * scale[:, None]
            grad_w = x.T @ scaled
            grad_b = scaled.sum(axis=0)
        else:
            grad_w = np.zeros_like(weights)
            grad_b = np.zeros_like(bias)

        if config.sigma > 0:
            noise = gaussian_noise(weights.size + bias.size, config.sigma * config.clip, noise_rng)
            grad_w = grad_w + noise[: weights.size].reshape(weights.shape)
            grad_b = grad_b + noise[weights.size :]

        denom = config.q * n
        weights -= config.lr * grad_w / denom
        bias -= config.lr * grad_b / denom

        while len(epoch_losses) < config.epochs and boundaries[len(epoch_losses)] == step + 1:
            mean_loss = float(per_example_losses(model, train).mean())
            if not math.isfinite(mean_loss):
                raise TrainingDiverged(
                    f"training loss became non-finite at step {step + 1}; "
                    "try a smaller learning rate"
                )
            epoch_losses.append(mean_loss)
            epoch_accs.append(accuracy(model, train))

    model.steps_run = config.steps
    model.final_train_loss = epoch_losses[-1]
    return model, TrainTrace(losses=tuple(epoch_losses), accuracies=tuple(epoch_accs))


MODEL_HEADER = "dpsgd-model v1"


def save_model(model: Model, path: str) -> None:
    """Writes a model as flat text: header, then weights row-major, then bias.

    Header line is ``dpsgd-model v1 <d> <classes>``; every coordinate is one
    line with 17 significant digits, which round-trips float64 exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{MODEL_HEADER} {model.dim} {model.classes}\n")
        for value in model.weights.reshape(-1):
            fh.write(format(float(value), ".17g") + "\n")
        for value in model.bias:
            fh.write(format(float(value), ".17g") + "\n")


def load_model(path: str) -> Model:
    """Reads a model written by :func:`save_model`."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or " ".join(header[:2]) != MODEL_HEADER:
            raise ValueError(f"{path}: not a {MODEL_HEADER} file")
        d, classes = int(header[2]), int(header[3])
        values = [float(line) for line in fh if line.strip()]
    if len(values) != d * classes + classes:
        raise ValueError(
            f"{path}: expected {d * classes + classes} coordinates, got {len(values)}"
        )
    arr = np.asarray(values)
    return Model(
        weights=arr[: d * classes].reshape(d, classes),
        bias=arr[d * classes :],
    )
