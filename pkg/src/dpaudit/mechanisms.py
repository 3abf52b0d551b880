"""Primitive randomizers shared by the trainer and the verification oracle.

L2 clipping, seeded Gaussian noise, and binary randomized response. All
randomness flows through ``numpy.random.Generator`` streams derived from
explicit seeds, so every caller owns its stream and results never depend on
scheduling or iteration order.
"""

from __future__ import annotations

import numpy as np

# Bit-generator behind every stream. PCG64 seeded through SeedSequence gives
# splittable, reproducible streams; Generator.normal uses the ziggurat method.
# Recorded in report metadata because it pins bit-level reproducibility.
GENERATOR_DESCRIPTION = "numpy PCG64 via SeedSequence; normal sampling: ziggurat"


def rng_from_seed(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """Creates an owned random stream from a 64-bit seed."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def split_seed(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Splits a root seed into ``n`` independent child sequences.

    Children are independent of the order in which they are later consumed,
    which keeps parallel experiment runs reproducible.
    """
    return np.random.SeedSequence(int(seed)).spawn(n)


def derive_seed(*entropy: int) -> int:
    """Derives a 64-bit seed from a tuple of integers, order-sensitively."""
    ss = np.random.SeedSequence([int(e) for e in entropy])
    return int(ss.generate_state(1, np.uint64)[0])


def clip(v: np.ndarray, c: float) -> np.ndarray:
    """Scales ``v`` to L2 norm at most ``c``, preserving direction.

    Returns ``v * min(1, c / ||v||)``; the zero vector is a fixed point.
    Idempotent: clipping twice equals clipping once. Norms within one
    rounding step of ``c`` count as already clipped, so the rescaled output
    (whose norm lands within float rounding of ``c``) is a fixed point.
    """
    if not c > 0:
        raise ValueError(f"clip norm must be positive, got {c}")
    v = np.asarray(v, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= c * (1.0 + 1e-14):
        return v
    return v * (c / norm)


def gaussian_noise(
    dim: int, stddev: float, rng: np.random.Generator
) -> np.ndarray:
    """Draws ``dim`` i.i.d. N(0, stddev^2) samples from the caller's stream.

    ``stddev = 0`` returns the zero vector without consuming stream state, so
    noiseless runs share sampling decisions with noisy ones.
    """
    if stddev < 0:
        raise ValueError(f"stddev must be non-negative, got {stddev}")
    if stddev == 0:
        return np.zeros(dim)
    return rng.normal(0.0, stddev, size=dim)


def randomized_response(bit: int, p: float, rng: np.random.Generator) -> int:
    """Reports ``bit`` truthfully with probability ``p``, flipped otherwise.

    For p in (0.5, 1) this is a pure (eps, 0)-DP mechanism with
    eps = ln(p / (1 - p)).
    """
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit}")
    if not 0.5 < p < 1.0:
        raise ValueError(f"truth probability must be in (0.5, 1), got {p}")
    if rng.random() < p:
        return bit
    return 1 - bit


def randomized_response_epsilon(p: float) -> float:
    """Pure-DP epsilon of binary randomized response with truth probability p."""
    if not 0.5 < p < 1.0:
        raise ValueError(f"truth probability must be in (0.5, 1), got {p}")
    return float(np.log(p / (1.0 - p)))
