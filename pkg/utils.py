"""Module for generating the random data and digests needed by the solver, the probe and the tests."""

import hashlib
from pathlib import Path

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Returns a generator for the stream `key` split off `seed`.

    The bit generator is the counter-based Philox keyed by a `SeedSequence` whose spawn key
    is `key`, so the stream of e.g. (seed, Stream.QUADRATURE, order, replicate) never depends
    on which other streams were drawn before it.

    Args:
        `seed (int)`: The run seed.
        `*key (int)`: Non negative integers naming the stream.

    Returns:
        `np.random.Generator`: Independent generator for this stream.
    """
    sequence = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(sequence))


def random_separated_points(
    rng: np.random.Generator,
    count: int,
    dimension: int,
    spread: float = 3.0,
    min_distance: float = 1.0,
    attempts: int = 10_000,
) -> np.ndarray:
    """Returns `count` points in [-spread, spread]^d, pairwise at least `min_distance` apart.

    Points are drawn by random sequential addition. Used for hard core respecting
    configurations.

    Raises:
        `ValueError`: If the points do not fit after `attempts` draws.
    """
    points: list[np.ndarray] = []
    for _ in range(attempts):
        if len(points) == count:
            break
        candidate = rng.uniform(-spread, spread, size=dimension)
        if all(np.linalg.norm(candidate - p) >= min_distance for p in points):
            points.append(candidate)
    if len(points) < count:
        raise ValueError(f"Could not place {count} separated points in a box of half width {spread}.")
    return np.array(points, dtype=float).reshape(count, dimension)


def random_bin_values(rng: np.random.Generator, size: int, amplitude: float = 1.0) -> np.ndarray:
    """Returns `size` bin values drawn uniformly from [-amplitude, amplitude]."""
    return rng.uniform(-amplitude, amplitude, size=size)


def file_digest(path: Path) -> str:
    """Returns the sha256 hex digest of the file at `path`."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()
