"""Grand canonical Monte Carlo for hard core pair potentials and exact hard rod oracles.

The sampler targets the grand canonical measure z^n / n! e^-U(x_1, .., x_n) dx_1 .. dx_n on
a box of side `length` with insertion, deletion and translation moves. It measures the density
and the pair correlation with blocking error bars. In one dimension the pure hard core is the
Tonks gas, whose finite and infinite volume correlations are known exactly.
"""

import csv
import itertools
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import numpy as np
from mpmath import mp
from scipy.special import gammaln, lambertw, xlogy

import config
from enums import Boundary, MoveType, Stream
from pairfn import ClusterTargets, HardCorePotential, RadialFunction, correlation_to_cluster, unit_ball_volume
from utils import make_rng

MOVES: tuple[MoveType, ...] = (MoveType.INSERT, MoveType.DELETE, MoveType.TRANSLATE)

FINITE_SIZE_CAVEAT: str = (
    "Finite box estimates carry an O(1/L) bias against the infinite volume targets, "
    "which is reported but not corrected."
)

RHO2_NORMALIZATION: str = "rho2(bin) = 2 <pairs in bin> / (V * shell volume of bin)"


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Parameters of a grand canonical run.

    Fields:
        `potential (Optional[HardCorePotential])`: None runs the ideal gas (no core, Phi = 0).
        `move_probabilities (tuple)`: Probabilities of insertion, deletion and translation.
        `block_length (int)`: Samples per block of the blocking analysis.
    """

    dimension: int
    length: float
    z: float
    potential: Optional[HardCorePotential] = None
    boundary: Boundary = Boundary.PERIODIC
    sweeps: int = config.SWEEPS
    equilibration_sweeps: int = config.EQUILIBRATION_SWEEPS
    move_probabilities: tuple[float, float, float] = config.MOVE_PROBABILITIES
    max_displacement: float = config.MAX_DISPLACEMENT
    bin_width: float = config.BIN_WIDTH
    seed: int = config.SEED
    n_chains: int = config.N_CHAINS
    block_length: int = config.BLOCK_LENGTH

    def __post_init__(self):
        assert self.dimension in (1, 2, 3)
        assert self.length > 0
        assert self.z > 0
        assert len(self.move_probabilities) == 3
        assert all(p >= 0 for p in self.move_probabilities)
        assert abs(sum(self.move_probabilities) - 1.0) < 1e-12
        assert self.sweeps >= 1 and self.equilibration_sweeps >= 0
        assert self.max_displacement > 0 and self.bin_width > 0
        assert self.n_chains >= 1 and self.block_length >= 1
        if self.potential is not None:
            assert self.potential.g.dimension == self.dimension
        if self.boundary is Boundary.PERIODIC:
            assert self.length > 2 * self.cutoff

    @property
    def cutoff(self) -> float:
        return self.potential.g.r_max if self.potential is not None else 0.0

    @property
    def volume(self) -> float:
        return self.length**self.dimension


def acceptance_probability(move: MoveType, z: float, volume: float, n: int, delta_u: float) -> float:
    """Metropolis acceptance of a move from a state with `n` particles, dU = U(after) - U(before).

    Insertion proposes a uniform point (density 1/V) and its reverse deletion picks that particle
    with probability 1/(n + 1). Balancing z^n / n! e^-U over the n + 1 orderings of the new state
    gives the ratio z V e^-dU / (n + 1). Deletion from n particles is the reverse move, with
    ratio n e^-dU / (z V). Translation proposals are symmetric, ratio e^-dU.
    """
    if delta_u == math.inf:
        return 0.0
    if move is MoveType.INSERT:
        prefactor = z * volume / (n + 1)
    elif move is MoveType.DELETE:
        if n == 0:
            return 0.0
        prefactor = n / (z * volume)
    else:
        prefactor = 1.0
    log_ratio = math.log(prefactor) - delta_u
    return 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)


class CellList:
    """Particles bucketed in cubic cells at least `cutoff` wide, so interacting pairs share or
    touch a cell."""

    def __init__(self, length: float, cutoff: float, dimension: int, periodic: bool):
        self.n_cells = max(1, int(length // cutoff)) if cutoff > 0 else 1
        self.cell_size = length / self.n_cells
        self.periodic = periodic
        self.members: defaultdict[tuple[int, ...], set[int]] = defaultdict(set)
        self._offsets = list(itertools.product((-1, 0, 1), repeat=dimension))

    def cell_of(self, position: np.ndarray) -> tuple[int, ...]:
        index = np.clip(np.floor(position / self.cell_size).astype(int), 0, self.n_cells - 1)
        return tuple(int(i) for i in index)

    def add(self, key: int, position: np.ndarray) -> None:
        self.members[self.cell_of(position)].add(key)

    def remove(self, key: int, position: np.ndarray) -> None:
        self.members[self.cell_of(position)].discard(key)

    def neighbours(self, position: np.ndarray) -> list[int]:
        centre = self.cell_of(position)
        seen: set[tuple[int, ...]] = set()
        found: list[int] = []
        for offset in self._offsets:
            cell = tuple(c + o for c, o in zip(centre, offset))
            if self.periodic:
                cell = tuple(c % self.n_cells for c in cell)
            elif any(c < 0 or c >= self.n_cells for c in cell):
                continue
            if cell in seen:
                continue
            seen.add(cell)
            found.extend(self.members.get(cell, ()))
        return found


class Chain:
    """One sequential Markov chain of the sampler."""

    def __init__(self, cfg: SimulationConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.phi = cfg.potential.phi if cfg.potential is not None else None
        self.periodic = cfg.boundary is Boundary.PERIODIC
        self.cells = CellList(cfg.length, cfg.cutoff, cfg.dimension, self.periodic)
        self.positions: dict[int, np.ndarray] = {}
        self.ids: list[int] = []
        self._next_id = 0
        self._thresholds = np.cumsum(cfg.move_probabilities)
        self.proposed = {move: 0 for move in MOVES}
        self.accepted = {move: 0 for move in MOVES}

    def __len__(self) -> int:
        return len(self.ids)

    def _minimum_image(self, delta: np.ndarray) -> np.ndarray:
        if self.periodic:
            delta = delta - self.cfg.length * np.round(delta / self.cfg.length)
        return delta

    def energy(self, position: np.ndarray, exclude: Optional[int] = None) -> float:
        """Interaction of a particle at `position` with every other particle."""
        if self.phi is None:
            return 0.0
        keys = [key for key in self.cells.neighbours(position) if key != exclude]
        if not keys:
            return 0.0
        others = np.array([self.positions[key] for key in keys])
        distance = np.linalg.norm(self._minimum_image(others - position), axis=1)
        return float(self.phi.evaluate_radius(distance).sum())

    def _insert(self, position: np.ndarray) -> None:
        key = self._next_id
        self._next_id += 1
        self.positions[key] = position
        self.ids.append(key)
        self.cells.add(key, position)

    def _delete(self, slot: int) -> None:
        key = self.ids[slot]
        self.ids[slot] = self.ids[-1]
        self.ids.pop()
        self.cells.remove(key, self.positions.pop(key))

    def _move(self, key: int, position: np.ndarray) -> None:
        self.cells.remove(key, self.positions[key])
        self.positions[key] = position
        self.cells.add(key, position)

    def step(self) -> None:
        cfg = self.cfg
        move = MOVES[min(int(np.searchsorted(self._thresholds, self.rng.random(), side="right")), 2)]
        self.proposed[move] += 1
        n = len(self.ids)
        if move is MoveType.INSERT:
            position = self.rng.uniform(0.0, cfg.length, size=cfg.dimension)
            if self.rng.random() < acceptance_probability(move, cfg.z, cfg.volume, n, self.energy(position)):
                self._insert(position)
                self.accepted[move] += 1
            return
        if n == 0:
            return
        slot = int(self.rng.integers(n))
        key = self.ids[slot]
        old = self.positions[key]
        if move is MoveType.DELETE:
            delta_u = -self.energy(old, exclude=key)
            if self.rng.random() < acceptance_probability(move, cfg.z, cfg.volume, n, delta_u):
                self._delete(slot)
                self.accepted[move] += 1
            return
        new = old + self.rng.uniform(-cfg.max_displacement, cfg.max_displacement, size=cfg.dimension)
        if self.periodic:
            new = new % cfg.length
        elif np.any(new < 0.0) or np.any(new >= cfg.length):
            return
        delta_u = self.energy(new, exclude=key) - self.energy(old, exclude=key)
        if self.rng.random() < acceptance_probability(move, cfg.z, cfg.volume, n, delta_u):
            self._move(key, new)
            self.accepted[move] += 1

    def sweep(self) -> None:
        """max(1, n) moves, n the particle count at the start of the sweep."""
        for _ in range(max(1, len(self.ids))):
            self.step()

    def pair_distances(self) -> np.ndarray:
        if len(self.ids) < 2:
            return np.empty(0)
        points = np.array([self.positions[key] for key in self.ids])
        upper = np.triu_indices(len(points), 1)
        delta = self._minimum_image(points[:, None, :] - points[None, :, :])
        return np.linalg.norm(delta, axis=-1)[upper]

    def acceptance_rates(self) -> dict[str, float]:
        return {str(m): self.accepted[m] / self.proposed[m] if self.proposed[m] else 0.0 for m in MOVES}


def histogram_edges(length: float, bin_width: float) -> np.ndarray:
    """Bin edges over [0, length / 2]."""
    return np.arange(int(math.floor(length / 2 / bin_width + 1e-9)) + 1) * bin_width


@dataclass(frozen=True, eq=False)
class ChainResult:
    count_sum: float
    pair_sum: np.ndarray
    samples: int
    density_blocks: np.ndarray
    pair_blocks: np.ndarray
    acceptance: dict[str, float]


def run_chain(cfg: SimulationConfig, index: int) -> ChainResult:
    """Runs chain `index` on the stream (seed, SIMULATION, index)."""
    chain = Chain(cfg, make_rng(cfg.seed, Stream.SIMULATION, index))
    for _ in range(cfg.equilibration_sweeps):
        chain.sweep()

    edges = histogram_edges(cfg.length, cfg.bin_width)
    count_sum, pair_sum = 0.0, np.zeros(edges.size - 1)
    block_count, block_pairs = 0.0, np.zeros(edges.size - 1)
    density_blocks, pair_blocks = [], []
    for sweep in range(1, cfg.sweeps + 1):
        chain.sweep()
        pairs = np.histogram(chain.pair_distances(), bins=edges)[0]
        count_sum += len(chain)
        pair_sum += pairs
        block_count += len(chain)
        block_pairs += pairs
        if sweep % cfg.block_length == 0:
            density_blocks.append(block_count / cfg.block_length)
            pair_blocks.append(block_pairs / cfg.block_length)
            block_count, block_pairs = 0.0, np.zeros(edges.size - 1)

    rates = chain.acceptance_rates()
    logging.info(f"Chain {index}: mean count {count_sum / cfg.sweeps:.4g}, acceptance {rates}.")
    return ChainResult(
        count_sum,
        pair_sum,
        cfg.sweeps,
        np.array(density_blocks),
        np.array(pair_blocks).reshape(-1, edges.size - 1),
        rates,
    )


def blocking_error(blocks: np.ndarray, min_blocks: int = config.MIN_BLOCKS) -> np.ndarray:
    """Standard error of the mean from block means.

    Neighbouring blocks are merged pairwise while at least `min_blocks` remain and the largest
    error over the levels is kept, the plateau of correlated data. Fewer than two blocks give inf.
    """
    data = np.asarray(blocks, dtype=float)
    if data.shape[0] < 2:
        return np.full(data.shape[1:], np.inf)
    best = data.std(axis=0, ddof=1) / math.sqrt(data.shape[0])
    while data.shape[0] // 2 >= min_blocks:
        half = data.shape[0] // 2
        data = 0.5 * (data[0 : 2 * half : 2] + data[1 : 2 * half : 2])
        best = np.maximum(best, data.std(axis=0, ddof=1) / math.sqrt(half))
    return best


@dataclass(frozen=True, eq=False)
class PairHistogram:
    """rho2 estimates over bins of [0, L/2] with their errors.

    Fields:
        `counts (np.ndarray)`: Pair counts summed over every sample of every chain.
        `samples (int)`: Number of samples behind `counts`.
    """

    edges: np.ndarray
    counts: np.ndarray
    rho2: np.ndarray
    sigma: np.ndarray
    samples: int
    normalization: str = RHO2_NORMALIZATION

    def __post_init__(self):
        assert np.all(self.sigma >= 0)

    @property
    def centres(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])


def shell_volumes(edges: np.ndarray, dimension: int) -> np.ndarray:
    return unit_ball_volume(dimension) * (edges[1:] ** dimension - edges[:-1] ** dimension)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    config: SimulationConfig
    rho1: float
    rho1_sigma: float
    histogram: PairHistogram
    acceptance: tuple[dict[str, float], ...]
    chain_rho1: tuple[float, ...]

    def to_dict(self) -> dict[str, Any]:
        cfg = self.config
        return {
            "dimension": cfg.dimension,
            "length": cfg.length,
            "boundary": str(cfg.boundary),
            "z": cfg.z,
            "rho1": self.rho1,
            "rho1_sigma": self.rho1_sigma,
            "chain_rho1": list(self.chain_rho1),
            "acceptance": list(self.acceptance),
            "samples": self.histogram.samples,
            "normalization": self.histogram.normalization,
        }


def simulate(cfg: SimulationConfig, workers: int = config.THREADS) -> SimulationResult:
    """Runs `cfg.n_chains` independent chains and combines them.

    Each chain contributes its mean and blocking error, the combined error is
    sqrt(sum sigma_c^2) / n_chains. Empty pair bins get the error of a single count.
    """
    indices = range(cfg.n_chains)
    if workers > 1 and cfg.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.n_chains)) as pool:
            chains = list(pool.map(run_chain, [cfg] * cfg.n_chains, indices))
    else:
        chains = [run_chain(cfg, index) for index in indices]

    volume = cfg.volume
    edges = histogram_edges(cfg.length, cfg.bin_width)
    shells = shell_volumes(edges, cfg.dimension)

    chain_rho1 = np.array([c.count_sum / c.samples / volume for c in chains])
    chain_rho1_sigma = np.array([float(blocking_error(c.density_blocks)) / volume for c in chains])
    chain_rho2 = np.array([2.0 * c.pair_sum / c.samples / (volume * shells) for c in chains])
    chain_rho2_sigma = np.array([2.0 * blocking_error(c.pair_blocks) / (volume * shells) for c in chains])

    n = len(chains)
    counts = np.sum([c.pair_sum for c in chains], axis=0)
    samples = sum(c.samples for c in chains)
    sigma = np.sqrt(np.sum(chain_rho2_sigma**2, axis=0)) / n
    sigma = np.where(counts == 0, 2.0 / (volume * shells * samples), sigma)
    histogram = PairHistogram(edges, counts, chain_rho2.mean(axis=0), sigma, samples)
    rho1_sigma = float(np.sqrt(np.sum(chain_rho1_sigma**2)) / n)
    result = SimulationResult(
        cfg,
        float(chain_rho1.mean()),
        rho1_sigma,
        histogram,
        tuple(c.acceptance for c in chains),
        tuple(float(v) for v in chain_rho1),
    )
    logging.info(f"Simulated rho1 = {result.rho1:.6g} +- {rho1_sigma:.2g} over {n} chains.")
    return result


def write_histogram_csv(histogram: PairHistogram, path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["r", "rho2", "sigma"])
        for row in zip(histogram.centres, histogram.rho2, histogram.sigma):
            writer.writerow([repr(float(v)) for v in row])


# region HARD RODS
def exact_rod_density(z: float, length: float) -> float:
    """Density of hard rods of unit length on a segment of `length` with free ends.

    Uses Xi = sum_n z^n (L - n + 1)_+^n / n! and rho1 = z d(ln Xi)/dz / L, both sums exact in
    extended precision.
    """
    assert length >= 1.0
    with mp.workdps(50):
        activity = mp.mpf(z)
        side = mp.mpf(length)
        xi, weighted = mp.mpf(0), mp.mpf(0)
        for n in range(int(math.floor(length)) + 2):
            free = side - (n - 1)
            if free <= 0:
                break
            term = activity**n * free**n / mp.factorial(n)
            xi += term
            weighted += n * term
        return float(weighted / (side * xi))


def tonks_density(z: float) -> float:
    """Infinite volume hard rod density W(z) / (1 + W(z)), W the Lambert function."""
    w = float(lambertw(z).real)
    return w / (1.0 + w)


def tonks_pair_correlation(z: float, r: Union[float, np.ndarray]) -> np.ndarray:
    """Infinite volume hard rod rho2(r): rho times the sum over k of the density of the k-th
    neighbour distance, k + Gamma(k, W(z))."""
    radius = np.asarray(r, dtype=float)
    out = np.zeros(radius.shape)
    if z <= 0.0 or radius.size == 0:
        return out
    w = float(lambertw(z).real)
    for k in range(1, int(np.floor(radius.max())) + 1):
        mask = radius > k
        gap = radius[mask] - k
        out[mask] += np.exp(k * math.log(w) + xlogy(k - 1, gap) - w * gap - gammaln(k))
    return w / (1.0 + w) * out


def extrapolate_density(z: float, lengths: Sequence[float]) -> float:
    """Infinite length limit of `exact_rod_density` from a fit linear in 1/L."""
    inverse = 1.0 / np.asarray(lengths, dtype=float)
    densities = [exact_rod_density(z, length) for length in lengths]
    slope, intercept = np.polyfit(inverse, densities, 1)
    return float(intercept)


# endregion


@dataclass(frozen=True)
class ComparisonReport:
    density_z: float
    density_passed: bool
    bin_z: tuple[float, ...]
    chi2: float
    dof: int
    flagged_radii: tuple[float, ...]
    pass_fraction: float
    passed: bool
    finite_size_bias: Optional[float] = None
    caveat: str = FINITE_SIZE_CAVEAT

    def to_dict(self) -> dict[str, Any]:
        return {
            "density_z": self.density_z,
            "density_passed": self.density_passed,
            "chi2": self.chi2,
            "dof": self.dof,
            "pass_fraction": self.pass_fraction,
            "flagged_radii": list(self.flagged_radii),
            "passed": self.passed,
            "finite_size_bias": self.finite_size_bias,
            "caveat": self.caveat,
            "normalization": RHO2_NORMALIZATION,
        }


def _z_scores(difference: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    difference = np.asarray(difference, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = np.where(sigma > 0, difference / np.where(sigma > 0, sigma, 1.0), 0.0)
    return np.where((sigma == 0) & (difference != 0), np.inf, scores)


def compare_to_targets(
    result: SimulationResult,
    targets: Union[ClusterTargets, tuple[float, RadialFunction]],
    doubled: Optional[SimulationResult] = None,
) -> ComparisonReport:
    """z-scores of the simulated rho1 and of every rho2 bin against the targets.

    `targets` is either cluster targets or (rho1, rho2). Target rho2 is resampled at the
    histogram bin centres. Given a run on the doubled box, the O(1/L) density bias at L is
    estimated as 2 (rho1(L) - rho1(2L)). Never raises.
    """
    if isinstance(targets, tuple):
        targets = correlation_to_cluster(*targets)
    rho1 = targets.omega1
    density_z = float(_z_scores(np.array([result.rho1 - rho1]), np.array([result.rho1_sigma]))[0])

    histogram = result.histogram
    target = targets.omega2.evaluate_radius(histogram.centres) + rho1**2
    scores = _z_scores(histogram.rho2 - target, histogram.sigma)
    within = np.abs(scores) <= config.Z_SCORE_LIMIT
    pass_fraction = float(within.mean()) if within.size else 1.0
    finite = scores[np.isfinite(scores)]
    chi2 = float(np.sum(finite**2))
    density_passed = abs(density_z) <= config.Z_SCORE_LIMIT
    passed = density_passed and pass_fraction >= config.BIN_PASS_FRACTION
    bias = 2.0 * (result.rho1 - doubled.rho1) if doubled is not None else None
    logging.info(f"Comparison: density z = {density_z:.3g}, {pass_fraction:.1%} of bins within limits.")
    return ComparisonReport(
        density_z,
        density_passed,
        tuple(float(s) for s in scores),
        chi2,
        int(finite.size),
        tuple(float(r) for r in histogram.centres[~within]),
        pass_fraction,
        passed,
        bias,
    )
