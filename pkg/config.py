"""Module used for the default configuration of the solver, the quadrature and the sampler.

JSON run configurations override these values key by key, and the command line global
flags override the JSON.
"""

VERSION: str = "0.3.1"
"""Version recorded in every run manifest."""

SEED: int = 20240611
"""Seed used when neither the run configuration nor the command line gives one."""

THREADS: int = 1
"""Default worker count for per-order integrals, probe pairs and sampler chains."""

LOG_FORMAT: str = "%(asctime)s %(levelname)s %(module)s: %(message)s"
"""Format of the log lines printed on the console."""

LOG_LEVEL: str = "INFO"
"""Default log level of the command line tool."""

# region GRID
DIMENSION: int = 1
"""Dimension of the space the radial functions live in."""

GRID_SPACING: float = 0.05
"""Width of the radial bins outside the hard core."""

SUPPORT_RADIUS: float = 8.0
"""Radius beyond which every pair function is identically zero."""

PACKING_CANDIDATE_SPACING: dict[int, float] = {2: 0.1, 3: 0.25}
"""Lattice spacing of the candidate points of the greedy packing lower bound for d >= 2."""

BALL_PACKING_COUNTS: dict[int, int] = {1: 2, 2: 5, 3: 12}
"""Largest number of points, pairwise at least 1 apart, that fit in the open unit ball.
d = 1 is trivial, d = 2 is the regular pentagon, d = 3 the icosahedron. The randomized search
`pairfn.max_unit_separated_in_ball` never exceeds these values.
"""
# endregion

# region ADMISSIBILITY
SMALLNESS_RATIO: float = 0.5
"""Default r: the targets' tail must have packing norm at most r * omega1**2."""

SMALLNESS_GUARD: float = 0.05
"""Largest z0 the solver accepts without `--force`."""

SERIES_GUARD: float = 0.5
"""Largest value of z * (c0 + ||g||) accepted by the forward map without `--force`."""
# endregion

# region URSELL
M_MAX: int = 6
"""Largest configuration the connected-graph evaluator accepts (15 edges, 32768 subsets)."""

RELATIVE_TOLERANCE: float = 1e-12
"""Relative tolerance of the cross-checks between Ursell evaluators."""

ABSOLUTE_FLOOR: float = 1e-300
"""Absolute floor of the cross-checks between Ursell evaluators."""
# endregion

# region EXPANSION
TRUNCATION_ORDER: int = 3
"""Number of series terms used inside the solver loop."""

VERIFY_TRUNCATION_ORDER: int = 4
"""Number of series terms used by verification runs."""

TENSOR_SPACING: float = 0.05
"""Finest spacing of the tensor midpoint grids."""

MAX_TENSOR_POINTS: int = 100_000
"""Largest number of tensor grid points per order; coarser spacing is used above it."""

MC_SAMPLES: int = 20_000
"""Monte Carlo samples per replicate and per order."""

MC_REPLICATES: int = 8
"""Independent stratified replicates per order, their spread is the error estimate."""

UNDER_RESOLVED_FRACTION: float = 0.1
"""Largest accepted ratio of the Monte Carlo error of the series to the series value."""

UNRELIABLE_RATIO: float = 0.5
"""Term ratio above which the geometric truncation estimate is flagged unreliable."""

CORE_PROBE_RADIUS: float = 0.5
"""Radius at which B is evaluated for the whole core (B is constant there)."""

CHUNK_SIZE: int = 65_536
"""Number of configurations evaluated per vectorised batch."""
# endregion

# region SOLVER
TOLERANCE: float = 1e-10
"""Stopping distance of the fixed point iteration, measured in the rho metric."""

MAX_ITERATIONS: int = 30
"""Largest number of applications of Q before giving up."""

CONTRACTION_BOUND: float = 0.5
"""Contraction factor of Q on the domain for small z0."""

PROBE_PAIRS: int = 50
"""Number of random pairs drawn by the contraction probe."""
# endregion

# region SAMPLER
SWEEPS: int = 100_000
"""Production sweeps per chain."""

EQUILIBRATION_SWEEPS: int = 1_000
"""Sweeps discarded at the start of each chain."""

MOVE_PROBABILITIES: tuple[float, float, float] = (0.25, 0.25, 0.5)
"""Probabilities of insertion, deletion and translation moves."""

MAX_DISPLACEMENT: float = 0.5
"""Half width of the uniform translation proposal, per axis."""

BIN_WIDTH: float = 0.05
"""Width of the pair histogram bins."""

N_CHAINS: int = 4
"""Independent chains per simulation."""

BLOCK_LENGTH: int = 1_000
"""Samples per stored block, the finest level of the blocking analysis."""

MIN_BLOCKS: int = 16
"""Coarsest blocking level still used for an error estimate."""
# endregion

# region VERIFICATION
DENSITY_RELATIVE_TOLERANCE: float = 1e-6
"""Largest relative error of the reproduced density."""

PAIR_ABSOLUTE_TOLERANCE: float = 1e-6
"""Largest error of a reproduced pair correlation bin, in units of rho1**2."""

Z_SCORE_LIMIT: float = 3.0
"""Largest accepted |z-score| of a simulated estimate."""

BIN_PASS_FRACTION: float = 0.95
"""Smallest fraction of histogram bins that must lie within `Z_SCORE_LIMIT`."""
# endregion
