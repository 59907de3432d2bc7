"""Trajectory records, noise streams, and the step-size policy.

Every trajectory owns a counter-based RNG stream keyed by a 64-bit seed;
ensemble members use ``split_seed(master_seed, index)`` so results are
bitwise reproducible no matter how trajectories are scheduled across
workers. Complex Wiener increments are sampled as sqrt(dt) * (xi + i*eta)
with independent unit-variance real and imaginary parts, which realizes
dW_i^* dW_j = 2 delta_ij dt with the equation's 1/sqrt(2) prefactor kept
verbatim in the diffusion coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import LindbladModel, TimeGrid, opnorm
from .errors import StepTooLarge

_MASK64 = (1 << 64) - 1

#: hard ceiling on (fastest channel rate) * dt; above this the first-order
#: jump-probability linearization and the Euler-Maruyama bias are no longer
#: below Monte Carlo noise at default ensemble sizes
MAX_RATE_DT = 0.1

#: advisory target used when presets pick a default dt
TARGET_RATE_DT = 0.01

#: steps per pre-generated noise block (memory / call-overhead tradeoff;
#: any value yields identical streams since draws are consumed sequentially)
NOISE_BLOCK = 512


def split_seed(master_seed: int, index: int) -> int:
    """Derive the 64-bit sub-seed for one trajectory (splitmix64 finalizer).

    A pure function of (master_seed, index): no generator state is advanced,
    so any subset of trajectories can be produced in any order.
    """
    z = (int(master_seed) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def trajectory_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) for one trajectory stream."""
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))


def wiener_increments(rng: np.random.Generator, steps: int, n_channels: int, dt: float) -> np.ndarray:
    """Complex increments sqrt(dt)*(xi + i*eta), shape (steps, n_channels).

    Sample moments satisfy E[dW_i dW_j] ~ 0 and E[dW_i dW_j^*] ~ 2 delta_ij dt.
    """
    raw = rng.standard_normal((steps, n_channels, 2))
    return np.sqrt(dt) * (raw[..., 0] + 1j * raw[..., 1])


@dataclass(frozen=True)
class ComplexNoiseIncrement:
    """One step's complex Wiener increments, one entry per Lindblad channel."""

    values: np.ndarray  # (m,) complex
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex).reshape(-1))
        object.__setattr__(self, "dt", float(self.dt))


@dataclass(frozen=True)
class JumpEvent:
    """A single jump: channel, grid time, and the states on both sides.

    ``pre_state`` is the left limit entering every jump coefficient;
    ``post_state`` = L_j pre_state / ||L_j pre_state|| is what the grid stores
    (right-continuous convention).
    """

    time: float
    channel: int
    pre_state: np.ndarray
    post_state: np.ndarray


@dataclass(frozen=True)
class TrajectoryRecord:
    """States at every grid point for one realization.

    The state stored at a jump step is the post-jump state; the matching
    ``JumpEvent`` keeps the left limit. ``jump_times`` is empty for
    diffusive trajectories.
    """

    grid: TimeGrid
    states: np.ndarray  # (steps+1, d) complex
    seed: int
    jump_times: Tuple[Tuple[float, int], ...] = ()
    events: Tuple[JumpEvent, ...] = ()

    @property
    def dim(self) -> int:
        return self.states.shape[1]


def check_dt_policy(model: LindbladModel, dt: float) -> float:
    """Hard error when (max channel rate bound) * dt exceeds MAX_RATE_DT.

    The bound is the spectral norm of L_j^dag L_j, i.e. the largest possible
    <L^dag L> over states. Returns the worst rate*dt product for diagnostics.
    """
    worst = 0.0
    for L in model.lindblad_ops:
        worst = max(worst, opnorm(L) ** 2 * dt)
    if worst > MAX_RATE_DT:
        raise StepTooLarge(
            f"dt policy violation: max ||L||^2 * dt = {worst:.3g} exceeds {MAX_RATE_DT}; "
            f"reduce dt below {MAX_RATE_DT / max(worst / dt, 1e-300):.3g}"
        )
    return worst
