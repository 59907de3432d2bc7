"""Gisin-Percival diffusive unraveling.

The state diffuses under

    d|psi> = -iH|psi> dt
             + sum_i ( <Li^dag> Li - 1/2 Li^dag Li - 1/2 |<Li>|^2 ) |psi> dt
             + 1/sqrt(2) sum_i ( Li - <Li> ) |psi> dWi,

with complex Wiener increments satisfying dWi^* dWj = 2 delta_ij dt (the
factor 2 lives in the noise, see :mod:`unravel.trajectory`). Discretization
is Euler-Maruyama followed by projection back onto the unit sphere; the
equation preserves the norm only as dt -> 0, and the projection errs at the
same O(dt) order as the scheme itself.

Batches: the stepping arithmetic is written over a leading trajectory axis
using ``np.einsum`` only, so a trajectory produces bit-identical states
whether it runs alone or inside an ensemble batch.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np

from .core import LindbladModel, TimeGrid, check_state
from .errors import StepTooLarge, TrajectoryError
from .trajectory import (
    NOISE_BLOCK,
    ComplexNoiseIncrement,
    TrajectoryRecord,
    check_dt_policy,
    trajectory_rng,
    wiener_increments,
)

logger = logging.getLogger(__name__)

_SQRT2_INV = 1.0 / math.sqrt(2.0)


def _lindblad_terms(model: LindbladModel, psi: np.ndarray):
    """(L_m psi, <L_m>) for all channels; psi may carry leading batch axes."""
    ls = model.lindblad_stack()
    lpsi = np.einsum("mij,...j->...mi", ls, psi)
    expl = np.einsum("...i,...mi->...m", psi.conj(), lpsi)
    return lpsi, expl


def gp_drift(model: LindbladModel, psi: np.ndarray) -> np.ndarray:
    """Deterministic part of the increment (units 1/time), unnormalized.

    Exact evaluation of
    -iH psi + sum_i (<Li^dag> Li - 1/2 Li^dag Li - 1/2 |<Li>|^2) psi.
    """
    if psi.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: state dim {psi.shape[-1]} vs model dim {model.dim}")
    lpsi, expl = _lindblad_terms(model, psi)
    out = -1j * np.einsum("ij,...j->...i", model.hamiltonian, psi)
    out -= 0.5 * np.einsum("ij,...j->...i", model.total_jump_operator(), psi)
    out += np.einsum("...m,...mi->...i", expl.conj(), lpsi)
    out -= 0.5 * np.sum(np.abs(expl) ** 2, axis=-1)[..., None] * psi
    return out


def gp_diffusion(model: LindbladModel, psi: np.ndarray, channel: int) -> np.ndarray:
    """Coefficient of dW_channel (units 1/sqrt(time)): (1/sqrt 2)(L - <L>) psi."""
    if not 0 <= channel < model.n_channels:
        raise ValueError(f"channel {channel} out of range (model has {model.n_channels})")
    L = model.lindblad_ops[channel]
    lpsi = np.einsum("ij,...j->...i", L, psi)
    expl = np.einsum("...i,...i->...", psi.conj(), lpsi)
    return _SQRT2_INV * (lpsi - expl[..., None] * psi)


class _GPStepper:
    """Precomputed operators plus the batched Euler-Maruyama step."""

    def __init__(self, model: LindbladModel):
        self.ls = model.lindblad_stack()
        self.h = model.hamiltonian
        self.k_op = model.total_jump_operator()

    def step(self, psi: np.ndarray, dw: np.ndarray, dt: float):
        """One step for a (B, d) batch with increments (B, m).

        Returns (new normalized states, pre-renormalization norms).
        """
        lpsi = np.einsum("mij,bj->bmi", self.ls, psi)
        expl = np.einsum("bi,bmi->bm", psi.conj(), lpsi)
        drift = -1j * np.einsum("ij,bj->bi", self.h, psi)
        drift -= 0.5 * np.einsum("ij,bj->bi", self.k_op, psi)
        drift += np.einsum("bm,bmi->bi", expl.conj(), lpsi)
        drift -= 0.5 * np.einsum("bm->b", np.abs(expl) ** 2)[:, None] * psi
        diff = _SQRT2_INV * (lpsi - expl[:, :, None] * psi[:, None, :])
        out = psi + drift * dt + np.einsum("bm,bmi->bi", dw, diff)
        nrm = np.sqrt(np.einsum("bi,bi->b", out.conj(), out).real)
        return out / nrm[:, None], nrm


def gp_step(
    model: LindbladModel, psi: np.ndarray, noise: ComplexNoiseIncrement
) -> np.ndarray:
    """Advance one state by one Euler-Maruyama step and renormalize.

    Raises StepTooLarge if the pre-renormalization norm leaves [0.5, 1.5].
    """
    if psi.ndim != 1 or psi.shape[0] != model.dim:
        raise ValueError(f"expected a single state of dim {model.dim}")
    if noise.values.shape[0] != model.n_channels:
        raise ValueError(
            f"noise has {noise.values.shape[0]} channels, model has {model.n_channels}"
        )
    out, nrm = _GPStepper(model).step(psi[None, :], noise.values[None, :], noise.dt)
    if not 0.5 <= nrm[0] <= 1.5:
        raise StepTooLarge(
            f"pre-renormalization norm {nrm[0]:.4f} outside [0.5, 1.5]; dt too large"
        )
    logger.debug("gp_step norm drift %.3e", abs(nrm[0] - 1.0))
    return out[0]


def _evolve_gp(
    model: LindbladModel,
    psi0: np.ndarray,
    grid: TimeGrid,
    seeds: Sequence[int],
    on_block: Optional[Callable[[int, np.ndarray], None]] = None,
    record: bool = False,
    traj_offset: int = 0,
) -> Optional[np.ndarray]:
    """Drive a batch of trajectories, one RNG stream per seed.

    ``on_block(k0, states)`` receives post-step states for grid indices
    k0..k0+len-1 (index 0, the initial state, is the caller's concern).
    Returns the full (B, steps+1, d) state array when ``record``.
    """
    check_dt_policy(model, grid.dt)
    b = len(seeds)
    m = model.n_channels
    dt = grid.dt
    stepper = _GPStepper(model)
    psi = np.tile(np.asarray(psi0, dtype=complex), (b, 1))
    rngs = [trajectory_rng(s) for s in seeds]
    states = np.empty((b, grid.n_points, model.dim), dtype=complex) if record else None
    if record:
        states[:, 0] = psi
    max_dev = 0.0
    k = 0
    while k < grid.steps:
        blk = min(NOISE_BLOCK, grid.steps - k)
        dw = np.stack([wiener_increments(rng, blk, m, dt) for rng in rngs])
        block_states = (
            states[:, k + 1 : k + 1 + blk]
            if record
            else (np.empty((b, blk, model.dim), dtype=complex) if on_block else None)
        )
        for j in range(blk):
            psi, nrm = stepper.step(psi, dw[:, j], dt)
            bad = (nrm < 0.5) | (nrm > 1.5)
            if np.any(bad):
                idx = int(np.argmax(bad))
                raise TrajectoryError(
                    traj_offset + idx,
                    StepTooLarge(
                        f"pre-renormalization norm {nrm[idx]:.4f} outside [0.5, 1.5] "
                        f"at step {k + j}; dt too large"
                    ),
                )
            max_dev = max(max_dev, float(np.max(np.abs(nrm - 1.0))))
            if block_states is not None:
                block_states[:, j] = psi
        if on_block is not None:
            on_block(k + 1, block_states)
        k += blk
    logger.debug("gp batch of %d: max pre-renormalization norm drift %.3e", b, max_dev)
    return states


def gp_trajectory(
    model: LindbladModel, psi0: np.ndarray, grid: TimeGrid, seed: int
) -> TrajectoryRecord:
    """Simulate one diffusive trajectory; a pure function of (model, psi0, grid, seed)."""
    check_state(psi0, what="psi0")
    states = _evolve_gp(model, psi0, grid, [seed], record=True)
    out = states[0]
    out.setflags(write=False)
    return TrajectoryRecord(grid=grid, states=out, seed=int(seed))
