"""Piecewise-deterministic jump unraveling.

Between jumps the state follows the norm-preserving nonlinear flow

    d|psi> = -( iH + 1/2 sum_i (Li^dag Li - <Li^dag Li>) ) |psi> dt,

and channel j fires at state-dependent rate <Lj^dag Lj>, replacing the state
by Lj|psi> / ||Lj|psi>||. Jumps are drawn by first-order thinning: each step,
channel j fires when its uniform draw is below rate_j * dt, at most one
channel per step with ties resolved toward the lowest index (simultaneous
fires have probability O(dt^2), below the scheme order). The process is
right-continuous: the state stored at a jump step is the post-jump state,
and the JumpEvent keeps the left limit for every coefficient that needs it.

The deterministic flow is integrated with classical RK4 plus
renormalization; the drift is norm-preserving to first order, so the
per-step correction is O(dt^2).
"""

from __future__ import annotations

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .core import LindbladModel, TimeGrid, check_state
from .errors import DarkChannelJump, StepTooLarge, TrajectoryError
from .trajectory import (
    NOISE_BLOCK,
    JumpEvent,
    TrajectoryRecord,
    check_dt_policy,
    trajectory_rng,
)

logger = logging.getLogger(__name__)

#: rates below this are exactly dark: no jump can fire and no division happens
DARK_RATE = 1e-12


def pdp_drift(model: LindbladModel, psi: np.ndarray) -> np.ndarray:
    """Deterministic between-jump increment (units 1/time), unnormalized.

    Norm preserving: Re <psi|drift> = 0 up to roundoff.
    """
    if psi.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: state dim {psi.shape[-1]} vs model dim {model.dim}")
    k_op = model.total_jump_operator()
    kpsi = np.einsum("ij,...j->...i", k_op, psi)
    expk = np.einsum("...i,...i->...", psi.conj(), kpsi).real
    out = -1j * np.einsum("ij,...j->...i", model.hamiltonian, psi)
    out += -0.5 * kpsi + 0.5 * expk[..., None] * psi
    return out


def jump_rates(model: LindbladModel, psi: np.ndarray) -> np.ndarray:
    """Per-channel rates <Lj^dag Lj> >= 0; values below 1e-12 are exactly 0."""
    if psi.shape[-1] != model.dim:
        raise ValueError(f"dimension mismatch: state dim {psi.shape[-1]} vs model dim {model.dim}")
    lpsi = np.einsum("mij,...j->...mi", model.lindblad_stack(), psi)
    rates = np.einsum("...mi,...mi->...m", lpsi.conj(), lpsi).real
    rates = np.where(rates > DARK_RATE, rates, 0.0)
    return rates


def apply_jump(model: LindbladModel, psi: np.ndarray, channel: int) -> np.ndarray:
    """psi -> Lj psi / ||Lj psi|| for a single state.

    Raises DarkChannelJump when the channel's rate is numerically zero:
    thinning can never select such a channel, so the request is a bug.
    """
    if not 0 <= channel < model.n_channels:
        raise ValueError(f"channel {channel} out of range (model has {model.n_channels})")
    lpsi = model.lindblad_ops[channel] @ psi
    rate = float(np.vdot(lpsi, lpsi).real)
    if rate <= DARK_RATE:
        raise DarkChannelJump(
            f"channel {channel} is dark at this state (rate {rate:.3e}); jump impossible"
        )
    return lpsi / math.sqrt(rate)


class _PDPStepper:
    """Precomputed operators plus the batched thinning step."""

    def __init__(self, model: LindbladModel):
        self.ls = model.lindblad_stack()
        k_op = model.total_jump_operator()
        # A = iH + K/2 so the flow is d psi = (-A + <K>/2) psi
        self.a_op = 1j * model.hamiltonian + 0.5 * k_op
        self.k_op = k_op

    def _flow(self, phi: np.ndarray) -> np.ndarray:
        """Drift on possibly unnormalized RK4 stage vectors (expectation rescaled)."""
        nrm2 = np.einsum("bi,bi->b", phi.conj(), phi).real
        kphi = np.einsum("ij,bj->bi", self.k_op, phi)
        expk = np.einsum("bi,bi->b", phi.conj(), kphi).real / nrm2
        return -np.einsum("ij,bj->bi", self.a_op, phi) + 0.5 * expk[:, None] * phi

    def deterministic_step(self, psi: np.ndarray, dt: float):
        """RK4 over one step plus renormalization; returns (states, pre-renorm norms)."""
        k1 = self._flow(psi)
        k2 = self._flow(psi + 0.5 * dt * k1)
        k3 = self._flow(psi + 0.5 * dt * k2)
        k4 = self._flow(psi + dt * k3)
        out = psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = np.sqrt(np.einsum("bi,bi->b", out.conj(), out).real)
        return out / nrm[:, None], nrm

    def rates(self, psi: np.ndarray):
        lpsi = np.einsum("mij,bj->bmi", self.ls, psi)
        rates = np.einsum("bmi,bmi->bm", lpsi.conj(), lpsi).real
        rates = np.where(rates > DARK_RATE, rates, 0.0)
        return lpsi, rates

    def step(self, psi: np.ndarray, draws: np.ndarray, dt: float):
        """One thinning step for a (B, d) batch with uniforms (B, m).

        Returns (new states, fired mask (B,), channel indices (B,), pre-renorm norms
        of the deterministic rows).
        """
        lpsi, rates = self.rates(psi)
        if rates.shape[1] == 0:
            out, nrm = self.deterministic_step(psi, dt)
            none = np.zeros(psi.shape[0], dtype=bool)
            return out, none, np.zeros(psi.shape[0], dtype=np.int64), nrm
        total = rates.sum(axis=1).max() * dt
        if total > 0.1:
            raise StepTooLarge(
                f"dt policy violation: sum_j rate_j * dt = {total:.3g} exceeds 0.1"
            )
        fire = draws < rates * dt
        fired = fire.any(axis=1)
        channel = np.argmax(fire, axis=1)
        out, nrm = self.deterministic_step(psi, dt)
        if fired.any():
            rows = np.nonzero(fired)[0]
            ch = channel[rows]
            post = lpsi[rows, ch] / np.sqrt(rates[rows, ch])[:, None]
            out[rows] = post
            nrm = nrm.copy()
            nrm[rows] = 1.0
        return out, fired, channel, nrm


def pdp_step(
    model: LindbladModel,
    psi: np.ndarray,
    dt: float,
    uniform_draws: Sequence[float],
    time: float = 0.0,
) -> Tuple[np.ndarray, Optional[JumpEvent]]:
    """Advance a single state by one step of the thinning scheme.

    With probability rate_j * dt channel j fires (draws compared
    independently, lowest index wins a simultaneous fire) and the returned
    JumpEvent carries the left limit; otherwise the deterministic flow is
    integrated with RK4 and renormalized. ``time`` stamps the event.
    """
    if psi.ndim != 1 or psi.shape[0] != model.dim:
        raise ValueError(f"expected a single state of dim {model.dim}")
    draws = np.asarray(uniform_draws, dtype=float).reshape(-1)
    if draws.shape[0] != model.n_channels:
        raise ValueError(f"need one uniform draw per channel ({model.n_channels})")
    stepper = _PDPStepper(model)
    out, fired, channel, _ = stepper.step(psi[None, :], draws[None, :], dt)
    if fired[0]:
        event = JumpEvent(
            time=float(time),
            channel=int(channel[0]),
            pre_state=psi.copy(),
            post_state=out[0].copy(),
        )
        return out[0], event
    return out[0], None


def _evolve_pdp(
    model: LindbladModel,
    psi0: np.ndarray,
    grid: TimeGrid,
    seeds: Sequence[int],
    on_block: Optional[Callable[[int, np.ndarray], None]] = None,
    record: bool = False,
    collect_events: bool = False,
    traj_offset: int = 0,
):
    """Drive a batch of PDP trajectories, one RNG stream per seed.

    Returns (states or None, events per row or None, jump_counts (B, m),
    first_jump_step (B,), -1 if a row never jumps). ``on_block`` as in the
    diffusive engine.
    """
    check_dt_policy(model, grid.dt)
    b = len(seeds)
    m = model.n_channels
    dt = grid.dt
    times = grid.times()
    stepper = _PDPStepper(model)
    psi = np.tile(np.asarray(psi0, dtype=complex), (b, 1))
    rngs = [trajectory_rng(s) for s in seeds]
    states = np.empty((b, grid.n_points, model.dim), dtype=complex) if record else None
    if record:
        states[:, 0] = psi
    events: Optional[List[List[JumpEvent]]] = [[] for _ in range(b)] if collect_events else None
    jump_counts = np.zeros((b, m), dtype=np.int64)
    first_jump = np.full(b, -1, dtype=np.int64)
    max_dev = 0.0
    k = 0
    while k < grid.steps:
        blk = min(NOISE_BLOCK, grid.steps - k)
        draws = np.stack([rng.random((blk, m)) for rng in rngs]) if m else np.zeros((b, blk, 0))
        block_states = (
            states[:, k + 1 : k + 1 + blk]
            if record
            else (np.empty((b, blk, model.dim), dtype=complex) if on_block else None)
        )
        for j in range(blk):
            pre = psi if collect_events else None
            try:
                psi, fired, channel, nrm = stepper.step(psi, draws[:, j], dt)
            except StepTooLarge as exc:
                raise TrajectoryError(traj_offset, exc) from exc
            if fired.any():
                rows = np.nonzero(fired)[0]
                np.add.at(jump_counts, (rows, channel[rows]), 1)
                newly = rows[first_jump[rows] < 0]
                first_jump[newly] = k + j + 1
                if collect_events:
                    for r in rows:
                        events[r].append(
                            JumpEvent(
                                time=float(times[k + j + 1]),
                                channel=int(channel[r]),
                                pre_state=pre[r].copy(),
                                post_state=psi[r].copy(),
                            )
                        )
            live = ~fired
            if live.any():
                max_dev = max(max_dev, float(np.max(np.abs(nrm[live] - 1.0))))
            if block_states is not None:
                block_states[:, j] = psi
        if on_block is not None:
            on_block(k + 1, block_states)
        k += blk
    logger.debug(
        "pdp batch of %d: %d jumps, max drift renormalization %.3e",
        b,
        int(jump_counts.sum()),
        max_dev,
    )
    return states, events, jump_counts, first_jump


def pdp_trajectory(
    model: LindbladModel, psi0: np.ndarray, grid: TimeGrid, seed: int
) -> TrajectoryRecord:
    """Simulate one jump trajectory; a pure function of (model, psi0, grid, seed)."""
    check_state(psi0, what="psi0")
    states, events, _, _ = _evolve_pdp(
        model, psi0, grid, [seed], record=True, collect_events=True
    )
    out = states[0]
    out.setflags(write=False)
    evs = tuple(events[0])
    return TrajectoryRecord(
        grid=grid,
        states=out,
        seed=int(seed),
        jump_times=tuple((e.time, e.channel) for e in evs),
        events=evs,
    )
