"""Reproducible parallel Monte Carlo over trajectories.

Trajectory k of an ensemble uses the stream ``split_seed(master_seed, k)``.
Trajectories are processed in fixed chunks of :data:`CHUNK` (a constant,
deliberately independent of the worker count); each chunk produces two-pass
moment partials per grid point, and the parent merges them sequentially in
chunk order with Chan's combine. The outcome is therefore bit-identical for
any value of ``UNRAVEL_THREADS``, which only decides how chunks are farmed
out to worker processes.

Accumulated per grid point: the mean projector E|psi><psi| with per-entry
standard errors, E p_i, E p_i p_k, the trajectory entropy E S, the entropy
of the mean probabilities, and E f_t (divergent points excluded and
counted). On a grid decimated by :data:`DECIMATE` the per-trajectory
statistic

    D = (pp(t + Delta) - pp(t - Delta)) / (2 Delta) - (lindblad + ito)(t)

is accumulated so centered finite differences of E[p_i p_k] can be gated
against the ensemble-averaged second-moment drift in SE units without
differentiating Monte Carlo noise at full resolution. The difference is the
five-point fourth-order stencil: jump trajectories are piecewise smooth, so
their D statistic has tiny variance and the O(Delta^2) truncation bias of a
three-point stencil would register as several SE on its own.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import (
    LindbladModel,
    Measurement,
    TimeGrid,
    check_state,
    xlogx,
)
from .errors import GridMismatch, ModelValidationError
from .functionals import POISSON, WIENER, StateFunctions, _check_tag
from .master import MasterSolution, measurement_entropy
from .poisson import _evolve_pdp
from .trajectory import split_seed
from .wiener import _evolve_gp

#: trajectories per chunk; fixed so results never depend on the worker count
CHUNK = 512

#: decimation stride for derivative checks (finite differences over 100 dt)
DECIMATE = 100

#: absolute floor added to SE gates so zero-variance ensembles stay finite
SE_ATOL = 1e-6

#: default multiplier for standard-error gates
SE_MULT = 5.0


def worker_count(n_tasks: int) -> int:
    """Workers to use: UNRAVEL_THREADS if set, else machine parallelism."""
    env = os.environ.get("UNRAVEL_THREADS", "").strip()
    if env:
        try:
            w = int(env)
        except ValueError as exc:
            raise ModelValidationError(f"UNRAVEL_THREADS: not an integer: {env!r}") from exc
        if w < 1:
            raise ModelValidationError(f"UNRAVEL_THREADS: must be >= 1, got {w}")
    else:
        w = os.cpu_count() or 1
    return max(1, min(w, n_tasks))


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines an ensemble bit-for-bit."""

    model: LindbladModel
    psi0: np.ndarray
    meas: Measurement
    grid: TimeGrid
    n_traj: int
    master_seed: int
    unraveling: str = WIENER

    def __post_init__(self):
        psi0 = np.asarray(self.psi0, dtype=complex)
        check_state(psi0, what="psi0")
        if psi0.shape[0] != self.model.dim:
            raise ModelValidationError(
                f"psi0: dimension {psi0.shape[0]} != model dimension {self.model.dim}"
            )
        if self.meas.dim != self.model.dim:
            raise ModelValidationError(
                f"measurement: dimension {self.meas.dim} != model dimension {self.model.dim}"
            )
        if int(self.n_traj) < 2:
            raise ModelValidationError(
                f"ensemble.n_traj: need at least 2 trajectories for standard errors, got {self.n_traj}"
            )
        _check_tag(self.unraveling)
        psi0 = np.ascontiguousarray(psi0)
        psi0.setflags(write=False)
        object.__setattr__(self, "psi0", psi0)
        object.__setattr__(self, "n_traj", int(self.n_traj))
        object.__setattr__(self, "master_seed", int(self.master_seed))


# -- streaming moments -------------------------------------------------------


def _batch_moments(v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-pass (count, mean, M2) over the leading axis of a batch."""
    cnt = np.asarray(float(v.shape[0]))
    mean = v.mean(axis=0)
    m2 = np.sum(np.abs(v - mean) ** 2, axis=0)
    return cnt, mean, np.asarray(m2, dtype=float)


def _masked_moments(v: np.ndarray, keep: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Moments over the leading axis using only rows where ``keep`` is True."""
    cnt = keep.sum(axis=0).astype(float)
    safe = np.where(cnt > 0, cnt, 1.0)
    vz = np.where(keep, v, 0.0)
    mean = vz.sum(axis=0) / safe
    m2 = np.sum(np.where(keep, np.abs(v - mean) ** 2, 0.0), axis=0)
    mean = np.where(cnt > 0, mean, 0.0)
    return cnt, mean, np.asarray(m2, dtype=float)


def _merge_moments(a, b):
    """Chan's parallel combine; counts may be arrays (masked statistics)."""
    n1, mean1, m21 = a
    n2, mean2, m22 = b
    tot = n1 + n2
    safe = np.where(tot > 0, tot, 1.0)
    delta = mean2 - mean1
    mean = mean1 + delta * (n2 / safe)
    m2 = m21 + m22 + np.abs(delta) ** 2 * (n1 * n2 / safe)
    mean = np.where(tot > 0, mean, 0.0)
    return tot, mean, m2


def _se_from(moments) -> np.ndarray:
    """Standard error of the mean; NaN where fewer than 2 samples landed."""
    cnt, _, m2 = moments
    cnt = np.asarray(cnt, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        se = np.sqrt(m2 / (cnt * (cnt - 1.0)))
    return np.where(cnt >= 2, se, np.nan)


def _mean_from(moments) -> np.ndarray:
    cnt, mean, _ = moments
    return np.where(np.asarray(cnt) > 0, mean, np.nan)


# -- per-chunk simulation -----------------------------------------------------


def _dec_indices(grid: TimeGrid) -> np.ndarray:
    return np.arange(0, grid.steps + 1, DECIMATE)


def _chunk_stats(config: EnsembleConfig, lo: int, hi: int) -> Dict[str, object]:
    """Simulate trajectories lo..hi-1 and reduce them to moment partials."""
    model, meas, grid = config.model, config.meas, config.grid
    fn = StateFunctions(model, meas)
    seeds = [split_seed(config.master_seed, k) for k in range(lo, hi)]
    b = hi - lo
    npts = grid.n_points
    n = meas.n
    d = model.dim
    dec = _dec_indices(grid)
    nd = dec.shape[0]

    vals_proj = np.empty((b, npts, d, d), dtype=complex)
    vals_p = np.empty((b, npts, n))
    vals_s = np.empty((b, npts))
    vals_f = np.empty((b, npts))
    flag_f = np.empty((b, npts), dtype=bool)
    pp_dec = np.empty((b, nd, n, n))
    integ_dec = np.empty((b, nd, n, n))

    def accumulate(k0: int, states: np.ndarray) -> None:
        sl = slice(k0, k0 + states.shape[1])
        p = fn.probs(states)
        vals_p[:, sl] = p
        vals_proj[:, sl] = np.einsum("bki,bkj->bkij", states, states.conj())
        vals_s[:, sl] = -np.sum(xlogx(p), axis=-1)
        f, _, flg = fn.f_and_flags(states)
        vals_f[:, sl] = np.where(flg, 0.0, f)
        flag_f[:, sl] = flg
        gk = np.arange(k0, k0 + states.shape[1])
        on_dec = np.nonzero(gk % DECIMATE == 0)[0]
        if on_dec.size:
            slots = gk[on_dec] // DECIMATE
            sub = states[:, on_dec]
            psub = fn.probs(sub)
            pp_dec[:, slots] = np.einsum("bkn,bkm->bknm", psub, psub)
            lp, ito = fn.smd_parts(sub, config.unraveling)
            integ_dec[:, slots] = lp + ito

    accumulate(0, np.tile(config.psi0, (b, 1, 1)))
    if config.unraveling == WIENER:
        _evolve_gp(model, config.psi0, grid, seeds, on_block=accumulate, traj_offset=lo)
        jump_counts = np.zeros((b, model.n_channels), dtype=np.int64)
        first_jump = np.full(b, -1, dtype=np.int64)
    else:
        _, _, jump_counts, first_jump = _evolve_pdp(
            model, config.psi0, grid, seeds, on_block=accumulate, traj_offset=lo
        )

    pp = np.einsum("btn,btk->btnk", vals_p, vals_p)
    delta_t = DECIMATE * grid.dt
    fd = (
        -pp_dec[:, 4:] + 8.0 * pp_dec[:, 3:-1] - 8.0 * pp_dec[:, 1:-3] + pp_dec[:, :-4]
    ) / (12.0 * delta_t)
    d_stat = fd - integ_dec[:, 2:-2]

    jumped = first_jump >= 0
    jump_time = np.where(jumped, grid.t0 + grid.dt * first_jump, 0.0)

    return {
        "count": b,
        "proj": _batch_moments(vals_proj),
        "p": _batch_moments(vals_p),
        "pp": _batch_moments(pp),
        "entropy": _batch_moments(vals_s),
        "f": _masked_moments(vals_f, ~flag_f),
        "flags": flag_f.sum(axis=0).astype(np.int64),
        "integrand": _batch_moments(integ_dec),
        "d_stat": _batch_moments(d_stat),
        "jump_totals": jump_counts.sum(axis=0),
        "jump_per_traj": _batch_moments(jump_counts.astype(float)),
        "first_jump": _masked_moments(jump_time, jumped),
    }


def _merge_chunks(parts: List[Dict[str, object]]) -> Dict[str, object]:
    out = parts[0]
    for nxt in parts[1:]:
        out = {
            "count": out["count"] + nxt["count"],
            "flags": out["flags"] + nxt["flags"],
            "jump_totals": out["jump_totals"] + nxt["jump_totals"],
            **{
                key: _merge_moments(out[key], nxt[key])
                for key in (
                    "proj",
                    "p",
                    "pp",
                    "entropy",
                    "f",
                    "integrand",
                    "d_stat",
                    "jump_per_traj",
                    "first_jump",
                )
            },
        }
    return out


# -- results ------------------------------------------------------------------


@dataclass
class EnsembleStats:
    """Time-gridded Monte Carlo estimates with standard errors."""

    grid: TimeGrid
    unraveling: str
    n_traj: int
    master_seed: int
    mean_projector: np.ndarray  # (T+1, d, d) complex
    se_projector: np.ndarray  # (T+1, d, d)
    mean_p: np.ndarray  # (T+1, n)
    se_p: np.ndarray
    mean_pp: np.ndarray  # (T+1, n, n)
    se_pp: np.ndarray
    mean_entropy: np.ndarray  # (T+1,)
    se_entropy: np.ndarray
    s_a_ensemble: np.ndarray  # (T+1,) entropy of mean_p
    mean_f: np.ndarray  # (T+1,) NaN where every trajectory was flagged
    se_f: np.ndarray
    f_count: np.ndarray  # (T+1,) trajectories contributing to mean_f
    boundary_flags: np.ndarray  # (T+1,) divergent-point counts
    dec_indices: np.ndarray  # decimated grid indices
    smd_integrand_mean: np.ndarray  # (nd, n, n) E[lindblad+ito]
    smd_integrand_se: np.ndarray
    smd_d_mean: np.ndarray  # (nd-4, n, n) E[FD - integrand]
    smd_d_se: np.ndarray
    jump_counts: np.ndarray  # (m,) total jumps per channel
    jump_count_mean: np.ndarray  # (m,) per-trajectory means
    jump_count_se: np.ndarray
    first_jump_mean: float  # NaN if nothing ever jumped
    first_jump_se: float
    first_jump_count: int

    @property
    def boundary_flag_total(self) -> int:
        return int(self.boundary_flags.sum())

    def dec_times(self) -> np.ndarray:
        return self.grid.times()[self.dec_indices]


def run_ensemble(config: EnsembleConfig) -> EnsembleStats:
    """Monte Carlo over config.n_traj trajectories; see the module docstring.

    Bit-for-bit deterministic in ``config`` alone; ``UNRAVEL_THREADS`` only
    sets how many worker processes share the fixed chunk list.
    """
    chunks = [(lo, min(lo + CHUNK, config.n_traj)) for lo in range(0, config.n_traj, CHUNK)]
    nworkers = worker_count(len(chunks))
    if nworkers <= 1:
        parts = [_chunk_stats(config, lo, hi) for lo, hi in chunks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=nworkers, mp_context=ctx) as pool:
            futures = [pool.submit(_chunk_stats, config, lo, hi) for lo, hi in chunks]
            parts = [f.result() for f in futures]  # submission order == chunk order
    merged = _merge_chunks(parts)

    mean_p = _mean_from(merged["p"])
    s_a = -np.sum(xlogx(np.clip(mean_p, 0.0, 1.0)), axis=-1)
    fj_cnt, fj_mean, _ = merged["first_jump"]
    return EnsembleStats(
        grid=config.grid,
        unraveling=config.unraveling,
        n_traj=config.n_traj,
        master_seed=config.master_seed,
        mean_projector=_mean_from(merged["proj"]),
        se_projector=_se_from(merged["proj"]),
        mean_p=mean_p,
        se_p=_se_from(merged["p"]),
        mean_pp=_mean_from(merged["pp"]),
        se_pp=_se_from(merged["pp"]),
        mean_entropy=_mean_from(merged["entropy"]),
        se_entropy=_se_from(merged["entropy"]),
        s_a_ensemble=s_a,
        mean_f=_mean_from(merged["f"]),
        se_f=_se_from(merged["f"]),
        f_count=np.asarray(merged["f"][0]),
        boundary_flags=merged["flags"],
        dec_indices=_dec_indices(config.grid),
        smd_integrand_mean=_mean_from(merged["integrand"]),
        smd_integrand_se=_se_from(merged["integrand"]),
        smd_d_mean=_mean_from(merged["d_stat"]),
        smd_d_se=_se_from(merged["d_stat"]),
        jump_counts=np.asarray(merged["jump_totals"]),
        jump_count_mean=_mean_from(merged["jump_per_traj"]),
        jump_count_se=_se_from(merged["jump_per_traj"]),
        first_jump_mean=float(fj_mean) if fj_cnt > 0 else float("nan"),
        first_jump_se=float(_se_from(merged["first_jump"])),
        first_jump_count=int(fj_cnt),
    )


def se_ratio(
    diff: np.ndarray,
    se: np.ndarray,
    mult: float = SE_MULT,
    atol: float = SE_ATOL,
    floor: float = 0.0,
):
    """|diff| in SE units, finite even for zero-variance ensembles.

    Defined as |diff| / (max(SE, floor) + atol/mult) so that ratio > mult is
    exactly the multiplied-form gate |diff| > mult*max(SE, floor) + atol; NaN
    SEs count as zero. ``floor`` covers estimators whose empirical SE
    degenerates to 0 when all samples coincide (a jump ensemble's outcome
    probabilities early on): the resolution of a [0, 1]-bounded mean from n
    samples is ~1/n, and the rule-of-three bound 3/n is the standard 95%
    envelope for an event not yet observed.
    """
    se = np.maximum(np.where(np.isnan(se), 0.0, se), floor)
    return np.abs(diff) / (se + atol / mult)


def probability_se_floor(n_traj: int) -> float:
    """Rule-of-three floor for standard errors of probability means."""
    return 3.0 / n_traj


@dataclass
class ComparisonReport:
    """Per-grid-point comparison of an ensemble against the master solution."""

    grid: TimeGrid
    unraveling: str
    n_traj: int
    trace_distance: np.ndarray  # (T+1,)
    p_resid_abs: np.ndarray  # (T+1, n) |E p_i - Tr[rho P_i]|
    p_resid_ratio: np.ndarray  # same, in SE units (finite by construction)
    jensen_gap: np.ndarray  # (T+1,) S^A(master) - E S
    jensen_se: np.ndarray  # (T+1,) SE of E S
    jensen_se_floor: float  # resolution floor: (3/n) * entropy range
    s_a_master: np.ndarray  # (T+1,)
    s_a_ensemble: np.ndarray  # (T+1,)
    smd_times: np.ndarray  # interior decimated times (five-point stencil support)
    smd_fd_mean: np.ndarray  # centered FD of E[p_i p_k] on the interior
    smd_drift_mean: np.ndarray  # E[lindblad + ito] on the interior
    smd_resid_abs: np.ndarray
    smd_resid_ratio: np.ndarray  # same, in SE units
    boundary_flag_total: int

    def trace_budget(self) -> float:
        """Monte Carlo trace-distance budget: 0.02 at n = 1e4, scaling as n^-1/2."""
        return 0.02 * math.sqrt(10_000.0 / self.n_traj)

    def violations(
        self, trace_tol: Optional[float] = None, mult: float = SE_MULT, atol: float = SE_ATOL
    ) -> List[str]:
        """Threshold violations (empty list means the report passes the CI gate)."""
        out = []
        if trace_tol is None:
            trace_tol = self.trace_budget()
        worst = float(np.max(self.trace_distance))
        if worst > trace_tol:
            out.append(f"max trace distance {worst:.4f} exceeds {trace_tol:.4g}")
        worst = float(np.max(self.p_resid_ratio))
        if worst > mult:
            out.append(f"max probability residual {worst:.2f} SE exceeds {mult}")
        # degenerate samples (no jump yet anywhere) report SE = 0 while the
        # unseen branch contributes up to (3/n) * range to the true mean
        se_eff = np.maximum(
            np.where(np.isnan(self.jensen_se), 0.0, self.jensen_se), self.jensen_se_floor
        )
        jens = self.jensen_gap + mult * se_eff
        if float(jens.min()) < -atol:
            out.append(f"Jensen gap {float(self.jensen_gap.min()):.3e} below -{mult} SE")
        if self.smd_resid_ratio.size:
            worst = float(np.max(self.smd_resid_ratio))
            if worst > mult:
                out.append(f"max second-moment residual {worst:.2f} SE exceeds {mult}")
        return out


def compare_to_master(
    stats: EnsembleStats, master: MasterSolution, meas: Measurement
) -> ComparisonReport:
    """Build the per-grid-point martingale / Jensen / second-moment report."""
    if stats.grid != master.grid:
        raise GridMismatch(f"ensemble grid {stats.grid} != master grid {master.grid}")
    diff = stats.mean_projector - master.states
    eig = np.linalg.eigvalsh(0.5 * (diff + np.conj(np.swapaxes(diff, -1, -2))))
    trace_distance = 0.5 * np.sum(np.abs(eig), axis=-1)

    q = master.effect_probabilities(meas)
    p_resid = stats.mean_p - q
    s_a_master = np.array([measurement_entropy(rho, meas) for rho in master.states])

    interior = stats.dec_indices[2:-2]
    return ComparisonReport(
        grid=stats.grid,
        unraveling=stats.unraveling,
        n_traj=stats.n_traj,
        trace_distance=trace_distance,
        p_resid_abs=np.abs(p_resid),
        p_resid_ratio=se_ratio(p_resid, stats.se_p, floor=probability_se_floor(stats.n_traj)),
        jensen_gap=s_a_master - stats.mean_entropy,
        jensen_se=stats.se_entropy,
        jensen_se_floor=probability_se_floor(stats.n_traj) * math.log(max(meas.n, 2)),
        s_a_master=s_a_master,
        s_a_ensemble=stats.s_a_ensemble,
        smd_times=stats.grid.times()[interior],
        smd_fd_mean=stats.smd_d_mean + stats.smd_integrand_mean[2:-2],
        smd_drift_mean=stats.smd_integrand_mean[2:-2],
        smd_resid_abs=np.abs(stats.smd_d_mean),
        smd_resid_ratio=se_ratio(stats.smd_d_mean, stats.smd_d_se),
        boundary_flag_total=stats.boundary_flag_total,
    )


@dataclass
class SecondMomentReport:
    """Second-moment drift validation for both unravelings on one model.

    The residual blocks gate FD-vs-drift agreement per unraveling; the cross
    block quantifies how far apart the two unravelings' E[p_i p_k] series
    are, in pooled SE units (this is the part that is *expected* to be large
    whenever the corrections differ).
    """

    grid: TimeGrid
    dec_times: np.ndarray  # (nd,)
    interior_times: np.ndarray  # decimated points with full stencil support
    wiener: ComparisonReport
    poisson: ComparisonReport
    pp_wiener: np.ndarray  # (nd, n, n)
    pp_poisson: np.ndarray
    cross_abs: np.ndarray  # (nd, n, n) |E pp_w - E pp_p|
    cross_ratio: np.ndarray  # same, in pooled SE units

    def violations(self, mult: float = SE_MULT, atol: float = SE_ATOL) -> List[str]:
        out = []
        for tag, rep in ((WIENER, self.wiener), (POISSON, self.poisson)):
            worst = float(np.max(rep.smd_resid_ratio)) if rep.smd_resid_ratio.size else 0.0
            if worst > mult:
                out.append(f"{tag}: second-moment residual {worst:.2f} SE exceeds {mult}")
        return out


def second_moment_report(
    stats_w: EnsembleStats,
    stats_p: EnsembleStats,
    master: MasterSolution,
    meas: Measurement,
) -> SecondMomentReport:
    if stats_w.grid != stats_p.grid:
        raise GridMismatch("the two ensembles ran on different grids")
    dec = stats_w.dec_indices
    pp_w, pp_p = stats_w.mean_pp[dec], stats_p.mean_pp[dec]
    pooled = np.sqrt(
        np.nan_to_num(stats_w.se_pp[dec]) ** 2 + np.nan_to_num(stats_p.se_pp[dec]) ** 2
    )
    return SecondMomentReport(
        grid=stats_w.grid,
        dec_times=stats_w.dec_times(),
        interior_times=stats_w.grid.times()[dec[2:-2]],
        wiener=compare_to_master(stats_w, master, meas),
        poisson=compare_to_master(stats_p, master, meas),
        pp_wiener=pp_w,
        pp_poisson=pp_p,
        cross_abs=np.abs(pp_w - pp_p),
        cross_ratio=se_ratio(pp_w - pp_p, pooled),
    )


def second_moment_validation(
    config: EnsembleConfig, master: MasterSolution
) -> SecondMomentReport:
    """Run both unravelings of ``config`` and validate their second moments.

    The jump run uses master_seed + 1 so the pooled-SE cross columns compare
    independent estimates.
    """
    stats_w = run_ensemble(replace(config, unraveling=WIENER))
    stats_p = run_ensemble(
        replace(config, unraveling=POISSON, master_seed=config.master_seed + 1)
    )
    return second_moment_report(stats_w, stats_p, master, config.meas)
