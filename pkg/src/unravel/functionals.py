"""Nonlinear functionals of trajectories and their unraveling-specific drifts.

For a complete effect family {P_i} with outcome probabilities p_i = <P_i>,
this module evaluates, at a single state (or batches of states):

* the probability drift <Ldag[P_i]> and its diffusive / jump noise
  coefficients for the two unravelings,
* the per-state integrand of d E[p_i p_k] / dt, split into the common
  Lindblad part p_k <Ldag[P_i]> + p_i <Ldag[P_k]> and the unraveling-specific
  second-moment correction (quadratic-variation term),
* the trajectory entropy S = -sum_i p_i ln p_i and its deterministic
  entropy corrections: for the diffusive unraveling
  -sum_i (1/p_i) sum_j |<P_i (L_j - <L_j>)>|^2 (manifestly <= 0), and for
  the jump unraveling -f with
  f = sum_ij <Lj^dag P_i Lj> ln( <Lj^dag P_i Lj> / (<Lj^dag Lj> p_i) ) >= 0.

Conventions: phi(0) = 0 wherever x ln x appears; a term whose numerator is
below 1e-15 contributes 0; a probability at or below the floor 1e-12 whose
coupling numerator exceeds 1e-12 makes the correction genuinely divergent
and raises BoundaryDivergence (ensemble reports exclude and count such
points); a state where every channel is dark has f = 0 by convention.
At jump points all evaluators expect the left-limit state (JumpEvent.pre_state).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .core import LindbladModel, Measurement, probabilities, xlogx
from .errors import BoundaryDivergence
from .master import adjoint_lindbladian
from .trajectory import TrajectoryRecord

#: probability floor below which a coupled outcome makes corrections diverge
PROB_FLOOR = 1e-12
#: numerators below this contribute 0 (the phi(0) = 0 convention)
NUMER_ZERO = 1e-15
#: numerators above this at a floored probability trigger BoundaryDivergence
NUMER_LIVE = 1e-12
#: channels with <Ldag L> at or below this are dark
DARK_RATE = 1e-12

WIENER = "wiener"
POISSON = "poisson"
_TAGS = (WIENER, POISSON)


def _check_tag(tag: str) -> str:
    if tag not in _TAGS:
        raise ValueError(f"unraveling tag must be one of {_TAGS}, got {tag!r}")
    return tag


@dataclass(frozen=True)
class SecondMomentDrift:
    """Per-state integrand of d E[p_i p_k]/dt, before ensemble averaging."""

    lindblad_part: np.ndarray  # (n, n) real, symmetric
    ito_part: np.ndarray  # (n, n) real, symmetric
    unraveling: str

    def __post_init__(self):
        for name in ("lindblad_part", "ito_part"):
            a = np.asarray(getattr(self, name), dtype=float)
            defect = float(np.max(np.abs(a - a.T))) if a.size else 0.0
            if defect > 1e-10:
                raise ValueError(f"{name} asymmetric by {defect:.3e}")
            object.__setattr__(self, name, a)
        _check_tag(self.unraveling)

    @property
    def total(self) -> np.ndarray:
        return self.lindblad_part + self.ito_part


@dataclass(frozen=True)
class EntropyCorrection:
    """Deterministic (non-martingale) entropy drift term, in nats per time."""

    value: float
    unraveling: str

    def __post_init__(self):
        _check_tag(self.unraveling)


def entropy(p: np.ndarray) -> float | np.ndarray:
    """Shannon entropy -sum p ln p in nats; accepts batches ``(..., n)``.

    The distribution must have entries in [0, 1] summing to 1 within 1e-8.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 1:
        raise ValueError("expected a probability vector")
    if np.any(p < -1e-12) or np.any(p > 1.0 + 1e-12):
        raise ValueError("malformed distribution: entries outside [0, 1]")
    dev = np.max(np.abs(p.sum(axis=-1) - 1.0))
    if dev > 1e-8:
        raise ValueError(f"malformed distribution: sums deviate from 1 by {dev:.3e}")
    s = -np.sum(xlogx(np.clip(p, 0.0, 1.0)), axis=-1)
    return float(s) if np.ndim(s) == 0 else s


class StateFunctions:
    """Precomputed operator stacks for evaluating all functionals on state batches.

    Methods accept states with arbitrary leading axes ``(..., d)``. Batch
    methods never raise BoundaryDivergence; they return flag arrays so
    ensemble accumulation can exclude and count divergent points.
    """

    def __init__(self, model: LindbladModel, meas: Measurement):
        if model.dim != meas.dim:
            raise ValueError(
                f"dimension mismatch: model dim {model.dim}, measurement dim {meas.dim}"
            )
        self.model = model
        self.meas = meas
        self.p_stack = meas.effect_stack
        self.l_stack = model.lindblad_stack()
        self.g_stack = np.stack(
            [adjoint_lindbladian(model, p) for p in meas.effects]
        )  # Ldag[P_i]

    # -- elementary pieces -------------------------------------------------

    def probs(self, psi: np.ndarray) -> np.ndarray:
        p = np.einsum("...i,nij,...j->...n", psi.conj(), self.p_stack, psi).real
        return np.clip(p, 0.0, 1.0)

    def lpsi(self, psi: np.ndarray) -> np.ndarray:
        return np.einsum("mij,...j->...mi", self.l_stack, psi)

    def rates(self, lpsi: np.ndarray) -> np.ndarray:
        r = np.einsum("...mi,...mi->...m", lpsi.conj(), lpsi).real
        return np.where(r > DARK_RATE, r, 0.0)

    def adjoint_drift(self, psi: np.ndarray) -> np.ndarray:
        """drift_i = <Ldag[P_i]>, real."""
        return np.einsum("...i,nij,...j->...n", psi.conj(), self.g_stack, psi).real

    def wiener_coeffs(self, psi: np.ndarray, lpsi: np.ndarray, p: np.ndarray) -> np.ndarray:
        """a_ij = <P_i (L_j - <L_j>)> (no 1/sqrt(2)); shape (..., n, m)."""
        expl = np.einsum("...i,...mi->...m", psi.conj(), lpsi)
        pl = np.einsum("...i,nij,...mj->...nm", psi.conj(), self.p_stack, lpsi)
        return pl - p[..., :, None] * expl[..., None, :]

    def jump_numerators(self, lpsi: np.ndarray) -> np.ndarray:
        """<Lj^dag P_i Lj> >= 0; shape (..., n, m)."""
        numer = np.einsum("...mi,nij,...mj->...nm", lpsi.conj(), self.p_stack, lpsi).real
        return np.clip(numer, 0.0, None)

    def jump_coeffs(self, numer: np.ndarray, rates: np.ndarray, p: np.ndarray) -> np.ndarray:
        """<Lj^dag P_i Lj>/<Lj^dag Lj> - p_i, 0 on dark channels; shape (..., n, m)."""
        live = rates > 0.0
        safe = np.where(live, rates, 1.0)
        return np.where(live[..., None, :], numer / safe[..., None, :] - p[..., :, None], 0.0)

    # -- composite integrands ----------------------------------------------

    def smd_parts(self, psi: np.ndarray, tag: str) -> Tuple[np.ndarray, np.ndarray]:
        """(lindblad_part, ito_part) of d E[p_i p_k]/dt at each state."""
        _check_tag(tag)
        p = self.probs(psi)
        g = self.adjoint_drift(psi)
        lpsi = self.lpsi(psi)
        lp = np.einsum("...n,...k->...nk", g, p)
        lp = lp + np.swapaxes(lp, -1, -2)
        if tag == WIENER:
            a = self.wiener_coeffs(psi, lpsi, p)
            ito = 2.0 * np.einsum("...nm,...km->...nk", a, a.conj()).real
        else:
            rates = self.rates(lpsi)
            numer = self.jump_numerators(lpsi)
            c = self.jump_coeffs(numer, rates, p)
            ito = np.einsum("...nm,...km,...m->...nk", c, c, rates)
        return lp, ito

    def f_and_flags(self, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(f, EX, boundary flag) at each state; f = 0 where all channels are dark."""
        p = self.probs(psi)
        lpsi = self.lpsi(psi)
        rates = self.rates(lpsi)
        numer = self.jump_numerators(lpsi)
        live = rates > 0.0
        numer = np.where(live[..., None, :], numer, 0.0)
        b_exp = rates.sum(axis=-1)
        all_dark = b_exp <= DARK_RATE
        flagged = np.any((p[..., :, None] <= PROB_FLOOR) & (numer > NUMER_LIVE), axis=(-1, -2))
        active = numer > NUMER_ZERO
        denom = rates[..., None, :] * p[..., :, None]
        safe_numer = np.where(active, numer, 1.0)
        safe_denom = np.where(active & (denom > 0.0), denom, 1.0)
        terms = np.where(active, safe_numer * np.log(safe_numer / safe_denom), 0.0)
        f = np.where(all_dark, 0.0, terms.sum(axis=(-1, -2)))
        f = np.where(flagged, np.nan, f)
        safe_b = np.where(all_dark, 1.0, b_exp)
        ex = np.where(all_dark, 1.0, numer.sum(axis=(-1, -2)) / safe_b)
        return f, ex, flagged

    def wiener_correction_and_flags(self, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(value, boundary flag) of the diffusive entropy correction per state."""
        p = self.probs(psi)
        lpsi = self.lpsi(psi)
        a2 = np.abs(self.wiener_coeffs(psi, lpsi, p)) ** 2
        numer = a2.sum(axis=-1)
        flagged = np.any((p <= PROB_FLOOR) & (numer > NUMER_LIVE), axis=-1)
        active = numer > NUMER_ZERO
        safe_p = np.where(p > PROB_FLOOR, p, 1.0)
        val = -np.where(active, numer / safe_p, 0.0).sum(axis=-1)
        val = np.where(flagged, np.nan, val)
        return val, flagged

    def entropies(self, psi: np.ndarray) -> np.ndarray:
        return -np.sum(xlogx(self.probs(psi)), axis=-1)


def probability_drift_wiener(
    model: LindbladModel, psi: np.ndarray, meas: Measurement
) -> Tuple[np.ndarray, np.ndarray]:
    """Drift <Ldag[P_i]> and diffusion (1/sqrt 2)<P_i(L_j - <L_j>)> of dp_i.

    The Hermitian-conjugate partner of each diffusion entry rides on dW_j^*.
    Returns (drift (..., n) real, diffusion (..., n, m) complex).
    """
    fn = StateFunctions(model, meas)
    p = fn.probs(psi)
    lpsi = fn.lpsi(psi)
    return fn.adjoint_drift(psi), fn.wiener_coeffs(psi, lpsi, p) / np.sqrt(2.0)


def probability_jump_coefficients(
    model: LindbladModel, psi: np.ndarray, meas: Measurement
) -> np.ndarray:
    """Compensated-jump coefficients <Lj^dag P_i Lj>/<Lj^dag Lj> - p_i, (..., n, m).

    Dark channels yield 0 by convention; columns sum to 0 over i.
    """
    fn = StateFunctions(model, meas)
    p = fn.probs(psi)
    lpsi = fn.lpsi(psi)
    rates = fn.rates(lpsi)
    return fn.jump_coeffs(fn.jump_numerators(lpsi), rates, p)


def second_moment_drift(
    model: LindbladModel, psi: np.ndarray, meas: Measurement, tag: str
) -> SecondMomentDrift:
    """Per-state integrand of d E[p_i p_k]/dt for one unraveling.

    The jump-unraveling correction is a Gram matrix; its positive
    semidefiniteness is verified to 1e-10 before returning.
    """
    if psi.ndim != 1:
        raise ValueError("second_moment_drift evaluates a single state")
    fn = StateFunctions(model, meas)
    lp, ito = fn.smd_parts(psi, tag)
    if tag == POISSON and ito.size:
        lo = float(np.linalg.eigvalsh(0.5 * (ito + ito.T)).min())
        if lo < -1e-10:
            raise AssertionError(f"jump second-moment correction not PSD: min eig {lo:.3e}")
    return SecondMomentDrift(lindblad_part=lp, ito_part=ito, unraveling=tag)


def entropy_correction(
    model: LindbladModel, psi: np.ndarray, meas: Measurement, tag: str
) -> EntropyCorrection:
    """Deterministic entropy drift for one unraveling at one state.

    Diffusive: -sum_i (1/p_i) sum_j |<P_i (L_j - <L_j>)>|^2 (always <= 0).
    Jump: -f (<= 0 whenever all coupled probabilities are interior).
    Raises BoundaryDivergence when a floored probability has live coupling.
    """
    _check_tag(tag)
    if psi.ndim != 1:
        raise ValueError("entropy_correction evaluates a single state")
    fn = StateFunctions(model, meas)
    if tag == WIENER:
        val, flagged = fn.wiener_correction_and_flags(psi)
    else:
        f, _, flagged = fn.f_and_flags(psi)
        val = -f
    if bool(flagged):
        raise BoundaryDivergence(
            "entropy correction diverges: an outcome probability is at the floor "
            f"({PROB_FLOOR:g}) while its coupling coefficient is nonzero"
        )
    return EntropyCorrection(value=float(val), unraveling=tag)


def f_with_bookkeeping(
    model: LindbladModel, psi: np.ndarray, meas: Measurement
) -> Tuple[float, float]:
    """(f, EX) where EX is the mean of the proof's discrete random variable.

    EX must equal 1 (completeness); returned so callers can verify the
    bookkeeping at their own tolerance.
    """
    if psi.ndim != 1:
        raise ValueError("f_functional evaluates a single state")
    fn = StateFunctions(model, meas)
    f, ex, flagged = fn.f_and_flags(psi)
    if bool(flagged):
        raise BoundaryDivergence(
            "f diverges: an outcome probability is at the floor "
            f"({PROB_FLOOR:g}) while its jump numerator is nonzero"
        )
    return float(f), float(ex)


def f_functional(model: LindbladModel, psi: np.ndarray, meas: Measurement) -> float:
    """The nonnegative jump-entropy functional f at one state.

    0 by convention when every channel is dark; BoundaryDivergence when a
    floored probability carries live coupling.
    """
    f, ex = f_with_bookkeeping(model, psi, meas)
    if abs(ex - 1.0) > 1e-6:
        raise AssertionError(f"EX bookkeeping broken: EX = {ex!r}")
    return f


def trajectory_entropy_series(record: TrajectoryRecord, meas: Measurement) -> np.ndarray:
    """S(t_k) = entropy of the outcome distribution at every stored grid state."""
    p = probabilities(record.states, meas)
    return -np.sum(xlogx(p), axis=-1)


def entropy_correction_series(
    model: LindbladModel, states: np.ndarray, meas: Measurement, tag: str
) -> Tuple[np.ndarray, np.ndarray]:
    """Correction value per state in a (T, d) series, NaN + flag where divergent."""
    _check_tag(tag)
    fn = StateFunctions(model, meas)
    if tag == WIENER:
        return fn.wiener_correction_and_flags(states)
    f, _, flagged = fn.f_and_flags(states)
    return -f, flagged


def f_series(
    model: LindbladModel, states: np.ndarray, meas: Measurement
) -> Tuple[np.ndarray, np.ndarray]:
    """f per state in a (T, d) series, NaN + flag where divergent."""
    fn = StateFunctions(model, meas)
    f, _, flagged = fn.f_and_flags(states)
    return f, flagged
