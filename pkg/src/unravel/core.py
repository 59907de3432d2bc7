"""Dense complex linear algebra for finite-dimensional open quantum systems.

States are 1-D complex128 arrays, operators and density matrices are square
2-D complex128 arrays; the composite model objects below are frozen
dataclasses wrapping read-only arrays, so everything can be shared freely
between concurrent workers. All elementary expectation helpers accept
leading batch axes (shape ``(..., d)``) and broadcast over them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ModelValidationError

HERMITICITY_TOL = 1e-10
NORM_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8
COMPLETENESS_TOL = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def as_operator(entries, what: str = "operator") -> np.ndarray:
    """Coerce to a square, finite complex128 matrix (a defensive copy)."""
    a = np.array(entries, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ModelValidationError(f"{what}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(float))):
        raise ModelValidationError(f"{what}: entries must be finite (no NaN/Inf)")
    return a


def as_state(amplitudes, what: str = "state") -> np.ndarray:
    a = np.array(amplitudes, dtype=complex)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ModelValidationError(f"{what}: expected a 1-D amplitude vector, got shape {a.shape}")
    if not np.all(np.isfinite(a.view(float))):
        raise ModelValidationError(f"{what}: amplitudes must be finite")
    return a


def dagger(a: np.ndarray) -> np.ndarray:
    return a.conj().T


def hermiticity_defect(a: np.ndarray) -> float:
    """Max-entry distance from A to its adjoint."""
    return float(np.max(np.abs(a - dagger(a)))) if a.size else 0.0


def opnorm(a: np.ndarray) -> float:
    """Spectral norm (largest singular value)."""
    return float(np.linalg.norm(a, 2))


def norm(psi: np.ndarray) -> np.ndarray:
    """Euclidean norm over the last axis, batch friendly."""
    return np.sqrt(np.einsum("...i,...i->...", psi.conj(), psi).real)


def normalize(psi: np.ndarray) -> np.ndarray:
    n = norm(psi)
    if np.any(n == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return psi / np.expand_dims(n, -1) if psi.ndim > 1 else psi / n


def check_state(psi: np.ndarray, tol: float = NORM_TOL, what: str = "state") -> None:
    dev = np.max(np.abs(norm(psi) - 1.0))
    if dev > tol:
        raise ModelValidationError(f"{what}: norm deviates from 1 by {dev:.3e} (tol {tol:.0e})")


def check_density_matrix(
    rho: np.ndarray,
    herm_tol: float = HERMITICITY_TOL,
    trace_tol: float = TRACE_TOL,
    eig_tol: float = POSITIVITY_TOL,
    what: str = "density matrix",
) -> None:
    """Hermitian within herm_tol, unit trace within trace_tol, eigenvalues >= -eig_tol."""
    defect = hermiticity_defect(rho)
    if defect > herm_tol:
        raise ModelValidationError(f"{what}: Hermiticity defect {defect:.3e} (tol {herm_tol:.0e})")
    tr = complex(np.trace(rho))
    if abs(tr - 1.0) > trace_tol:
        raise ModelValidationError(f"{what}: trace {tr} deviates from 1 beyond {trace_tol:.0e}")
    lo = float(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))).min())
    if lo < -eig_tol:
        raise ModelValidationError(f"{what}: smallest eigenvalue {lo:.3e} below -{eig_tol:.0e}")


def expectation(psi: np.ndarray, op: np.ndarray) -> complex | np.ndarray:
    """<psi|op|psi> for one state (returns complex) or a batch ``(..., d)`` of states."""
    if op.shape[-1] != psi.shape[-1]:
        raise ValueError(f"dimension mismatch: operator dim {op.shape[-1]}, state dim {psi.shape[-1]}")
    val = np.einsum("...i,ij,...j->...", psi.conj(), op, psi)
    return complex(val) if val.ndim == 0 else val


def probabilities(psi: np.ndarray, meas: "Measurement") -> np.ndarray:
    """Outcome probabilities p_i = <P_i>, clamped to [0, 1]; shape ``(..., n)``."""
    if meas.dim != psi.shape[-1]:
        raise ValueError(f"dimension mismatch: measurement dim {meas.dim}, state dim {psi.shape[-1]}")
    p = np.einsum("...i,nij,...j->...n", psi.conj(), meas.effect_stack, psi).real
    return np.clip(p, 0.0, 1.0)


def projector_of(psi: np.ndarray) -> np.ndarray:
    """Rank-one projector |psi><psi|; shape ``(..., d, d)``."""
    return np.einsum("...i,...j->...ij", psi, psi.conj())


def xlogx(x: np.ndarray | float) -> np.ndarray | float:
    """x * ln(x) extended continuously by 0 at x = 0 (inputs clipped below at 0)."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0.0, x, 1.0)
    out = np.where(x > 0.0, safe * np.log(safe), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LindbladModel:
    """Effective Hamiltonian plus a finite ordered family of Lindblad operators.

    The Hamiltonian is the single effective one entering both the generator
    and the unravelings; any environment-induced level shift is assumed to be
    folded into it by the caller.
    """

    hamiltonian: np.ndarray
    lindblad_ops: tuple = ()

    def __post_init__(self):
        h = as_operator(self.hamiltonian, "hamiltonian")
        defect = hermiticity_defect(h)
        if defect > HERMITICITY_TOL:
            raise ModelValidationError(
                f"hamiltonian: Hermiticity defect {defect:.3e} (tol {HERMITICITY_TOL:.0e})"
            )
        ops = []
        for k, op in enumerate(self.lindblad_ops):
            a = as_operator(op, f"lindblad_ops[{k}]")
            if a.shape != h.shape:
                raise ModelValidationError(
                    f"lindblad_ops[{k}]: dimension {a.shape[0]} != hamiltonian dimension {h.shape[0]}"
                )
            ops.append(_readonly(a))
        object.__setattr__(self, "hamiltonian", _readonly(h))
        object.__setattr__(self, "lindblad_ops", tuple(ops))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def n_channels(self) -> int:
        return len(self.lindblad_ops)

    def lindblad_stack(self) -> np.ndarray:
        """All Lindblad operators as one ``(m, d, d)`` array (m may be 0)."""
        if not self.lindblad_ops:
            return np.zeros((0, self.dim, self.dim), dtype=complex)
        return np.stack(self.lindblad_ops)

    def total_jump_operator(self) -> np.ndarray:
        """B = sum_j L_j^dag L_j."""
        ls = self.lindblad_stack()
        return np.einsum("mki,mkj->ij", ls.conj(), ls)


@dataclass(frozen=True)
class Measurement:
    """A complete family of effects P_i = M_i^dag M_i, optionally with eigenvalues."""

    effects: tuple
    eigenvalues: Optional[tuple] = None

    def __post_init__(self):
        if len(self.effects) < 1:
            raise ModelValidationError("measurement.effects: at least one effect required")
        eff = []
        dim = None
        for i, e in enumerate(self.effects):
            a = as_operator(e, f"measurement.effects[{i}]")
            if dim is None:
                dim = a.shape[0]
            elif a.shape[0] != dim:
                raise ModelValidationError(
                    f"measurement.effects[{i}]: dimension {a.shape[0]} != {dim}"
                )
            defect = hermiticity_defect(a)
            if defect > POSITIVITY_TOL:
                raise ModelValidationError(
                    f"measurement.effects[{i}]: Hermiticity defect {defect:.3e}"
                )
            lo = float(np.linalg.eigvalsh(0.5 * (a + dagger(a))).min())
            if lo < -POSITIVITY_TOL:
                raise ModelValidationError(
                    f"measurement.effects[{i}]: smallest eigenvalue {lo:.3e} < -{POSITIVITY_TOL:.0e}"
                )
            eff.append(_readonly(a))
        total = np.sum(eff, axis=0)
        dev = float(np.max(np.abs(total - np.eye(dim))))
        if dev > COMPLETENESS_TOL:
            raise ModelValidationError(
                f"measurement.effects: sum deviates from identity by {dev:.3e} (max entry)"
            )
        if self.eigenvalues is not None:
            lam = tuple(float(x) for x in self.eigenvalues)
            if len(lam) != len(eff):
                raise ModelValidationError(
                    f"measurement.eigenvalues: length {len(lam)} != number of effects {len(eff)}"
                )
            object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "effects", tuple(eff))

    @property
    def dim(self) -> int:
        return self.effects[0].shape[0]

    @property
    def n(self) -> int:
        return len(self.effects)

    @property
    def effect_stack(self) -> np.ndarray:
        return np.stack(self.effects)

    def observable(self) -> np.ndarray:
        """A = sum_i lambda_i P_i (requires eigenvalues)."""
        if self.eigenvalues is None:
            raise ValueError("measurement has no eigenvalues attached")
        return np.einsum("n,nij->ij", np.asarray(self.eigenvalues, float), self.effect_stack)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 + k*dt for k = 0..steps (steps+1 sample points)."""

    t0: float = 0.0
    dt: float = 1e-3
    steps: int = 1

    def __post_init__(self):
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ModelValidationError(f"grid.dt: must be a positive finite step, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ModelValidationError(f"grid.steps: must be a positive integer, got {self.steps}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def n_points(self) -> int:
        return self.steps + 1

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * self.steps

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_points)

    def index_of(self, t: float) -> int:
        k = round((t - self.t0) / self.dt)
        if not (0 <= k <= self.steps) or abs(self.t0 + k * self.dt - t) > 1e-9:
            raise ValueError(f"time {t} is not a grid point")
        return int(k)
