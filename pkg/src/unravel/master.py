"""The GKSL generator, its adjoint, and the deterministic master-equation side.

The generator is

    L[rho] = -i[H, rho] - 1/2 sum_i (Li^dag Li rho + rho Li^dag Li - 2 Li rho Li^dag)

and its adjoint (Heisenberg picture for observables)

    L^dag[A] = i[H, A] - 1/2 sum_i (Li^dag Li A + A Li^dag Li - 2 Li^dag A Li),

the unique superoperator with Tr[A^dag L[rho]] = Tr[L^dag[A^dag] rho].

Integration is classical fixed-step RK4 on the density matrix, on the same
grid the stochastic solvers use, so ensemble averages can be compared
point by point. A Liouvillian-exponential oracle lives in the test suite
as the independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Measurement,
    LindbladModel,
    TimeGrid,
    check_density_matrix,
    dagger,
    xlogx,
)
from .errors import StepTooLarge


def lindbladian(model: LindbladModel, rho: np.ndarray) -> np.ndarray:
    """Apply the generator to a density matrix. Hermitian and traceless output."""
    if rho.shape != model.hamiltonian.shape:
        raise ValueError(
            f"dimension mismatch: rho {rho.shape} vs model dim {model.dim}"
        )
    h = model.hamiltonian
    out = -1j * (h @ rho - rho @ h)
    for L in model.lindblad_ops:
        Ld = dagger(L)
        LdL = Ld @ L
        out -= 0.5 * (LdL @ rho + rho @ LdL - 2.0 * (L @ rho @ Ld))
    return out


def adjoint_lindbladian(model: LindbladModel, a: np.ndarray) -> np.ndarray:
    """Apply the adjoint generator to an observable."""
    if a.shape != model.hamiltonian.shape:
        raise ValueError(f"dimension mismatch: operator {a.shape} vs model dim {model.dim}")
    h = model.hamiltonian
    out = 1j * (h @ a - a @ h)
    for L in model.lindblad_ops:
        Ld = dagger(L)
        LdL = Ld @ L
        out -= 0.5 * (LdL @ a + a @ LdL - 2.0 * (Ld @ a @ L))
    return out


@dataclass(frozen=True)
class MasterSolution:
    """Density matrices on every grid point, states[k] at time grid.times()[k]."""

    grid: TimeGrid
    states: np.ndarray  # (steps+1, d, d) complex

    def effect_probabilities(self, meas: Measurement) -> np.ndarray:
        """q_i(t) = Tr[rho(t) P_i], clamped to [0, 1]; shape (n_points, n)."""
        q = np.einsum("tij,nji->tn", self.states, meas.effect_stack).real
        return np.clip(q, 0.0, 1.0)

    def populations(self) -> np.ndarray:
        return np.einsum("tii->ti", self.states).real

    def von_neumann_entropy_series(self) -> np.ndarray:
        return np.array([von_neumann_entropy(rho) for rho in self.states])

    def measurement_entropy_series(self, meas: Measurement) -> np.ndarray:
        q = self.effect_probabilities(meas)
        return -np.sum(xlogx(q), axis=-1)


def integrate_master(
    model: LindbladModel,
    rho0: np.ndarray,
    grid: TimeGrid,
    check_tol: float = 1e-6,
    validate: bool = True,
) -> MasterSolution:
    """Fixed-step RK4 for d(rho)/dt = L[rho].

    Every accepted step is re-Hermitized ((rho + rho^dag)/2) and trace
    renormalized; if the pre-correction trace or Hermiticity defect exceeds
    ``check_tol`` the step size is too large for the model's rates and
    ``StepTooLarge`` is raised. With ``validate`` the returned states are
    checked against the density-matrix invariants.
    """
    rho = np.array(rho0, dtype=complex)
    if validate:
        check_density_matrix(rho, what="rho0")
    dt = grid.dt
    out = np.empty((grid.n_points, model.dim, model.dim), dtype=complex)
    out[0] = rho
    for k in range(grid.steps):
        k1 = lindbladian(model, rho)
        k2 = lindbladian(model, rho + 0.5 * dt * k1)
        k3 = lindbladian(model, rho + 0.5 * dt * k2)
        k4 = lindbladian(model, rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        tr = complex(np.trace(rho))
        defect = float(np.max(np.abs(rho - dagger(rho))))
        if abs(tr - 1.0) > check_tol or defect > check_tol:
            raise StepTooLarge(
                f"master step {k}: trace error {abs(tr - 1.0):.3e}, Hermiticity defect "
                f"{defect:.3e} exceed {check_tol:.0e}; reduce dt for this model"
            )
        rho = 0.5 * (rho + dagger(rho))
        rho = rho / np.trace(rho).real
        out[k + 1] = rho
    if validate:
        for k in range(grid.n_points):
            check_density_matrix(out[k], eig_tol=check_tol, what=f"state at grid point {k}")
    out.setflags(write=False)
    return MasterSolution(grid=grid, states=out)


def von_neumann_entropy(rho: np.ndarray) -> float:
    """S = -Tr[rho ln rho] in nats, eigenvalues clamped to [0, 1]."""
    lam = np.clip(np.linalg.eigvalsh(0.5 * (rho + dagger(rho))), 0.0, 1.0)
    return float(-np.sum(xlogx(lam)))


def measurement_entropy(rho: np.ndarray, meas: Measurement) -> float:
    """S^A = -sum_i q_i ln q_i with q_i = Tr[rho P_i] clamped to [0, 1], in nats."""
    if meas.dim != rho.shape[0]:
        raise ValueError(f"dimension mismatch: measurement dim {meas.dim}, rho dim {rho.shape[0]}")
    q = np.clip(np.einsum("ij,nji->n", rho, meas.effect_stack).real, 0.0, 1.0)
    return float(-np.sum(xlogx(q)))
