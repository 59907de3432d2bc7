"""Shared fixtures: the two-level damping workhorse and randomized-model helpers.

Basis convention throughout the tests: index 0 is the ground state |g>,
index 1 the excited state |e>; sigma_minus = |g><e| and sigma_z has
sigma_z|e> = +|e>. All matrices are written out explicitly so expected
values can be checked by hand against them.
"""

from __future__ import annotations

import numpy as np
import pytest

from unravel import LindbladModel, Measurement, TimeGrid

SIGMA_MINUS = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)
SIGMA_PLUS = SIGMA_MINUS.conj().T
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Z = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)  # +1 on |e>
P_G = np.array([[1.0, 0.0], [0.0, 0.0]], dtype=complex)
P_E = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)
KET_G = np.array([1.0, 0.0], dtype=complex)
KET_E = np.array([0.0, 1.0], dtype=complex)
KET_PLUS = np.array([1.0, 1.0], dtype=complex) / np.sqrt(2.0)


@pytest.fixture
def damping_model() -> LindbladModel:
    """Spontaneous decay at unit rate: H = 0, L = sigma_minus."""
    return LindbladModel(hamiltonian=np.zeros((2, 2)), lindblad_ops=(SIGMA_MINUS,))


@pytest.fixture
def basis_meas() -> Measurement:
    return Measurement(effects=(P_G, P_E), eigenvalues=(-1.0, 1.0))


@pytest.fixture
def short_grid() -> TimeGrid:
    return TimeGrid(t0=0.0, dt=1e-3, steps=200)


def random_hermitian(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (a + a.conj().T)


def random_operator(rng: np.random.Generator, dim: int, opnorm: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return opnorm * a / np.linalg.norm(a, 2)


def random_model(
    rng: np.random.Generator, dim: int, n_channels: int, rate_scale: float = 1.0
) -> LindbladModel:
    ops = tuple(random_operator(rng, dim, rate_scale) for _ in range(n_channels))
    return LindbladModel(hamiltonian=random_hermitian(rng, dim), lindblad_ops=ops)


def random_state(rng: np.random.Generator, dim: int) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_projective_measurement(rng: np.random.Generator, dim: int) -> Measurement:
    """Eigenprojector family of a random Hermitian: dim rank-1 effects."""
    _, vecs = np.linalg.eigh(random_hermitian(rng, dim))
    effects = tuple(np.outer(vecs[:, i], vecs[:, i].conj()) for i in range(dim))
    return Measurement(effects=effects, eigenvalues=tuple(float(i) for i in range(dim)))


def random_povm(rng: np.random.Generator, dim: int, n: int) -> Measurement:
    """Soft (non-projective) complete effect family via S^-1/2 A_i S^-1/2."""
    parts = []
    for _ in range(n):
        g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        parts.append(g @ g.conj().T)
    total = np.sum(parts, axis=0)
    lam, vecs = np.linalg.eigh(total)
    inv_sqrt = vecs @ np.diag(lam ** -0.5) @ vecs.conj().T
    return Measurement(effects=tuple(inv_sqrt @ a @ inv_sqrt for a in parts))


def random_density_matrix(rng: np.random.Generator, dim: int) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def interior_state(
    rng: np.random.Generator, dim: int, meas: Measurement, floor: float = 1e-4
) -> np.ndarray:
    """A random state whose outcome probabilities all exceed ``floor``."""
    from unravel import probabilities

    for _ in range(200):
        psi = random_state(rng, dim)
        if probabilities(psi, meas).min() > floor:
            return psi
    raise RuntimeError("could not sample an interior state")


def liouvillian_matrix(model: LindbladModel) -> np.ndarray:
    """Independent superoperator-matrix oracle: vec(L[rho]) = A vec(rho).

    Column-stacking convention (vec of rho.T flattened C-style is avoided by
    using kron identities for row-major flattening): with rho flattened
    row-major, L[rho] = -i(H x I - I x H^T) rho + sum_j [ Lj x conj(Lj)
    - 1/2 (Lj^dag Lj x I + I x (Lj^dag Lj)^T) ] rho.
    """
    d = model.dim
    eye = np.eye(d)
    h = model.hamiltonian
    out = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for L in model.lindblad_ops:
        ldl = L.conj().T @ L
        out += np.kron(L, L.conj())
        out -= 0.5 * (np.kron(ldl, eye) + np.kron(eye, ldl.T))
    return out
