"""Elementary expectations, probabilities, projectors, and type invariants."""

import numpy as np
import pytest

from unravel import (
    LindbladModel,
    Measurement,
    ModelValidationError,
    TimeGrid,
    expectation,
    probabilities,
    projector_of,
)

from conftest import (
    KET_E,
    KET_G,
    KET_PLUS,
    P_E,
    P_G,
    SIGMA_MINUS,
    SIGMA_Z,
    random_povm,
    random_projective_measurement,
    random_state,
)


class TestExpectation:
    def test_eigenstate(self):
        assert expectation(KET_E, SIGMA_Z) == pytest.approx(1.0)

    def test_symmetry_zero(self):
        assert expectation(KET_PLUS, SIGMA_Z) == pytest.approx(0.0, abs=1e-15)

    def test_sigma_minus_on_plus(self):
        # <psi| sigma_minus |psi> with psi = (|g>+|e>)/sqrt(2): evaluated by hand
        assert expectation(KET_PLUS, SIGMA_MINUS) == pytest.approx(0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            expectation(np.array([1.0, 0.0, 0.0], dtype=complex), SIGMA_Z)

    def test_hermitian_gives_real(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            psi = random_state(rng, 3)
            a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
            herm = 0.5 * (a + a.conj().T)
            assert abs(np.imag(expectation(psi, herm))) < 1e-12

    def test_linearity_and_conjugate_symmetry(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            psi = random_state(rng, 4)
            a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            lam = complex(rng.normal(), rng.normal())
            lhs = expectation(psi, a + lam * b)
            rhs = expectation(psi, a) + lam * expectation(psi, b)
            assert lhs == pytest.approx(rhs, abs=1e-12)
            assert expectation(psi, a.conj().T) == pytest.approx(
                np.conj(expectation(psi, a)), abs=1e-12
            )

    def test_batched_states(self):
        rng = np.random.default_rng(13)
        batch = np.stack([random_state(rng, 2) for _ in range(7)])
        vals = expectation(batch, SIGMA_Z)
        assert vals.shape == (7,)
        for k in range(7):
            assert vals[k] == pytest.approx(expectation(batch[k], SIGMA_Z))


class TestProbabilities:
    def test_basis_state(self, basis_meas):
        np.testing.assert_allclose(probabilities(KET_E, basis_meas), [0.0, 1.0], atol=1e-15)

    def test_equal_superposition(self, basis_meas):
        np.testing.assert_allclose(probabilities(KET_PLUS, basis_meas), [0.5, 0.5])

    def test_amplitude_squared(self, basis_meas):
        psi = np.array([np.sqrt(1 / 3), np.sqrt(2 / 3)], dtype=complex)
        np.testing.assert_allclose(probabilities(psi, basis_meas), [1 / 3, 2 / 3])

    def test_clamped_to_unit_interval(self, basis_meas):
        p = probabilities(KET_G, basis_meas)
        assert p.min() >= 0.0 and p.max() <= 1.0

    def test_sums_to_one_random_families(self):
        rng = np.random.default_rng(21)
        for dim, n in ((2, 2), (3, 3), (4, 6)):
            meas = random_povm(rng, dim, n)
            for _ in range(20):
                p = probabilities(random_state(rng, dim), meas)
                assert p.sum() == pytest.approx(1.0, abs=1e-8)
        for dim in (2, 3, 4):
            meas = random_projective_measurement(rng, dim)
            for _ in range(20):
                p = probabilities(random_state(rng, dim), meas)
                assert p.sum() == pytest.approx(1.0, abs=1e-8)


class TestProjector:
    def test_ground(self):
        np.testing.assert_allclose(projector_of(KET_G), np.diag([1.0, 0.0]))

    def test_plus(self):
        np.testing.assert_allclose(projector_of(KET_PLUS), np.full((2, 2), 0.5))

    def test_circular(self):
        psi = np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2.0)
        expected = np.array([[0.5, -0.5j], [0.5j, 0.5]])
        np.testing.assert_allclose(projector_of(psi), expected)

    def test_idempotent_trace_one(self):
        rng = np.random.default_rng(31)
        for _ in range(20):
            proj = projector_of(random_state(rng, 5))
            np.testing.assert_allclose(proj @ proj, proj, atol=1e-10)
            assert np.trace(proj).real == pytest.approx(1.0)

    def test_rank_one_spectrum(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            lam = np.linalg.eigvalsh(projector_of(random_state(rng, 4)))
            expected = np.array([0.0, 0.0, 0.0, 1.0])
            np.testing.assert_allclose(np.sort(lam), expected, atol=1e-8)


class TestTypes:
    def test_model_rejects_non_hermitian(self):
        with pytest.raises(ModelValidationError, match="Hermiticity"):
            LindbladModel(hamiltonian=np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_model_rejects_dim_mismatch(self):
        with pytest.raises(ModelValidationError, match="dimension"):
            LindbladModel(hamiltonian=np.zeros((2, 2)), lindblad_ops=(np.zeros((3, 3)),))

    def test_model_rejects_nan(self):
        h = np.zeros((2, 2))
        h[0, 0] = np.nan
        with pytest.raises(ModelValidationError, match="finite"):
            LindbladModel(hamiltonian=h)

    def test_model_arrays_readonly(self, damping_model):
        with pytest.raises(ValueError):
            damping_model.hamiltonian[0, 0] = 1.0

    def test_measurement_requires_completeness(self):
        with pytest.raises(ModelValidationError, match="identity"):
            Measurement(effects=(P_G, 0.9 * P_E))

    def test_measurement_requires_psd(self):
        # complete family, but the second effect has a negative eigenvalue
        e1 = np.diag([1.2, 0.5]).astype(complex)
        e2 = np.diag([-0.2, 0.5]).astype(complex)
        with pytest.raises(ModelValidationError, match="eigenvalue"):
            Measurement(effects=(e1, e2))

    def test_measurement_eigenvalue_length(self):
        with pytest.raises(ModelValidationError, match="eigenvalues"):
            Measurement(effects=(P_G, P_E), eigenvalues=(1.0,))

    def test_measurement_observable(self, basis_meas):
        np.testing.assert_allclose(basis_meas.observable(), SIGMA_Z)

    def test_grid_times(self):
        grid = TimeGrid(t0=0.5, dt=0.25, steps=4)
        np.testing.assert_allclose(grid.times(), [0.5, 0.75, 1.0, 1.25, 1.5])
        assert grid.t_end == pytest.approx(1.5)
        assert grid.index_of(1.0) == 2

    def test_grid_rejects_bad_step(self):
        with pytest.raises(ModelValidationError):
            TimeGrid(dt=0.0, steps=5)
        with pytest.raises(ModelValidationError):
            TimeGrid(dt=0.1, steps=0)
