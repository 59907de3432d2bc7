"""Probability drifts, second-moment corrections, entropy corrections, f."""

import math

import numpy as np
import pytest

from unravel import (
    BoundaryDivergence,
    LindbladModel,
    TimeGrid,
    entropy,
    entropy_correction,
    f_functional,
    f_with_bookkeeping,
    gp_trajectory,
    lindbladian,
    pdp_trajectory,
    probabilities,
    probability_drift_wiener,
    probability_jump_coefficients,
    projector_of,
    second_moment_drift,
    trajectory_entropy_series,
)

from conftest import (
    KET_E,
    KET_G,
    KET_PLUS,
    interior_state,
    random_model,
    random_povm,
    random_projective_measurement,
    random_state,
)


class TestEntropy:
    def test_deterministic(self):
        assert entropy([1.0, 0.0]) == 0.0

    def test_uniform(self):
        assert entropy([0.5, 0.5]) == pytest.approx(math.log(2.0))

    def test_third(self):
        assert entropy([1 / 3, 2 / 3]) == pytest.approx(0.6365141682948128)

    def test_range(self):
        rng = np.random.default_rng(61)
        for _ in range(50):
            p = rng.dirichlet(np.ones(4))
            s = entropy(p)
            assert 0.0 <= s <= math.log(4.0) + 1e-12

    def test_rejects_malformed(self):
        with pytest.raises(ValueError, match="malformed"):
            entropy([0.7, 0.7])
        with pytest.raises(ValueError, match="malformed"):
            entropy([1.4, -0.4])


class TestProbabilityDriftWiener:
    def test_excited_drift(self, damping_model, basis_meas):
        drift, _ = probability_drift_wiener(damping_model, KET_E, basis_meas)
        np.testing.assert_allclose(drift, [1.0, -1.0], atol=1e-14)

    def test_dark_state_all_zero(self, damping_model, basis_meas):
        drift, diff = probability_drift_wiener(damping_model, KET_G, basis_meas)
        np.testing.assert_allclose(drift, np.zeros(2), atol=1e-14)
        np.testing.assert_allclose(diff, np.zeros((2, 1)), atol=1e-14)

    def test_plus_state_diffusion(self, damping_model, basis_meas):
        # <P_g(L - <L>)> = 1/4 and <P_e(L - <L>)> = -1/4, before the 1/sqrt(2)
        _, diff = probability_drift_wiener(damping_model, KET_PLUS, basis_meas)
        np.testing.assert_allclose(
            diff, np.array([[0.25], [-0.25]]) / math.sqrt(2.0), atol=1e-14
        )

    def test_drift_matches_generator_duality(self, basis_meas):
        # drift_i equals d/dt Tr[rho P_i] with rho = |psi><psi|
        rng = np.random.default_rng(62)
        for _ in range(30):
            model = random_model(rng, 2, 2)
            psi = random_state(rng, 2)
            drift, _ = probability_drift_wiener(model, psi, basis_meas)
            rho_dot = lindbladian(model, projector_of(psi))
            for i, eff in enumerate(basis_meas.effects):
                assert drift[i] == pytest.approx(
                    np.trace(rho_dot @ eff).real, abs=1e-10
                )

    def test_drift_rows_sum_to_zero(self):
        rng = np.random.default_rng(63)
        for _ in range(20):
            model = random_model(rng, 3, 2)
            meas = random_projective_measurement(rng, 3)
            drift, _ = probability_drift_wiener(model, random_state(rng, 3), meas)
            assert abs(drift.sum()) < 1e-10


class TestJumpCoefficients:
    def test_plus_state(self, damping_model, basis_meas):
        coef = probability_jump_coefficients(damping_model, KET_PLUS, basis_meas)
        np.testing.assert_allclose(coef, [[0.5], [-0.5]], atol=1e-14)

    def test_excited(self, damping_model, basis_meas):
        coef = probability_jump_coefficients(damping_model, KET_E, basis_meas)
        np.testing.assert_allclose(coef, [[1.0], [-1.0]], atol=1e-14)

    def test_columns_sum_to_zero(self):
        rng = np.random.default_rng(64)
        for _ in range(30):
            model = random_model(rng, 3, 2)
            meas = random_povm(rng, 3, 3)
            coef = probability_jump_coefficients(model, random_state(rng, 3), meas)
            np.testing.assert_allclose(coef.sum(axis=0), np.zeros(2), atol=1e-12)

    def test_dark_channel_convention(self, damping_model, basis_meas):
        coef = probability_jump_coefficients(damping_model, KET_G, basis_meas)
        np.testing.assert_allclose(coef, np.zeros((2, 1)))


class TestSecondMomentDrift:
    def test_plus_state_wiener(self, damping_model, basis_meas):
        smd = second_moment_drift(damping_model, KET_PLUS, basis_meas, "wiener")
        assert smd.ito_part[0, 0] == pytest.approx(0.125, abs=1e-14)

    def test_plus_state_poisson(self, damping_model, basis_meas):
        smd = second_moment_drift(damping_model, KET_PLUS, basis_meas, "poisson")
        assert smd.ito_part[0, 0] == pytest.approx(0.125, abs=1e-14)

    def test_dark_state_zero(self, damping_model, basis_meas):
        for tag in ("wiener", "poisson"):
            smd = second_moment_drift(damping_model, KET_G, basis_meas, tag)
            np.testing.assert_allclose(smd.ito_part, np.zeros((2, 2)), atol=1e-14)
            np.testing.assert_allclose(smd.lindblad_part, np.zeros((2, 2)), atol=1e-14)

    def test_lindblad_part_shared(self, damping_model, basis_meas):
        w = second_moment_drift(damping_model, KET_PLUS, basis_meas, "wiener")
        p = second_moment_drift(damping_model, KET_PLUS, basis_meas, "poisson")
        np.testing.assert_allclose(w.lindblad_part, p.lindblad_part)
        drift, _ = probability_drift_wiener(damping_model, KET_PLUS, basis_meas)
        probs = probabilities(KET_PLUS, basis_meas)
        np.testing.assert_allclose(
            w.lindblad_part, np.outer(drift, probs) + np.outer(probs, drift), atol=1e-14
        )

    def test_symmetry_and_poisson_psd(self):
        rng = np.random.default_rng(65)
        for _ in range(40):
            dim = int(rng.integers(2, 5))
            model = random_model(rng, dim, int(rng.integers(1, 4)))
            meas = random_povm(rng, dim, dim)
            psi = random_state(rng, dim)
            for tag in ("wiener", "poisson"):
                smd = second_moment_drift(model, psi, meas, tag)
                np.testing.assert_allclose(smd.ito_part, smd.ito_part.T, atol=1e-10)
                np.testing.assert_allclose(
                    smd.lindblad_part, smd.lindblad_part.T, atol=1e-10
                )
            gram = second_moment_drift(model, psi, meas, "poisson").ito_part
            assert np.linalg.eigvalsh(gram).min() >= -1e-10

    def test_rejects_bad_tag(self, damping_model, basis_meas):
        with pytest.raises(ValueError, match="tag"):
            second_moment_drift(damping_model, KET_PLUS, basis_meas, "stratonovich")


class TestEntropyCorrection:
    def test_plus_state_wiener(self, damping_model, basis_meas):
        corr = entropy_correction(damping_model, KET_PLUS, basis_meas, "wiener")
        assert corr.value == pytest.approx(-0.25, abs=1e-12)

    def test_plus_state_poisson(self, damping_model, basis_meas):
        corr = entropy_correction(damping_model, KET_PLUS, basis_meas, "poisson")
        assert corr.value == pytest.approx(-0.5 * math.log(2.0), abs=1e-12)

    def test_dark_state_zero(self, damping_model, basis_meas):
        for tag in ("wiener", "poisson"):
            assert entropy_correction(damping_model, KET_G, basis_meas, tag).value == 0.0

    def test_boundary_divergence_poisson(self, damping_model, basis_meas):
        # p_g = 0 while <Ldag P_g L> = 1: genuinely divergent on the jump side
        with pytest.raises(BoundaryDivergence):
            entropy_correction(damping_model, KET_E, basis_meas, "poisson")

    def test_wiener_finite_at_boundary(self, damping_model, basis_meas):
        # p_i = 0 forces P_i|psi> = 0, so the diffusive numerator vanishes too
        # (Cauchy-Schwarz); the diffusive correction never diverges exactly
        corr = entropy_correction(damping_model, KET_E, basis_meas, "wiener")
        assert corr.value == 0.0

    def test_wiener_nonpositive_randomized(self):
        rng = np.random.default_rng(66)
        for _ in range(200):
            dim = int(rng.integers(2, 5))
            model = random_model(rng, dim, int(rng.integers(1, 4)))
            meas = random_povm(rng, dim, dim)
            psi = interior_state(rng, dim, meas)
            corr = entropy_correction(model, psi, meas, "wiener")
            assert corr.value <= 1e-12


class TestFFunctional:
    def test_plus_state(self, damping_model, basis_meas):
        assert f_functional(damping_model, KET_PLUS, basis_meas) == pytest.approx(
            0.5 * math.log(2.0), abs=1e-12
        )

    def test_all_channels_dark(self, damping_model, basis_meas):
        assert f_functional(damping_model, KET_G, basis_meas) == 0.0

    def test_no_channels(self, basis_meas):
        model = LindbladModel(hamiltonian=np.zeros((2, 2)))
        assert f_functional(model, KET_PLUS, basis_meas) == 0.0

    def test_boundary_divergence(self, damping_model, basis_meas):
        with pytest.raises(BoundaryDivergence):
            f_functional(damping_model, KET_E, basis_meas)

    def test_nonnegative_and_bookkeeping_randomized(self):
        rng = np.random.default_rng(67)
        for _ in range(300):
            dim = int(rng.integers(2, 5))
            model = random_model(rng, dim, int(rng.integers(1, 4)))
            meas = random_povm(rng, dim, dim)
            psi = interior_state(rng, dim, meas)
            f, ex = f_with_bookkeeping(model, psi, meas)
            assert f >= -1e-12
            assert abs(ex - 1.0) < 1e-10

    def test_poisson_correction_is_minus_f(self, damping_model, basis_meas):
        f = f_functional(damping_model, KET_PLUS, basis_meas)
        corr = entropy_correction(damping_model, KET_PLUS, basis_meas, "poisson")
        assert corr.value == pytest.approx(-f)


class TestTrajectorySeries:
    def test_pdp_damping_identically_zero(self, damping_model, basis_meas):
        grid = TimeGrid(dt=1e-3, steps=1000)
        rec = pdp_trajectory(damping_model, KET_E, grid, 2)
        s = trajectory_entropy_series(rec, basis_meas)
        np.testing.assert_array_equal(s, np.zeros(grid.n_points))

    def test_constant_superposition(self, basis_meas):
        model = LindbladModel(hamiltonian=np.zeros((2, 2)))
        grid = TimeGrid(dt=1e-3, steps=200)
        rec = gp_trajectory(model, KET_PLUS, grid, 1)
        s = trajectory_entropy_series(rec, basis_meas)
        np.testing.assert_allclose(s, math.log(2.0), atol=1e-12)

    def test_matches_recomputation(self, damping_model, basis_meas):
        grid = TimeGrid(dt=1e-3, steps=300)
        rec = gp_trajectory(damping_model, KET_E, grid, 9)
        s = trajectory_entropy_series(rec, basis_meas)
        assert s.min() >= 0.0 and s.max() <= math.log(2.0) + 1e-12
        for k in (0, 100, 300):
            pe = abs(rec.states[k][1]) ** 2
            expected = entropy([1.0 - pe, pe]) if 0.0 < pe < 1.0 else 0.0
            assert s[k] == pytest.approx(expected, abs=1e-9)
