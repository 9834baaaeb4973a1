import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contractsos import informativity as inf
from contractsos import matan
from contractsos.errors import DimensionError, NoiseModelError, SamplingError
from contractsos.matan import PartitionedSym
from contractsos.polyalg import monomial_basis


def ps(A, n):
    return PartitionedSym(np.array(A, dtype=float), n)


def random_problem(seed, n=2, d=2, T=30, eps=0.1):
    rng = np.random.default_rng(seed)
    b = monomial_basis(n, d)
    theta = rng.normal(size=(len(b), n))
    X = rng.uniform(-1, 1, (T, n))
    samples, noise = inf.generate_dataset(theta, b, X, eps, seed=seed + 1)
    return theta, b, samples, noise


class TestNoiseModel:
    def test_energy_valid(self):
        m = inf.energy_noise_model(0.1, 1, 3)
        assert m.n == 1 and m.T == 3
        assert np.allclose(m.Pi.A, np.diag([0.03, -1, -1, -1]))

    def test_positive_noise_block(self):
        with pytest.raises(NoiseModelError, match="noise block not negative definite"):
            inf.validate_noise_model(ps(np.diag([1.0, 1.0]), 1))

    def test_negative_schur(self):
        with pytest.raises(NoiseModelError):
            inf.validate_noise_model(ps(np.diag([-0.5, -1.0]), 1))

    def test_short_horizon(self):
        with pytest.raises(NoiseModelError):
            inf.validate_noise_model(ps(np.diag([1.0, 1.0, -1.0]), 2))

    def test_raw_matrix_needs_split(self):
        with pytest.raises(ValueError):
            inf.validate_noise_model(np.eye(2))


class TestAssembly:
    def test_single_sample(self):
        Y, Phi = inf.assemble([inf.Sample([1.0], [2.0])], monomial_basis(1, 1, include_constant=False))
        assert Y.tolist() == [[2.0]] and Phi.tolist() == [[1.0]]

    def test_affine_basis(self):
        _, Phi = inf.assemble([inf.Sample([0.0], [1.0]), inf.Sample([1.0], [3.0])], monomial_basis(1, 1))
        assert Phi.tolist() == [[1.0, 1.0], [0.0, 1.0]]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            inf.assemble([inf.Sample([0.0, 1.0], [1.0])], monomial_basis(1, 1))

    def test_nonfinite_sample(self):
        with pytest.raises(ValueError):
            inf.Sample([np.nan], [0.0])

    def test_uav_persistent_excitation(self):
        from contractsos.contraction import CompactSet
        K = CompactSet(np.array([10.0, 10.0, 1.0, 0.1]), 1.0)
        X = K.sample(50, np.random.default_rng(0))
        Phi = monomial_basis(4, 2).eval_many(X).T
        assert Phi.shape == (15, 50) and np.linalg.matrix_rank(Phi) == 15


class TestN:
    def test_tiny_hand_multiplication(self):
        noise = inf.validate_noise_model(ps([[1, 0], [0, -1]], 1))
        N = inf.build_N(np.array([[2.0]]), np.array([[1.0]]), noise)
        # [[1, 2], [0, -1]] diag(1, -1) [[1, 0], [2, -1]]
        assert N.A.tolist() == [[-3.0, 2.0], [2.0, -1.0]]

    def test_tiny_estimate(self):
        theta, _ = inf.least_squares_estimate(ps([[-3, 2], [2, -1]], 1), monomial_basis(1, 1, False))
        assert theta.tolist() == [[2.0]]

    def test_zero_noise_degenerate(self):
        rng = np.random.default_rng(4)
        theta = rng.normal(size=(3, 2))
        Phi = rng.normal(size=(3, 6))
        Pi = np.zeros((8, 8))
        Pi[2:, 2:] = -np.eye(6)
        N = inf.build_N(theta.T @ Phi, Phi, inf.NoiseModel(ps(Pi, 2)))
        assert np.allclose(matan.qmi_form(theta, N), 0.0, atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_energy_blocks(self, seed):
        _, b, samples, noise = random_problem(seed)
        Y, Phi = inf.assemble(samples, b)
        N = inf.build_N(Y, Phi, noise)
        T = Y.shape[1]
        eps2T = noise.Pi.a11[0, 0]
        assert np.allclose(N.a22, -Phi @ Phi.T, rtol=1e-12, atol=1e-12)
        assert np.allclose(N.a12, Y @ Phi.T, rtol=1e-12, atol=1e-12)
        assert np.allclose(N.a11, eps2T * np.eye(2) - Y @ Y.T, rtol=1e-12, atol=1e-12)
        assert T == 30
        assert np.max(np.abs(N.A - N.A.T)) <= 1e-12 * np.linalg.norm(N.A)
        assert matan.lambda_max(N.a22) < 0

    def test_dimension_checks(self):
        noise = inf.energy_noise_model(0.1, 1, 2)
        with pytest.raises(DimensionError):
            inf.build_N(np.ones((1, 3)), np.ones((2, 3)), noise)
        with pytest.raises(DimensionError):
            inf.build_N(np.ones((1, 2)), np.ones((2, 3)), noise)


class TestEstimate:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_ols_identity(self, seed):
        _, b, samples, noise = random_problem(seed)
        bundle = inf.identify(samples, b, noise)
        ols = np.linalg.lstsq(bundle.Phi.T, bundle.Y.T, rcond=None)[0]
        assert np.allclose(bundle.theta_lse, ols, atol=1e-9)

    def test_zero_noise_recovery(self):
        theta, b, samples, noise = random_problem(7, eps=0.0)
        bundle = inf.identify(samples, b, noise)
        assert np.max(np.abs(bundle.theta_lse - theta)) < 1e-8
        z = np.array([0.2, -0.4])
        assert np.allclose(bundle.phi_lse(z), theta.T @ b(z), atol=1e-8)

    def test_error_decays_linearly(self):
        errs = []
        for eps in (0.1, 0.01, 0.001):
            theta, b, samples, noise = random_problem(11, eps=eps, T=80)
            errs.append(np.linalg.norm(inf.identify(samples, b, noise).theta_lse - theta))
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        assert all(5 < r < 20 for r in ratios)

    def test_rank_deficiency_warns(self):
        b = monomial_basis(1, 2)
        samples = [inf.Sample([0.5], [1.0]), inf.Sample([0.5], [1.0]), inf.Sample([-0.5], [0.0])]
        with pytest.warns(inf.RankDeficiencyWarning):
            bundle = inf.identify(samples, b, inf.energy_noise_model(0.1, 1, 3))
        assert bundle.rank_deficient and bundle.diagnostics["rank_phi"] == 2

    def test_basis_length_mismatch(self):
        with pytest.raises(DimensionError):
            inf.least_squares_estimate(ps([[-3, 2], [2, -1]], 1), monomial_basis(1, 2))


class TestMembership:
    N = ps([[-3, 2], [2, -1]], 1)

    def test_tiny_members(self):
        assert inf.consistent_membership(np.array([[1.0]]), self.N)
        assert inf.consistent_membership(np.array([[3.0]]), self.N)
        assert not inf.consistent_membership(np.array([[4.0]]), self.N)

    def test_center_is_member(self):
        for seed in range(10):
            _, b, samples, noise = random_problem(seed)
            bundle = inf.identify(samples, b, noise)
            F = matan.qmi_form(bundle.theta_lse, bundle.N)
            assert np.allclose(F, matan.schur_complement(bundle.N), atol=1e-8 * np.linalg.norm(bundle.N.A, 2))
            assert inf.consistent_membership(bundle.theta_lse, bundle.N)

    def test_generated_noise_in_model(self):
        for seed in range(20):
            theta, b, samples, noise = random_problem(seed, eps=0.3)
            Y, Phi = inf.assemble(samples, b)
            W = Y - theta.T @ Phi
            assert matan.qmi_membership(W.T, noise.Pi)
            assert inf.consistent_membership(theta, inf.build_N(Y, Phi, noise))

    def test_zero_noise_singleton(self):
        theta, b, samples, noise = random_problem(3, eps=0.0)
        N = inf.identify(samples, b, noise).N
        assert inf.consistent_membership(theta, N)
        assert not inf.consistent_membership(theta + 1e-3, N)

    def test_sampler(self):
        _, b, samples, noise = random_problem(5, eps=0.2)
        N = inf.identify(samples, b, noise).N
        draws = inf.sample_consistent_parameters(N, 50, seed=1)
        assert len(draws) == 50 and all(inf.consistent_membership(t, N) for t in draws)
        assert np.array_equal(draws[7], inf.sample_consistent_parameters(N, 50, seed=1)[7])
        spread = np.std([d[0, 0] for d in draws])
        assert spread > 0

    def test_sampler_gives_up(self):
        # empty consistent set: Schur complement negative
        N = ps([[-1.0, 0.0], [0.0, -1.0]], 1)
        with pytest.raises(SamplingError):
            inf.sample_consistent_parameters(N, 1, seed=0, max_rejections=100)

    def test_monotone_in_epsilon(self):
        rng = np.random.default_rng(2)
        b = monomial_basis(2, 1)
        theta = rng.normal(size=(3, 2))
        X = rng.uniform(-1, 1, (25, 2))
        samples, _ = inf.generate_dataset(theta, b, X, 0.05, seed=3)
        Y, Phi = inf.assemble(samples, b)
        N_small = inf.build_N(Y, Phi, inf.energy_noise_model(0.1, 2, 25))
        N_big = inf.build_N(Y, Phi, inf.energy_noise_model(0.2, 2, 25))
        for t in inf.sample_consistent_parameters(N_small, 100, seed=4):
            assert inf.consistent_membership(t, N_big)


class TestJson:
    def test_dataset_round_trip(self):
        theta, b, samples, _ = random_problem(0, n=1, d=2, T=5, eps=0.1)
        doc = inf.dataset_to_json(samples, {"dim": 1, "degree": 2}, 0.1)
        s2, b2, noise = inf.dataset_from_json(doc)
        assert b2 == b and noise.T == 5
        assert all(np.array_equal(p.y, q.y) for p, q in zip(samples, s2))

    def test_matrix_noise(self):
        noise = inf.noise_from_json({"type": "matrix", "matrix": [[1, 0], [0, -1]]}, 1, 1)
        assert noise.Pi.A.tolist() == [[1.0, 0.0], [0.0, -1.0]]

    def test_unknown_noise(self):
        with pytest.raises(ValueError):
            inf.noise_from_json({"type": "gaussian"}, 1, 1)
