import numpy as np
import pytest
from scipy import integrate

from mixeddyn.baselines import exact_posterior
from mixeddyn.model import (LOG_2PI, DimensionMismatchError, ModelParams, NonPDCovarianceError,
                            NonStochasticMatrixError, SequenceData, joint_energy, sample, validate)

from oracles import random_model


def scalar(**kw):
    base = dict(A=[[1.0]], C=[[1.0]], D=[[0.0]], Q=[[1.0]], R=[[1.0]], Pi=[[1.0]], pi0=[1.0])
    base.update(kw)
    return ModelParams(**base)


class TestValidate:
    def test_minimal_model_ok(self):
        validate(scalar())

    def test_non_stochastic_column(self):
        p = random_model(np.random.default_rng(0), S=2)
        bad = p.replace(Pi=[[0.5, 0.5], [0.4, 0.5]])
        with pytest.raises(NonStochasticMatrixError) as e:
            validate(bad)
        assert e.value.field == "Pi"

    def test_negative_eigenvalue_q(self):
        with pytest.raises(NonPDCovarianceError) as e:
            validate(scalar(Q=[[-0.1]]))
        assert e.value.field == "Q"

    def test_asymmetric_r(self):
        p = random_model(np.random.default_rng(1), M=2)
        with pytest.raises(NonPDCovarianceError) as e:
            validate(p.replace(R=p.R + np.array([[0, 1e-3], [0, 0]])))
        assert e.value.field == "R"

    def test_dimension_mismatch_names_field(self):
        p = random_model(np.random.default_rng(2), N=2, S=2)
        with pytest.raises(DimensionMismatchError) as e:
            validate(p.replace(D=np.zeros((3, 2))))
        assert e.value.field == "D"

    def test_pi0_must_sum_to_one(self):
        with pytest.raises(NonStochasticMatrixError) as e:
            validate(scalar(pi0=[0.9]))
        assert e.value.field == "pi0"

    def test_singular_q_allowed_only_when_asked(self):
        p = scalar(Q=[[0.0]])
        with pytest.raises(NonPDCovarianceError):
            validate(p)
        validate(p, allow_singular_q=True)

    def test_zero_transitions_permitted(self):
        validate(scalar(Pi=[[1.0, 0.0], [0.0, 1.0]], D=[[0.0, 1.0]], pi0=[1.0, 0.0]))

    def test_params_are_read_only(self):
        p = scalar()
        with pytest.raises(ValueError):
            p.A[0, 0] = 2.0


class TestSample:
    def test_noiseless_recursion(self):
        rng = np.random.default_rng(3)
        A = 0.5 * rng.normal(size=(2, 2))
        c = np.array([1.0, -2.0])
        p = ModelParams(A=A, C=np.eye(2), D=c[:, None], Q=1e-12 * np.eye(2), R=1e-12 * np.eye(2),
                        Pi=[[1.0]], pi0=[1.0])
        y, lat = sample(p, 6, seed=0)
        expect = np.zeros(2)
        for t in range(6):
            expect = sum(np.linalg.matrix_power(A, k) @ c for k in range(t + 1))
            assert np.allclose(lat.continuous_path[t], expect, atol=1e-5)

    def test_deterministic_given_seed(self):
        p = random_model(np.random.default_rng(4))
        a, la = sample(p, 30, seed=11)
        b, lb = sample(p, 30, seed=11)
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(la.discrete_path, lb.discrete_path)
        c, _ = sample(p, 30, seed=12)
        assert not np.array_equal(a.observations, c.observations)

    def test_latent_relations(self):
        p = random_model(np.random.default_rng(5), S=3)
        y, lat = sample(p, 20, seed=1)
        x, u, s = lat.continuous_path, lat.inputs, lat.discrete_path
        assert np.allclose(x[0], u[0])
        for t in range(1, 20):
            assert np.allclose(x[t], p.A @ x[t - 1] + u[t])
        assert np.array_equal(y.true_states, s)

    def test_observation_noise_covariance_monte_carlo(self):
        p = random_model(np.random.default_rng(6), N=2, M=2)
        y, lat = sample(p, 100_000, seed=2)
        w = y.observations - lat.continuous_path @ p.C.T
        emp = np.cov(w.T)
        assert np.linalg.norm(emp - p.R) / np.linalg.norm(p.R) < 0.05

    def test_input_noise_covariance_monte_carlo(self):
        p = random_model(np.random.default_rng(7), N=2, S=2)
        _, lat = sample(p, 100_000, seed=3)
        r = lat.inputs - p.D[:, lat.discrete_path].T
        emp = np.cov(r.T)
        assert np.linalg.norm(emp - p.Q) / np.linalg.norm(p.Q) < 0.05

    def test_left_to_right_never_goes_back(self):
        Pi = np.array([[0.7, 0, 0], [0.3, 0.6, 0], [0, 0.4, 1.0]])
        p = ModelParams(A=[[1.0]], C=[[1.0]], D=[[0.0, 1.0, 2.0]], Q=[[1.0]], R=[[1.0]], Pi=Pi, pi0=[1, 0, 0])
        _, lat = sample(p, 200, seed=0)
        assert np.all(np.diff(lat.discrete_path) >= 0)


class TestEnergy:
    def test_trivial_value(self):
        y = SequenceData([[0.0]])
        assert joint_energy(scalar(), [[0.0]], [0], y) == pytest.approx(LOG_2PI, abs=1e-15)

    def test_increasing_residual_increases_energy(self):
        p = random_model(np.random.default_rng(8))
        y = SequenceData(np.zeros((3, 2)))
        x = np.zeros((3, 2))
        x[1] = p.A @ x[0] + p.D[:, 0]
        h = [joint_energy(p, x + np.array([[0, 0], [a, 0], [0, 0]]), [0, 0, 0], y) for a in (0.0, 0.5, 1.0, 2.0)]
        assert all(b > a for a, b in zip(h[1:], h[2:]))

    def test_zero_probability_transition_is_infinite(self):
        p = scalar(Pi=[[1.0, 0.0], [0.0, 1.0]], D=[[0.0, 1.0]], pi0=[0.5, 0.5])
        y = SequenceData([[0.0], [0.0]])
        assert joint_energy(p, [[0.0], [0.0]], [0, 1], y) == np.inf
        assert np.isfinite(joint_energy(p, [[0.0], [0.0]], [1, 1], y))

    def test_energy_difference_is_log_probability_ratio(self):
        rng = np.random.default_rng(9)
        p = random_model(rng, N=1, M=1, S=2)
        y = SequenceData(rng.normal(size=(3, 1)))
        x1, x2 = rng.normal(size=(3, 1)), rng.normal(size=(3, 1))

        def logp(x, s):
            # direct density product, written independently of joint_energy
            from scipy.stats import norm
            lp = np.log(p.pi0[s[0]]) + sum(np.log(p.Pi[s[t], s[t - 1]]) for t in range(1, 3))
            prev = 0.0
            for t in range(3):
                lp += norm(p.A[0, 0] * prev + p.D[0, s[t]], np.sqrt(p.Q[0, 0])).logpdf(x[t, 0])
                lp += norm(p.C[0, 0] * x[t, 0], np.sqrt(p.R[0, 0])).logpdf(y.observations[t, 0])
                prev = x[t, 0]
            return lp

        for s1, s2 in [([0, 0, 1], [1, 1, 0]), ([0, 1, 0], [0, 0, 0])]:
            dh = joint_energy(p, x1, s1, y) - joint_energy(p, x2, s2, y)
            assert dh == pytest.approx(logp(x2, s2) - logp(x1, s1), abs=1e-10)

    def test_quadrature_matches_evidence(self):
        """exp(-H) summed over paths and integrated over x equals p(Y)."""
        rng = np.random.default_rng(10)
        p = random_model(rng, N=1, M=1, S=2)
        y = SequenceData(rng.normal(size=(2, 1)))
        total = 0.0
        for s in [(0, 0), (0, 1), (1, 0), (1, 1)]:
            f = lambda x1, x0: np.exp(-joint_energy(p, [[x0], [x1]], s, y))
            val, _ = integrate.dblquad(f, -15, 15, -15, 15, epsabs=1e-12, epsrel=1e-10)
            total += val
        exact = exact_posterior(p, y).log_evidence
        assert np.log(total) == pytest.approx(exact, abs=1e-6)
