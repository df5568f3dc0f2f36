import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixeddyn.baselines import exact_posterior, three_step_instance
from mixeddyn.hmm import forward_backward
from mixeddyn.lds import kalman_filter, rts_smooth
from mixeddyn.model import ModelParams, SequenceData
from mixeddyn.variational import (VariationalState, compute_log_q, compute_u, e_step, free_energy_bound,
                                  precision)

from oracles import random_model, random_sequence


class TestComputeU:
    def test_vertex(self):
        D = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        u = compute_u(D, np.eye(3)[[2, 0]])
        assert np.array_equal(u, D[:, [2, 0]].T)

    def test_symmetric_mixture(self):
        assert np.allclose(compute_u([[-1.0, 1.0]], [[0.5, 0.5]]), 0.0)

    def test_matches_elementwise_sum(self):
        rng = np.random.default_rng(0)
        D = rng.normal(size=(3, 4))
        g = rng.dirichlet(np.ones(4), size=5)
        expect = np.array([[sum(D[n, i] * g[t, i] for i in range(4)) for n in range(3)] for t in range(5)])
        assert np.allclose(compute_u(D, g), expect, atol=1e-14)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_convex_hull_scalar(self, seed):
        rng = np.random.default_rng(seed)
        D = rng.normal(size=(1, 4))
        u = compute_u(D, rng.dirichlet(np.ones(4), size=6))
        assert np.all(u >= D.min() - 1e-12) and np.all(u <= D.max() + 1e-12)


class TestComputeLogQ:
    def test_zero_column_gives_zero(self):
        rng = np.random.default_rng(1)
        p = random_model(rng, N=2, S=3)
        D = p.D.copy()
        D[:, 1] = 0.0
        lq = compute_log_q(p.replace(D=D), rng.normal(size=(5, 2)))
        assert np.all(lq[:, 1] == 0.0)

    def test_scalar_profile_peaks_at_delta(self):
        """With A = Q = 1 the soft evidence d (delta - d/2) peaks at d = delta."""
        delta = 0.37
        grid = np.linspace(-2, 2, 401)
        p = ModelParams(A=[[1.0]], C=[[1.0]], D=grid[None, :], Q=[[1.0]], R=[[1.0]],
                        Pi=np.full((401, 401), 1 / 401), pi0=np.full(401, 1 / 401))
        lq = compute_log_q(p, np.array([[0.0], [delta]]))
        assert grid[np.argmax(lq[1])] == pytest.approx(delta, abs=0.005)
        two = ModelParams(A=[[1.0]], C=[[1.0]], D=[[-1.0, 1.0]], Q=[[1.0]], R=[[1.0]],
                          Pi=np.full((2, 2), 0.5), pi0=[0.5, 0.5])
        lq2 = compute_log_q(two, np.array([[0.0], [delta]]))
        assert np.allclose(lq2[1], [-delta - 0.5, delta - 0.5])

    def test_direct_formula(self):
        rng = np.random.default_rng(2)
        p = random_model(rng, N=2, S=3)
        x = rng.normal(size=(4, 2))
        lq = compute_log_q(p, x)
        Qi = np.linalg.inv(p.Q)
        for t in range(4):
            prev = x[t - 1] if t else np.zeros(2)
            for i in range(3):
                d = p.D[:, i]
                assert lq[t, i] == pytest.approx(d @ Qi @ (x[t] - p.A @ prev - 0.5 * d), abs=1e-12)

    def test_ordering_favours_nearest_input(self):
        rng = np.random.default_rng(3)
        p = ModelParams(A=[[0.8]], C=[[1.0]], D=[[-1.0, 1.0]], Q=[[0.3]], R=[[1.0]],
                        Pi=np.full((2, 2), 0.5), pi0=[0.5, 0.5])
        x = rng.normal(size=(20, 1))
        lq = compute_log_q(p, x)
        delta = x[:, 0] - 0.8 * np.concatenate([[0.0], x[:-1, 0]])
        nearest = np.argmin(np.abs(delta[:, None] - p.D[0][None, :]), axis=1)
        assert np.array_equal(np.argmax(lq, axis=1), nearest)


def telescoped_bound(p, y, u, log_q):
    """Bound rebuilt from the Kalman evidence and the HMM normaliser.

    B = log p(Y | u) + log Z_q - sum <s> log q + sum (D<s> - u)' Q^-1 <r>
        - 1/2 u'Q^-1 u + u'Q^-1 D<s> - 1/2 sum_i <s_i> d_i'Q^-1 d_i
    with <r_t> = <x_t> - A<x_{t-1}> - u_t.
    """
    Qi = np.linalg.inv(p.Q)
    ll = kalman_filter(p, y, u).log_likelihood
    hp = forward_backward(p.Pi, p.pi0, log_q)
    m = rts_smooth(p, y, u).means
    prev = np.vstack([np.zeros((1, m.shape[1])), m[:-1]])
    r = m - prev @ p.A.T - u
    g = hp.gammas
    Dg = g @ p.D.T
    quad_d = np.einsum("ni,nm,mi->i", p.D, Qi, p.D)
    extra = 0.0
    for t in range(len(u)):
        extra += (Dg[t] - u[t]) @ Qi @ r[t] - 0.5 * u[t] @ Qi @ u[t] + u[t] @ Qi @ Dg[t] - 0.5 * g[t] @ quad_d
    return ll + hp.log_evidence - np.sum(g * log_q) + extra


class TestBound:
    @pytest.mark.parametrize("trial", range(10))
    def test_telescoped_identity(self, trial):
        rng = np.random.default_rng(300 + trial)
        p = random_model(rng, N=int(rng.integers(1, 3)), M=2, S=int(rng.integers(1, 4)))
        T = int(rng.integers(1, 8))
        y = random_sequence(rng, p, T)
        u = rng.normal(size=(T, p.state_dim))
        log_q = rng.normal(size=(T, p.num_states))
        b = free_energy_bound(p, y, rts_smooth(p, y, u), forward_backward(p.Pi, p.pi0, log_q))
        assert b == pytest.approx(telescoped_bound(p, y, u, log_q), abs=1e-9)

    def test_single_state_is_exact(self):
        rng = np.random.default_rng(4)
        p = random_model(rng, N=2, M=2, S=1)
        y = random_sequence(rng, p, 12)
        st_, stats = e_step(p, y)
        ll = kalman_filter(p, y, np.tile(p.D[:, 0], (12, 1))).log_likelihood
        assert stats.bound == pytest.approx(ll, abs=1e-8)
        assert st_.iterations == 1 and st_.converged

    def test_random_eta_below_evidence(self):
        rng = np.random.default_rng(5)
        p = random_model(rng, N=1, M=1, S=2)
        y = random_sequence(rng, p, 2)
        exact = exact_posterior(p, y).log_evidence
        for _ in range(20):
            u = rng.normal(scale=2, size=(2, 1))
            lq = rng.normal(scale=3, size=(2, 2))
            b = free_energy_bound(p, y, rts_smooth(p, y, u), forward_backward(p.Pi, p.pi0, lq))
            assert b <= exact + 1e-10

    @pytest.mark.parametrize("trial", range(10))
    def test_converged_bound_below_evidence(self, trial):
        rng = np.random.default_rng(400 + trial)
        p = random_model(rng, N=int(rng.integers(1, 3)), M=int(rng.integers(1, 3)), S=2)
        y = random_sequence(rng, p, 5)
        _, stats = e_step(p, y, tol=1e-8)
        assert stats.bound <= exact_posterior(p, y).log_evidence + 1e-8


class TestEStep:
    @pytest.mark.parametrize("trial", range(15))
    def test_monotone_and_fixed_point(self, trial):
        rng = np.random.default_rng(500 + trial)
        p = random_model(rng, N=int(rng.integers(1, 3)), M=2, S=int(rng.integers(1, 4)))
        y = random_sequence(rng, p, int(rng.integers(2, 11)))
        tol = 1e-6
        state, stats = e_step(p, y, tol=tol, max_iter=200)
        tr = np.array(state.bound_trace)
        assert np.all(np.diff(tr) >= -1e-9)
        assert stats.bound == tr[-1]
        again, _ = e_step(p, y, init=VariationalState(x_mean=state.x_mean), tol=tol, max_iter=1)
        assert abs(again.bound_trace[0] - tr[-1]) / (1 + abs(tr[-1])) < tol

    def test_u_in_convex_hull(self):
        rng = np.random.default_rng(6)
        p = random_model(rng, N=2, S=3)
        y = random_sequence(rng, p, 8)
        state, stats = e_step(p, y)
        assert np.allclose(state.u, stats.s_mean @ p.D.T)
        assert np.allclose(stats.s_mean.sum(axis=1), 1.0)

    def test_three_step_zero_init(self):
        p, y, _, _ = three_step_instance(k=1, R=0.5, eps=0)
        state, stats = e_step(p, y, init=VariationalState(log_q=np.zeros((3, 2))))
        assert list(np.argmax(stats.s_mean, axis=1)) == [0, 0, 0]
        assert state.converged

    def test_warm_start_and_inits(self):
        rng = np.random.default_rng(7)
        p = random_model(rng, S=3)
        y = random_sequence(rng, p, 6)
        for init in (VariationalState(u=rng.normal(size=(6, 2))),
                     VariationalState(log_q=rng.normal(size=(6, 3))),
                     VariationalState(x_mean=rng.normal(size=(6, 2)))):
            state, _ = e_step(p, y, init=init)
            assert np.all(np.diff(state.bound_trace) >= -1e-9)

    def test_max_iter_reports_non_convergence(self):
        rng = np.random.default_rng(8)
        p = random_model(rng, S=3)
        y = random_sequence(rng, p, 10)
        state, _ = e_step(p, y, tol=1e-15, max_iter=1)
        assert state.iterations == 1

    def test_bad_tol(self):
        rng = np.random.default_rng(9)
        p = random_model(rng)
        with pytest.raises(ValueError):
            e_step(p, random_sequence(rng, p, 3), tol=0)

    def test_tiny_q_regularised(self, caplog):
        Q = np.diag([1.0, 1e-13])
        with caplog.at_level("WARNING"):
            Qi = precision(Q)
        assert np.all(np.isfinite(Qi)) and "adding" in caplog.text

    def test_stats_psd(self):
        rng = np.random.default_rng(10)
        p = random_model(rng)
        y = random_sequence(rng, p, 6)
        _, stats = e_step(p, y)
        for t in range(6):
            c = stats.x_second_moment[t] - np.outer(stats.x_mean[t], stats.x_mean[t])
            assert np.min(np.linalg.eigvalsh(c)) > -1e-12
