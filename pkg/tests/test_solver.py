import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from sklearn.base import clone

from arrayimaging._validation import DivergenceError
from arrayimaging.experiments import l0_oracle
from arrayimaging.geometry import ImagingConfig, sample_antennas
from arrayimaging.operator import BosSystem, ScatteringOperator, build_bos_matrix
from arrayimaging.solver import (
    BasisPursuit,
    BasisPursuitDenoising,
    PdhgParams,
    dual_step_ball,
    dual_step_equality,
    one_more_iteration,
    prox_l1,
    soft_threshold,
    solve_bp,
    solve_bpdn,
    write_iterate_log,
)

from conftest import crandn
from oracles import ball_dual_step, golden_section_prox


class TestSoftThreshold:
    def test_below_threshold(self):
        assert soft_threshold(np.array([0.5 + 0j]), 1.0)[0] == 0

    def test_shrinks_modulus(self):
        assert soft_threshold(np.array([3 + 4j]), 1.0)[0] == pytest.approx(0.8 * (3 + 4j))

    def test_exact_threshold_is_zero(self):
        assert soft_threshold(np.array([1.0 + 0j]), 1.0)[0] == 0

    def test_zero_input(self):
        assert soft_threshold(np.zeros(3), 0.1).tolist() == [0, 0, 0]

    def test_forced_closed_form(self):
        phi = 0.7
        got = soft_threshold(np.array([2 * np.exp(1j * phi)]), 0.5)[0]
        assert got == pytest.approx(1.5 * np.exp(1j * phi), abs=1e-15)

    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            soft_threshold(np.ones(2), 0.0)


def test_prox_matches_golden_section(rng):
    for _ in range(20):
        z = crandn(rng, 4) * rng.uniform(0.1, 3)
        tau = rng.uniform(0.05, 2)
        ref = np.array([golden_section_prox(zi, tau) for zi in z])
        assert np.max(np.abs(prox_l1(z, tau) - ref)) <= 1e-8


_cvec = arrays(np.complex128, 6, elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))


@settings(max_examples=200, deadline=None)
@given(_cvec, _cvec, st.floats(1e-3, 10))
def test_prox_is_nonexpansive(z1, z2, tau):
    lhs = np.linalg.norm(prox_l1(z1, tau) - prox_l1(z2, tau))
    assert lhs <= np.linalg.norm(z1 - z2) * (1 + 1e-12) + 1e-12


class TestDualSteps:
    def test_equality(self):
        got = dual_step_equality(np.array([1j]), np.array([2.0]), np.array([1.0]), 0.5)
        assert got[0] == pytest.approx(0.5 + 1j)

    def test_equality_examples(self, rng):
        xi, Ax, y = crandn(rng, 3), crandn(rng, 3), crandn(rng, 3)
        assert np.array_equal(dual_step_equality(xi, y, y, 0.8), xi)
        assert np.allclose(dual_step_equality(np.zeros(3), Ax, y, 1.0), Ax - y)
        steps = [dual_step_equality(xi, Ax, y, s) - xi for s in (0.5, 1.0, 2.0)]
        assert np.allclose(steps[1], 2 * steps[0]) and np.allclose(steps[2], 2 * steps[1])

    def test_ball_matches_moreau_oracle(self, rng):
        for _ in range(20):
            xi, Ax, y = crandn(rng, 5), crandn(rng, 5), crandn(rng, 5)
            sigma, eta = rng.uniform(0.1, 2), rng.uniform(0, 3)
            ref = ball_dual_step(xi, Ax, y, sigma, eta)
            assert np.max(np.abs(dual_step_ball(xi, Ax, y, sigma, eta) - ref)) <= 1e-10

    def test_zero_radius_reduces_to_equality(self, rng):
        xi, Ax, y = crandn(rng, 4), crandn(rng, 4), crandn(rng, 4)
        assert np.allclose(dual_step_ball(xi, Ax, y, 0.7, 0.0), dual_step_equality(xi, Ax, y, 0.7), atol=1e-14)

    def test_continuous_at_ball_boundary(self):
        y = np.zeros(2, dtype=complex)
        sigma, eta = 1.0, 1.0
        inside = dual_step_ball(np.array([1 - 1e-12, 0]), np.zeros(2), y, sigma, eta)
        outside = dual_step_ball(np.array([1 + 1e-12, 0]), np.zeros(2), y, sigma, eta)
        assert np.linalg.norm(inside - outside) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            dual_step_ball(np.zeros(2), np.zeros(3), np.zeros(2), 1.0, 1.0)


def _instance(n=4, N=16, s=2, seed=1, mode="dense"):
    cfg = ImagingConfig.default(N)
    op = ScatteringOperator(cfg, sample_antennas(cfg, n, seed), mode=mode)
    rng = np.random.default_rng(seed)
    x = np.zeros(N, dtype=complex)
    x[rng.choice(N, s, replace=False)] = rng.uniform(1, 10, s) * np.exp(2j * np.pi * rng.uniform(size=s))
    return op, x, op.matvec(x)


class TestSolveBP:
    def test_zero_data(self, small_op):
        res = solve_bp(small_op, np.zeros(small_op.shape[0]))
        assert np.all(res.x_hat == 0) and res.converged

    def test_one_sparse_matches_l0_oracle(self):
        # unit-modulus Fourier system with two sample points: a 4 x 8 matrix
        b = np.random.default_rng(3).uniform(size=2)
        A = build_bos_matrix(BosSystem.fourier(8), b)
        x0 = np.zeros(8, dtype=complex)
        x0[5] = 2.5 * np.exp(0.4j)
        y = A @ x0
        support, coef = l0_oracle(A, y, 1)
        assert support == (5,)
        res = solve_bp(A, y, PdhgParams(max_iters=20000, residual_tol=1e-10))
        ref = np.zeros(8, dtype=complex)
        ref[list(support)] = coef
        assert np.linalg.norm(res.x_hat - ref) <= 1e-3

    def test_exact_recovery_small_scene(self):
        op, x, y = _instance(n=6, N=36, s=2, seed=4, mode="factorized")
        res = solve_bp(op, y, PdhgParams(max_iters=5000, residual_tol=1e-9))
        assert np.linalg.norm(res.x_hat - x) <= 1e-4 * np.linalg.norm(x)

    def test_dimension_mismatch(self, small_op):
        with pytest.raises(ValueError):
            solve_bp(small_op, np.zeros(small_op.shape[0] + 1))

    def test_uncertified_steps_refused(self, small_op):
        y = small_op.matvec(np.ones(small_op.N))
        with pytest.raises(ValueError, match="allow_uncertified_steps"):
            solve_bp(small_op, y, PdhgParams(sigma=1.0, tau=1.0))
        res = solve_bp(small_op, y, PdhgParams(sigma=1.0, tau=1.0, allow_uncertified_steps=True, max_iters=5))
        assert res.step_product > 1

    def test_reference_parameters(self, small_op):
        p = PdhgParams.reference()
        assert (p.theta, p.sigma, p.tau, p.rescale_by_sqrtN, p.max_iters) == (1.0, 1.0, 0.5, True, 300)
        y = small_op.matvec(np.ones(small_op.N))
        # the override must be explicit
        with pytest.raises(ValueError):
            solve_bp(small_op, y, p)
        res = solve_bp(small_op, y, PdhgParams.reference(allow_uncertified_steps=True))
        assert res.step_product == pytest.approx(res.step_product_linear * res.operator_norm / np.sqrt(small_op.N))

    def test_reference_steps_recover_full_scale_scene(self):
        # s=100, N=6400, n=30: a majority of draws reach 1e-3 within about 300
        # iterations; 360 allows 20% on "about"
        from arrayimaging.experiments import random_scene, recovery_success

        cfg = ImagingConfig.default(6400)
        scene = random_scene(6400, 100, rng=0)
        params = PdhgParams.reference(allow_uncertified_steps=True, max_iters=360)
        wins = 0
        for t in range(7):
            op = ScatteringOperator(cfg, sample_antennas(cfg, 30, np.random.default_rng([1, t])))
            wins += recovery_success(scene.x, solve_bp(op, op.matvec(scene.x), params).x_hat)
        assert wins >= 4

    def test_divergence_names_iteration(self, small_op):
        y = small_op.matvec(np.ones(small_op.N))
        params = PdhgParams(sigma=1e150, tau=1e150, allow_uncertified_steps=True, max_iters=50)
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore")
            with pytest.raises(DivergenceError) as info:
                solve_bp(small_op, y, params)
        assert info.value.iteration >= 1
        assert str(info.value.iteration) in str(info.value)

    def test_iterates_stay_bounded(self):
        op, _, y = _instance(n=5, N=36, s=3, seed=8)
        res = solve_bp(op, y, PdhgParams(max_iters=3000, log_iterates=True))
        A = op.matrix
        bound = 1e3 * np.linalg.norm(A.conj().T @ y) / np.linalg.norm(A, 2) ** 2
        # ||x||_2 <= ||x||_1, so bounding the logged objective bounds the iterates
        assert np.all(np.isfinite(res.iterate_log))
        assert res.iterate_log[:, 1].max() <= bound

    def test_fixed_point(self):
        op, _, y = _instance(n=6, N=36, s=2, seed=2)
        params = PdhgParams(max_iters=20000, residual_tol=1e-8)
        res = solve_bp(op, y, params)
        assert res.converged
        again = one_more_iteration(op, y, res, params)
        assert np.linalg.norm(again.x_hat - res.x_hat) <= 10 * params.residual_tol

    def test_fixed_iteration_count(self, small_op):
        y = small_op.matvec(np.ones(small_op.N))
        res = solve_bp(small_op, y, PdhgParams(max_iters=17, stop_early=False))
        assert res.iterations_run == 17


class TestSolveBPDN:
    def test_large_radius_gives_zero(self, small_op, rng):
        y = crandn(rng, small_op.shape[0])
        res = solve_bpdn(small_op, y, np.linalg.norm(y) * 1.01)
        assert np.linalg.norm(res.x_hat) <= 1e-8

    def test_zero_radius_agrees_with_bp(self):
        op, _, y = _instance(n=5, N=25, s=2, seed=6)
        params = PdhgParams(max_iters=20000, residual_tol=1e-9)
        bp = solve_bp(op, y, params)
        dn = solve_bpdn(op, y, 0.0, params)
        assert np.linalg.norm(bp.x_hat - dn.x_hat) <= 1e-4

    def test_feasible_at_tolerance(self):
        op, x, y = _instance(n=6, N=36, s=2, seed=3)
        eta = 0.05 * np.linalg.norm(y)
        res = solve_bpdn(op, y, eta, PdhgParams(max_iters=5000))
        assert res.final_feasibility <= eta + 1e-4 * np.linalg.norm(y)
        assert res.objective <= np.sum(np.abs(x)) * (1 + 1e-6)

    def test_negative_radius(self, small_op):
        with pytest.raises(ValueError):
            solve_bpdn(small_op, np.zeros(small_op.shape[0]), -1.0)


class TestEstimators:
    def test_params_round_trip(self):
        est = BasisPursuitDenoising(eta=0.3, max_iters=50)
        params = est.get_params()
        assert params["eta"] == 0.3 and params["max_iters"] == 50
        assert clone(est).get_params() == params
        est.set_params(eta=0.1)
        assert est.eta == 0.1

    def test_fit_predict(self):
        op, x, y = _instance(n=6, N=36, s=2, seed=4)
        est = BasisPursuit(max_iters=5000, residual_tol=1e-9).fit(op, y)
        assert est.converged_ and est.n_iter_ <= 5000
        assert np.linalg.norm(est.coef_ - x) <= 1e-4 * np.linalg.norm(x)
        assert np.linalg.norm(est.predict(op) - y) <= 1e-5 * np.linalg.norm(y)

    def test_predict_before_fit(self, small_op):
        with pytest.raises(AttributeError, match="fit"):
            BasisPursuit().predict(small_op)


def test_iterate_log_csv(tmp_path, small_op):
    y = small_op.matvec(np.ones(small_op.N))
    res = solve_bp(small_op, y, PdhgParams(max_iters=12, stop_early=False, log_iterates=True))
    path = tmp_path / "log.csv"
    write_iterate_log(path, res)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,objective,feasibility"
    assert len(lines) == 13
    assert float(lines[-1].split(",")[2]) == pytest.approx(res.final_feasibility)
    with pytest.raises(ValueError):
        write_iterate_log(path, solve_bp(small_op, y, PdhgParams(max_iters=2)))
