"""CGLS against dense solves, stop reasons, pseudo-inverse, stabilizer."""

import json

import numpy as np
import pytest

from reconstab.errors import (ParameterError, RankDeficiencyError, ShapeError)
from reconstab.linops import (ConvolutionOperator, DenseOperator,
                              GradientOperator, IdentityOperator, Shape,
                              StencilKernel, build_gaussian_kernel)
from reconstab.reconstruct import (StabilizerSpec, StopReason, TikhonovConfig,
                                   cgls, compose, constant_reconstructor,
                                   pseudo_inverse, stabilizer,
                                   stacked_min_singular_value, tikhonov)


def blur(side, radius=2, sigma=1.3):
    return ConvolutionOperator(Shape(side, side),
                               build_gaussian_kernel(radius, sigma))


def dense_tikhonov_solution(op, reg, lam, y):
    a = op.materialize()
    l = reg.materialize() if reg is not None else np.eye(op.cols)
    return np.linalg.solve(a.T @ a + lam * (l.T @ l), a.T @ y)


def test_cgls_matches_dense_solve():
    rng = np.random.default_rng(0)
    op = blur(8)
    y = rng.standard_normal(64)
    for reg in (None, GradientOperator(8), IdentityOperator(64)):
        cfg = TikhonovConfig(lam=1e-2, regularizer=reg, tol_f=0.0,
                             tol_x=1e-18, max_iters=2000)
        x, trace = cgls(op, reg, 1e-2, y, cfg)
        x_ref = dense_tikhonov_solution(op, reg, 1e-2, y)
        assert np.max(np.abs(x - x_ref)) < 1e-8
        assert trace.stop_reason in (StopReason.RESIDUAL_TOL,
                                     StopReason.STEP_TOL)


def test_cgls_diagonal_closed_form():
    # (a_i^2 + lam) x_i = a_i y_i for A = diag(1, 0.01), L = I, lam = 1e-2
    op = DenseOperator(np.diag([1.0, 0.01]))
    y = np.array([1.0, 0.01])
    cfg = TikhonovConfig(lam=1e-2, regularizer=None, tol_f=0.0,
                         tol_x=1e-18, max_iters=50)
    x, _ = cgls(op, None, 1e-2, y, cfg)
    assert abs(x[0] - 1.0 / 1.01) < 1e-12
    assert abs(x[1] - 1e-4 / 0.0101) < 1e-12


def test_cgls_residual_monotone():
    rng = np.random.default_rng(1)
    op = blur(16)
    reg = GradientOperator(16)
    cfg = TikhonovConfig(lam=1e-2, regularizer=reg, tol_f=0.0, tol_x=0.0,
                         max_iters=150)
    for _ in range(3):
        y = rng.standard_normal(256)
        _, trace = cgls(op, reg, 1e-2, y, cfg)
        r = np.asarray(trace.residual_norms)
        assert r.shape[0] == len(trace.iterates)
        assert np.all(np.diff(r) <= 1e-12)
        assert len(trace.normal_eq_residuals) == len(trace.iterates)


def test_cgls_stop_reasons():
    rng = np.random.default_rng(2)
    op = blur(8)
    y = rng.standard_normal(64)
    _, t1 = cgls(op, None, 1e-2, y,
                 TikhonovConfig(lam=1e-2, tol_f=1e6, tol_x=0.0, max_iters=50))
    assert t1.stop_reason == StopReason.RESIDUAL_TOL
    assert len(t1.iterates) == 1
    _, t2 = cgls(op, None, 1e-2, y,
                 TikhonovConfig(lam=1e-2, tol_f=0.0, tol_x=1e6, max_iters=50))
    assert t2.stop_reason == StopReason.STEP_TOL
    _, t3 = cgls(op, None, 1e-2, y,
                 TikhonovConfig(lam=1e-2, tol_f=0.0, tol_x=0.0, max_iters=5))
    assert t3.stop_reason == StopReason.MAX_ITERS
    assert len(t3.iterates) == 5


def test_cgls_tight_stop_is_optimal():
    # at tolerance stops with tight tol_x the normal-equations residual is
    # small relative to |A^T y|
    rng = np.random.default_rng(3)
    op = blur(8)
    reg = GradientOperator(8)
    y = rng.standard_normal(64)
    cfg = TikhonovConfig(lam=1e-2, regularizer=reg, tol_f=0.0, tol_x=1e-18,
                         max_iters=3000)
    _, trace = cgls(op, reg, 1e-2, y, cfg)
    assert trace.stop_reason == StopReason.STEP_TOL
    assert trace.normal_eq_residuals[-1] <= 1e-5 * np.linalg.norm(
        op.apply_adjoint(y))


def test_cgls_trace_csv(tmp_path):
    rng = np.random.default_rng(4)
    op = blur(8)
    y = rng.standard_normal(64)
    cfg = TikhonovConfig(lam=1e-2, tol_f=0.0, tol_x=0.0, max_iters=12)
    _, trace = cgls(op, None, 1e-2, y, cfg)
    path = tmp_path / "trace.csv"
    trace.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("iteration,")
    assert len(lines) == 13
    first = lines[1].split(",")
    assert float(first[1]) == trace.residual_norms[0]


def test_tikhonov_shrinkage():
    rng = np.random.default_rng(5)
    op = blur(8)
    y = rng.standard_normal(64)
    norms = []
    for lam in (1e-2, 1.0, 1e2, 1e4, 1e6):
        cfg = TikhonovConfig(lam=lam, regularizer=None, tol_f=0.0,
                             tol_x=1e-18, max_iters=2000)
        x = tikhonov(op, cfg).reconstruct(y)
        norms.append(np.linalg.norm(x))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
    assert norms[-1] <= 1e-4 * np.linalg.norm(y)


def test_stabilizer_truncates_cgls():
    rng = np.random.default_rng(6)
    op = blur(8)
    reg = GradientOperator(8)
    tik_cfg = TikhonovConfig(lam=1e-2, regularizer=reg)
    y = rng.standard_normal(64)
    for k in (1, 3, 7):
        phi = stabilizer(op, StabilizerSpec(k=k, tikhonov=tik_cfg))
        run_cfg = TikhonovConfig(lam=1e-2, regularizer=reg, tol_f=0.0,
                                 tol_x=0.0, max_iters=k)
        x_ref, trace = cgls(op, reg, 1e-2, y, run_cfg)
        assert len(trace.iterates) == k
        assert np.array_equal(phi.reconstruct(y), x_ref)


def test_stabilizer_large_k_reaches_solution():
    # once CGLS has converged extra iterations must not wander off
    rng = np.random.default_rng(7)
    a = rng.standard_normal((16, 16))
    op = DenseOperator(a)
    y = rng.standard_normal(16)
    phi = stabilizer(op, StabilizerSpec(
        k=200, tikhonov=TikhonovConfig(lam=1e-2, regularizer=None)))
    x_ref = dense_tikhonov_solution(op, None, 1e-2, y)
    assert np.max(np.abs(phi.reconstruct(y) - x_ref)) < 1e-10


def test_pseudo_inverse_circulant_exact():
    rng = np.random.default_rng(8)
    op = blur(16)
    psi = pseudo_inverse(op)
    for _ in range(5):
        x = rng.standard_normal(256)
        assert np.linalg.norm(psi.reconstruct(op.apply(x)) - x) < 1e-8


def test_pseudo_inverse_dense_path():
    rng = np.random.default_rng(9)
    a = rng.standard_normal((12, 8))
    op = DenseOperator(a)
    psi = pseudo_inverse(op)
    y = rng.standard_normal(12)
    x_ref, *_ = np.linalg.lstsq(a, y, rcond=None)
    assert np.max(np.abs(psi.reconstruct(y) - x_ref)) < 1e-10


def test_pseudo_inverse_rank_deficiency():
    # 1-d second difference has zero Fourier modes along one axis
    stencil = StencilKernel(radius=1,
                            weights=np.array([[0.0, 0.0, 0.0],
                                              [1.0, -2.0, 1.0],
                                              [0.0, 0.0, 0.0]]))
    op = ConvolutionOperator(Shape(8, 8), stencil)
    with pytest.raises(RankDeficiencyError):
        pseudo_inverse(op)
    psi = pseudo_inverse(op, truncation_threshold=1e-8)
    y = np.zeros(64)
    assert np.linalg.norm(psi.reconstruct(y)) == 0.0
    with pytest.raises(ParameterError):
        pseudo_inverse(op, truncation_threshold=-1.0)


def test_compose_and_constant():
    rng = np.random.default_rng(10)
    op = blur(8)
    tik_cfg = TikhonovConfig(lam=1e-2, regularizer=None)
    phi = stabilizer(op, StabilizerSpec(k=3, tikhonov=tik_cfg))
    gamma = pseudo_inverse(IdentityOperator(64))
    psi = compose(gamma, phi)
    y = rng.standard_normal(64)
    assert np.array_equal(psi.reconstruct(y),
                          gamma.reconstruct(phi.reconstruct(y)))
    samples = [rng.standard_normal(5) for _ in range(4)]
    const = constant_reconstructor(samples, input_dim=64)
    assert np.array_equal(const.reconstruct(y),
                          np.mean(np.stack(samples), axis=0))
    small = constant_reconstructor(samples)
    with pytest.raises(ShapeError):
        compose(small, phi)            # 64 -> 5 mismatch against gamma dims


def test_stacked_min_singular_value_positive():
    op = blur(8)
    assert stacked_min_singular_value(op, GradientOperator(8)) > 1e-12
    assert stacked_min_singular_value(op, None) > 1e-12


def test_config_validation_and_io(tmp_path):
    with pytest.raises(ParameterError):
        TikhonovConfig(lam=-1.0)
    with pytest.raises(ParameterError):
        TikhonovConfig(tol_f=-1e-6)
    with pytest.raises(ParameterError):
        TikhonovConfig(max_iters=0)
    with pytest.raises(ParameterError):
        StabilizerSpec(k=0)
    op = blur(8)
    psi = tikhonov(op, TikhonovConfig(lam=1e-2))
    path = tmp_path / "psi.json"
    psi.save_config(path)
    cfg = json.loads(path.read_text())
    assert cfg["kind"] == "tikhonov"
    assert cfg["lambda"] == 1e-2


def test_reconstruct_shape_check():
    op = blur(8)
    psi = tikhonov(op, TikhonovConfig(lam=1e-2))
    with pytest.raises(ShapeError):
        psi.reconstruct(np.zeros(10))
