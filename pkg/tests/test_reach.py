"""Controlled flow, Gramian quadrature, control synthesis, and the
certificate pipeline."""

from fractions import Fraction

import numpy as np
import pytest
from scipy.linalg import expm

from conecert.closure import choose_basis, compute_C
from conecert.models import ModelSpec, get_builtin, langevin
from conecert.polyfield import Polynomial, PolyVectorField
from conecert.reach import (
    CertifyOptions,
    ControlPath,
    FlowDivergenceError,
    SynthesisError,
    _jst_factors,
    _simpson_weights,
    certify,
    gramian,
    gramian_threshold,
    integrate_flow,
    k_rank,
    synthesize_leg,
)

F = Fraction


def shear_model():
    """drift (0, x) with unit noise along e1: everything closed form."""
    return ModelSpec(
        name="shear",
        d=2,
        drift=PolyVectorField(2, (Polynomial.zero(2), Polynomial.variable(2, 0))),
        noise=((F(1), F(0)),),
    )


def linear_langevin():
    """gamma=1, F=0: drift (-x, x), linear, J(t) = expm(t A)."""
    return langevin(1, 1, [[1]], None)


def elliptic_model():
    return ModelSpec(
        name="bm2",
        d=2,
        drift=PolyVectorField.zero(2),
        noise=((F(1), F(0)), (F(0), F(1))),
    )


# -- ControlPath ------------------------------------------------------


def test_control_path_validation():
    with pytest.raises(ValueError):
        ControlPath(1.0, np.array([0.0, 0.5]), np.zeros((1, 1)))  # end != horizon
    with pytest.raises(ValueError):
        ControlPath(1.0, np.array([0.0, 0.5, 0.5, 1.0]), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        ControlPath(1.0, np.array([0.0, 1.0]), np.array([[np.inf]]))


def test_control_path_concat_and_uniform():
    a = ControlPath.uniform(1.0, [[1.0], [2.0]])
    b = ControlPath.constant(0.5, [3.0])
    c = a.concat(b)
    assert c.horizon == pytest.approx(1.5)
    assert np.allclose(c.breakpoints, [0.0, 0.5, 1.0, 1.5])
    assert np.allclose(c.values, [[1.0], [2.0], [3.0]])
    assert ControlPath.zero(2.0, 3).values.shape == (1, 3)


# -- flow oracles -----------------------------------------------------


def test_flow_jacobian_shear_oracle():
    # linear drift (0, x): J(s) = [[1, 0], [s, 1]] exactly
    m = shear_model()
    flow = integrate_flow(m, np.zeros(2), ControlPath.zero(1.0, 1))
    for s, J in zip(flow.times, flow.J0):
        assert np.allclose(J, [[1.0, 0.0], [s, 1.0]], atol=1e-12)


def test_flow_matches_matrix_exponential():
    m = linear_langevin()
    A = np.array([[-1.0, 0.0], [1.0, 0.0]])
    x0 = np.array([0.7, -0.3])
    flow = integrate_flow(m, x0, ControlPath.zero(1.0, 1), n_steps=2000)
    assert np.allclose(flow.terminal, expm(A) @ x0, atol=1e-7)
    assert np.allclose(flow.J0[-1], expm(A), atol=1e-7)


def test_flow_constant_control_forcing():
    # zero drift: constant control integrates linearly
    m = elliptic_model()
    flow = integrate_flow(m, np.zeros(2), ControlPath.constant(2.0, [1.0, -0.5]))
    assert np.allclose(flow.terminal, [2.0, -1.0], atol=1e-12)


def test_flow_divergence_detected():
    # dx = x^2 from x=2 blows up at t = 1/2
    m = ModelSpec(
        name="blowup",
        d=1,
        drift=PolyVectorField(1, (Polynomial(1, {(2,): F(1)}),)),
        noise=((F(1),),),
    )
    with pytest.raises(FlowDivergenceError) as exc_info:
        integrate_flow(m, np.array([2.0]), ControlPath.zero(1.0, 1), n_steps=4000)
    assert 0 < exc_info.value.time <= 1.0


def test_flow_ball_exit_recorded():
    m = elliptic_model()
    flow = integrate_flow(
        m, np.zeros(2), ControlPath.constant(2.0, [2.0, 0.0]), n_ball=1
    )
    assert flow.exited
    assert flow.exit_time == pytest.approx(0.5, abs=1e-2)


def test_refine_halves_until_converged():
    m = linear_langevin()
    x0 = np.array([1.0, 0.0])
    coarse = integrate_flow(m, x0, ControlPath.zero(1.0, 1), n_steps=8)
    fine = integrate_flow(
        m, x0, ControlPath.zero(1.0, 1), n_steps=8, refine=True, refine_tol=1e-10
    )
    A = np.array([[-1.0, 0.0], [1.0, 0.0]])
    exact = expm(A) @ x0
    assert np.linalg.norm(fine.terminal - exact) < np.linalg.norm(
        coarse.terminal - exact
    )
    assert np.allclose(fine.terminal, exact, atol=1e-9)


def test_cocycle_property():
    # J_{0,t} = J_{s,t} J_{0,s} at every node
    m = get_builtin("bhw")
    control = ControlPath.uniform(1.0, [[0.5], [-1.0]])
    flow = integrate_flow(m, np.array([0.3, 0.4]), control, n_steps=800)
    Jst = _jst_factors(flow, m)
    Jt = flow.J0[-1]
    for i in range(0, len(flow.times), 50):
        assert np.allclose(Jst[i] @ flow.J0[i], Jt, atol=1e-7)


# -- quadrature -------------------------------------------------------


def test_simpson_weights_exact_for_cubics():
    times = np.linspace(0.0, 1.0, 9)
    w = _simpson_weights(times)
    assert np.sum(w) == pytest.approx(1.0)
    for p in range(4):  # Simpson is exact through degree 3
        assert np.dot(w, times**p) == pytest.approx(1.0 / (p + 1), abs=1e-12)


def test_simpson_weights_piecewise_grid():
    # two uniform runs with different steps, as produced by a 2-piece control
    times = np.concatenate([np.linspace(0, 0.5, 5), np.linspace(0.5, 1.0, 9)[1:]])
    w = _simpson_weights(times)
    assert np.dot(w, times**2) == pytest.approx(1.0 / 3.0, abs=1e-12)


# -- Gramian ----------------------------------------------------------


def test_gramian_shear_oracle():
    # M = [[t, t^2/2], [t^2/2, t^3/3]] for drift (0,x), X1 = e1, at t=1
    m = shear_model()
    flow = integrate_flow(m, np.zeros(2), ControlPath.zero(1.0, 1))
    M, sigma_min = gramian(flow, m)
    assert np.allclose(M, [[1.0, 0.5], [0.5, 1.0 / 3.0]], atol=1e-7)
    assert np.linalg.det(M) == pytest.approx(1.0 / 12.0, abs=1e-7)
    assert sigma_min > gramian_threshold(M)


def test_gramian_symmetric_psd_random_flows():
    rng = np.random.default_rng(5)
    for name in ["langevin", "bhw"]:
        m = get_builtin(name)
        for _ in range(5):
            control = ControlPath.uniform(
                0.8, rng.normal(scale=0.5, size=(3, m.r))
            )
            x0 = rng.normal(scale=0.5, size=m.d)
            flow = integrate_flow(m, x0, control, n_steps=400)
            M, sigma_min = gramian(flow, m)
            assert np.allclose(M, M.T)
            eigs = np.linalg.eigvalsh(M)
            assert eigs[0] >= -1e-10
            assert sigma_min == pytest.approx(
                np.linalg.svd(M, compute_uv=False)[-1]
            )


def test_gramian_no_noise_is_zero():
    m = ModelSpec(
        name="silent", d=1,
        drift=PolyVectorField(1, (Polynomial.variable(1, 0),)),
        noise=(),
    )
    flow = integrate_flow(m, np.array([0.1]), ControlPath.zero(1.0, 0))
    M, sigma_min = gramian(flow, m)
    assert M.shape == (1, 1) and M[0, 0] == 0.0 and sigma_min == 0.0


# -- k_rank -----------------------------------------------------------


def test_k_rank_shear_full():
    m = shear_model()
    flow = integrate_flow(m, np.zeros(2), ControlPath.zero(1.0, 1))
    assert k_rank(flow, m) == 2


def test_k_rank_no_noise_zero():
    m = ModelSpec(
        name="silent", d=1,
        drift=PolyVectorField(1, (Polynomial.variable(1, 0),)),
        noise=(),
    )
    flow = integrate_flow(m, np.array([0.1]), ControlPath.zero(1.0, 0))
    assert k_rank(flow, m) == 0


def test_k_rank_consistency_with_gramian():
    # full bracket rank along the flow forces an invertible Gramian
    rng = np.random.default_rng(11)
    violations = 0
    for name in ["langevin", "langevin2d", "bhw"]:
        m = get_builtin(name)
        for _ in range(5):
            control = ControlPath.uniform(
                1.0, rng.normal(scale=0.4, size=(2, m.r))
            )
            x0 = rng.normal(scale=0.5, size=m.d)
            flow = integrate_flow(m, x0, control, n_steps=400)
            M, sigma_min = gramian(flow, m)
            if k_rank(flow, m) == m.d and sigma_min <= gramian_threshold(M):
                violations += 1
    assert violations == 0


# -- synthesis --------------------------------------------------------


def test_synthesis_elliptic_shortcut_exact():
    m = elliptic_model()
    control = synthesize_leg(m, [0.0, 0.0], [1.0, -2.0], 1.0)
    flow = integrate_flow(m, np.zeros(2), control, with_jacobian=False)
    assert np.allclose(flow.terminal, [1.0, -2.0], atol=1e-12)


def test_synthesis_langevin_leg():
    m = get_builtin("langevin")
    control = synthesize_leg(m, [0.0, 0.0], [1.0, 0.0], 1.0, seed=0)
    flow = integrate_flow(m, np.zeros(2), control, n_steps=2000, with_jacobian=False)
    assert np.linalg.norm(flow.terminal - [1.0, 0.0]) < 1e-5 * 2.0


def test_synthesis_variational_gradient_matches_fd():
    from conecert.reach import _terminal_and_jac

    m = get_builtin("bhw")
    pieces, r = 3, m.r
    u = np.array([0.4, -0.2, 0.7])
    x0 = np.array([0.1, 0.2])

    def terminal(uflat):
        c = ControlPath.uniform(0.8, uflat.reshape(pieces, r))
        t, _, _ = _terminal_and_jac(m, x0, c, 600)
        return t

    _, J, _ = _terminal_and_jac(m, x0, ControlPath.uniform(0.8, u.reshape(pieces, r)), 600)
    h = 1e-6
    for p in range(pieces):
        e = np.zeros(pieces * r)
        e[p] = h
        fd = (terminal(u + e) - terminal(u - e)) / (2 * h)
        denom = max(np.linalg.norm(fd), 1e-12)
        assert np.linalg.norm(J[:, p] - fd) / denom < 1e-4


def test_synthesis_requires_control_directions():
    m = ModelSpec(
        name="silent", d=1,
        drift=PolyVectorField(1, (Polynomial.variable(1, 0),)),
        noise=(),
    )
    with pytest.raises(SynthesisError):
        synthesize_leg(m, [0.0], [1.0], 1.0)
    with pytest.raises(ValueError):
        synthesize_leg(get_builtin("langevin"), [0.0, 0.0], [1.0, 0.0], -1.0)


# -- certificates -----------------------------------------------------


def test_certify_langevin_positive():
    m = get_builtin("langevin")
    basis = choose_basis(compute_C(m))
    cert = certify(m, basis, [0.0, 0.0], [1.0, 0.0], 1.0, CertifyOptions(seed=0))
    assert cert.verdict == "positive"
    assert cert.terminal_error < 1e-5 * 2.0
    assert cert.K_rank == 2
    assert cert.sigma_min > 0
    js = cert.to_json()
    assert js["verdict"] == "positive" and js["control"] is not None


def test_certify_membership_failure(bhw_model):
    basis = choose_basis(compute_C(bhw_model))
    cert = certify(bhw_model, basis, [0.0, 0.0], [-1.0, 0.0], 1.0)
    assert cert.verdict == "inconclusive"
    assert cert.stage == "membership"
    assert cert.control is None


def test_certify_via_equilibrium_bhw(bhw_model):
    basis = choose_basis(compute_C(bhw_model))
    cert = certify(
        bhw_model, basis, [0.0, 0.0], [2.0, 1.0], 1.0,
        CertifyOptions(via_equilibrium=True, seed=0),
    )
    assert cert.verdict == "positive"
    assert cert.dwell is not None
    start, duration = cert.dwell
    assert duration == pytest.approx(0.25)
    # the synthesized control really dwells: state is near-stationary there
    flow = integrate_flow(
        bhw_model, np.zeros(2), cert.control, n_steps=2000, with_jacobian=False
    )
    mask = (flow.times >= start + 0.01) & (flow.times <= start + duration - 0.01)
    dwell_states = flow.states[mask]
    drift = np.ptp(dwell_states, axis=0)
    assert np.all(drift < 0.05)
