import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gammalab import gauss as G
from gammalab import profiles as P
from gammalab.errors import AccuracyError, AliasingError, DomainError

coeff_arrays = arrays(np.float64, st.integers(2, 21), elements=st.floats(-2, 2))


def hermite_oracle(k, x):
    """Orthonormal probabilists' Hermite values via numpy's HermiteE class."""
    c = np.zeros(k + 1)
    c[k] = 1.0
    return np.polynomial.hermite_e.hermeval(x, c) / math.sqrt(math.factorial(k))


def test_quadrature_moments():
    for m in (8, 64, 128):
        q = G.gauss_quadrature(m)
        assert abs(q.weights.sum() - 1) < 1e-14
        assert abs(q.weights @ q.nodes**2 - 1) < 1e-12
        # exact for x^{2m-2}: moment (2m-3)!!
        k = 2 * min(m, 10) - 2
        ref = float(np.prod(np.arange(k - 1, 0, -2)))
        assert abs(q.weights @ q.nodes**k / ref - 1) < 1e-12


@pytest.mark.parametrize("k", [0, 1, 2, 5, 12])
def test_basis_matches_oracle(k):
    x = np.linspace(-4, 4, 41)
    assert np.max(np.abs(G.HermiteFunction.basis(k)(x) - hermite_oracle(k, x))) < 1e-11


def test_synthesize_analyze_examples():
    q = G.gauss_quadrature(G.DEFAULT_M)
    vals = G.hermite_transform([0.0, 1.0], "synthesize")
    assert np.allclose(vals, q.nodes, atol=1e-14)
    f = G.hermite_transform(q.nodes**2, "analyze", K=4)
    assert np.allclose(f.coeffs, [1.0, 0.0, math.sqrt(2), 0.0, 0.0], atol=1e-13)


def test_aliasing_flagged():
    with pytest.raises(AliasingError):
        G.hermite_transform(np.zeros(8), "analyze", K=10)


@given(coeff_arrays)
def test_round_trip(c):
    f = G.HermiteFunction(c)
    back = G.hermite_transform(G.hermite_transform(f, "synthesize", m=32), "analyze", K=f.K, m=32)
    assert np.max(np.abs(back.coeffs - f.coeffs)) <= 1e-12 * (1 + np.max(np.abs(c)))


@given(coeff_arrays)
def test_parseval_and_mean(c):
    f = G.HermiteFunction(c)
    q = G.gauss_quadrature(64)
    v = f(q.nodes)
    assert abs(q.weights @ v**2 - f.norm2) <= 1e-11 * (1 + f.norm2)
    assert abs(q.weights @ v - f.mean) <= 1e-12 * (1 + np.abs(c).sum())


@given(coeff_arrays)
def test_derivative_rule(c):
    f = G.HermiteFunction(c)
    d = f.derivative().coeffs
    k = np.arange(1, f.K + 1)
    assert np.allclose(d[: f.K], np.sqrt(k) * c[1:], atol=1e-14)


@pytest.mark.parametrize("t", [0.1, 1.0, 5.0])
def test_ou_flow_eigen(t):
    for k in range(21):
        out = G.ou_flow(G.HermiteFunction.basis(k), t)
        ref = math.exp(-k * t) * G.HermiteFunction.basis(k).coeffs
        assert np.max(np.abs(out.coeffs - ref)) <= 1e-12


def test_ou_flow_example_and_domain():
    out = G.ou_flow(G.HermiteFunction.basis(2), 0.5)
    assert abs(out.coeffs[2] - math.exp(-1)) < 1e-15
    with pytest.raises(DomainError):
        G.ou_flow(G.HermiteFunction.basis(1), -0.1)


@given(coeff_arrays, st.floats(0, 10))
def test_flow_semigroup_properties(c, t):
    f = G.HermiteFunction(c)
    g = G.ou_flow(f, t)
    assert g.mean == f.mean
    assert g.variance <= math.exp(-2 * t) * f.variance + 1e-14
    assert np.array_equal(G.ou_flow(f, 0.0).coeffs, f.coeffs)
    far = G.ou_flow(f, 60.0)
    assert np.max(np.abs(far.coeffs[1:])) < 1e-25


@given(coeff_arrays, st.floats(0.01, 5))
def test_exact_commutation(c, t):
    assert G.commutation_defect(G.HermiteFunction(c), t) <= 1e-12 * (1 + np.abs(c).max() * math.sqrt(len(c)))


@pytest.mark.parametrize("a,t", [(0.0, 0.3), (1.0, 0.05), (-0.7, 2.0)])
def test_mehler_indicator_closed_form(a, t):
    x = np.linspace(-3, 3, 13)
    ref = P.gauss_cdf((a - math.exp(-t) * x) / math.sqrt(1 - math.exp(-2 * t)))
    H = G.IntervalSet.half_line(a)
    assert np.max(np.abs(G.mehler_apply(H, t, x) - ref)) < 1e-15
    assert np.all((G.mehler_apply(H, t, x) >= 0) & (G.mehler_apply(H, t, x) <= 1))


def test_mehler_jump_callable_reports_non_convergence():
    # a bare jump callable defeats Gauss-Hermite refinement: flagged, never silent
    with pytest.raises(AccuracyError):
        G.mehler_apply(lambda y: (y <= 0.0).astype(float), 0.3, np.linspace(-1, 1, 5), tol=1e-6)


def test_mehler_smooth_and_constants():
    x = np.linspace(-3, 3, 7)
    assert np.allclose(G.mehler_apply(lambda y: np.ones_like(y), 0.7, x), 1.0, atol=1e-15)
    # f = Phi(x): Q_t f = Phi(e^{-t} x / sqrt(2 - e^{-2t}))
    t = 0.4
    got = G.mehler_apply(P.gauss_cdf, t, x, tol=1e-13)
    ref = P.gauss_cdf(math.exp(-t) * x / math.sqrt(2 - math.exp(-2 * t)))
    assert np.max(np.abs(got - ref)) < 1e-12
    assert np.max(np.abs(G.mehler_apply(G.ProbitAffine(1.0), t, x) - ref)) < 1e-15
    # density of an affine map: closed form against quadrature
    phi = G.mehler_apply(lambda y: P.gauss_pdf(1.7 * y + 0.2), t, x, tol=1e-13)
    assert np.max(np.abs(G.mehler_phi_of_affine(1.7, t, x, shift=0.2) - phi)) < 1e-12
    far = G.mehler_apply(G.IntervalSet.half_line(0.3), 30.0, x)
    assert np.max(np.abs(far - P.gauss_cdf(0.3))) < 1e-12


def test_gamma_calculus_examples():
    h1 = G.HermiteFunction.basis(1)
    gc = G.gamma_calculus(h1)
    x = np.linspace(-2, 2, 5)
    assert np.allclose(gc.gamma(x), 1) and np.allclose(gc.gamma2(x), 1)
    assert np.allclose(gc.generator.coeffs[:2], [0, -1])
    assert abs(G.gamma_integrals(G.HermiteFunction.basis(2))["gamma2_minus_gamma"] - 2) < 1e-15
    const = G.gamma_calculus(G.HermiteFunction(np.array([3.0, 0.0])))
    assert np.allclose(const.gamma(x), 0) and np.allclose(const.gamma2(x), 0)


@given(coeff_arrays)
def test_gamma_integral_identities(c):
    c = np.concatenate([[0.0], c[1:]])          # the chain is stated for centred f
    f = G.HermiteFunction(c)
    gc = G.gamma_calculus(f)
    spec = G.gamma_integrals(f)
    scale = 1 + spec["gamma2"]
    assert abs(gc.gamma.mean - spec["gamma"]) <= 1e-10 * scale
    assert abs(gc.gamma2.mean - gc.generator.norm2) <= 1e-10 * scale
    # second-order Poincare chain: int (Gamma2 - Gamma) >= 1/2 ||f + Lf||^2
    assert spec["gamma2_minus_gamma"] >= 0.5 * spec["f_plus_Lf_sq"] - 1e-12 * scale
    x = np.linspace(-3, 3, 9)
    d1 = f.derivative()
    assert np.allclose(gc.gamma(x), d1(x) ** 2, atol=1e-8 * scale)


def test_projection_examples():
    x2 = G.hermite_transform(G.gauss_quadrature(G.DEFAULT_M).nodes ** 2, "analyze", K=4)
    assert np.max(np.abs(G.project_chaos(x2, 1).coeffs)) < 1e-13
    f = G.HermiteFunction(np.array([3.0, 2.0]))
    assert np.allclose(G.project_chaos(f, 1).coeffs, [0, 2])


@given(coeff_arrays)
def test_pythagoras(c):
    f = G.HermiteFunction(c)
    parts = sum(G.project_chaos(f, k).norm2 for k in range(f.K + 1))
    assert abs(parts - f.norm2) <= 1e-12 * (1 + f.norm2)
    rest = f - G.project_chaos(f, 1)
    assert abs(rest.norm2 - (f.norm2 - c[1] ** 2)) <= 1e-12 * (1 + f.norm2)


@given(st.floats(-3, 3), st.floats(0.01, 3))
def test_interval_flow_log_space(a, t):
    H = G.IntervalSet.half_line(a)
    x = np.array([-40.0, 0.0, 40.0])
    jet = H.flow(t, x)
    assert np.all(np.isfinite(jet.h))
    # probit of a half-line flow is exactly affine: h = k_t (a - e^{-t} x)
    k = 1 / math.sqrt(1 - math.exp(-2 * t))
    assert np.allclose(jet.h, k * (a - math.exp(-t) * x), rtol=1e-10, atol=1e-10)
