import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlmaxwell.nonlinearity import (
    GammaField,
    NonlinearityModel,
    PowerTerm,
    check_hypotheses,
    chi,
    coercivity_constants,
    eval_F,
    eval_f,
    grad_F,
    hess_F,
    integrate_F,
    lp_norm_p,
    phi,
)

G_ANISO = np.array([[1.0, 0.2, 0.0], [0.0, 0.8, 0.1], [0.3, 0.0, 1.2]])


def kerr_sum(delta=0.0):
    return NonlinearityModel(
        [PowerTerm(GammaField.constant(G_ANISO), 3.0), PowerTerm(GammaField.constant(0.7), 4.5)], delta, "sum"
    )


MODELS = {
    "kerr": NonlinearityModel.kerr(p=4.0),
    "aniso": NonlinearityModel.kerr(G_ANISO, p=3.5),
    "sum": kerr_sum(),
    "truncated": kerr_sum(delta=0.3),
}

vec3 = arrays(np.float64, 3, elements=st.floats(-5, 5))


@pytest.mark.parametrize("name", MODELS)
def test_pointwise_gradient_and_hessian_by_differences(name, rng):
    model = MODELS[name]
    x = rng.random((30, 3))
    u = rng.standard_normal((30, 3))
    u[np.linalg.norm(u, axis=1) < 0.5] *= 3  # keep away from the truncation sphere
    h = 1e-6
    f = model.f(x, u)
    H = model.hessian(x, u)
    for k in range(3):
        du = np.zeros(3)
        du[k] = h
        fd = (model.F(x, u + du) - model.F(x, u - du)) / (2 * h)
        assert np.allclose(fd, f[:, k], rtol=1e-6, atol=1e-8)
        fdg = (model.f(x, u + du) - model.f(x, u - du)) / (2 * h)
        assert np.allclose(fdg, H[:, :, k], rtol=1e-5, atol=1e-7)


def test_kerr_closed_form():
    model = NonlinearityModel.kerr(p=4.0)
    u = np.array([[1.0, 2.0, 2.0]])
    assert eval_F(model, [[0, 0, 0]], u)[0] == pytest.approx(81 / 4)
    assert np.allclose(eval_f(model, [[0, 0, 0]], u), 9 * u)


@given(vec3, st.floats(0.01, 2.0))
@settings(max_examples=60, deadline=None)
def test_truncation_map(u, delta):
    c = chi(u, delta)
    r = np.linalg.norm(u)
    if r <= delta:
        assert np.all(c == 0)
    else:
        assert np.linalg.norm(c) == pytest.approx(r - delta, abs=1e-12)
        assert np.dot(c, u) >= 0


@given(vec3, vec3, st.floats(0, 3))
@settings(max_examples=100, deadline=None)
def test_phi_nonpositive_and_zero_at_identity(u, v, t):
    model = MODELS["sum"]
    x = np.zeros((1, 3))
    assert phi(model, 1.0, x, u, np.zeros(3))[0] == 0.0
    scale = max(1.0, float(np.linalg.norm(u)) ** 4.5 + float(np.linalg.norm(v)) ** 4.5 + 1)
    assert phi(model, t, x, u, v)[0] <= 1e-12 * scale


@given(vec3)
@settings(max_examples=100, deadline=None)
def test_ar_type_inequality_and_evenness(u):
    for model in MODELS.values():
        x = np.zeros((1, 3))
        F = model.F(x, u)[0]
        fu = model.f(x, u)[0] @ u
        assert fu >= 2 * F - 1e-12 * max(1.0, abs(F))
        assert model.F(x, -u)[0] == F
        assert F >= 0


def test_hypothesis_report_for_power_sum():
    rep = check_hypotheses(kerr_sum(), sample_budget=10_000, seed=0)
    assert rep["violations"] == []
    ent = rep["entries"]
    for key in ("F2", "F3", "F5i", "F7", "F8"):
        assert ent[key]["min_slack"] >= -1e-12, key
    assert ent["F7"]["gamma"] == 3.0 and ent["F8"]["eta"] == 4.5
    assert ent["phi_t1_v0"]["ok"] and ent["even"]["ok"]


def test_truncated_model_reports_structural_violation():
    rep = check_hypotheses(kerr_sum(0.3), sample_budget=2000)
    assert "F7" in rep["violations"]
    assert rep["entries"]["f_dot_u_ge_2F"]["ok"]


def test_hypothesis_budget_validation():
    with pytest.raises(ValueError):
        check_hypotheses(MODELS["kerr"], sample_budget=0)


def test_exponent_range():
    for p in (2.0, 6.0, 7.0):
        with pytest.raises(ValueError, match="exponent"):
            PowerTerm(GammaField.constant(1.0), p)
    with pytest.raises(ValueError, match="invertible"):
        GammaField.constant([1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        NonlinearityModel([], 0.0)


def test_uniaxial_flag():
    assert NonlinearityModel.kerr(np.diag([2.0, 2.0, 1.0])).uniaxial
    assert not NonlinearityModel.kerr(G_ANISO).uniaxial


def test_coercivity_constant_uses_smallest_singular_value():
    cc = coercivity_constants(NonlinearityModel.kerr(np.diag([2.0, 1.0, 3.0]), p=4.0), 1.0)
    assert cc["d"] == pytest.approx(0.9 * 1.0 / 4.0)
    assert cc["M"] == 0.0


def test_piecewise_gamma():
    g = GammaField.piecewise([((0, 0, 0), (0.5, 1, 1), 2.0)], 1.0)
    G = g(np.array([[0.25, 0.5, 0.5], [0.75, 0.5, 0.5]]))
    assert np.allclose(G[0], 2 * np.eye(3)) and np.allclose(G[1], np.eye(3))
    assert g.inv_norm_bound == 1.0 and g.norm_bound == 2.0


@pytest.mark.parametrize("name", MODELS)
def test_integrated_gradient_and_hessian(name, ops2, rng):
    model = MODELS[name]
    e = rng.standard_normal(ops2.n)
    d = rng.standard_normal(ops2.n)
    h = 1e-6
    fd = (integrate_F(ops2.space, model, e + h * d) - integrate_F(ops2.space, model, e - h * d)) / (2 * h)
    assert fd == pytest.approx(grad_F(ops2.space, model, e) @ d, rel=1e-6)
    fd2 = (grad_F(ops2.space, model, e + h * d) - grad_F(ops2.space, model, e - h * d)) / (2 * h)
    assert np.allclose(fd2, hess_F(ops2.space, model, e) @ d, rtol=1e-5, atol=1e-6 * np.abs(fd2).max())


def test_lp_norm_matches_quartic_reference(oracles, ops2):
    ref = oracles["quartic_integral"]
    assert lp_norm_p(ops2.space, ref["coefficients"], 4.0) == pytest.approx(ref["value"], rel=1e-12)


def test_closed_form_examples():
    x = np.zeros((1, 3))
    m = NonlinearityModel.kerr(np.diag([2.0, 1.0, 1.0]), p=3.0)
    assert m.F(x, [[1, 0, 0]])[0] == pytest.approx(8 / 3)
    assert np.allclose(m.f(x, [[1, 0, 0]]), [[8, 0, 0]])
    k = NonlinearityModel.kerr(p=4.0)
    assert k.F(x, [[1, 0, 0]])[0] == 0.25 and np.allclose(k.f(x, [[1, 0, 0]]), [[1, 0, 0]])
    assert k.F(x, [[0, 0, 0]])[0] == 0.0 and not k.f(x, [[0, 0, 0]]).any()
    assert phi(k, 0.0, x, [[1, 0, 0]], [[0, 0, 0]])[0] == pytest.approx(-0.25)
    assert np.allclose(chi([0.6, 0, 0], 0.3), [0.3, 0, 0])
    assert np.array_equal(chi([0.6, 0.1, 0], 0.0), [0.6, 0.1, 0])


def test_integral_homogeneity_and_zero(ops2, rng):
    m = NonlinearityModel.kerr(G_ANISO, p=3.5)
    e = rng.standard_normal(ops2.n)
    assert integrate_F(ops2.space, m, np.zeros(ops2.n)) == 0.0
    assert not grad_F(ops2.space, m, np.zeros(ops2.n)).any()
    for t in (0.5, 2.0, 3.0):
        assert integrate_F(ops2.space, m, t * e) == pytest.approx(t**3.5 * integrate_F(ops2.space, m, e), rel=1e-12)


def test_coercive_lower_bound(ops2, rng):
    model = kerr_sum(delta=0.2)
    cc = coercivity_constants(model, 1.0)
    p = cc["p"]
    for _ in range(100):
        e = rng.standard_normal(ops2.n) * 10 ** rng.uniform(-2, 2)
        lhs = 0.5 * e @ (ops2.M @ e) + integrate_F(ops2.space, model, e)
        rhs = cc["d_prime"] * lp_norm_p(ops2.space, e, p)
        assert lhs >= rhs - 1e-12 * max(1.0, lhs)
