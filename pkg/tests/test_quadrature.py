import itertools
from math import factorial

import numpy as np
import pytest

from nlmaxwell import quadrature


def simplex_monomial(exps):
    """Exact integral of prod lambda_i^a_i over a unit-measure simplex of dimension len(exps)-1."""
    d = len(exps) - 1
    return factorial(d) * np.prod([factorial(a) for a in exps]) / factorial(d + sum(exps))


@pytest.mark.parametrize("rule,nb", [(quadrature.tet14, 4), (quadrature.tri7, 3)])
def test_simplex_rules_exact_to_degree_five(rule, nb):
    pts, w = rule()
    assert w.sum() == pytest.approx(1.0, abs=1e-15)
    assert np.allclose(pts.sum(axis=1), 1.0)
    for exps in itertools.product(range(6), repeat=nb):
        if sum(exps) > 5:
            continue
        approx = w @ np.prod(pts ** np.array(exps), axis=1)
        assert approx == pytest.approx(simplex_monomial(exps), rel=1e-13, abs=1e-15)


def test_tet14_not_exact_at_degree_six():
    pts, w = quadrature.tet14()
    approx = w @ pts[:, 0] ** 6
    assert abs(approx - simplex_monomial((6, 0, 0, 0))) > 1e-8


@pytest.mark.parametrize("n", [1, 3, 5])
def test_line_rule(n):
    s, w = quadrature.line(n)
    for k in range(2 * n):
        assert w @ s**k == pytest.approx(1.0 / (k + 1), rel=1e-13)


def test_composite_rule_converges_at_design_order():
    from scipy.integrate import tplquad

    from nlmaxwell.mesh import build_cube_mesh

    def g(p):
        u = np.stack([1 + p[:, 0], np.sin(p[:, 1]), p[:, 2] ** 2], axis=1)
        return np.linalg.norm(u, axis=1) ** 3

    ref = tplquad(lambda z, y, x: g(np.array([[x, y, z]]))[0], 0, 1, 0, 1, 0, 1, epsabs=1e-13, epsrel=1e-13)[0]
    bary, w = quadrature.tet14()
    errs = []
    for n in (1, 2, 4):
        m = build_cube_mesh(n)
        pts = np.einsum("qk,tkd->tqd", bary, m.vertices[m.tets]).reshape(-1, 3)
        val = (g(pts).reshape(m.n_tets, -1) @ w) @ m.volumes()
        errs.append(abs(val - ref))
    # degree-5 exactness gives O(h^6) composite error
    assert errs[1] / errs[2] > 40
