"""Fixed quadrature rules on the reference simplex (weights sum to one)."""

import itertools

import numpy as np


def _perm_points(*groups):
    pts, wts = [], []
    for base, w in groups:
        seen = set()
        for p in itertools.permutations(base):
            if p not in seen:
                seen.add(p)
                pts.append(p)
                wts.append(w)
    return np.array(pts, dtype=float), np.array(wts, dtype=float)


def tet14():
    """14-point rule, exact for polynomials of degree 5. Barycentric points."""
    a1, w1 = 0.0927352503108912264, 0.0122488405193936582
    a2, w2 = 0.3108859192633006098, 0.0187813209530026417
    b, w3 = 0.4544962958743503556, 0.0070910034628469110
    pts, wts = _perm_points(
        ((a1, a1, a1, 1 - 3 * a1), w1),
        ((a2, a2, a2, 1 - 3 * a2), w2),
        ((b, b, 0.5 - b, 0.5 - b), w3),
    )
    return pts, wts / wts.sum()


def tri7():
    """7-point rule, exact for polynomials of degree 5. Barycentric points."""
    a, wa = 0.101286507323456338800987361915123, 0.125939180544827152595683945500181
    b, wb = 0.470142064105115089770441209513447, 0.132394152788506180737649387833152
    pts, wts = _perm_points(
        ((1 / 3, 1 / 3, 1 / 3), 0.225),
        ((a, a, 1 - 2 * a), wa),
        ((b, b, 1 - 2 * b), wb),
    )
    return pts, wts / wts.sum()


def line(n=5):
    """Gauss-Legendre points on [0, 1] with weights summing to one."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w
