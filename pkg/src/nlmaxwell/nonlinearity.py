"""Kerr-type power-sum nonlinearities with optional radial truncation.

F0(x, u) = sum_i (1/p_i) |Gamma_i(x) u|^{p_i},   F(x, u) = F0(x, chi(u)),
chi(u) = 0 for |u| <= delta and (1 - delta/|u|) u otherwise.

Pointwise routines work on batches: ``u`` has shape (n, 3) and the Gamma
matrices have shape (n, 3, 3).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import QuadratureSpace, blockdiag, coeffs


class GammaField:
    """Invertible 3x3 matrix field x -> Gamma(x)."""

    def __init__(self, evaluator, norm_bound, inv_norm_bound, name="", uniaxial=False, sigma_min=None):
        self.evaluator = evaluator
        self.norm_bound = float(norm_bound)
        self.inv_norm_bound = float(inv_norm_bound)
        self.sigma_min = float(sigma_min) if sigma_min is not None else 1.0 / self.inv_norm_bound
        self.name = name
        self.uniaxial = uniaxial

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        G = np.asarray(self.evaluator(x), dtype=float)
        return np.broadcast_to(G, (len(x), 3, 3)).copy() if G.shape == (3, 3) else G

    def __repr__(self):
        return f"GammaField({self.name})"

    @staticmethod
    def _as_matrix(m):
        m = np.array(m, dtype=float)
        if m.ndim == 0:
            m = m * np.eye(3)
        elif m.ndim == 1:
            m = np.diag(m)
        if m.shape != (3, 3):
            raise ValueError(f"Gamma must be a 3x3 matrix, got shape {m.shape}")
        return m

    @classmethod
    def constant(cls, matrix, name=None):
        G = cls._as_matrix(matrix)
        s = np.linalg.svd(G, compute_uv=False)
        if s[-1] <= 1e-14 * max(s[0], 1e-300):
            raise ValueError("Gamma matrix is not invertible")
        uni = bool(not (G - np.diag(np.diag(G))).any() and G[0, 0] == G[1, 1])
        return cls(lambda x: G, s[0], 1.0 / s[-1], name or f"const{G.tolist()}", uni)

    @classmethod
    def piecewise(cls, regions, default, name="piecewise"):
        mats = [cls._as_matrix(m) for _, _, m in regions] + [cls._as_matrix(default)]
        svals = np.array([np.linalg.svd(m, compute_uv=False) for m in mats])
        if svals[:, -1].min() <= 0:
            raise ValueError("Gamma matrix is not invertible in some region")
        boxes = [(np.asarray(lo, float), np.asarray(hi, float)) for lo, hi, _ in regions]

        def evaluate(x):
            out = np.broadcast_to(mats[-1], (len(x), 3, 3)).copy()
            done = np.zeros(len(x), dtype=bool)
            for (lo, hi), m in zip(boxes, mats):
                inside = ~done & np.all((x >= lo) & (x <= hi), axis=1)
                out[inside] = m
                done |= inside
            return out

        return cls(evaluate, svals[:, 0].max(), 1.0 / svals[:, -1].min(), name)


@dataclass(frozen=True)
class PowerTerm:
    gamma: GammaField
    p: float

    def __post_init__(self):
        if not 2.0 < self.p < 6.0:
            raise ValueError(f"exponent p must lie in (2, 6), got {self.p}")


def chi(u, delta: float) -> np.ndarray:
    """Radial truncation: 0 inside the ball of radius delta, shifted inward outside."""
    u = np.asarray(u, dtype=float)
    if delta == 0:
        return u.copy()
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    s = np.where(r > delta, 1.0 - delta / np.where(r > 0, r, 1.0), 0.0)
    return s * u


def _power_parts(G, u, p):
    """Value, gradient and Hessian of (1/p)|G u|^p for batches."""
    y = np.einsum("nij,nj->ni", G, u)
    r2 = np.einsum("ni,ni->n", y, y)
    r = np.sqrt(r2)
    val = r**p / p
    pos = r > 0
    rp2 = np.where(pos, r ** (p - 2), 0.0)
    rp4 = np.where(pos, np.where(pos, r, 1.0) ** (p - 4), 0.0)
    Gty = np.einsum("nji,nj->ni", G, y)
    grad = rp2[:, None] * Gty
    GtG = np.einsum("nki,nkj->nij", G, G)
    hess = rp2[:, None, None] * GtG + (p - 2) * rp4[:, None, None] * np.einsum("ni,nj->nij", Gty, Gty)
    return val, grad, hess


@dataclass
class NonlinearityModel:
    terms: list
    delta: float = 0.0
    name: str = "kerr"

    def __post_init__(self):
        if not self.terms:
            raise ValueError("nonlinearity model needs at least one term")
        if self.delta < 0:
            raise ValueError(f"truncation radius must be >= 0, got {self.delta}")

    @classmethod
    def kerr(cls, gamma=None, p=4.0, delta=0.0):
        g = gamma if isinstance(gamma, GammaField) else GammaField.constant(np.eye(3) if gamma is None else gamma)
        return cls([PowerTerm(g, p)], delta)

    @property
    def p_growth(self) -> float:
        return max(t.p for t in self.terms)

    @property
    def gamma_AR(self) -> float:
        return min(t.p for t in self.terms)

    @property
    def eta_AR(self) -> float:
        return max(t.p for t in self.terms)

    @property
    def uniaxial(self) -> bool:
        return all(t.gamma.uniaxial for t in self.terms)

    def gammas(self, x) -> list:
        return [t.gamma(x) for t in self.terms]

    # untruncated F0 and its derivatives
    def parts0(self, gam, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        val = np.zeros(len(u))
        grad = np.zeros_like(u)
        hess = np.zeros((len(u), 3, 3))
        for t, G in zip(self.terms, gam):
            v, g, h = _power_parts(G, u, t.p)
            val += v
            grad += g
            hess += h
        return val, grad, hess

    def parts(self, gam, u):
        """F, f and the Hessian of F at ``u`` given precomputed Gamma batches."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.delta == 0:
            return self.parts0(gam, u)
        d = self.delta
        r = np.linalg.norm(u, axis=1)
        out = r > d
        rs = np.where(out, r, 1.0)
        s = np.where(out, 1.0 - d / rs, 0.0)
        cu = s[:, None] * u
        v0, f0, h0 = self.parts0(gam, cu)
        # chi'(u) = s I + d u u^T / |u|^3 outside the ball, 0 inside
        uu = np.einsum("ni,nj->nij", u, u)
        J = s[:, None, None] * np.eye(3) + np.where(out, d / rs**3, 0.0)[:, None, None] * uu
        f = np.einsum("nij,nj->ni", J, f0)
        fu = np.einsum("ni,ni->n", f0, u)
        curv = (
            np.einsum("ni,nj->nij", f0, u) + np.einsum("ni,nj->nij", u, f0) + fu[:, None, None] * np.eye(3)
        ) / rs[:, None, None] ** 3 - 3.0 * (fu / rs**5)[:, None, None] * uu
        H = np.einsum("nik,nkl,nlj->nij", J, h0, J) + np.where(out, d, 0.0)[:, None, None] * curv
        return v0, f, H

    def F(self, x, u):
        return self.parts(self.gammas(x), u)[0]

    def f(self, x, u):
        return self.parts(self.gammas(x), u)[1]

    def hessian(self, x, u):
        return self.parts(self.gammas(x), u)[2]

    def F0(self, x, u):
        return self.parts0(self.gammas(x), u)[0]

    def f0(self, x, u):
        return self.parts0(self.gammas(x), u)[1]


def eval_F(model: NonlinearityModel, x, u):
    return model.F(np.atleast_2d(x), np.atleast_2d(u))


def eval_f(model: NonlinearityModel, x, u):
    return model.f(np.atleast_2d(x), np.atleast_2d(u))


def phi(model: NonlinearityModel, t, x, u, v):
    """(t^2-1)/2 <f0(u),u> + t <f0(u),v> + F0(u) - F0(tu+v), batched over rows."""
    x, u, v = np.atleast_2d(x), np.atleast_2d(u), np.atleast_2d(v)
    t = np.broadcast_to(np.asarray(t, dtype=float), (len(u),))
    gam = model.gammas(x)
    F0u, f0u, _ = model.parts0(gam, u)
    F0w = model.parts0(gam, t[:, None] * u + v)[0]
    fu = np.einsum("ni,ni->n", f0u, u)
    fv = np.einsum("ni,ni->n", f0u, v)
    return (t**2 - 1) / 2 * fu + t * fv + F0u - F0w


# -- integration over a quadrature space -------------------------------------------------

_BOUND: "weakref.WeakKeyDictionary[QuadratureSpace, dict]" = weakref.WeakKeyDictionary()


def _gammas_on(space: QuadratureSpace, model: NonlinearityModel):
    cache = _BOUND.setdefault(space, {})
    key = id(model)
    if key not in cache or cache[key][0] is not model:
        cache[key] = (model, model.gammas(space.points))
    return cache[key][1]


@dataclass
class NonlinearEvaluation:
    value: float
    gradient: np.ndarray
    hessian: sp.csr_matrix | None = None
    extra: dict = field(default_factory=dict)


def evaluate_on_space(
    space: QuadratureSpace, model: NonlinearityModel, e, hessian=False, point_hessians=False
) -> NonlinearEvaluation:
    u = space.field_at_points(e)
    vals, f, H = model.parts(_gammas_on(space, model), u)
    w = space.weights
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        q = bad[0]
        raise FloatingPointError(
            f"non-finite F at quadrature point {q} (element {space.element_of_point[q]}, x={space.points[q].tolist()})"
        )
    grad = space.values.T @ (w[:, None] * f).ravel()
    hess = None
    if hessian:
        E = space.values
        hess = (E.T @ blockdiag(w[:, None, None] * H) @ E).tocsr()
    extra = {"weighted_hessians": w[:, None, None] * H} if point_hessians else {}
    return NonlinearEvaluation(float(vals @ w), grad, hess, extra)


def integrate_F(space: QuadratureSpace, model: NonlinearityModel, e) -> float:
    return evaluate_on_space(space, model, e).value


def grad_F(space: QuadratureSpace, model: NonlinearityModel, e) -> np.ndarray:
    return evaluate_on_space(space, model, e).gradient


def hess_F(space: QuadratureSpace, model: NonlinearityModel, e) -> sp.csr_matrix:
    return evaluate_on_space(space, model, e, hessian=True).hessian


def lp_norm_p(space: QuadratureSpace, e, p: float) -> float:
    """Quadrature value of the integral of |u|^p."""
    u = space.field_at_points(e)
    return float(np.linalg.norm(u, axis=1) ** p @ space.weights)


# -- hypothesis checks ---------------------------------------------------------------------


def coercivity_constants(model: NonlinearityModel, V_cmin: float, x_samples=None) -> dict:
    """Constants of the lower bound 1/2 <V u,u> + F(u) >= d' |u|^p.

    ``d`` is 0.9 times the smallest value over sampled x of
    sum_{p_i = p} (1/p_i) sigma_min(Gamma_i)^{p_i}; ``Mrad`` is the radius past
    which F(u) >= d |u|^p holds despite the truncation.
    """
    p = model.p_growth
    if x_samples is None:
        x_samples = np.random.default_rng(0).random((256, 3))
    acc = np.zeros(len(x_samples))
    for t in model.terms:
        if t.p == p:
            smin = np.linalg.svd(t.gamma(x_samples), compute_uv=False)[:, -1]
            acc += smin**t.p / t.p
    d = 0.9 * acc.min()
    Mrad = model.delta / (1.0 - 0.9 ** (1.0 / p)) if model.delta > 0 else 0.0
    V0 = 0.5 * V_cmin
    d_prime = min(V0 * Mrad ** (2 - p), d) if Mrad > 0 else d
    return {"p": p, "d": d, "M": Mrad, "V0": V0, "d_prime": d_prime}


def _rand_ball(rng, n, radius):
    g = rng.standard_normal((n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return radius * rng.random(n)[:, None] ** (1 / 3) * g


def _slack_entry(slack, ok_tol=-1e-12):
    i = int(np.argmin(slack))
    return {"min_slack": float(slack[i]), "samples": int(len(slack)), "ok": bool(slack[i] >= ok_tol), "worst_index": i}


def check_hypotheses(model: NonlinearityModel, sample_budget: int = 10_000, seed: int = 0, box=None) -> dict:
    """Sampled worst-case relative slack of the structural inequalities.

    Every slack is ``(lhs - rhs) / max(1, |lhs|, |rhs|)`` for an inequality
    ``lhs >= rhs``; an entry is ``ok`` when its minimum is at least -1e-12.
    ``u`` and ``v`` are drawn uniformly from balls of radii 1e-3, 1 and 1e3.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = (np.zeros(3), np.ones(3)) if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
    radii = np.array([1e-3, 1.0, 1e3])
    n = sample_budget
    x = lo + (hi - lo) * rng.random((n, 3))
    rad_u = radii[rng.integers(0, 3, n)]
    rad_v = radii[rng.integers(0, 3, n)]
    u = _rand_ball(rng, n, 1.0) * rad_u[:, None]
    v = _rand_ball(rng, n, 1.0) * rad_v[:, None]
    t = 3.0 * rng.random(n)
    gam = model.gammas(x)
    F0u, f0u, _ = model.parts0(gam, u)
    Fu, fu, _ = model.parts(gam, u)
    nu = np.linalg.norm(u, axis=1)
    nf0 = np.linalg.norm(f0u, axis=1)
    f0_dot_u = np.einsum("ni,ni->n", f0u, u)
    f_dot_u = np.einsum("ni,ni->n", fu, u)
    p, gmin, eta = model.p_growth, model.gamma_AR, model.eta_AR

    def rel(lhs, rhs):
        return (lhs - rhs) / np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))

    report = {"model": model.name, "samples": n, "seed": seed, "delta": model.delta, "entries": {}}
    ent = report["entries"]

    # (F2): |f0(u)| <= C |u|^{gamma-1} on |u| <= 1, so |f0(u)| = o(|u|)
    C2 = sum(t_.gamma.norm_bound**t_.p for t_ in model.terms)
    small = nu <= 1.0
    ent["F2"] = _slack_entry(rel(C2 * nu[small] ** (gmin - 1), nf0[small]))
    ent["F2"]["constant"] = C2
    # (F3): |f0(u)| <= c (1 + |u|^{p-1})
    c3 = sum(t_.gamma.norm_bound**t_.p for t_ in model.terms)
    ent["F3"] = _slack_entry(rel(c3 * (1 + nu ** (p - 1)), nf0))
    ent["F3"]["constant"] = c3
    # (F4): F0(u) >= d |u|^p for large |u|
    cc = coercivity_constants(model, 1.0, x)
    big = nu >= 1e2
    if big.any():
        ent["F4"] = _slack_entry(rel(F0u[big], cc["d"] * nu[big] ** p))
    else:
        ent["F4"] = {"min_slack": float("nan"), "samples": 0, "ok": True, "worst_index": -1}
    ent["F4"]["constant"] = cc["d"]
    # (F5)(i): phi <= 0
    Fw = model.parts0(gam, t[:, None] * u + v)[0]
    f0v = np.einsum("ni,ni->n", f0u, v)
    terms = np.stack([(t**2 - 1) / 2 * f0_dot_u, t * f0v, F0u, Fw])
    ph = terms[0] + terms[1] + terms[2] - terms[3]
    ent["F5i"] = _slack_entry(-ph / np.maximum(1.0, np.abs(terms).max(axis=0)))
    # (F6)(i): midpoint convexity of F
    Fv = model.parts(gam, v)[0]
    Fm = model.parts(gam, 0.5 * (u + v))[0]
    ent["F6i"] = _slack_entry(rel(0.5 * (Fu + Fv), Fm))
    # (F7): <f0(u),u> >= gamma F0(u)
    ent["F7"] = _slack_entry(rel(f0_dot_u, gmin * F0u))
    ent["F7"]["gamma"] = gmin
    # (F8): eta F0(u) >= <f0(u),u> > 0
    ent["F8"] = _slack_entry(np.minimum(rel(eta * F0u, f0_dot_u), rel(f0_dot_u, 0.0)))
    ent["F8"]["strictly_positive"] = bool((f0_dot_u > 0).all())
    ent["F8"]["ok"] = ent["F8"]["ok"] and ent["F8"]["strictly_positive"]
    ent["F8"]["eta"] = eta
    # <f(u),u> >= 2 F(u) on the truncated model (t = 0, v = 0 in phi)
    ent["f_dot_u_ge_2F"] = _slack_entry(rel(f_dot_u, 2 * Fu))
    # evenness
    Fneg = model.parts(gam, -u)[0]
    ent["even"] = {"max_abs_diff": float(np.abs(Fneg - Fu).max()), "ok": bool(np.array_equal(Fneg, Fu))}
    # phi(1, x, u, 0) = 0 exactly
    ph1 = phi(model, 1.0, x[:200], u[:200], np.zeros((min(n, 200), 3)))
    ent["phi_t1_v0"] = {"max_abs": float(np.abs(ph1).max()), "ok": bool(np.all(ph1 == 0.0))}

    if model.delta > 0:
        # the structural conditions are stated for F0; with truncation F != F0 near 0
        ent["F7"]["structural"] = "truncated model: F differs from F0 inside and near the truncation ball"
        ent["F7"]["ok"] = False
        shell = np.abs(nu - model.delta) <= 0.5 * model.delta
        un = _rand_ball(rng, n, 1.0)
        un = un / np.linalg.norm(un, axis=1, keepdims=True) * (model.delta * (1 + 0.5 * rng.random(n)))[:, None]
        xs = lo + (hi - lo) * rng.random((n, 3))
        gs = model.gammas(xs)
        Fs, fs, _ = model.parts(gs, un)
        fus = np.einsum("ni,ni->n", fs, un)
        e = _slack_entry(np.minimum(rel(eta * Fs, fus), rel(fus, 0.0)))
        e["strictly_positive"] = bool((fus > 0).all())
        e["ok"] = e["ok"] and e["strictly_positive"]
        e["note"] = "(F8) evaluated on the truncated F near the shell |u| in (delta, 1.5 delta]"
        ent["F8_truncated"] = e
        e7 = _slack_entry(rel(fus, gmin * Fs))
        e7["note"] = "(F7) evaluated on the truncated F near the shell"
        ent["F7_truncated"] = e7
        report["near_shell_samples"] = int(shell.sum())
    report["violations"] = sorted(k for k, e in ent.items() if not e["ok"])
    return report
