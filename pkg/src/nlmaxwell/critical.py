"""Critical points of strongly indefinite functionals J = 1/2 |u+|^2 - I(u).

The engine only talks to an :class:`IndefiniteProblem`, so the same code
runs on the Maxwell discretization (:class:`FieldProblem`) and on small
dense testbeds (:class:`DenseProblem`).

Layers:
  * ``fiber_maximize_m``: maximize J on the affine fiber u+ + X~ (Newton).
  * ``nehari_point_n``: maximize beta(t) = J(m(t u)) over t > 0.
  * ``minimize_on_nehari``: minimize psi(u) = J(n(u)) on the unit sphere of X+.
  * ``mountain_pass_cM``: climbing-image string method on J o m.
"""

from __future__ import annotations

import csv
import math
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FieldVector, MaxwellOperators, blockdiag, coeffs
from .nonlinearity import NonlinearityModel, evaluate_on_space
from .spectrum import SplitBases, saddle_solve

CLASSIFICATIONS = ("nehari_ground", "mountain_pass", "fiber_only")


class NonConcavityError(RuntimeError):
    """The fiber Hessian is not negative definite (I is not strictly convex there)."""


class NehariError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------------------------------
# problem interface


class IndefiniteProblem(ABC):
    """Functional on X = X+ (+) X~ with coordinates (u+, z) for the fiber."""

    dim_plus: int
    dim_tilde: int

    @abstractmethod
    def compose(self, up: np.ndarray, z: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def plus_part(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def energy(self, x: np.ndarray) -> float: ...

    @abstractmethod
    def plus_gradient(self, x: np.ndarray) -> np.ndarray:
        """Riesz representative in X+ of J'(x) restricted to X+."""

    @abstractmethod
    def plus_inner(self, a: np.ndarray, b: np.ndarray) -> float: ...

    @abstractmethod
    def directional(self, x: np.ndarray, h: np.ndarray) -> float:
        """J'(x)[h]."""

    @abstractmethod
    def fiber_gradient(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def fiber_hessian(self, x: np.ndarray): ...

    @abstractmethod
    def residual_norm(self, x: np.ndarray) -> float: ...

    def plus_norm_sq(self, up: np.ndarray) -> float:
        """The quadratic |u+|^2 appearing in J; defaults to the Riesz metric."""
        return self.plus_inner(up, up)

    def I(self, x: np.ndarray) -> float:
        return 0.5 * self.plus_norm_sq(self.plus_part(x)) - self.energy(x)

    def full_hessian(self, x: np.ndarray):
        return None

    def zero_fiber(self) -> np.ndarray:
        return np.zeros(self.dim_tilde)

    def zero(self) -> np.ndarray:
        return self.compose(np.zeros(self.dim_plus_coords), self.zero_fiber())

    def random_plus(self, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(self.dim_plus_coords)

    @property
    def dim_plus_coords(self) -> int:
        return self.dim_plus

    def normalize(self, u: np.ndarray) -> np.ndarray:
        nrm = math.sqrt(self.plus_inner(u, u))
        if nrm == 0.0:
            raise ValueError("zero direction in X+")
        return u / nrm


class DenseProblem(IndefiniteProblem):
    """J on R^d with X+ = first ``n_plus`` coordinates and X~ = the rest.

    ``plus_metric`` is the positive diagonal D of the quadratic 1/2 x+^T D x+;
    it is also the Riesz metric on X+.  The full inner product is Euclidean.
    """

    def __init__(self, energy, gradient, hessian, n_plus, plus_metric=None, name="dense"):
        self._J, self._g, self._H = energy, gradient, hessian
        self.dim_plus = int(n_plus)
        self.name = name
        self.D = np.ones(n_plus) if plus_metric is None else np.asarray(plus_metric, dtype=float)

    def set_dim(self, d):
        self.dim_tilde = d - self.dim_plus
        return self

    def compose(self, up, z):
        return np.concatenate([up, z])

    def plus_part(self, x):
        return x[: self.dim_plus].copy()

    def energy(self, x):
        return float(self._J(x))

    def plus_gradient(self, x):
        return self._g(x)[: self.dim_plus] / self.D

    def plus_inner(self, a, b):
        return float(np.sum(a * self.D * b))

    def directional(self, x, h):
        return float(self._g(x)[: self.dim_plus] @ h)

    def fiber_gradient(self, x):
        return self._g(x)[self.dim_plus :]

    def fiber_hessian(self, x):
        return self._H(x)[self.dim_plus :, self.dim_plus :]

    def residual_norm(self, x):
        return float(np.linalg.norm(self._g(x)))

    def full_hessian(self, x):
        return self._H(x)

    def gradient(self, x):
        return self._g(x)


def power_testbed(plus_diag, tilde_diag, gammas, ps, name="power") -> DenseProblem:
    """J(x) = 1/2 x+^T D x+ - 1/2 x~^T N x~ - sum_k (1/p_k) |Gamma_k x|^{p_k}.

    ``tilde_diag`` (N) must be >= 0 so that I is convex; the power terms make it
    strictly convex.
    """
    D = np.asarray(plus_diag, dtype=float)
    N = np.asarray(tilde_diag, dtype=float)
    if (D <= 0).any() or (N < 0).any():
        raise ValueError("need D > 0 and N >= 0")
    npl = len(D)
    Q = np.concatenate([D, -N])
    gam = [np.asarray(G, dtype=float) for G in gammas]

    def J(x):
        val = 0.5 * np.sum(Q * x * x)
        for G, p in zip(gam, ps):
            val -= np.linalg.norm(G @ x) ** p / p
        return val

    def grad(x):
        g = Q * x
        for G, p in zip(gam, ps):
            y = G @ x
            r = np.linalg.norm(y)
            if r > 0:
                g = g - r ** (p - 2) * (G.T @ y)
        return g

    def hess(x):
        H = np.diag(Q)
        for G, p in zip(gam, ps):
            y = G @ x
            r = np.linalg.norm(y)
            if r > 0:
                Gy = G.T @ y
                H = H - r ** (p - 2) * (G.T @ G) - (p - 2) * r ** (p - 4) * np.outer(Gy, Gy)
        return H

    return DenseProblem(J, grad, hess, npl, D, name).set_dim(len(Q))


class FieldProblem(IndefiniteProblem):
    """Discrete Maxwell functional J(e) = 1/2 e^T A e - 1/2 e^T M e - int F(e).

    X+ = V+ with the A inner product, X~ = Ṽ (+) W with fiber coordinates
    z = (c, q) meaning Ṽ c + G q.  Works for any space with an
    :class:`MaxwellOperators` bundle, including the meridian reductions.
    """

    def __init__(self, ops: MaxwellOperators, model: NonlinearityModel, bases: SplitBases, dense_limit=2500):
        self.ops = ops
        self.model = model
        self.bases = bases
        self.space = ops.space
        self.Vt = bases.tilde
        self.k = self.Vt.shape[1]
        self.npot = ops.n_potentials
        self.dim_tilde = self.k + self.npot
        self.dim_plus = ops.n - self.dim_tilde
        self.dense_limit = dense_limit
        self._AVt = ops.A @ self.Vt
        self._MVt = ops.M @ self.Vt
        self._tls = threading.local()

    @property
    def dim_plus_coords(self):
        return self.ops.n

    # one-point cache per thread, keyed on the coefficient bytes
    def _eval(self, x, hessian=False, point_hessians=False):
        key = x.tobytes()
        tls = self._tls
        if getattr(tls, "key", None) != key:
            tls.key, tls.cache = key, {}
        flag = (hessian, point_hessians)
        if flag not in tls.cache:
            tls.cache[flag] = evaluate_on_space(self.space, self.model, x, hessian, point_hessians)
        return tls.cache[flag]

    def compose(self, up, z):
        x = np.array(up, dtype=float, copy=True)
        if self.k:
            x += self.Vt @ z[: self.k]
        if self.npot:
            x += self.ops.G @ z[self.k :]
        return x

    def plus_part(self, x):
        return self.bases.project_plus(x)

    def covector(self, x):
        return self.ops.A @ x - self.ops.M @ x - self._eval(x).gradient

    def energy(self, x):
        return float(0.5 * x @ (self.ops.A @ x) - 0.5 * x @ (self.ops.M @ x) - self._eval(x).value)

    def plus_gradient(self, x):
        v, _ = saddle_solve(self.ops, self.covector(x))
        if self.k:
            v = v - self.Vt @ (self._MVt.T @ v)
        return v

    def plus_inner(self, a, b):
        return float(a @ (self.ops.A @ b))

    def plus_norm_sq(self, up):
        return float(up @ (self.ops.A @ up) - up @ (self.ops.M @ up))

    def directional(self, x, h):
        return float(self.covector(x) @ h)

    def fiber_gradient(self, x):
        r = self.covector(x)
        parts = []
        if self.k:
            parts.append(self.Vt.T @ r)
        if self.npot:
            parts.append(self.ops.G.T @ r)
        return np.concatenate(parts) if parts else np.zeros(0)

    def full_hessian(self, x):
        return (self.ops.A - self.ops.M - self._eval(x, hessian=True).hessian).tocsr()

    def _fiber_constants(self):
        if not hasattr(self, "_fc"):
            A, M, G, Vt = self.ops.A, self.ops.M, self.ops.G, self.Vt
            E = self.space.values
            L = (A - M).tocsr()
            fc = {"EG": (E @ G).tocsr(), "EVt": np.asarray(E @ Vt).reshape(-1, 3, self.k) if self.k else None}
            fc["gg"] = (G.T @ L @ G).toarray() if self.npot else None
            fc["tt"] = Vt.T @ (L @ Vt) if self.k else None
            fc["tg"] = np.asarray((L @ G).T @ Vt).T if (self.k and self.npot) else None
            self._fc = fc
        return self._fc

    def fiber_hessian(self, x):
        """Exact Hessian of J in the fiber coordinates z = (c, q)."""
        fc = self._fiber_constants()
        Hw = self._eval(x, point_hessians=True).extra["weighted_hessians"]
        k = self.k
        out = np.zeros((self.dim_tilde, self.dim_tilde))
        if self.npot:
            NG = blockdiag(Hw) @ fc["EG"]
            gg = fc["gg"] - (fc["EG"].T @ NG).toarray()
            out[k:, k:] = 0.5 * (gg + gg.T)
        if k:
            EVt = fc["EVt"]
            HE = np.einsum("nij,njk->nik", Hw, EVt)
            tt = fc["tt"] - np.einsum("nik,nil->kl", EVt, HE)
            out[:k, :k] = 0.5 * (tt + tt.T)
            if self.npot:
                tg = fc["tg"] - np.asarray(NG.T @ EVt.reshape(-1, k)).T
                out[:k, k:] = tg
                out[k:, :k] = tg.T
        if self.dim_tilde > self.dense_limit:
            return sp.csc_matrix(out)
        return out

    def _riesz_solver(self):
        if "riesz" not in self.ops.cache:
            self.ops.cache["riesz"] = spla.splu((self.ops.A + self.ops.M).tocsc())
        return self.ops.cache["riesz"]

    def residual_norm(self, x):
        r = self.covector(x)
        return float(math.sqrt(max(r @ self._riesz_solver().solve(r), 0.0)))

    def random_plus(self, rng):
        """Random combination of low V+ eigenmodes plus a little projected noise."""
        split_vecs = self.bases.plus_modes
        noise = self.bases.project_plus(rng.standard_normal(self.ops.n))
        noise /= math.sqrt(max(self.plus_inner(noise, noise), 1e-300))
        if split_vecs is None or split_vecs.shape[1] == 0:
            return noise
        c = rng.standard_normal(split_vecs.shape[1])
        u = split_vecs @ c
        u /= math.sqrt(self.plus_inner(u, u))
        return u + 0.1 * noise

    def decompose(self, x) -> dict:
        """Helmholtz split and Q(v), int F, norms of the parts for reporting."""
        from .decomposition import helmholtz_project
        from .spectrum import eval_Q

        hs = helmholtz_project(self.ops, x)
        v, w = hs.v_part.coefficients, hs.w_part.coefficients
        return {
            "v": v,
            "w": w,
            "norm_v": math.sqrt(max(self.ops.energy_norm_sq(v), 0.0)),
            "norm_w": math.sqrt(max(float(w @ (self.ops.M @ w)), 0.0)),
            "Q_v": eval_Q(self.ops, v),
            "int_F": self._eval(x).value,
            "orthogonality": hs.orthogonality_residual(self.ops),
        }


# ---------------------------------------------------------------------------------------
# fiber maximization


def _neg_def_solver(H):
    """Return a solver for (-H) s = g, raising if -H is not positive definite."""
    if sp.issparse(H):
        Hn = (-H).tocsc()
        lu = spla.splu(Hn, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
        d = lu.U.diagonal()
        if not np.all(d > 0):
            raise NonConcavityError(f"fiber Hessian has {int(np.sum(d <= 0))} non-negative curvature directions")
        return lu.solve
    Hn = -0.5 * (H + H.T)
    try:
        c = scipy.linalg.cho_factor(Hn, lower=True)
    except np.linalg.LinAlgError as exc:
        ev = np.linalg.eigvalsh(Hn)
        raise NonConcavityError(
            f"fiber Hessian not negative definite: largest curvature {-ev[0]:.3e} along X~"
        ) from exc
    return lambda g: scipy.linalg.cho_solve(c, g)


@dataclass
class FiberResult:
    x: np.ndarray
    z: np.ndarray
    energy: float
    decrement: float
    iterations: int


def fiber_maximize_m(problem: IndefiniteProblem, up, z0=None, tol=1e-10, maxiter=60) -> FiberResult:
    """Maximizer m(u+) of J on u+ + X~ by damped Newton on the concave restriction."""
    up = np.asarray(up, dtype=float)
    z = problem.zero_fiber() if z0 is None else np.array(z0, dtype=float)
    x = problem.compose(up, z)
    Jx = problem.energy(x)
    if problem.dim_tilde == 0:
        return FiberResult(x, z, Jx, 0.0, 0)
    dec = np.inf
    for it in range(maxiter):
        g = problem.fiber_gradient(x)
        if not np.any(g):
            return FiberResult(x, z, Jx, 0.0, it)
        s = _neg_def_solver(problem.fiber_hessian(x))(g)
        dec2 = float(g @ s)
        if dec2 < 0:
            raise NonConcavityError("negative Newton decrement on the fiber")
        new_dec = math.sqrt(dec2)
        scale = max(1.0, abs(Jx))
        if dec2 <= 1e-10 * scale:
            # quadratic regime: take the full step, line search would only see rounding
            z = z + s
            x = problem.compose(up, z)
            Jx = problem.energy(x)
            if new_dec <= tol * math.sqrt(scale) or new_dec >= 0.5 * dec:
                return FiberResult(x, z, Jx, new_dec, it + 1)
            dec = new_dec
            continue
        dec = new_dec
        alpha = 1.0
        for _ in range(60):
            zt = z + alpha * s
            xt = problem.compose(up, zt)
            Jt = problem.energy(xt)
            if math.isfinite(Jt) and Jt >= Jx + 1e-4 * alpha * dec2:
                break
            alpha *= 0.5
        else:
            raise NonConcavityError("fiber line search failed to increase J")
        z, x, Jx = zt, xt, Jt
    raise ConvergenceError(f"fiber Newton did not converge in {maxiter} steps (decrement {dec:.3e})")


# ---------------------------------------------------------------------------------------
# Nehari point


@dataclass
class NehariPoint:
    t: float
    x: np.ndarray
    z: np.ndarray
    energy: float
    dbeta: float
    evaluations: int


class _Beta:
    """beta(t) = J(m(t u)) with warm-started fibers."""

    def __init__(self, problem, u, fiber_tol):
        self.problem, self.u, self.fiber_tol = problem, u, fiber_tol
        self.last = None  # (t, z)
        self.count = 0

    def __call__(self, t):
        z0 = None
        if self.last is not None and self.last[0] > 0:
            z0 = self.last[1] * (t / self.last[0])
        fr = fiber_maximize_m(self.problem, t * self.u, z0, self.fiber_tol)
        self.last = (t, fr.z)
        self.count += 1
        return fr, self.problem.directional(fr.x, self.u)


def nehari_point_n(problem: IndefiniteProblem, u, t0=1.0, z0=None, fiber_tol=1e-10, rtol=1e-12, maxexpand=80) -> NehariPoint:
    """Maximize beta_u(t) = J(m(t u)) over t > 0 for a unit direction ``u`` in X+."""
    beta = _Beta(problem, np.asarray(u, dtype=float), fiber_tol)
    if z0 is not None:
        beta.last = (t0, z0)
    t = float(t0)
    fr, d = beta(t)
    lo = hi = None
    if d > 0:
        lo = (t, d, fr)
        for _ in range(maxexpand):
            t *= 2.0
            fr, d = beta(t)
            if d < 0:
                hi = (t, d, fr)
                break
            lo = (t, d, fr)
        else:
            raise NehariError("beta_u' stays positive: no maximum along the ray")
    else:
        hi = (t, d, fr)
        for _ in range(maxexpand):
            t *= 0.5
            fr, d = beta(t)
            if d > 0:
                lo = (t, d, fr)
                break
            hi = (t, d, fr)
        else:
            raise NehariError("beta_u' is not positive near t = 0")
    if hi[1] == 0:
        best = hi
    else:
        best = _illinois(beta, lo, hi, rtol)
    t, d, fr = best
    if fr.energy <= 0:
        raise NehariError(f"beta_u has no positive maximum (beta(t_u) = {fr.energy:.3e})")
    return NehariPoint(t, fr.x, fr.z, fr.energy, d, beta.count)


def _illinois(beta, lo, hi, rtol, maxiter=200):
    (a, fa, ra), (b, fb, rb) = lo, hi
    side = 0
    best = lo if abs(fa) < abs(fb) else hi
    for _ in range(maxiter):
        c = (a * fb - b * fa) / (fb - fa)
        if not (min(a, b) < c < max(a, b)):
            c = 0.5 * (a + b)
        if side != 0 and abs(b - a) > 0.5 * abs(best[0]):
            # guard against slow one-sided convergence far from the root
            c = 0.5 * (c + 0.5 * (a + b))
        rc, fc = beta(c)
        if abs(fc) < abs(best[1]):
            best = (c, fc, rc)
        if abs(fc) <= rtol * max(1.0, abs(rc.energy)) or abs(b - a) <= 4e-16 * abs(c):
            return (c, fc, rc)
        if fc > 0:
            a, fa, ra = c, fc, rc
            if side == 1:
                fb *= 0.5
            side = 1
        else:
            b, fb, rb = c, fc, rc
            if side == -1:
                fa *= 0.5
            side = -1
    return best


# ---------------------------------------------------------------------------------------
# results


@dataclass
class CriticalPointResult:
    x: np.ndarray
    energy: float
    residual: float
    classification: str
    converged: bool
    trace: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def field(self) -> FieldVector:
        return FieldVector(self.x, "full")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "energy", "residual", "t_u", "step"])
        for row in trace:
            w.writerow([row["iter"], repr(float(row["energy"])), f"{row['residual']:.6e}", repr(float(row.get("t_u", float("nan")))), f"{row.get('step', 0.0):.6e}"])


def residual_norm(problem: IndefiniteProblem, x) -> float:
    return problem.residual_norm(np.asarray(coeffs(x), dtype=float))


# ---------------------------------------------------------------------------------------
# Nehari minimization


def minimize_on_nehari(
    problem: IndefiniteProblem,
    start,
    tol: float = 1e-7,
    maxiter: int = 2000,
    fiber_tol: float = 1e-10,
    memory: int = 5,
) -> CriticalPointResult:
    """Riemannian gradient descent (BB steps, nonmonotone Armijo) of psi(u) = J(n(u))."""
    u = problem.normalize(np.asarray(start, dtype=float))
    npt = nehari_point_n(problem, u, fiber_tol=fiber_tol)
    history = [npt.energy]
    trace = []
    u_prev = rg_prev = None
    step = 0.0
    alpha = None
    evals = npt.evaluations
    status = "max_iterations"
    for it in range(maxiter + 1):
        g = npt.t * problem.plus_gradient(npt.x)
        rg = g - problem.plus_inner(g, u) * u
        gn2 = problem.plus_inner(rg, rg)
        res = problem.residual_norm(npt.x)
        trace.append({"iter": it, "energy": npt.energy, "residual": res, "t_u": npt.t, "step": step})
        if res <= tol:
            status = "converged"
            break
        if it == maxiter:
            break
        if rg_prev is None:
            alpha = 0.2 / math.sqrt(gn2)
        else:
            s = u - u_prev
            y = rg - rg_prev
            sy = problem.plus_inner(s, y)
            alpha = problem.plus_inner(s, s) / sy if sy > 0 else 2.0 * alpha
        alpha = min(alpha, 0.5 / math.sqrt(gn2))
        ref = max(history[-memory:])
        noise = 1e-14 * max(1.0, abs(npt.energy))
        accepted = None
        for _ in range(50):
            un = problem.normalize(u - alpha * rg)
            try:
                cand = nehari_point_n(problem, un, t0=npt.t, z0=npt.z, fiber_tol=fiber_tol)
            except (NehariError, NonConcavityError):
                alpha *= 0.5
                continue
            evals += cand.evaluations
            decrease = 1e-4 * alpha * gn2
            if cand.energy <= ref - decrease or (decrease < noise and cand.energy <= npt.energy + noise):
                accepted = (un, cand)
                break
            alpha *= 0.5
        if accepted is None:
            status = "stagnation"
            break
        u_prev, rg_prev = u, rg
        u, npt = accepted
        step = alpha * math.sqrt(gn2)
        history.append(npt.energy)
    result = CriticalPointResult(
        x=npt.x,
        energy=npt.energy,
        residual=trace[-1]["residual"],
        classification="nehari_ground",
        converged=status == "converged",
        trace=trace,
        extra={"status": status, "t_u": npt.t, "direction": u, "fiber_evaluations": evals},
    )
    return result


def _mirror(problem, result, fiber_tol):
    """Energy of n(-u); equals the original for even nonlinearities."""
    u = result.extra["direction"]
    m = nehari_point_n(problem, -u, t0=result.extra["t_u"], fiber_tol=fiber_tol)
    return m


def ground_state(
    problem: IndefiniteProblem,
    n_starts: int = 10,
    seed: int = 0,
    tol: float = 1e-7,
    threads: int = 1,
    starts=None,
    maxiter: int = 2000,
    even: bool = True,
) -> CriticalPointResult:
    """Multi-start Nehari minimization; returns the lowest converged energy found."""
    rng = np.random.default_rng(seed)
    if starts is None:
        starts = [problem.random_plus(rng) for _ in range(n_starts)]

    def run(s):
        try:
            return minimize_on_nehari(problem, s, tol=tol, maxiter=maxiter)
        except (NehariError, NonConcavityError, ConvergenceError) as exc:
            return exc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]
    ok = [r for r in results if isinstance(r, CriticalPointResult)]
    conv = [r for r in ok if r.converged]
    pool_ = conv or ok
    if not pool_:
        raise ConvergenceError(f"all {len(starts)} starts failed: {results[0]}")
    best = min(pool_, key=lambda r: r.energy)
    best.extra["start_energies"] = [r.energy if isinstance(r, CriticalPointResult) else None for r in results]
    best.extra["start_residuals"] = [r.residual if isinstance(r, CriticalPointResult) else None for r in results]
    best.extra["n_converged"] = len(conv)
    m = _mirror(problem, best, 1e-10)
    best.extra["mirror_energy"] = m.energy
    if not even and m.energy < best.energy:
        best.x, best.energy = m.x, m.energy
        best.residual = problem.residual_norm(m.x)
    if not best.converged:
        raise ConvergenceError(
            f"no start reached residual {tol:g}; best residual {best.residual:.3e} ({best.extra['status']})", best
        )
    return best


# ---------------------------------------------------------------------------------------
# positive-energy gate


def estimate_linking_level(problem: IndefiniteProblem, radii, n_starts=4, seed=0, iters=200) -> dict:
    """Estimate a(r) = inf{J(u) : u in X+, |u| = r} by projected descent, for each r."""
    rng = np.random.default_rng(seed)
    z0 = problem.zero_fiber()
    out = []
    for r in radii:
        best = np.inf
        for _ in range(n_starts):
            u = problem.normalize(problem.random_plus(rng))
            val = problem.energy(problem.compose(r * u, z0))
            alpha = None
            u_prev = g_prev = None
            for _ in range(iters):
                x = problem.compose(r * u, z0)
                g = r * problem.plus_gradient(x)
                g = g - problem.plus_inner(g, u) * u
                gn = math.sqrt(problem.plus_inner(g, g))
                if gn <= 1e-10 * max(1.0, abs(val)):
                    break
                if g_prev is None:
                    alpha = 0.1 / gn
                else:
                    s, y = u - u_prev, g - g_prev
                    sy = problem.plus_inner(s, y)
                    alpha = problem.plus_inner(s, s) / sy if sy > 0 else alpha
                alpha = min(alpha, 0.5 / gn)
                for _ in range(40):
                    un = problem.normalize(u - alpha * g)
                    vn = problem.energy(problem.compose(r * un, z0))
                    if vn <= val - 1e-4 * alpha * gn * gn:
                        break
                    alpha *= 0.5
                else:
                    break
                u_prev, g_prev, u, val = u, g, un, vn
            best = min(best, val)
        out.append(best)
    vals = np.array(out)
    i = int(np.argmax(vals))
    return {"radii": list(map(float, radii)), "a_of_r": vals.tolist(), "a": float(max(vals.max(), 0.0)), "r": float(radii[i])}


# ---------------------------------------------------------------------------------------
# Newton polish on the full space


def newton_polish(problem: IndefiniteProblem, x, tol, maxiter=8):
    """Plain Newton on J'(x) = 0; returns (x, residual, steps) and never worsens the residual."""
    res = problem.residual_norm(x)
    steps = 0
    for _ in range(maxiter):
        if res <= tol:
            break
        H = problem.full_hessian(x)
        if H is None:
            break
        g = problem.covector(x) if hasattr(problem, "covector") else problem.gradient(x)
        try:
            dx = spla.spsolve(H.tocsc(), -g) if sp.issparse(H) else np.linalg.solve(H, -g)
        except (np.linalg.LinAlgError, RuntimeError):
            break
        xn = x + dx
        rn = problem.residual_norm(xn)
        if not rn < res:
            break
        x, res = xn, rn
        steps += 1
    return x, res, steps


# ---------------------------------------------------------------------------------------
# mountain pass on J o m


def far_point(problem: IndefiniteProblem, u, fiber_tol=1e-10):
    """Scale the unit direction u until J(m(t u)) < 0; returns t u."""
    u = problem.normalize(np.asarray(u, dtype=float))
    npt = nehari_point_n(problem, u, fiber_tol=fiber_tol)
    t = 2.0 * npt.t
    z = npt.z * 2.0
    for _ in range(60):
        fr = fiber_maximize_m(problem, t * u, z, fiber_tol)
        if fr.energy < 0:
            return t * u
        t *= 1.5
        z = fr.z * 1.5
    raise NehariError("could not find a point with J(m(t u)) < 0")


def _reparametrize(problem, nodes, lo, hi):
    """Equal-arclength redistribution of nodes[lo..hi] keeping the ends fixed."""
    seg = nodes[lo : hi + 1]
    if len(seg) <= 2:
        return
    d = [math.sqrt(max(problem.plus_inner(b - a, b - a), 0.0)) for a, b in zip(seg[:-1], seg[1:])]
    s = np.concatenate([[0.0], np.cumsum(d)])
    if s[-1] == 0:
        return
    targets = np.linspace(0.0, s[-1], len(seg))
    new = [seg[0]]
    for tt in targets[1:-1]:
        j = min(int(np.searchsorted(s, tt, side="right")) - 1, len(seg) - 2)
        w = (tt - s[j]) / (s[j + 1] - s[j]) if s[j + 1] > s[j] else 0.0
        new.append((1 - w) * seg[j] + w * seg[j + 1])
    new.append(seg[-1])
    nodes[lo : hi + 1] = new


def mountain_pass_cM(
    problem: IndefiniteProblem,
    start_far,
    tol: float = 1e-7,
    n_nodes: int = 17,
    step: float = 0.3,
    maxiter: int = 3000,
    polish_below: float = 1e-3,
    fiber_tol: float = 1e-10,
) -> CriticalPointResult:
    """Climbing-image string method for c_M = inf over paths of max J o m."""
    end = np.asarray(start_far, dtype=float)
    f_end = fiber_maximize_m(problem, end, None, fiber_tol)
    if f_end.energy >= 0:
        raise ValueError(f"J(m(start_far)) = {f_end.energy:.3e} must be negative")
    nodes = [s * end for s in np.linspace(0.0, 1.0, n_nodes)]
    zs = [None] * n_nodes
    trace = []
    status = "max_iterations"
    climb = None
    for it in range(maxiter + 1):
        energies = np.zeros(n_nodes)
        grads = [None] * n_nodes
        xs = [None] * n_nodes
        for i in range(1, n_nodes - 1):
            z0 = zs[i]
            fr = fiber_maximize_m(problem, nodes[i], z0, fiber_tol)
            zs[i] = fr.z
            xs[i] = fr.x
            energies[i] = fr.energy
            grads[i] = problem.plus_gradient(fr.x)
        energies[-1] = f_end.energy
        climb = int(np.argmax(energies[1:-1])) + 1
        if energies[climb] <= 0:
            raise ConvergenceError("string collapsed: no positive energy along the path")
        res = problem.residual_norm(xs[climb])
        trace.append({"iter": it, "energy": energies[climb], "residual": res, "t_u": float("nan"), "step": step})
        if res <= tol:
            status = "converged"
            break
        if res <= polish_below * max(1.0, abs(energies[climb])) and problem.full_hessian(xs[climb]) is not None:
            xp, rp, k = newton_polish(problem, xs[climb], tol)
            if rp <= tol and abs(problem.energy(xp) - energies[climb]) <= 1e-4 * abs(energies[climb]):
                xs[climb] = xp
                energies[climb] = problem.energy(xp)
                trace.append({"iter": it, "energy": energies[climb], "residual": rp, "t_u": float("nan"), "step": 0.0})
                status = "converged"
                res = rp
                break
        if it == maxiter:
            break
        tau = nodes[climb + 1] - nodes[climb - 1]
        tau = tau / math.sqrt(max(problem.plus_inner(tau, tau), 1e-300))
        length = sum(
            math.sqrt(max(problem.plus_inner(b - a, b - a), 0.0)) for a, b in zip(nodes[:-1], nodes[1:])
        )
        max_move = 0.5 * length / (n_nodes - 1)
        for i in range(1, n_nodes - 1):
            g = grads[i]
            if i == climb:
                g = g - 2.0 * problem.plus_inner(g, tau) * tau
            move = step * math.sqrt(max(problem.plus_inner(g, g), 0.0))
            scale = min(1.0, max_move / move) if move > 0 else 1.0
            nodes[i] = nodes[i] - step * scale * g
        _reparametrize(problem, nodes, 0, climb)
        _reparametrize(problem, nodes, climb, n_nodes - 1)
    return CriticalPointResult(
        x=xs[climb],
        energy=float(energies[climb]),
        residual=float(res),
        classification="mountain_pass",
        converged=status == "converged",
        trace=trace,
        extra={"status": status, "path_energies": energies.tolist(), "climbing_index": climb},
    )
