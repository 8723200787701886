"""Maxwell source problem, divergence-constrained eigenpairs and the spectral split.

The source operator ``K`` solves the saddle-point system

    [ A      M G ] [v]   [M g]
    [ G^T M   0  ] [q] = [ 0 ]

so that ``v`` lies in V (``G^T M v = 0``).  Used as ``OPinv`` inside ARPACK's
shift-invert mode at sigma = 0, it removes the gradient kernel of ``A``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .decomposition import project_to_V
from .fem import TOL_DIV, FieldVector, MaxwellOperators, coeffs

DENSE_LIMIT = 2000


class SaddlePointError(RuntimeError):
    pass


class EigenSolverError(RuntimeError):
    def __init__(self, message, eigenvalues=None, residuals=None):
        super().__init__(message)
        self.eigenvalues = eigenvalues
        self.residuals = residuals


class InsufficientSpectrumError(ValueError):
    pass


def _saddle_matrix(ops: MaxwellOperators) -> sp.csc_matrix:
    MG = (ops.M @ ops.G).tocsr()
    k = ops.n_potentials
    return sp.bmat([[ops.A, MG], [MG.T, sp.csr_matrix((k, k))]], format="csc")


def _inertia(K: sp.spmatrix) -> tuple[int, int, int]:
    ev = np.linalg.eigvalsh(K.toarray())
    tol = 1e-10 * max(abs(ev).max(), 1.0)
    return int((ev > tol).sum()), int((ev < -tol).sum()), int((abs(ev) <= tol).sum())


def saddle_factor(ops: MaxwellOperators):
    """LU factorization of the saddle-point matrix (cached on ``ops``)."""
    if "saddle" not in ops.cache:
        K = _saddle_matrix(ops)
        try:
            lu = spla.splu(K, permc_spec="COLAMD")
        except RuntimeError as exc:
            msg = f"singular saddle-point system of size {K.shape[0]}"
            if K.shape[0] <= DENSE_LIMIT:
                pos, neg, zero = _inertia(K)
                msg += f"; inertia (+{pos}, -{neg}, 0:{zero}), expected (+{ops.n}, -{ops.n_potentials}, 0:0)"
            raise SaddlePointError(msg) from exc
        ops.cache["saddle"] = lu
    return ops.cache["saddle"]


def saddle_solve(ops: MaxwellOperators, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve with edge right-hand side ``rhs`` (already a covector); returns (v, q)."""
    n = ops.n
    b = np.zeros(n + ops.n_potentials)
    b[:n] = rhs
    x = saddle_factor(ops).solve(b)
    return x[:n], x[n:]


def solve_source(ops: MaxwellOperators, g) -> tuple[FieldVector, FieldVector]:
    """Return ``(v, w)`` with ``v = K g`` in V and ``w = G q`` the multiplier field."""
    v, q = saddle_solve(ops, ops.M @ coeffs(g))
    return FieldVector(v, "V"), FieldVector(ops.G @ q, "W")


@dataclass
class SpectralSplit:
    """Ascending eigenpairs of ``A v = lambda M v`` on V, M-orthonormal."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # (n, K)
    residuals: np.ndarray
    div_residuals: np.ndarray
    near_one_tol: float
    method: str = "arpack"
    info: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def n_tilde(self) -> int:
        return int(np.sum(self.eigenvalues <= 1.0 + self.near_one_tol))

    @property
    def split_index(self) -> int:
        """Least 1-based k with lambda_k > 1 + near_one_tol."""
        return self.n_tilde + 1

    @property
    def n_kernel(self) -> int:
        return int(np.sum(np.abs(self.eigenvalues - 1.0) <= self.near_one_tol))

    def vector(self, k: int) -> FieldVector:
        return FieldVector(self.eigenvectors[:, k], "V")


@dataclass
class SplitBases:
    """Ṽ and V₀ bases plus an implicit V⁺ projector."""

    ops: MaxwellOperators
    tilde: np.ndarray
    tilde_eigenvalues: np.ndarray
    kernel: np.ndarray
    lambda_m: float
    lambda_below: float | None
    plus_modes: np.ndarray | None = None

    def project_plus(self, e) -> np.ndarray:
        """M-orthogonal projection of ``e`` onto V⁺ (first onto V, then off Ṽ)."""
        v = project_to_V(self.ops, e)
        if self.tilde.shape[1]:
            v = v - self.tilde @ (self.tilde.T @ (self.ops.M @ v))
        return v

    def project_tilde(self, e) -> np.ndarray:
        c = coeffs(e)
        return self.tilde @ (self.tilde.T @ (self.ops.M @ c))

    @property
    def dim_tilde(self) -> int:
        return self.tilde.shape[1]


def _finish(ops, lam, vecs, near_one_tol, method, info) -> SpectralSplit:
    order = np.argsort(lam)
    lam, vecs = lam[order], vecs[:, order]
    # M-normalize (eigsh already does up to rounding; make it exact for degenerate clusters)
    gram = vecs.T @ (ops.M @ vecs)
    L = np.linalg.cholesky(0.5 * (gram + gram.T))
    vecs = scipy.linalg.solve_triangular(L, vecs.T, lower=True).T
    Mv = ops.M @ vecs
    res = np.linalg.norm(ops.A @ vecs - Mv * lam, axis=0) / np.linalg.norm(Mv, axis=0)
    if ops.n_potentials:
        div = np.linalg.norm(ops.G.T @ Mv, axis=0) / np.maximum(np.linalg.norm(vecs, axis=0), 1.0)
    else:
        div = np.zeros(len(lam))
    if lam.size and lam[0] <= 0:
        raise EigenSolverError(f"non-positive eigenvalue {lam[0]:.3e} on V", lam, res)
    tol = near_one_tol if near_one_tol is not None else 1e-8 * lam[0]
    return SpectralSplit(lam, vecs, res, div, tol, method, info)


def dense_eigenpairs(ops: MaxwellOperators, K: int | None = None, near_one_tol=None) -> SpectralSplit:
    """Dense generalized eigensolve; drops the gradient kernel (oracle, small sizes)."""
    if ops.n > DENSE_LIMIT:
        raise ValueError(f"dense eigensolve limited to {DENSE_LIMIT} unknowns, got {ops.n}")
    lam, vecs = scipy.linalg.eigh(ops.A.toarray(), ops.M.toarray())
    k0 = ops.n_potentials
    if k0 and lam[k0] < 1e3 * max(abs(lam[:k0]).max(), 1e-300) and lam[k0] < 1e-6 * lam[-1]:
        raise EigenSolverError("gradient kernel not separated from the spectrum", lam)
    lam, vecs = lam[k0:], vecs[:, k0:]
    if K is not None:
        lam, vecs = lam[:K], vecs[:, :K]
    return _finish(ops, lam, vecs, near_one_tol, "dense", {})


def maxwell_eigenpairs(
    ops: MaxwellOperators,
    K: int | None = None,
    tol_eig: float = 1e-8,
    near_one_tol: float | None = None,
    maxiter: int | None = None,
    seed: int = 0,
) -> SpectralSplit:
    """Smallest ``K`` eigenpairs of ``A v = lambda M v`` restricted to V.

    ``K=None`` applies the default rule: the smallest ``K`` with
    ``lambda_K > 1.5`` plus five safety pairs.
    """
    dim_V = ops.n - ops.n_potentials
    if K is None:
        return _default_count(ops, tol_eig, near_one_tol, maxiter, seed)
    if not 1 <= K <= dim_V:
        raise ValueError(f"eigenpair count must lie in [1, {dim_V}], got {K}")
    if K >= dim_V - 1:
        split = dense_eigenpairs(ops, K, near_one_tol)
    else:
        n = ops.n
        op = spla.LinearOperator((n, n), matvec=lambda y: saddle_solve(ops, y)[0], dtype=float)
        v0 = project_to_V(ops, np.random.default_rng(seed).standard_normal(n))
        try:
            lam, vecs = spla.eigsh(
                ops.A, k=K, M=ops.M, sigma=0.0, which="LM", OPinv=op, v0=v0, tol=0.0, maxiter=maxiter
            )
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError(
                f"eigensolver did not converge ({len(exc.eigenvalues)} of {K} pairs)", exc.eigenvalues
            ) from exc
        split = _finish(ops, lam, vecs, near_one_tol, "arpack", {})
    bad = np.flatnonzero(split.residuals > tol_eig)
    if bad.size:
        raise EigenSolverError(
            f"eigenpair residuals above tol_eig={tol_eig:g} for k={(bad + 1).tolist()}",
            split.eigenvalues,
            split.residuals,
        )
    return split


def _default_count(ops, tol_eig, near_one_tol, maxiter, seed) -> SpectralSplit:
    dim_V = ops.n - ops.n_potentials
    k = min(6, dim_V)
    while True:
        split = maxwell_eigenpairs(ops, k, tol_eig, near_one_tol, maxiter, seed)
        above = np.flatnonzero(split.eigenvalues > 1.5)
        if above.size or k == dim_V:
            want = min((above[0] + 1 if above.size else k) + 5, dim_V)
            if want <= k:
                return split
            return maxwell_eigenpairs(ops, want, tol_eig, near_one_tol, maxiter, seed)
        k = min(2 * k, dim_V)


def spectral_split(ops: MaxwellOperators, s: SpectralSplit) -> SplitBases:
    """Ṽ = span{lambda_k <= 1 + tol}, V₀ = span{|lambda_k - 1| <= tol}, V⁺ implicit."""
    tol = s.near_one_tol
    dim_V = ops.n - ops.n_potentials
    if s.eigenvalues[-1] <= 1.0 + tol and s.K < dim_V:
        raise InsufficientSpectrumError(
            f"largest computed eigenvalue {s.eigenvalues[-1]:.6g} does not exceed 1 + near_one_tol; "
            "raise eigenpair count"
        )
    nt = s.n_tilde
    if nt == s.K:
        raise InsufficientSpectrumError("no eigenvalue above 1 among the computed pairs; raise eigenpair count")
    kern = np.abs(s.eigenvalues - 1.0) <= tol
    below = s.eigenvalues[s.eigenvalues < 1.0 - tol]
    return SplitBases(
        ops=ops,
        tilde=s.eigenvectors[:, :nt],
        tilde_eigenvalues=s.eigenvalues[:nt],
        kernel=s.eigenvectors[:, kern],
        lambda_m=float(s.eigenvalues[nt]),
        lambda_below=float(below[-1]) if below.size else None,
        plus_modes=s.eigenvectors[:, nt:],
    )


def eval_Q(ops: MaxwellOperators, v) -> float:
    c = coeffs(v)
    return float(c @ (ops.A @ c) - c @ (ops.M @ c))


def write_eigen_csv(path, s: SpectralSplit) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "lambda", "residual", "div_residual"])
        for k in range(s.K):
            w.writerow([k + 1, repr(float(s.eigenvalues[k])), f"{s.residuals[k]:.6e}", f"{s.div_residuals[k]:.6e}"])


def check_split_invariants(ops: MaxwellOperators, s: SpectralSplit, tol_div: float = TOL_DIV) -> dict:
    gram = s.eigenvectors.T @ (ops.M @ s.eigenvectors)
    return {
        "max_residual": float(s.residuals.max()),
        "max_div_residual": float(s.div_residuals.max()),
        "orthonormality": float(np.abs(gram - np.eye(s.K)).max()),
        "div_ok": bool(s.div_residuals.max() <= tol_div),
    }
