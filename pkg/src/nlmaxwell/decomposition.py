"""V-weighted Helmholtz splitting of discrete fields into V and W parts.

W is the range of the discrete gradient (meshes are simply connected with a
connected boundary), and V is its M-orthogonal complement, i.e. the discrete
fields with G^T M e = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .fem import FieldVector, MaxwellOperators, coeffs


class DecompositionError(RuntimeError):
    pass


@dataclass
class HelmholtzSplit:
    v_part: FieldVector
    w_part: FieldVector
    potential: np.ndarray

    def orthogonality_residual(self, ops: MaxwellOperators) -> float:
        v, w = self.v_part.coefficients, self.w_part.coefficients
        nv = np.sqrt(max(v @ (ops.M @ v), 0.0))
        nw = np.sqrt(max(w @ (ops.M @ w), 0.0))
        if nv == 0.0 or nw == 0.0:
            return 0.0
        return abs(v @ (ops.M @ w)) / (nv * nw)


def _gram_solver(ops: MaxwellOperators):
    if "gram" not in ops.cache:
        G = ops.G
        gram = (G.T @ ops.M @ G).tocsc()
        try:
            lu = spla.splu(gram)
        except RuntimeError as exc:
            raise DecompositionError(f"singular gradient Gram matrix G^T M G ({gram.shape[0]} potentials): {exc}") from exc
        ops.cache["gram"] = lu
    return ops.cache["gram"]


def helmholtz_project(ops: MaxwellOperators, e) -> HelmholtzSplit:
    """Split ``e = v + w`` with ``w = G q`` and ``G^T M v = 0``."""
    c = coeffs(e)
    if ops.n_potentials == 0:
        return HelmholtzSplit(FieldVector(c.copy(), "V"), FieldVector(np.zeros_like(c), "W"), np.zeros(0))
    q = _gram_solver(ops).solve(ops.G.T @ (ops.M @ c))
    w = ops.G @ q
    return HelmholtzSplit(FieldVector(c - w, "V"), FieldVector(w, "W"), q)


def project_to_V(ops: MaxwellOperators, e) -> np.ndarray:
    return helmholtz_project(ops, e).v_part.coefficients


def check_V_membership(ops: MaxwellOperators, e) -> float:
    """Discrete divergence residual ||G^T M e|| / max(||e||, 1)."""
    c = coeffs(e)
    if ops.n_potentials == 0:
        return 0.0
    return float(np.linalg.norm(ops.G.T @ (ops.M @ c)) / max(np.linalg.norm(c), 1.0))
