"""Full-horizon KKT baseline and its Schur-complement reduction.

The unknown is z = [x_1..x_T, lam_0..lam_{T-1}, u_0..u_{T-1}] and the
saddle-point matrix has the layout

    [ E11  E12  0   ]
    [ E12' 0    E23 ]
    [ 0    E23' E33 ]

with E11 = blkdiag(Qbar_l), E12 upper block-bidiagonal (-I on the diagonal,
A' above it), E23 = blkdiag(B), E33 = blkdiag(R).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .density import HorizonData
from .lti import AgentState, LtiModel


class KktSolveError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class KktSystem:
    E: np.ndarray
    F: np.ndarray
    T: int
    n: int
    m: int

    def blocks(self):
        """Slices (E11, E12, E23, E33, F1, F2) of the assembled system."""
        nT = self.n * self.T
        E = self.E
        return (E[:nT, :nT], E[:nT, nT:2 * nT], E[nT:2 * nT, 2 * nT:],
                E[2 * nT:, 2 * nT:], self.F[:nT], self.F[nT:2 * nT])

    @property
    def size(self) -> int:
        return self.E.shape[0]


@dataclass(frozen=True, eq=False)
class KktSolution:
    xbar: np.ndarray
    lambdabar: np.ndarray
    ubar: np.ndarray
    residual_norm: float
    elapsed_s: float

    def first_input(self, m: int) -> np.ndarray:
        return self.ubar[:m]


def assemble_kkt(model: LtiModel, hd: HorizonData, x0: AgentState) -> KktSystem:
    n, m, T = model.n, model.m, hd.T
    nT = n * T
    N = (2 * n + m) * T
    E = np.zeros((N, N))
    F = np.zeros(N)
    At = model.A.T
    eye = np.eye(n)
    for l, (Qb, ref) in enumerate(zip(hd.Qbar_seq, hd.ref_seq)):
        r = slice(l * n, (l + 1) * n)
        lam = slice(nT + l * n, nT + (l + 1) * n)
        u = slice(2 * nT + l * m, 2 * nT + (l + 1) * m)
        E[r, r] = Qb
        E[r, lam] = -eye
        E[lam, r] = -eye
        if l + 1 < T:
            nxt = slice(nT + (l + 1) * n, nT + (l + 2) * n)
            E[r, nxt] = At
            E[nxt, r] = model.A
        E[lam, u] = model.B
        E[u, lam] = model.B.T
        E[u, u] = hd.R
        F[r] = Qb @ ref
    F[nT:nT + n] = -model.A @ np.asarray(x0.x, dtype=float)
    return KktSystem(E, F, T, n, m)


def solve_full(sys: KktSystem) -> KktSolution:
    """Dense LU solve of E z = F."""
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu = sla.lu_factor(sys.E, check_finite=False)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise KktSolveError(f"KKT factorization failed: {exc}") from exc
    if np.any(np.diag(lu[0]) == 0):
        raise KktSolveError(f"singular KKT matrix (cond ~ {np.linalg.cond(sys.E):.3e})")
    z = sla.lu_solve(lu, sys.F, check_finite=False)
    elapsed = time.perf_counter() - t0
    nT = sys.n * sys.T
    res = float(np.linalg.norm(sys.E @ z - sys.F))
    return KktSolution(z[:nT], z[nT:2 * nT], z[2 * nT:], res, elapsed)


def _bidiag_blocks(E12: np.ndarray, n: int, T: int):
    diag = [E12[l * n:(l + 1) * n, l * n:(l + 1) * n] for l in range(T)]
    sup = [E12[l * n:(l + 1) * n, (l + 1) * n:(l + 2) * n] for l in range(T - 1)]
    return diag, sup


def _solve_upper(diag, sup, W, n):
    """E12^{-1} W by backward block substitution."""
    T = len(diag)
    Z = np.empty_like(W)
    Z[(T - 1) * n:] = np.linalg.solve(diag[-1], W[(T - 1) * n:])
    for l in range(T - 2, -1, -1):
        r = slice(l * n, (l + 1) * n)
        Z[r] = np.linalg.solve(diag[l], W[r] - sup[l] @ Z[(l + 1) * n:(l + 2) * n])
    return Z


def _solve_upper_t(diag, sup, Y, n):
    """E12^{-T} Y by forward block substitution."""
    T = len(diag)
    X = np.empty_like(Y)
    X[:n] = np.linalg.solve(diag[0].T, Y[:n])
    for l in range(1, T):
        r = slice(l * n, (l + 1) * n)
        X[r] = np.linalg.solve(diag[l].T, Y[r] - sup[l - 1].T @ X[(l - 1) * n:l * n])
    return X


def schur_reduce(sys: KktSystem):
    """Eliminate states and co-states: returns (Hfull, Gfull) with Hfull ubar = Gfull.

    Hfull = E33 + E23' E12^{-1} E11 E12^{-T} E23
    Gfull = E23' E12^{-1} (E11 E12^{-T} F2 - F1)

    Every E12^{-1} application is a block substitution on the bidiagonal
    blocks sliced out of the assembled matrix.
    """
    n, m, T = sys.n, sys.m, sys.T
    E11, E12, E23, E33, F1, F2 = sys.blocks()
    diag, sup = _bidiag_blocks(E12, n, T)
    Qb = [E11[l * n:(l + 1) * n, l * n:(l + 1) * n] for l in range(T)]
    Bb = [E23[l * n:(l + 1) * n, l * m:(l + 1) * m] for l in range(T)]

    def e11(V):
        return np.concatenate([Qb[l] @ V[l * n:(l + 1) * n] for l in range(T)])

    def e23t(V):
        return np.concatenate([Bb[l].T @ V[l * n:(l + 1) * n] for l in range(T)])

    X = _solve_upper_t(diag, sup, E23, n)
    Hfull = E33 + e23t(_solve_upper(diag, sup, e11(X), n))
    xf = _solve_upper_t(diag, sup, F2, n)
    Gfull = e23t(_solve_upper(diag, sup, e11(xf) - F1, n))
    return 0.5 * (Hfull + Hfull.T), Gfull


def solve_full_first_input(model: LtiModel, hd: HorizonData, x0: AgentState) -> np.ndarray:
    return solve_full(assemble_kkt(model, hd, x0)).first_input(model.m)
