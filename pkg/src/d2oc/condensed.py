"""Condensation of the horizon problem to an m-dimensional QP in the first input.

``condense`` builds the Hessian/gradient pair in one O(T n^2 m) pass;
``solve_box_qp`` is an exact small dense solver for the input box.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import TYPE_CHECKING

import numpy as np

from .lti import AgentState, ContractError, LtiModel

if TYPE_CHECKING:
    from .density import HorizonData

CERT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CondensedQp:
    """min 0.5 u'Hu + g'u  s.t.  u_min <= u <= u_max."""

    H: np.ndarray
    g: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        m = self.g.shape[0]
        lo = np.broadcast_to(np.asarray(self.u_min, dtype=float), (m,)).copy()
        hi = np.broadcast_to(np.asarray(self.u_max, dtype=float), (m,)).copy()
        if np.any(lo > hi):
            raise ContractError("u_min must not exceed u_max")
        object.__setattr__(self, "u_min", lo)
        object.__setattr__(self, "u_max", hi)

    @property
    def m(self) -> int:
        return self.g.shape[0]

    def objective(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.g @ u)


def _bounds(m, u_min, u_max):
    lo = np.full(m, -np.inf) if u_min is None else u_min
    hi = np.full(m, np.inf) if u_max is None else u_max
    return lo, hi


def condense(model: LtiModel, hd: "HorizonData", x0: AgentState,
             u_min=None, u_max=None) -> CondensedQp:
    """Hessian and gradient of the horizon cost in the first input, all later inputs zero.

    H = R + sum_l (A^l B)' Qbar_l (A^l B)
    g = sum_l (A^l B)' Qbar_l (A^(l+1) x0 - ref_l)

    Only the running blocks A^l B (n x m) and A^(l+1) x0 are propagated;
    A^l itself is never formed.
    """
    H, g = condense_arrays(model.A, model.B, hd.R, hd.Qbar_seq, hd.ref_seq, x0.x)
    lo, hi = _bounds(model.m, u_min, u_max)
    return CondensedQp(H, g, lo, hi)


def condense_arrays(A, B, R, Qbar_seq, ref_seq, x0):
    """Array-level core of ``condense``: returns (H, g)."""
    S = B
    free = A @ np.asarray(x0, dtype=float)
    H = np.array(R, dtype=float, copy=True)
    g = np.zeros(B.shape[1])
    for Qb, ref in zip(Qbar_seq, ref_seq):
        QS = Qb @ S
        H += S.T @ QS
        g += QS.T @ (free - ref)
        S = A @ S
        free = A @ free
    return 0.5 * (H + H.T), g


def surrogate_cost(model: LtiModel, hd: "HorizonData", x0: AgentState, u) -> float:
    """Horizon cost of applying ``u`` now and zero input afterwards.

    Evaluated by forward simulation; its gradient is exactly H u + g.
    """
    u = np.asarray(u, dtype=float)
    x = model.A @ np.asarray(x0.x, dtype=float) + model.B @ u
    J = 0.5 * u @ hd.R @ u
    for Qb, ref in zip(hd.Qbar_seq, hd.ref_seq):
        err = x - ref
        J += 0.5 * err @ Qb @ err
        x = model.A @ x
    return float(J)


def projected_gradient_residual(qp: CondensedQp, u) -> float:
    u = np.asarray(u, dtype=float)
    grad = qp.H @ u + qp.g
    return float(np.max(np.abs(u - np.clip(u - grad, qp.u_min, qp.u_max))))


def _enumerate(H, g, lo, hi):
    m = g.shape[0]
    finite = np.abs(np.r_[lo, hi])
    span = finite[np.isfinite(finite)].max(initial=0.0)
    scale = 1e-12 * (1.0 + np.abs(g).max() + np.abs(H).max() * (1.0 + span))
    choices = []
    for i in range(m):
        opts = [0]
        if np.isfinite(lo[i]):
            opts.append(-1)
        if np.isfinite(hi[i]):
            opts.append(1)
        choices.append(opts)
    # fewer active bounds first: the interior solution is the common case
    for act in sorted(product(*choices), key=lambda a: sum(x != 0 for x in a)):
        act = np.array(act)
        u = np.where(act < 0, lo, np.where(act > 0, hi, 0.0))
        F = act == 0
        if F.any():
            rhs = -(g[F] + H[np.ix_(F, ~F)] @ u[~F])
            u[F] = np.linalg.solve(H[np.ix_(F, F)], rhs)
            if np.any(u[F] < lo[F] - scale) or np.any(u[F] > hi[F] + scale):
                continue
        grad = H @ u + g
        if np.any(grad[act < 0] < -scale) or np.any(grad[act > 0] > scale):
            continue
        return np.clip(u, lo, hi), act
    raise RuntimeError("active-set enumeration found no KKT point")


def _projected_newton(H, g, lo, hi, max_iter=200):
    u = np.clip(np.zeros_like(g), lo, hi)
    for _ in range(max_iter):
        grad = H @ u + g
        eps = min(1e-8, np.max(np.abs(u - np.clip(u - grad, lo, hi))))
        bound = ((u <= lo + eps) & (grad > 0)) | ((u >= hi - eps) & (grad < 0))
        F = ~bound
        d = np.zeros_like(u)
        if F.any():
            d[F] = -np.linalg.solve(H[np.ix_(F, F)], grad[F])
        f0 = 0.5 * u @ H @ u + g @ u
        t = 1.0
        while True:
            un = np.clip(u + t * d, lo, hi)
            fn = 0.5 * un @ H @ un + g @ un
            if fn <= f0 + 1e-4 * grad @ (un - u) or t < 1e-12:
                break
            t *= 0.5
        if np.max(np.abs(un - u)) <= 1e-15 * (1 + np.abs(u).max()):
            u = un
            break
        u = un
    act = np.where(u <= lo, -1, np.where(u >= hi, 1, 0))
    return u, act


def _flags(u, lo, hi):
    return np.where(u <= lo, -1, np.where(u >= hi, 1, 0))


def _box2(H, g, lo, hi):
    """Two inputs with the interior minimizer outside the box: best of the four edges."""
    h00, h01, h11 = float(H[0, 0]), float(H[0, 1]), float(H[1, 1])
    g0, g1 = float(g[0]), float(g[1])
    best, arg = np.inf, None
    for fixed in (0, 1):
        hf, gf, hc = (h11, g1, h01) if fixed == 0 else (h00, g0, h01)
        flo, fhi = (float(lo[1]), float(hi[1])) if fixed == 0 else (float(lo[0]), float(hi[0]))
        for b in (float(lo[fixed]), float(hi[fixed])):
            if not np.isfinite(b):
                continue
            v = min(max(-(gf + hc * b) / hf, flo), fhi)
            u = (b, v) if fixed == 0 else (v, b)
            val = 0.5 * (h00 * u[0] * u[0] + 2 * h01 * u[0] * u[1] + h11 * u[1] * u[1]) + g0 * u[0] + g1 * u[1]
            if val < best:
                best, arg = val, u
    u = np.array(arg)
    return u, _flags(u, lo, hi)


def box_minimizer(H, g, lo, hi):
    """Array-level core of ``solve_box_qp``; skips the dataclass checks."""
    m = g.shape[0]
    if m == 1:
        u = np.array([min(max(-float(g[0]) / float(H[0, 0]), float(lo[0])), float(hi[0]))])
        return u, _flags(u, lo, hi)
    if m == 2:
        a, b, c = float(H[0, 0]), float(H[0, 1]), float(H[1, 1])
        det = a * c - b * b
        u0 = (b * float(g[1]) - c * float(g[0])) / det
        u1 = (b * float(g[0]) - a * float(g[1])) / det
        if lo[0] <= u0 <= hi[0] and lo[1] <= u1 <= hi[1]:
            return np.array([u0, u1]), np.zeros(2, dtype=int)
        return _box2(H, g, lo, hi)
    u = np.linalg.solve(H, -g)
    if np.all(u >= lo) and np.all(u <= hi):
        return u, np.zeros(m, dtype=int)
    if m <= 4:
        return _enumerate(H, g, lo, hi)
    return _projected_newton(H, g, lo, hi)


def solve_box_qp(qp: CondensedQp):
    """Unique minimizer of the box QP and the active bound flags (-1 lower, +1 upper, 0 free).

    Closed form for one input, an edge search for two (a convex quadratic whose
    interior minimizer is infeasible attains its box minimum on the boundary),
    exact active-set enumeration up to four, projected Newton beyond.
    """
    return box_minimizer(qp.H, qp.g, qp.u_min, qp.u_max)


def solve_condensed(model, hd, x0, u_min=None, u_max=None):
    qp = condense(model, hd, x0, u_min, u_max)
    u, _ = solve_box_qp(qp)
    return u
