"""Contractive Lyapunov layer for the condensed controller.

The tracking error e = x - r evolves as e+ = A e + B u + d, with drift
d = A r_k - r_{k+1}. A quadratic Lyapunov function V(e) = e'Pe is asked to
contract by e'Q_c e per step; with Q_c = c P this is the second-order cone

    || L (A e + B u + d) || <= sqrt(1 - c) || L e ||,   P = L'L,

which is enforced softly (slack eps, penalty rho eps^2) by a scalar
dual-Newton iteration on the cone multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .condensed import CondensedQp, box_minimizer
from .lti import ContractError, LtiModel

LMI_TOL = 1e-9


class SynthesisError(RuntimeError):
    pass


class QcqpConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class StabilitySpec:
    P: np.ndarray
    L: np.ndarray
    c: float
    Qc: np.ndarray
    rho: float
    lam: float
    K: np.ndarray

    @property
    def lam_min_P(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[0])

    @property
    def lam_max_P(self) -> float:
        return float(np.linalg.eigvalsh(self.P)[-1])

    def V(self, e) -> float:
        e = np.asarray(e, dtype=float)
        return float(e @ self.P @ e)

    def with_rho(self, rho: float) -> "StabilitySpec":
        return StabilitySpec(self.P, self.L, self.c, self.Qc, rho, self.lam, self.K)


@dataclass(frozen=True, eq=False)
class ErrorState:
    e: np.ndarray
    d: np.ndarray

    @classmethod
    def from_references(cls, model: LtiModel, x, r_now, r_next) -> "ErrorState":
        """Error against the current reference and the drift to the next one."""
        r_now = np.asarray(r_now, dtype=float)
        return cls(np.asarray(x, dtype=float) - r_now, model.A @ r_now - np.asarray(r_next, dtype=float))


@dataclass(frozen=True, eq=False)
class QcqpResult:
    u: np.ndarray
    eps: float
    mu: float
    iterations: int
    residual: float
    radius: float
    objective: float
    feasible: bool = True


def lqr_gain(A, B, Qw=None, Rw=None) -> np.ndarray:
    """Discrete LQR gain K (u = K x) from the stabilizing Riccati solution."""
    n, m = B.shape
    Qw = np.eye(n) if Qw is None else Qw
    Rw = np.eye(m) if Rw is None else Rw
    X = sla.solve_discrete_are(A, B, Qw, Rw)
    return -np.linalg.solve(Rw + B.T @ X @ B, B.T @ X @ A)


def synthesize_p(model: LtiModel, c: float | None = 0.2, rho: float = 1e3) -> StabilitySpec:
    """Lyapunov certificate of the unit-weight LQR closed loop.

    Solves Acl' P Acl - P = -I with Acl = A + B K, then Q_c = c P.
    ``c=None`` picks c = 1/lambda_max(P): then Q_c <= I, so away from the
    input bounds the LQR input itself meets the contraction.
    """
    if c is not None and not 0.0 < c < 1.0:
        raise ContractError("contraction factor must lie in (0, 1)")
    if not rho > 0:
        raise ContractError("slack penalty must be positive")
    A, B = model.A, model.B
    if np.allclose(B, 0.0):
        K = np.zeros((model.m, model.n))
    else:
        try:
            K = lqr_gain(A, B)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SynthesisError(f"(A, B) is not stabilizable: {exc}") from exc
    Acl = A + B @ K
    if max(abs(np.linalg.eigvals(Acl))) >= 1.0:
        raise SynthesisError("no stabilizing gain found for (A, B)")
    P = sla.solve_discrete_lyapunov(Acl.T, np.eye(model.n))
    P = 0.5 * (P + P.T)
    try:
        L = sla.cholesky(P, lower=False)
    except np.linalg.LinAlgError as exc:
        raise SynthesisError("Lyapunov solution is not positive definite") from exc
    w = np.linalg.eigvalsh(P)
    if c is None:
        c = float(1.0 / w[-1])
    return StabilitySpec(P, L, c, c * P, rho, c * w[0] / w[-1], K)


def stability_radius(spec: StabilitySpec, e) -> float:
    """sqrt(1 - c) ||L e||, the admissible size of the next error in the L-norm."""
    return math.sqrt(1.0 - spec.c) * float(np.linalg.norm(spec.L @ np.asarray(e, dtype=float)))


def successor(model: LtiModel, es: ErrorState, u) -> np.ndarray:
    return model.A @ es.e + model.B @ np.asarray(u, dtype=float) + es.d


def contraction_margin(spec: StabilitySpec, model: LtiModel, es: ErrorState, u) -> float:
    """V(e) - e'Q_c e - V(e+); nonnegative iff the contraction holds."""
    return spec.V(es.e) - float(es.e @ spec.Qc @ es.e) - spec.V(successor(model, es, u))


def lmi_matrix(spec: StabilitySpec, model: LtiModel, es: ErrorState, u) -> np.ndarray:
    """The (n+1) x (n+1) Schur-complement matrix [[e'(P - Qc)e, (P e+)'], [P e+, P]]."""
    Pw = spec.P @ successor(model, es, u)
    top = float(es.e @ (spec.P - spec.Qc) @ es.e)
    n = model.n
    M = np.empty((n + 1, n + 1))
    M[0, 0] = top
    M[0, 1:] = Pw
    M[1:, 0] = Pw
    M[1:, 1:] = spec.P
    return M


def check_lmi(spec: StabilitySpec, model: LtiModel, es: ErrorState, u) -> bool:
    return bool(np.linalg.eigvalsh(lmi_matrix(spec, model, es, u))[0] >= -LMI_TOL)


def soc_satisfied(spec: StabilitySpec, model: LtiModel, es: ErrorState, u, tol=0.0) -> bool:
    lhs = float(np.linalg.norm(spec.L @ successor(model, es, u)))
    return lhs <= stability_radius(spec, es.e) + tol


def qcqp_objective(qp: CondensedQp, rho: float, u, eps: float) -> float:
    slack = 0.0 if eps == 0 else rho * eps * eps
    return qp.objective(u) + slack


def solve_stable_qcqp(qp: CondensedQp, spec: StabilitySpec, model: LtiModel,
                      es: ErrorState, rho: float | None = None,
                      tol: float = 1e-12, max_iter: int = 100) -> QcqpResult:
    """min 0.5 u'Hu + g'u + rho eps^2  s.t.  ||L(Ae + Bu + d)|| <= R(e) + eps, box, eps >= 0.

    ``mu`` multiplies the squared cone, so for fixed mu the input is the box
    minimizer of 0.5 u'(H + mu B'PB)u + (g + mu B'P(Ae + d))'u. The slack
    that balances the penalty is eps(mu) = mu R / (2 rho - mu), and the
    scalar residual ||L w(mu)|| - R - eps(mu) is strictly decreasing in mu
    on [0, 2 rho); it is driven to zero by Newton steps, falling back to
    bisection whenever a step leaves the bracket or the active set moves.
    ``rho = inf`` gives the hard cone (eps = 0).
    """
    rho = spec.rho if rho is None else rho
    hard = math.isinf(rho)
    A, B, P, L = model.A, model.B, spec.P, spec.L
    a = A @ es.e + es.d
    R = stability_radius(spec, es.e)
    BtP = B.T @ P
    BtPB = BtP @ B
    BtPa = BtP @ a
    La, LB = L @ a, L @ B
    H, g, lo, hi = qp.H, qp.g, qp.u_min, qp.u_max

    def primal(mu):
        u, act = box_minimizer(H + mu * BtPB, g + mu * BtPa, lo, hi)
        return u, act, a + B @ u, math.sqrt(float(np.sum((La + LB @ u) ** 2)))

    def slack(mu):
        if hard:
            return 0.0
        return mu * R / (2.0 * rho - mu)

    def finish(mu, u, w_norm, it, feasible=True):
        eps = 0.0 if hard else max(0.0, w_norm - R)
        resid = w_norm - R - eps
        return QcqpResult(u, eps, mu, it, resid, R,
                          qcqp_objective(qp, rho, u, eps), feasible)

    u, act, w, wn = primal(0.0)
    if wn <= R:
        return finish(0.0, u, wn, 0)

    if not hard and R == 0.0:
        # slack absorbs the whole cone: mu sits at the pole 2 rho
        mu = 2.0 * rho
        u, act, w, wn = primal(mu)
        return finish(mu, u, wn, 1)

    lo_mu, hi_mu = 0.0, (2.0 * rho if not hard else math.inf)
    if hard:
        probe = 1.0
        while True:
            u_p, _, _, wn_p = primal(probe)
            if wn_p < R:
                hi_mu = probe
                break
            lo_mu = probe
            if probe > 1e15:
                return finish(probe, u_p, wn_p, 0, feasible=False)
            probe *= 10.0

    mu = lo_mu
    f = wn - R - slack(mu)
    for it in range(1, max_iter + 1):
        # sensitivity on the free coordinates
        F = act == 0
        deriv = 0.0
        if F.any() and wn > 0:
            BtPw = BtP @ w
            if F.all():
                du = -np.linalg.solve(H + mu * BtPB, BtPw)
                deriv = float(BtPw @ du) / wn
            else:
                M = (H + mu * BtPB)[np.ix_(F, F)]
                deriv = -float(BtPw[F] @ np.linalg.solve(M, BtPw[F])) / wn
        if not hard:
            deriv -= 2.0 * rho * R / (2.0 * rho - mu) ** 2
        cand = mu - f / deriv if deriv < 0 else math.nan
        if not (lo_mu < cand < hi_mu):
            cand = 0.5 * (lo_mu + hi_mu) if math.isfinite(hi_mu) else 2.0 * mu + 1.0
        u_n, act_n, w_n, wn_n = primal(cand)
        f_n = wn_n - R - slack(cand)
        if not np.array_equal(act_n, act) and math.isfinite(hi_mu):
            # active set moved: tighten the bracket and take a bisection step
            if f_n > 0:
                lo_mu = cand
            else:
                hi_mu = cand
            cand = 0.5 * (lo_mu + hi_mu)
            u_n, act_n, w_n, wn_n = primal(cand)
            f_n = wn_n - R - slack(cand)
        mu, u, act, w, wn, f = cand, u_n, act_n, w_n, wn_n, f_n
        if f > 0:
            lo_mu = mu
        else:
            hi_mu = mu
        if abs(f) <= tol * (1.0 + R) or (hi_mu - lo_mu) <= 1e-15 * (1.0 + hi_mu):
            return finish(mu, u, wn, it)
    raise QcqpConvergenceError(
        f"dual-Newton did not converge in {max_iter} iterations (residual {f:.3e})")


def iss_envelope(spec: StabilitySpec, e0_norm: float, drift_norms) -> np.ndarray:
    """sqrt(lmax/lmin) (1-lam)^(k/2) ||e0|| + sup_{j<k} ||d_j|| / sqrt(lmin lam) for k = 0..len(drift_norms)."""
    w = np.linalg.eigvalsh(spec.P)
    lmin, lmax = w[0], w[-1]
    lam = spec.lam
    K = len(drift_norms) + 1
    k = np.arange(K)
    sup_d = np.concatenate([[0.0], np.maximum.accumulate(np.asarray(drift_norms, dtype=float))]) if K > 1 else np.zeros(1)
    return math.sqrt(lmax / lmin) * (1.0 - lam) ** (k / 2.0) * e0_norm + sup_d / math.sqrt(lmin * lam)


def iss_trace(spec: StabilitySpec, model: LtiModel, errors, controls=None):
    """Lyapunov values V(e_k) and the ISS envelope on ||e_k|| along a run.

    ``errors[k]`` carries e_k and the drift d_k that acts between k and k+1.
    """
    errors = list(errors)
    if controls is not None and len(controls) < len(errors) - 1:
        raise ContractError("need one control per transition")
    V = np.array([spec.V(es.e) for es in errors])
    dn = [float(np.linalg.norm(es.d)) for es in errors[:-1]]
    bound = iss_envelope(spec, float(np.linalg.norm(errors[0].e)), dn)
    return V, bound
