"""Cross-module oracle checks run by ``d2oc verify``.

Each check compares two independent computations of the same quantity on
seeded random instances and reports the worst discrepancy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .condensed import CondensedQp, condense, surrogate_cost
from .density import HorizonData
from .kkt import assemble_kkt, schur_reduce
from .lti import FLEET_MODELS, AgentState, LtiModel
from .stability import (ErrorState, StabilitySpec, check_lmi, contraction_margin,
                        solve_stable_qcqp, stability_radius, synthesize_p)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def random_instance(rng, n, m, T, spectral_radius=None):
    """Random (model, horizon data, x0) with a PSD penalty sequence and R > 0."""
    A = rng.standard_normal((n, n))
    if spectral_radius is not None:
        A *= spectral_radius / max(abs(np.linalg.eigvals(A)))
    model = LtiModel(A, rng.standard_normal((n, m)), np.eye(n)[:1])
    Qbars, refs = [], []
    for _ in range(T):
        M = rng.standard_normal((n, n))
        Qbars.append(M @ M.T / n)
        refs.append(rng.standard_normal(n))
    M = rng.standard_normal((m, m))
    hd = HorizonData(np.zeros((n, n)), M @ M.T + 0.5 * np.eye(m), Qbars, refs)
    return model, hd, AgentState(rng.standard_normal(n))


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def grid_qcqp_objective(qp: CondensedQp, spec: StabilitySpec, model: LtiModel, es: ErrorState,
                        rho: float, rounds: int = 30) -> float:
    """Brute-force optimum of the soft QCQP by coarse-to-fine grids over u.

    For a fixed u the best slack is max(0, ||Lw|| - R), so the (u, eps) search
    collapses to a search over u alone. The objective is convex, which makes
    zooming in on the incumbent safe.
    """
    m = qp.m
    R = stability_radius(spec, es.e)
    a = model.A @ es.e + es.d

    def value(U):
        W = a + U @ model.B.T
        eps = np.maximum(0.0, np.linalg.norm(W @ spec.L.T, axis=1) - R)
        f = 0.5 * np.einsum("ij,jk,ik->i", U, qp.H, U) + U @ qp.g
        if math.isinf(rho):
            return np.where(eps > 1e-12, np.inf, f)
        return f + rho * eps ** 2

    lo, hi = qp.u_min, qp.u_max
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    best = np.inf
    for _ in range(rounds):
        axes = [np.clip(np.linspace(c - h, c + h, 81 if m == 1 else 41), l, u)
                for c, h, l, u in zip(center, half, lo, hi)]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, m)
        vals = value(U)
        i = int(np.argmin(vals))
        best = min(best, float(vals[i]))
        center = U[i]
        half = half / 4.0
    return best


def check_condensed_vs_schur(seed=0, count=40, perturb_h=0.0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        n, m = int(rng.choice([1, 2, 4, 8])), int(rng.choice([1, 2]))
        T = int(rng.choice([1, 2, 5, 10, 30]))
        model, hd, x0 = random_instance(rng, n, m, T, rng.uniform(0.5, 1.2))
        qp = condense(model, hd, x0)
        Hf, Gf = schur_reduce(assemble_kkt(model, hd, x0))
        H = qp.H + perturb_h
        worst = max(worst, rel_err(H, Hf[:m, :m]), rel_err(qp.g, -Gf[:m]))
    return CheckResult("condensed_vs_schur", worst <= 1e-9, f"max relative error {worst:.3e}")


def check_lmi_vs_inequality(seed=0, count=100) -> CheckResult:
    rng = np.random.default_rng(seed)
    mismatches = 0
    for name, make in FLEET_MODELS.items():
        model = make()
        spec = synthesize_p(model)
        for _ in range(count):
            es = ErrorState(rng.standard_normal(model.n), 0.1 * rng.standard_normal(model.n))
            u = -np.linalg.lstsq(model.B, model.A @ es.e + es.d, rcond=None)[0] * rng.uniform(0, 2)
            mismatches += check_lmi(spec, model, es, u) != (contraction_margin(spec, model, es, u) >= 0)
    total = count * len(FLEET_MODELS)
    return CheckResult("lmi_vs_inequality", mismatches == 0, f"{total - mismatches}/{total} agree")


def check_dual_newton_vs_grid(seed=0, count=20) -> CheckResult:
    rng = np.random.default_rng(seed)
    scalar = FLEET_MODELS["scalar"]()
    spec0 = synthesize_p(scalar, c=0.5)
    worst, slack = 0.0, 0.0
    for _ in range(count):
        spec = spec0.with_rho(float(rng.uniform(0.5, 50)))
        qp = CondensedQp(np.array([[rng.uniform(0.5, 3)]]), rng.standard_normal(1) * 3, -2.0, 2.0)
        es = ErrorState(rng.standard_normal(1) * 2, rng.standard_normal(1) * 0.5)
        res = solve_stable_qcqp(qp, spec, scalar, es)
        best = grid_qcqp_objective(qp, spec, scalar, es, spec.rho)
        worst = max(worst, abs(res.objective - best) / (1.0 + abs(best)))
        slack = max(slack, abs(res.mu * res.residual))
    ok = worst <= 1e-4 and slack <= 1e-6
    return CheckResult("dual_newton_vs_grid", ok,
                       f"max relative objective gap {worst:.3e}, max |mu*residual| {slack:.3e}")


def check_gradient_fd(seed=0, count=30) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        model, hd, x0 = random_instance(rng, 4, 2, 10, 0.95)
        qp = condense(model, hd, x0)
        u = rng.standard_normal(2)
        h = 1e-5
        fd = [(surrogate_cost(model, hd, x0, u + h * e) - surrogate_cost(model, hd, x0, u - h * e)) / (2 * h)
              for e in np.eye(2)]
        worst = max(worst, rel_err(fd, qp.H @ u + qp.g))
    return CheckResult("gradient_fd", worst <= 1e-6, f"max relative error {worst:.3e}")


def run_checks(seed: int = 0, perturb_h: float = 0.0) -> list[CheckResult]:
    """``perturb_h`` adds a constant to every condensed Hessian entry (sensitivity hook)."""
    return [
        check_condensed_vs_schur(seed, perturb_h=perturb_h),
        check_lmi_vs_inequality(seed),
        check_dual_newton_vs_grid(seed),
        check_gradient_fd(seed),
    ]
