"""Decentralized multi-agent coverage loop.

Each step runs, for every agent, Stage A (horizon prediction on the agent's
own field view, then a solve with the chosen backend), Stage B (kernel decay
at the new position) and Stage C (min-merge of views over the communication
graph). Coverage is measured on the ground-truth field that accumulates every
agent's decay; agents never read it.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .condensed import condense, solve_box_qp
from .density import (DensityParams, SampleField, build_horizon_data, decay_kernel,
                      make_gmm_field)
from .kkt import assemble_kkt, solve_full
from .lti import FLEET_MODELS, AgentState, ContractError, LtiModel, lift_reference
from .stability import ErrorState, StabilitySpec, solve_stable_qcqp, synthesize_p

BACKENDS = ("full_kkt", "condensed", "condensed_stable")

DEFAULT_GMM = (
    ((30.0, 30.0), ((60.0, 25.0), (25.0, 40.0)), 0.35),
    ((65.0, 40.0), ((30.0, 0.0), (0.0, 90.0)), 0.25),
    ((55.0, 72.0), ((120.0, -30.0), (-30.0, 30.0)), 0.40),
)


@dataclass
class SwarmConfig:
    n_agents: int = 10
    lo: tuple = (0.0, 0.0)
    hi: tuple = (100.0, 100.0)
    comm_range: float = 15.0
    horizon: int = 30
    solver_backend: str = "condensed"
    coverage_target: float = 0.99
    max_steps: int = 3000
    seed: int = 0
    dt: float = 0.1
    model: str = "quadrotor8"
    n_sp: int = 400
    gmm: tuple = DEFAULT_GMM
    # a single-point fallback: averaging far, scattered leftovers parks agents in empty space
    density: DensityParams = field(default_factory=lambda: DensityParams(k_min=1))
    r_weight: float = 1e-4
    q_derivative: float = 0.0
    u_bound: float = 10.0
    contraction: float | None = None  # None: 1/lambda_max(P), see synthesize_p
    rho: float = 1e3
    exchange_every: int = 1
    parallel: bool = False
    field_seed: int | None = None

    def validate(self) -> None:
        if self.solver_backend not in BACKENDS:
            raise ContractError(
                f"unknown solver_backend {self.solver_backend!r}; valid: {', '.join(BACKENDS)}")
        if not 0.0 <= self.coverage_target < 1.0:
            raise ContractError("coverage_target must lie in [0, 1)")
        if self.comm_range <= 0:
            raise ContractError("comm_range must be positive")
        if self.n_agents < 1 or self.horizon < 1 or self.max_steps < 0:
            raise ContractError("n_agents and horizon must be >= 1, max_steps >= 0")
        if self.model not in FLEET_MODELS:
            raise ContractError(f"unknown model {self.model!r}; valid: {', '.join(FLEET_MODELS)}")
        if self.exchange_every < 1:
            raise ContractError("exchange_every must be >= 1")

    def build_model(self) -> LtiModel:
        return FLEET_MODELS[self.model](self.dt)

    def build_field(self) -> SampleField:
        seed = self.seed if self.field_seed is None else self.field_seed
        return make_gmm_field(self.lo, self.hi, self.gmm, self.n_sp, seed)

    def weights(self, model: LtiModel):
        d = model.d
        qdiag = np.r_[np.zeros(d), np.full(model.n - d, self.q_derivative)]
        return np.diag(qdiag), self.r_weight * np.eye(model.m)


@dataclass
class StepRecord:
    step: int
    positions: np.ndarray
    controls: np.ndarray
    solve_ms: np.ndarray
    total_mass: float
    coverage: float
    V: np.ndarray | None = None
    radius: np.ndarray | None = None
    eps: np.ndarray | None = None

    def to_json(self) -> dict:
        rec = {
            "step": self.step,
            "positions": self.positions.tolist(),
            "controls": self.controls.tolist(),
            "solve_ms": self.solve_ms.tolist(),
            "total_mass": self.total_mass,
            "coverage": self.coverage,
        }
        if self.V is not None:
            rec.update(V=self.V.tolist(), radius=self.radius.tolist(), eps=self.eps.tolist())
        return rec


@dataclass
class SimTrace:
    config: SwarmConfig
    initial_positions: np.ndarray
    steps: list = field(default_factory=list)
    reached: bool = False
    final_field: SampleField | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def positions(self) -> np.ndarray:
        """(steps, agents, d) array of positions after each step."""
        if not self.steps:
            return np.empty((0,) + self.initial_positions.shape)
        return np.stack([s.positions for s in self.steps])

    def coverage(self) -> np.ndarray:
        return np.array([s.coverage for s in self.steps])

    def mean_solve_ms(self) -> float:
        if not self.steps:
            return 0.0
        return float(np.mean([s.solve_ms.mean() for s in self.steps]))

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for s in self.steps:
                fh.write(json.dumps(s.to_json()) + "\n")

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "coverage", "total_mass", "mean_solve_ms", "max_solve_ms"])
            for s in self.steps:
                w.writerow([s.step, f"{s.coverage:.10g}", f"{s.total_mass:.10g}",
                            f"{s.solve_ms.mean():.6g}", f"{s.solve_ms.max():.6g}"])


def comm_graph(positions, comm_range: float) -> list[list[int]]:
    """Symmetric adjacency lists of the geometric graph with radius ``comm_range``."""
    P = np.asarray(positions, dtype=float)
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=-1)
    adj = (D <= comm_range) & ~np.eye(len(P), dtype=bool)
    return [np.flatnonzero(row).tolist() for row in adj]


def coverage_fraction(fld: SampleField) -> float:
    return float(min(1.0, max(0.0, 1.0 - fld.total_mass / fld.initial_mass)))


class _Agent:
    """Per-agent mutable simulation state (state vector, view, previous reference)."""

    def __init__(self, x: np.ndarray, view: SampleField):
        self.x = x
        self.view = view
        self.r_prev: np.ndarray | None = None


def _stage_a(cfg: SwarmConfig, model: LtiModel, Q, R, spec: StabilitySpec | None,
             agent: _Agent):
    """Horizon prediction + solve for one agent; reads only that agent's state and view."""
    lo = np.full(model.m, -cfg.u_bound)
    hi = np.full(model.m, cfg.u_bound)
    hd = build_horizon_data(agent.view, model, AgentState(agent.x), cfg.horizon, Q, R,
                            cfg.density, lo, hi)
    x0 = AgentState(agent.x)
    diag = None
    t0 = time.perf_counter()
    if cfg.solver_backend == "full_kkt":
        # the unconstrained baseline: bounds only enter through the rollout predictor
        u = solve_full(assemble_kkt(model, hd, x0)).first_input(model.m)
    elif cfg.solver_backend == "condensed":
        u, _ = solve_box_qp(condense(model, hd, x0, lo, hi))
    else:
        r_next = hd.ref_seq[0]
        r_now = r_next if agent.r_prev is None else agent.r_prev
        es = ErrorState.from_references(model, agent.x, r_now, r_next)
        res = solve_stable_qcqp(condense(model, hd, x0, lo, hi), spec, model, es)
        u = res.u
        diag = (spec.V(es.e), res.radius, res.eps)
    elapsed = (time.perf_counter() - t0) * 1e3
    return u, elapsed, hd.ref_seq[0], diag


def run_sim(cfg: SwarmConfig, initial_positions=None) -> SimTrace:
    """Run the coverage mission until ``coverage_target`` or ``max_steps``."""
    cfg.validate()
    model = cfg.build_model()
    Q, R = cfg.weights(model)
    fld = cfg.build_field()
    rng = np.random.default_rng(cfg.seed + 1)
    lo, hi = np.asarray(cfg.lo, float), np.asarray(cfg.hi, float)
    if initial_positions is None:
        initial_positions = rng.uniform(lo, hi, size=(cfg.n_agents, model.d))
    initial_positions = np.asarray(initial_positions, dtype=float)
    agents = [_Agent(lift_reference(p, model), fld) for p in initial_positions]
    spec = synthesize_p(model, cfg.contraction, cfg.rho) if cfg.solver_backend == "condensed_stable" else None
    d = cfg.density
    trace = SimTrace(cfg, initial_positions)
    truth = fld
    pool = ThreadPoolExecutor() if cfg.parallel else None

    try:
        for k in range(cfg.max_steps):
            if coverage_fraction(truth) >= cfg.coverage_target or truth.is_exhausted():
                break
            # Stage A: independent per-agent solves
            if pool is not None:
                results = list(pool.map(lambda a: _stage_a(cfg, model, Q, R, spec, a), agents))
            else:
                results = [_stage_a(cfg, model, Q, R, spec, a) for a in agents]
            for a, (u, _, r_next, _) in zip(agents, results):
                a.x = model.A @ a.x + model.B @ u
                a.r_prev = r_next
            pos = np.array([model.C @ a.x for a in agents])

            # Stage B: kernels against the start-of-step field, applied jointly
            removed = np.zeros(len(truth))
            for a, p in zip(agents, pos):
                amount = decay_kernel(truth, p, d.eta, d.sigma_c, d.r_c)
                removed += amount
                a.view = a.view.with_gamma(np.maximum(0.0, a.view.gamma - decay_kernel(a.view, p, d.eta, d.sigma_c, d.r_c)))
            truth = truth.with_gamma(np.maximum(0.0, truth.gamma - removed))

            # Stage C: synchronous min-merge over the communication graph
            if (k + 1) % cfg.exchange_every == 0:
                adj = comm_graph(pos, cfg.comm_range)
                old = [a.view.gamma for a in agents]
                for i, a in enumerate(agents):
                    if adj[i]:
                        merged = np.minimum.reduce([old[i], *(old[j] for j in adj[i])])
                        a.view = a.view.with_gamma(merged)

            rec = StepRecord(
                step=k,
                positions=pos,
                controls=np.array([r[0] for r in results]),
                solve_ms=np.array([r[1] for r in results]),
                total_mass=truth.total_mass,
                coverage=coverage_fraction(truth),
            )
            if spec is not None:
                diag = np.array([r[3] for r in results])
                rec.V, rec.radius, rec.eps = diag[:, 0], diag[:, 1], diag[:, 2]
            trace.steps.append(rec)
    finally:
        if pool is not None:
            pool.shutdown()

    trace.reached = coverage_fraction(truth) >= cfg.coverage_target
    trace.final_field = truth
    return trace
