"""Horizon sweep timing the full KKT baseline against the condensed solver.

Only the online work is charged: problem assembly plus solve for each
backend. Field generation and the horizon prediction are done once per T,
outside the timed region, and shared by every backend.
"""

from __future__ import annotations

import csv
import gc
import time
from dataclasses import dataclass

import numpy as np

from .condensed import condense, solve_box_qp
from .config import BenchConfig
from .density import build_horizon_data
from .kkt import assemble_kkt, solve_full
from .lti import FLEET_MODELS, AgentState, lift_reference
from .stability import ErrorState, solve_stable_qcqp, synthesize_p
from .swarm import SwarmConfig

CSV_HEADER = ["backend", "T", "n", "m", "reps", "mean_ms", "std_ms", "min_ms", "max_ms"]
TIMING_BOUNDARY = "timed region: problem assembly + solve per repetition; field and horizon prediction excluded"


@dataclass(frozen=True)
class BenchRecord:
    backend: str
    T: int
    n: int
    m: int
    reps: int
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float

    @classmethod
    def from_samples(cls, backend, T, n, m, samples_ms) -> "BenchRecord":
        s = np.asarray(samples_ms, dtype=float)
        std = float(s.std(ddof=1)) if s.size > 1 else 0.0
        return cls(backend, T, n, m, s.size, float(s.mean()), std, float(s.min()), float(s.max()))

    def row(self) -> list:
        return [self.backend, self.T, self.n, self.m, self.reps,
                f"{self.mean_ms:.6f}", f"{self.std_ms:.6f}", f"{self.min_ms:.6f}", f"{self.max_ms:.6f}"]


def _solver(backend, model, hd, x0, lo, hi, spec):
    if backend == "full_kkt":
        return lambda: solve_full(assemble_kkt(model, hd, x0))
    if backend == "condensed":
        return lambda: solve_box_qp(condense(model, hd, x0, lo, hi))
    es = ErrorState.from_references(model, x0.x, hd.ref_seq[0], hd.ref_seq[0])
    return lambda: solve_stable_qcqp(condense(model, hd, x0, lo, hi), spec, model, es)


def run_bench(bench: BenchConfig, swarm: SwarmConfig | None = None, progress=None) -> list[BenchRecord]:
    """Time every (backend, T) pair of the sweep on one agent with a frozen field."""
    swarm = swarm or SwarmConfig()
    model = FLEET_MODELS[bench.model](swarm.dt)
    fld = swarm.build_field()
    rng = np.random.default_rng(bench.seed)
    start = rng.uniform(swarm.lo, swarm.hi)
    x0 = AgentState(lift_reference(start, model))
    Q, R = swarm.weights(model)
    lo = np.full(model.m, -swarm.u_bound)
    hi = np.full(model.m, swarm.u_bound)
    spec = synthesize_p(model, swarm.contraction, swarm.rho) if "condensed_stable" in bench.backends else None

    records = []
    for T in bench.horizons:
        hd = build_horizon_data(fld, model, x0, T, Q, R, swarm.density, lo, hi)
        for backend in bench.backends:
            solve = _solver(backend, model, hd, x0, lo, hi, spec)
            solve()  # warm-up: first-call allocation is not part of the steady state
            samples = np.empty(bench.reps)
            gc_was = gc.isenabled()
            gc.disable()
            try:
                for i in range(bench.reps):
                    t0 = time.perf_counter()
                    solve()
                    samples[i] = (time.perf_counter() - t0) * 1e3
            finally:
                if gc_was:
                    gc.enable()
            rec = BenchRecord.from_samples(backend, T, model.n, model.m, samples)
            records.append(rec)
            if progress:
                progress(rec)
    return records


def fit_slopes(records) -> dict:
    """Least-squares slope of log(mean_ms) against log(T), per backend with two or more horizons."""
    slopes = {}
    for backend in dict.fromkeys(r.backend for r in records):
        pts = [(r.T, r.mean_ms) for r in records if r.backend == backend]
        if len({T for T, _ in pts}) < 2:
            continue
        T, t = np.log(np.array(pts, dtype=float)).T
        slopes[backend] = float(np.polyfit(T, t, 1)[0])
    return slopes


def write_bench_csv(records, path, slopes=None) -> None:
    """One row per (backend, T); a trailing ``slope`` column appears when slopes were fitted."""
    slopes = fit_slopes(records) if slopes is None else slopes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER + (["slope"] if slopes else []))
        for r in records:
            extra = [f"{slopes[r.backend]:.6f}" if r.backend in slopes else ""] if slopes else []
            w.writerow(r.row() + extra)
