"""Reference density as weighted sample points.

Covers GMM sampling, local sample selection around an agent, Gaussian-kernel
weight decay, min-merge exchange between agents, and the virtual rollout that
produces the time-varying penalty/reference sequence used by the horizon
solvers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .lti import AgentState, ContractError, LtiModel


class FieldExhausted(RuntimeError):
    """No sample point with positive weight is left in the field."""


@dataclass(frozen=True, eq=False)
class SampleField:
    """Weighted sample points inside an axis-aligned box.

    ``points`` is (N, d), ``gamma`` is (N,). Operations never mutate a field;
    they return a copy with new weights.
    """

    points: np.ndarray
    gamma: np.ndarray
    initial_mass: float
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        gam = np.array(self.gamma, dtype=float).reshape(-1)
        if pts.shape[0] != gam.shape[0]:
            raise ContractError("points and gamma lengths differ")
        if np.any(gam < 0):
            raise ContractError("sample weights must be nonnegative")
        if not self.initial_mass > 0:
            raise ContractError("initial_mass must be positive")
        for name, arr in (("points", pts), ("gamma", gam)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))

    @classmethod
    def from_points(cls, points, gamma=None, lo=None, hi=None) -> "SampleField":
        pts = np.array(points, dtype=float, ndmin=2)
        if gamma is None:
            gamma = np.full(pts.shape[0], 1.0 / pts.shape[0])
        gamma = np.asarray(gamma, dtype=float)
        lo = pts.min(axis=0) if lo is None else lo
        hi = pts.max(axis=0) if hi is None else hi
        return cls(pts, gamma, float(gamma.sum()), lo, hi)

    @property
    def total_mass(self) -> float:
        return float(self.gamma.sum())

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_gamma(self, gamma) -> "SampleField":
        return replace(self, gamma=np.asarray(gamma, dtype=float))

    def is_exhausted(self) -> bool:
        return not np.any(self.gamma > 0)


@dataclass(frozen=True, eq=False)
class LocalSelection:
    indices: np.ndarray
    gamma_sum: float
    qbar: np.ndarray
    Qbar: np.ndarray


@dataclass(frozen=True)
class DensityParams:
    """Stage A/B tuning: sensing radius, decay kernel, and the empty-radius fallback."""

    sense_range: float = 5.0
    eta: float = 0.02
    sigma_c: float = 2.5
    r_c: float = 5.0
    k_min: int = 10


@dataclass(frozen=True, eq=False)
class HorizonData:
    """Penalty matrices ``Qbar_seq[l]`` paired with lifted references ``ref_seq[l]``.

    ``ref_seq[l]`` is the state-space reference one step after the stage that
    produced ``Qbar_seq[l]``; ``qbar_seq`` keeps the position-space barycenters.
    """

    Q: np.ndarray
    R: np.ndarray
    Qbar_seq: list
    ref_seq: list
    qbar_seq: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.Qbar_seq) != len(self.ref_seq) or not self.Qbar_seq:
            raise ContractError("Qbar_seq and ref_seq must be non-empty and equal length")
        R = np.asarray(self.R, dtype=float)
        if not np.allclose(R, R.T) or np.linalg.eigvalsh(R).min() <= 0:
            raise ContractError("R must be symmetric positive definite")

    @property
    def T(self) -> int:
        return len(self.Qbar_seq)

    @classmethod
    def constant(cls, Q, R, Qbar, ref, T: int) -> "HorizonData":
        return cls(np.asarray(Q, float), np.asarray(R, float),
                   [np.asarray(Qbar, float)] * T, [np.asarray(ref, float)] * T)


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(cov)
    if w.min() < -1e-12 * max(1.0, abs(w).max()):
        raise ContractError("GMM covariance must be positive semidefinite")
    return U * np.sqrt(np.clip(w, 0.0, None))


def make_gmm_field(lo, hi, components, n_sp: int, seed: int = 0) -> SampleField:
    """Sample ``n_sp`` points from a Gaussian mixture, clipped to the box [lo, hi].

    ``components`` is a sequence of ``(mean, covariance, mix_weight)``. Every
    point gets weight 1/n_sp, so the field carries unit mass.
    """
    if n_sp < 1:
        raise ContractError("n_sp must be >= 1")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    means = [np.asarray(c[0], dtype=float) for c in components]
    roots = [_psd_sqrt(np.asarray(c[1], dtype=float)) for c in components]
    mix = np.array([c[2] for c in components], dtype=float)
    if np.any(mix < 0) or abs(mix.sum() - 1.0) > 1e-9:
        raise ContractError("mix weights must be nonnegative and sum to 1")

    rng = np.random.default_rng(seed)
    labels = rng.choice(len(components), size=n_sp, p=mix)
    z = rng.standard_normal((n_sp, lo.shape[0]))
    pts = np.empty_like(z)
    for c, (mu, S) in enumerate(zip(means, roots)):
        sel = labels == c
        pts[sel] = mu + z[sel] @ S.T
    pts = np.clip(pts, lo, hi)
    gamma = np.full(n_sp, 1.0 / n_sp)
    return SampleField(pts, gamma, 1.0, lo, hi)


def _select(points, gamma, y, r_s, k_min):
    """(indices, gamma_sum, qbar) of the Stage A selection, or None if nothing is left."""
    live = gamma > 0
    if not live.any():
        return None
    diff = points - y
    d2 = np.einsum("ij,ij->i", diff, diff)
    near = live & (d2 <= r_s * r_s)
    if near.any():
        idx = np.flatnonzero(near)
    else:
        cand = np.flatnonzero(live)
        k = min(k_min, cand.size)
        if k < cand.size:
            cand = np.sort(cand[np.argpartition(d2[cand], k - 1)[:k]])
        idx = cand
    w = gamma[idx]
    gamma_sum = float(w.sum())
    return idx, gamma_sum, (w @ points[idx]) / gamma_sum


def _kernel(points, y, eta, sigma_c, r_c):
    diff = points - y
    d2 = np.einsum("ij,ij->i", diff, diff)
    amount = eta * np.exp(-d2 / (2.0 * sigma_c ** 2))
    amount[d2 > r_c * r_c] = 0.0
    return amount


def select_local(fld: SampleField, y, r_s: float, model: LtiModel, Q,
                 k_min: int = 10) -> LocalSelection | None:
    """Stage A selection around position ``y``.

    Takes every positive-weight point within ``r_s``; if there is none, the
    ``k_min`` nearest positive-weight points instead. Returns None when the
    field has no positive weight left.
    """
    sel = _select(fld.points, fld.gamma, np.asarray(y, dtype=float), r_s, k_min)
    if sel is None:
        return None
    idx, gamma_sum, qbar = sel
    CtC = model.C.T @ model.C
    return LocalSelection(idx, gamma_sum, qbar, gamma_sum * CtC + np.asarray(Q, dtype=float))


def decay_kernel(fld: SampleField, y, eta: float, sigma_c: float, r_c: float) -> np.ndarray:
    """Per-point mass removed by one visit at ``y`` (before clipping at zero)."""
    return _kernel(fld.points, np.asarray(y, dtype=float), eta, sigma_c, r_c)


def decay_weights(fld: SampleField, y, eta: float, sigma_c: float, r_c: float) -> SampleField:
    if eta < 0:
        raise ContractError("eta must be nonnegative")
    if eta == 0:
        return fld
    return fld.with_gamma(np.maximum(0.0, fld.gamma - decay_kernel(fld, y, eta, sigma_c, r_c)))


def exchange_weights(local: SampleField, neighbor_views) -> SampleField:
    """Elementwise-minimum merge of an agent's weights with its neighbors' views."""
    merged = local.gamma
    for view in neighbor_views:
        if len(view) != len(local):
            raise ContractError("neighbor view indexes a different point set")
        merged = np.minimum(merged, view.gamma)
    return local if merged is local.gamma else local.with_gamma(merged)


def build_horizon_data(fld: SampleField, model: LtiModel, x0: AgentState, T: int,
                       Q, R, params: DensityParams = DensityParams(),
                       u_min=None, u_max=None) -> HorizonData:
    """Predict the penalty/reference sequence over ``T`` steps.

    Runs a virtual rollout on a private copy of the weights: select around the
    predicted position, record the pair, decay there, then advance with the
    box-clipped one-step condensed minimizer. ``fld`` itself is untouched.
    """
    from .condensed import box_minimizer, condense_arrays

    if T < 1:
        raise ContractError("horizon T must be >= 1")
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    lo = np.full(model.m, -np.inf) if u_min is None else np.broadcast_to(u_min, (model.m,))
    hi = np.full(model.m, np.inf) if u_max is None else np.broadcast_to(u_max, (model.m,))
    A, B, C = model.A, model.B, model.C
    CtC = C.T @ C
    pts = fld.points
    gamma = fld.gamma.copy()
    x = np.array(x0.x, dtype=float)
    Qbars, refs, qbars = [], [], []
    for _ in range(T):
        y = C @ x
        sel = _select(pts, gamma, y, params.sense_range, params.k_min)
        if sel is None:
            if not Qbars:
                raise FieldExhausted("field has no positive weight left")
            Qbars.append(Qbars[-1])
            refs.append(refs[-1])
            qbars.append(qbars[-1])
            continue
        _, gamma_sum, qbar = sel
        Qb = gamma_sum * CtC + Q
        ref = model.C_pinv @ qbar
        Qbars.append(Qb)
        refs.append(ref)
        qbars.append(qbar)
        if params.eta > 0:
            np.maximum(0.0, gamma - _kernel(pts, y, params.eta, params.sigma_c, params.r_c), out=gamma)
        H, g = condense_arrays(A, B, R, (Qb,), (ref,), x)
        u, _ = box_minimizer(H, g, lo, hi)
        x = A @ x + B @ u
    return HorizonData(Q, R, Qbars, refs, qbars)


def write_field_csv(fld: SampleField, path) -> None:
    names = ["x", "y", "z"][: fld.dim] if fld.dim <= 3 else [f"q{i}" for i in range(fld.dim)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "gamma"])
        for q, g in zip(fld.points, fld.gamma):
            w.writerow([*(f"{v:.10g}" for v in q), f"{g:.10g}"])
