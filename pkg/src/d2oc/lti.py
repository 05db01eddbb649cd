"""Discrete-time LTI agent models and the canonical test fleets."""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np


class ContractError(ValueError):
    """Raised when an operation's input violates its dimensional contract."""


def _frozen(a, ndim: int, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, ndmin=ndim)
    if arr.ndim != ndim:
        raise ContractError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiModel:
    """x[k+1] = A x[k] + B u[k],  y[k] = C x[k].

    Matrices are stored as read-only float arrays so a model can be shared
    freely between agents and threads.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A, 2, "A")
        B = _frozen(self.B, 2, "B")
        C = _frozen(self.C, 2, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ContractError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ContractError(f"B has {B.shape[0]} rows, expected {n}")
        if C.shape[1] != n:
            raise ContractError(f"C has {C.shape[1]} columns, expected {n}")
        if np.linalg.matrix_rank(C) != C.shape[0]:
            raise ContractError("C must have full row rank")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        C_pinv = np.linalg.pinv(C)
        C_pinv.setflags(write=False)
        object.__setattr__(self, "C_pinv", C_pinv)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True, eq=False)
class AgentState:
    x: np.ndarray
    k: int = 0

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x, 1, "x"))
        if self.k < 0:
            raise ContractError("time index must be nonnegative")


@dataclass(frozen=True, eq=False)
class PowerSequence:
    """``powA[l] = A**l`` for l = 0..T and ``powAB[l] = A**l B`` for l = 0..T-1."""

    powA: list
    powAB: list

    @property
    def T(self) -> int:
        return len(self.powAB)


def _check_vec(v, size: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (size,):
        raise ContractError(f"{name} must have length {size}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"{name} has non-finite entries")
    return v


def step(model: LtiModel, x: AgentState, u) -> AgentState:
    u = _check_vec(u, model.m, "u")
    xv = _check_vec(x.x, model.n, "x")
    return AgentState(model.A @ xv + model.B @ u, x.k + 1)


def output(model: LtiModel, x: AgentState) -> np.ndarray:
    return model.C @ _check_vec(x.x, model.n, "x")


def power_sequence(model: LtiModel, T: int) -> PowerSequence:
    """Powers of A and the input-response blocks up to horizon ``T``.

    Each power is one product away from the previous one, so the whole
    sequence costs O(T n^2 (n + m)).
    """
    if T < 1:
        raise ContractError("horizon T must be >= 1")
    powA = [np.eye(model.n)]
    powAB = []
    for _ in range(T):
        powAB.append(powA[-1] @ model.B)
        powA.append(model.A @ powA[-1])
    return PowerSequence(powA, powAB)


def lift_reference(qbar, model: LtiModel) -> np.ndarray:
    """Map a position target into state space through the pseudo-inverse of C."""
    qbar = _check_vec(qbar, model.d, "qbar")
    return model.C_pinv @ qbar


def integrator_chain(order: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization of a scalar chain of ``order`` integrators.

    The state is (position, 1st derivative, ..., (order-1)-th derivative) and
    the input drives the highest derivative.
    """
    if dt <= 0:
        raise ContractError("dt must be positive")
    A = np.zeros((order, order))
    for i in range(order):
        for j in range(i, order):
            A[i, j] = dt ** (j - i) / factorial(j - i)
    B = np.array([[dt ** (order - i) / factorial(order - i)] for i in range(order)])
    return A, B


def make_planar_chain(order: int, dt: float = 0.1) -> LtiModel:
    """Two decoupled planar axes, each an ``order``-integrator chain.

    State layout is derivative-major: ``[px, py, vx, vy, ...]``, so the
    position output selects slots 0 and 1.
    """
    Ac, Bc = integrator_chain(order, dt)
    I2 = np.eye(2)
    C = np.zeros((2, 2 * order))
    C[:, :2] = I2
    return LtiModel(np.kron(Ac, I2), np.kron(Bc, I2), C)


def make_quadrotor8(dt: float = 0.1) -> LtiModel:
    """Linearized planar quadrotor: position, velocity, acceleration and jerk per axis.

    The input is the snap command on each axis. n=8, m=2, d=2.
    """
    return make_planar_chain(4, dt)


def make_double_integrator(dt: float = 0.1) -> LtiModel:
    return make_planar_chain(2, dt)


def make_scalar(a: float = 1.0, b: float = 1.0, c: float = 1.0) -> LtiModel:
    return LtiModel([[a]], [[b]], [[c]])


FLEET_MODELS = {
    "scalar": lambda dt=0.1: make_scalar(),
    "double_integrator": make_double_integrator,
    "quadrotor8": make_quadrotor8,
}
