"""Per-node dynamics of the distributed omniscient observer.

Each node i keeps an intermediate state ``z_i`` and two adaptive coupling
gains. Its estimate of the full network state is ``z_i + Gbar_i y_i``.
The functions here are the reference, node-by-node form; the vectorized
network simulation in :mod:`omniobs.simulation` is tested against them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionMismatch, InconsistentAccess, NotOrthonormal
from .numerics import ORTHO_TOL, orthonormal_complement

# below this norm h() returns the zero vector
H_GUARD = 1e-9


@dataclass
class NodeGains:
    E_bar: np.ndarray
    F_bar: np.ndarray
    G_bar: np.ndarray
    B_bar: np.ndarray
    T_id: np.ndarray
    T_iu: np.ndarray

    @property
    def n(self):
        return self.E_bar.shape[0]

    @property
    def delta(self):
        return self.T_id.shape[1]

    def check(self, tol=ORTHO_TOL):
        d, r = self.T_id.shape[1], self.T_iu.shape[1]
        if d + r != self.n:
            raise DimensionMismatch(f"T_id and T_iu widths {d}+{r} != n={self.n}")
        if np.max(np.abs(self.T_id.T @ self.T_id - np.eye(d)), initial=0) > tol:
            raise NotOrthonormal("T_id columns are not orthonormal")
        if np.max(np.abs(self.T_iu.T @ self.T_iu - np.eye(r)), initial=0) > tol:
            raise NotOrthonormal("T_iu columns are not orthonormal")
        if np.max(np.abs(self.T_id.T @ self.T_iu), initial=0) > tol:
            raise NotOrthonormal("T_iu is not orthogonal to T_id")
        return self


@dataclass(frozen=True)
class AdaptiveParams:
    phi: float = 1.0
    phi_s: float = 1.0
    gamma0: float = 1.0
    gamma_s0: float = 1.0

    def __post_init__(self):
        for name in ("phi", "phi_s", "gamma0", "gamma_s0"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")


@dataclass
class NodeState:
    z: np.ndarray
    gamma: float
    gamma_s: float

    @classmethod
    def initial(cls, n, params: AdaptiveParams):
        return cls(np.zeros(n), params.gamma0, params.gamma_s0)


@dataclass
class AuxObserverState:
    xhat: np.ndarray = field(default_factory=lambda: np.zeros(0))


def derive_bar_gains(A, C_i, T_id, T_iu, E_i, F_i, G_i, B_i) -> NodeGains:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    C_i = np.asarray(C_i, dtype=float).reshape(-1, n)
    T_id = np.asarray(T_id, dtype=float).reshape(n, -1)
    d = T_id.shape[1]
    if T_iu is None:
        T_iu = orthonormal_complement(T_id)
    T_iu = np.asarray(T_iu, dtype=float).reshape(n, -1)
    p = C_i.shape[0]
    E_i = np.asarray(E_i, dtype=float).reshape(d, d)
    F_i = np.asarray(F_i, dtype=float).reshape(d, p)
    G_i = np.asarray(G_i, dtype=float).reshape(d, p)
    B_i = np.asarray(B_i, dtype=float).reshape(n, -1)
    if T_iu.shape[1] + d != n:
        raise DimensionMismatch(f"T_id ({d} cols) and T_iu ({T_iu.shape[1]} cols) do not span R^{n}")

    P_u = T_iu @ T_iu.T
    G_bar = T_id @ G_i
    E_bar = T_id @ E_i @ T_id.T + P_u @ A
    F_bar = T_id @ F_i + P_u @ A @ G_bar
    B_bar = (np.eye(n) - G_bar @ C_i) @ B_i
    return NodeGains(E_bar, F_bar, G_bar, B_bar, T_id, T_iu)


def consensus_residual(i, estimates, g, T_iu):
    """``T_iu^T sum_j a_ij (xhat_i - xhat_j)``."""
    estimates = np.asarray(estimates, dtype=float)
    a = g.weights[i]
    diff = np.zeros(estimates.shape[1])
    for j in np.flatnonzero(a):
        diff += a[j] * (estimates[i] - estimates[j])
    return T_iu.T @ diff


def h(omega):
    omega = np.asarray(omega, dtype=float)
    nrm = np.linalg.norm(omega)
    if nrm <= H_GUARD:
        return np.zeros_like(omega)
    return omega / nrm


def coupling_H(eps_iu, gamma, gamma_s, T_iu):
    eps_iu = np.asarray(eps_iu, dtype=float)
    return T_iu @ (gamma * eps_iu + gamma_s * h(eps_iu))


def node_derivative(state: NodeState, gains: NodeGains, params: AdaptiveParams,
                    y_i, u_i, eps_iu):
    """Return ``(zdot, gamma_dot, gamma_s_dot)`` for one node.

    The coupling term enters through ``eps_iu``, the projected consensus
    residual, so neighbor estimates are never needed here.
    """
    y_i = np.atleast_1d(np.asarray(y_i, dtype=float))
    u_i = np.atleast_1d(np.asarray(u_i, dtype=float))
    eps_iu = np.atleast_1d(np.asarray(eps_iu, dtype=float))
    zdot = gains.E_bar @ state.z + gains.F_bar @ y_i
    if gains.B_bar.shape[1]:
        zdot = zdot + gains.B_bar @ u_i
    zdot = zdot - coupling_H(eps_iu, state.gamma, state.gamma_s, gains.T_iu)
    nrm = np.linalg.norm(eps_iu)
    return zdot, params.phi * nrm**2, params.phi_s * nrm


def estimate(state: NodeState, gains: NodeGains, y_i):
    y_i = np.atleast_1d(np.asarray(y_i, dtype=float))
    if gains.G_bar.shape[1] == 0:
        return state.z.copy()
    return state.z + gains.G_bar @ y_i


def aux_zeta(i, xhat_aux, C_breve, w_i, own_output, relative_output, g):
    """Innovation combining own-output and neighbor relative-output terms.

    ``relative_output`` is ``sum_j a_ij (y_i - y_j)``; ``xhat_aux`` holds every
    agent's auxiliary estimate, one row per agent.
    """
    xhat_aux = np.atleast_2d(np.asarray(xhat_aux, dtype=float))
    C_breve = np.atleast_2d(np.asarray(C_breve, dtype=float))
    p = C_breve.shape[0]
    if w_i > 0 and own_output is None:
        raise InconsistentAccess(f"agent {i} has w_i={w_i} but no own output")
    if w_i < 0:
        raise ValueError("access weights must be nonnegative")
    zeta = np.zeros(p)
    if w_i > 0:
        zeta += w_i * (np.atleast_1d(own_output) - C_breve @ xhat_aux[i])
    a = g.weights[i]
    nbrs = np.flatnonzero(a)
    if nbrs.size:
        est_rel = sum(a[j] * (xhat_aux[i] - xhat_aux[j]) for j in nbrs)
        zeta += np.atleast_1d(relative_output) - C_breve @ est_rel
    return zeta


def aux_observer_derivative(i, xhat_aux, A_breve, B_breve, C_breve, c, M, w_i,
                            u_breve_i, own_output, relative_output, g):
    xhat_aux = np.atleast_2d(np.asarray(xhat_aux, dtype=float))
    A_breve = np.atleast_2d(A_breve)
    B_breve = np.atleast_2d(B_breve)
    zeta = aux_zeta(i, xhat_aux, C_breve, w_i, own_output, relative_output, g)
    return (A_breve @ xhat_aux[i] + B_breve @ np.atleast_1d(u_breve_i)
            + c * np.atleast_2d(M) @ zeta)
