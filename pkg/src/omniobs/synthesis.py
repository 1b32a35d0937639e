"""Analytical observer gain synthesis and constraint verification.

Three constructions are provided:

* :func:`synth_hetero` - every agent measures its own output, agents may have
  different dynamics.
* :func:`synth_homo` - identical agents, most of which only measure relative
  outputs; agents in ``R`` measure their own output.
* :func:`synth_extension` - identical agents whose omniscient layer is fed by a
  per-agent auxiliary observer, so neighbor inputs are not needed.

All return an :class:`ObserverDesign`, which :func:`verify_constraints` audits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import DimensionMismatch, NotConnected, NotDetectable, ZeroW
from .graph import Graph, bar_rows, is_connected, laplacian, numerical_rank
from .numerics import image_equal, is_detectable, place_observer_gain, solve_care
from .observer_core import derive_bar_gains

CONSTRAINT_TOL = 1e-8


@dataclass
class AgentModel:
    """One agent's LTI model ``x' = A x + B u, y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionMismatch(f"A must be square, got {self.A.shape}")
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        if numerical_rank(self.C) != self.C.shape[0]:
            raise DimensionMismatch("C must have full row rank")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def p(self):
        return self.C.shape[0]

    def detectable(self):
        return is_detectable(self.A, self.C)


def single_integrator(dim=1) -> AgentModel:
    return AgentModel(np.zeros((dim, dim)), np.eye(dim), np.eye(dim))


def double_integrator(dim=1) -> AgentModel:
    """Position/velocity model per axis, position measured."""
    z, i = np.zeros((dim, dim)), np.eye(dim)
    return AgentModel(np.block([[z, i], [z, z]]), np.vstack([z, i]), np.hstack([i, z]))


@dataclass
class NodeSolution:
    B_i: np.ndarray
    B_mi: np.ndarray
    T_id: np.ndarray
    E_i: np.ndarray
    F_i: np.ndarray
    G_i: np.ndarray
    branch: int = 1

    @property
    def delta(self):
        return self.T_id.shape[1]

    def to_dict(self):
        return {
            "branch": self.branch,
            "delta": self.delta,
            "m_i": self.B_i.shape[1],
            "m_minus_i": self.B_mi.shape[1],
            **{k: _mat(getattr(self, k)) for k in ("B_i", "B_mi", "T_id", "E_i", "F_i", "G_i")},
        }


@dataclass
class RawSolution:
    nodes: list

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, i):
        return self.nodes[i]

    def to_dict(self):
        return {"nodes": [s.to_dict() for s in self.nodes]}


@dataclass
class InputSplit:
    """How the stacked agent input ``u`` is split for every node.

    ``u_i = own[i] @ u`` and ``u_-i = other[i] @ u`` so that
    ``B u = B_i u_i + B_-i u_-i``.
    """

    own: list
    other: list
    description: str = ""

    def to_dict(self):
        return {
            "description": self.description,
            "own": [_mat(m) for m in self.own],
            "other": [_mat(m) for m in self.other],
        }


@dataclass
class AuxDesign:
    """Gains of the per-agent auxiliary observer feeding the omniscient layer."""

    model: AgentModel
    c: float
    M: np.ndarray
    S: np.ndarray
    w: np.ndarray
    lambda_min: float


@dataclass
class ObserverDesign:
    kind: str
    A: np.ndarray
    B: np.ndarray
    C: list
    solution: RawSolution
    gains: list
    split: InputSplit
    graph: Graph | None = None
    R: list | None = None
    aux: AuxDesign | None = None
    agent_dims: list = field(default_factory=list)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def N(self):
        return len(self.gains)

    def __iter__(self):
        # allows ``solution, gains, split = synth_...(...)``
        return iter((self.solution, self.gains, self.split))

    def report(self, **kw):
        return verify_constraints(self.solution, self.A, self.B, self.C, **kw)


@dataclass
class ConstraintCheck:
    name: str
    passed: bool
    residual: float
    detail: str = ""


@dataclass
class ConstraintReport:
    global_checks: list
    node_checks: list  # one list of ConstraintCheck per node
    branches: list
    tol: float = CONSTRAINT_TOL

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.all_checks())

    def all_checks(self):
        yield from self.global_checks
        for checks in self.node_checks:
            yield from checks

    def max_residual(self, exclude=("E_stable",)):
        vals = [c.residual for c in self.all_checks() if c.name not in exclude]
        return max(vals, default=0.0)

    def failures(self):
        out = [c.name for c in self.global_checks if not c.passed]
        for i, checks in enumerate(self.node_checks):
            out += [f"node {i + 1}: {c.name}" for c in checks if not c.passed]
        return out

    def to_dict(self):
        def row(c):
            return {"constraint": c.name, "passed": c.passed, "residual": c.residual,
                    "detail": c.detail}
        return {
            "passed": self.passed,
            "tolerance": self.tol,
            "global": [row(c) for c in self.global_checks],
            "nodes": [
                {"node": i + 1, "branch": b, "checks": [row(c) for c in checks]}
                for i, (b, checks) in enumerate(zip(self.branches, self.node_checks))
            ],
        }

    def to_json(self, path=None, solution=None):
        data = self.to_dict()
        if solution is not None:
            data["solution"] = solution.to_dict()
        text = json.dumps(data, indent=2, sort_keys=True)
        if path is None:
            return text
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _mat(m):
    m = np.asarray(m, dtype=float)
    return {"shape": list(m.shape), "data": m.tolist()}


def _range_residual(x, basis):
    """Norm of the part of ``x`` outside the column space of ``basis``."""
    if x.size == 0:
        return 0.0
    if basis.size == 0:
        return float(np.linalg.norm(x))
    u, s, _ = np.linalg.svd(basis, full_matrices=False)
    r = int(np.sum(s > 1e-10 * s[0])) if s.size and s[0] > 0 else 0
    q = u[:, :r]
    return float(np.linalg.norm(x - q @ (q.T @ x)))


def _norm(m):
    m = np.asarray(m)
    return float(np.max(np.abs(m))) if m.size else 0.0


def _pick_branch(s, C_i):
    if s.branch in (1, 2):
        return s.branch
    if s.delta == C_i.shape[0] and _norm(s.E_i) == 0 and _norm(s.F_i) == 0:
        return 2
    return 1


def verify_constraints(sol: RawSolution, A, B, C_list, tol=CONSTRAINT_TOL) -> ConstraintReport:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    B = np.asarray(B, dtype=float).reshape(n, -1)
    m = B.shape[1]
    if len(C_list) != len(sol):
        raise DimensionMismatch(f"{len(C_list)} output maps for {len(sol)} nodes")

    t_all = np.hstack([s.T_id for s in sol.nodes])
    rank_t = numerical_rank(t_all)
    sv = np.linalg.svd(t_all, compute_uv=False) if t_all.size else np.zeros(1)
    glob = [ConstraintCheck("span_rank", rank_t == n, float(max(n - rank_t, 0)),
                            f"rank(col T_id)={rank_t}, n={n}, smallest sv={sv[min(n, sv.size) - 1]:.3e}")]

    node_checks, branches = [], []
    for i, s in enumerate(sol.nodes):
        C_i = np.asarray(C_list[i], dtype=float).reshape(-1, n)
        checks = []
        both = np.hstack([s.B_i.reshape(n, -1), s.B_mi.reshape(n, -1)])
        res_b = _range_residual(both, B) + _range_residual(B, both)
        eq = image_equal(both, B) if both.size or B.size else True
        checks.append(ConstraintCheck("input_split", eq and res_b <= tol * (1 + _norm(B)), res_b))
        d = s.delta
        res_c = _norm(s.T_id.T @ s.T_id - np.eye(d))
        checks.append(ConstraintCheck("T_id_orthonormal", res_c <= tol, res_c))
        dims_ok = s.B_i.shape[1] <= m and s.B_mi.shape[1] <= m and d <= n
        checks.append(ConstraintCheck("dimensions", dims_ok, 0.0 if dims_ok else 1.0,
                                      f"m_i={s.B_i.shape[1]}, m_-i={s.B_mi.shape[1]}, m={m}, delta={d}"))
        branch = _pick_branch(s, C_i)
        branches.append(branch)
        if branch == 1:
            res_e = _norm(s.G_i @ C_i @ s.B_mi - s.T_id.T @ s.B_mi)
            res_f = _norm(s.E_i @ s.T_id.T + (s.F_i - s.E_i @ s.G_i) @ C_i
                          - (s.T_id.T - s.G_i @ C_i) @ A)
            re = float(np.max(np.linalg.eigvals(s.E_i).real)) if d else -np.inf
            scale = 1 + _norm(A) * (1 + _norm(s.G_i))
            checks += [
                ConstraintCheck("input_decoupling", res_e <= tol * (1 + _norm(B)), res_e),
                ConstraintCheck("observer_sylvester", res_f <= tol * scale, res_f),
                ConstraintCheck("E_stable", re < 0, max(re, 0.0), f"max Re eig(E_i)={re:.6g}"),
            ]
        else:
            dp = d == C_i.shape[0]
            res_i = max(_norm(s.E_i), _norm(s.F_i))
            res_j = _norm(s.G_i @ C_i - s.T_id.T)
            checks += [
                ConstraintCheck("static_dims", dp, 0.0 if dp else 1.0, f"delta={d}, p={C_i.shape[0]}"),
                ConstraintCheck("static_zero_dynamics", res_i <= tol, res_i),
                ConstraintCheck("static_output_map", res_j <= tol, res_j),
            ]
        node_checks.append(checks)
    return ConstraintReport(glob, node_checks, branches, tol)


def _block_selector(dims, i):
    n = sum(dims)
    off = sum(dims[:i])
    t = np.zeros((n, dims[i]))
    t[off:off + dims[i], :] = np.eye(dims[i])
    return t


def _poles_for(pole_spec, i, n):
    if pole_spec is None:
        return None
    if isinstance(pole_spec, dict):
        return pole_spec.get(i)
    first = pole_spec[0] if len(pole_spec) else None
    if isinstance(first, (list, tuple, np.ndarray)):
        return pole_spec[i]
    return pole_spec


def synth_hetero(models, pole_spec=None, graph=None) -> ObserverDesign:
    """Block-selector solution for heterogeneous agents measuring their own output."""
    models = list(models)
    N = len(models)
    ns = [mo.n for mo in models]
    ms = [mo.m for mo in models]
    A = linalg.block_diag(*[mo.A for mo in models])
    B = linalg.block_diag(*[mo.B for mo in models])
    n, m = A.shape[0], B.shape[1]
    C_list, nodes, gains, own, other = [], [], [], [], []
    for i, mo in enumerate(models):
        if not mo.detectable():
            raise NotDetectable(f"agent {i + 1}: (A_i, C_i) is not detectable")
        L = place_observer_gain(mo.A, mo.C, _poles_for(pole_spec, i, mo.n))
        T_id = _block_selector(ns, i)
        C_i = mo.C @ T_id.T
        B_i = T_id @ mo.B
        cols = [q for q in range(N) if q != i]
        B_mi = np.zeros((n, sum(ms[q] for q in cols)))
        sel_u = np.zeros((sum(ms[q] for q in cols), m))
        col = 0
        for q in cols:
            ro, co = sum(ns[:q]), sum(ms[:q])
            B_mi[ro:ro + ns[q], col:col + ms[q]] = models[q].B
            sel_u[col:col + ms[q], co:co + ms[q]] = np.eye(ms[q])
            col += ms[q]
        own_u = np.zeros((ms[i], m))
        own_u[:, sum(ms[:i]):sum(ms[:i]) + ms[i]] = np.eye(ms[i])
        E_i = mo.A + L @ mo.C
        F_i = -L
        G_i = np.zeros((mo.n, mo.p))
        sol = NodeSolution(B_i, B_mi, T_id, E_i, F_i, G_i, branch=1)
        nodes.append(sol)
        C_list.append(C_i)
        gains.append(derive_bar_gains(A, C_i, T_id, None, E_i, F_i, G_i, B_i))
        own.append(own_u)
        other.append(sel_u)
    split = InputSplit(own, other, "u_i = own input; u_-i = inputs of all other agents")
    return ObserverDesign("hetero", A, B, C_list, RawSolution(nodes), gains, split,
                          graph=graph, agent_dims=ns)


def synth_homo(model: AgentModel, g: Graph, R, pole_spec=None) -> ObserverDesign:
    """Relative-output solution for identical agents; ``R`` holds 0-based ids
    of agents measuring their own output."""
    if not model.detectable():
        raise NotDetectable("(A, C) is not detectable")
    if not is_connected(g):
        raise NotConnected("communication graph is not connected")
    rows = bar_rows(g, R)
    N, nb, mb = g.n, model.n, model.m
    A = np.kron(np.eye(N), model.A)
    B = np.kron(np.eye(N), model.B)
    I_n = np.eye(nb)
    C_list, nodes, gains, own, other = [], [], [], [], []
    for i, br in enumerate(rows):
        nu = float(np.linalg.norm(br.row))
        T_id = np.kron(br.row[None, :], I_n).T / nu
        C_i = model.C @ np.kron(br.row[None, :], I_n)
        L = place_observer_gain(model.A, model.C, _poles_for(pole_spec, i, nb))
        B_i = T_id @ model.B / nu
        B_mi = (np.eye(N * nb) - T_id @ T_id.T) @ B
        E_i = model.A + L @ model.C
        F_i = -L / nu
        G_i = np.zeros((nb, model.p))
        nodes.append(NodeSolution(B_i, B_mi, T_id, E_i, F_i, G_i, branch=1))
        C_list.append(C_i)
        gains.append(derive_bar_gains(A, C_i, T_id, None, E_i, F_i, G_i, B_i))
        own.append(np.kron(br.row[None, :], np.eye(mb)))
        other.append(np.eye(N * mb))
    split = InputSplit(own, other,
                       "u_i = sum_j a_ij (u_i - u_j) for i not in R, own input for i in R; u_-i = u")
    return ObserverDesign("homo", A, B, C_list, RawSolution(nodes), gains, split,
                          graph=g, R=sorted(int(r) for r in R), agent_dims=[nb] * N)


def extension_scalar_gain(g: Graph, w, safety_margin=1.1):
    """``(c, lambda_min(L + W))`` with ``c = margin / (2 lambda_min)``."""
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (g.n,):
        raise DimensionMismatch(f"w must have {g.n} entries")
    if np.any(w < 0):
        raise ValueError("access weights must be nonnegative")
    if not np.any(w > 0):
        raise ZeroW("at least one agent must measure its own output (W != 0)")
    if safety_margin < 1:
        raise ValueError("safety_margin must be >= 1")
    lam = float(np.linalg.eigvalsh(laplacian(g) + np.diag(w))[0])
    return safety_margin / (2.0 * lam), lam


def synth_extension(model: AgentModel, g: Graph, w, safety_margin=1.1) -> ObserverDesign:
    """Omniscient layer driven by auxiliary per-agent observers.

    Each node takes its own auxiliary estimate as a pseudo-output, so the
    omniscient layer needs no inputs at all.
    """
    w = np.asarray(w, dtype=float).ravel()
    if w.shape != (g.n,):
        raise DimensionMismatch(f"w must have {g.n} entries, got {w.shape}")
    if not np.any(w > 0):
        raise ZeroW("at least one agent must measure its own output (W != 0)")
    if not is_connected(g):
        raise NotConnected("communication graph is not connected")
    S = solve_care(model.A, model.C)
    M = S @ model.C.T
    c, lam = extension_scalar_gain(g, w, safety_margin)

    N, nb = g.n, model.n
    dims = [nb] * N
    A = np.kron(np.eye(N), model.A)
    B = np.kron(np.eye(N), model.B)
    C_list, nodes, gains, own, other = [], [], [], [], []
    for i in range(N):
        T_id = _block_selector(dims, i)
        C_i = T_id.T.copy()
        E_i = np.zeros((nb, nb))
        F_i = np.zeros((nb, nb))
        G_i = np.eye(nb)
        B_i = np.zeros((N * nb, 0))
        nodes.append(NodeSolution(B_i, B.copy(), T_id, E_i, F_i, G_i, branch=2))
        C_list.append(C_i)
        gains.append(derive_bar_gains(A, C_i, T_id, None, E_i, F_i, G_i, B_i))
        own.append(np.zeros((0, N * model.m)))
        other.append(np.eye(N * model.m))
    split = InputSplit(own, other, "u_i empty; u_-i = u; y_i = auxiliary estimate of own state")
    aux = AuxDesign(model, c, M, S, w, lam)
    return ObserverDesign("extension", A, B, C_list, RawSolution(nodes), gains, split,
                          graph=g, R=[int(k) for k in np.flatnonzero(w > 0)], aux=aux,
                          agent_dims=dims)
