"""Joint plant + observer network integration.

The plant and every observer node form one ODE. Node quantities are stacked
into ``(N, n)`` arrays and advanced with batched matrix products; summation
over neighbors always runs in node order, so results do not depend on how
the arrays are laid out in memory.

Two fixed-step schemes are available:

``"rk4"``
    classical RK4 on the whole right-hand side, including the discontinuous
    ``gamma_s h(eps)`` term. Inside the sliding regime this chatters, leaves
    an O(dt) bias in ``eps`` and makes ``gamma_s`` creep upward linearly in
    time.
``"split"`` (default)
    RK4 on everything except the switching term, followed by an implicit
    (backward Euler) step for ``gamma_s h(eps)`` and the gain laws. The
    implicit step is the proximal map of ``sum_i gamma_si ||eps_i||`` in the
    metric of the coupling matrix ``Q = T_u^T (L x I) T_u``; it puts ``eps``
    exactly on the sliding manifold whenever the switching gains dominate,
    so estimates do not carry a dt-proportional error and the adaptive gains
    stop growing once consensus is reached.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, sparse

from .exceptions import DimensionMismatch, NonFinite
from .graph import laplacian
from .numerics import DEFAULT_DT, Trajectory, n_steps, rk4_step
from .observer_core import H_GUARD, AdaptiveParams
from .synthesis import ObserverDesign

log = logging.getLogger(__name__)


def _pad_stack(mats, rows, cols):
    out = np.zeros((len(mats), rows, cols))
    for i, m in enumerate(mats):
        m = np.asarray(m, dtype=float)
        out[i, :m.shape[0], :m.shape[1]] = m
    return out


class ObserverNetwork:
    """Vectorized right-hand side for a plant observed by an observer network.

    State vector layout: ``[x, z_1..z_N, gamma_1..gamma_N, gamma_s1..gamma_sN, aux]``
    where ``aux`` (auxiliary per-agent estimates) is present only for the
    extension design.
    """

    def __init__(self, design: ObserverDesign, params=None, graph=None):
        self.design = design
        self.graph = graph if graph is not None else design.graph
        if self.graph is None:
            raise DimensionMismatch("an observer network needs a communication graph")
        N = design.N
        if self.graph.n != N:
            raise DimensionMismatch(f"graph has {self.graph.n} nodes, design has {N}")
        if params is None:
            params = AdaptiveParams()
        if isinstance(params, AdaptiveParams):
            params = [params] * N
        if len(params) != N:
            raise DimensionMismatch("one AdaptiveParams per node required")
        self.params = list(params)

        n = design.n
        self.N, self.n = N, n
        self.A, self.B = design.A, design.B
        self.m = self.B.shape[1]
        self.ext = design.aux is not None
        self.lap = laplacian(self.graph)

        gains = design.gains
        p = max(gk.F_bar.shape[1] for gk in gains)
        mo = max(gk.B_bar.shape[1] for gk in gains)
        self.E = _pad_stack([gk.E_bar for gk in gains], n, n)
        self.F = _pad_stack([gk.F_bar for gk in gains], n, p)
        self.G = _pad_stack([gk.G_bar for gk in gains], n, p)
        Bb = _pad_stack([gk.B_bar for gk in gains], n, max(mo, 1))
        U = _pad_stack(design.split.own, max(mo, 1), self.m)
        self.BU = np.matmul(Bb, U).reshape(N * n, self.m)
        self.P = np.stack([gk.T_iu @ gk.T_iu.T for gk in gains])
        self.C = _pad_stack(design.C, p, n).reshape(N * p, n)
        self.p = p
        self.phi = np.array([pr.phi for pr in self.params])
        self.phi_s = np.array([pr.phi_s for pr in self.params])
        self.gamma0 = np.array([pr.gamma0 for pr in self.params])
        self.gamma_s0 = np.array([pr.gamma_s0 for pr in self.params])

        if self.ext:
            aux = design.aux
            mod = aux.model
            self.nb = mod.n
            self.Ab, self.Bb_aux, self.Cb = mod.A, mod.B, mod.C
            self.cM = aux.c * aux.M
            self.LW = self.lap + np.diag(aux.w)
        else:
            self.nb = 0

        self.dim = n + N * n + 2 * N + N * self.nb
        self._sl_z = slice(n, n + N * n)
        self._sl_g = slice(n + N * n, n + N * n + N)
        self._sl_gs = slice(n + N * n + N, n + N * n + 2 * N)
        self._sl_aux = slice(n + N * n + 2 * N, self.dim)

    # -- state helpers -------------------------------------------------
    def unpack(self, s):
        N, n = self.N, self.n
        x = s[:n]
        Z = s[self._sl_z].reshape(N, n)
        g = s[self._sl_g]
        gs = s[self._sl_gs]
        aux = s[self._sl_aux].reshape(N, self.nb) if self.ext else None
        return x, Z, g, gs, aux

    def outputs(self, x, aux=None):
        """Per-node observer inputs ``y_i``, zero padded to a common width."""
        if self.ext:
            return aux
        return (self.C @ x).reshape(self.N, self.p)

    def estimates(self, s):
        x, Z, _, _, aux = self.unpack(s)
        Y = self.outputs(x, aux)
        return Z + np.matmul(self.G, Y[:, :, None])[:, :, 0]

    def initial_state(self, x0, exact=False, aux0=None):
        """Observer states start at zero unless ``exact`` requests
        ``xhat_i(0) = x(0)`` for every node."""
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.shape != (self.n,):
            raise DimensionMismatch(f"x0 must have {self.n} entries, got {x0.shape}")
        s = np.zeros(self.dim)
        s[:self.n] = x0
        s[self._sl_g] = self.gamma0
        s[self._sl_gs] = self.gamma_s0
        if self.ext:
            if exact:
                aux = x0.reshape(self.N, self.nb).copy()
            elif aux0 is not None:
                aux = np.asarray(aux0, dtype=float).reshape(self.N, self.nb)
            else:
                aux = np.zeros((self.N, self.nb))
            s[self._sl_aux] = aux.ravel()
        if exact:
            x, Z, _, _, aux = self.unpack(s)
            Y = self.outputs(x, aux)
            Gy = np.matmul(self.G, Y[:, :, None])[:, :, 0]
            s[self._sl_z] = (x0[None, :] - Gy).ravel()
        return s

    # -- dynamics ------------------------------------------------------
    def consensus(self, xhat):
        """Projected disagreement ``T_iu T_iu^T sum_j a_ij (xhat_i - xhat_j)``."""
        D = self.lap @ xhat
        return np.matmul(self.P, D[:, :, None])[:, :, 0]

    def derivative(self, t, s, u, switching=True):
        """Right-hand side of the joint ODE.

        With ``switching=False`` the ``gamma_s h(eps)`` term and both gain
        laws are left out; that is the smooth part used by the split scheme.
        """
        N, n = self.N, self.n
        x, Z, g, gs, aux = self.unpack(s)
        Y = self.outputs(x, aux)
        xhat = Z + np.matmul(self.G, Y[:, :, None])[:, :, 0]
        PD = self.consensus(xhat)
        out = np.empty_like(s)
        if switching:
            nrm = np.sqrt(np.einsum("ij,ij->i", PD, PD))
            scale = g + np.where(nrm > H_GUARD, gs / np.where(nrm > H_GUARD, nrm, 1.0), 0.0)
            out[self._sl_g] = self.phi * nrm**2
            out[self._sl_gs] = self.phi_s * nrm
        else:
            scale = g
            out[self._sl_g] = 0.0
            out[self._sl_gs] = 0.0
        zdot = (np.matmul(self.E, Z[:, :, None])[:, :, 0]
                + np.matmul(self.F, Y[:, :, None])[:, :, 0]
                + (self.BU @ u).reshape(N, n)
                - scale[:, None] * PD)
        out[:n] = self.A @ x + self.B @ u
        out[self._sl_z] = zdot.ravel()
        if self.ext:
            err = x.reshape(N, self.nb) - aux
            zeta = self.LW @ (err @ self.Cb.T)
            ub = u.reshape(N, -1)
            out[self._sl_aux] = (aux @ self.Ab.T + ub @ self.Bb_aux.T + zeta @ self.cM.T).ravel()
        return out


class SwitchingStep:
    """Backward Euler step for the switching term and the adaptive laws.

    Solves for ``mu_i`` (node i's switching action, ``||mu_i|| <= gamma_si``)
    such that ``eps+ = eps~ - dt Q mu`` and ``mu_i = gamma_si h(eps+_i)``
    whenever ``eps+_i != 0``. This is the dual of a group-lasso proximal
    problem: one linear solve when no node saturates, active-set Newton on
    the ball multipliers otherwise, with accelerated projected gradient as
    the fallback. Multipliers carry over as a warm start.
    """

    def __init__(self, net: ObserverNetwork, dt, max_iter=500, tol=1e-13):
        self.net, self.dt = net, dt
        self.max_iter, self.tol = max_iter, tol
        cols = [gk.T_iu for gk in net.design.gains]
        widths = [c.shape[1] for c in cols]
        self.node = np.repeat(np.arange(net.N), widths)
        Tu = np.zeros((net.N * net.n, sum(widths)))
        c0 = 0
        for i, c in enumerate(cols):
            Tu[i * net.n:(i + 1) * net.n, c0:c0 + c.shape[1]] = c
            c0 += c.shape[1]
        Q = Tu.T @ np.kron(net.lap, np.eye(net.n)) @ Tu
        # block diagonal, so sparse storage cuts the per-step products
        self.Tu = sparse.csr_matrix(Tu)
        self.TuT = sparse.csr_matrix(Tu.T)
        self.Q = (Q + Q.T) / 2
        self.active = self.Q.shape[0] > 0
        self.chol = None
        if self.active:
            ev = np.linalg.eigvalsh(self.Q)
            self.lmax = max(ev[-1], 1e-300)
            if ev[0] > 1e-12 * self.lmax:
                self.chol = linalg.cho_factor(self.Q)
                # explicit inverse: one matvec per step on the unsaturated path
                self.Qinv = linalg.cho_solve(self.chol, np.eye(self.Q.shape[0]))
        self.mu = np.zeros(self.Q.shape[0])
        self.lam = np.zeros(net.N)
        self.iterations = 0
        self.saturated_steps = 0

    def _newton(self, eps, radius, max_iter=50):
        """Active-set Newton on the ball multipliers ``lam``.

        KKT form: ``mu = (dt Q + diag(2 lam))^-1 eps`` with ``lam_i >= 0`` and
        ``lam_i (||mu_i|| - r_i) = 0``. Saturated nodes solve the secular
        equation ``1/||mu_i|| = 1/r_i``, which is close to linear in ``lam``.
        Returns None when it fails to settle, leaving the caller to fall back.
        """
        node = self.node
        lam = self.lam.copy()
        base = self.dt * self.Q
        diag = np.diag_indices_from(base)
        for it in range(1, max_iter + 1):
            K = base.copy()
            K[diag] += 2.0 * lam[node]
            try:
                fac = linalg.cho_factor(K, check_finite=False)
            except linalg.LinAlgError:
                return None
            mu = linalg.cho_solve(fac, eps, check_finite=False)
            nrm = self._block_norms(mu)
            sat = lam > 0
            grow = ~sat & (nrm > radius * (1 + 1e-12))
            act = np.flatnonzero(sat | grow)
            f = 1.0 / np.maximum(nrm[act], 1e-300) - 1.0 / radius[act]
            if not grow.any() and np.all(np.abs(f) * radius[act] <= 1e-12):
                self.lam, self.iterations = lam, it
                return mu
            # columns K^-1 (2 E_j mu) for the active nodes
            rhs = np.zeros((mu.size, act.size))
            for c, j in enumerate(act):
                sel = node == j
                rhs[sel, c] = 2.0 * mu[sel]
            W = linalg.cho_solve(fac, rhs, check_finite=False)
            J = np.empty((act.size, act.size))
            for r, i in enumerate(act):
                sel = node == i
                J[r] = (mu[sel] @ W[sel]) / max(nrm[i], 1e-300) ** 3
            try:
                delta = np.linalg.solve(J, -f)
            except np.linalg.LinAlgError:
                return None
            new = lam.copy()
            new[act] = np.maximum(lam[act] + delta, 0.0)
            lam = new
        return None

    def _block_norms(self, v):
        return np.sqrt(np.bincount(self.node, weights=v * v, minlength=self.net.N))

    def _project(self, v, radius):
        nrm = self._block_norms(v)
        shrink = np.where(nrm > radius, radius / np.where(nrm > 0, nrm, 1.0), 1.0)
        return v * shrink[self.node]

    def _solve(self, eps, radius):
        dt = self.dt
        mu = self.mu
        if self.chol is not None:
            mu = (self.Qinv @ eps) / dt
            if np.all(self._block_norms(mu) <= radius) and not self.lam.any():
                self.iterations = 0
                return mu
            got = self._newton(eps, radius)
            if got is not None:
                return got
        step = 1.0 / (dt * self.lmax)
        tol = self.tol * (1.0 + radius.max())
        mu = self._project(mu, radius)
        y, t = mu, 1.0
        it = 0
        for it in range(1, self.max_iter + 1):
            nxt = self._project(y + step * (eps - dt * (self.Q @ y)), radius)
            if np.abs(nxt - mu).max() <= tol:
                mu = nxt
                break
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            mom = (t - 1.0) / t_next
            # restart momentum when it points uphill
            if np.dot(nxt - mu, y - nxt) > 0:
                t_next, mom = 1.0, 0.0
            y = nxt + mom * (nxt - mu)
            mu, t = nxt, t_next
        self.iterations = it
        return mu

    def __call__(self, s):
        net = self.net
        if not self.active:
            return s
        s = s.copy()
        x, Z, g, gs, _ = net.unpack(s)
        D = net.lap @ net.estimates(s)
        eps = self.TuT @ D.ravel()
        if not np.all(np.isfinite(eps)):
            return s  # left for the caller's NonFinite check
        with np.errstate(all="ignore"):
            # a diverging state overflows here; simulate() reports it as NonFinite
            mu = self._solve(eps, gs)
        self.mu = mu
        if self.iterations:
            self.saturated_steps += 1
        eps_new = eps - self.dt * (self.Q @ mu)
        s[net._sl_z] = (Z.ravel() - self.dt * (self.Tu @ mu))
        nrm = self._block_norms(eps_new)
        s[net._sl_g] = g + self.dt * net.phi * nrm**2
        s[net._sl_gs] = gs + self.dt * net.phi_s * nrm
        return s


@dataclass
class SimulationResult:
    """Full-rate metric traces plus a downsampled state trajectory."""

    times: np.ndarray
    errors: np.ndarray  # (steps+1, N) norms ||xhat_i - x||
    gamma: np.ndarray  # (steps+1, N)
    gamma_s: np.ndarray
    trajectory: Trajectory  # plant state, downsampled
    estimates: np.ndarray  # (samples, N, n), downsampled like trajectory
    final_state: np.ndarray
    aux_errors: np.ndarray | None = None
    inputs: np.ndarray | None = None  # (samples, m), downsampled
    extras: dict = field(default_factory=dict)

    @property
    def final_errors(self):
        return self.errors[-1]

    def final_estimates(self):
        return self.estimates[-1]


def simulate(network: ObserverNetwork, x0, t_end, dt=DEFAULT_DT, controller=None,
             decide=None, decision_dt=0.1, record_every=10, exact_init=False,
             aux0=None, on_record=None, scheme="split") -> SimulationResult:
    """Integrate plant and observers together.

    ``controller(t, x, xhat) -> u`` gives the stacked agent input; it may use
    the true state only for the agent's own open-loop schedule and must base
    feedback on ``xhat``. ``decide(t, x, xhat)`` runs every ``decision_dt``
    seconds between steps (discrete decisions held constant in between).
    ``scheme`` is ``"split"`` or ``"rk4"`` (see the module docstring).
    """
    if scheme not in ("split", "rk4"):
        raise ValueError(f"unknown integration scheme {scheme!r}")
    net = network
    s = net.initial_state(x0, exact=exact_init, aux0=aux0)
    steps = n_steps(t_end, dt)
    zero_u = np.zeros(net.m)
    ctrl = controller if controller is not None else (lambda t, x, xh: zero_u)

    explicit = scheme == "rk4"
    switch = None if explicit else SwitchingStep(net, dt)

    def field_(t, state):
        xhat = net.estimates(state)
        u = np.asarray(ctrl(t, state[:net.n], xhat), dtype=float)
        return net.derivative(t, state, u, switching=explicit)

    decide_every = max(1, int(round(decision_dt / dt))) if decide is not None else 0
    N = net.N
    errs = np.empty((steps + 1, N))
    gam = np.empty((steps + 1, N))
    gams = np.empty((steps + 1, N))
    aux_errs = np.empty((steps + 1, N)) if net.ext else None
    rec_t, rec_x, rec_xh, rec_u = [], [], [], []

    def record_metrics(k, state):
        x, _, g, gs, aux = net.unpack(state)
        xhat = net.estimates(state)
        errs[k] = np.linalg.norm(xhat - x[None, :], axis=1)
        gam[k] = g
        gams[k] = gs
        if aux_errs is not None:
            aux_errs[k] = np.linalg.norm(aux - x.reshape(N, net.nb), axis=1)
        return x, xhat

    def record_sample(k, state, x, xhat):
        t = k * dt
        rec_t.append(t)
        rec_x.append(x.copy())
        rec_xh.append(xhat.copy())
        rec_u.append(np.asarray(ctrl(t, x, xhat), dtype=float).copy())
        if on_record is not None:
            on_record(t, state)

    x, xhat = record_metrics(0, s)
    if decide is not None:
        decide(0.0, x, xhat)
    record_sample(0, s, x, xhat)
    for k in range(steps):
        t = k * dt
        if decide_every and k and k % decide_every == 0:
            decide(t, s[:net.n], net.estimates(s))
        s_new = rk4_step(field_, t, s, dt)
        if switch is not None:
            s_new = switch(s_new)
        if not np.all(np.isfinite(s_new)):
            raise NonFinite(f"simulation diverged after t={t:.6g}", time=t)
        s = s_new
        x, xhat = record_metrics(k + 1, s)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            record_sample(k + 1, s, x, xhat)

    times = np.arange(steps + 1) * dt
    return SimulationResult(
        times=times,
        errors=errs,
        gamma=gam,
        gamma_s=gams,
        trajectory=Trajectory(np.array(rec_t), np.array(rec_x)),
        estimates=np.array(rec_xh),
        final_state=s,
        aux_errors=aux_errs,
        inputs=np.array(rec_u),
        extras={"scheme": scheme,
                "saturated_steps": switch.saturated_steps if switch is not None else None},
    )
