"""Nash equilibrium seeking with and without omniscient observers.

Players are single integrators ``dx_i/dt = u_i``. The centralized seeker
feeds every player the true action profile; the distributed seeker feeds
player i only its own observer estimate ``xhat_i``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exceptions import DimensionMismatch, SetupMismatch, Singular
from .graph import numerical_rank
from .numerics import DEFAULT_DT, Trajectory, integrate
from .simulation import ObserverNetwork, SimulationResult, simulate
from .synthesis import ObserverDesign

log = logging.getLogger(__name__)

DEFAULT_ACTION_BOUND = 1e3


class Game:
    """N players with ``dim``-dimensional actions.

    ``grads[i](x)`` returns player i's partial gradient with respect to its
    own action, evaluated at the full profile ``x`` (length ``N * dim``).
    ``mu`` is the claimed strong-monotonicity constant of the game mapping.
    """

    def __init__(self, N: int, dim: int, grads: Sequence[Callable], mu: float | None = None):
        if N < 1 or dim < 1:
            raise ValueError("a game needs at least one player and one action dimension")
        if len(grads) != N:
            raise DimensionMismatch(f"{len(grads)} gradient oracles for {N} players")
        if mu is not None and not mu > 0:
            raise ValueError("mu must be positive")
        self.N, self.dim = int(N), int(dim)
        self.grads = list(grads)
        self.mu = mu

    @property
    def size(self):
        return self.N * self.dim

    def gradient(self, i, x):
        g = np.atleast_1d(np.asarray(self.grads[i](np.asarray(x, dtype=float)), dtype=float))
        if g.shape != (self.dim,):
            raise DimensionMismatch(f"player {i + 1} gradient has shape {g.shape}")
        return g

    def player_gradients(self, profiles):
        """Row i is ``grad_i J_i`` evaluated at ``profiles[i]``."""
        return np.stack([self.gradient(i, profiles[i]) for i in range(self.N)])

    def mapping(self, x):
        """Stacked game mapping ``col(grad_i J_i(x))``."""
        x = np.asarray(x, dtype=float)
        return np.concatenate([self.gradient(i, x) for i in range(self.N)])

    def check_strongly_monotone(self, samples=200, rng=None, scale=10.0, mu=None):
        """Spot-check the monotonicity inequality on random pairs of profiles."""
        mu = self.mu if mu is None else mu
        if mu is None:
            raise ValueError("no monotonicity constant to check")
        rng = np.random.default_rng(rng)
        for _ in range(samples):
            xa = rng.uniform(-scale, scale, self.size)
            xb = rng.uniform(-scale, scale, self.size)
            d = xa - xb
            lhs = d @ (self.mapping(xa) - self.mapping(xb))
            if lhs < mu * (d @ d) * (1 - 1e-9):
                return False
        return True


class QuadraticGame(Game):
    """Game with affine partial gradients ``grad_i J_i(x) = Q_i x + q_i``.

    ``Q`` stacks the row blocks ``Q_i`` into a square ``(N dim, N dim)``
    matrix and ``q`` stacks the offsets.
    """

    def __init__(self, Q, q, dim=1, mu=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        q = np.asarray(q, dtype=float).ravel()
        if Q.shape[0] != Q.shape[1] or Q.shape[0] != q.size:
            raise DimensionMismatch(f"Q {Q.shape} and q ({q.size}) do not match")
        if Q.shape[0] % dim:
            raise DimensionMismatch(f"size {Q.shape[0]} is not a multiple of dim={dim}")
        N = Q.shape[0] // dim
        self.Q, self.q = Q, q
        sym_min = float(np.linalg.eigvalsh((Q + Q.T) / 2)[0])
        if mu is None:
            mu = sym_min if sym_min > 0 else None
        elif sym_min < mu * (1 - 1e-12):
            raise ValueError(f"symmetric part of Q has smallest eigenvalue {sym_min:.6g} < mu={mu}")
        grads = [self._player_grad(i, dim) for i in range(N)]
        super().__init__(N, dim, grads, mu)

    def _player_grad(self, i, dim):
        rows = slice(i * dim, (i + 1) * dim)
        return lambda x: self.Q[rows] @ x + self.q[rows]

    @classmethod
    def from_blocks(cls, Q_blocks, q_blocks, mu=None):
        """Build from per-player row blocks ``Q_i`` (dim x N dim) and ``q_i``."""
        Q = np.vstack([np.atleast_2d(np.asarray(b, dtype=float)) for b in Q_blocks])
        q = np.concatenate([np.atleast_1d(np.asarray(b, dtype=float)) for b in q_blocks])
        return cls(Q, q, dim=Q.shape[0] // len(Q_blocks), mu=mu)

    @classmethod
    def random(cls, N, rng, dim=1, mu=0.5, coupling=1.0):
        """Random strongly monotone quadratic game with monotonicity >= ``mu``."""
        rng = np.random.default_rng(rng)
        size = N * dim
        skew = rng.normal(scale=coupling, size=(size, size))
        skew = skew - skew.T
        half = rng.normal(scale=coupling, size=(size, size))
        sym = half @ half.T / size + mu * np.eye(size)
        q = rng.normal(size=size)
        return cls(sym + skew / 2, q, dim=dim)

    def mapping(self, x):
        return self.Q @ np.asarray(x, dtype=float) + self.q

    def player_gradients(self, profiles):
        blocks = self.Q.reshape(self.N, self.dim, self.size)
        return (np.einsum("idk,ik->id", blocks, np.asarray(profiles, dtype=float))
                + self.q.reshape(self.N, self.dim))

    def to_dict(self):
        return {"Q": self.Q.tolist(), "q": self.q.tolist(), "dim": self.dim}


def quadratic_ne_oracle(game: QuadraticGame):
    """Equilibrium of an affine game by a direct linear solve."""
    Q, q = game.Q, game.q
    if numerical_rank(Q) < Q.shape[0]:
        raise Singular("stacked game matrix is singular; the equilibrium is not unique")
    x = np.linalg.solve(Q, -q)
    res = np.linalg.norm(Q @ x + q)
    if res > 1e-10 * max(1.0, np.linalg.norm(q)):
        raise Singular(f"linear solve residual {res:.3g} too large; Q is ill-conditioned")
    return x


def centralized_seek(game: Game, x0, t_end, dt=DEFAULT_DT, record_every=1) -> Trajectory:
    """Gradient play with full information: ``dx_i/dt = -grad_i J_i(x)``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != game.size:
        raise DimensionMismatch(f"x0 has {x0.size} entries, game has {game.size}")
    return integrate(lambda t, x: -game.mapping(x), x0, t_end, dt, record_every)


@dataclass
class SeekResult:
    trajectory: Trajectory
    estimates: np.ndarray  # (samples, N, N dim)
    simulation: SimulationResult
    clamped: bool = False

    @property
    def final(self):
        return self.simulation.final_state[:self.trajectory.states.shape[1]]

    @property
    def gamma(self):
        return self.simulation.gamma

    @property
    def gamma_s(self):
        return self.simulation.gamma_s


def check_seek_setup(game: Game, design: ObserverDesign):
    n = game.size
    if design.n != n or design.N != game.N:
        raise SetupMismatch(
            f"observer built for {design.N} agents / {design.n} states, game has "
            f"{game.N} players / {n} actions")
    if design.B.shape != (n, n) or not np.allclose(design.B, np.eye(n)):
        raise SetupMismatch("players must be single integrators (B = I)")
    if not np.allclose(design.A, 0.0):
        raise SetupMismatch("players must be single integrators (A = 0)")


def seek_controller(game: Game, bound=DEFAULT_ACTION_BOUND):
    """``u_i = -grad_i J_i(xhat_i)`` with ``||u_i||`` clamped at ``bound``.

    Returns ``(controller, state)`` where ``state["clamped"]`` records whether
    the clamp ever engaged.
    """
    state = {"clamped": False}

    def controller(t, x, xhat):
        u = -game.player_gradients(xhat)
        nrm = np.sqrt(np.einsum("id,id->i", u, u))
        over = nrm > bound
        if over.any():
            if not state["clamped"]:
                i = int(np.flatnonzero(over)[0])
                log.warning("player %d action clamped at t=%.4g (|u|=%.3g > %.3g)",
                            i + 1, t, nrm[i], bound)
            state["clamped"] = True
            u = u * np.where(over, bound / np.where(over, nrm, 1.0), 1.0)[:, None]
        return u.ravel()

    return controller, state


def distributed_seek(game: Game, design: ObserverDesign, x0, t_end, dt=DEFAULT_DT,
                     params=None, graph=None, bound=DEFAULT_ACTION_BOUND,
                     exact_init=False, record_every=10, scheme="split") -> SeekResult:
    """Gradient play where each player uses its own observer estimate."""
    check_seek_setup(game, design)
    net = ObserverNetwork(design, params, graph)
    ctrl, state = seek_controller(game, bound)
    res = simulate(net, x0, t_end, dt, controller=ctrl, exact_init=exact_init,
                   record_every=record_every, scheme=scheme)
    return SeekResult(res.trajectory, res.estimates, res, state["clamped"])


def check_relaxed_lipschitz(game: Game, chi, chi_s, sample_count=1000, rng=None,
                            low=-10.0, high=10.0, rtol=1e-9) -> bool:
    """Sample ``||g_i(a) - g_i(b)||^2 <= chi ||a - b||^2 + chi_s ||a - b||``.

    A sampling check over the box ``[low, high]^(N dim)``, not a proof.
    """
    if chi < 0 or chi_s < 0:
        raise ValueError("chi and chi_s must be nonnegative")
    rng = np.random.default_rng(rng)
    for _ in range(sample_count):
        xa = rng.uniform(low, high, game.size)
        xb = rng.uniform(low, high, game.size)
        if not relaxed_lipschitz_holds(game, xa, xb, chi, chi_s, rtol):
            return False
    return True


def relaxed_lipschitz_holds(game: Game, xa, xb, chi, chi_s, rtol=1e-9) -> bool:
    dist = float(np.linalg.norm(np.asarray(xa) - np.asarray(xb)))
    bound = chi * dist**2 + chi_s * dist
    for i in range(game.N):
        diff = game.gradient(i, xa) - game.gradient(i, xb)
        lhs = float(diff @ diff)
        if lhs > bound + rtol * max(1.0, bound):
            return False
    return True


def sqrt_gradient_game(N=1):
    """Decoupled scalar game with ``grad_i = x_i + sign(x_i) sqrt(|x_i|)``.

    Its gradients are not Lipschitz at zero but satisfy the relaxed bound
    with ``chi = 2, chi_s = 4``.
    """
    def grad(i):
        return lambda x: np.array([x[i] + np.sign(x[i]) * np.sqrt(abs(x[i]))])

    return Game(N, 1, [grad(i) for i in range(N)], mu=1.0)
