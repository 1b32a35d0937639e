"""Integration, observer gain placement, the filter Riccati equation and
subspace utilities."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy import linalg, signal

from .exceptions import (
    BadPoleSet,
    DimensionMismatch,
    NoConvergence,
    NonFinite,
    NotDetectable,
    NotOrthonormal,
)
from .graph import RANK_RTOL, numerical_rank

DEFAULT_DT = 1e-3
ORTHO_TOL = 1e-10
# eigenvalues with real part above -STABILITY_MARGIN count as unstable
STABILITY_MARGIN = 1e-9


@dataclass
class Trajectory:
    """Samples of a state on a uniform time grid, one row per sample."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] != self.times.shape[0]:
            raise DimensionMismatch(
                f"{self.states.shape[0]} state rows for {self.times.shape[0]} time samples"
            )
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path=None, header=None):
        """Write ``t,x1,...,xk`` rows at full double precision.

        Returns the CSV text when ``path`` is None.
        """
        k = self.states.shape[1]
        header = header or [f"x{i + 1}" for i in range(k)]
        buf = io.StringIO()
        write_csv(buf, ["t", *header], np.column_stack([self.times, self.states]))
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)

    @classmethod
    def from_csv(cls, path_or_text) -> "Trajectory":
        if "\n" in str(path_or_text):
            rows = list(csv.reader(io.StringIO(path_or_text)))
        else:
            with open(path_or_text, newline="") as fh:
                rows = list(csv.reader(fh))
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        if data.size == 0:
            return cls(np.zeros(0), np.zeros((0, len(rows[0]) - 1)))
        return cls(data[:, 0], data[:, 1:])


def write_csv(fh, header, data):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    for row in np.atleast_2d(data):
        w.writerow([repr(float(v)) for v in row])


def rk4_step(field, t, x, dt):
    k1 = field(t, x)
    k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = field(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def n_steps(t_end, dt) -> int:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    return int(round(t_end / dt))


def integrate(field, x0, t_end, dt=DEFAULT_DT, record_every=1) -> Trajectory:
    """Classical fixed-step RK4 of ``x' = field(t, x)`` from t = 0.

    Raises :class:`NonFinite` as soon as any state entry stops being finite.
    """
    x = np.array(x0, dtype=float).ravel()
    steps = n_steps(t_end, dt)
    times, states = [0.0], [x.copy()]
    for k in range(steps):
        t = k * dt
        x = rk4_step(field, t, x, dt)
        if not np.all(np.isfinite(x)):
            raise NonFinite(f"state became non-finite after t={t:.6g}", time=t)
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append((k + 1) * dt)
            states.append(x.copy())
    return Trajectory(np.array(times), np.array(states))


def is_stable(m, margin=STABILITY_MARGIN) -> bool:
    m = np.atleast_2d(m)
    if m.size == 0:
        return True
    return bool(np.max(np.linalg.eigvals(m).real) < -margin)


def observability_split(A, C):
    """Orthonormal basis ``[T_obs, T_unobs]`` with the unobservable subspace last."""
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    obs = np.vstack(blocks) if C.size else np.zeros((0, n))
    r = numerical_rank(obs) if obs.size else 0
    if r == 0:
        return np.zeros((n, 0)), np.eye(n)
    _, _, vt = np.linalg.svd(obs)
    return vt[:r].T, vt[r:].T


def is_detectable(A, C) -> bool:
    """PBH test on every eigenvalue with nonnegative real part."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float).reshape(-1, A.shape[0])
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real > -STABILITY_MARGIN:
            pbh = np.vstack([A - lam * np.eye(n), C.astype(complex)])
            if numerical_rank(pbh) < n:
                return False
    return True


def default_poles(n):
    return [-(k + 1.0) for k in range(n)]


def _check_poles(poles):
    poles = np.atleast_1d(np.asarray(poles, dtype=complex))
    if np.any(poles.real >= 0):
        raise BadPoleSet(f"poles must have negative real parts, got {poles}")
    cplx = sorted(p for p in poles if abs(p.imag) > 1e-12)
    conj = sorted(np.conj(p) for p in cplx)
    if len(cplx) != len(conj) or not np.allclose(
        sorted(cplx, key=lambda z: (z.real, z.imag)),
        sorted(conj, key=lambda z: (z.real, z.imag)),
    ):
        raise BadPoleSet(f"poles must be closed under conjugation, got {poles}")
    return poles


def _conjugate_closed_prefix(poles, r):
    out, i = [], 0
    while len(out) < r and i < len(poles):
        p = poles[i]
        if abs(p.imag) > 1e-12:
            mate = next((k for k in range(i + 1, len(poles))
                         if abs(poles[k] - np.conj(p)) < 1e-9), None)
            if len(out) + 2 <= r and mate is not None:
                out += [p, poles[mate]]
                poles = np.delete(poles, mate)
        else:
            out.append(p)
        i += 1
    if len(out) != r:
        raise BadPoleSet(f"cannot pick {r} conjugate-closed poles from {poles}")
    return np.array(out)


def place_observer_gain(A, C, poles=None):
    """Gain L such that the observable part of ``A + L C`` has the given poles.

    Unobservable modes are left untouched and must be stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    poles = _check_poles(default_poles(n) if poles is None else poles)
    p = C.shape[0]

    t_obs, t_un = observability_split(A, C)
    r = t_obs.shape[1]
    if t_un.shape[1]:
        a22 = t_un.T @ A @ t_un
        if not is_stable(a22):
            raise NotDetectable(
                f"unobservable modes {np.linalg.eigvals(a22)} are not asymptotically stable"
            )
    if r == 0:
        return np.zeros((n, p))
    if len(poles) == n:
        sel = _conjugate_closed_prefix(poles, r)
    elif len(poles) == r:
        sel = poles
    else:
        raise BadPoleSet(f"expected {n} (or {r} observable) poles, got {len(poles)}")

    a11 = t_obs.T @ A @ t_obs
    c1 = C @ t_obs
    l1 = -_place(a11.T, c1.T, sel).T
    return t_obs @ l1


def _place(a, b, poles):
    n = a.shape[0]
    # place_poles needs a full-column-rank input matrix
    u, s, _ = np.linalg.svd(b, full_matrices=False)
    k = int(np.sum(s > RANK_RTOL * s[0])) if s.size else 0
    basis = u[:, :k] * s[:k]
    if n == 1:
        # scalar: a - basis @ K = pole
        kk = np.linalg.lstsq(basis, a - np.array([[poles[0].real]]), rcond=None)[0]
    else:
        res = signal.place_poles(a, basis, poles, method="YT", maxiter=100)
        kk = res.gain_matrix
    # map the gain back onto the original columns of b
    g = np.linalg.lstsq(b, basis, rcond=None)[0]
    return g @ kk


def solve_care(A, C, tol=1e-8, max_newton=50):
    """Positive definite S with ``A S + S A^T - S C^T C S + I = 0``.

    Stable invariant subspace of the Hamiltonian, refined by Newton-Kleinman
    steps when the residual is above tolerance.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    if not is_detectable(A, C):
        raise NotDetectable("(A, C) is not detectable")
    G = C.T @ C
    H = np.block([[A.T, -G], [-np.eye(n), -A]])
    T, Z, sdim = linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoConvergence(f"Hamiltonian has {sdim} stable eigenvalues, expected {n}")
    u1, u2 = Z[:n, :n], Z[n:, :n]
    try:
        S = np.linalg.solve(u1.T, u2.T).T
    except np.linalg.LinAlgError as exc:
        raise NoConvergence("stable subspace basis is singular") from exc
    S = 0.5 * (S + S.T)

    def resid(s):
        return A @ s + s @ A.T - s @ G @ s + np.eye(n)

    bound = lambda s: tol * (1.0 + np.linalg.norm(s))  # noqa: E731
    for _ in range(max_newton):
        if np.linalg.norm(resid(S)) <= bound(S):
            break
        # Newton-Kleinman: (A - S G) X + X (A - S G)^T = -(S G S + I)
        acl = A - S @ G
        S = linalg.solve_continuous_lyapunov(acl, -(S @ G @ S + np.eye(n)))
        S = 0.5 * (S + S.T)
    if np.linalg.norm(resid(S)) > bound(S):
        raise NoConvergence(f"CARE residual {np.linalg.norm(resid(S)):.3e} above tolerance")
    if np.min(np.linalg.eigvalsh(S)) <= 0:
        raise NoConvergence("CARE solution is not positive definite")
    return S


def orthonormal_complement(t_id):
    """Columns completing ``t_id`` to an orthonormal basis.

    Each returned column is sign-normalized so its first nonzero entry is
    positive, which makes the result reproducible.
    """
    t_id = np.atleast_2d(np.asarray(t_id, dtype=float))
    if t_id.ndim != 2:
        raise DimensionMismatch("T_id must be a matrix")
    n, d = t_id.shape
    if d and np.max(np.abs(t_id.T @ t_id - np.eye(d))) > ORTHO_TOL:
        raise NotOrthonormal("T_id columns are not orthonormal")
    if d == n:
        return np.zeros((n, 0))
    if d == 0:
        return np.eye(n)
    q, _ = np.linalg.qr(t_id, mode="complete")
    t_iu = q[:, d:]
    for k in range(t_iu.shape[1]):
        col = t_iu[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-12)
        if idx.size and col[idx[0]] < 0:
            t_iu[:, k] = -col
    return t_iu


def image_equal(m1, m2, rtol=RANK_RTOL) -> bool:
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    m1 = m1.reshape(m1.shape[0], -1) if m1.ndim else m1.reshape(1, 1)
    m2 = m2.reshape(m2.shape[0], -1) if m2.ndim else m2.reshape(1, 1)
    if m1.shape[0] != m2.shape[0]:
        raise DimensionMismatch(f"row counts differ: {m1.shape[0]} vs {m2.shape[0]}")
    r1 = numerical_rank(m1, rtol)
    r2 = numerical_rank(m2, rtol)
    r12 = numerical_rank(np.hstack([m1, m2]), rtol)
    return r1 == r2 == r12
