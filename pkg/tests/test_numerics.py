import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omniobs.exceptions import BadPoleSet, NonFinite, NotDetectable
from omniobs.numerics import (
    Trajectory,
    image_equal,
    integrate,
    is_detectable,
    orthonormal_complement,
    place_observer_gain,
    solve_care,
)


def test_integrate_constant():
    tr = integrate(lambda t, x: np.zeros_like(x), [1.0], 1.0)
    assert np.all(tr.states == 1.0)
    assert tr.times[-1] == pytest.approx(1.0)


def test_integrate_exponential():
    tr = integrate(lambda t, x: -x, [1.0], 1.0, 1e-3)
    assert abs(tr.final[0] - np.exp(-1)) < 1e-9


def test_integrate_blowup():
    with pytest.raises(NonFinite) as ei, np.errstate(over="ignore", invalid="ignore"):
        integrate(lambda t, x: x**2, [1.0], 2.0)
    # the discrete map escapes a few steps past the true singularity at t=1
    assert 0.9 < ei.value.time < 1.1


def test_trajectory_csv_roundtrip(rng):
    tr = Trajectory(np.arange(5) * 0.1, rng.normal(size=(5, 3)) * 1e-7)
    back = Trajectory.from_csv(tr.to_csv())
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.states, tr.states)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory([0.0, 0.0], [[1.0], [2.0]])


def test_place_scalar():
    L = place_observer_gain(np.zeros((1, 1)), np.ones((1, 1)), [-1])
    assert L.shape == (1, 1) and L[0, 0] == pytest.approx(-1.0)


def test_place_double_integrator():
    A = np.array([[0, 1], [0, 0.0]])
    C = np.array([[1, 0.0]])
    L = place_observer_gain(A, C, [-1, -2])
    ev = np.sort(np.linalg.eigvals(A + L @ C).real)
    assert np.allclose(ev, [-2, -1], atol=1e-6)
    # characteristic polynomial s^2 + 3 s + 2 gives L = [-3, -2]
    assert np.allclose(L.ravel(), [-3, -2], atol=1e-9)


def test_place_not_detectable():
    with pytest.raises(NotDetectable):
        place_observer_gain(np.ones((1, 1)), np.zeros((1, 1)), [-1])


def test_place_bad_poles():
    A = np.array([[0, 1], [0, 0.0]])
    C = np.array([[1, 0.0]])
    with pytest.raises(BadPoleSet):
        place_observer_gain(A, C, [1.0, -2.0])
    with pytest.raises(BadPoleSet):
        place_observer_gain(A, C, [-1 + 1j, -2])


def test_place_partial_observability():
    # observable first mode, stable unobservable second mode
    A = np.diag([1.0, -3.0])
    C = np.array([[1.0, 0.0]])
    assert is_detectable(A, C)
    L = place_observer_gain(A, C, [-2, -5])
    assert np.max(np.linalg.eigvals(A + L @ C).real) < 0


def test_care_scalar():
    assert solve_care(np.zeros((1, 1)), np.ones((1, 1)))[0, 0] == pytest.approx(1.0)
    assert solve_care(np.ones((1, 1)), np.ones((1, 1)))[0, 0] == pytest.approx(1 + np.sqrt(2))


def test_care_double_integrator():
    A = np.array([[0, 1], [0, 0.0]])
    C = np.array([[1, 0.0]])
    S = solve_care(A, C)
    res = A @ S + S @ A.T - S @ C.T @ C @ S + np.eye(2)
    assert np.abs(res).max() < 1e-8
    assert np.allclose(S, S.T) and np.linalg.eigvalsh(S)[0] > 0


def test_orthonormal_complement_examples(rng):
    T = orthonormal_complement(np.array([[1.0], [0.0]]))
    assert np.allclose(T, [[0], [1]])
    assert orthonormal_complement(np.eye(3)).shape == (3, 0)
    Td, _ = np.linalg.qr(rng.normal(size=(5, 2)))
    Tu = orthonormal_complement(Td)
    assert np.abs(Td.T @ Tu).max() < 1e-10
    assert np.abs(Tu.T @ Tu - np.eye(3)).max() < 1e-10


def test_image_equal_examples():
    assert image_equal(np.array([[1.0], [0.0]]), np.array([[2.0], [0.0]]))
    assert not image_equal(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), d=st.integers(0, 6), seed=st.integers(0, 10_000))
def test_orthonormal_complement_property(n, d, seed):
    d = min(d, n)
    r = np.random.default_rng(seed)
    Td = np.linalg.qr(r.normal(size=(n, n)))[0][:, :d]
    Tu = orthonormal_complement(Td)
    assert Tu.shape == (n, n - d)
    assert np.abs(Td.T @ Tu).max(initial=0) < 1e-10
    assert np.abs(Tu.T @ Tu - np.eye(n - d)).max(initial=0) < 1e-10


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 4))
def test_place_random_observable(seed, n):
    r = np.random.default_rng(seed)
    A = r.normal(size=(n, n))
    C = r.normal(size=(1, n))
    poles = -np.arange(1, n + 1, dtype=float)
    L = place_observer_gain(A, C, poles)
    ev = np.sort(np.linalg.eigvals(A + L @ C).real)
    assert np.allclose(ev, np.sort(poles), atol=1e-4)
