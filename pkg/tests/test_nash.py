import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from omniobs.exceptions import SetupMismatch, Singular
from omniobs.graph import ring
from omniobs.nash import (
    Game,
    QuadraticGame,
    centralized_seek,
    check_relaxed_lipschitz,
    distributed_seek,
    quadratic_ne_oracle,
    relaxed_lipschitz_holds,
    seek_controller,
    sqrt_gradient_game,
)
from omniobs.synthesis import double_integrator, single_integrator, synth_hetero, synth_homo


def test_oracle_examples():
    d = np.array([1.0, -2.0, 0.5])
    g = QuadraticGame(np.eye(3), -d)
    assert np.allclose(quadratic_ne_oracle(g), d)
    g2 = QuadraticGame([[2, 1], [1, 2]], [-3, -3])
    assert np.allclose(quadratic_ne_oracle(g2), [1, 1])
    with pytest.raises(Singular):
        quadratic_ne_oracle(QuadraticGame([[1, 1], [1, 1]], [0, 0], mu=None))


def test_quadratic_game_mu_check():
    with pytest.raises(ValueError):
        QuadraticGame([[1, 0], [0, 1]], [0, 0], mu=2.0)
    g = QuadraticGame([[2, 1], [-1, 2]], [0, 0])
    assert g.mu == pytest.approx(2.0)
    assert g.check_strongly_monotone(rng=0)


def test_player_gradients_vectorized_matches_loop(rng):
    g = QuadraticGame.random(4, rng, dim=2)
    profiles = rng.normal(size=(4, 8))
    loop = np.stack([g.gradient(i, profiles[i]) for i in range(4)])
    assert np.allclose(g.player_gradients(profiles), loop)
    assert np.allclose(Game.player_gradients(g, profiles), loop)


def test_centralized_decoupled_decays():
    g = QuadraticGame(np.eye(1), [0.0])
    tr = centralized_seek(g, [1.0], 10.0)
    assert abs(tr.final[0] - np.exp(-10)) < 1e-9


def test_centralized_stationary_at_equilibrium(rng):
    g = QuadraticGame.random(3, rng)
    x = quadratic_ne_oracle(g)
    tr = centralized_seek(g, x, 5.0)
    assert np.abs(tr.states - x).max() < 1e-10


def test_centralized_three_player_random(rng):
    for _ in range(3):
        g = QuadraticGame.random(3, rng)
        tr = centralized_seek(g, rng.normal(size=3), 50.0, record_every=1000)
        assert np.abs(tr.final - quadratic_ne_oracle(g)).max() < 1e-4


def test_distributed_stationary_with_exact_init():
    g = QuadraticGame([[3, 1, 0], [1, 4, 1], [0, -1, 3]], [1, -2, 0.5])
    x = quadratic_ne_oracle(g)
    design = synth_homo(single_integrator(), ring(3), [0])
    res = distributed_seek(g, design, x, 2.0, exact_init=True)
    assert np.abs(res.trajectory.states - x).max() < 1e-10
    assert res.simulation.errors.max() < 1e-10


def test_distributed_short_run_converges():
    g = QuadraticGame([[3, 1, 0], [1, 4, 1], [0, -1, 3]], [1, -2, 0.5])
    design = synth_hetero([single_integrator()] * 3, graph=ring(3))
    res = distributed_seek(g, design, [1.0, -1.0, 2.0], 15.0)
    assert np.abs(res.final - quadratic_ne_oracle(g)).max() < 1e-3
    assert not res.clamped


def test_seek_setup_mismatch():
    g = QuadraticGame(np.eye(2), [0, 0])
    with pytest.raises(SetupMismatch):
        distributed_seek(g, synth_hetero([double_integrator()] * 2, graph=ring(2)), [0, 0, 0, 0], 1)
    with pytest.raises(SetupMismatch):
        distributed_seek(g, synth_hetero([single_integrator()] * 3, graph=ring(3)), [0, 0, 0], 1)


def test_seek_controller_clamps(caplog):
    g = QuadraticGame(np.eye(2), [0, 0])
    ctrl, state = seek_controller(g, bound=1.0)
    u = ctrl(0.0, None, np.array([[10.0, 0.0], [0.0, 0.5]]))
    assert np.allclose(u, [-1.0, -0.5])
    assert state["clamped"]
    assert "clamped" in caplog.text


def test_relaxed_lipschitz_examples(rng):
    g = QuadraticGame.random(3, rng)
    chi = np.linalg.norm(g.Q, 2) ** 2
    assert check_relaxed_lipschitz(g, chi, 0.0, 300, rng)
    assert not check_relaxed_lipschitz(g, 0.0, 0.0, 50, rng)


def test_sqrt_example_constants():
    g = sqrt_gradient_game(2)
    assert check_relaxed_lipschitz(g, 2.0, 4.0, 5000, 0)
    # chi_s = 2 is too small: a = 1, b = -1 gives 16 > 2*4 + 2*2
    assert not relaxed_lipschitz_holds(sqrt_gradient_game(1), [1.0], [-1.0], 2.0, 2.0)
    assert g.check_strongly_monotone(rng=0)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(-100, 100), b=st.floats(-100, 100))
def test_sqrt_bound_holds_everywhere(a, b):
    assert relaxed_lipschitz_holds(sqrt_gradient_game(1), [a], [b], 2.0, 4.0)


def test_sqrt_not_lipschitz_near_zero():
    g = sqrt_gradient_game(1)
    for eps in (1e-2, 1e-4, 1e-6):
        slope = abs(g.gradient(0, [eps])[0] - g.gradient(0, [0.0])[0]) / eps
        assert slope > 1 / np.sqrt(eps) * 0.99
