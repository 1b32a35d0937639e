import numpy as np
import pytest

from omniobs.exceptions import ConfigInvalid, NoLeaders
from omniobs.graph import Graph, ring
from omniobs.scenarios import (
    BeeConfig,
    HerdingConfig,
    apportion,
    bee_assign,
    bee_classify,
    bee_follower_accel,
    bee_target,
    circling_leader_accel,
    herding_follower_decision,
    herding_follower_identity_input,
    herding_follower_velocity,
    herding_leader_identity_input,
    hull_distance,
    point_in_convex_hull,
)
from omniobs.numerics import integrate


def _herd_est(rows):
    return np.array(rows, dtype=float).ravel()


def test_identity_inputs():
    assert herding_leader_identity_input(1.0, 1.0) == 0
    assert herding_leader_identity_input(0.0, 1.0) == 1
    assert herding_follower_identity_input(0.5) == -0.5


def test_follower_decision():
    est = _herd_est([[0, 0, 0], [1, 1, 0], [2, 2, 0]])
    assert herding_follower_decision(est, 0.8, 0) == set()
    est = _herd_est([[0, 0, 0.9], [1, 1, 0.1], [2, 2, 0]])
    assert herding_follower_decision(est, 0.8, 2) == {0}
    # an agent never picks itself
    assert herding_follower_decision(est, 0.8, 0) == set()


def test_follower_velocity():
    est = _herd_est([[0, 0, 1], [2, 0, 1], [1, -1, 0]])
    assert np.allclose(herding_follower_velocity(est, {0, 1}, 1.0, 2), [0, 1])
    assert np.allclose(herding_follower_velocity(est, set(), 1.0, 2), [0, 0])
    est = _herd_est([[0, 0, 1], [2, 0, 1], [1, 0, 0]])
    assert np.allclose(herding_follower_velocity(est, {0, 1}, 1.0, 2), [0, 0])


def test_circling_leader_equilibrium_and_guard():
    c = np.array([1.0, 2.0])
    p = c + np.array([1.0, 0.0])
    v = 3.0 * np.array([0.0, 1.0])
    assert np.allclose(circling_leader_accel(p, v, c, 3.0, feedforward=False), 0, atol=1e-12)
    # with feedforward, on-orbit output is the centripetal acceleration
    assert np.allclose(circling_leader_accel(p, v, c, 3.0), [-9.0, 0.0], atol=1e-12)
    a = circling_leader_accel(c, np.zeros(2), c, 2.0)
    assert np.all(np.isfinite(a))


@pytest.mark.parametrize("start", [(3.0, 0.0), (0.0, 0.0), (-0.2, 0.1)])
def test_circling_leader_closed_loop(start):
    c = np.array([5.0, 5.0])
    v_star = 3.0

    def field(t, s):
        return np.concatenate([s[2:], circling_leader_accel(s[:2], s[2:], c, v_star)])

    s0 = np.concatenate([c + start, [0.0, 0.0]])
    fin = integrate(field, s0, 20.0, 1e-3, record_every=1000).final
    assert abs(np.linalg.norm(fin[:2] - c) - 1.0) < 0.05
    assert abs(np.linalg.norm(fin[2:]) - v_star) < 0.05 * v_star


def test_bee_classify():
    est = np.zeros(4 * 5)
    assert bee_classify(est, 1.0) == ([], [0, 1, 2, 3, 4])
    rows = np.zeros((5, 4))
    rows[:4, 2] = [2, 3, 4, 0.1]
    assert bee_classify(rows.ravel(), 1.0)[0] == [0, 1, 2]
    rows[0, 2] = 1.0
    lead, foll = bee_classify(rows.ravel(), 1.0)
    assert 0 in foll and 0 not in lead


def test_apportion():
    assert apportion(9, [2, 3, 4]) == [2, 3, 4]
    assert apportion(9, [2, 3]) == [4, 5]
    assert apportion(10, [2, 3]) == [4, 6]
    assert apportion(5, [1]) == [5]
    assert apportion(3, [1, 1]) == [2, 1]
    with pytest.raises(NoLeaders):
        apportion(3, [])


def test_bee_assign_quotas():
    rng = np.random.default_rng(0)
    leaders = {0: (2.0, np.zeros(2)), 1: (3.0, np.ones(2)), 2: (4.0, np.full(2, 5.0))}
    followers = {k: rng.uniform(0, 10, 2) for k in range(3, 12)}
    out = bee_assign(leaders, followers)
    counts = [sum(v == j for v in out.values()) for j in range(3)]
    assert counts == [2, 3, 4] and set(out) == set(followers)


def test_bee_assign_single_and_nearest():
    out = bee_assign({0: (2.0, np.zeros(2))}, {1: np.ones(2), 2: -np.ones(2)})
    assert out == {1: 0, 2: 0}
    out = bee_assign({0: (2.0, np.zeros(2)), 1: (2.0, np.array([10.0, 0]))},
                     {2: np.array([9.0, 0]), 3: np.array([1.0, 0])})
    assert out == {2: 1, 3: 0}


def test_bee_target_and_follower_accel():
    assert np.allclose(bee_target([0, 0], [2, 0]), [0, 1])
    q = bee_target([0, 0], [2, 0])
    assert np.allclose(bee_follower_accel(q, [0, 0], [0, 0], [2, 0]), 0)
    assert np.allclose(bee_follower_accel(q, [0, 0], [0, 0], [2, 0], speed_cap=0.8), 0)
    # inside the cap the capped law equals the plain PD law
    p, v = np.array([0.2, 0.9]), np.array([0.1, -0.1])
    assert np.allclose(bee_follower_accel(p, v, [0, 0], [2, 0], speed_cap=0.8),
                       bee_follower_accel(p, v, [0, 0], [2, 0]))


def test_convex_hull():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert point_in_convex_hull(sq, (0.5, 0.5))
    assert not point_in_convex_hull(sq, (2, 0))
    assert point_in_convex_hull([(0, 0), (2, 2)], (1, 1))
    assert hull_distance(sq, (2, 0)) == pytest.approx(1.0)
    assert point_in_convex_hull([(1, 1)], (1, 1))


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        HerdingConfig(graph=Graph(np.zeros((8, 8)))).validate()
    with pytest.raises(ConfigInvalid):
        HerdingConfig(R=()).validate()
    with pytest.raises(ConfigInvalid):
        BeeConfig(speeds=(2.0, 3.0)).validate()
    with pytest.raises(ConfigInvalid):
        BeeConfig(follower_pool="nearest").validate()
    BeeConfig().validate()
    assert HerdingConfig(graph=ring(8)).followers == [0, 1, 3, 4, 6, 7]


def test_circling_without_feedforward_misses_orbit():
    c = np.zeros(2)

    def field(t, s):
        return np.concatenate([s[2:], circling_leader_accel(s[:2], s[2:], c, 3.0,
                                                              feedforward=False)])

    fin = integrate(field, np.array([3.0, 0, 0, 0]), 20.0, 1e-3, record_every=1000).final
    assert abs(np.linalg.norm(fin[:2]) - 1.0) > 0.05


@pytest.mark.parametrize("cap", [None, 0.8])
def test_follower_accel_batch_matches_scalar(cap, rng):
    from omniobs.scenarios import bee_follower_accel_batch
    P, V, LP, LV = (rng.normal(scale=3, size=(7, 2)) for _ in range(4))
    LV[0] = 0.0
    batch = bee_follower_accel_batch(P, V, LP, LV, 1.3, 2.1, cap)
    for r in range(7):
        assert np.allclose(batch[r], bee_follower_accel(P[r], V[r], LP[r], LV[r], 1.3, 2.1, cap))
