import numpy as np
import pytest

from omniobs.exceptions import EmptyR, NotConnected, NotDetectable, ZeroW
from omniobs.graph import Graph, path, ring
from omniobs.numerics import image_equal
from omniobs.synthesis import (
    AgentModel,
    NodeSolution,
    RawSolution,
    double_integrator,
    extension_scalar_gain,
    single_integrator,
    synth_extension,
    synth_hetero,
    synth_homo,
    verify_constraints,
)
from setups import hetero_setups, homo_setups


def _images_equal(design, model):
    N = design.N
    big_B = np.kron(np.eye(N), model.B)
    return all(image_equal(s.T_id @ model.B,
                           s.T_id @ s.T_id.T @ big_B)
               for s in design.solution.nodes)


def test_hetero_two_scalar_integrators():
    d = synth_hetero([single_integrator(), single_integrator()], [[-1], [-1]])
    s = d.solution[0]
    assert np.allclose(s.T_id, [[1], [0]])
    assert np.allclose(s.E_i, [[-1]])
    assert np.allclose(s.F_i, [[1]])
    assert np.all(s.G_i == 0)
    rep = d.report()
    assert rep.passed and rep.branches == [1, 1]
    for i in range(2):
        assert np.linalg.eigvals(d.solution[i].E_i).real.max() == pytest.approx(-1)


def test_hetero_single_agent_is_luenberger():
    m = double_integrator()
    d = synth_hetero([m], [[-1, -2]])
    s = d.solution[0]
    assert np.allclose(s.T_id, np.eye(2))
    assert s.B_mi.shape == (2, 0)
    assert d.gains[0].T_iu.shape == (2, 0)
    assert np.allclose(np.sort(np.linalg.eigvals(s.E_i).real), [-2, -1])
    assert d.report().passed


def test_hetero_rejects_undetectable():
    bad = AgentModel(np.diag([1.0, 0.0]), np.eye(2), [[0.0, 1.0]])
    with pytest.raises(NotDetectable):
        synth_hetero([single_integrator(), bad])


def test_hetero_random_sets_pass():
    for models in hetero_setups():
        rep = synth_hetero(models).report()
        assert rep.passed, rep.failures()
        assert rep.max_residual() <= 1e-8


def test_verify_detects_non_orthonormal():
    d = synth_hetero([single_integrator(), single_integrator()], [[-1], [-1]])
    nodes = list(d.solution.nodes)
    s = nodes[0]
    nodes[0] = NodeSolution(s.B_i, s.B_mi, 2 * s.T_id, s.E_i, s.F_i, s.G_i, s.branch)
    rep = verify_constraints(RawSolution(nodes), d.A, d.B, d.C)
    assert not rep.passed
    failing = [c for c in rep.node_checks[0] if not c.passed]
    assert any(c.name == "T_id_orthonormal" and c.residual > 0 for c in failing)


def test_homo_two_node_example():
    d = synth_homo(single_integrator(), path(2), [0])
    assert np.allclose(d.solution[1].T_id.T, np.array([[-1, 1]]) / np.sqrt(2))
    assert np.allclose(d.solution[0].T_id.T, [[1, 0]])
    assert d.report().passed


def test_homo_errors():
    with pytest.raises(EmptyR):
        synth_homo(single_integrator(), path(3), [])
    with pytest.raises(NotConnected):
        synth_homo(single_integrator(), Graph(np.zeros((3, 3))), [0])


def test_homo_random_setups():
    for model, g, R, _ in homo_setups():
        d = synth_homo(model, g, R)
        for s in d.solution.nodes:
            assert np.abs(s.T_id.T @ s.T_id - np.eye(s.T_id.shape[1])).max() < 1e-12
        rep = d.report()
        assert rep.passed, rep.failures()
        assert _images_equal(d, model)


def test_images_equal_double_integrator_ring():
    model = double_integrator(2)
    d = synth_homo(model, ring(4), [0])
    assert _images_equal(d, model)


def test_extension_zero_w():
    with pytest.raises(ZeroW):
        synth_extension(single_integrator(), path(2), [0, 0])


def test_extension_scalar_model():
    d = synth_extension(single_integrator(), path(2), [1, 0])
    assert np.allclose(d.aux.S, [[1]])
    assert np.allclose(d.aux.M, [[1]])


def test_extension_gain_two_nodes():
    c, lam = extension_scalar_gain(path(2), [1, 0], 1.1)
    assert lam == pytest.approx((3 - np.sqrt(5)) / 2)
    assert c == pytest.approx(1.1 / (3 - np.sqrt(5)))
    with pytest.raises(ValueError):
        extension_scalar_gain(path(2), [1, 0], 0.5)


def test_extension_uses_second_branch():
    for model, g, _, w in homo_setups():
        d = synth_extension(model, g, w)
        rep = d.report()
        assert rep.passed, rep.failures()
        assert set(rep.branches) == {2}
        assert rep.max_residual() <= 1e-8


def test_constraint_report_json_roundtrip():
    import json
    d = synth_hetero([single_integrator(), double_integrator()])
    data = json.loads(d.report().to_json(solution=d.solution))
    assert data["passed"] is True
    assert len(data["nodes"]) == 2
    assert "solution" in data
