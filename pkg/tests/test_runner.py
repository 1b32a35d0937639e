import copy
import json
import os

import numpy as np
import pytest

from omniobs.cli import main
from omniobs.exceptions import ConfigInvalid, ConstraintViolation
from omniobs.numerics import Trajectory
from omniobs.runner import (
    build_scenario_config,
    last_fraction_increase,
    load_config,
    run,
    summarize,
    validate_schema,
)

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")

SMALL = {
    "kind": "homo-observer",
    "seed": 3,
    "dt": 0.002,
    "t_end": 2.0,
    "graph": {"type": "ring", "n": 4},
    "model": {"type": "double_integrator"},
    "R": [1],
}


def _cfg(**kw):
    c = copy.deepcopy(SMALL)
    c.update(kw)
    return c


def test_bundled_configs_validate():
    names = sorted(os.listdir(CONFIGS))
    assert "bee.json" in names and "herding.json" in names
    for name in names:
        validate_schema(load_config(os.path.join(CONFIGS, name)))


def test_schema_errors_are_field_level():
    with pytest.raises(ConfigInvalid) as ei:
        validate_schema({"kind": "homo-observer", "seed": 1, "dt": -1, "bogus": 2})
    keys = set(ei.value.errors)
    assert "dt" in keys and "config" in keys
    with pytest.raises(ConfigInvalid):
        validate_schema({"kind": "nope", "seed": 1})
    with pytest.raises(ConfigInvalid) as ei:
        validate_schema(_cfg(t_end=0.001, dt=0.01))
    assert "t_end" in ei.value.errors


def test_empty_R_rejected():
    with pytest.raises(ConfigInvalid) as ei:
        run(_cfg(R=[]))
    assert "R" in ei.value.errors
    with pytest.raises(ConfigInvalid):
        run(_cfg(R=[7]))


def test_disconnected_graph_rejected():
    edges = {"type": "edges", "n": 4, "edges": [[1, 2], [3, 4]]}
    with pytest.raises(ConfigInvalid) as ei:
        run(_cfg(graph=edges))
    assert "graph" in ei.value.errors
    herd = load_config(os.path.join(CONFIGS, "herding.json"))
    herd["graph"] = {"type": "edges", "n": 8, "edges": [[1, 2], [3, 4], [5, 6], [7, 8]]}
    with pytest.raises(ConfigInvalid) as ei:
        run(herd)
    assert "graph" in ei.value.errors


def test_undetectable_model_rejected():
    model = {"type": "custom", "A": [[1, 0], [0, 0]], "B": [[1], [0]], "C": [[0, 1]]}
    with pytest.raises(ConfigInvalid) as ei:
        run(_cfg(kind="hetero-observer", agents=[model, {"type": "single_integrator"}],
                 graph={"type": "path", "n": 2}))
    assert "model" in ei.value.errors


def test_scenario_unknown_field():
    herd = load_config(os.path.join(CONFIGS, "herding.json"))
    herd["scenario"]["speeds"] = [1, 2]
    with pytest.raises(ConfigInvalid) as ei:
        build_scenario_config(herd, 1e-3, 10)
    assert "scenario.speeds" in ei.value.errors


def test_scenario_ids_are_one_based():
    bee = load_config(os.path.join(CONFIGS, "bee-leader-change.json"))
    sc = build_scenario_config(bee, 1e-3, 10)
    assert sc.leaders == (2, 5, 8)
    assert sc.R == (1, 7, 10)
    assert sc.stop_times == {8: 20.0}


def test_run_writes_files_and_roundtrips(tmp_path):
    out = run(_cfg(), tmp_path)
    assert set(out.files) == {"trajectory", "estimation_errors", "adaptive_gains", "metrics",
                              "constraint_report"}
    tr = Trajectory.from_csv(out.files["trajectory"])
    sim = out.simulation
    assert np.array_equal(tr.states, sim.trajectory.states)
    assert np.array_equal(tr.times, sim.trajectory.times)
    errs = Trajectory.from_csv(out.files["estimation_errors"])
    assert errs.states.shape[1] == 4
    assert np.array_equal(errs.states[-1], sim.errors[-1])
    gains = Trajectory.from_csv(out.files["adaptive_gains"])
    assert gains.states.shape[1] == 8
    metrics = json.loads(open(out.files["metrics"]).read())
    assert metrics["kind"] == "homo-observer" and metrics["seed"] == 3
    rep = json.loads(open(out.files["constraint_report"]).read())
    assert rep["passed"] is True


def test_run_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(_cfg(), a)
    run(_cfg(), b)
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_override_changes_initial_state():
    m1 = run(_cfg()).simulation.trajectory.states[0]
    m2 = run(_cfg(), seed=4).simulation.trajectory.states[0]
    assert not np.array_equal(m1, m2)


def test_constraint_violation_raised(monkeypatch):
    import omniobs.runner as runner

    class Bad:
        passed = False

        def failures(self):
            return ["T_id_orthonormal"]

    class Design:
        def report(self):
            return Bad()

    with pytest.raises(ConstraintViolation):
        runner.check_design(Design())


def test_summarize_examples():
    ok = summarize({"final_max_error": 5e-4, "gamma_increase_last10": 0.0,
                    "gamma_s_increase_last10": 0.0})
    assert ok["passed"]
    assert ok["criteria"]["convergence"]["passed"]
    assert ok["criteria"]["gain_boundedness"]["passed"]
    bad = summarize({"final_max_error": 37.5, "gamma_increase_last10": 0.0,
                     "gamma_s_increase_last10": 0.0})
    assert not bad["passed"]
    assert bad["criteria"]["convergence"]["value"] == 37.5
    custom = summarize({"final_max_error": 5e-4, "gamma_increase_last10": 0.0,
                        "gamma_s_increase_last10": 0.0}, {"final_error": 1e-4})
    assert not custom["criteria"]["convergence"]["passed"]


def test_last_fraction_increase():
    trace = np.column_stack([np.arange(11.0), np.ones(11)])
    assert np.allclose(last_fraction_increase(trace), [1.0, 0.0])


def test_cli_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_cfg()))
    assert main(["--config", str(good), "--out", str(tmp_path / "o"), "--summary"]) == 0
    lines = capsys.readouterr().out.splitlines()
    # a 2 s run is too short to converge; the verdict is still reported
    assert lines[0].startswith("FAIL convergence: value=")
    assert lines[-1] == "overall: FAIL"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(_cfg(R=[])))
    assert main(["--config", str(bad)]) == 1
    assert "R:" in capsys.readouterr().err
    missing = tmp_path / "none.json"
    assert main(["--config", str(missing)]) == 1
    blowup = tmp_path / "blow.json"
    cfg = _cfg(kind="hetero-observer", agents=[
        {"type": "custom", "A": [[50.0]], "B": [[1.0]], "C": [[1.0]]},
        {"type": "single_integrator"}], graph={"type": "path", "n": 2}, t_end=30.0,
        dt=0.01, poles=[-1.0])
    cfg.pop("R")
    blowup.write_text(json.dumps(cfg))
    assert main(["--config", str(blowup)]) == 3


def test_cli_constraint_exit_code(tmp_path, monkeypatch):
    import omniobs.cli as cli

    def boom(*a, **k):
        raise ConstraintViolation("forced")

    monkeypatch.setattr(cli, "run", boom)
    good = tmp_path / "good.json"
    good.write_text(json.dumps(_cfg()))
    assert cli.main(["--config", str(good)]) == 2
