"""Config-driven experiment runs and their output files.

A run goes: validate config -> synthesize -> verify constraints -> simulate
-> metrics -> files. Files are written with fixed key order and ``repr``
floats, so the same config and seed give byte-identical outputs.

Emitted files (all in the output directory):

``trajectory.csv``            ``t,x1..xn`` plant state, every ``record_every`` steps
``estimation_errors.csv``     ``t,e1..eN`` with ``e_i = ||xhat_i - x||``
``adaptive_gains.csv``        ``t,gamma_1..gamma_N,gamma_s1..gamma_sN``
``metrics.json``              scalar metrics plus scenario-specific entries
``constraint_report.json``    per-constraint residuals of the synthesized design
"""
from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .exceptions import (
    ConfigInvalid,
    ConstraintViolation,
    EmptyR,
    NotConnected,
    NotDetectable,
    OmniObsError,
    ZeroW,
)
from .graph import Graph, complete, is_connected, path, ring
from .nash import QuadraticGame, centralized_seek, distributed_seek, quadratic_ne_oracle
from .numerics import write_csv
from .observer_core import AdaptiveParams
from .scenarios import BeeConfig, HerdingConfig, run_bee, run_herding
from .simulation import ObserverNetwork, SimulationResult, simulate
from .synthesis import (
    AgentModel,
    double_integrator,
    single_integrator,
    synth_extension,
    synth_hetero,
    synth_homo,
)

log = logging.getLogger(__name__)

KINDS = ("hetero-observer", "homo-observer", "extension-observer", "nash", "herding", "bee")

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_ids = {"type": "array", "items": {"type": "integer", "minimum": 1}}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["single_integrator", "double_integrator", "custom"]},
        "dim": {"type": "integer", "minimum": 1},
        "A": _matrix, "B": _matrix, "C": _matrix,
    },
    "required": ["type"],
    "additionalProperties": False,
}

GRAPH_SCHEMA = {
    "type": "object",
    "properties": {
        "type": {"enum": ["ring", "path", "complete", "edges"]},
        "n": {"type": "integer", "minimum": 1},
        "weight": {"type": "number", "exclusiveMinimum": 0},
        "edges": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 3,
                                              "items": {"type": "number"}}},
    },
    "required": ["type", "n"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(KINDS)},
        "seed": {"type": "integer"},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "t_end": {"type": "number", "exclusiveMinimum": 0},
        "record_every": {"type": "integer", "minimum": 1},
        "scheme": {"enum": ["split", "rk4"]},
        "graph": GRAPH_SCHEMA,
        "adaptive": {
            "type": "object",
            "properties": {k: {"type": "number", "exclusiveMinimum": 0}
                           for k in ("phi", "phi_s", "gamma0", "gamma_s0")},
            "additionalProperties": False,
        },
        "agents": {"type": "array", "items": MODEL_SCHEMA, "minItems": 1},
        "model": MODEL_SCHEMA,
        "R": _ids,
        "w": _vector,
        "safety_margin": {"type": "number", "minimum": 1},
        "poles": _vector,
        "inputs": {
            "type": "object",
            "properties": {
                "type": {"enum": ["zero", "sinusoid"]},
                "amplitude": {"type": "number", "minimum": 0},
                "frequency": {"type": "number", "minimum": 0},
            },
            "required": ["type"],
            "additionalProperties": False,
        },
        "x0": {"oneOf": [_vector, {
            "type": "object",
            "properties": {"low": {"type": "number"}, "high": {"type": "number"}},
            "required": ["low", "high"],
            "additionalProperties": False,
        }]},
        "exact_init": {"type": "boolean"},
        "game": {
            "type": "object",
            "properties": {"Q": _matrix, "q": _vector, "dim": {"type": "integer", "minimum": 1}},
            "required": ["Q", "q"],
            "additionalProperties": False,
        },
        "observer": {"enum": ["hetero", "homo"]},
        "action_bound": {"type": "number", "exclusiveMinimum": 0},
        "scenario": {"type": "object"},
        "thresholds": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "required": ["kind", "seed"],
    "additionalProperties": False,
}

DEFAULT_THRESHOLDS = {
    "final_error": 1e-2,
    "gain_increase": 1e-4,
    "ne_distance": 1e-3,
    "centralized_distance": 2e-3,
    "hull_tol": 0.05,
    "stationary_speed": 1e-6,
    "target_error": 0.1,
    "radius_error": 0.05,
    "speed_error": 0.05,
}


@dataclass
class RunOutput:
    kind: str
    metrics: dict
    files: dict = field(default_factory=dict)
    simulation: SimulationResult | None = None


# ---------------------------------------------------------------------------
# config parsing


def load_config(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigInvalid({"config": f"file not found: {path}"}) from None
    except json.JSONDecodeError as e:
        raise ConfigInvalid({"config": f"not valid JSON: {e}"}) from None


def validate_schema(cfg):
    errors = {}
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    for err in sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        key = ".".join(str(p) for p in err.absolute_path) or "config"
        errors.setdefault(key, err.message)
    if errors:
        raise ConfigInvalid(errors)
    dt, t_end = cfg.get("dt", 1e-3), cfg.get("t_end")
    if t_end is not None and not t_end > dt:
        raise ConfigInvalid({"t_end": f"must exceed dt={dt}"})


def build_graph(spec, field_name="graph"):
    kind, n = spec["type"], spec["n"]
    wt = spec.get("weight", 1.0)
    try:
        if kind == "ring":
            return ring(n, wt)
        if kind == "path":
            return path(n, wt)
        if kind == "complete":
            return complete(n, wt)
        return Graph.from_edges(n, spec.get("edges", []), one_based=True)
    except ValueError as e:
        raise ConfigInvalid({field_name: str(e)}) from None


def connected_graph(cfg, n_expected=None):
    if "graph" not in cfg:
        raise ConfigInvalid({"graph": "required for this experiment kind"})
    g = build_graph(cfg["graph"])
    if n_expected is not None and g.n != n_expected:
        raise ConfigInvalid({"graph.n": f"graph has {g.n} nodes, expected {n_expected}"})
    if not is_connected(g):
        raise ConfigInvalid({"graph": "communication graph must be connected"})
    return g


def build_model(spec, field_name):
    kind = spec["type"]
    dim = spec.get("dim", 1)
    try:
        if kind == "single_integrator":
            return single_integrator(dim)
        if kind == "double_integrator":
            return double_integrator(dim)
        missing = [k for k in "ABC" if k not in spec]
        if missing:
            raise ConfigInvalid({field_name: f"custom model needs {', '.join(missing)}"})
        return AgentModel(np.array(spec["A"]), np.array(spec["B"]), np.array(spec["C"]))
    except (ValueError, OmniObsError) as e:
        if isinstance(e, ConfigInvalid):
            raise
        raise ConfigInvalid({field_name: str(e)}) from None


def build_params(cfg):
    return AdaptiveParams(**cfg.get("adaptive", {}))


def R_set(cfg, N):
    R = cfg.get("R")
    if R is None:
        raise ConfigInvalid({"R": "required for this experiment kind"})
    if not R:
        raise ConfigInvalid({"R": "must be nonempty: at least one agent needs its own output"})
    bad = [r for r in R if not 1 <= r <= N]
    if bad:
        raise ConfigInvalid({"R": f"ids outside 1..{N}: {bad}"})
    return [r - 1 for r in R]


def input_signal(cfg, m):
    """Bounded test inputs ``a sin(f (1 + k/10) t + k)`` on channel k."""
    spec = cfg.get("inputs", {"type": "sinusoid"})
    if spec["type"] == "zero":
        zero = np.zeros(m)
        return lambda t, x, xh: zero
    a = spec.get("amplitude", 1.0)
    f = spec.get("frequency", 0.5)
    k = np.arange(m)
    rate = f * (1.0 + 0.1 * k)
    return lambda t, x, xh: a * np.sin(rate * t + k)


def initial_state(cfg, n, rng):
    x0 = cfg.get("x0", {"low": -1.0, "high": 1.0})
    if isinstance(x0, list):
        if len(x0) != n:
            raise ConfigInvalid({"x0": f"expected {n} entries, got {len(x0)}"})
        return np.array(x0, dtype=float)
    if x0["high"] < x0["low"]:
        raise ConfigInvalid({"x0": "need low <= high"})
    return rng.uniform(x0["low"], x0["high"], n)


def synthesize(cfg):
    """Build the observer design for an observer or nash config."""
    kind = cfg["kind"]
    poles = cfg.get("poles")
    try:
        if kind == "hetero-observer":
            if "agents" not in cfg:
                raise ConfigInvalid({"agents": "required for hetero-observer"})
            models = [build_model(a, f"agents.{i}") for i, a in enumerate(cfg["agents"])]
            g = connected_graph(cfg, len(models))
            return synth_hetero(models, poles, graph=g)
        if kind == "homo-observer":
            model = build_model(cfg.get("model", {"type": "double_integrator"}), "model")
            g = connected_graph(cfg)
            return synth_homo(model, g, R_set(cfg, g.n), poles)
        if kind == "extension-observer":
            model = build_model(cfg.get("model", {"type": "double_integrator"}), "model")
            g = connected_graph(cfg)
            w = cfg.get("w")
            if w is None or len(w) != g.n:
                raise ConfigInvalid({"w": f"need one access weight per agent ({g.n})"})
            if any(v < 0 for v in w):
                raise ConfigInvalid({"w": "access weights must be nonnegative"})
            return synth_extension(model, g, w, cfg.get("safety_margin", 1.1))
        if kind == "nash":
            game = build_game(cfg)
            g = connected_graph(cfg, game.N)
            model = single_integrator(game.dim)
            if cfg.get("observer", "hetero") == "hetero":
                return synth_hetero([model] * game.N, poles, graph=g)
            return synth_homo(model, g, R_set(cfg, g.n), poles)
    except (NotDetectable, EmptyR, NotConnected, ZeroW) as e:
        raise ConfigInvalid({_field_for(e): str(e)}) from None
    raise ConfigInvalid({"kind": f"{kind} has no observer design"})


def _field_for(err):
    return {NotDetectable: "model", EmptyR: "R", NotConnected: "graph", ZeroW: "w"}[type(err)]


def build_game(cfg):
    if "game" not in cfg:
        raise ConfigInvalid({"game": "required for nash"})
    spec = cfg["game"]
    try:
        return QuadraticGame(np.array(spec["Q"], dtype=float), np.array(spec["q"], dtype=float),
                             dim=spec.get("dim", 1))
    except ValueError as e:
        raise ConfigInvalid({"game": str(e)}) from None


def check_design(design):
    report = design.report()
    if not report.passed:
        raise ConstraintViolation("synthesized design violates: " + ", ".join(report.failures()),
                                  report)
    return report


# ---------------------------------------------------------------------------
# metrics


def last_fraction_increase(trace, frac=0.1):
    """Per-node increase over the last ``frac`` of a (steps, N) trace."""
    k = int(np.floor((1.0 - frac) * (len(trace) - 1)))
    return trace[-1] - trace[k]


def observer_metrics(res: SimulationResult):
    m = {
        "final_errors": res.errors[-1].tolist(),
        "final_max_error": float(res.errors[-1].max()),
        "gamma_final": res.gamma[-1].tolist(),
        "gamma_s_final": res.gamma_s[-1].tolist(),
        "gamma_increase_last10": float(last_fraction_increase(res.gamma).max()),
        "gamma_s_increase_last10": float(last_fraction_increase(res.gamma_s).max()),
        "gamma_nondecreasing": bool(np.all(np.diff(res.gamma, axis=0) >= 0)
                                    and np.all(np.diff(res.gamma_s, axis=0) >= 0)),
        "scheme": res.extras.get("scheme"),
        "saturated_steps": res.extras.get("saturated_steps"),
    }
    if res.aux_errors is not None:
        m["aux_final_errors"] = res.aux_errors[-1].tolist()
        m["aux_final_max_error"] = float(res.aux_errors[-1].max())
    return m


# ---------------------------------------------------------------------------
# file emission


def _json_dump(data, path):
    with open(path, "w") as fh:
        fh.write(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _sampled(res: SimulationResult, record_every):
    idx = np.arange(0, len(res.times), record_every)
    if idx[-1] != len(res.times) - 1:
        idx = np.append(idx, len(res.times) - 1)
    return idx


def write_outputs(out_dir, res: SimulationResult, metrics, report, record_every, solution=None):
    os.makedirs(out_dir, exist_ok=True)
    files = {}
    p = os.path.join(out_dir, "trajectory.csv")
    res.trajectory.to_csv(p)
    files["trajectory"] = p

    idx = _sampled(res, record_every)
    t = res.times[idx]
    N = res.errors.shape[1]
    p = os.path.join(out_dir, "estimation_errors.csv")
    header = ["t"] + [f"e{i + 1}" for i in range(N)]
    cols = [res.errors[idx]]
    if res.aux_errors is not None:
        header += [f"aux_e{i + 1}" for i in range(N)]
        cols.append(res.aux_errors[idx])
    with open(p, "w", newline="") as fh:
        write_csv(fh, header, np.column_stack([t, *cols]))
    files["estimation_errors"] = p

    p = os.path.join(out_dir, "adaptive_gains.csv")
    header = (["t"] + [f"gamma_{i + 1}" for i in range(N)]
              + [f"gamma_s{i + 1}" for i in range(N)])
    with open(p, "w", newline="") as fh:
        write_csv(fh, header, np.column_stack([t, res.gamma[idx], res.gamma_s[idx]]))
    files["adaptive_gains"] = p

    p = os.path.join(out_dir, "metrics.json")
    _json_dump(metrics, p)
    files["metrics"] = p

    p = os.path.join(out_dir, "constraint_report.json")
    if report is not None:
        report.to_json(p, solution)
    else:
        _json_dump({"passed": True, "note": "no observer design"}, p)
    files["constraint_report"] = p
    return files


# ---------------------------------------------------------------------------
# orchestration


def run(cfg, out_dir=None, seed=None) -> RunOutput:
    """Execute one experiment config (a dict, already parsed from JSON)."""
    cfg = copy.deepcopy(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate_schema(cfg)
    kind = cfg["kind"]
    try:
        params = build_params(cfg)
    except ValueError as e:
        raise ConfigInvalid({"adaptive": str(e)}) from None
    dt = cfg.get("dt", 1e-3)
    record_every = cfg.get("record_every", 10)
    scheme = cfg.get("scheme", "split")
    rng = np.random.default_rng(cfg["seed"])

    if kind in ("herding", "bee"):
        return _run_scenario(cfg, out_dir, dt, record_every, scheme)

    design = synthesize(cfg)
    report = check_design(design)
    t_end = cfg.get("t_end", 60.0)

    if kind == "nash":
        game = build_game(cfg)
        x0 = initial_state(cfg, game.size, rng)
        x_star = quadratic_ne_oracle(game)
        central = centralized_seek(game, x0, t_end, dt, record_every=record_every)
        seek = distributed_seek(game, design, x0, t_end, dt, params,
                                bound=cfg.get("action_bound", 1e3),
                                exact_init=cfg.get("exact_init", False),
                                record_every=record_every, scheme=scheme)
        res = seek.simulation
        metrics = observer_metrics(res)
        final = res.final_state[:game.size]
        metrics.update({
            "x_star": x_star.tolist(),
            "final_profile": final.tolist(),
            "centralized_final": central.final.tolist(),
            "ne_distance": float(np.linalg.norm(final - x_star)),
            "centralized_distance": float(np.linalg.norm(final - central.final)),
            "action_clamped": seek.clamped,
        })
    else:
        net = ObserverNetwork(design, params)
        x0 = initial_state(cfg, design.n, rng)
        res = simulate(net, x0, t_end, dt, controller=input_signal(cfg, net.m),
                       record_every=record_every, exact_init=cfg.get("exact_init", False),
                       scheme=scheme)
        metrics = observer_metrics(res)
        if design.aux is not None:
            metrics["c"] = design.aux.c
            metrics["lambda_min"] = design.aux.lambda_min

    metrics = {"kind": kind, "seed": cfg["seed"], **metrics}
    files = {}
    if out_dir is not None:
        files = write_outputs(out_dir, res, metrics, report, record_every, design.solution)
    return RunOutput(kind, metrics, files, res)


def _scenario_ids(spec, key, N):
    ids = spec.get(key)
    if ids is None:
        return None
    bad = [v for v in ids if not 1 <= int(v) <= N]
    if bad:
        raise ConfigInvalid({f"scenario.{key}": f"ids outside 1..{N}: {bad}"})
    return tuple(int(v) - 1 for v in ids)


def build_scenario_config(cfg, dt, record_every):
    kind = cfg["kind"]
    spec = dict(cfg.get("scenario", {}))
    known_common = {"N", "leaders", "R", "box", "decision_dt"}
    if kind == "herding":
        known = known_common | {"schedules", "z_star", "z_star_t", "k_f"}
    else:
        known = known_common | {"centers", "speeds", "v_star_t", "k_r", "k_a", "k_p", "k_d",
                                "follower_speed_cap", "stop_times", "follower_pool"}
    unknown = sorted(set(spec) - known)
    if unknown:
        raise ConfigInvalid({f"scenario.{k}": "unknown field" for k in unknown})
    default = HerdingConfig() if kind == "herding" else BeeConfig()
    N = int(spec.get("N", default.N))
    kw = {"N": N, "dt": dt, "record_every": record_every, "seed": cfg["seed"]}
    if "t_end" in cfg:
        kw["t_end"] = cfg["t_end"]
    if "graph" in cfg:
        kw["graph"] = build_graph(cfg["graph"])
    elif N != default.N:
        kw["graph"] = ring(N)
    if "adaptive" in cfg:
        kw["params"] = build_params(cfg)
    if "R" in cfg:
        R = R_set(cfg, N)
        kw["R"] = tuple(R)
    for key in ("leaders",):
        ids = _scenario_ids(spec, key, N)
        if ids is not None:
            kw[key] = ids
    if "R" in spec:
        raise ConfigInvalid({"scenario.R": "give R at the top level"})
    for key in ("box",):
        if key in spec:
            kw[key] = tuple(spec[key])
    for key in ("decision_dt", "z_star", "z_star_t", "k_f", "v_star_t", "k_r", "k_a", "k_p",
                "k_d", "follower_speed_cap", "follower_pool"):
        if key in spec:
            kw[key] = spec[key]
    if kind == "herding" and "schedules" in spec:
        kw["schedules"] = {int(k) - 1: v for k, v in spec["schedules"].items()}
    if kind == "bee":
        for key in ("centers", "speeds"):
            if key in spec:
                kw[key] = tuple(spec[key])
        if "stop_times" in spec:
            kw["stop_times"] = {int(k) - 1: v for k, v in spec["stop_times"].items()}
    try:
        sc = HerdingConfig(**kw) if kind == "herding" else BeeConfig(**kw)
        sc.validate()
    except ConfigInvalid as e:
        raise ConfigInvalid({(k if k in ("graph", "R", "dt", "t_end") else f"scenario.{k}"): v
                             for k, v in e.errors.items()}) from None
    except (TypeError, ValueError) as e:
        raise ConfigInvalid({"scenario": str(e)}) from None
    return sc


def _run_scenario(cfg, out_dir, dt, record_every, scheme):
    kind = cfg["kind"]
    sc = build_scenario_config(cfg, dt, record_every)
    result = run_herding(sc, scheme) if kind == "herding" else run_bee(sc, scheme)
    res = result.simulation
    report = check_design(result.network.design)
    metrics = {"kind": kind, "seed": cfg["seed"], **observer_metrics(res), **result.metrics}
    files = {}
    if out_dir is not None:
        files = write_outputs(out_dir, res, metrics, report, record_every,
                              result.network.design.solution)
    return RunOutput(kind, metrics, files, res)


# ---------------------------------------------------------------------------
# verdicts


def _verdict(passed, value, threshold):
    return {"passed": bool(passed), "value": value, "threshold": threshold}


def summarize(metrics, thresholds=None):
    """Evaluate the acceptance predicates that apply to ``metrics``."""
    th = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    out = {}
    if "final_max_error" in metrics:
        v = metrics["final_max_error"]
        out["convergence"] = _verdict(v <= th["final_error"], v, th["final_error"])
    if "aux_final_max_error" in metrics:
        v = metrics["aux_final_max_error"]
        out["aux_convergence"] = _verdict(v <= th["final_error"], v, th["final_error"])
    if "gamma_increase_last10" in metrics:
        v = max(metrics["gamma_increase_last10"], metrics["gamma_s_increase_last10"])
        out["gain_boundedness"] = _verdict(v <= th["gain_increase"], v, th["gain_increase"])
    if "ne_distance" in metrics:
        v = metrics["ne_distance"]
        out["nash_equilibrium"] = _verdict(v <= th["ne_distance"], v, th["ne_distance"])
        v = metrics["centralized_distance"]
        out["matches_centralized"] = _verdict(v <= th["centralized_distance"], v,
                                              th["centralized_distance"])
    if "max_hull_distance" in metrics:
        v = metrics["max_hull_distance"]
        out["followers_in_hull"] = _verdict(v <= th["hull_tol"], v, th["hull_tol"])
        v = metrics["max_follower_speed_before_crossing"]
        out["followers_still_before_identification"] = _verdict(
            v < th["stationary_speed"], v, th["stationary_speed"])
    if "assignment_counts" in metrics:
        counts = [metrics["assignment_counts"][k] for k in metrics["expected_counts"]]
        expected = list(metrics["expected_counts"].values())
        out["assignment_counts"] = _verdict(metrics["counts_match"], counts, expected)
        v = metrics["max_follower_target_error"]
        ok = v is not None and v < th["target_error"] and not metrics["unassigned"]
        out["followers_at_targets"] = _verdict(ok, v, th["target_error"])
        v = max(metrics["leader_radius_error"].values(), default=0.0)
        out["leader_radius"] = _verdict(v < th["radius_error"], v, th["radius_error"])
        v = max(metrics["leader_speed_error"].values(), default=0.0)
        out["leader_speed"] = _verdict(v < th["speed_error"], v, th["speed_error"])
    return {"passed": all(c["passed"] for c in out.values()), "criteria": out}
