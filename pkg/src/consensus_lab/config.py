"""Run configuration: JSON parsing, validation, serialization and presets.

Config documents are JSON objects::

    {
      "version": 1,
      "system": {"A": [[...]], "B": [[...]], "C": [[...]]},
      "protocol": {"variant": "switching-edge", "kappa": 1.0, "initial_weights": 0.0},
      "graph": {"nodes": 6, "edges": [[1, 2], ...], "leader": null,
                "switching": {"graphs": [[[1, 2], ...], ...], "dwell": 0.1,
                              "mode": "random", "seed": null}},
      "gains": {"F": [[-3, -6.5, -4.5]]},
      "sim": {"step": 0.001, "horizon": 30.0, "record_every": 100,
              "convergence_tol": 0.001, "seed": 42},
      "initial": {"x": "random", "v": "random"},
      "output": "runs/example"
    }

Node indices are 1-based. ``edges`` may also be a string in the edge-list
text form (one ``"i j"`` pair per line). Edge variants take ``kappa``
(scalar, ``{"i-j": value}`` map or symmetric N x N matrix); node variants
take ``tau`` (scalar or list of N). ``initial`` entries are explicit N x n
arrays, ``"random"`` (uniform in [-1, 1] from ``sim.seed``; x is drawn
before v from one stream) or ``{"random": {"seed": s}}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .engine import SimConfig
from .errors import (
    ConfigSyntaxError,
    ConfigValidationError,
    ConsensusLabError,
    UnknownPreset,
)
from .graph import CommGraph, SwitchingSignal, parse_edge_list, steps_per_dwell
from .protocols import ProtocolSpec, Variant, initial_state
from .system import LinearSystem

CONFIG_VERSION = 1

# Placeholder topologies standing in for the two 6-node graphs of the
# switching example, whose exact edges are not available. Both connected.
G1_EDGES = ((1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 6), (1, 4))
G2_EDGES = ((1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (1, 3), (4, 6), (2, 5))
# leader 1 talks to every follower; followers 2..6 form a ring
LEADER_DEMO_EDGES = ((1, 2), (1, 3), (1, 4), (1, 5), (1, 6),
                     (2, 3), (3, 4), (4, 5), (5, 6), (2, 6))
SEC6_F = [[-3.0, -6.5, -4.5]]


@dataclass
class SwitchingConfig:
    graphs: list
    dwell: float
    mode: str = "cyclic"
    seed: Optional[int] = None


@dataclass
class GraphConfig:
    nodes: int
    edges: list = field(default_factory=list)
    leader: Optional[int] = None
    switching: Optional[SwitchingConfig] = None


@dataclass
class ProtocolConfig:
    variant: str
    adaptation: Any = 1.0
    initial_weights: Any = 0.0


@dataclass
class RunConfig:
    system: dict
    protocol: ProtocolConfig
    graph: GraphConfig
    sim: SimConfig = field(default_factory=SimConfig)
    f_override: Optional[list] = None
    initial: dict = field(default_factory=lambda: {"x": "random", "v": "random"})
    output: Optional[str] = None
    version: int = CONFIG_VERSION

    @property
    def variant(self) -> Variant:
        return Variant(self.protocol.variant)


# ---------------------------------------------------------------------------
# parsing helpers


def _fail(fieldname, reason):
    raise ConfigValidationError(fieldname, reason)


def _number(value, fieldname) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        _fail(fieldname, "must be a number")
    if not math.isfinite(value):
        _fail(fieldname, "must be finite")
    return float(value)


def _integer(value, fieldname) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        _fail(fieldname, "must be an integer")
    return int(value)


def _matrix(value, fieldname) -> list:
    if not isinstance(value, list) or not value:
        _fail(fieldname, "must be a non-empty list of rows")
    rows = []
    for r, row in enumerate(value):
        if not isinstance(row, list) or not row:
            _fail(f"{fieldname}[{r}]", "must be a non-empty list of numbers")
        rows.append([_number(v, f"{fieldname}[{r}]") for v in row])
    if len({len(r) for r in rows}) != 1:
        _fail(fieldname, "rows must have equal length")
    return rows


def _edges(value, fieldname, nodes) -> list:
    if isinstance(value, str):
        try:
            raw = parse_edge_list(value)
        except ConsensusLabError as exc:
            _fail(fieldname, str(exc))
    elif isinstance(value, list):
        raw = []
        for k, e in enumerate(value):
            if not (isinstance(e, list) and len(e) == 2):
                _fail(f"{fieldname}[{k}]", "edge must be a pair [i, j]")
            raw.append((_integer(e[0], f"{fieldname}[{k}]"), _integer(e[1], f"{fieldname}[{k}]")))
    else:
        _fail(fieldname, "must be a list of [i, j] pairs or edge-list text")
    try:
        g = CommGraph.from_edges(nodes, raw, one_based=True)
    except ConsensusLabError as exc:
        _fail(fieldname, str(exc))
    return [(i + 1, j + 1) for i, j in g.edges]


def _pair_name(key: str, fieldname: str):
    for sep in ("-", ",", " "):
        if sep in key.strip():
            a, b = key.strip().split(sep, 1)
            try:
                return int(a), int(b)
            except ValueError:
                break
    _fail(fieldname, f"pair key {key!r} must look like 'i-j'")


def _edge_map(value, fieldname, nodes, kind):
    """Scalar, {"i-j": v} map or N x N matrix -> scalar or normalized {"i-j": v}."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return _number(value, fieldname)
    out = {}
    if isinstance(value, dict):
        for key, val in value.items():
            i, j = _pair_name(key, fieldname)
            if i == j:
                _fail(fieldname, f"self pair {key!r}")
            if not (1 <= i <= nodes and 1 <= j <= nodes):
                _fail(fieldname, f"pair {key!r} out of range")
            val = _number(val, f"{fieldname}.{key}")
            norm = f"{min(i, j)}-{max(i, j)}"
            if norm in out and out[norm] != val:
                _fail(fieldname, "must be symmetric")
            out[norm] = val
    elif isinstance(value, list):
        m = _matrix(value, fieldname)
        if len(m) != nodes or len(m[0]) != nodes:
            _fail(fieldname, f"matrix must be {nodes}x{nodes}")
        for i in range(nodes):
            for j in range(i + 1, nodes):
                if m[i][j] != m[j][i]:
                    _fail(fieldname, "must be symmetric")
                if m[i][j] != 0.0:
                    out[f"{i + 1}-{j + 1}"] = m[i][j]
    else:
        _fail(fieldname, f"{kind} must be a number, pair map or matrix")
    return dict(sorted(out.items(), key=lambda kv: tuple(int(t) for t in kv[0].split("-"))))


def _node_list(value, fieldname, nodes):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return _number(value, fieldname)
    if not isinstance(value, list) or len(value) != nodes:
        _fail(fieldname, f"must be a number or a list of {nodes} numbers")
    return [_number(v, f"{fieldname}[{k}]") for k, v in enumerate(value)]


def _initial_entry(value, fieldname, nodes, n):
    if value == "random":
        return "random"
    if isinstance(value, dict):
        if set(value) != {"random"} or not isinstance(value["random"], dict):
            _fail(fieldname, 'expected {"random": {"seed": s}}')
        return {"random": {"seed": _integer(value["random"].get("seed"), f"{fieldname}.random.seed")}}
    m = _matrix(value, fieldname)
    if len(m) != nodes or len(m[0]) != n:
        _fail(fieldname, f"must be {nodes}x{n}")
    return m


def _section(doc, key, required=True):
    if key not in doc:
        if required:
            _fail(key, "missing")
        return None
    val = doc[key]
    if not isinstance(val, dict):
        _fail(key, "must be an object")
    return val


def _unknown(section: dict, allowed, prefix):
    for key in section:
        if key not in allowed:
            _fail(f"{prefix}{key}", "unknown field")


# ---------------------------------------------------------------------------


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a JSON config (or a run manifest) into a RunConfig."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.lineno, exc.msg) from None
    if not isinstance(doc, dict):
        raise ConfigSyntaxError(1, "top level must be a JSON object")
    if "manifest_version" in doc:
        if not isinstance(doc.get("config"), dict):
            _fail("config", "manifest has no config echo")
        doc = doc["config"]
    return config_from_dict(doc)


def config_from_dict(doc: dict) -> RunConfig:
    _unknown(doc, {"version", "system", "protocol", "graph", "gains", "sim", "initial", "output"}, "")
    version = _integer(doc.get("version", CONFIG_VERSION), "version")
    if version != CONFIG_VERSION:
        _fail("version", f"unsupported version {version}")

    system = _section(doc, "system")
    _unknown(system, {"A", "B", "C"}, "system.")
    mats = {k: _matrix(system.get(k), f"system.{k}") for k in ("A", "B", "C")}
    try:
        sys_ = LinearSystem(np.array(mats["A"]), np.array(mats["B"]), np.array(mats["C"]))
    except ConsensusLabError as exc:
        _fail("system", str(exc))
    n = sys_.n

    graph = _section(doc, "graph")
    _unknown(graph, {"nodes", "edges", "leader", "switching"}, "graph.")
    nodes = _integer(graph.get("nodes"), "graph.nodes")
    if nodes < 1:
        _fail("graph.nodes", "must be >= 1")
    edges = _edges(graph.get("edges", []), "graph.edges", nodes)
    leader = graph.get("leader")
    if leader is not None:
        leader = _integer(leader, "graph.leader")
        if not 1 <= leader <= nodes:
            _fail("graph.leader", f"must be in 1..{nodes}")
    switching = None
    if graph.get("switching") is not None:
        sw = graph["switching"]
        if not isinstance(sw, dict):
            _fail("graph.switching", "must be an object")
        _unknown(sw, {"graphs", "dwell", "mode", "seed"}, "graph.switching.")
        glist = sw.get("graphs")
        if not isinstance(glist, list) or not glist:
            _fail("graph.switching.graphs", "must be a non-empty list of edge lists")
        graphs = [_edges(e, f"graph.switching.graphs[{k}]", nodes) for k, e in enumerate(glist)]
        dwell = _number(sw.get("dwell"), "graph.switching.dwell")
        if dwell <= 0:
            _fail("graph.switching.dwell", "must be positive")
        mode = sw.get("mode", "cyclic")
        if mode not in ("cyclic", "random"):
            _fail("graph.switching.mode", "must be 'cyclic' or 'random'")
        seed = sw.get("seed")
        if seed is not None:
            seed = _integer(seed, "graph.switching.seed")
        switching = SwitchingConfig(graphs, dwell, mode, seed)

    proto = _section(doc, "protocol")
    _unknown(proto, {"variant", "kappa", "tau", "initial_weights"}, "protocol.")
    try:
        variant = Variant(proto.get("variant"))
    except ValueError:
        _fail("protocol.variant", f"must be one of {[v.value for v in Variant]}")
    if variant.edge_weights:
        if "tau" in proto:
            _fail("protocol.tau", f"not used by {variant.value}; use kappa")
        adaptation = _edge_map(proto.get("kappa", 1.0), "kappa", nodes, "kappa")
        weights = proto.get("initial_weights", 0.0)
        weights = _edge_map(weights, "protocol.initial_weights", nodes, "initial_weights")
    else:
        if "kappa" in proto:
            _fail("protocol.kappa", f"not used by {variant.value}; use tau")
        adaptation = _node_list(proto.get("tau", 1.0), "tau", nodes)
        weights = _node_list(proto.get("initial_weights", 0.0), "protocol.initial_weights", nodes)

    gains = _section(doc, "gains", required=False)
    f_override = None
    if gains is not None:
        _unknown(gains, {"F"}, "gains.")
        if gains.get("F") is not None:
            f_override = _matrix(gains["F"], "gains.F")
            if len(f_override) != sys_.p or len(f_override[0]) != n:
                _fail("gains.F", f"must be {sys_.p}x{n}")

    simdoc = _section(doc, "sim", required=False) or {}
    _unknown(simdoc, {"step", "horizon", "record_every", "convergence_tol", "seed"}, "sim.")
    defaults = SimConfig()
    try:
        sim = SimConfig(
            step=_number(simdoc.get("step", defaults.step), "sim.step"),
            horizon=_number(simdoc.get("horizon", defaults.horizon), "sim.horizon"),
            record_every=_integer(simdoc.get("record_every", defaults.record_every), "sim.record_every"),
            convergence_tol=_number(simdoc.get("convergence_tol", defaults.convergence_tol),
                                    "sim.convergence_tol"),
            seed=_integer(simdoc.get("seed", defaults.seed), "sim.seed"),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigValidationError):
            raise
        _fail("sim", str(exc))

    init = _section(doc, "initial", required=False) or {}
    _unknown(init, {"x", "v"}, "initial.")
    initial = {k: _initial_entry(init.get(k, "random"), f"initial.{k}", nodes, n) for k in ("x", "v")}

    output = doc.get("output")
    if output is not None and not isinstance(output, str):
        _fail("output", "must be a string path")

    cfg = RunConfig(
        system=mats,
        protocol=ProtocolConfig(variant.value, adaptation, weights),
        graph=GraphConfig(nodes, edges, leader, switching),
        sim=sim,
        f_override=f_override,
        initial=initial,
        output=output,
        version=version,
    )
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: RunConfig):
    variant = cfg.variant
    g = cfg.graph
    if variant is Variant.SWITCHING_EDGE:
        if g.switching is None:
            _fail("graph.switching", "required for switching-edge")
        try:
            steps_per_dwell(switching_signal(cfg), cfg.sim.step)
        except ConsensusLabError as exc:
            _fail("graph.switching.dwell", str(exc))
    else:
        if g.switching is not None:
            _fail("graph.switching", f"only valid for switching-edge, not {variant.value}")
        if not g.edges and g.nodes > 1:
            _fail("graph.edges", "empty edge set")
    if variant.has_leader and g.leader is None:
        _fail("graph.leader", f"required for {variant.value}")
    if not variant.has_leader and g.leader is not None:
        _fail("graph.leader", f"not used by {variant.value}")
    # build the protocol structure once to surface graph/gain problems early
    try:
        build_spec(cfg, gains=None)
    except ConsensusLabError as exc:
        _fail(_field_for(exc), str(exc))


def _field_for(exc) -> str:
    name = type(exc).__name__
    return {
        "InactiveEdgeWeight": "protocol",
        "AssumptionViolated": "graph",
        "Disconnected": "graph",
        "NoLeader": "graph.leader",
        "InvalidProtocol": "protocol",
        "DimensionMismatch": "protocol",
    }.get(name, "config")


# ---------------------------------------------------------------------------
# building runtime objects


def linear_system(cfg: RunConfig) -> LinearSystem:
    return LinearSystem(np.array(cfg.system["A"]), np.array(cfg.system["B"]),
                        np.array(cfg.system["C"]))


def _graph(edges, nodes, leader=None) -> CommGraph:
    return CommGraph.from_edges(nodes, edges, leader=leader, one_based=True)


def switching_signal(cfg: RunConfig) -> SwitchingSignal:
    sw = cfg.graph.switching
    seed = cfg.sim.seed if sw.seed is None else sw.seed
    graphs = tuple(_graph(e, cfg.graph.nodes) for e in sw.graphs)
    return SwitchingSignal(graphs, sw.dwell, sw.mode, seed)


def graph_source(cfg: RunConfig):
    if cfg.variant is Variant.SWITCHING_EDGE:
        return switching_signal(cfg)
    return _graph(cfg.graph.edges, cfg.graph.nodes, cfg.graph.leader)


def _pairs_zero_based(mapping: dict) -> dict:
    out = {}
    for key, val in mapping.items():
        i, j = (int(t) for t in key.split("-"))
        out[(i - 1, j - 1)] = val
    return out


def _adaptation(value):
    return _pairs_zero_based(value) if isinstance(value, dict) else value


class _PlaceholderGains:
    """Stand-in gains with correct shapes, used for structural validation only."""

    def __init__(self, sys_):
        self.F = np.zeros((sys_.p, sys_.n))
        self.L = np.zeros((sys_.n, sys_.q))


def build_spec(cfg: RunConfig, gains) -> ProtocolSpec:
    sys_ = linear_system(cfg)
    if gains is None:
        gains = _PlaceholderGains(sys_)
    spec = ProtocolSpec(cfg.variant, sys_, gains, graph_source(cfg),
                        _adaptation(cfg.protocol.adaptation))
    # resolves initial weights against the pair structure
    initial_state(spec, np.zeros((cfg.graph.nodes, sys_.n)), None,
                  _adaptation(cfg.protocol.initial_weights))
    return spec


def initial_arrays(cfg: RunConfig):
    """Resolve ``cfg.initial`` into (x0, v0) arrays."""
    N, n = cfg.graph.nodes, len(cfg.system["A"])
    shared = np.random.default_rng(cfg.sim.seed)
    out = []
    for key in ("x", "v"):
        entry = cfg.initial[key]
        if entry == "random":
            out.append(shared.uniform(-1.0, 1.0, (N, n)))
        elif isinstance(entry, dict):
            out.append(np.random.default_rng(entry["random"]["seed"]).uniform(-1.0, 1.0, (N, n)))
        else:
            out.append(np.array(entry, dtype=float))
    return out[0], out[1]


def build_initial_state(cfg: RunConfig, spec: ProtocolSpec):
    x0, v0 = initial_arrays(cfg)
    return initial_state(spec, x0, v0, _adaptation(cfg.protocol.initial_weights))


# ---------------------------------------------------------------------------
# serialization


def config_to_dict(cfg: RunConfig) -> dict:
    variant = cfg.variant
    g = cfg.graph
    graph = {"nodes": g.nodes, "edges": [list(e) for e in g.edges], "leader": g.leader}
    if g.switching is not None:
        sw = g.switching
        graph["switching"] = {
            "graphs": [[list(e) for e in edges] for edges in sw.graphs],
            "dwell": sw.dwell,
            "mode": sw.mode,
            "seed": sw.seed,
        }
    protocol = {"variant": variant.value}
    protocol["kappa" if variant.edge_weights else "tau"] = cfg.protocol.adaptation
    protocol["initial_weights"] = cfg.protocol.initial_weights
    doc = {
        "version": cfg.version,
        "system": {k: cfg.system[k] for k in ("A", "B", "C")},
        "protocol": protocol,
        "graph": graph,
        "sim": {
            "step": cfg.sim.step,
            "horizon": cfg.sim.horizon,
            "record_every": cfg.sim.record_every,
            "convergence_tol": cfg.sim.convergence_tol,
            "seed": cfg.sim.seed,
        },
        "initial": cfg.initial,
    }
    if cfg.f_override is not None:
        doc["gains"] = {"F": cfg.f_override}
    if cfg.output is not None:
        doc["output"] = cfg.output
    return doc


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


# ---------------------------------------------------------------------------
# presets

PRESETS = ("sec6-switching-edge", "sec6-fixed-node", "leader-edge-demo", "leader-node-demo")


def _triple_integrator_system() -> dict:
    return {
        "A": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]],
        "B": [[0.0], [0.0], [1.0]],
        "C": [[1.0, 0.0, 0.0]],
    }


def preset(name: str, seed: Optional[int] = None) -> RunConfig:
    """Built-in configurations on the third-order integrator network (N = 6)."""
    sim = SimConfig(step=1e-3, horizon=30.0, record_every=100, convergence_tol=1e-3,
                    seed=42 if seed is None else int(seed))
    edges1 = [tuple(e) for e in G1_EDGES]
    if name == "sec6-switching-edge":
        protocol = ProtocolConfig("switching-edge", 1.0, 0.0)
        graph = GraphConfig(6, [], None, SwitchingConfig(
            [edges1, [tuple(e) for e in G2_EDGES]], 0.1, "random", None))
    elif name == "sec6-fixed-node":
        protocol = ProtocolConfig("node-adaptive", 1.0, 0.0)
        graph = GraphConfig(6, edges1)
    elif name in ("leader-edge-demo", "leader-node-demo"):
        variant = "leader-edge" if name == "leader-edge-demo" else "leader-node"
        protocol = ProtocolConfig(variant, 1.0, 0.0)
        graph = GraphConfig(6, [tuple(e) for e in LEADER_DEMO_EDGES], 1)
    else:
        raise UnknownPreset(name)
    cfg = RunConfig(
        system=_triple_integrator_system(),
        protocol=protocol,
        graph=graph,
        sim=sim,
        f_override=[list(r) for r in SEC6_F],
        initial={"x": "random", "v": "random"},
        output=None,
    )
    # normalize exactly as a parsed document would be
    return config_from_dict(config_to_dict(cfg))


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, sim=replace(cfg.sim, seed=int(seed)))
