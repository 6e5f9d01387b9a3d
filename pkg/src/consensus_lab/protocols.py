"""Closed-loop right-hand sides for the adaptive consensus protocols.

All variants share one vectorized core. With ``w_i = C v_i - y_i`` every
relative term of the protocols is a difference ``w_i - w_j``, and the
Gamma quadratic form reduces to ``|w_i - w_j|^2``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np

from .errors import (
    AssumptionViolated,
    DimensionMismatch,
    Disconnected,
    InactiveEdgeWeight,
    InvalidProtocol,
    NoLeader,
)
from .graph import CommGraph, SwitchingSignal, check_assumption1, is_connected, laplacian, signal_at
from .synthesis import GainSet
from .system import LinearSystem


class Variant(str, enum.Enum):
    EDGE_ADAPTIVE = "edge-adaptive"
    NODE_ADAPTIVE = "node-adaptive"
    LEADER_EDGE = "leader-edge"
    LEADER_NODE = "leader-node"
    SWITCHING_EDGE = "switching-edge"

    @property
    def edge_weights(self) -> bool:
        return self in (Variant.EDGE_ADAPTIVE, Variant.LEADER_EDGE, Variant.SWITCHING_EDGE)

    @property
    def has_leader(self) -> bool:
        return self in (Variant.LEADER_EDGE, Variant.LEADER_NODE)


GraphSource = Union[CommGraph, SwitchingSignal]


def _graphs(source: GraphSource) -> tuple:
    return source.graphs if isinstance(source, SwitchingSignal) else (source,)


def union_pairs(source: GraphSource) -> tuple:
    pairs = set()
    for g in _graphs(source):
        pairs.update(g.edges)
    return tuple(sorted(pairs))


def _pair_key(pair) -> tuple:
    i, j = (int(k) for k in pair)
    return (min(i, j), max(i, j))


def _edge_values(name, values, pairs, default=None) -> np.ndarray:
    """Resolve a scalar, ``{(i, j): value}`` map or aligned array onto ``pairs``."""
    m = len(pairs)
    if values is None:
        values = default
    if np.isscalar(values):
        return np.full(m, float(values))
    if isinstance(values, dict):
        out = np.full(m, np.nan if default is None else float(default))
        index = {p: k for k, p in enumerate(pairs)}
        for pair, val in values.items():
            key = _pair_key(pair)
            if key not in index:
                raise InactiveEdgeWeight(
                    f"{name} given for pair ({key[0] + 1}, {key[1] + 1}) which is never adjacent")
            out[index[key]] = float(val)
        if np.isnan(out).any():
            missing = [pairs[k] for k in np.flatnonzero(np.isnan(out))]
            raise InvalidProtocol(f"{name} missing for pairs {[(i + 1, j + 1) for i, j in missing]}")
        return out
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (m,):
        raise DimensionMismatch(f"{name} needs {m} entries, got {arr.size}")
    return arr.copy()


def _node_values(name, values, n) -> np.ndarray:
    if np.isscalar(values):
        return np.full(n, float(values))
    arr = np.asarray(values, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name} needs {n} entries, got {arr.size}")
    return arr.copy()


@dataclass(frozen=True, eq=False)
class ProtocolSpec:
    """A fully specified closed loop: dynamics, gains, graph(s) and adaptation gains.

    ``kappa`` is aligned with :attr:`pairs` for edge variants (one gain per
    unordered pair, so symmetry holds by construction) and has one entry per
    node for node variants.
    """

    variant: Variant
    system: LinearSystem
    gains: GainSet
    graph_source: GraphSource
    kappa: np.ndarray = field(default=None)

    def __post_init__(self):
        variant = Variant(self.variant)
        object.__setattr__(self, "variant", variant)
        src = self.graph_source
        if variant is Variant.SWITCHING_EDGE:
            if not isinstance(src, SwitchingSignal):
                raise InvalidProtocol("switching-edge needs a SwitchingSignal")
        elif not isinstance(src, CommGraph):
            raise InvalidProtocol(f"{variant.value} needs a fixed CommGraph")
        if variant.has_leader:
            if src.leader is None:
                raise NoLeader(f"{variant.value} needs a leader")
            if not check_assumption1(src):
                raise AssumptionViolated("graph has no spanning tree rooted at the leader")
        elif isinstance(src, CommGraph) and not is_connected(src):
            raise Disconnected("communication graph must be connected")

        if variant.edge_weights:
            kappa = _edge_values("kappa", 1.0 if self.kappa is None else self.kappa, self.pairs)
        else:
            kappa = _node_values("tau", 1.0 if self.kappa is None else self.kappa, self.node_count)
        if not (kappa > 0).all() or not np.isfinite(kappa).all():
            raise InvalidProtocol("adaptation gains must be positive and finite")
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)

        g = self.gains
        n, p, q = self.system.n, self.system.p, self.system.q
        if g.F.shape != (p, n) or g.L.shape != (n, q):
            raise DimensionMismatch("gains do not match the system dimensions")

    @property
    def node_count(self) -> int:
        return self.graph_source.node_count

    @property
    def leader(self):
        return self.graph_source.leader if self.variant.has_leader else None

    @cached_property
    def pairs(self) -> tuple:
        return union_pairs(self.graph_source) if self.variant.edge_weights else ()

    @property
    def weight_count(self) -> int:
        return len(self.pairs) if self.variant.edge_weights else self.node_count

    @cached_property
    def dynamics(self) -> "Dynamics":
        return Dynamics(self)


@dataclass(eq=False)
class NetworkState:
    """Agent states ``x`` (N, n), protocol states ``v`` (N, n) and adaptive weights.

    ``edge_weights`` is aligned with ``pairs`` (unordered, ``i < j``);
    ``node_weights`` has one entry per agent. Only the array that belongs to
    the protocol variant is non-empty.
    """

    x: np.ndarray
    v: np.ndarray
    edge_weights: np.ndarray
    node_weights: np.ndarray
    pairs: tuple = ()

    def edge_weight(self, i: int, j: int) -> float:
        return float(self.edge_weights[self.pairs.index(_pair_key((i, j)))])

    def copy(self) -> "NetworkState":
        return NetworkState(self.x.copy(), self.v.copy(), self.edge_weights.copy(),
                            self.node_weights.copy(), self.pairs)


def initial_state(spec: ProtocolSpec, x, v=None, weights=0.0) -> NetworkState:
    """Build a state for ``spec``; ``weights`` is a scalar, pair map or array."""
    n, N = spec.system.n, spec.node_count
    x = np.array(x, dtype=float).reshape(N, n)
    v = np.zeros((N, n)) if v is None else np.array(v, dtype=float).reshape(N, n)
    if spec.variant.edge_weights:
        c = _edge_values("initial weights", weights, spec.pairs, default=0.0)
        d = np.zeros(0)
    else:
        c = np.zeros(0)
        d = _node_values("initial weights", weights, N)
    s = NetworkState(x, v, c, d, spec.pairs)
    for arr in (s.x, s.v, s.edge_weights, s.node_weights):
        if not np.isfinite(arr).all():
            raise InvalidProtocol("initial state has non-finite entries")
    return s


class Dynamics:
    """Flat-vector form of a :class:`ProtocolSpec`, used by the integrator.

    Layout: ``[x.ravel(), v.ravel(), weights]``.
    """

    def __init__(self, spec: ProtocolSpec):
        self.spec = spec
        sys, g = spec.system, spec.gains
        self.N = N = spec.node_count
        self.n = n = sys.n
        self.edge = spec.variant.edge_weights
        self.leader = spec.leader
        self.A = np.array(sys.A)
        self.AT = self.A.T.copy()
        self.BT = np.array(sys.B).T.copy()
        self.CT = np.array(sys.C).T.copy()
        self.FT = np.array(g.F).T.copy()
        self.LT = np.array(g.L).T.copy()
        self.AclT = (sys.A + sys.B @ g.F).T.copy()
        self.kappa = np.array(spec.kappa)
        self.graphs = _graphs(spec.graph_source)
        self.size = 2 * N * n + spec.weight_count

        if self.edge:
            pairs = spec.pairs
            m = len(pairs)
            self.I = np.array([p[0] for p in pairs], dtype=np.intp)
            self.J = np.array([p[1] for p in pairs], dtype=np.intp)
            inc = np.zeros((N, m))
            inc[self.I, np.arange(m)] = 1.0
            inc[self.J, np.arange(m)] = -1.0
            if self.leader is not None:
                inc[self.leader, :] = 0.0
            self.incidence = inc
            index = {p: k for k, p in enumerate(pairs)}
            masks = np.zeros((len(self.graphs), m))
            for gi, gr in enumerate(self.graphs):
                for e in gr.edges:
                    masks[gi, index[e]] = 1.0
            self.masks = masks
        else:
            laps = []
            for gr in self.graphs:
                lap = laplacian(gr)
                if self.leader is not None:
                    lap[self.leader, :] = 0.0
                laps.append(lap)
            self.laplacians = laps

    # -- packing -----------------------------------------------------------
    def pack(self, s: NetworkState) -> np.ndarray:
        w = s.edge_weights if self.edge else s.node_weights
        y = np.concatenate([s.x.reshape(-1), s.v.reshape(-1), w])
        if y.size != self.size:
            raise DimensionMismatch(f"state has {y.size} entries, expected {self.size}")
        return y

    def unpack(self, y: np.ndarray) -> NetworkState:
        Nn = self.N * self.n
        x = y[:Nn].reshape(self.N, self.n).copy()
        v = y[Nn:2 * Nn].reshape(self.N, self.n).copy()
        w = y[2 * Nn:].copy()
        if self.edge:
            return NetworkState(x, v, w, np.zeros(0), self.spec.pairs)
        return NetworkState(x, v, np.zeros(0), w, ())

    # -- right-hand side ---------------------------------------------------
    def derivative(self, y: np.ndarray, graph_index: int = 0) -> np.ndarray:
        N, n = self.N, self.n
        Nn = N * n
        x = y[:Nn].reshape(N, n)
        v = y[Nn:2 * Nn].reshape(N, n)
        wts = y[2 * Nn:]
        w = (v - x) @ self.CT

        if self.edge:
            mask = self.masks[graph_index]
            r = w[self.I] - w[self.J]
            coupling = self.incidence @ ((wts * mask)[:, None] * r)
            wdot = self.kappa * mask * np.einsum("ij,ij->i", r, r)
            vdot = v @ self.AclT + coupling @ self.LT
        else:
            s = self.laplacians[graph_index] @ w
            wdot = self.kappa * np.einsum("ij,ij->i", s, s)
            vdot = v @ self.AclT + wts[:, None] * (s @ self.LT)

        u = v @ self.FT
        xdot = x @ self.AT + u @ self.BT
        if self.leader is not None:
            # the leader is uncontrolled: u_1 = 0
            xdot[self.leader] = self.A @ x[self.leader]
        out = np.empty(self.size)
        out[:Nn] = xdot.reshape(-1)
        out[Nn:2 * Nn] = vdot.reshape(-1)
        out[2 * Nn:] = wdot
        return out

    def graph_index_at(self, t: float) -> int:
        src = self.spec.graph_source
        return signal_at(src, t) if isinstance(src, SwitchingSignal) else 0


def plant_rhs(sys: LinearSystem, x_i, u_i) -> np.ndarray:
    x_i = np.asarray(x_i, dtype=float).reshape(-1)
    u_i = np.asarray(u_i, dtype=float).reshape(-1)
    if x_i.size != sys.n or u_i.size != sys.p:
        raise DimensionMismatch(f"expected x of size {sys.n} and u of size {sys.p}")
    return sys.A @ x_i + sys.B @ u_i


def _rhs(spec: ProtocolSpec, s: NetworkState, t: float, allowed) -> NetworkState:
    if spec.variant not in allowed:
        raise InvalidProtocol(f"variant {spec.variant.value} not handled here")
    dyn = spec.dynamics
    return dyn.unpack(dyn.derivative(dyn.pack(s), dyn.graph_index_at(t)))


def edge_adaptive_rhs(spec: ProtocolSpec, s: NetworkState, t: float = 0.0) -> NetworkState:
    """Edge-weight protocol on a fixed graph or on the graph active at ``t``."""
    return _rhs(spec, s, t, (Variant.EDGE_ADAPTIVE, Variant.SWITCHING_EDGE))


def node_adaptive_rhs(spec: ProtocolSpec, s: NetworkState, t: float = 0.0) -> NetworkState:
    """Node-weight protocol: the neighbourhood sum is formed before squaring."""
    return _rhs(spec, s, t, (Variant.NODE_ADAPTIVE,))


def leader_edge_rhs(spec: ProtocolSpec, s: NetworkState, t: float = 0.0) -> NetworkState:
    return _rhs(spec, s, t, (Variant.LEADER_EDGE,))


def leader_node_rhs(spec: ProtocolSpec, s: NetworkState, t: float = 0.0) -> NetworkState:
    return _rhs(spec, s, t, (Variant.LEADER_NODE,))


def network_rhs(spec: ProtocolSpec, s: NetworkState, t: float = 0.0) -> NetworkState:
    return _rhs(spec, s, t, tuple(Variant))


def consensus_error(s: NetworkState, leader=None):
    """Per-agent errors of ``z_i = [x_i; v_i]`` and their largest 2-norm.

    Leaderless: deviation from the network mean. With a leader: deviation
    from the leader's ``z``.
    """
    z = np.concatenate([s.x, s.v], axis=1)
    ref = z.mean(axis=0) if leader is None else z[leader]
    e = z - ref
    return e, float(np.max(np.linalg.norm(e, axis=1))) if len(e) else 0.0
