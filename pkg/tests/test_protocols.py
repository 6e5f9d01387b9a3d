import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from consensus_lab import graph as G
from consensus_lab.errors import (
    AssumptionViolated,
    Disconnected,
    DimensionMismatch,
    InactiveEdgeWeight,
    InvalidProtocol,
    NoLeader,
)
from consensus_lab.protocols import (
    NetworkState,
    ProtocolSpec,
    Variant,
    consensus_error,
    edge_adaptive_rhs,
    initial_state,
    leader_edge_rhs,
    leader_node_rhs,
    network_rhs,
    node_adaptive_rhs,
    plant_rhs,
)
from consensus_lab.synthesis import GainSet, design_gains, gamma_matrix
from consensus_lab.system import LinearSystem, triple_integrator

F6 = [[-3.0, -6.5, -4.5]]
TRIPLE = triple_integrator()
GAINS = design_gains(TRIPLE, F6)
SCALAR = LinearSystem([[0.0]], [[1.0]], [[1.0]])
SCALAR_GAINS = design_gains(SCALAR, [[-1.0]])


def unit_gains(sys_):
    n, p, q = sys_.n, sys_.p, sys_.q
    return GainSet(np.zeros((p, n)), np.zeros((n, q)), gamma_matrix(q), np.eye(n), np.eye(n))


def random_state(spec, seed, weights=None):
    rng = np.random.default_rng(seed)
    N, n = spec.node_count, spec.system.n
    if weights is None:
        weights = rng.uniform(0, 2, spec.weight_count)
    return initial_state(spec, rng.uniform(-1, 1, (N, n)), rng.uniform(-1, 1, (N, n)), weights)


def explicit_forms(spec, s):
    """Reference evaluation with the explicit 2q x 2q Gamma matrix."""
    C = spec.system.C
    Gam = gamma_matrix(spec.system.q)
    N = spec.node_count
    y = s.x @ C.T
    cv = s.v @ C.T

    def form(i, j):
        z = np.concatenate([y[i] - y[j], C @ (s.v[i] - s.v[j])])
        return float(z @ Gam @ z)

    if spec.variant.edge_weights:
        return np.array([spec.kappa[k] * form(i, j) for k, (i, j) in enumerate(spec.pairs)])
    A = G.laplacian(spec.graph_source).astype(float)
    adj = np.diag(np.diag(A)) - A
    out = []
    for i in range(N):
        dy = sum(adj[i, j] * (y[i] - y[j]) for j in range(N))
        dcv = sum(adj[i, j] * (cv[i] - cv[j]) for j in range(N))
        z = np.concatenate([np.atleast_1d(dy), np.atleast_1d(dcv)])
        out.append(spec.kappa[i] * float(z @ Gam @ z))
    return np.array(out)


def explicit_vdot(spec, s, weights):
    sysm, g = spec.system, spec.gains
    acl = sysm.A + sysm.B @ g.F
    adj = np.diag(np.diag(G.laplacian(spec.graph_source))) - G.laplacian(spec.graph_source)
    out = np.zeros_like(s.v)
    for i in range(spec.node_count):
        acc = np.zeros(sysm.q)
        for j in range(spec.node_count):
            if adj[i, j]:
                w = weights(i, j)
                acc += w * (sysm.C @ (s.v[i] - s.v[j]) - sysm.C @ (s.x[i] - s.x[j]))
        out[i] = acl @ s.v[i] + g.L @ acc
    return out


# --- plant ------------------------------------------------------------------

def test_plant_rhs_examples():
    assert np.array_equal(plant_rhs(TRIPLE, [0, 0, 0], [0]), [0, 0, 0])
    assert np.array_equal(plant_rhs(TRIPLE, [1, 0, 0], [0]), [0, 0, 0])
    assert np.array_equal(plant_rhs(TRIPLE, [0, 1, 2], [3]), [1, 2, 3])
    with pytest.raises(DimensionMismatch):
        plant_rhs(TRIPLE, [0, 0], [0])


# --- spec validation ----------------------------------------------------------

def test_spec_validation():
    with pytest.raises(Disconnected):
        ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.CommGraph.from_edges(4, [(0, 1), (2, 3)]))
    with pytest.raises(NoLeader):
        ProtocolSpec(Variant.LEADER_EDGE, TRIPLE, GAINS, G.ring_graph(4))
    with pytest.raises(AssumptionViolated):
        ProtocolSpec(Variant.LEADER_NODE, TRIPLE, GAINS,
                     G.CommGraph.from_edges(3, [(1, 2)], leader=0))
    with pytest.raises(InvalidProtocol):
        ProtocolSpec(Variant.SWITCHING_EDGE, TRIPLE, GAINS, G.ring_graph(4))
    with pytest.raises(InvalidProtocol):
        ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(4), kappa=-1.0)
    with pytest.raises(InactiveEdgeWeight):
        ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.path_graph(3), kappa={(0, 2): 1.0, (0, 1): 1.0})


def test_kappa_map_is_symmetric_by_key():
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.path_graph(3),
                        kappa={(1, 0): 2.0, (1, 2): 3.0})
    assert list(spec.kappa) == [2.0, 3.0]


# --- edge protocol ------------------------------------------------------------

def test_edge_consensus_state_is_equilibrium():
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(5))
    x = np.tile([0.3, -0.2, 0.7], (5, 1))
    s = initial_state(spec, x, None, 0.5)
    d = edge_adaptive_rhs(spec, s)
    assert np.all(d.v == 0) and np.all(d.edge_weights == 0)
    assert np.allclose(d.x, x @ TRIPLE.A.T)


def test_edge_weight_rate_unit_example():
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, SCALAR, unit_gains(SCALAR), G.path_graph(2), kappa=1.0)
    s = initial_state(spec, [[1.0], [0.0]], [[0.4], [0.4]], 0.0)
    assert edge_adaptive_rhs(spec, s).edge_weights[0] == 1.0


@pytest.mark.parametrize("seed", range(10))
def test_edge_reduced_form_matches_explicit_gamma(seed):
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, SCALAR, SCALAR_GAINS, G.path_graph(2))
    s = random_state(spec, seed)
    d = edge_adaptive_rhs(spec, s)
    assert np.allclose(d.edge_weights, explicit_forms(spec, s), rtol=0, atol=1e-12)

    big = ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.CommGraph.from_edges(
        6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (0, 3)]),
        kappa=np.arange(1.0, 8.0))
    s = random_state(big, seed)
    d = edge_adaptive_rhs(big, s)
    assert np.allclose(d.edge_weights, explicit_forms(big, s), rtol=0, atol=1e-12)
    ref = explicit_vdot(big, s, lambda i, j: s.edge_weight(i, j))
    assert np.allclose(d.v, ref, atol=1e-12)
    assert np.allclose(d.x, s.x @ TRIPLE.A.T + s.v @ (TRIPLE.B @ GAINS.F).T, atol=1e-14)


# --- node protocol ------------------------------------------------------------

def test_node_star_cancellation():
    star = G.star_graph(3, center=0)
    spec = ProtocolSpec(Variant.NODE_ADAPTIVE, SCALAR, unit_gains(SCALAR), star, kappa=2.0)
    s = initial_state(spec, [[0.0], [-1.0], [1.0]], None, 0.0)
    d = node_adaptive_rhs(spec, s)
    assert d.node_weights[0] == 0.0
    assert np.array_equal(d.node_weights[1:], [2.0, 2.0])


@pytest.mark.parametrize("seed", range(10))
def test_node_reduced_form_matches_explicit_gamma(seed):
    spec = ProtocolSpec(Variant.NODE_ADAPTIVE, TRIPLE, GAINS, G.path_graph(3), kappa=1.0)
    s = random_state(spec, seed)
    d = node_adaptive_rhs(spec, s)
    assert np.allclose(d.node_weights, explicit_forms(spec, s), atol=1e-12)
    ref = explicit_vdot(spec, s, lambda i, j: s.node_weights[i])
    assert np.allclose(d.v, ref, atol=1e-12)


def test_node_consensus_state_is_equilibrium():
    spec = ProtocolSpec(Variant.NODE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(4))
    s = initial_state(spec, np.ones((4, 3)), None, 1.0)
    assert np.all(node_adaptive_rhs(spec, s).node_weights == 0)


# --- invariants ---------------------------------------------------------------

SPECS = {
    "edge": ProtocolSpec(Variant.EDGE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(6)),
    "node": ProtocolSpec(Variant.NODE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(6), kappa=np.arange(1.0, 7.0)),
    "leader-edge": ProtocolSpec(Variant.LEADER_EDGE, TRIPLE, GAINS, G.ring_graph(6).with_leader(0)),
    "leader-node": ProtocolSpec(Variant.LEADER_NODE, TRIPLE, GAINS, G.ring_graph(6).with_leader(2)),
    "switching": ProtocolSpec(Variant.SWITCHING_EDGE, TRIPLE, GAINS, G.SwitchingSignal(
        (G.ring_graph(6), G.complete_graph(6)), 0.1, "cyclic")),
}


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(sorted(SPECS)), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_weight_derivatives_nonnegative(name, seed, t):
    spec = SPECS[name]
    d = network_rhs(spec, random_state(spec, seed), t)
    w = d.edge_weights if spec.variant.edge_weights else d.node_weights
    assert np.all(w >= 0)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["edge", "node", "switching"]), st.integers(0, 2**32 - 1),
       st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_translation_invariance(name, seed, shift):
    spec = SPECS[name]
    s = random_state(spec, seed)
    moved = s.copy()
    moved.x = s.x + np.array(shift)
    a, b = network_rhs(spec, s), network_rhs(spec, moved)
    assert np.allclose(a.v, b.v, atol=1e-9)
    assert np.allclose(a.edge_weights, b.edge_weights, atol=1e-9)
    assert np.allclose(a.node_weights, b.node_weights, atol=1e-9)
    assert np.allclose(b.x - a.x, (TRIPLE.A @ np.array(shift))[None, :], atol=1e-9)


def test_permutation_equivariance():
    # rotation of the ring is an automorphism
    perm = np.roll(np.arange(6), 1)
    node_spec = ProtocolSpec(Variant.NODE_ADAPTIVE, TRIPLE, GAINS, G.ring_graph(6), kappa=1.0)
    for spec in (SPECS["edge"], node_spec):
        s = random_state(spec, 5)
        d = network_rhs(spec, s)
        p = s.copy()
        p.x, p.v = s.x[perm], s.v[perm]
        if spec.variant.edge_weights:
            p.edge_weights = np.array([s.edge_weight(perm[i], perm[j]) for i, j in spec.pairs])
            dp = network_rhs(spec, p)
            ref = np.array([d.edge_weight(perm[i], perm[j]) for i, j in spec.pairs])
            assert np.allclose(dp.edge_weights, ref, atol=1e-12)
        else:
            p.node_weights = s.node_weights[perm]
            dp = network_rhs(spec, p)
            assert np.allclose(dp.node_weights, d.node_weights[perm], atol=1e-12)
        assert np.allclose(dp.v, d.v[perm], atol=1e-12)
        assert np.allclose(dp.x, d.x[perm], atol=1e-12)


def test_switching_uses_active_graph():
    spec = SPECS["switching"]
    s = random_state(spec, 1)
    d0 = edge_adaptive_rhs(spec, s, 0.05)   # ring
    d1 = edge_adaptive_rhs(spec, s, 0.15)   # complete
    ring = set(G.ring_graph(6).edges)
    for k, pair in enumerate(spec.pairs):
        if pair not in ring:
            assert d0.edge_weights[k] == 0.0
    assert np.count_nonzero(d1.edge_weights) == 15


# --- leader variants ----------------------------------------------------------

def test_leader_synchronized_no_adaptation():
    for name in ("leader-edge", "leader-node"):
        spec = SPECS[name]
        s = initial_state(spec, np.tile([1.0, 2.0, 3.0], (6, 1)), None, 0.3)
        d = network_rhs(spec, s)
        w = d.edge_weights if spec.variant.edge_weights else d.node_weights
        assert np.all(w == 0)


def test_leader_is_uncontrolled():
    for name in ("leader-edge", "leader-node"):
        spec = SPECS[name]
        s = random_state(spec, 3)
        d = network_rhs(spec, s)
        k = spec.leader
        assert np.array_equal(d.x[k], TRIPLE.A @ s.x[k])
        acl = TRIPLE.A + TRIPLE.B @ GAINS.F
        assert np.allclose(d.v[k], acl @ s.v[k], atol=1e-14)


def test_leader_edge_single_follower_reduction():
    # one follower: xi = z_2 - z_1 obeys a two-state error system with one weight
    g = G.CommGraph.from_edges(2, [(0, 1)], leader=0)
    spec = ProtocolSpec(Variant.LEADER_EDGE, SCALAR, SCALAR_GAINS, g, kappa=1.5)
    s = initial_state(spec, [[0.2], [-0.7]], [[0.1], [0.4]], 0.8)
    d = leader_edge_rhs(spec, s)
    A, B, C = SCALAR.A, SCALAR.B, SCALAR.C
    F, L = SCALAR_GAINS.F, SCALAR_GAINS.L
    ex = s.x[1] - s.x[0]
    ev = s.v[1] - s.v[0]
    c = s.edge_weights[0]
    # error dynamics assembled directly
    ex_dot = A @ ex + B @ F @ s.v[1]
    ev_dot = (A + B @ F) @ ev + c * L @ (C @ ev - C @ ex)
    c_dot = 1.5 * float(np.sum((C @ ex - C @ ev) ** 2))
    assert np.allclose(d.x[1] - d.x[0], ex_dot, atol=1e-14)
    assert np.allclose(d.v[1] - d.v[0], ev_dot, atol=1e-14)
    assert d.edge_weights[0] == pytest.approx(c_dot, abs=1e-14)


def test_leader_node_single_follower_reduction():
    g = G.CommGraph.from_edges(2, [(0, 1)], leader=0)
    spec = ProtocolSpec(Variant.LEADER_NODE, SCALAR, SCALAR_GAINS, g, kappa=[1.0, 2.0])
    s = initial_state(spec, [[0.5], [-0.5]], [[0.0], [0.3]], [0.0, 1.2])
    d = leader_node_rhs(spec, s)
    C, L = SCALAR.C, SCALAR_GAINS.L
    ex = s.x[1] - s.x[0]
    ev = s.v[1] - s.v[0]
    acl = SCALAR.A + SCALAR.B @ SCALAR_GAINS.F
    assert np.allclose(d.v[1] - d.v[0], acl @ ev + 1.2 * L @ (C @ ev - C @ ex), atol=1e-14)
    assert d.node_weights[1] == pytest.approx(2.0 * float(np.sum((C @ ex - C @ ev) ** 2)), abs=1e-14)
    assert d.node_weights[0] == 0.0


def test_leader_node_symmetric_followers():
    g = G.star_graph(3, center=0).with_leader(0)
    spec = ProtocolSpec(Variant.LEADER_NODE, TRIPLE, GAINS, g)
    s = initial_state(spec, [[0, 0, 0], [1, 0.5, 0], [1, 0.5, 0]], None, 0.0)
    d = leader_node_rhs(spec, s)
    assert d.node_weights[1] == d.node_weights[2] > 0


def test_rhs_rejects_wrong_variant():
    with pytest.raises(InvalidProtocol):
        node_adaptive_rhs(SPECS["edge"], random_state(SPECS["edge"], 0))
    with pytest.raises(InvalidProtocol):
        leader_edge_rhs(SPECS["edge"], random_state(SPECS["edge"], 0))


# --- consensus error ----------------------------------------------------------

def test_consensus_error_examples():
    s = NetworkState(np.ones((3, 2)), np.zeros((3, 2)), np.zeros(0), np.zeros(0))
    e, m = consensus_error(s)
    assert np.all(e == 0) and m == 0.0

    w = np.array([1.0, -2.0, 0.5, 3.0])
    s = NetworkState(np.array([w[:2], -w[:2]]), np.array([w[2:], -w[2:]]), np.zeros(0), np.zeros(0))
    e, m = consensus_error(s)
    assert np.array_equal(e[0], w) and np.array_equal(e[1], -w)
    assert m == pytest.approx(np.linalg.norm(w))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_consensus_error_sums_to_zero(N, seed):
    rng = np.random.default_rng(seed)
    s = NetworkState(rng.normal(size=(N, 3)), rng.normal(size=(N, 3)), np.zeros(0), np.zeros(0))
    e, _ = consensus_error(s)
    assert np.allclose(e.sum(axis=0), 0.0, atol=1e-12)


def test_consensus_error_leader_reference():
    x = np.array([[1.0], [2.0], [4.0]])
    s = NetworkState(x, np.zeros((3, 1)), np.zeros(0), np.zeros(0))
    e, m = consensus_error(s, leader=0)
    assert np.array_equal(e[:, 0], [0.0, 1.0, 3.0])
    assert m == 3.0
