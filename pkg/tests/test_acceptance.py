"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or execute this file).
"""
import itertools
import json
import time

import numpy as np
import pytest
import scipy.linalg as sla

from consensus_lab import cli
from consensus_lab import graph as G
from consensus_lab.config import G1_EDGES, G2_EDGES, LEADER_DEMO_EDGES
from consensus_lab.engine import (
    SimConfig,
    descent_violations,
    detect_convergence,
    integrate_isolated,
    make_monitor,
    simulate,
)
from consensus_lab.linalg import solve_filter_are, solve_lyapunov
from consensus_lab.protocols import ProtocolSpec, Variant, initial_state
from consensus_lab.synthesis import design_gains, lmi_matrix, verify_certificate
from consensus_lab.system import triple_integrator

F6 = [[-3.0, -6.5, -4.5]]
SEED = 42
# criterion 4 gates on a fixed panel of seeds rather than a single draw
PANEL = (0, 1, 2, 3, 4)
STEP = 1e-3
HORIZON = 30.0


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def g1():
    return G.CommGraph.from_edges(6, G1_EDGES, one_based=True)


def g2():
    return G.CommGraph.from_edges(6, G2_EDGES, one_based=True)


def seeded_state(spec, seed=SEED):
    rng = np.random.default_rng(seed)
    N, n = spec.node_count, spec.system.n
    x = rng.uniform(-1, 1, (N, n))
    v = rng.uniform(-1, 1, (N, n))
    return initial_state(spec, x, v, 0.0)


class Run:
    def __init__(self, spec, monitored=False, record_every=1, seed=SEED):
        self.spec = spec
        self.seed = seed
        self.init = seeded_state(spec, seed)
        self.cfg = SimConfig(step=STEP, horizon=HORIZON, record_every=record_every, seed=seed)
        mon = make_monitor(spec) if monitored else None
        t0 = time.perf_counter()
        self.traj = simulate(spec, self.init, self.cfg, mon)
        self.seconds = time.perf_counter() - t0


@pytest.fixture(scope="module")
def gains():
    return design_gains(triple_integrator(), F6)


@pytest.fixture(scope="module")
def edge_runs(gains):
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, triple_integrator(), gains, g1())
    return [Run(spec, monitored=True, seed=s) for s in PANEL]


@pytest.fixture(scope="module")
def node_runs(gains):
    spec = ProtocolSpec(Variant.NODE_ADAPTIVE, triple_integrator(), gains, g1())
    return [Run(spec, seed=s) for s in PANEL]


@pytest.fixture(scope="module")
def switching_run(gains):
    sig = G.SwitchingSignal((g1(), g2()), 0.1, "random", SEED)
    return Run(ProtocolSpec(Variant.SWITCHING_EDGE, triple_integrator(), gains, sig), monitored=True)


def leader_graph():
    return G.CommGraph.from_edges(6, LEADER_DEMO_EDGES, leader=1, one_based=True)


def convergence_checks(run):
    """Bounds shared by the fixed and switching runs; returns (ok, detail)."""
    tr = run.traj
    x0, xT = tr.x[0], tr.x[-1]
    dev0 = np.max(np.linalg.norm(x0 - x0.mean(axis=0), axis=1))
    devT = np.max(np.linalg.norm(xT - xT.mean(axis=0), axis=1))
    z0 = np.max(np.linalg.norm(np.concatenate([tr.x[0], tr.v[0]], axis=1), axis=1))
    vT = np.max(np.linalg.norm(tr.v[-1], axis=1))
    drops = float(np.min(np.diff(tr.weights, axis=0)))
    conv = detect_convergence(tr, 1e-3)
    ok = (devT <= 1e-3 * dev0 and vT <= 1e-3 * z0 and drops >= -1e-9
          and conv.weight_settled and run.seconds < 30)
    detail = (f"dev(T)/dev(0)={devT / dev0:.2e}, |v(T)|/|z(0)|={vT / z0:.2e}, "
              f"min weight step {drops:.1e}, settled={conv.weight_settled}, {run.seconds:.1f}s")
    return ok, detail


# ---------------------------------------------------------------------------

def test_criterion_1_certificate(report):
    t0 = time.perf_counter()
    sys_ = triple_integrator()
    g = design_gains(sys_, F6)
    rep = verify_certificate(sys_, g)
    elapsed = time.perf_counter() - t0
    q_min = float(np.linalg.eigvalsh(g.Q)[0])
    lmi_max = float(np.linalg.eigvalsh(lmi_matrix(sys_, g.Q))[-1])
    l_err = float(np.max(np.abs(g.L + np.linalg.solve(g.Q, sys_.C.T))))
    ok = (q_min > 0 and lmi_max < -1e-9 and l_err <= 1e-10
          and abs(rep.hurwitz_margin + 1.0) <= 1e-9 and rep.passed and elapsed < 1.0)
    report(1, ok, f"min eig Q={q_min:.3e}, max eig LMI={lmi_max:.3e}, |L err|={l_err:.1e}, "
                  f"abscissa={rep.hurwitz_margin:.12f}, {elapsed:.3f}s")


def _detectable(rng, n, q):
    while True:
        a = rng.normal(size=(n, n))
        c = rng.normal(size=(q, n))
        bad = any(
            np.linalg.matrix_rank(np.vstack([a - lam * np.eye(n), c]), tol=1e-6) < n
            for lam in np.linalg.eigvals(a) if lam.real >= -1e-6)
        if not bad:
            return a, c


def test_criterion_2_solver_oracles(report):
    worst_are = worst_lyap = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n = int(rng.integers(1, 7))
        q = int(rng.integers(1, n + 1))
        a, c = _detectable(rng, n, q)
        p = solve_filter_are(a, c, 1.0)
        res = a @ p + p @ a.T - p @ c.T @ c @ p + np.eye(n)
        worst_are = max(worst_are, np.linalg.norm(res) / (1 + np.linalg.norm(p) ** 2))
        acl = a - p @ c.T @ c
        w = np.eye(n)
        x = solve_lyapunov(acl, w)
        worst_lyap = max(worst_lyap, np.linalg.norm(acl.T @ x + x @ acl + w) / (1 + np.linalg.norm(w)))
        ref = sla.solve_continuous_are(a.T, c.T, np.eye(n), np.eye(q))
        assert np.allclose(p, ref, rtol=1e-6, atol=1e-8)
    scalar = abs(solve_filter_are([[0.0]], [[1.0]], 1.0)[0, 0] - 1.0)
    lyap_scalar = abs(solve_lyapunov([[-1.0]], [[2.0]])[0, 0] - 1.0)
    ok = worst_are <= 1e-8 and worst_lyap <= 1e-8 and scalar <= 1e-12 and lyap_scalar <= 1e-12
    report(2, ok, f"worst ARE residual {worst_are:.1e}, worst Lyapunov residual {worst_lyap:.1e}, "
                  f"scalar errors {scalar:.1e}/{lyap_scalar:.1e}")


def test_criterion_3_lambda2(report):
    worst, count = 0.0, 0
    for n in range(2, 6):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            g = G.CommGraph.from_edges(n, [p for k, p in enumerate(pairs) if mask >> k & 1])
            if not G.is_connected(g):
                continue
            ref = np.linalg.eigvalsh(G.laplacian(g).astype(float))[1]
            worst = max(worst, abs(G.lambda2(g) - ref))
            count += 1
    k6 = abs(G.lambda2(G.complete_graph(6)) - 6.0)
    ring = abs(G.lambda2(G.ring_graph(6)) - 1.0)
    ok = worst <= 1e-10 and k6 <= 1e-10 and ring <= 1e-10
    report(3, ok, f"{count} connected graphs, worst diff {worst:.1e}; K6 err {k6:.1e}, ring6 err {ring:.1e}")


def test_criterion_4_fixed_graph_convergence(report, edge_runs, node_runs):
    ok, lines = True, []
    for run in edge_runs + node_runs:
        good, detail = convergence_checks(run)
        ok &= good
        lines.append(f"    {run.spec.variant.value} seed {run.seed}: {detail}")
    report(4, ok, f"{len(lines)} runs on G1\n" + "\n".join(lines))


def test_criterion_5_leader_follower(report, gains):
    details, ok = [], True
    for variant in (Variant.LEADER_EDGE, Variant.LEADER_NODE):
        spec = ProtocolSpec(variant, triple_integrator(), gains, leader_graph())
        run = Run(spec, record_every=100)
        tr = run.traj
        dev0 = np.max(np.linalg.norm(tr.x[0] - tr.x[0, 0], axis=1))
        devT = np.max(np.linalg.norm(tr.x[-1] - tr.x[-1, 0], axis=1))
        iso = integrate_isolated(spec.system.A, run.init.x[0], run.cfg)
        exact = bool(np.array_equal(tr.x[:, 0, :], iso))
        ok &= devT <= 1e-3 * dev0 and exact
        details.append(f"{variant.value}: dev(T)/dev(0)={devT / dev0:.2e}, leader bit-exact={exact}")
    report(5, ok, "; ".join(details))


def test_criterion_6_switching(report, switching_run):
    ok, detail = convergence_checks(switching_run)
    spec = switching_run.spec
    tr = switching_run.traj
    sig = spec.graph_source
    # weights persist: across every switch the value carries over, and inside an
    # interval where a pair is not adjacent its weight does not move
    per = 100
    frozen_ok = True
    for k in range(int(HORIZON / 0.1)):
        active = set(sig.graphs[sig.index_for_interval(k)].edges)
        lo, hi = k * per, (k + 1) * per
        for j, pair in enumerate(spec.pairs):
            if pair not in active and tr.weights[hi, j] != tr.weights[lo, j]:
                frozen_ok = False
    used = {sig.index_for_interval(k) for k in range(300)}
    ok = ok and frozen_ok and used == {0, 1}
    report(6, ok, f"{detail}, inactive weights frozen={frozen_ok}, graphs used={sorted(used)}")


def test_criterion_7_lyapunov_descent(report, edge_runs, switching_run):
    ok, parts = True, []
    for run in edge_runs:
        v1 = run.traj.monitor
        bad = descent_violations(v1, 1e-6)
        ok &= not bad and v1[-1] < v1[0]
        parts.append(f"V1 seed {run.seed} {v1[0]:.3f}->{v1[-1]:.3f} ({len(bad)} violations)")
    v5 = switching_run.traj.monitor
    bad5 = descent_violations(v5, 1e-6)
    ok &= not bad5 and v5[-1] < v5[0]
    parts.append(f"V5 seed {switching_run.seed} {v5[0]:.3f}->{v5[-1]:.3f} ({len(bad5)} violations)")
    report(7, ok, f"{len(v5) - 1} steps each; " + "; ".join(parts))


def test_criterion_8_integrator_order(report, gains):
    spec = ProtocolSpec(Variant.EDGE_ADAPTIVE, triple_integrator(), gains, g1())
    init = seeded_state(spec, PANEL[0])
    hs = [0.04, 0.02, 0.01, 0.005]
    finals = []
    for h in hs:
        tr = simulate(spec, init, SimConfig(step=h, horizon=5.0, record_every=10**9))
        finals.append(spec.dynamics.pack(tr.final))
    diffs = [float(np.max(np.abs(finals[k] - finals[k + 1]))) for k in range(len(hs) - 1)]
    slope = float(np.polyfit(np.log(hs[:-1]), np.log(diffs), 1)[0])
    report(8, slope >= 3.5, f"successive differences {', '.join(f'{d:.2e}' for d in diffs)}; slope {slope:.2f}")


def test_criterion_9_reproducibility(report, tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    codes = [cli.main(["preset", "sec6-switching-edge", "--seed", str(SEED), "--out", str(a)]),
             cli.main(["preset", "sec6-switching-edge", "--seed", str(SEED), "--out", str(b)]),
             cli.main(["run", "--config", str(a / "manifest.json"), "--out", str(c)])]
    same = all((a / f).read_bytes() == (d / f).read_bytes()
               for f in ("trajectory.csv", "weights.csv") for d in (b, c))
    manifest = json.loads((a / "manifest.json").read_text())
    weights = np.loadtxt(a / "weights.csv", delimiter=",", skiprows=1)[:, 1:]
    monotone = bool(np.all(np.diff(weights, axis=0) >= 0))
    ok = same and codes == [0, 0, 0] and manifest["seed"] == SEED and monotone
    report(9, ok, f"exit codes {codes}, CSVs bit-identical={same}, weight columns monotone={monotone}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
