"""Fixed-step simulation of the closed-loop network and trajectory diagnostics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InfeasibleParams, InvalidProtocol, NonFiniteState
from .graph import SwitchingSignal, lambda2, lambda2_min, steps_per_dwell
from .linalg import is_positive_definite
from .protocols import NetworkState, ProtocolSpec, Variant, consensus_error
from .synthesis import lyapunov_params, storage_matrix

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12
DESCENT_SLACK = 1e-6

__all__ = [
    "SimConfig", "Trajectory", "ConvergenceReport", "LyapunovMonitor",
    "simulate", "integrate_isolated", "rk4_step", "lambda2_min",
    "lyapunov_monitor_v1", "lyapunov_monitor_v5", "make_monitor",
    "descent_violations", "detect_convergence",
]


@dataclass(frozen=True)
class SimConfig:
    step: float = 1e-3
    horizon: float = 30.0
    record_every: int = 100
    convergence_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon >= self.step:
            raise ValueError("horizon must be at least one step")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.step))


@dataclass(eq=False)
class Trajectory:
    """Recorded samples of a simulation.

    Arrays are indexed by sample: ``x[k]`` is the (N, n) agent state at
    ``times[k]``; ``weights[k]`` holds edge weights (aligned with ``pairs``)
    or node weights depending on ``variant``.
    """

    variant: Variant
    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray
    err_max: np.ndarray
    v_norm: np.ndarray
    pairs: tuple = ()
    leader: Optional[int] = None
    monitor: Optional[np.ndarray] = None
    diverged: bool = False
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def state(self, k: int) -> NetworkState:
        if self.variant.edge_weights:
            return NetworkState(self.x[k].copy(), self.v[k].copy(), self.weights[k].copy(),
                                np.zeros(0), self.pairs)
        return NetworkState(self.x[k].copy(), self.v[k].copy(), np.zeros(0),
                            self.weights[k].copy(), ())

    @property
    def final(self) -> NetworkState:
        return self.state(len(self) - 1)


def rk4_step(f: Callable, y: np.ndarray, h: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class _Recorder:
    def __init__(self, dyn, leader, monitor):
        self.dyn = dyn
        self.leader = leader
        self.monitor = monitor
        self.rows = []

    def add(self, t, y):
        s = self.dyn.unpack(y)
        _, err = consensus_error(s, self.leader)
        vn = float(np.max(np.linalg.norm(s.v, axis=1)))
        w = s.edge_weights if self.dyn.edge else s.node_weights
        mon = self.monitor(s) if self.monitor is not None else None
        self.rows.append((t, s.x, s.v, w, err, vn, mon))

    def build(self, spec, diverged=False) -> Trajectory:
        t, x, v, w, err, vn, mon = zip(*self.rows)
        return Trajectory(
            variant=spec.variant,
            times=np.array(t),
            x=np.array(x),
            v=np.array(v),
            weights=np.array(w).reshape(len(t), -1),
            err_max=np.array(err),
            v_norm=np.array(vn),
            pairs=spec.pairs,
            leader=spec.leader,
            monitor=None if self.monitor is None else np.array(mon),
            diverged=diverged,
        )


def simulate(spec: ProtocolSpec, init: NetworkState, cfg: SimConfig,
             monitor: Optional[Callable[[NetworkState], float]] = None) -> Trajectory:
    """Integrate the coupled state with classical RK4 at fixed step ``cfg.step``.

    Samples are recorded at step 0, every ``cfg.record_every`` steps and at
    the final step. In switching mode the dwell must be a whole number of
    steps; each step uses the graph active at its start. Raises
    :class:`NonFiniteState` (carrying the partial trajectory) when any
    entry becomes non-finite or exceeds ``1e12`` in magnitude.
    """
    dyn = spec.dynamics
    h = float(cfg.step)
    n_steps = cfg.n_steps
    src = spec.graph_source
    per_dwell = steps_per_dwell(src, h) if isinstance(src, SwitchingSignal) else None

    y = dyn.pack(init).astype(float)
    rec = _Recorder(dyn, spec.leader, monitor)
    rec.add(0.0, y)
    every = int(cfg.record_every)
    graph_index = 0
    for k in range(n_steps):
        if per_dwell is not None and k % per_dwell == 0:
            graph_index = src.index_for_interval(k // per_dwell)
        gi = graph_index
        y = rk4_step(lambda z: dyn.derivative(z, gi), y, h)
        if not np.isfinite(y).all() or np.abs(y).max() > DIVERGENCE_NORM:
            traj = rec.build(spec, diverged=True)
            raise NonFiniteState(f"state diverged at t={(k + 1) * h:.6g}", traj)
        if (k + 1) % every == 0 or k + 1 == n_steps:
            rec.add((k + 1) * h, y)
    return rec.build(spec)


def integrate_isolated(A, x0, cfg: SimConfig) -> np.ndarray:
    """RK4 samples of ``x' = A x`` on the same grid and recording rule as :func:`simulate`."""
    A = np.asarray(A, dtype=float)
    y = np.array(x0, dtype=float).reshape(-1)
    out = [y.copy()]
    every = int(cfg.record_every)
    n_steps = cfg.n_steps
    for k in range(n_steps):
        y = rk4_step(lambda z: A @ z, y, float(cfg.step))
        if (k + 1) % every == 0 or k + 1 == n_steps:
            out.append(y.copy())
    return np.array(out)


# ---------------------------------------------------------------------------
# Lyapunov monitors


@dataclass(frozen=True, eq=False)
class LyapunovMonitor:
    """``sum_i e_i' S e_i + sum_{i != j} (c_ij - offset)^2 / (2 kappa_ij)``.

    ``S = [[s P + Q, -Q], [-Q, Q]]`` and the double sum runs over ordered
    pairs, i.e. twice over each stored unordered edge weight.
    """

    storage: np.ndarray
    kappa: np.ndarray
    offset: float
    alpha: float
    varsigma: float

    def __call__(self, s: NetworkState) -> float:
        e, _ = consensus_error(s)
        quad = float(np.einsum("ij,jk,ik->", e, self.storage, e))
        wt = float(np.sum((s.edge_weights - self.offset) ** 2 / self.kappa))
        return quad + wt


def _monitor(spec: ProtocolSpec, alpha: float, varsigma: float) -> LyapunovMonitor:
    if not spec.variant.edge_weights or spec.variant.has_leader:
        raise InvalidProtocol("Lyapunov monitors cover the leaderless edge variants")
    storage = storage_matrix(spec.gains, varsigma)
    ok, lo = is_positive_definite(0.5 * (storage + storage.T), tol=0.0)
    if not ok:
        raise InfeasibleParams(f"storage matrix not positive definite (min eig {lo:.3e})")
    return LyapunovMonitor(storage, np.array(spec.kappa), alpha, alpha, varsigma)


def lyapunov_monitor_v1(spec: ProtocolSpec, s: NetworkState, alpha: float, varsigma: float) -> float:
    """Value of the fixed-graph edge-protocol Lyapunov function at ``s``."""
    if spec.variant is not Variant.EDGE_ADAPTIVE:
        raise InvalidProtocol("V1 applies to the fixed-graph edge protocol")
    return _monitor(spec, alpha, varsigma)(s)


def lyapunov_monitor_v5(spec: ProtocolSpec, s: NetworkState, delta: float, varsigma: float) -> float:
    """Common Lyapunov function for switching graphs; weights offset by ``delta``."""
    if spec.variant is not Variant.SWITCHING_EDGE:
        raise InvalidProtocol("V5 applies to the switching edge protocol")
    return _monitor(spec, delta, varsigma)(s)


def make_monitor(spec: ProtocolSpec) -> LyapunovMonitor:
    """Monitor with ``(alpha, varsigma)`` from :func:`lyapunov_params`.

    Uses ``lambda2`` of the fixed graph, or the minimum over the switching
    set (so ``alpha`` becomes ``max(1/lambda2_min, 1)``).
    """
    src = spec.graph_source
    lam = lambda2_min(src.graphs) if isinstance(src, SwitchingSignal) else lambda2(src)
    alpha, varsigma = lyapunov_params(spec.system, spec.gains, lam)
    return _monitor(spec, alpha, varsigma)


def descent_violations(values, slack: float = DESCENT_SLACK) -> list:
    """Sample indices ``k`` with ``V[k+1] > V[k] + slack*(1 + V[k])``."""
    v = np.asarray(values, dtype=float)
    bad = np.flatnonzero(v[1:] > v[:-1] + slack * (1.0 + v[:-1]))
    return [int(k) for k in bad]


# ---------------------------------------------------------------------------
# convergence


@dataclass(frozen=True)
class ConvergenceReport:
    converged: bool
    t_conv: Optional[float]
    final_weights: list
    weight_settled: bool

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "t_conv": self.t_conv,
            "final_weights": self.final_weights,
            "weight_settled": self.weight_settled,
        }


def detect_convergence(traj: Trajectory, tol: float) -> ConvergenceReport:
    """Converged iff the consensus error stays within ``tol*(1 + e0)`` from some sample on.

    Weights are settled iff each moved by at most ``1e-3*(1 + |final|)`` over
    the last 10% of the recorded horizon.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    final_w = traj.weights[-1]
    t0, t1 = float(traj.times[0]), float(traj.times[-1])
    start = int(np.searchsorted(traj.times, t1 - 0.1 * (t1 - t0) - 1e-12))
    drift = np.abs(final_w - traj.weights[start])
    settled = bool(np.all(drift <= 1e-3 * (1.0 + np.abs(final_w))))

    err = traj.err_max
    thresh = tol * (1.0 + err[0])
    above = np.flatnonzero(~(err <= thresh))
    if traj.diverged:
        converged, t_conv = False, None
    elif above.size == 0:
        converged, t_conv = True, float(traj.times[0])
    elif above[-1] == len(err) - 1:
        converged, t_conv = False, None
    else:
        converged, t_conv = True, float(traj.times[above[-1] + 1])
    return ConvergenceReport(converged, t_conv, [float(w) for w in final_w], settled)
