"""Command line front end: ``consensus-lab run|preset|verify``.

Every run writes four files into the output directory:

- ``manifest.json``: resolved gains, certificate margins, connectivity,
  software version, seed and the full config echo. Passing it back to
  ``run --config`` reproduces the run exactly.
- ``trajectory.csv``: ``t``, ``x_i_k``, ``v_i_k`` (1-based agent ``i``,
  state component ``k``), ``err_max``.
- ``weights.csv``: ``t`` then ``c_i_j`` for edges in ascending pair order, or
  ``d_i`` for node weights.
- ``report.json``: convergence summary, Lyapunov monitor warnings and status.

Edge lists in configs are JSON pairs or text with one ``"i j"`` pair per line
(1-based, ``#`` starts a comment).

Exit codes: 0 converged, 1 config or synthesis error, 2 not converged
within the horizon, 3 divergence (partial outputs are still written).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import (
    PRESETS,
    RunConfig,
    build_initial_state,
    build_spec,
    config_to_dict,
    linear_system,
    parse_config,
    preset,
    serialize_config,
    with_seed,
)
from .engine import (
    ConvergenceReport,
    descent_violations,
    detect_convergence,
    make_monitor,
    simulate,
)
from .errors import ConsensusLabError, NonFiniteState, UnknownPreset
from .graph import SwitchingSignal, lambda2, lambda2_min, leader_partition
from .linalg import sym_eigvals
from .protocols import Variant
from .synthesis import design_gains, verify_certificate

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SOFTWARE = "consensus-lab"

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2
EXIT_DIVERGED = 3


def fmt(value) -> str:
    """Decimal notation, 17 significant digits."""
    v = float(value)
    if not np.isfinite(v):
        return repr(v)
    return np.format_float_positional(v, precision=17, unique=False, fractional=False, trim="-")


def _atomic_write(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def trajectory_header(N: int, n: int) -> list:
    cols = ["t"]
    cols += [f"x_{i + 1}_{k + 1}" for i in range(N) for k in range(n)]
    cols += [f"v_{i + 1}_{k + 1}" for i in range(N) for k in range(n)]
    cols.append("err_max")
    return cols


def weights_header(variant: Variant, N: int, pairs) -> list:
    if variant.edge_weights:
        return ["t"] + [f"c_{i + 1}_{j + 1}" for i, j in pairs]
    return ["t"] + [f"d_{i + 1}" for i in range(N)]


def trajectory_csv(traj) -> str:
    K, N, n = traj.x.shape
    rows = np.hstack([traj.times[:, None], traj.x.reshape(K, -1), traj.v.reshape(K, -1),
                      traj.err_max[:, None]])
    return _csv_text(trajectory_header(N, n), rows)


def weights_csv(traj) -> str:
    N = traj.x.shape[1]
    rows = np.hstack([traj.times[:, None], traj.weights])
    return _csv_text(weights_header(traj.variant, N, traj.pairs), rows)


def _connectivity(spec) -> dict:
    src = spec.graph_source
    if isinstance(src, SwitchingSignal):
        return {"lambda2_min": lambda2_min(src.graphs)}
    out = {"lambda2": lambda2(src)}
    if spec.variant.has_leader:
        l1, _ = leader_partition(src)
        out["follower_block_min_eig"] = float(sym_eigvals(l1)[0])
    return out


def _json(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def _design(cfg: RunConfig):
    sys_ = linear_system(cfg)
    gains = design_gains(sys_, cfg.f_override)
    cert = verify_certificate(sys_, gains)
    if not cert.passed:
        raise ConsensusLabError(f"gain certificate failed: {cert.to_dict()}")
    return sys_, gains, cert


def run(cfg: RunConfig, out_dir) -> int:
    """Synthesize, simulate and write all outputs; return the exit code.

    Config and synthesis errors propagate as :class:`ConsensusLabError`;
    :func:`main` maps them to exit code 1.
    """
    _, gains, cert = _design(cfg)
    spec = build_spec(cfg, gains)
    init = build_initial_state(cfg, spec)
    conn = _connectivity(spec)

    monitor = None
    monitor_info = None
    if spec.variant in (Variant.EDGE_ADAPTIVE, Variant.SWITCHING_EDGE):
        monitor = make_monitor(spec)
        monitor_info = {
            "name": "V1" if spec.variant is Variant.EDGE_ADAPTIVE else "V5",
            "alpha": monitor.alpha,
            "varsigma": monitor.varsigma,
        }

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "software": {"name": SOFTWARE, "version": __version__},
        "seed": cfg.sim.seed,
        "gains": gains.to_dict(),
        "certificate": cert.to_dict(),
        "connectivity": conn,
        "config": config_to_dict(cfg),
    }
    _atomic_write(out / "manifest.json", _json(manifest))

    try:
        traj = simulate(spec, init, cfg.sim, monitor)
        diverged_msg = None
    except NonFiniteState as exc:
        traj = exc.trajectory
        diverged_msg = str(exc)

    _atomic_write(out / "trajectory.csv", trajectory_csv(traj))
    _atomic_write(out / "weights.csv", weights_csv(traj))

    conv: ConvergenceReport = detect_convergence(traj, cfg.sim.convergence_tol)
    warnings = list(traj.warnings)
    if monitor is not None:
        bad = descent_violations(traj.monitor)
        monitor_info["violations"] = [float(traj.times[k + 1]) for k in bad]
        monitor_info["final_value"] = float(traj.monitor[-1])
        if bad:
            warnings.append(f"{monitor_info['name']} increased at {len(bad)} samples")
    if conv.converged and not conv.weight_settled:
        warnings.append("adaptive weights still moving over the last 10% of the horizon")

    if diverged_msg is not None:
        code, status, message = EXIT_DIVERGED, "diverged", diverged_msg
    elif conv.converged:
        code, status, message = EXIT_CONVERGED, "converged", f"consensus reached at t={conv.t_conv:g}"
    else:
        code, status = EXIT_NOT_CONVERGED, "not-converged"
        message = f"consensus error {traj.err_max[-1]:.3e} above tolerance at t={traj.times[-1]:g}"

    report = {
        "status": status,
        "exit_code": code,
        "message": message,
        "convergence": conv.to_dict(),
        "final_err_max": float(traj.err_max[-1]),
        "monitor": monitor_info,
        "warnings": warnings,
    }
    _atomic_write(out / "report.json", _json(report))
    return code


def verify(cfg: RunConfig) -> dict:
    """Synthesis and certificate only."""
    sys_ = linear_system(cfg)
    gains = design_gains(sys_, cfg.f_override)
    cert = verify_certificate(sys_, gains)
    return {"gains": gains.to_dict(), "certificate": cert.to_dict()}


def _load(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConsensusLabError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog=SOFTWARE, description="Adaptive consensus simulations")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a config file (or a manifest)")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None)
    r.add_argument("--seed", type=int, default=None)

    pr = sub.add_parser("preset", help="run a built-in scenario")
    pr.add_argument("name", help=", ".join(PRESETS))
    pr.add_argument("--out", default=None)
    pr.add_argument("--seed", type=int, default=None)
    pr.add_argument("--dump", action="store_true", help="print the config JSON and exit")

    v = sub.add_parser("verify", help="gain synthesis and certificate only")
    v.add_argument("--config", required=True)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            result = verify(_load(args.config))
            sys.stdout.write(_json(result))
            return EXIT_CONVERGED if result["certificate"]["passed"] else EXIT_ERROR

        if args.command == "preset":
            cfg = preset(args.name, args.seed)
            if args.dump:
                sys.stdout.write(serialize_config(cfg))
                return EXIT_CONVERGED
        else:
            cfg = _load(args.config)
            if args.seed is not None:
                cfg = with_seed(cfg, args.seed)
        out = args.out or cfg.output or "consensus-run"
        code = run(cfg, out)
    except UnknownPreset as exc:
        print(f"error: unknown preset {exc.args[0]!r}; choose from {', '.join(PRESETS)}",
              file=sys.stderr)
        return EXIT_ERROR
    except ConsensusLabError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    report = json.loads((Path(out) / "report.json").read_text())
    print(f"{report['status']}: {report['message']} ({out})")
    return code


if __name__ == "__main__":
    sys.exit(main())
