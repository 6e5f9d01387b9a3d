"""Gain design for the adaptive output-feedback consensus protocols."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NoFeasibleVarsigma,
    NotDetectable,
    NotStabilizable,
    OverrideNotStabilizing,
)
from .linalg import (
    HURWITZ_MARGIN,
    as_mat,
    is_hurwitz,
    max_sym_eig,
    solve_care,
    solve_filter_are,
    solve_lyapunov,
    sym_eigvals,
)
from .system import LinearSystem

L_TOLERANCE = 1e-10
DEFAULT_NOISE_SCALE = 1.0


def gamma_matrix(q: int) -> np.ndarray:
    """``[[I, -I], [-I, I]]`` of size ``2q``; its quadratic form is ``|u - w|^2``."""
    eye = np.eye(q)
    return np.block([[eye, -eye], [-eye, eye]])


@dataclass(frozen=True, eq=False)
class GainSet:
    F: np.ndarray
    L: np.ndarray
    Gamma: np.ndarray
    Q: np.ndarray
    P_lyap: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("F", "L", "Gamma", "Q", "P_lyap")}


@dataclass(frozen=True)
class CertificateReport:
    hurwitz_margin: float
    lmi_margin: float
    gamma_ok: bool
    l_consistency: float

    @property
    def l_ok(self) -> bool:
        return self.l_consistency <= L_TOLERANCE

    @property
    def passed(self) -> bool:
        return (
            self.hurwitz_margin < -HURWITZ_MARGIN
            and self.lmi_margin < -HURWITZ_MARGIN
            and self.gamma_ok
            and self.l_ok
        )

    def to_dict(self) -> dict:
        return {
            "hurwitz_margin": self.hurwitz_margin,
            "lmi_margin": self.lmi_margin,
            "gamma_ok": self.gamma_ok,
            "l_consistency": self.l_consistency,
            "passed": self.passed,
        }


def lmi_matrix(sys: LinearSystem, Q) -> np.ndarray:
    m = Q @ sys.A + sys.A.T @ Q - 2.0 * sys.C.T @ sys.C
    return 0.5 * (m + m.T)


def design_gains(sys: LinearSystem, f_override=None,
                 noise_scale: float = DEFAULT_NOISE_SCALE) -> GainSet:
    """Synthesize ``F``, ``L``, ``Gamma`` and the certificates ``Q``, ``P_lyap``.

    ``F`` is the override when given (it must make ``A + BF`` Hurwitz),
    otherwise the LQR gain ``-B.T S`` of ``A.T S + S A - S B B.T S + I = 0``.
    ``Q`` is the inverse of the stabilizing filter Riccati solution, which
    makes ``Q A + A.T Q - 2 C.T C = -C.T C - noise_scale*Q^2`` negative
    definite. ``P_lyap`` solves ``P(A+BF) + (A+BF).T P = -I``.
    """
    A, B, C = sys.A, sys.B, sys.C
    n = sys.n
    if f_override is not None:
        F = as_mat(f_override, "F")
        if F.shape != (sys.p, n):
            raise DimensionMismatch(f"F override must be {sys.p}x{n}, got {F.shape}")
        stable, alpha = is_hurwitz(A + B @ F)
        if not stable or alpha >= -HURWITZ_MARGIN:
            raise OverrideNotStabilizing(f"A+BF spectral abscissa {alpha:.6g} is not negative")
    else:
        try:
            S = solve_care(A, B, np.eye(n))
        except NoConvergence as exc:
            raise NotStabilizable(f"(A, B) is not stabilizable: {exc}") from exc
        except NotStabilizable as exc:
            raise NotStabilizable(f"(A, B) is not stabilizable: {exc}") from exc
        F = -B.T @ S
        stable, alpha = is_hurwitz(A + B @ F)
        if not stable or alpha >= -HURWITZ_MARGIN:
            raise NotStabilizable(f"(A, B) is not stabilizable: abscissa {alpha:.3e}")

    try:
        Pf = solve_filter_are(A, C, noise_scale)
    except NoConvergence as exc:
        raise NotDetectable(f"(A, C) is not detectable: {exc}") from exc
    except NotDetectable as exc:
        raise NotDetectable(f"(A, C) is not detectable: {exc}") from exc
    Q = np.linalg.inv(Pf)
    Q = 0.5 * (Q + Q.T)
    L = -np.linalg.solve(Q, C.T)

    P = solve_lyapunov(A + B @ F, np.eye(n))
    gains = GainSet(F=F, L=L, Gamma=gamma_matrix(sys.q), Q=Q, P_lyap=P)
    for m in (gains.F, gains.L, gains.Gamma, gains.Q, gains.P_lyap):
        m.setflags(write=False)
    return gains


def verify_certificate(sys: LinearSystem, gains: GainSet) -> CertificateReport:
    """Recompute every gain invariant from scratch.

    ``lmi_margin`` is ``max(lambda_max(QA + A'Q - 2C'C), -lambda_min(Q))`` so it
    is negative only when ``Q`` is positive definite and the LMI holds strictly.
    """
    n, p, q = sys.n, sys.p, sys.q
    F, L, G, Q = (np.asarray(m, dtype=float) for m in (gains.F, gains.L, gains.Gamma, gains.Q))
    if F.shape != (p, n) or L.shape != (n, q) or G.shape != (2 * q, 2 * q) or Q.shape != (n, n):
        raise DimensionMismatch("gain dimensions do not match the system")
    _, hurwitz_margin = is_hurwitz(sys.A + sys.B @ F)
    q_min = float(sym_eigvals(0.5 * (Q + Q.T))[0])
    lmi_margin = max(max_sym_eig(lmi_matrix(sys, 0.5 * (Q + Q.T))), -q_min)
    gamma_ok = bool(np.array_equal(G, gamma_matrix(q)))
    try:
        l_ref = -np.linalg.solve(Q, sys.C.T)
        l_consistency = float(np.max(np.abs(L - l_ref)))
    except np.linalg.LinAlgError:
        l_consistency = float("inf")
    return CertificateReport(float(hurwitz_margin), float(lmi_margin), gamma_ok, l_consistency)


def descent_matrix(sys: LinearSystem, gains: GainSet, coupling: float, varsigma: float) -> np.ndarray:
    """Block matrix whose negative definiteness gives Lyapunov descent.

    ``[[s(P Acl + Acl' P), s P B F], [s F' B' P, QA + A'Q - 2 coupling C'C]]``
    with ``Acl = A + BF`` and ``coupling = alpha * lambda2``.
    """
    A, B, C = sys.A, sys.B, sys.C
    P, Q, F = gains.P_lyap, gains.Q, gains.F
    acl = A + B @ F
    top = varsigma * (P @ acl + acl.T @ P)
    off = varsigma * (P @ B @ F)
    bottom = Q @ A + A.T @ Q - 2.0 * coupling * C.T @ C
    m = np.block([[top, off], [off.T, bottom]])
    return 0.5 * (m + m.T)


def storage_matrix(gains: GainSet, varsigma: float) -> np.ndarray:
    """``[[s P + Q, -Q], [-Q, Q]]``, positive definite for every ``s > 0``."""
    P, Q = gains.P_lyap, gains.Q
    return np.block([[varsigma * P + Q, -Q], [-Q, Q]])


def lyapunov_params(sys: LinearSystem, gains: GainSet, lam2: float,
                    lo: float = 1e-12, hi: float = 1.0, iterations: int = 60):
    """Return ``(alpha, varsigma)`` certifying descent for connectivity ``lam2``.

    ``alpha = max(1/lam2, 1)``; ``varsigma`` is the largest value found by
    bisection on ``[lo, hi]`` for which :func:`descent_matrix` has largest
    eigenvalue below ``-1e-9 * varsigma`` (the top block scales with
    ``varsigma``, so the margin does too; this keeps the answer off the
    rounding-level boundary).
    """
    if not lam2 > 0:
        raise ValueError("lam2 must be positive")
    alpha = max(1.0 / lam2, 1.0)
    coupling = alpha * lam2

    def feasible(s):
        return max_sym_eig(descent_matrix(sys, gains, coupling, s)) < -HURWITZ_MARGIN * s

    if feasible(hi):
        return alpha, hi
    if not feasible(lo):
        raise NoFeasibleVarsigma(f"no feasible varsigma in [{lo:g}, {hi:g}]")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return alpha, lo
