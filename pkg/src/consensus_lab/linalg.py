"""Dense real matrix kernels.

Everything here works on small float64 numpy arrays (desk scale, n <= ~20).
The eigen and Riccati routines are written out by hand so that the test
suite can check them against independent library implementations.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import (
    DimensionMismatch,
    NoConvergence,
    NonFiniteInput,
    NonSquare,
    NotDetectable,
    NotHurwitz,
    NotStabilizable,
    NotSymmetric,
)

_EPS = np.finfo(float).eps

JACOBI_MAX_SWEEPS = 100
QR_MAX_ITERATIONS = 500
HURWITZ_MARGIN = 1e-9


def as_mat(m, name="matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array (scalars become 1x1)."""
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteInput(f"{name} has non-finite entries")
    return a


def _square(m, name="matrix") -> np.ndarray:
    a = as_mat(m, name)
    if a.shape[0] != a.shape[1]:
        raise NonSquare(f"{name} is {a.shape[0]}x{a.shape[1]}")
    return a


def _check_symmetric(a, tol, name="matrix"):
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > tol:
        raise NotSymmetric(f"{name} asymmetry {asym:.3e} exceeds {tol:.1e}")


# --------------------------------------------------------------------------
# symmetric eigenproblem: cyclic Jacobi


def sym_eig(m, tol: float = 1e-9):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ``w`` ascending and ``m @ V == V @ diag(w)``.
    ``tol`` bounds the admitted asymmetry ``max|m - m.T|``.
    """
    a = _square(m)
    _check_symmetric(a, tol)
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    fro = float(np.linalg.norm(a))
    v = np.eye(n)
    negligible = 1e-18 * fro

    converged = n <= 1
    for sweep in range(1, JACOBI_MAX_SWEEPS + 1):
        off = np.abs(np.triu(a, 1))
        total = float(off.sum())
        if total == 0.0:
            converged = True
            break
        # threshold sweeps first, as in the classical cyclic-by-row scheme
        thresh = 0.2 * total / (n * n) if sweep < 4 else 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                g = 100.0 * abs(apq)
                if abs(apq) <= negligible or (
                    sweep > 4
                    and abs(a[p, p]) + g == abs(a[p, p])
                    and abs(a[q, q]) + g == abs(a[q, q])
                ):
                    a[p, q] = a[q, p] = 0.0
                    continue
                if abs(apq) <= thresh:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) + g == abs(h):
                    t = apq / h
                else:
                    theta = 0.5 * h / apq
                    t = 1.0 / (abs(theta) + math.sqrt(1.0 + theta * theta))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                app = a[p, p] - t * apq
                aqq = a[q, q] + t * apq
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, p] = app
                a[q, q] = aqq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    if not converged:
        raise NoConvergence(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    w = w[order]
    v = v[:, order]
    m_sym = 0.5 * (as_mat(m) + as_mat(m).T)
    resid = np.linalg.norm(m_sym @ v - v * w)
    if resid > 1e-10 * (1.0 + fro):
        raise NoConvergence(f"eigen residual {resid:.3e} too large")
    return w, v


def sym_eigvals(m, tol: float = 1e-9) -> np.ndarray:
    return sym_eig(m, tol)[0]


def is_positive_definite(m, tol: float = 1e-9):
    """Return ``(min_eig > tol, min_eig)`` for a symmetric matrix."""
    w = sym_eigvals(m, tol)
    lo = float(w[0])
    return lo > tol, lo


def max_sym_eig(m) -> float:
    """Largest eigenvalue of the symmetric part of ``m``."""
    a = _square(m)
    return float(sym_eigvals(0.5 * (a + a.T))[-1])


# --------------------------------------------------------------------------
# general eigenvalues: Householder-Hessenberg + Francis double-shift QR


def _hessenberg(a: np.ndarray) -> np.ndarray:
    h = a.copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        u = x.copy()
        u[0] += math.copysign(alpha, x[0])
        u /= np.linalg.norm(u)
        h[k + 1:, k:] -= 2.0 * np.outer(u, u @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ u, u)
        h[k + 2:, k] = 0.0
    return h


def _hqr(a: np.ndarray) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix (modified in place)."""
    n = a.shape[0]
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = float(np.sum(np.abs(np.triu(a, -1))))
    nn = n - 1
    t = 0.0
    total = 0
    x = y = w = p = q = r = z = 0.0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) <= _EPS * s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if total >= QR_MAX_ITERATIONS:
                raise NoConvergence(f"QR iteration cap {QR_MAX_ITERATIONS} reached")
            if its in (10, 20):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u <= _EPS * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr + 1j * wi


def eigvals(m) -> np.ndarray:
    """Eigenvalues of a general real square matrix, sorted by (real, imag)."""
    a = _square(m)
    if a.shape[0] == 0:
        return np.zeros(0, dtype=complex)
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return np.zeros(a.shape[0], dtype=complex)
    # scaling keeps the shift products clear of underflow and overflow
    lam = _hqr(_hessenberg(a / scale)) * scale
    return lam[np.lexsort((lam.imag, lam.real))]


def spectral_abscissa(m) -> float:
    return float(np.max(eigvals(m).real))


def is_hurwitz(m):
    """Return ``(abscissa < 0, abscissa)`` where abscissa is the max real part."""
    alpha = spectral_abscissa(m)
    return alpha < 0.0, alpha


# --------------------------------------------------------------------------
# Lyapunov and Riccati


def solve_lyapunov(a, w) -> np.ndarray:
    """Solve ``a.T @ x + x @ a + w = 0`` for a Hurwitz ``a``.

    Direct Kronecker linear solve; fine for the small orders used here.
    The substitution residual is checked before returning.
    """
    a = _square(a, "a")
    w = _square(w, "w")
    n = a.shape[0]
    if w.shape != (n, n):
        raise DimensionMismatch(f"a is {n}x{n} but w is {w.shape[0]}x{w.shape[1]}")
    _check_symmetric(w, 1e-9 * (1.0 + np.abs(w).max(initial=0.0)), "w")
    stable, alpha = is_hurwitz(a)
    if not stable:
        raise NotHurwitz(f"spectral abscissa {alpha:.3e} >= 0")
    return _lyap_kron(a, 0.5 * (w + w.T))


def _lyap_kron(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(a.T x) = kron(a.T, I) vec(x), vec(x a) = kron(I, a.T) vec(x)
    op = np.kron(a.T, eye) + np.kron(eye, a.T)
    rhs = -w.reshape(-1)
    xv = np.linalg.solve(op, rhs)
    # one step of iterative refinement
    xv = xv + np.linalg.solve(op, rhs - op @ xv)
    x = xv.reshape(n, n)
    x = 0.5 * (x + x.T)
    resid = np.linalg.norm(a.T @ x + x @ a + w)
    if resid > 1e-9 * (1.0 + np.linalg.norm(w)):
        raise NoConvergence(f"Lyapunov residual {resid:.3e}")
    return x


def care_residual(a, b, w, x) -> np.ndarray:
    """Residual of ``a.T x + x a - x b b.T x + w``."""
    return a.T @ x + x @ a - x @ b @ b.T @ x + w


def _newton_kleinman(a, b, w, k, max_iter=100):
    x = None
    for _ in range(max_iter):
        ak = a - b @ k
        stable, _ = is_hurwitz(ak)
        if not stable:
            raise NoConvergence("Newton-Kleinman iterate lost stability")
        x_new = _lyap_kron(ak, w + k.T @ k)
        k_new = b.T @ x_new
        done = x is not None and np.linalg.norm(x_new - x) <= 1e-14 * (1.0 + np.linalg.norm(x_new))
        x, k = x_new, k_new
        if done:
            return x
        if np.linalg.norm(care_residual(a, b, w, x)) <= 1e-13 * (1.0 + np.linalg.norm(x) ** 2):
            return x
    return x


def solve_care(a, b, w, max_shift_steps: int = 200) -> np.ndarray:
    """Stabilizing solution of ``a.T x + x a - x b b.T x + w = 0`` (``w`` > 0).

    Newton-Kleinman iteration. A stabilizing seed gain comes from a shift
    continuation: the problem for ``a - beta*I`` is trivially seeded by
    ``k = 0`` when ``beta`` exceeds the spectral abscissa, and each solved
    problem leaves a closed-loop margin ``mu`` that allows ``beta`` to be
    lowered by ``mu/2`` while keeping the previous gain stabilizing.
    Raises :class:`NotStabilizable` when the continuation stalls.
    """
    a = _square(a, "a")
    b = as_mat(b, "b")
    w = _square(w, "w")
    n = a.shape[0]
    if b.shape[0] != n or w.shape != (n, n):
        raise DimensionMismatch("a, b, w dimensions disagree")
    eye = np.eye(n)
    beta = max(0.0, spectral_abscissa(a)) + 1.0
    k = np.zeros((b.shape[1], n))
    for _ in range(max_shift_steps):
        try:
            x = _newton_kleinman(a - beta * eye, b, w, k)
        except NoConvergence as exc:
            raise NotStabilizable(str(exc)) from exc
        k = b.T @ x
        if beta == 0.0:
            break
        mu = -spectral_abscissa(a - beta * eye - b @ k)
        if mu <= 1e-10:
            raise NotStabilizable("closed-loop margin vanished during shift continuation")
        beta = max(0.0, beta - 0.5 * mu)
    else:
        raise NotStabilizable(f"shift continuation did not reach zero in {max_shift_steps} steps")

    x = 0.5 * (x + x.T)
    closed, alpha = is_hurwitz(a - b @ b.T @ x)
    if not closed:
        raise NotStabilizable(f"Riccati solution not stabilizing (abscissa {alpha:.3e})")
    resid = np.linalg.norm(care_residual(a, b, w, x))
    if resid > 1e-8 * (1.0 + np.linalg.norm(x) ** 2):
        raise NoConvergence(f"Riccati residual {resid:.3e}")
    return x


def solve_filter_are(a, c, noise_scale: float = 1.0) -> np.ndarray:
    """Stabilizing ``p`` of ``a p + p a.T - p c.T c p + noise_scale*I = 0``.

    ``a - p c.T c`` is Hurwitz on return. Raises :class:`NotDetectable` when
    ``(a, c)`` admits no such solution.
    """
    if not noise_scale > 0:
        raise ValueError("noise_scale must be positive")
    a = _square(a, "a")
    c = as_mat(c, "c")
    if c.shape[1] != a.shape[0]:
        raise DimensionMismatch(f"c has {c.shape[1]} columns, a is {a.shape[0]}x{a.shape[0]}")
    try:
        return solve_care(a.T, c.T, noise_scale * np.eye(a.shape[0]))
    except NotStabilizable as exc:
        raise NotDetectable(str(exc)) from exc
