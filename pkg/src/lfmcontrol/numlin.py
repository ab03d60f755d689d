"""Dense linear-algebra kernels used throughout the library.

Matrix exponential, joint (Van Loan) discretization of linear SDEs,
continuous Lyapunov / Sylvester / algebraic Riccati solvers, and an
SVD-based numerical rank.  Everything operates on plain ndarrays; scalars
and 1-D arrays are promoted where a matrix is expected.

The Riccati solver follows a two-phase scheme: backward integration of the
differential Riccati equation until its right-hand side is small, then
Newton-Kleinman polishing (each step one Lyapunov solve) down to a tight
algebraic residual.  The ODE phase is skipped when the drift matrix is
already Hurwitz, in which case P = 0 is a valid stabilizing initializer.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .errors import (
    ConvergenceError,
    SpectrumOverlapError,
    StabilityError,
    StabilizabilityError,
)

__all__ = [
    "expm",
    "van_loan_discretize",
    "solve_lyapunov",
    "solve_sylvester",
    "solve_care",
    "numerical_rank",
    "check_symmetric_psd",
    "symmetrize",
    "unstabilizable_modes",
    "undetectable_modes",
    "riccati_step_size",
]

# Eigenvalues with real part at or above this threshold count as "not
# strictly stable" in Hurwitz and PBH checks.
STABILITY_MARGIN = -1e-12


def _as_matrix(a, name):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _as_square(a, name):
    a = _as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def symmetrize(p):
    """Return the symmetric part (p + p.T)/2."""
    return 0.5 * (p + p.T)


def check_symmetric_psd(p, name="matrix", sym_tol=1e-10, eig_tol=1e-9):
    """Validate symmetry and positive semidefiniteness of ``p``.

    Symmetry is relative to the largest entry, PSD relative to the largest
    eigenvalue magnitude.  Returns the symmetrized matrix.

    Raises:
        ValueError: on asymmetry or a negative eigenvalue beyond tolerance.
    """
    p = _as_square(p, name)
    scale = 1.0 + np.abs(p).max(initial=0.0)
    asym = np.abs(p - p.T).max(initial=0.0)
    if asym > sym_tol * scale:
        raise ValueError(f"{name} is not symmetric: max|P - P.T| = {asym:.3e}")
    p = symmetrize(p)
    if p.size:
        w = np.linalg.eigvalsh(p)
        wmax = np.abs(w).max()
        if wmax > 0 and w.min() < -eig_tol * wmax:
            raise ValueError(
                f"{name} is not PSD: min eigenvalue {w.min():.3e} "
                f"(largest magnitude {wmax:.3e})"
            )
    return p


def expm(a):
    """Matrix exponential of a square matrix (scaling-and-squaring Pade)."""
    return sla.expm(_as_square(a, "A"))


def van_loan_discretize(a, l, q, dt):
    """Discretize dx = A x dt + L dw, w with spectral density Q, over dt.

    Both the transition matrix and the process-noise covariance come from a
    single exponential of the doubled block matrix [[A, L Q L.T], [0, -A.T]]:
    the top-left block is Ad = expm(A dt) and the top-right block times Ad.T
    is the integrated covariance Qd.

    Args:
        a: drift matrix, n x n.
        l: noise input matrix, n x p (scalars/vectors promoted).
        q: noise spectral density, p x p symmetric PSD.
        dt: step length, > 0.

    Returns:
        (Ad, Qd) with Qd symmetrized.
    """
    a = _as_square(a, "A")
    n = a.shape[0]
    l = np.asarray(l, dtype=float)
    if l.ndim == 0:
        l = l.reshape(1, 1)
    elif l.ndim == 1:
        l = l.reshape(n, -1)
    if l.shape[0] != n:
        raise ValueError(f"L has {l.shape[0]} rows, expected {n}")
    q = check_symmetric_psd(_as_square(q, "Q"), "Q")
    if q.shape[0] != l.shape[1]:
        raise ValueError(f"Q is {q.shape}, L has {l.shape[1]} columns")
    if not (np.isfinite(dt) and dt > 0):
        raise ValueError(f"dt must be positive, got {dt}")

    lql = l @ q @ l.T
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = a
    blk[:n, n:] = lql
    blk[n:, n:] = -a.T
    phi = sla.expm(blk * dt)
    ad = phi[:n, :n]
    qd = symmetrize(phi[:n, n:] @ ad.T)
    return ad, qd


def solve_lyapunov(f, q):
    """Solve F P + P F.T + Q = 0 for symmetric P, with F Hurwitz.

    Companion-form drift matrices carry entries many orders of magnitude
    above their eigenvalues, which pushes the plain Bartels-Stewart
    residual above target; iterative refinement with extended-precision
    residual evaluation recovers it.

    Args:
        f: n x n, all eigenvalues strictly in the open left half plane.
        q: n x n symmetric PSD.

    Returns:
        Symmetric solution P.

    Raises:
        StabilityError: if F has an eigenvalue with real part >= -1e-12.
        ConvergenceError: if the residual stays above 1e-10 * (1 + ||Q||_F)
            after refinement.
    """
    f = _as_square(f, "F")
    q = _as_square(q, "Q")
    if f.shape != q.shape:
        raise ValueError(f"shape mismatch: F {f.shape}, Q {q.shape}")
    lam = np.linalg.eigvals(f)
    if lam.size and lam.real.max() >= STABILITY_MARGIN:
        raise StabilityError(
            f"F is not Hurwitz: max Re(eig) = {lam.real.max():.3e}"
        )
    q = check_symmetric_psd(q, "Q")
    p = symmetrize(sla.solve_continuous_lyapunov(f, -q))
    tol = 1e-10 * (1.0 + np.linalg.norm(q, "fro"))
    fl = f.astype(np.longdouble)
    ql = q.astype(np.longdouble)
    rnorm = np.inf
    for _ in range(6):
        pl = p.astype(np.longdouble)
        res = np.asarray(fl @ pl + pl @ fl.T + ql, dtype=float)
        rnorm = np.linalg.norm(res, "fro")
        if rnorm <= tol:
            return p
        p = symmetrize(p - sla.solve_continuous_lyapunov(f, res))
    raise ConvergenceError(
        f"Lyapunov residual {rnorm:.3e} above tolerance {tol:.3e}",
        residual=rnorm,
    )


def solve_sylvester(a, b, c):
    """Solve A X - X B = C; requires spec(A) and spec(B) disjoint.

    Raises:
        SpectrumOverlapError: naming the closest eigenvalue pair when the
            spectra touch within 1e-10 (relative to their scale).
    """
    a = _as_square(a, "A")
    b = _as_square(b, "B")
    c = _as_matrix(c, "C")
    if c.shape != (a.shape[0], b.shape[0]):
        raise ValueError(
            f"C must be {(a.shape[0], b.shape[0])}, got {c.shape}"
        )
    la = np.linalg.eigvals(a)
    lb = np.linalg.eigvals(b)
    gap = np.abs(la[:, None] - lb[None, :])
    scale = 1.0 + max(np.abs(la).max(initial=0.0), np.abs(lb).max(initial=0.0))
    i, j = np.unravel_index(np.argmin(gap), gap.shape)
    if gap[i, j] <= 1e-10 * scale:
        raise SpectrumOverlapError(
            f"eigenvalue {la[i]:.6g} of A collides with {lb[j]:.6g} of B "
            f"(gap {gap[i, j]:.3e}); A X - X B = C is singular"
        )
    # scipy solves A X + X B = C
    x = sla.solve_sylvester(a, -b, c)
    tol = 1e-9 * (1.0 + np.linalg.norm(c, "fro"))
    rnorm = np.linalg.norm(a @ x - x @ b - c, "fro")
    if rnorm > tol:
        raise ConvergenceError(
            f"Sylvester residual {rnorm:.3e} above tolerance {tol:.3e}",
            residual=rnorm,
        )
    return x


def _pbh_deficient(a, bc, side, margin):
    """Eigenvalues of A with Re >= margin failing the PBH rank test.

    side "input" tests rank [A - lam I, B]; side "output" tests the
    transposed problem with C stacked below.
    """
    n = a.shape[0]
    lam = np.linalg.eigvals(a)
    bad = []
    for lv in lam[lam.real >= margin]:
        shift = a - lv * np.eye(n)
        if side == "input":
            test = np.hstack([shift, bc])
        else:
            test = np.vstack([shift, bc])
        if numerical_rank(test) < n:
            bad.append(lv)
    return bad


def unstabilizable_modes(a, m, margin=STABILITY_MARGIN):
    """Unstable eigenvalues of A that the input matrix M cannot reach."""
    a = _as_square(a, "A")
    m = _as_matrix(m, "M")
    if m.shape[0] != a.shape[0]:
        raise ValueError(f"M has {m.shape[0]} rows, expected {a.shape[0]}")
    return _pbh_deficient(a, m, "input", margin)


def undetectable_modes(a, c, margin=STABILITY_MARGIN):
    """Unstable eigenvalues of A invisible through the output matrix C."""
    a = _as_square(a, "A")
    c = _as_matrix(c, "C")
    if c.shape[1] != a.shape[0]:
        raise ValueError(f"C has {c.shape[1]} columns, expected {a.shape[0]}")
    return _pbh_deficient(a, c, "output", margin)


def riccati_step_size(a):
    """Fixed RK4 step for Riccati integration involving drift matrix A.

    Bounded by the spectrum of A rather than its entry norm: companion-form
    realizations carry huge coefficients but O(1) eigenvalues, and the RK4
    stability limit scales with the closed-loop eigenvalue sums.
    """
    lam = np.linalg.eigvals(a)
    rho = np.abs(lam).max(initial=0.0)
    return min(0.01, 0.35 / max(1.0, rho))


def _riccati_rhs_backward(a_t, s, xg, p):
    # d P / d tau with tau running backward in time
    return a_t @ p + p @ a_t.T + xg - p @ s @ p


def _riccati_ode_equilibrium(a, s, xg, rhs_tol, max_steps):
    """Integrate the backward Riccati flow from P = Xg toward equilibrium."""
    a_t = a.T
    p = xg.copy()
    h = riccati_step_size(a)
    for _ in range(max_steps):
        k1 = _riccati_rhs_backward(a_t, s, xg, p)
        if np.linalg.norm(k1, "fro") <= rhs_tol:
            break
        k2 = _riccati_rhs_backward(a_t, s, xg, p + 0.5 * h * k1)
        k3 = _riccati_rhs_backward(a_t, s, xg, p + 0.5 * h * k2)
        k4 = _riccati_rhs_backward(a_t, s, xg, p + h * k3)
        p = symmetrize(p + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if not np.all(np.isfinite(p)) or np.linalg.norm(p, "fro") > 1e12:
            raise ConvergenceError(
                "backward Riccati integration diverged", residual=np.inf
            )
    return p


def solve_care(a, m, uinv, xg, residual_tol=1e-8, max_newton=100):
    """Stabilizing solution of -A.T P - P A + P M Uinv M.T P - Xg = 0.

    Args:
        a: drift matrix, n x n.
        m: input matrix, n x m.
        uinv: inverse control weight, m x m symmetric positive definite.
        xg: state cost, n x n symmetric PSD.
        residual_tol: algebraic residual target (Frobenius, relative to
            1 + ||Xg||_F).
        max_newton: cap on Newton-Kleinman iterations.

    Returns:
        Symmetric PSD P with A - M Uinv M.T P Hurwitz.

    Raises:
        StabilizabilityError: (A, M) fails the PBH stabilizability test.
        ConvergenceError: residual target not reached; carries the final
            residual norm.
    """
    a = _as_square(a, "A")
    n = a.shape[0]
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(n, -1)
    if m.shape[0] != n:
        raise ValueError(f"M has {m.shape[0]} rows, expected {n}")
    uinv = check_symmetric_psd(_as_square(uinv, "Uinv"), "Uinv")
    if uinv.shape[0] != m.shape[1]:
        raise ValueError(f"Uinv is {uinv.shape}, M has {m.shape[1]} columns")
    xg = check_symmetric_psd(_as_square(xg, "Xg"), "Xg")
    if xg.shape[0] != n:
        raise ValueError(f"Xg must be {n} x {n}, got {xg.shape}")

    bad = unstabilizable_modes(a, m)
    if bad:
        raise StabilizabilityError(
            "uncontrollable unstable modes at eigenvalues "
            + ", ".join(f"{lv:.6g}" for lv in bad)
        )

    s = m @ uinv @ m.T
    lam = np.linalg.eigvals(a)
    if lam.real.max(initial=-np.inf) < STABILITY_MARGIN:
        p = np.zeros((n, n))
    else:
        p = _riccati_ode_equilibrium(a, s, xg, rhs_tol=1e-6, max_steps=2_000_000)

    tol = residual_tol * (1.0 + np.linalg.norm(xg, "fro"))
    rnorm = np.inf
    for _ in range(max_newton):
        acl = a - s @ p
        try:
            p_next = solve_lyapunov(acl.T, xg + p @ s @ p)
        except StabilityError as exc:
            raise ConvergenceError(
                f"Newton-Kleinman iterate lost the stabilizing property: {exc}",
                residual=rnorm,
            ) from exc
        p = symmetrize(p_next)
        res = -a.T @ p - p @ a + p @ s @ p - xg
        rnorm = np.linalg.norm(res, "fro")
        if rnorm <= tol:
            break
    if rnorm > tol:
        raise ConvergenceError(
            f"Riccati residual {rnorm:.3e} above tolerance {tol:.3e}",
            residual=rnorm,
        )
    cl = np.linalg.eigvals(a - s @ p)
    if cl.size and cl.real.max() >= 0.0:
        raise ConvergenceError(
            f"solution is not stabilizing: max Re closed-loop eig "
            f"{cl.real.max():.3e}",
            residual=rnorm,
        )
    return check_symmetric_psd(p, "P", eig_tol=1e-8)


def numerical_rank(a, rel_tol=1e-9):
    """Number of singular values above rel_tol times the largest one.

    A zero matrix has rank 0.  Accepts real or complex input.
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    a = np.atleast_2d(np.asarray(a))
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if a.size == 0:
        return 0
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))
