"""State-space realizations of stationary Gaussian-process covariances.

A stationary scalar GP with rational (or rationally approximated) spectral
density admits an exact realization as a linear time-invariant SDE

    dz = F z dt + L dw,    u = H z,    w with spectral density q,

whose stationary output covariance reproduces the kernel:
k(tau) = H expm(F |tau|) Pinf H.T with F Pinf + Pinf F.T + L q L.T = 0.

Matern kernels with smoothness 1/2, 3/2, 5/2 have exact companion-form
realizations of state dimension 1, 2, 3.  The squared-exponential kernel
has a non-rational spectral density S(w) = sigma^2 sqrt(pi) ell
exp(-ell^2 w^2 / 4); it is approximated by replacing exp(-x) with a Pade
approximant in x = ell^2 w^2 / 4, spectrally factoring the resulting
rational density (keeping the strictly stable half of each root pair), and
realizing the stable factor in controllable companion form.  The diffusion
intensity q is then scaled so the realized variance H Pinf H.T equals
sigma^2 exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.interpolate

from . import numlin
from .errors import FactorizationError

__all__ = [
    "KERNEL_KINDS",
    "CovarianceSpec",
    "LtiGpRealization",
    "realize",
    "kernel_value",
    "kernel_exact",
]

KERNEL_KINDS = ("matern12", "matern32", "matern52", "se")


@dataclass(frozen=True)
class CovarianceSpec:
    """Kernel family plus hyperparameters.

    Attributes:
        kind: one of KERNEL_KINDS.
        sigma: output standard deviation, > 0.
        ell: length scale, > 0.
        se_order: (numerator, denominator) Pade degrees for the
            squared-exponential approximation; ignored for Matern kinds.
    """

    kind: str
    sigma: float
    ell: float
    se_order: tuple = (4, 8)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(
                f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}"
            )
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (np.isfinite(self.ell) and self.ell > 0):
            raise ValueError(f"ell must be positive, got {self.ell}")
        num, den = self.se_order
        if not (0 < num < den):
            raise ValueError(
                f"se_order must satisfy 0 < numerator < denominator, got {self.se_order}"
            )


@dataclass
class LtiGpRealization:
    """LTI SDE realization of a scalar stationary GP.

    Attributes:
        F: drift matrix, s x s, Hurwitz.
        L: noise input column, s x 1.
        q: scalar spectral density of the driving white noise, > 0.
        H: output row, 1 x s.
        Pinf: stationary state covariance, s x s symmetric PSD.
    """

    F: np.ndarray
    L: np.ndarray
    q: float
    H: np.ndarray
    Pinf: np.ndarray

    def __post_init__(self):
        self.F = np.atleast_2d(np.asarray(self.F, dtype=float))
        s = self.F.shape[0]
        if self.F.shape != (s, s):
            raise ValueError(f"F must be square, got {self.F.shape}")
        self.L = np.asarray(self.L, dtype=float).reshape(s, 1)
        self.H = np.asarray(self.H, dtype=float).reshape(1, s)
        self.q = float(self.q)
        if not (np.isfinite(self.q) and self.q > 0):
            raise ValueError(f"q must be positive, got {self.q}")
        lam = np.linalg.eigvals(self.F)
        if lam.real.max() > -1e-12:
            raise ValueError(
                f"F is not Hurwitz: max Re(eig) = {lam.real.max():.3e}"
            )
        self.Pinf = numlin.check_symmetric_psd(self.Pinf, "Pinf")
        res = self.F @ self.Pinf + self.Pinf @ self.F.T + self.L * self.q @ self.L.T
        rnorm = np.linalg.norm(res, "fro")
        if rnorm > 1e-9 * (1.0 + self.q):
            raise ValueError(
                f"Pinf violates the stationary Lyapunov equation: residual {rnorm:.3e}"
            )

    @property
    def dim(self):
        return self.F.shape[0]


def _matern_realization(spec):
    s2 = spec.sigma**2
    if spec.kind == "matern12":
        lam = 1.0 / spec.ell
        f = np.array([[-lam]])
        h = np.array([[1.0]])
        q = 2.0 * s2 * lam
    elif spec.kind == "matern32":
        lam = math.sqrt(3.0) / spec.ell
        f = np.array([[0.0, 1.0], [-(lam**2), -2.0 * lam]])
        h = np.array([[1.0, 0.0]])
        q = 4.0 * s2 * lam**3
    else:  # matern52
        lam = math.sqrt(5.0) / spec.ell
        f = np.array(
            [
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
                [-(lam**3), -3.0 * lam**2, -3.0 * lam],
            ]
        )
        h = np.array([[1.0, 0.0, 0.0]])
        q = (16.0 / 3.0) * s2 * lam**5
    l = np.zeros((f.shape[0], 1))
    l[-1, 0] = 1.0
    return f, l, q, h


def _stable_half(roots, what):
    """Split a negation-symmetric root set, keeping the strict left half."""
    scale = 1.0 + np.abs(roots).max(initial=0.0)
    if np.any(np.abs(roots.real) <= 1e-9 * scale):
        raise FactorizationError(
            f"{what} of the approximated spectral density has a root on the "
            f"imaginary axis; no stable/antistable split exists"
        )
    stable = roots[roots.real < 0.0]
    if 2 * len(stable) != len(roots):
        raise FactorizationError(
            f"{what} roots do not split evenly: {len(stable)} of {len(roots)} stable"
        )
    return stable


def _real_poly_from_roots(roots, what):
    coeffs = np.poly(roots)
    if np.abs(coeffs.imag).max() > 1e-8 * (1.0 + np.abs(coeffs).max()):
        raise FactorizationError(
            f"stable {what} factor has non-real coefficients; conjugate "
            f"pairing of roots failed"
        )
    return coeffs.real


def _se_realization(spec):
    """Companion realization of the Pade-factored squared-exponential."""
    num_deg, den_deg = spec.se_order
    # Pade approximant of exp(-x) about x = 0
    taylor = [(-1.0) ** k / math.factorial(k) for k in range(num_deg + den_deg + 1)]
    p_num, p_den = scipy.interpolate.pade(taylor, den_deg, num_deg)
    num_x = p_num.coefficients[::-1]  # ascending in x
    den_x = p_den.coefficients[::-1]

    # substitute x = -(ell^2 / 4) s^2, giving even polynomials in s
    def to_s_poly(coeffs_x):
        z = -(spec.ell**2) / 4.0
        cs = np.zeros(2 * (len(coeffs_x) - 1) + 1)
        for j, cj in enumerate(coeffs_x):
            cs[2 * j] = cj * z**j
        return cs  # ascending in s

    num_s = to_s_poly(num_x)
    den_s = to_s_poly(den_x)
    num_roots = np.roots(num_s[::-1])
    den_roots = np.roots(den_s[::-1])
    n_minus = _real_poly_from_roots(_stable_half(num_roots, "numerator"), "numerator")
    d_minus = _real_poly_from_roots(_stable_half(den_roots, "denominator"), "denominator")

    s_dim = den_deg
    f = np.zeros((s_dim, s_dim))
    f[:-1, 1:] = np.eye(s_dim - 1)
    f[-1, :] = -d_minus[::-1][:-1]  # ascending coefficients, monic leading dropped
    l = np.zeros((s_dim, 1))
    l[-1, 0] = 1.0
    h = np.zeros((1, s_dim))
    h[0, : len(n_minus)] = n_minus[::-1]  # ascending numerator coefficients

    # unit-q stationary covariance fixes the kernel shape; rescale q so the
    # realized variance is exactly sigma^2
    pinf_unit = numlin.solve_lyapunov(f, l @ l.T)
    var_unit = (h @ pinf_unit @ h.T).item()
    if var_unit <= 0.0:
        raise FactorizationError(
            f"spectral factor realizes non-positive variance {var_unit:.3e}"
        )
    q = spec.sigma**2 / var_unit
    return f, l, q, h


def realize(spec):
    """Build the LTI realization of a CovarianceSpec.

    State dimension is 1, 2, 3 for Matern 1/2, 3/2, 5/2 and equals the
    Pade denominator degree for the squared exponential.

    Raises:
        FactorizationError: squared-exponential factorization failed
            (root on the imaginary axis, uneven stable split).
    """
    if spec.kind == "se":
        f, l, q, h = _se_realization(spec)
    else:
        f, l, q, h = _matern_realization(spec)
    pinf = numlin.solve_lyapunov(f, l * q @ l.T)
    return LtiGpRealization(F=f, L=l, q=q, H=h, Pinf=pinf)


def kernel_value(real, tau):
    """Realized covariance H expm(F |tau|) Pinf H.T at lags tau.

    Accepts a scalar or an array of lags; returns matching shape.
    """
    taus = np.atleast_1d(np.asarray(tau, dtype=float))
    if not np.all(np.isfinite(taus)):
        raise ValueError("tau contains non-finite entries")
    hp = real.Pinf @ real.H.T
    out = np.array(
        [(real.H @ numlin.expm(real.F * abs(t)) @ hp).item() for t in taus]
    )
    return out if np.ndim(tau) else float(out[0])


def kernel_exact(spec, tau):
    """Closed-form kernel of the spec's family at lags tau.

    Matern 1/2, 3/2, 5/2 and the exact squared exponential
    sigma^2 exp(-tau^2 / ell^2).
    """
    taus = np.abs(np.atleast_1d(np.asarray(tau, dtype=float)))
    s2 = spec.sigma**2
    r = taus / spec.ell
    if spec.kind == "matern12":
        out = s2 * np.exp(-r)
    elif spec.kind == "matern32":
        a = math.sqrt(3.0) * r
        out = s2 * (1.0 + a) * np.exp(-a)
    elif spec.kind == "matern52":
        a = math.sqrt(5.0) * r
        out = s2 * (1.0 + a + a**2 / 3.0) * np.exp(-a)
    else:
        out = s2 * np.exp(-(r**2))
    return out if np.ndim(tau) else float(out[0])
