"""Exact Bayesian inference in augmented latent-force models.

Zero-order-hold discretization, Kalman filtering with Joseph-form updates,
Rauch-Tung-Striebel smoothing, the exact log marginal likelihood, and
hyperparameter fitting by derivative-free likelihood maximization.

Conventions: the belief at the first data time is the stationary prior
updated with the first observation (no prediction into it).  Missing
observations are encoded as all-NaN rows and advance the filter by
prediction only, which is how the extrapolation segment of the open-loop
experiment is handled.  ``applied_controls[k]`` is the zero-order-hold
control over the interval starting at ``times[k]``; the last entry pads
the series to equal length and is not consumed by the filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.optimize

from . import gpss, model, numlin
from .errors import (
    ConditioningError,
    ConvergenceError,
    FactorizationError,
    OptimizationError,
    StabilityError,
)

__all__ = [
    "MeasurementModel",
    "GaussianBelief",
    "TimeSeriesData",
    "FilterResult",
    "GpStateSpace",
    "FitOptions",
    "FitResult",
    "discretize",
    "kf_step",
    "rts_smooth",
    "stationary_prior",
    "run_filter",
    "log_marginal_likelihood",
    "fit_hyperparameters",
]


@dataclass
class MeasurementModel:
    """Linear-Gaussian measurement y = C g + e, e ~ N(0, R)."""

    C: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.R = numlin.check_symmetric_psd(self.R, "R")
        if self.R.shape[0] != self.C.shape[0]:
            raise ValueError(
                f"R is {self.R.shape} for {self.C.shape[0]} outputs"
            )
        if np.any(np.diag(self.R) <= 0.0):
            raise ValueError("R must have strictly positive diagonal")
        if not np.all(np.isfinite(self.C)):
            raise ValueError("C contains non-finite entries")

    @property
    def n_outputs(self):
        return self.C.shape[0]


@dataclass
class GaussianBelief:
    """Gaussian state belief (mean, cov).

    Construction checks shapes and symmetry; ``validate`` additionally
    runs the PSD eigenvalue check (kept out of the per-step hot path).
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise ValueError(
                f"cov shape {self.cov.shape} for mean of length {n}"
            )

    def validate(self):
        if not np.all(np.isfinite(self.mean)):
            raise ValueError("mean contains non-finite entries")
        numlin.check_symmetric_psd(self.cov, "cov")
        return self

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass
class TimeSeriesData:
    """Sampled multivariate series with optional per-interval controls.

    An all-NaN observation row marks a missing measurement at that time.
    """

    times: np.ndarray
    observations: np.ndarray
    applied_controls: np.ndarray = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).reshape(-1)
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.observations.shape[0] != len(self.times):
            # a single series passed as a row
            if self.observations.shape == (1, len(self.times)):
                self.observations = self.observations.T
            else:
                raise ValueError(
                    f"{self.observations.shape[0]} observation rows for "
                    f"{len(self.times)} times"
                )
        if len(self.times) and not np.all(np.isfinite(self.times)):
            raise ValueError("times contain non-finite entries")
        if np.any(np.diff(self.times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        nan_rows = np.isnan(self.observations)
        if np.any(nan_rows.any(axis=1) & ~nan_rows.all(axis=1)):
            raise ValueError("observation rows must be fully present or fully NaN")
        if self.applied_controls is not None:
            self.applied_controls = np.atleast_2d(
                np.asarray(self.applied_controls, dtype=float)
            )
            if self.applied_controls.shape[0] != len(self.times):
                raise ValueError(
                    f"{self.applied_controls.shape[0]} control rows for "
                    f"{len(self.times)} times"
                )

    def __len__(self):
        return len(self.times)

    @property
    def n_outputs(self):
        return self.observations.shape[1]

    def missing(self, k):
        return bool(np.isnan(self.observations[k]).all())

    def to_csv(self, path):
        """Write header t, y_1..y_d, c_1..c_m and one row per time."""
        d = self.n_outputs
        cols = ["t"] + [f"y_{i + 1}" for i in range(d)]
        rows = [self.times.reshape(-1, 1), self.observations]
        if self.applied_controls is not None:
            cols += [f"c_{i + 1}" for i in range(self.applied_controls.shape[1])]
            rows.append(self.applied_controls)
        table = np.hstack(rows)
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            table = np.array(
                [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
            )
        d = sum(1 for name in header if name.startswith("y_"))
        m = sum(1 for name in header if name.startswith("c_"))
        controls = table[:, 1 + d : 1 + d + m] if m else None
        return cls(
            times=table[:, 0],
            observations=table[:, 1 : 1 + d],
            applied_controls=controls,
        )


@dataclass
class GpStateSpace:
    """A bare GP realization viewed as a model with no plant block.

    Exposes the attribute subset of AugmentedLfm that the filter needs,
    so latent-only inference (GP regression) reuses the same machinery.
    """

    real: gpss.LtiGpRealization

    @property
    def A(self):
        return self.real.F

    @property
    def B(self):
        return self.real.L

    @property
    def q(self):
        return np.array([[self.real.q]])

    @property
    def M(self):
        return np.zeros((self.real.dim, 0))

    @property
    def dim(self):
        return self.real.dim

    @property
    def n_f(self):
        return 0

    @property
    def Pinf_u(self):
        return self.real.Pinf


@dataclass
class FilterResult:
    """Aligned filtering output.

    ``predicted[k]`` is the belief at times[k] before the measurement
    update (the prior itself at k = 0); ``transitions[k]`` is the Ad that
    produced it (identity at k = 0).  ``filtered[k]`` is post-update.
    """

    filtered: list
    predicted: list
    transitions: list
    loglik: float


def discretize(aug, dt):
    """ZOH discretization of an AugmentedLfm over a step of length dt.

    Returns:
        (Ad, Qd, Md): transition matrix, process-noise covariance from the
        joint Van Loan exponential, and the zero-order-hold control input
        matrix (top-right block of expm([[A, M], [0, 0]] dt)).
    """
    a, b, q, m = aug.A, aug.B, aug.q, aug.M
    ad, qd = numlin.van_loan_discretize(a, b, q, dt)
    n = a.shape[0]
    n_c = m.shape[1]
    blk = np.zeros((n + n_c, n + n_c))
    blk[:n, :n] = a * dt
    blk[:n, n:] = m * dt
    md = sla.expm(blk)[:n, n:]
    return ad, qd, md


def kf_step(belief, ad, qd, md, control, meas, y=None):
    """One predict(+update) step of the Kalman filter.

    Predicts through (Ad, Qd) with ZOH control through Md, then updates
    with y when present (Joseph-form covariance).  Returns the new belief
    and the log-density of the innovation (zero when y is absent).

    Raises:
        ConditioningError: innovation covariance not positive definite.
    """
    mean = ad @ belief.mean
    if md is not None and control is not None:
        mean = mean + md @ np.asarray(control, dtype=float).reshape(-1)
    cov = numlin.symmetrize(ad @ belief.cov @ ad.T + qd)
    loglik = 0.0
    if y is not None:
        y = np.asarray(y, dtype=float).reshape(-1)
        c, r = meas.C, meas.R
        v = y - c @ mean
        s = numlin.symmetrize(c @ cov @ c.T + r)
        try:
            cho = sla.cho_factor(s, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(
                f"innovation covariance is not positive definite: {exc}"
            ) from exc
        gain = sla.cho_solve(cho, c @ cov).T
        mean = mean + gain @ v
        ikc = np.eye(len(mean)) - gain @ c
        cov = numlin.symmetrize(ikc @ cov @ ikc.T + gain @ r @ gain.T)
        logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
        maha = v @ sla.cho_solve(cho, v)
        loglik = -0.5 * (len(y) * math.log(2.0 * math.pi) + logdet + maha)
    return GaussianBelief(mean, cov), float(loglik)


def rts_smooth(filtered, predicted, transitions):
    """Backward Rauch-Tung-Striebel pass over aligned filter output.

    Args:
        filtered, predicted, transitions: as produced by ``run_filter``.

    Returns:
        List of smoothed beliefs; the last equals the last filtered one.

    Raises:
        ConditioningError: singular prediction covariance.
    """
    n = len(filtered)
    if not (len(predicted) == n and len(transitions) == n):
        raise ValueError("filtered/predicted/transition sequences must align")
    if n == 0:
        return []
    smoothed = [None] * n
    smoothed[-1] = filtered[-1]
    for k in range(n - 2, -1, -1):
        pred = predicted[k + 1]
        ad = transitions[k + 1]
        try:
            # G = P_f Ad' P_pred^-1 via a symmetric solve
            gain = sla.solve(pred.cov, ad @ filtered[k].cov, assume_a="sym").T
        except np.linalg.LinAlgError as exc:
            raise ConditioningError(
                f"prediction covariance singular at step {k + 1}: {exc}"
            ) from exc
        mean = filtered[k].mean + gain @ (smoothed[k + 1].mean - pred.mean)
        cov = numlin.symmetrize(
            filtered[k].cov + gain @ (smoothed[k + 1].cov - pred.cov) @ gain.T
        )
        smoothed[k] = GaussianBelief(mean, cov)
    return smoothed


def stationary_prior(aug, phys_var=100.0):
    """Zero-mean prior: weak diagonal on the plant, Pinf on the latents."""
    cov = np.zeros((aug.dim, aug.dim))
    cov[: aug.n_f, : aug.n_f] = phys_var * np.eye(aug.n_f)
    cov[aug.n_f :, aug.n_f :] = aug.Pinf_u
    return GaussianBelief(np.zeros(aug.dim), cov)


def _step_matrices(aug, dts):
    """Cache of (Ad, Qd, Md) per distinct step length."""
    cache = {}
    for dt in dts:
        key = round(float(dt), 12)
        if key not in cache:
            cache[key] = discretize(aug, dt)
    return cache


def run_filter(aug, meas, data, prior=None, phys_var=100.0):
    """Kalman-filter a series through an augmented model.

    ``meas.C`` must have the full augmented width.  Controls, when present
    in the data, enter the prediction over their interval.

    Returns:
        FilterResult with aligned filtered/predicted/transition sequences.
    """
    if meas.C.shape[1] != aug.dim:
        raise ValueError(
            f"meas.C has width {meas.C.shape[1]}, expected {aug.dim}"
        )
    if prior is None:
        prior = stationary_prior(aug, phys_var)
    n = len(data)
    filtered, predicted, transitions = [], [], []
    if n == 0:
        return FilterResult(filtered, predicted, transitions, 0.0)
    cache = _step_matrices(aug, np.diff(data.times))
    eye = np.eye(aug.dim)

    belief = prior
    loglik = 0.0
    for k in range(n):
        if k == 0:
            pred, ad = prior, eye
        else:
            dt = round(float(data.times[k] - data.times[k - 1]), 12)
            ad, qd, md = cache[dt]
            control = (
                data.applied_controls[k - 1]
                if data.applied_controls is not None
                else None
            )
            pred, _ = kf_step(belief, ad, qd, md, control, meas, y=None)
        y = None if data.missing(k) else data.observations[k]
        if y is None:
            belief = pred
        else:
            v = y - meas.C @ pred.mean
            s = numlin.symmetrize(meas.C @ pred.cov @ meas.C.T + meas.R)
            try:
                cho = sla.cho_factor(s, lower=True)
            except np.linalg.LinAlgError as exc:
                raise ConditioningError(
                    f"innovation covariance not positive definite at step {k}: {exc}"
                ) from exc
            gain = sla.cho_solve(cho, meas.C @ pred.cov).T
            mean = pred.mean + gain @ v
            ikc = eye - gain @ meas.C
            cov = numlin.symmetrize(ikc @ pred.cov @ ikc.T + gain @ meas.R @ gain.T)
            belief = GaussianBelief(mean, cov)
            logdet = 2.0 * np.sum(np.log(np.diag(cho[0])))
            loglik += -0.5 * (
                len(y) * math.log(2.0 * math.pi) + logdet + v @ sla.cho_solve(cho, v)
            )
        filtered.append(belief)
        predicted.append(pred)
        transitions.append(ad)
    return FilterResult(filtered, predicted, transitions, float(loglik))


def log_marginal_likelihood(data, spec, phys, meas):
    """Exact log p(y_1..y_n) for a GP prior spec on the force channels.

    With ``phys`` present, one realization of ``spec`` drives every force
    channel of the plant and ``meas.C`` maps the physical output (width
    n_f or full augmented width).  With ``phys`` None the GP itself is
    observed and ``meas.C`` is d x 1.
    """
    if len(data) == 0:
        return 0.0
    real = gpss.realize(spec)
    if phys is None:
        if meas.C.shape[1] != 1:
            raise ValueError(
                "latent-only models observe the scalar GP output; meas.C "
                f"must have one column, got {meas.C.shape}"
            )
        ss = GpStateSpace(real)
        meas = MeasurementModel(C=meas.C @ real.H, R=meas.R)
        return run_filter(ss, meas, data).loglik

    aug = model.augment(phys, [real] * phys.n_forces)
    if meas.C.shape[1] == phys.n_f:
        cfull = np.hstack([meas.C, np.zeros((meas.C.shape[0], aug.n_u))])
        meas = MeasurementModel(C=cfull, R=meas.R)
    return run_filter(aug, meas, data).loglik


@dataclass
class FitOptions:
    """Multi-start simplex search controls."""

    ell_fractions: tuple = (1.0 / 20.0, 1.0 / 5.0, 1.0 / 2.0)
    xatol: float = 1e-4
    fatol: float = 1e-6
    maxiter: int = 200


@dataclass
class FitResult:
    """Fitted spec plus optimizer diagnostics."""

    spec: gpss.CovarianceSpec
    loglik: float
    n_iterations: int
    n_evaluations: int
    starts: list = field(default_factory=list)


def fit_hyperparameters(data, spec_template, phys, meas, opts=None):
    """Maximize the marginal likelihood over (log sigma, log ell).

    Nelder-Mead from three starts: sigma from the data standard deviation,
    length scales at fixed fractions of the observed time span.

    Returns:
        FitResult; ``spec`` is the template with fitted sigma and ell.

    Raises:
        OptimizationError: no start produced a finite likelihood.
    """
    if len(data) == 0:
        raise ValueError("cannot fit hyperparameters on empty data")
    opts = opts or FitOptions()
    obs = data.observations[~np.isnan(data.observations).any(axis=1)]
    sigma0 = max(float(np.std(obs)) if len(obs) else 0.0, 1e-3)
    span = float(data.times[-1] - data.times[0]) if len(data) > 1 else 1.0

    def objective(theta):
        log_sigma, log_ell = theta
        if abs(log_sigma) > 25.0 or abs(log_ell) > 25.0:
            return 1e12
        trial = replace(
            spec_template, sigma=math.exp(log_sigma), ell=math.exp(log_ell)
        )
        try:
            return -log_marginal_likelihood(data, trial, phys, meas)
        except (
            ConditioningError,
            ConvergenceError,
            FactorizationError,
            StabilityError,
            np.linalg.LinAlgError,
        ):
            return 1e12

    best = None
    starts = []
    total_iter = 0
    total_eval = 0
    for frac in opts.ell_fractions:
        x0 = np.array([math.log(sigma0), math.log(max(span * frac, 1e-6))])
        res = scipy.optimize.minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "xatol": opts.xatol,
                "fatol": opts.fatol,
                "maxiter": opts.maxiter,
                "maxfev": 4 * opts.maxiter,
            },
        )
        total_iter += res.nit
        total_eval += res.nfev
        starts.append(
            {
                "log_sigma0": x0[0],
                "log_ell0": x0[1],
                "final_objective": float(res.fun),
                "iterations": int(res.nit),
            }
        )
        if res.fun < 1e11 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizationError(
            "every optimizer start failed to produce a finite likelihood; "
            f"starts: {starts}"
        )
    fitted = replace(
        spec_template, sigma=math.exp(best.x[0]), ell=math.exp(best.x[1])
    )
    return FitResult(
        spec=fitted,
        loglik=-float(best.fun),
        n_iterations=total_iter,
        n_evaluations=total_eval,
        starts=starts,
    )
