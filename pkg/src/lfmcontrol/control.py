"""LQ control synthesis for latent-force models.

The plant cost is lifted onto the augmented state with zero weight on the
latent block, so the optimal feedback acts on the joint state estimate:
the physical-block gain coincides exactly with the force-free LQR gain,
and the latent-block gain anticipates the estimated force.  Four routes
to the same controller are provided and cross-checked in the tests:
backward Riccati integration (full and block-partitioned), the algebraic
Riccati equation on the full model, and the physical ARE plus one
Sylvester equation for the cross term.

``closed_loop_simulate`` runs the certainty-equivalence cascade: exact
ZOH truth propagation on a fine grid, Kalman filtering at measurement
times with the applied control fed back into the prediction, and state
feedback on the filtered estimate with zero-order hold between samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import infer, model, numlin, systheory
from .errors import IntegrationError, StabilizabilityError

__all__ = [
    "CostSpec",
    "LqrSolution",
    "ScenarioTruth",
    "Schedule",
    "TrajectoryRecord",
    "solve_finite_horizon",
    "solve_finite_horizon_partitioned",
    "solve_stationary",
    "gain_via_sylvester",
    "basic_lqr_gain",
    "closed_loop_simulate",
]

BLOWUP_NORM = 1e12


@dataclass
class CostSpec:
    """Quadratic cost: integral of f'Xf + c'Uc, terminal f'Phi f.

    X and Phi penalize the physical state only; they are lifted with zero
    latent weight when paired with an augmented model.  U must be
    positive definite since its inverse enters the gain.
    """

    X: np.ndarray
    U: np.ndarray
    Phi: np.ndarray = None
    horizon: float = math.inf

    def __post_init__(self):
        self.X = numlin.check_symmetric_psd(self.X, "X")
        self.U = numlin.check_symmetric_psd(self.U, "U")
        if np.linalg.eigvalsh(self.U)[0] <= 0.0:
            raise ValueError("U must be positive definite")
        if self.Phi is None:
            self.Phi = np.zeros_like(self.X)
        self.Phi = numlin.check_symmetric_psd(self.Phi, "Phi")
        if self.Phi.shape != self.X.shape:
            raise ValueError(
                f"Phi is {self.Phi.shape}, X is {self.X.shape}"
            )
        if not self.horizon > 0.0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def U_inv(self):
        return np.linalg.inv(self.U)


@dataclass
class LqrSolution:
    """Riccati solution plus feedback gain.

    Stationary mode carries a single (P, gain) pair; finite-horizon mode
    additionally carries trajectories on the solve grid, with P and gain
    taken at the first grid point.  The blocks of P are addressable
    through Pf / P12 / P22 using the stored physical dimension.
    """

    P: np.ndarray
    gain: np.ndarray
    mode: str
    n_f: int
    grid: np.ndarray = None
    P_traj: list = None
    gain_traj: list = None

    def __post_init__(self):
        self.P = numlin.check_symmetric_psd(self.P, "P")
        self.gain = np.atleast_2d(np.asarray(self.gain, dtype=float))
        if self.mode not in ("stationary", "finite-horizon"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def Pf(self):
        return self.P[: self.n_f, : self.n_f]

    @property
    def P12(self):
        return self.P[: self.n_f, self.n_f :]

    @property
    def P22(self):
        return self.P[self.n_f :, self.n_f :]


def _system_view(obj):
    """(A, M, n_f, n_u) for an augmented model or a bare plant."""
    if isinstance(obj, model.AugmentedLfm):
        return obj.A, obj.M, obj.n_f, obj.n_u
    if isinstance(obj, model.LtiPhysicalSystem):
        return obj.Af, obj.Mf, obj.n_f, 0
    raise TypeError(f"expected AugmentedLfm or LtiPhysicalSystem, got {type(obj)}")


def _lift_cost(cost, a, m, n_f, n_u):
    """Zero-padded penalties and the control-weighted input square."""
    n = n_f + n_u
    if cost.X.shape[0] != n_f:
        raise ValueError(
            f"X is {cost.X.shape} for physical dimension {n_f}"
        )
    if cost.U.shape[0] != m.shape[1]:
        raise ValueError(
            f"U is {cost.U.shape} for {m.shape[1]} control channels"
        )
    xg = np.zeros((n, n))
    xg[:n_f, :n_f] = cost.X
    phig = np.zeros((n, n))
    phig[:n_f, :n_f] = cost.Phi
    uinv = cost.U_inv
    s = m @ uinv @ m.T
    return xg, phig, uinv, s


def _check_grid(grid, horizon):
    grid = np.asarray(grid, dtype=float).reshape(-1)
    if len(grid) < 2:
        raise ValueError("grid needs at least two points")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if not math.isfinite(horizon):
        raise ValueError("finite-horizon solve requires a finite cost horizon")
    if abs(grid[-1] - horizon) > 1e-9 * max(1.0, abs(horizon)):
        raise ValueError(
            f"grid must end at the horizon {horizon}, ends at {grid[-1]}"
        )
    return grid


def _rk4_backward(rhs, state, span, h_max):
    """Integrate d(state)/dtau = rhs(state) over span with fixed RK4 steps.

    ``state`` is a tuple of matrices; blow-up past BLOWUP_NORM raises.
    """
    n_sub = max(1, int(math.ceil(span / h_max - 1e-12)))
    h = span / n_sub
    for _ in range(n_sub):
        k1 = rhs(state)
        k2 = rhs(tuple(s + 0.5 * h * k for s, k in zip(state, k1)))
        k3 = rhs(tuple(s + 0.5 * h * k for s, k in zip(state, k2)))
        k4 = rhs(tuple(s + h * k for s, k in zip(state, k3)))
        state = tuple(
            s + (h / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
        if any(np.linalg.norm(s, "fro") > BLOWUP_NORM for s in state):
            raise IntegrationError(
                "backward Riccati integration blew up; the horizon or cost "
                "is out of reach for the fixed RK4 step"
            )
    return state


def _finite_horizon_core(sysmat, cost, grid, rhs, terminal, assemble):
    """Shared backward sweep: integrate from the horizon, store at grid."""
    grid = _check_grid(grid, cost.horizon)
    h_max = numlin.riccati_step_size(sysmat)
    taus = cost.horizon - grid[::-1]
    state = terminal
    stored = [assemble(state)]
    for j in range(len(taus) - 1):
        state = _rk4_backward(rhs, state, taus[j + 1] - taus[j], h_max)
        stored.append(assemble(state))
    stored.reverse()
    return grid, stored


def solve_finite_horizon(aug, cost, grid):
    """Backward RK4 on the lifted Riccati equation over a time grid.

    Returns:
        LqrSolution in finite-horizon mode; P_traj[j] and gain_traj[j]
        correspond to grid[j], with P(T) equal to the terminal penalty.

    Raises:
        IntegrationError: trajectory norm blow-up.
    """
    a, m, n_f, n_u = _system_view(aug)
    xg, phig, uinv, s = _lift_cost(cost, a, m, n_f, n_u)

    def rhs(state):
        (p,) = state
        return (numlin.symmetrize(a.T @ p + p @ a - p @ s @ p + xg),)

    grid, stored = _finite_horizon_core(
        a, cost, grid, rhs, (phig,), lambda st: numlin.symmetrize(st[0])
    )
    p_traj = [numlin.check_symmetric_psd(p, "P(t)") for p in stored]
    gain_traj = [uinv @ m.T @ p for p in p_traj]
    return LqrSolution(
        P=p_traj[0],
        gain=gain_traj[0],
        mode="finite-horizon",
        n_f=n_f,
        grid=grid,
        P_traj=p_traj,
        gain_traj=gain_traj,
    )


def solve_finite_horizon_partitioned(aug, cost, grid):
    """Backward RK4 on the three block Riccati ODEs.

    The physical block P11 evolves autonomously (it is the force-free
    Riccati solution); P12 is driven by P11 through the coupling; P22 by
    P12.  Reassembles the full P per grid point.
    """
    if not isinstance(aug, model.AugmentedLfm):
        raise TypeError("partitioned solve needs an augmented model")
    af, au, bc = aug.Af, aug.Au, aug.coupling
    mf = aug.Mf
    n_f, n_u = aug.n_f, aug.n_u
    _, _, uinv, _ = _lift_cost(cost, aug.A, aug.M, n_f, n_u)
    sf = mf @ uinv @ mf.T
    x = cost.X

    def rhs(state):
        p11, p12, p22 = state
        d11 = numlin.symmetrize(af.T @ p11 + p11 @ af - p11 @ sf @ p11 + x)
        d12 = af.T @ p12 + p11 @ bc + p12 @ au - p11 @ sf @ p12
        d22 = numlin.symmetrize(
            bc.T @ p12 + p12.T @ bc + au.T @ p22 + p22 @ au - p12.T @ sf @ p12
        )
        return d11, d12, d22

    def assemble(state):
        p11, p12, p22 = state
        return numlin.symmetrize(
            np.block([[p11, p12], [p12.T, p22]])
        )

    terminal = (cost.Phi.copy(), np.zeros((n_f, n_u)), np.zeros((n_u, n_u)))
    grid, stored = _finite_horizon_core(aug.A, cost, grid, rhs, terminal, assemble)
    p_traj = [numlin.check_symmetric_psd(p, "P(t)") for p in stored]
    gain_traj = [uinv @ aug.M.T @ p for p in p_traj]
    return LqrSolution(
        P=p_traj[0],
        gain=gain_traj[0],
        mode="finite-horizon",
        n_f=n_f,
        grid=grid,
        P_traj=p_traj,
        gain_traj=gain_traj,
    )


def _mode_decoupled(aug, cost):
    """True when per-mode AREs reproduce the full solve exactly."""
    if not isinstance(aug, model.AugmentedLfm) or aug.block_structure is None:
        return False
    for mat in (cost.X, cost.U):
        if np.any(mat != np.diag(np.diag(mat))):
            return False
    return True


def _stationary_blocks(aug, cost):
    """One small ARE per decoupled mode block, assembled exactly."""
    n = aug.dim
    mf = aug.Mf
    p_full = np.zeros((n, n))
    gain = np.zeros((mf.shape[1], n))
    for idx in aug.block_structure:
        idx = np.asarray(idx)
        row = int(idx[0])
        cols = np.nonzero(mf[row, :])[0]
        if len(cols) != 1:
            raise ValueError(
                f"mode row {row} is not actuated by exactly one control channel"
            )
        ch = int(cols[0])
        a_b = aug.A[np.ix_(idx, idx)]
        m_b = aug.M[idx, ch].reshape(-1, 1)
        x_b = np.zeros((len(idx), len(idx)))
        x_b[0, 0] = cost.X[row, row]
        uinv_b = np.array([[1.0 / cost.U[ch, ch]]])
        p_b = numlin.solve_care(a_b, m_b, uinv_b, x_b)
        p_full[np.ix_(idx, idx)] = p_b
        gain[ch, idx] = (uinv_b @ m_b.T @ p_b)[0]
    return p_full, gain


def solve_stationary(aug, cost, use_blocks=None):
    """Infinite-horizon LQ gain from the algebraic Riccati equation.

    For mode-decoupled models with diagonal X and U the solve splits into
    one small ARE per mode block (exact, not approximate); pass
    ``use_blocks=False`` to force the full solve.

    Raises:
        StabilizabilityError: the physical pair (Af, Mf) fails PBH.
    """
    a, m, n_f, n_u = _system_view(aug)
    xg, _, uinv, _ = _lift_cost(cost, a, m, n_f, n_u)
    af = a[:n_f, :n_f]
    mf = m[:n_f, :]
    pbh = systheory.pbh_stabilizability(af, mf)
    if not pbh.ok:
        raise StabilizabilityError(
            f"physical pair is not stabilizable; PBH witnesses {pbh.witnesses}"
        )
    if use_blocks is None:
        use_blocks = _mode_decoupled(aug, cost)
    if use_blocks:
        p, gain = _stationary_blocks(aug, cost)
    else:
        p = numlin.solve_care(a, m, uinv, xg)
        gain = uinv @ m.T @ p
    return LqrSolution(P=p, gain=gain, mode="stationary", n_f=n_f)


def gain_via_sylvester(aug, cost):
    """Stationary gain from the physical ARE plus one Sylvester equation.

    P_f solves the force-free ARE; the cross block P12 solves
    (P_f S_f - Af') P12 - P12 Au = P_f (Bf Cu), whose spectra are
    disjoint whenever the physical closed loop and Au are stable.  The
    latent-latent block, which the gain never touches, is completed from
    the corresponding Lyapunov equation so the full P is comparable with
    solve_stationary's.
    """
    if not isinstance(aug, model.AugmentedLfm):
        raise TypeError("gain_via_sylvester needs an augmented model")
    af, au, bc, mf = aug.Af, aug.Au, aug.coupling, aug.Mf
    n_f, n_u = aug.n_f, aug.n_u
    _, _, uinv, _ = _lift_cost(cost, aug.A, aug.M, n_f, n_u)
    pf = numlin.solve_care(af, mf, uinv, cost.X)
    sf = mf @ uinv @ mf.T
    p12 = numlin.solve_sylvester(pf @ sf - af.T, au, pf @ bc)
    # ARE (2,2) block: Au' P22 + P22 Au = -(Bc' P12 + P12' Bc - P12' Sf P12)
    q22 = numlin.symmetrize(bc.T @ p12 + p12.T @ bc - p12.T @ sf @ p12)
    p22 = numlin.symmetrize(sla.solve_continuous_lyapunov(au.T, -q22))
    p = np.block([[pf, p12], [p12.T, p22]])
    gain = np.hstack([uinv @ mf.T @ pf, uinv @ mf.T @ p12])
    return LqrSolution(P=numlin.symmetrize(p), gain=gain, mode="stationary", n_f=n_f)


def basic_lqr_gain(phys, cost, n_latent=0):
    """Force-free LQR gain, zero-padded over n_latent latent states.

    The baseline controller: designed as if u were absent, then applied
    to the augmented estimate (where the padding makes it ignore the
    estimated force).
    """
    if not isinstance(phys, model.LtiPhysicalSystem):
        raise TypeError("basic_lqr_gain needs the bare physical plant")
    uinv = cost.U_inv
    if cost.U.shape[0] != phys.n_controls:
        raise ValueError(
            f"U is {cost.U.shape} for {phys.n_controls} control channels"
        )
    pf = numlin.solve_care(phys.Af, phys.Mf, uinv, cost.X)
    kf = uinv @ phys.Mf.T @ pf
    n = phys.n_f + n_latent
    p = np.zeros((n, n))
    p[: phys.n_f, : phys.n_f] = pf
    gain = np.hstack([kf, np.zeros((kf.shape[0], n_latent))])
    return LqrSolution(P=p, gain=gain, mode="stationary", n_f=phys.n_f)


@dataclass
class ScenarioTruth:
    """Ground truth for simulation: the real plant, the real force signal
    as a function of time, and the initial physical state."""

    phys: model.LtiPhysicalSystem
    u_func: object
    x0: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape[0] != self.phys.n_f:
            raise ValueError(
                f"x0 has length {self.x0.shape[0]}, plant has {self.phys.n_f} states"
            )

    def force(self, t):
        u = np.asarray(self.u_func(t), dtype=float).reshape(-1)
        if u.shape[0] != self.phys.n_forces:
            raise ValueError(
                f"u(t) has length {u.shape[0]}, plant has {self.phys.n_forces} channels"
            )
        return u


@dataclass
class Schedule:
    """Timing of a closed-loop run.

    Measurements arrive every dt_meas on [t_start, t_end]; feedback is
    applied from the first measurement at or after control_on, held
    between measurements; the truth integrates exactly with ZOH inputs on
    substeps of roughly dt_sim (snapped so dt_meas is a multiple).
    """

    t_end: float
    dt_meas: float
    control_on: float
    t_start: float = 0.0
    dt_sim: float = 1e-3

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")
        if not (self.dt_meas > 0 and self.dt_sim > 0):
            raise ValueError("dt_meas and dt_sim must be positive")
        steps = (self.t_end - self.t_start) / self.dt_meas
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(
                f"window {self.t_end - self.t_start} is not a multiple of "
                f"dt_meas {self.dt_meas}"
            )

    @property
    def n_steps(self):
        return int(round((self.t_end - self.t_start) / self.dt_meas))

    @property
    def n_substeps(self):
        return max(1, int(round(self.dt_meas / self.dt_sim)))


@dataclass
class TrajectoryRecord:
    """Per-measurement-time record of a simulated run.

    ``observations`` keeps the noisy measurements (used for fitting and
    for restarting filters) but is not part of the CSV schema.
    """

    times: np.ndarray
    f_true: np.ndarray
    f_est: np.ndarray
    f_var: np.ndarray
    u_true: np.ndarray
    u_est: np.ndarray
    u_var: np.ndarray
    controls: np.ndarray
    observations: np.ndarray
    tracking_error: float
    final_belief: object = None

    def to_csv(self, path):
        blocks = [
            ("f_true", self.f_true),
            ("f_est", self.f_est),
            ("f_var", self.f_var),
            ("u_true", self.u_true),
            ("u_est", self.u_est),
            ("u_var", self.u_var),
            ("c", self.controls),
        ]
        cols = ["t"]
        for name, arr in blocks:
            cols += [f"{name}_{i + 1}" for i in range(arr.shape[1])]
        table = np.hstack([self.times.reshape(-1, 1)] + [arr for _, arr in blocks])
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in table:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _zoh_truth_maps(phys, h):
    """Exact ZOH step maps for the plant over substep h."""
    n_f, p, m = phys.n_f, phys.n_forces, phys.n_controls
    blk = np.zeros((n_f + p + m, n_f + p + m))
    blk[:n_f, :n_f] = phys.Af * h
    blk[:n_f, n_f : n_f + p] = phys.Bf * h
    blk[:n_f, n_f + p :] = phys.Mf * h
    e = sla.expm(blk)
    return e[:n_f, :n_f], e[:n_f, n_f : n_f + p], e[:n_f, n_f + p :]


def closed_loop_simulate(
    truth,
    aug,
    gain,
    meas,
    schedule,
    rng,
    noise_std=None,
    belief0=None,
):
    """Certainty-equivalence closed loop (or open loop when disabled).

    Args:
        truth: ScenarioTruth with the real plant and force.
        aug: AugmentedLfm for the filter, or None to skip estimation
            entirely (pure truth simulation with noisy measurements).
        gain: feedback matrix over the augmented state, or None for no
            control; applied as c = -gain @ estimate from the first
            measurement at or after schedule.control_on.
        meas: MeasurementModel; C must have full augmented width when aug
            is given.  Filter noise covariance is meas.R.
        rng: numpy Generator; consumes exactly one standard-normal vector
            of output dimension per measurement time, so runs with cloned
            generator states see identical noise.
        noise_std: true measurement noise scale (scalar or per-output);
            defaults to sqrt(diag(R)).  Zero simulates exact measurements
            while the filter still assumes R.
        belief0: belief at t_start before the first update; defaults to
            the model's stationary prior.

    Returns:
        TrajectoryRecord sampled at measurement times.  tracking_error is
        the mean of |Cf f_true| over measurements in the control window
        (NaN when the window is empty).
    """
    phys = truth.phys
    n_f, p, m_ctrl = phys.n_f, phys.n_forces, phys.n_controls
    d = meas.n_outputs
    if noise_std is None:
        noise_vec = np.sqrt(np.diag(meas.R))
    else:
        noise_vec = np.broadcast_to(np.asarray(noise_std, dtype=float), (d,))
    c_phys = meas.C[:, :n_f]

    n_steps = schedule.n_steps
    n_sub = schedule.n_substeps
    h = schedule.dt_meas / n_sub
    ad_f, bd, mdc = _zoh_truth_maps(phys, h)

    filtering = aug is not None
    if filtering:
        if meas.C.shape[1] != aug.dim:
            raise ValueError(
                f"meas.C has width {meas.C.shape[1]}, expected {aug.dim}"
            )
        ad, qd, md = infer.discretize(aug, schedule.dt_meas)
        belief = belief0 if belief0 is not None else infer.stationary_prior(aug)
        cu = aug.Cu
        n_u = aug.n_u
    if gain is not None:
        gain = np.atleast_2d(np.asarray(gain, dtype=float))

    times = schedule.t_start + schedule.dt_meas * np.arange(n_steps + 1)
    f_true = np.zeros((n_steps + 1, n_f))
    f_est = np.full((n_steps + 1, n_f), np.nan)
    f_var = np.full((n_steps + 1, n_f), np.nan)
    u_true = np.zeros((n_steps + 1, p))
    u_est = np.full((n_steps + 1, p), np.nan)
    u_var = np.full((n_steps + 1, p), np.nan)
    controls = np.zeros((n_steps + 1, m_ctrl))
    observations = np.zeros((n_steps + 1, d))

    f = truth.x0.copy()
    c_applied = np.zeros(m_ctrl)
    for k in range(n_steps + 1):
        t_k = times[k]
        if k > 0 and filtering:
            control = c_applied if np.any(c_applied) else None
            belief, _ = infer.kf_step(belief, ad, qd, md, control, meas, y=None)
        y = c_phys @ f + noise_vec * rng.standard_normal(d)
        if filtering:
            belief, _ = infer.kf_step(
                belief,
                np.eye(aug.dim),
                np.zeros((aug.dim, aug.dim)),
                None,
                None,
                meas,
                y=y,
            )
            f_est[k] = belief.mean[:n_f]
            f_var[k] = np.diag(belief.cov)[:n_f]
            u_est[k] = cu @ belief.mean[n_f:]
            u_var[k] = np.diag(cu @ belief.cov[n_f:, n_f:] @ cu.T)

        active = gain is not None and filtering and t_k >= schedule.control_on - 1e-9
        c_k = -(gain @ belief.mean) if active else np.zeros(m_ctrl)

        f_true[k] = f
        u_true[k] = truth.force(t_k)
        controls[k] = c_k
        observations[k] = y

        if k < n_steps:
            c_applied = c_k
            apply_c = np.any(c_k)
            for j in range(n_sub):
                u_j = truth.force(t_k + j * h)
                f = ad_f @ f + bd @ u_j
                if apply_c:
                    f = f + mdc @ c_k

    in_window = times >= schedule.control_on - 1e-9
    if np.any(in_window):
        track = np.linalg.norm(f_true[in_window] @ phys.Cf.T, axis=1)
        tracking_error = float(track.mean())
    else:
        tracking_error = float("nan")
    return TrajectoryRecord(
        times=times,
        f_true=f_true,
        f_est=f_est,
        f_var=f_var,
        u_true=u_true,
        u_est=u_est,
        u_var=u_var,
        controls=controls,
        observations=observations,
        tracking_error=tracking_error,
        final_belief=belief if filtering else None,
    )
