"""End-to-end experiment runners behind the CLI subcommands.

Each runner takes an ExperimentConfig, simulates with a seeded generator,
and writes CSV/JSON artifacts into an output directory.  All
floating-point serialization goes through repr, and JSON keys are
sorted, so a fixed config and seed produce byte-identical outputs.

The paired controller comparisons (basic vs force-aware) run from cloned
generator states so both see the same measurement noise.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import replace

import numpy as np

from . import control, gpss, infer, model, numlin, systheory
from .config import ExperimentConfig


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path, header, columns):
    table = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _clone_rng(rng):
    out = np.random.default_rng()
    out.bit_generator.state = rng.bit_generator.state
    return out


def spring_truth(cfg):
    """Spring scenario with the smooth two-tone test force."""
    phys = model.build_spring(damping=cfg.damping, stiffness=cfg.stiffness)
    amp = cfg.force_amplitude

    def u_func(t):
        return amp * (math.sin(0.23 * t) + math.sin(0.13 * t))

    return control.ScenarioTruth(phys=phys, u_func=u_func, x0=np.zeros(2))


def _fit_on_window(cfg, rec, phys):
    """Fit the GP template on the training window of a simulated record."""
    mask = rec.times <= cfg.train_end + 1e-9
    times = rec.times[mask][:: cfg.fit_subsample]
    obs = rec.observations[mask][:: cfg.fit_subsample]
    data = infer.TimeSeriesData(times=times, observations=obs)
    r_fit = max(cfg.noise_std, 1e-6) ** 2
    meas = infer.MeasurementModel(C=phys.Cf, R=[[r_fit]])
    return infer.fit_hyperparameters(data, cfg.kernel_spec(), phys, meas)


def run_spring_open_loop(cfg, out_dir):
    """Learn the force from data, smooth over the full window, report.

    Measurements stop at meas_end; the smoother extrapolates to the
    horizon, where the force estimate reverts to the prior mean.
    """
    truth = spring_truth(cfg)
    phys = truth.phys
    rng = np.random.default_rng(cfg.seed)
    sched = control.Schedule(
        t_end=cfg.horizon,
        dt_meas=cfg.dt,
        control_on=2.0 * cfg.horizon,
        dt_sim=cfg.dt_sim,
    )
    meas_sim = infer.MeasurementModel(
        C=phys.Cf, R=[[max(cfg.noise_std, 1e-6) ** 2]]
    )
    rec = control.closed_loop_simulate(
        truth, None, None, meas_sim, sched, rng, noise_std=cfg.noise_std
    )

    fit = _fit_on_window(cfg, rec, phys)
    aug = model.augment(phys, [gpss.realize(fit.spec)])

    obs = rec.observations.copy()
    obs[rec.times > cfg.meas_end + 1e-9] = np.nan
    data = infer.TimeSeriesData(times=rec.times, observations=obs)
    meas_full = infer.MeasurementModel(C=aug.C, R=meas_sim.R)
    out = infer.run_filter(aug, meas_full, data)
    smoothed = infer.rts_smooth(out.filtered, out.predicted, out.transitions)

    c_out = aug.C
    c_lat = np.hstack([np.zeros((1, aug.n_f)), aug.Cu])
    f_est = np.array([(c_out @ b.mean).item() for b in smoothed])
    f_std = np.sqrt([(c_out @ b.cov @ c_out.T).item() for b in smoothed])
    u_est = np.array([(c_lat @ b.mean).item() for b in smoothed])
    u_std = np.sqrt([(c_lat @ b.cov @ c_lat.T).item() for b in smoothed])
    f_true = rec.f_true @ phys.Cf.T.reshape(-1)
    u_true = rec.u_true[:, 0]

    csv_path = os.path.join(out_dir, "open_loop.csv")
    _write_csv(
        csv_path,
        ["t", "f_true", "f_est", "f_std", "u_true", "u_est", "u_std"],
        [rec.times, f_true, f_est, f_std, u_true, u_est, u_std],
    )

    def rmse(err, mask):
        return float(np.sqrt(np.mean(err[mask] ** 2)))

    measured = rec.times <= cfg.meas_end + 1e-9
    summary = {
        "fitted": {
            "kind": fit.spec.kind,
            "sigma": fit.spec.sigma,
            "ell": fit.spec.ell,
            "loglik": fit.loglik,
            "evaluations": fit.n_evaluations,
        },
        "rmse_f_measured": rmse(f_est - f_true, measured),
        "rmse_f_extrapolated": rmse(f_est - f_true, ~measured),
        "rmse_u_measured": rmse(u_est - u_true, measured),
        "rmse_u_extrapolated": rmse(u_est - u_true, ~measured),
        "n_samples": int(len(rec.times)),
        "seed": cfg.seed,
    }
    json_path = os.path.join(out_dir, "open_loop_summary.json")
    _write_json(json_path, summary)
    return {
        "trajectory_csv": csv_path,
        "summary_json": json_path,
        "summary": summary,
    }


def _advance_truth(truth, f, t0, dt_meas, n_sub):
    """One measurement interval of the exact ZOH truth recursion."""
    h = dt_meas / n_sub
    ad_f, bd, _ = control._zoh_truth_maps(truth.phys, h)
    for j in range(n_sub):
        u_j = truth.force(t0 + j * h)
        f = ad_f @ f + bd @ u_j
    return f


def _spring_control_phases(cfg, gains_from):
    """Shared phases of the spring control experiment.

    Phase 1 simulates [0, train_end) open loop, fits the GP, filters the
    phase-1 data with the fitted model, and bridges truth and belief to
    train_end.  ``gains_from`` maps the fitted augmented model to a dict
    of named gains; each named controller then runs the closed-loop phase
    from an identical state and generator clone.
    """
    truth = spring_truth(cfg)
    phys = truth.phys
    rng = np.random.default_rng(cfg.seed)
    meas_sim = infer.MeasurementModel(
        C=phys.Cf, R=[[max(cfg.noise_std, 1e-6) ** 2]]
    )
    sched1 = control.Schedule(
        t_end=cfg.train_end - cfg.dt,
        dt_meas=cfg.dt,
        control_on=2.0 * cfg.horizon,
        dt_sim=cfg.dt_sim,
    )
    rec1 = control.closed_loop_simulate(
        truth, None, None, meas_sim, sched1, rng, noise_std=cfg.noise_std
    )

    fit = _fit_on_window(cfg, rec1, phys)
    aug = model.augment(phys, [gpss.realize(fit.spec)])
    meas_full = infer.MeasurementModel(C=aug.C, R=meas_sim.R)

    data1 = infer.TimeSeriesData(times=rec1.times, observations=rec1.observations)
    filt = infer.run_filter(aug, meas_full, data1)
    ad, qd, md = infer.discretize(aug, cfg.dt)
    belief0, _ = infer.kf_step(
        filt.filtered[-1], ad, qd, md, None, meas_full, y=None
    )
    f0 = _advance_truth(truth, rec1.f_true[-1], rec1.times[-1], cfg.dt, sched1.n_substeps)

    sched2 = control.Schedule(
        t_start=cfg.train_end,
        t_end=cfg.horizon,
        dt_meas=cfg.dt,
        control_on=cfg.control_on,
        dt_sim=cfg.dt_sim,
    )
    truth2 = control.ScenarioTruth(phys=phys, u_func=truth.u_func, x0=f0)
    records = {}
    for name, gain in gains_from(aug).items():
        records[name] = control.closed_loop_simulate(
            truth2,
            aug,
            gain,
            meas_full,
            sched2,
            _clone_rng(rng),
            noise_std=cfg.noise_std,
            belief0=belief0,
        )
    return rec1, fit, aug, records


def _concat_records(rec1, rec2):
    """Stack phase-1 (open loop) and phase-2 rows for one CSV."""
    return {
        "times": np.concatenate([rec1.times, rec2.times]),
        "f_true": np.vstack([rec1.f_true, rec2.f_true]),
        "f_est": np.vstack([rec1.f_est, rec2.f_est]),
        "f_var": np.vstack([rec1.f_var, rec2.f_var]),
        "u_true": np.vstack([rec1.u_true, rec2.u_true]),
        "u_est": np.vstack([rec1.u_est, rec2.u_est]),
        "u_var": np.vstack([rec1.u_var, rec2.u_var]),
        "controls": np.vstack([rec1.controls, rec2.controls]),
    }


def run_spring_control(cfg, out_dir):
    """Train on phase 1, then compare basic and force-aware LQR.

    Both controllers start phase 2 from the same state, belief, and
    generator state; the only difference is the gain.
    """
    cost = control.CostSpec(
        X=np.diag([cfg.position_weight, cfg.velocity_weight]),
        U=[[cfg.control_weight]],
    )

    def gains(aug):
        phys = spring_truth(cfg).phys
        return {
            "basic": control.basic_lqr_gain(phys, cost, n_latent=aug.n_u).gain,
            "lfm": control.solve_stationary(aug, cost).gain,
        }

    rec1, fit, aug, records = _spring_control_phases(cfg, gains)

    paths = {}
    for name in ("basic", "lfm"):
        merged = _concat_records(rec1, records[name])
        path = os.path.join(out_dir, f"control_{name}.csv")
        _write_csv(
            path,
            [
                "t",
                "f_true_1",
                "f_true_2",
                "f_est_1",
                "f_est_2",
                "f_var_1",
                "f_var_2",
                "u_true_1",
                "u_est_1",
                "u_var_1",
                "c_1",
            ],
            [
                merged["times"],
                merged["f_true"][:, 0],
                merged["f_true"][:, 1],
                merged["f_est"][:, 0],
                merged["f_est"][:, 1],
                merged["f_var"][:, 0],
                merged["f_var"][:, 1],
                merged["u_true"][:, 0],
                merged["u_est"][:, 0],
                merged["u_var"][:, 0],
                merged["controls"][:, 0],
            ],
        )
        paths[name] = path

    err_basic = records["basic"].tracking_error
    err_lfm = records["lfm"].tracking_error
    summary = {
        "fitted": {
            "kind": fit.spec.kind,
            "sigma": fit.spec.sigma,
            "ell": fit.spec.ell,
            "loglik": fit.loglik,
        },
        "tracking_error_basic": err_basic,
        "tracking_error_lfm": err_lfm,
        "error_ratio": err_lfm / err_basic if err_basic > 0 else float("nan"),
        "control_on": cfg.control_on,
        "seed": cfg.seed,
    }
    json_path = os.path.join(out_dir, "control_summary.json")
    _write_json(json_path, summary)
    return {
        "basic_csv": paths["basic"],
        "lfm_csv": paths["lfm"],
        "summary_json": json_path,
        "summary": summary,
    }


def heat_config_model(cfg):
    """HeatConfig, plant, and per-mode-weighted augmented model."""
    hcfg = model.HeatConfig(
        diffusivity=cfg.heat_diffusivity,
        decay=cfg.heat_decay,
        modes_per_axis=cfg.heat_modes_per_axis,
        sensors=model.heat_sensor_grid(
            ((0.0, 1.0), (0.0, 1.0)), cfg.heat_sensors_per_axis
        ),
        space_ell=cfg.heat_space_ell,
    )
    phys = model.build_heat_fourier(hcfg)
    weights = model.heat_force_weights(hcfg)
    template = cfg.heat_kernel_spec()
    forces = [
        gpss.realize(replace(template, sigma=template.sigma * math.sqrt(w)))
        for w in weights
    ]
    aug = model.augment(phys, forces)
    return hcfg, phys, aug


def heat_source_modes(cfg, hcfg):
    """Modal projection of the moving Gaussian source, as a function of t.

    The bump is separable, so each mode coefficient is a product of two
    1-D quadratures against the sine basis (midpoint rule, 400 cells per
    axis).
    """
    (a1, b1), (a2, b2) = hcfg.domain
    n_grid = 400
    g1 = a1 + (b1 - a1) * (np.arange(n_grid) + 0.5) / n_grid
    g2 = a2 + (b2 - a2) * (np.arange(n_grid) + 0.5) / n_grid
    w1 = (b1 - a1) / n_grid
    w2 = (b2 - a2) / n_grid
    m = hcfg.modes_per_axis
    js = np.arange(1, m + 1)
    phi1 = np.sqrt(2.0 / (b1 - a1)) * np.sin(
        np.outer(js, np.pi * (g1 - a1) / (b1 - a1))
    )
    phi2 = np.sqrt(2.0 / (b2 - a2)) * np.sin(
        np.outer(js, np.pi * (g2 - a2) / (b2 - a2))
    )
    p_from = np.asarray(cfg.heat_source_from, dtype=float)
    p_to = np.asarray(cfg.heat_source_to, dtype=float)
    duration = cfg.heat_source_duration
    amp = cfg.heat_amplitude
    width = cfg.heat_source_width
    idx = model.heat_mode_indices(hcfg)

    def u_modes(t):
        if t < 0.0 or t > duration or amp == 0.0:
            return np.zeros(len(idx))
        pos = p_from + (p_to - p_from) * (t / duration)
        e1 = np.exp(-((g1 - pos[0]) ** 2) / (2.0 * width**2))
        e2 = np.exp(-((g2 - pos[1]) ** 2) / (2.0 * width**2))
        q1 = phi1 @ e1 * w1
        q2 = phi2 @ e2 * w2
        return amp * np.array([q1[j - 1] * q2[k - 1] for j, k in idx])

    return u_modes


def heat_source_field(cfg, t, points):
    """The true source evaluated at spatial points (not its projection)."""
    if t < 0.0 or t > cfg.heat_source_duration or cfg.heat_amplitude == 0.0:
        return np.zeros(len(points))
    p_from = np.asarray(cfg.heat_source_from, dtype=float)
    p_to = np.asarray(cfg.heat_source_to, dtype=float)
    pos = p_from + (p_to - p_from) * (t / cfg.heat_source_duration)
    d2 = np.sum((points - pos) ** 2, axis=1)
    return cfg.heat_amplitude * np.exp(-d2 / (2.0 * cfg.heat_source_width**2))


def _snapshot_tag(t):
    return ("%g" % t).replace(".", "p").replace("-", "m")


def run_heat_control(cfg, out_dir):
    """Moving-source heat experiment: basic vs force-aware regulation.

    Writes the per-time maximum-temperature curves for both controllers,
    field snapshots at the configured times, and a JSON summary.
    """
    hcfg, phys, aug = heat_config_model(cfg)
    n_f = phys.n_f
    u_modes = heat_source_modes(cfg, hcfg)
    truth = control.ScenarioTruth(phys=phys, u_func=u_modes, x0=np.zeros(n_f))
    meas = infer.MeasurementModel(
        C=aug.C, R=max(cfg.heat_noise_std, 1e-6) ** 2 * np.eye(phys.n_outputs)
    )
    cost = control.CostSpec(
        X=cfg.heat_state_weight * np.eye(n_f),
        U=cfg.heat_control_weight * np.eye(n_f),
    )
    gain_lfm = control.solve_stationary(aug, cost).gain
    gain_basic = control.basic_lqr_gain(phys, cost, n_latent=aug.n_u).gain

    sched = control.Schedule(
        t_end=cfg.heat_horizon,
        dt_meas=cfg.heat_dt,
        control_on=cfg.heat_control_on,
        dt_sim=cfg.heat_dt_sim,
    )
    rng = np.random.default_rng(cfg.seed)
    records = {}
    for name, gain in (("basic", gain_basic), ("lfm", gain_lfm)):
        records[name] = control.closed_loop_simulate(
            truth,
            aug,
            gain,
            meas,
            sched,
            _clone_rng(rng),
            noise_std=cfg.heat_noise_std,
        )

    # field evaluation grid for max-temperature and snapshots
    n_eval = 41
    ax = np.linspace(0.0, 1.0, n_eval)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    points = np.column_stack([xx.ravel(), yy.ravel()])
    basis = model.heat_basis(hcfg, points)

    times = records["basic"].times
    max_basic = (records["basic"].f_true @ basis.T).max(axis=1)
    max_lfm = (records["lfm"].f_true @ basis.T).max(axis=1)
    maxtemp_csv = os.path.join(out_dir, "heat_max_temp.csv")
    _write_csv(
        maxtemp_csv,
        ["t", "max_temp_basic", "max_temp_lfm"],
        [times, max_basic, max_lfm],
    )

    snapshot_csvs = []
    anti_corr = None
    for t_snap in cfg.snapshot_times:
        k = int(np.argmin(np.abs(times - t_snap)))
        t_k = times[k]
        source_true = heat_source_field(cfg, t_k, points)
        source_est = basis @ records["lfm"].u_est[k]
        temp_basic = basis @ records["basic"].f_true[k]
        temp_lfm = basis @ records["lfm"].f_true[k]
        ctrl_field = basis @ records["lfm"].controls[k]
        path = os.path.join(out_dir, f"heat_snapshot_{_snapshot_tag(t_k)}.csv")
        _write_csv(
            path,
            [
                "x1",
                "x2",
                "source_true",
                "source_est_lfm",
                "temp_true_basic",
                "temp_true_lfm",
                "control_lfm",
            ],
            [
                points[:, 0],
                points[:, 1],
                source_true,
                source_est,
                temp_basic,
                temp_lfm,
                ctrl_field,
            ],
        )
        snapshot_csvs.append(path)
        if anti_corr is None:
            anti_corr = float(np.sum(ctrl_field * source_est))

    summary = {
        "max_temp_peak_basic": float(max_basic.max()),
        "max_temp_peak_lfm": float(max_lfm.max()),
        "tracking_error_basic": records["basic"].tracking_error,
        "tracking_error_lfm": records["lfm"].tracking_error,
        "control_source_inner_product": anti_corr,
        "modes": int(n_f),
        "seed": cfg.seed,
    }
    json_path = os.path.join(out_dir, "heat_summary.json")
    _write_json(json_path, summary)
    return {
        "max_temp_csv": maxtemp_csv,
        "snapshot_csvs": snapshot_csvs,
        "summary_json": json_path,
        "summary": summary,
    }


def run_kernel_check(cfg, out_dir):
    """Tabulate exact vs state-space covariance for the configured spec."""
    spec = cfg.kernel_spec()
    real = gpss.realize(spec)
    taus = np.linspace(0.0, 3.0 * spec.ell, 151)
    exact = gpss.kernel_exact(spec, taus)
    ss = gpss.kernel_value(real, taus)
    err = np.abs(ss - exact)
    csv_path = os.path.join(out_dir, "kernel_table.csv")
    _write_csv(
        csv_path,
        ["tau", "k_exact", "k_statespace", "abs_error"],
        [taus, exact, ss, err],
    )
    summary = {
        "kind": spec.kind,
        "sigma": spec.sigma,
        "ell": spec.ell,
        "se_order": list(spec.se_order),
        "max_abs_error": float(err.max()),
        "max_relative_error": float(err.max() / spec.sigma**2),
        "state_dim": int(real.dim),
    }
    json_path = os.path.join(out_dir, "kernel_summary.json")
    _write_json(json_path, summary)
    return {"table_csv": csv_path, "summary_json": json_path, "summary": summary}


def run_certify(cfg, out_dir):
    """Certify the spring model augmented with the configured kernel."""
    phys = model.build_spring(damping=cfg.damping, stiffness=cfg.stiffness)
    aug = model.augment(phys, [gpss.realize(cfg.kernel_spec())])
    report = systheory.certify(aug, dt=cfg.dt)
    json_path = os.path.join(out_dir, "certification.json")
    with open(json_path, "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    return {"report_json": json_path, "report": report}
