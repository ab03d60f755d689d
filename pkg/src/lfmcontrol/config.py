"""Experiment configuration: defaults, INI parsing, and validation.

Config files are flat key = value lines under section headers; every
field has a default reproducing the reference scenario for its
experiment kind, so an empty file (or none at all) is a valid config.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, fields, replace

from . import gpss

EXPERIMENT_KINDS = (
    "spring-open-loop",
    "spring-control",
    "heat-control",
    "kernel-check",
    "certify",
)


@dataclass
class ExperimentConfig:
    """All knobs for one experiment run.

    Spring experiments use the [spring], [kernel], [sampling], [cost] and
    [fit] sections; the heat experiment is self-contained in [heat];
    kernel-check and certify read [kernel] (and [sampling] for the
    certification dt).
    """

    kind: str
    seed: int = 0
    out_dir: str = "out"

    # spring plant and its driving force
    damping: float = 0.1
    stiffness: float = 1.0
    force_amplitude: float = 1.0

    # GP prior template (sigma and ell are refit where fitting applies).
    # The exponential kernel keeps force extrapolation mean-reverting
    # from the last measurement on, whatever length scale the fit picks.
    kernel_kind: str = "matern12"
    kernel_sigma: float = 1.0
    kernel_ell: float = 1.0
    se_order: tuple = (4, 8)

    # sampling and time windows
    dt: float = 0.01
    dt_sim: float = 0.001
    noise_std: float = 0.01
    train_end: float = 50.0
    meas_end: float = 90.0
    horizon: float = 100.0
    control_on: float = 50.0

    # quadratic cost on (position, velocity) and the control channel
    position_weight: float = 1.0
    velocity_weight: float = 0.0
    control_weight: float = 0.1

    # hyperparameter fit: keep every k-th training sample
    fit_subsample: int = 10

    # heat experiment
    heat_diffusivity: float = 0.001
    heat_decay: float = 0.2
    heat_modes_per_axis: int = 10
    heat_amplitude: float = 5.0
    heat_source_width: float = 0.05
    heat_source_from: tuple = (0.8, 0.8)
    heat_source_to: tuple = (0.2, 0.2)
    heat_source_duration: float = 10.0
    heat_sensors_per_axis: int = 10
    heat_space_ell: float = 0.1
    heat_dt: float = 0.1
    heat_dt_sim: float = 0.001
    heat_noise_std: float = 0.01
    heat_horizon: float = 20.0
    heat_control_on: float = 0.0
    # gentle actuation: with aggressive weights the force-aware
    # controller's sensor-noise-driven actuation outlives the source and
    # floats the field above the baseline's decay tail
    heat_state_weight: float = 1.0
    heat_control_weight: float = 30.0
    heat_kernel_kind: str = "matern32"
    heat_kernel_sigma: float = 0.5
    heat_kernel_ell: float = 1.0
    snapshot_times: tuple = (6.9,)

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError(
                f"unknown experiment kind {self.kind!r}; choose from "
                f"{', '.join(EXPERIMENT_KINDS)}"
            )
        self.seed = int(self.seed)
        if self.kernel_kind not in gpss.KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kernel_kind!r}")
        if self.heat_kernel_kind not in gpss.KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.heat_kernel_kind!r}")
        for name in ("dt", "dt_sim", "heat_dt", "heat_dt_sim"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("noise_std", "heat_noise_std"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 < self.train_end <= self.meas_end <= self.horizon:
            raise ValueError(
                "need 0 < train_end <= meas_end <= horizon, got "
                f"{self.train_end}, {self.meas_end}, {self.horizon}"
            )
        if not 0.0 <= self.control_on <= self.horizon:
            raise ValueError(
                f"control_on must lie in [0, horizon], got {self.control_on}"
            )
        if self.fit_subsample < 1:
            raise ValueError("fit_subsample must be at least 1")

    def kernel_spec(self):
        return gpss.CovarianceSpec(
            kind=self.kernel_kind,
            sigma=self.kernel_sigma,
            ell=self.kernel_ell,
            se_order=tuple(self.se_order),
        )

    def heat_kernel_spec(self):
        return gpss.CovarianceSpec(
            kind=self.heat_kernel_kind,
            sigma=self.heat_kernel_sigma,
            ell=self.heat_kernel_ell,
        )


# per-kind deviations from the dataclass defaults
_KIND_DEFAULTS = {
    "spring-open-loop": {},
    "spring-control": {},
    "heat-control": {},
    "kernel-check": {"kernel_kind": "se"},
    "certify": {"kernel_kind": "matern12", "kernel_ell": 2.0},
}


def default_config(kind):
    """The reference configuration for an experiment kind."""
    return ExperimentConfig(kind=kind, **_KIND_DEFAULTS.get(kind, {}))


# (section, key) -> (field name, parser)
def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


_SCHEMA = {
    ("experiment", "kind"): ("kind", str),
    ("experiment", "seed"): ("seed", int),
    ("experiment", "out"): ("out_dir", str),
    ("spring", "damping"): ("damping", float),
    ("spring", "stiffness"): ("stiffness", float),
    ("spring", "force_amplitude"): ("force_amplitude", float),
    ("kernel", "kind"): ("kernel_kind", str),
    ("kernel", "sigma"): ("kernel_sigma", float),
    ("kernel", "ell"): ("kernel_ell", float),
    ("kernel", "se_order"): ("se_order", _ints),
    ("sampling", "dt"): ("dt", float),
    ("sampling", "dt_sim"): ("dt_sim", float),
    ("sampling", "noise_std"): ("noise_std", float),
    ("sampling", "train_end"): ("train_end", float),
    ("sampling", "meas_end"): ("meas_end", float),
    ("sampling", "horizon"): ("horizon", float),
    ("sampling", "control_on"): ("control_on", float),
    ("cost", "position_weight"): ("position_weight", float),
    ("cost", "velocity_weight"): ("velocity_weight", float),
    ("cost", "control_weight"): ("control_weight", float),
    ("fit", "subsample"): ("fit_subsample", int),
    ("heat", "diffusivity"): ("heat_diffusivity", float),
    ("heat", "decay"): ("heat_decay", float),
    ("heat", "modes_per_axis"): ("heat_modes_per_axis", int),
    ("heat", "amplitude"): ("heat_amplitude", float),
    ("heat", "source_width"): ("heat_source_width", float),
    ("heat", "source_from"): ("heat_source_from", _floats),
    ("heat", "source_to"): ("heat_source_to", _floats),
    ("heat", "source_duration"): ("heat_source_duration", float),
    ("heat", "sensors_per_axis"): ("heat_sensors_per_axis", int),
    ("heat", "space_ell"): ("heat_space_ell", float),
    ("heat", "dt"): ("heat_dt", float),
    ("heat", "dt_sim"): ("heat_dt_sim", float),
    ("heat", "noise_std"): ("heat_noise_std", float),
    ("heat", "horizon"): ("heat_horizon", float),
    ("heat", "control_on"): ("heat_control_on", float),
    ("heat", "state_weight"): ("heat_state_weight", float),
    ("heat", "control_weight"): ("heat_control_weight", float),
    ("heat", "kernel_kind"): ("heat_kernel_kind", str),
    ("heat", "kernel_sigma"): ("heat_kernel_sigma", float),
    ("heat", "kernel_ell"): ("heat_kernel_ell", float),
    ("heat", "snapshot_times"): ("snapshot_times", _floats),
}


def load_config(path=None, kind=None, overrides=None):
    """Config from defaults, an optional INI file, and explicit overrides.

    Args:
        path: INI file; None uses pure defaults.
        kind: experiment kind; when both the file and the argument name a
            kind they must agree.
        overrides: dict of field-name -> value applied last (CLI flags).

    Raises:
        ValueError: unknown section/key, kind mismatch, or invalid values.
    """
    updates = {}
    if path is not None:
        parser = configparser.ConfigParser()
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            for key, raw in parser.items(section):
                if (section, key) not in _SCHEMA:
                    raise ValueError(
                        f"unknown config entry [{section}] {key}"
                    )
                name, parse = _SCHEMA[(section, key)]
                updates[name] = parse(raw)
    file_kind = updates.pop("kind", None)
    if kind is None:
        kind = file_kind
    elif file_kind is not None and file_kind != kind:
        raise ValueError(
            f"config file says kind {file_kind!r} but {kind!r} was requested"
        )
    if kind is None:
        raise ValueError("no experiment kind given (file or argument)")
    cfg = default_config(kind)
    if updates:
        cfg = replace(cfg, **updates)
    if overrides:
        cfg = replace(cfg, **overrides)
    return cfg


def config_text(cfg):
    """Render a config back to INI text (used in run manifests)."""
    parser = configparser.ConfigParser()
    by_field = {name: (sec, key) for (sec, key), (name, _) in _SCHEMA.items()}
    for f in fields(cfg):
        sec, key = by_field[f.name]
        if not parser.has_section(sec):
            parser.add_section(sec)
        val = getattr(cfg, f.name)
        if isinstance(val, tuple):
            val = " ".join(str(v) for v in val)
        parser.set(sec, key, str(val))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
