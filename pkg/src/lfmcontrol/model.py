"""Physical plants and their augmentation with latent-force realizations.

Two plants are provided: a damped spring (mass normalized to one, position
measured) driven by an unknown scalar force, and a 2-D heat equation with
decay on a rectangle with zero Dirichlet boundaries, reduced by a
Fourier-Galerkin truncation onto tensor-product sine modes.  In modal
coordinates diffusion is diagonal and both the unknown source and the
control act mode by mode.

``augment`` stacks the physical state with the realization states of one
GP per force channel, producing the joint model

    A = [[Af, Bf Cu], [0, Au]],  B = [0; Bu],  C = [Cf, 0],  M = [Mf; 0],

whose white-noise input has the block-diagonal spectral density of the
per-channel realizations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


__all__ = [
    "LtiPhysicalSystem",
    "AugmentedLfm",
    "HeatConfig",
    "build_spring",
    "build_heat_fourier",
    "augment",
    "heat_force_weights",
    "heat_mode_indices",
    "heat_basis",
    "heat_sensor_grid",
]


def _matrix(a, name, shape=None):
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None and a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    return a


@dataclass
class LtiPhysicalSystem:
    """Linear plant dx = Af x dt + Bf u dt + Mf c dt, y = Cf x.

    Attributes:
        Af: drift, n_f x n_f.
        Bf: unknown-force input, n_f x p.
        Cf: measured output, d x n_f.
        Mf: control input, n_f x m.
        state_labels: one name per state coordinate.
    """

    Af: np.ndarray
    Bf: np.ndarray
    Cf: np.ndarray
    Mf: np.ndarray
    state_labels: tuple = ()

    def __post_init__(self):
        self.Af = _matrix(self.Af, "Af")
        n_f = self.Af.shape[0]
        if self.Af.shape != (n_f, n_f):
            raise ValueError(f"Af must be square, got {self.Af.shape}")
        self.Bf = _matrix(self.Bf, "Bf")
        self.Cf = _matrix(self.Cf, "Cf")
        self.Mf = _matrix(self.Mf, "Mf")
        for name, mat, axis in (("Bf", self.Bf, 0), ("Cf", self.Cf, 1), ("Mf", self.Mf, 0)):
            if mat.shape[axis] != n_f:
                raise ValueError(
                    f"{name} is {mat.shape}, inconsistent with n_f = {n_f}"
                )
        if not self.state_labels:
            self.state_labels = tuple(f"x{i}" for i in range(n_f))
        elif len(self.state_labels) != n_f:
            raise ValueError(
                f"{len(self.state_labels)} state labels for {n_f} states"
            )

    @property
    def n_f(self):
        return self.Af.shape[0]

    @property
    def n_forces(self):
        return self.Bf.shape[1]

    @property
    def n_controls(self):
        return self.Mf.shape[1]

    @property
    def n_outputs(self):
        return self.Cf.shape[0]


@dataclass
class AugmentedLfm:
    """Joint physical-plus-latent model; see module docstring for blocks.

    Attributes beyond the spec'd matrices keep what downstream inference
    and control need without re-deriving it: the latent output map Cu, the
    white-noise spectral density q (diagonal over channels), the latent
    stationary covariance Pinf_u, and, when the system decouples mode by
    mode, per-mode state index groups in block_structure.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    M: np.ndarray
    n_f: int
    n_u: int
    Cu: np.ndarray
    q: np.ndarray
    Pinf_u: np.ndarray
    block_structure: list = None

    def __post_init__(self):
        n = self.n_f + self.n_u
        self.A = _matrix(self.A, "A", (n, n))
        low_left = self.A[self.n_f :, : self.n_f]
        if low_left.size and np.abs(low_left).max() != 0.0:
            raise ValueError("lower-left latent-to-physical block of A must be zero")
        if self.B.size and np.abs(self.B[: self.n_f, :]).max() != 0.0:
            raise ValueError("physical rows of B must be zero")
        if self.M.size and np.abs(self.M[self.n_f :, :]).max() != 0.0:
            raise ValueError("latent rows of M must be zero")
        if self.C.size and self.n_u and np.abs(self.C[:, self.n_f :]).max() != 0.0:
            raise ValueError("latent columns of C must be zero")

    @property
    def dim(self):
        return self.n_f + self.n_u

    @property
    def Af(self):
        return self.A[: self.n_f, : self.n_f]

    @property
    def Au(self):
        return self.A[self.n_f :, self.n_f :]

    @property
    def coupling(self):
        """Top-right block Bf Cu mapping latent states into the plant."""
        return self.A[: self.n_f, self.n_f :]

    @property
    def Mf(self):
        return self.M[: self.n_f, :]

    @property
    def Cf(self):
        return self.C[:, : self.n_f]


@dataclass
class HeatConfig:
    """Heat-plant configuration.

    Attributes:
        diffusivity: D > 0, spatial-units^2 per second.
        decay: lambda > 0, 1 per second.
        modes_per_axis: sine modes per axis; n_f = modes_per_axis^2.
        domain: ((x1_min, x1_max), (x2_min, x2_max)).
        sensors: (d, 2) sensor coordinates, strictly inside the domain;
            defaults to a uniform 10 x 10 interior grid.
        space_ell: spatial length scale of the latent source prior.
    """

    diffusivity: float
    decay: float
    modes_per_axis: int
    domain: tuple = ((0.0, 1.0), (0.0, 1.0))
    sensors: np.ndarray = None
    space_ell: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.diffusivity) and self.diffusivity > 0):
            raise ValueError(f"diffusivity must be positive, got {self.diffusivity}")
        if not (np.isfinite(self.decay) and self.decay > 0):
            raise ValueError(f"decay must be positive, got {self.decay}")
        if int(self.modes_per_axis) < 1:
            raise ValueError("modes_per_axis must be at least 1")
        self.modes_per_axis = int(self.modes_per_axis)
        (a1, b1), (a2, b2) = self.domain
        if not (b1 > a1 and b2 > a2):
            raise ValueError(f"degenerate domain {self.domain}")
        if not (np.isfinite(self.space_ell) and self.space_ell > 0):
            raise ValueError(f"space_ell must be positive, got {self.space_ell}")
        if self.sensors is None:
            self.sensors = heat_sensor_grid(self.domain, 10)
        self.sensors = np.atleast_2d(np.asarray(self.sensors, dtype=float))
        if self.sensors.shape[1] != 2:
            raise ValueError("sensors must be given as (d, 2) coordinates")
        x1, x2 = self.sensors[:, 0], self.sensors[:, 1]
        if np.any(x1 <= a1) or np.any(x1 >= b1) or np.any(x2 <= a2) or np.any(x2 >= b2):
            raise ValueError("all sensors must lie strictly inside the domain")

    @property
    def lengths(self):
        (a1, b1), (a2, b2) = self.domain
        return b1 - a1, b2 - a2


def heat_sensor_grid(domain, per_axis):
    """Uniform per_axis x per_axis grid strictly inside the rectangle."""
    (a1, b1), (a2, b2) = domain
    t = np.arange(1, per_axis + 1) / (per_axis + 1)
    x1 = a1 + (b1 - a1) * t
    x2 = a2 + (b2 - a2) * t
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return np.column_stack([g1.ravel(), g2.ravel()])


def heat_mode_indices(cfg):
    """Mode index pairs (j, k), j outer, matching the state ordering."""
    m = cfg.modes_per_axis
    return [(j, k) for j in range(1, m + 1) for k in range(1, m + 1)]


def heat_basis(cfg, points):
    """Evaluate all basis functions at the given points.

    phi_jk(x) = 2 sin(j pi (x1-a1)/L1) sin(k pi (x2-a2)/L2) / sqrt(L1 L2),
    orthonormal in L2 of the rectangle and zero on its boundary.

    Args:
        points: (k, 2) coordinates.

    Returns:
        (k, n_f) matrix with one column per mode.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    (a1, _), (a2, _) = cfg.domain
    l1, l2 = cfg.lengths
    m = cfg.modes_per_axis
    js = np.arange(1, m + 1)
    s1 = np.sin(np.pi * np.outer(points[:, 0] - a1, js) / l1)  # (k, m)
    s2 = np.sin(np.pi * np.outer(points[:, 1] - a2, js) / l2)
    scale = 2.0 / np.sqrt(l1 * l2)
    # row-major over (j, k): column index (j-1)*m + (k-1)
    return scale * (s1[:, :, None] * s2[:, None, :]).reshape(len(points), m * m)


def build_spring(damping=0.1, stiffness=1.0):
    """Damped spring with unknown force and control entering as accelerations.

    State (position, velocity), position measured.

    Args:
        damping: velocity coefficient, > 0.
        stiffness: position coefficient, > 0.
    """
    if not (np.isfinite(damping) and damping > 0):
        raise ValueError(f"damping must be positive, got {damping}")
    if not (np.isfinite(stiffness) and stiffness > 0):
        raise ValueError(f"stiffness must be positive, got {stiffness}")
    af = np.array([[0.0, 1.0], [-stiffness, -damping]])
    col = np.array([[0.0], [1.0]])
    return LtiPhysicalSystem(
        Af=af,
        Bf=col,
        Cf=np.array([[1.0, 0.0]]),
        Mf=col.copy(),
        state_labels=("position", "velocity"),
    )


def build_heat_fourier(cfg):
    """Fourier-Galerkin truncation of the decaying 2-D heat equation.

    Modal drift is diagonal with entries -D ((j pi/L1)^2 + (k pi/L2)^2)
    - lambda; unknown source and control both act per mode (Bf = Mf = I);
    outputs evaluate the basis at the sensor coordinates.
    """
    l1, l2 = cfg.lengths
    kappa = np.array(
        [
            (j * np.pi / l1) ** 2 + (k * np.pi / l2) ** 2
            for j, k in heat_mode_indices(cfg)
        ]
    )
    af = np.diag(-cfg.diffusivity * kappa - cfg.decay)
    n_f = cfg.modes_per_axis**2
    eye = np.eye(n_f)
    labels = tuple(f"mode({j},{k})" for j, k in heat_mode_indices(cfg))
    return LtiPhysicalSystem(
        Af=af, Bf=eye, Cf=heat_basis(cfg, cfg.sensors), Mf=eye.copy(), state_labels=labels
    )


def heat_force_weights(cfg):
    """Per-mode variance weights from the spatial SE spectrum.

    The spatial kernel exp(-r^2/ell^2) has spectral density proportional
    to exp(-ell^2 |xi|^2 / 4); evaluated at each mode's frequency pair and
    normalized so the largest weight is one.  Per-mode temporal GP
    amplitudes are scaled by sqrt(weight).
    """
    l1, l2 = cfg.lengths
    xi2 = np.array(
        [
            (j * np.pi / l1) ** 2 + (k * np.pi / l2) ** 2
            for j, k in heat_mode_indices(cfg)
        ]
    )
    w = np.exp(-cfg.space_ell**2 * xi2 / 4.0)
    return w / w.max()


def _single_channel_columns(mat):
    """Map column -> its unique nonzero row, or None if not one-per-column."""
    rows = []
    for col in mat.T:
        nz = np.flatnonzero(col)
        if len(nz) != 1:
            return None
        rows.append(int(nz[0]))
    return rows if len(set(rows)) == len(rows) else None


def augment(phys, forces):
    """Stack plant and per-channel GP realizations into one LTI model.

    Args:
        phys: LtiPhysicalSystem with p force channels.
        forces: sequence of p LtiGpRealization, one per channel.

    Returns:
        AugmentedLfm.  When Af is diagonal and every force/control channel
        touches exactly one mode, block_structure holds one index array per
        mode (physical index followed by its latent indices) so stationary
        control synthesis can decouple.
    """
    forces = list(forces)
    p = phys.n_forces
    if len(forces) != p:
        raise ValueError(f"{len(forces)} realizations for {p} force channels")
    n_f = phys.n_f
    dims = [r.dim for r in forces]
    n_u = int(sum(dims))
    offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)

    au = sla.block_diag(*[r.F for r in forces]) if forces else np.zeros((0, 0))
    bu = sla.block_diag(*[r.L for r in forces]) if forces else np.zeros((0, 0))
    cu = sla.block_diag(*[r.H for r in forces]) if forces else np.zeros((0, 0))
    pinf_u = sla.block_diag(*[r.Pinf for r in forces]) if forces else np.zeros((0, 0))
    q = np.diag([r.q for r in forces])

    n = n_f + n_u
    a = np.zeros((n, n))
    a[:n_f, :n_f] = phys.Af
    a[:n_f, n_f:] = phys.Bf @ cu
    a[n_f:, n_f:] = au
    b = np.zeros((n, p))
    b[n_f:, :] = bu
    c = np.zeros((phys.n_outputs, n))
    c[:, :n_f] = phys.Cf
    m_mat = np.zeros((n, phys.n_controls))
    m_mat[:n_f, :] = phys.Mf

    block_structure = None
    af_offdiag = phys.Af - np.diag(np.diag(phys.Af))
    if (
        n_f == p
        and np.abs(af_offdiag).max(initial=0.0) == 0.0
        and _single_channel_columns(phys.Bf) is not None
        and _single_channel_columns(phys.Mf) is not None
    ):
        bf_rows = _single_channel_columns(phys.Bf)
        block_structure = [
            np.concatenate(
                [[bf_rows[ch]], n_f + np.arange(offsets[ch], offsets[ch + 1])]
            ).astype(int)
            for ch in range(p)
        ]

    return AugmentedLfm(
        A=a,
        B=b,
        C=c,
        M=m_mat,
        n_f=n_f,
        n_u=n_u,
        Cu=cu,
        q=q,
        Pinf_u=pinf_u,
        block_structure=block_structure,
    )
