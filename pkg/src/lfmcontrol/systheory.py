"""Rank and spectrum certificates for augmented latent-force models.

Observability, controllability, and output controllability via Krylov
matrices; stabilizability and detectability via eigenvalue-wise PBH rank
tests; and the eigenvalue-aliasing check that decides whether a sampling
interval destroys discrete-time observability.  The latent block of an
augmented model is structurally uncontrollable (its rows of the
controllability matrix are exactly zero), which is verified rather than
assumed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import numlin
from .errors import InvariantError

__all__ = [
    "observability_rank",
    "controllability_rank",
    "output_controllability_rank",
    "assert_not_controllable",
    "PbhResult",
    "pbh_stabilizability",
    "pbh_detectability",
    "SamplingResult",
    "critical_sampling_check",
    "CertificationReport",
    "certify",
]

RANK_TOL = 1e-9
EIG_MATCH_TOL = 1e-9


def _krylov_row_blocks(a, c):
    """[C; CA; ...; CA^{N-1}] with per-block max-abs normalization.

    Rescaling a block by a positive scalar changes neither the rank nor
    which entries are exactly zero, and keeps powers of A from
    overflowing at depth N.
    """
    a = numlin._as_square(a, "A")
    c = numlin._as_matrix(c, "C")
    if c.shape[1] != a.shape[0]:
        raise ValueError(f"C has {c.shape[1]} columns, expected {a.shape[0]}")
    blocks = [c]
    cur = c
    for _ in range(a.shape[0] - 1):
        cur = cur @ a
        scale = np.abs(cur).max()
        if scale > 0.0:
            cur = cur / scale
        blocks.append(cur)
    return blocks


def _krylov_col_blocks(a, m):
    """[M, AM, ..., A^{N-1}M], normalized the same way."""
    a = numlin._as_square(a, "A")
    m = numlin._as_matrix(m, "M")
    if m.shape[0] != a.shape[0]:
        raise ValueError(f"M has {m.shape[0]} rows, expected {a.shape[0]}")
    blocks = [m]
    cur = m
    for _ in range(a.shape[0] - 1):
        cur = a @ cur
        scale = np.abs(cur).max()
        if scale > 0.0:
            cur = cur / scale
        blocks.append(cur)
    return blocks


def observability_rank(a, c, rel_tol=RANK_TOL):
    """Rank of the observability matrix to depth N (Cayley-Hamilton)."""
    return numlin.numerical_rank(np.vstack(_krylov_row_blocks(a, c)), rel_tol)


def controllability_rank(a, m, rel_tol=RANK_TOL):
    """Rank of the controllability matrix to depth N."""
    return numlin.numerical_rank(np.hstack(_krylov_col_blocks(a, m)), rel_tol)


def output_controllability_rank(a, m, cout, rel_tol=RANK_TOL):
    """Rank of [Cout M, Cout A M, ...]; full means every output value is
    reachable even when the state is not."""
    cout = numlin._as_matrix(cout, "Cout")
    blocks = _krylov_col_blocks(a, m)
    if cout.shape[1] != blocks[0].shape[0]:
        raise ValueError(
            f"Cout has {cout.shape[1]} columns, expected {blocks[0].shape[0]}"
        )
    return numlin.numerical_rank(np.hstack([cout @ b for b in blocks]), rel_tol)


def assert_not_controllable(aug):
    """Verify the structural uncontrollability of the latent block.

    Checks that the latent rows of the controllability matrix are exactly
    zero and that its rank is at most n_f.  Both hold for any correctly
    assembled augmentation; a violation indicates a malformed model.

    Returns:
        dict with the rank, the bound, and the zero-row verdict.

    Raises:
        InvariantError: either check fails.
    """
    if aug.n_u < 1:
        raise ValueError("model has no latent block")
    ctrl = np.hstack(_krylov_col_blocks(aug.A, aug.M))
    latent = ctrl[aug.n_f :, :]
    if np.any(latent != 0.0):
        raise InvariantError(
            f"latent rows of the controllability matrix are not exactly zero "
            f"(max |entry| = {np.abs(latent).max():.3e})"
        )
    rank = numlin.numerical_rank(ctrl)
    if rank > aug.n_f:
        raise InvariantError(
            f"controllability rank {rank} exceeds the physical dimension {aug.n_f}"
        )
    return {
        "latent_rows_zero": True,
        "controllability_rank": rank,
        "rank_bound": aug.n_f,
    }


@dataclass
class PbhResult:
    """Verdict of an eigenvalue-wise PBH sweep.

    ``witnesses`` lists the qualifying eigenvalues (Re >= margin) that
    failed the rank test; empty means the property holds.
    """

    ok: bool
    witnesses: list


def pbh_stabilizability(a, m):
    """PBH test: every unstable mode of A reachable through M."""
    bad = numlin.unstabilizable_modes(a, m)
    return PbhResult(ok=not bad, witnesses=[complex(v) for v in bad])


def pbh_detectability(a, c):
    """PBH test: every unstable mode of A visible through C."""
    bad = numlin.undetectable_modes(a, c)
    return PbhResult(ok=not bad, witnesses=[complex(v) for v in bad])


@dataclass
class SamplingResult:
    """Aliasing verdict for a sampling interval.

    ``pairs`` holds (lambda_i, lambda_j, n) triples where the two
    distinct eigenvalues share a real part and their imaginary gap is n
    times 2 pi / dt, which makes exp(lambda_i dt) = exp(lambda_j dt).
    """

    critical: bool
    pairs: list
    dt: float


def critical_sampling_check(a, dt):
    """Flag sampling intervals under which distinct modes alias.

    Two eigenvalues collide in discrete time iff their real parts match
    and their imaginary parts differ by a nonzero integer multiple of
    2 pi / dt (both to within 1e-9).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    a = numlin._as_square(a, "A")
    lam = np.linalg.eigvals(a)
    base = 2.0 * np.pi / dt
    pairs = []
    for i in range(len(lam)):
        for j in range(i + 1, len(lam)):
            li, lj = lam[i], lam[j]
            if abs(li - lj) <= EIG_MATCH_TOL:
                continue
            if abs(li.real - lj.real) > EIG_MATCH_TOL:
                continue
            n = round((li.imag - lj.imag) / base)
            if n != 0 and abs(li.imag - lj.imag - n * base) <= EIG_MATCH_TOL:
                pairs.append((complex(li), complex(lj), int(n)))
    return SamplingResult(critical=bool(pairs), pairs=pairs, dt=float(dt))


@dataclass
class CertificationReport:
    """All system-theoretic verdicts for one model, with witnesses."""

    state_dim: int
    physical_dim: int
    observable: bool
    observability_rank: int
    controllable: bool
    controllability_rank: int
    latent_rows_zero: bool
    output_controllable: bool
    output_controllability_rank: int
    n_outputs: int
    stabilizable: bool
    stabilizability_witnesses: list
    detectable: bool
    detectability_witnesses: list
    critically_sampled: bool
    sampling_pairs: list
    dt: float
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        def enc(z):
            return [float(np.real(z)), float(np.imag(z))]

        d = {
            "state_dim": self.state_dim,
            "physical_dim": self.physical_dim,
            "observable": self.observable,
            "observability_rank": self.observability_rank,
            "controllable": self.controllable,
            "controllability_rank": self.controllability_rank,
            "latent_rows_zero": self.latent_rows_zero,
            "output_controllable": self.output_controllable,
            "output_controllability_rank": self.output_controllability_rank,
            "n_outputs": self.n_outputs,
            "stabilizable": self.stabilizable,
            "stabilizability_witnesses": [enc(z) for z in self.stabilizability_witnesses],
            "detectable": self.detectable,
            "detectability_witnesses": [enc(z) for z in self.detectability_witnesses],
            "critically_sampled": self.critically_sampled,
            "sampling_pairs": [
                {"eig_i": enc(a), "eig_j": enc(b), "multiple": n}
                for a, b, n in self.sampling_pairs
            ],
            "dt": self.dt,
            "tolerances": self.tolerances,
        }
        return d

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)


def certify(aug, dt):
    """Run every certificate on an augmented model at sampling interval dt.

    Observability and detectability use the model's own output matrix;
    output controllability uses the physical-block selector, for which
    full rank reduces to controllability of the physical pair.
    """
    a, m, c = aug.A, aug.M, aug.C
    n = aug.dim
    selector = np.hstack([np.eye(aug.n_f), np.zeros((aug.n_f, aug.n_u))])
    obs_rank = observability_rank(a, c)
    ctrl = assert_not_controllable(aug)
    out_rank = output_controllability_rank(a, m, selector)
    stab = pbh_stabilizability(a, m)
    det = pbh_detectability(a, c)
    samp = critical_sampling_check(a, dt)
    return CertificationReport(
        state_dim=n,
        physical_dim=aug.n_f,
        observable=obs_rank == n,
        observability_rank=obs_rank,
        controllable=ctrl["controllability_rank"] == n,
        controllability_rank=ctrl["controllability_rank"],
        latent_rows_zero=ctrl["latent_rows_zero"],
        output_controllable=out_rank == aug.n_f,
        output_controllability_rank=out_rank,
        n_outputs=c.shape[0],
        stabilizable=stab.ok,
        stabilizability_witnesses=stab.witnesses,
        detectable=det.ok,
        detectability_witnesses=det.witnesses,
        critically_sampled=samp.critical,
        sampling_pairs=samp.pairs,
        dt=float(dt),
        tolerances={"rank_rel_tol": RANK_TOL, "eig_match_tol": EIG_MATCH_TOL},
    )
