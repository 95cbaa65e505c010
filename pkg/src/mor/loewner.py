"""Loewner and shifted-Loewner matrices and the canonical structure of
interpolatory reduced models for descriptor systems.

For coincident tangential data the projected quantities satisfy
E_r = -L and A_r = -M with L, M the (shifted) Loewner matrices of divided
differences of H and sH; rows of B_r and columns of C_r are tangential
samples.  The same identities hold for inexact Petrov-Galerkin bases with H
replaced by the F_2r-perturbed transfer function, independently of the solve
accuracy.  Diagonal entries always use analytic derivatives, never divided-
difference limits, so the identities are exercised as exact algebra.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import NonIdentityE
from .interpolation import InterpolationBasis, InterpolationData, build_bases_exact
from .lti_core import (
    CoprimeRealization,
    DescriptorSystem,
    as_coprime,
    eval_transfer,
    eval_transfer_derivative,
)


@dataclass(frozen=True)
class LoewnerPair:
    """Loewner matrix, shifted Loewner matrix, and the tangential samples."""

    L: np.ndarray
    M: np.ndarray
    sigma: np.ndarray
    right_data: np.ndarray  # p x r, columns H(sigma_j) b_j
    left_data: np.ndarray  # r x m, rows c_i^T H(sigma_i)
    hermite: np.ndarray  # r, entries c_i^T H'(sigma_i) b_i
    cross: np.ndarray  # r x r, entries c_i^T H(sigma_j) b_j
    source: str = "exact system"

    def consistency_defect(self) -> float:
        """Relative defect of M - diag(sigma) L == cross (algebraic identity)."""
        lhs = self.M - self.sigma[:, None] * self.L
        scale = max(float(np.max(np.abs(self.cross))), 1e-300)
        return float(np.max(np.abs(lhs - self.cross)) / scale)


@dataclass(frozen=True)
class LoewnerSamples:
    """Tabulated tangential samples for data-driven construction."""

    sigma: np.ndarray
    right_cols: np.ndarray  # p x r: H(sigma_j) b_j
    left_rows: np.ndarray  # r x m: c_i^T H(sigma_i)
    hermite: np.ndarray  # r: c_i^T H'(sigma_i) b_i


def _assemble(samples: LoewnerSamples, data: InterpolationData, source: str) -> LoewnerPair:
    sig = samples.sigma
    r = sig.size
    cross = np.empty((r, r), dtype=complex)
    for i in range(r):
        cross[i, :] = data.c[:, i] @ samples.right_cols
    own = np.array([samples.left_rows[i] @ data.b[:, i] for i in range(r)])

    L = np.empty((r, r), dtype=complex)
    M = np.empty((r, r), dtype=complex)
    for i in range(r):
        for j in range(r):
            if i == j:
                L[i, i] = samples.hermite[i]
                M[i, i] = cross[i, i] + sig[i] * samples.hermite[i]
            else:
                own_ij = samples.left_rows[i] @ data.b[:, j]  # c_i^T H(sigma_i) b_j
                L[i, j] = (own_ij - cross[i, j]) / (sig[i] - sig[j])
                M[i, j] = (sig[i] * own_ij - sig[j] * cross[i, j]) / (sig[i] - sig[j])
    # diagonal cross entries are both c^T H b at the same point; reconcile
    for i in range(r):
        cross[i, i] = own[i]
    return LoewnerPair(
        L=L,
        M=M,
        sigma=sig.copy(),
        right_data=samples.right_cols.copy(),
        left_data=samples.left_rows.copy(),
        hermite=samples.hermite.copy(),
        cross=cross,
        source=source,
    )


def sample_system(sys: CoprimeRealization, data: InterpolationData) -> LoewnerSamples:
    """Tangential transfer samples of a realized system at coincident data."""
    if not data.is_coincident:
        raise ValueError("Loewner construction uses coincident point data")
    r = data.r
    right = np.empty((sys.p, r), dtype=complex)
    left = np.empty((r, sys.m), dtype=complex)
    herm = np.empty(r, dtype=complex)
    for j in range(r):
        H = eval_transfer(sys, data.sigma[j])
        dH = eval_transfer_derivative(sys, data.sigma[j])
        right[:, j] = H @ data.b[:, j]
        left[j, :] = data.c[:, j] @ H
        herm[j] = data.c[:, j] @ dH @ data.b[:, j]
    return LoewnerSamples(sigma=data.sigma.copy(), right_cols=right, left_rows=left, hermite=herm)


def build_loewner(sys: CoprimeRealization, data: InterpolationData, source: str = "exact system") -> LoewnerPair:
    """Loewner pair from transfer evaluations: divided differences off the
    diagonal, analytic derivatives on it ([sH]' = H + sH')."""
    return _assemble(sample_system(sys, data), data, source)


def build_loewner_from_samples(samples: LoewnerSamples, data: InterpolationData) -> LoewnerPair:
    return _assemble(samples, data, source="raw samples")


def write_samples_csv(path, samples: LoewnerSamples) -> None:
    """One row per point: Re/Im sigma, then interleaved Re/Im of H(s)b,
    c^T H(s), and c^T H'(s) b."""
    p = samples.right_cols.shape[0]
    m = samples.left_rows.shape[1]
    header = ["sigma_re", "sigma_im"]
    header += [f"Hb_{k}_{part}" for k in range(p) for part in ("re", "im")]
    header += [f"cH_{k}_{part}" for k in range(m) for part in ("re", "im")]
    header += ["herm_re", "herm_im"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for j in range(samples.sigma.size):
            row = [samples.sigma[j].real, samples.sigma[j].imag]
            for k in range(p):
                z = samples.right_cols[k, j]
                row += [z.real, z.imag]
            for k in range(m):
                z = samples.left_rows[j, k]
                row += [z.real, z.imag]
            row += [samples.hermite[j].real, samples.hermite[j].imag]
            wr.writerow([repr(float(x)) for x in row])


def read_samples_csv(path) -> LoewnerSamples:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    p = sum(1 for h in header if h.startswith("Hb_") and h.endswith("_re"))
    m = sum(1 for h in header if h.startswith("cH_") and h.endswith("_re"))
    r = len(body)
    sigma = np.empty(r, dtype=complex)
    right = np.empty((p, r), dtype=complex)
    left = np.empty((r, m), dtype=complex)
    herm = np.empty(r, dtype=complex)
    for j, row in enumerate(body):
        vals = [float(x) for x in row]
        sigma[j] = complex(vals[0], vals[1])
        off = 2
        for k in range(p):
            right[k, j] = complex(vals[off], vals[off + 1])
            off += 2
        for k in range(m):
            left[j, k] = complex(vals[off], vals[off + 1])
            off += 2
        herm[j] = complex(vals[off], vals[off + 1])
    return LoewnerSamples(sigma=sigma, right_cols=right, left_rows=left, hermite=herm)


@dataclass(frozen=True)
class StructureReport:
    """Relative defects of the canonical reduced-order structure identities."""

    e_defect: float
    a_defect: float
    b_defect: float
    c_defect: float

    @property
    def max_defect(self) -> float:
        return max(self.e_defect, self.a_defect, self.b_defect, self.c_defect)


def _structure_defects(
    ds: DescriptorSystem,
    V: np.ndarray,
    W: np.ndarray,
    pair: LoewnerPair,
) -> StructureReport:
    Er = W.T @ ds.E @ V
    Ar = W.T @ ds.A @ V
    Br = W.T @ ds.B
    Cr = ds.C @ V
    rel = lambda x, ref: float(sla.norm(x, 2) / max(sla.norm(ref, 2), 1e-300))
    return StructureReport(
        e_defect=rel(Er + pair.L, pair.L),
        a_defect=rel(Ar + pair.M, pair.M),
        b_defect=rel(Br - pair.left_data, pair.left_data),
        c_defect=rel(Cr - pair.right_data, pair.right_data),
    )


def verify_mayo(ds: DescriptorSystem, data: InterpolationData) -> StructureReport:
    """Exact-solve structure: E_r = -L, A_r = -M, B_r/C_r tangential samples."""
    sysc = as_coprime(ds)
    basis = build_bases_exact(sysc, data)
    pair = build_loewner(sysc, data)
    return _structure_defects(ds, basis.V, basis.W, pair)


def verify_inexact_loewner(
    ds: DescriptorSystem, basis: InterpolationBasis, data: InterpolationData
) -> StructureReport:
    """Inexact PG bases carry the exact Loewner structure of the perturbed model.

    Builds the F_2r-perturbed system and compares the projected quantities
    against its Loewner pair; raises IncompatibleResiduals for bases outside
    the Petrov-Galerkin framework.
    """
    from .backward_error import build_f2r, perturbed_system

    sysc = as_coprime(ds)
    F = build_f2r(basis)
    tilde = perturbed_system(sysc, F)
    pair = build_loewner(tilde, data, source="perturbed system")
    return _structure_defects(ds, basis.V, basis.W, pair)


@dataclass(frozen=True)
class DiagonalPlusLowRankReport:
    identity_defect: float
    rank_of_shift: int
    rank_limit: int

    @property
    def rank_ok(self) -> bool:
        return self.rank_of_shift <= self.rank_limit


def sigma_minus_qb_structure(
    ds: DescriptorSystem,
    data: InterpolationData,
    basis: Optional[InterpolationBasis] = None,
) -> DiagonalPlusLowRankReport:
    """With E = I the normalized reduced A is diag(sigma) minus a low-rank term.

    Checks A_r = Sigma - Q Bdir with Q = (W^T V)^-1 W^T B, and that
    rank(A_r - Sigma) <= min(r, m, p).  Passing an inexact PG basis checks
    the perturbed-system variant with Q from the same formula.
    """
    if not np.allclose(ds.E, np.eye(ds.n), atol=1e-13):
        raise NonIdentityE("structure requires E == I")
    if not data.is_coincident:
        raise ValueError("structure requires coincident data")
    if basis is None:
        basis = build_bases_exact(as_coprime(ds), data)
    V, W = basis.V, basis.W
    pairing = W.T @ V
    An = np.linalg.solve(pairing, W.T @ ds.A @ V)
    Q = np.linalg.solve(pairing, W.T @ ds.B)
    Sigma = np.diag(data.sigma)
    Bdir = data.b
    target = Sigma - Q @ Bdir
    defect = float(sla.norm(An - target, 2) / max(sla.norm(target, 2), 1e-300))
    sv = sla.svd(An - Sigma, compute_uv=False)
    rank = int(np.count_nonzero(sv > 1e-10 * max(sv[0], 1e-300))) if sv.size else 0
    return DiagonalPlusLowRankReport(
        identity_defect=defect,
        rank_of_shift=rank,
        rank_limit=min(data.r, ds.m, ds.p),
    )
