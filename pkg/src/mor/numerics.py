"""Dense linear-algebra primitives: subspace angles, oblique projector norms,
scaled smallest singular values, and a generalized Lyapunov solver.

Every angle computation first orthonormalizes through column-pivoted QR;
primitive interpolation bases can be ill-conditioned by design, and the
pivoted factorization keeps the rank decision honest.  The single rank
threshold RANK_TOL is applied after unit-column scaling wherever linear
independence is decided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DegenerateBasis, SingularE, SingularPairing, UnstablePencil

#: Independence threshold after unit-column scaling, shared package-wide.
RANK_TOL = 1e-10


def unit_columns(M: np.ndarray) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M))
    norms = np.linalg.norm(M, axis=0)
    norms = np.where(norms > 0, norms, 1.0)
    return M / norms


def orthonormalize(M: np.ndarray, rtol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of the column span via column-pivoted QR.

    Columns whose pivot falls below rtol times the leading pivot are dropped.
    """
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.shape[1] == 0:
        return M
    Q, R, _ = sla.qr(M, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return Q[:, :0]
    keep = diag > rtol * diag[0]
    return Q[:, : int(np.count_nonzero(keep))]


@dataclass(frozen=True)
class Subspace:
    """A subspace of C^n held as an explicit n-by-k basis."""

    basis: np.ndarray
    orthonormal: bool = False

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.basis, dtype=complex))
        if B.ndim != 2 or B.shape[1] == 0:
            raise DegenerateBasis("subspace basis must be a nonempty 2-D array")
        scaled = unit_columns(B)
        smin = sla.svd(scaled, compute_uv=False)[-1] if B.shape[1] <= B.shape[0] else 0.0
        if smin <= RANK_TOL:
            raise DegenerateBasis(
                f"basis columns dependent: scaled smallest singular value {smin:.2e}"
            )
        if self.orthonormal:
            gram = B.conj().T @ B
            if not np.allclose(gram, np.eye(B.shape[1]), atol=1e-12):
                raise DegenerateBasis("orthonormal flag set but basis^H basis != I")
        object.__setattr__(self, "basis", B)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def orthonormalized(self) -> np.ndarray:
        if self.orthonormal:
            return self.basis
        return orthonormalize(self.basis)


def _as_ortho(space) -> np.ndarray:
    if isinstance(space, Subspace):
        return space.orthonormalized()
    return Subspace(np.asarray(space)).orthonormalized()


def subspace_angle_sin(M, N) -> float:
    """sin of the gap of N out of M: ||(I - Pi_M) Pi_N|| in the spectral norm.

    Exactly 1.0 when dim N exceeds dim M.  Symmetric in its arguments when
    the dimensions agree.
    """
    QM = _as_ortho(M)
    QN = _as_ortho(N)
    if QM.shape[0] != QN.shape[0]:
        raise DegenerateBasis("subspaces live in different ambient dimensions")
    if QN.shape[1] > QM.shape[1]:
        return 1.0
    residual = QN - QM @ (QM.conj().T @ QN)
    s = sla.svd(residual, compute_uv=False)
    val = float(s[0]) if s.size else 0.0
    return min(max(val, 0.0), 1.0)


def subspace_angle_cos(M, N) -> float:
    """cos of the largest principal angle: smallest singular value of QM^H QN."""
    QM = _as_ortho(M)
    QN = _as_ortho(N)
    s = sla.svd(QM.conj().T @ QN, compute_uv=False)
    return float(min(max(s[-1], 0.0), 1.0)) if s.size else 0.0


def oblique_projector_norm(V: np.ndarray, W: np.ndarray) -> float:
    """Spectral norm of the skew projector V (W^H V)^-1 W^H.

    Equals 1/cos of the largest principal angle between Ran V and Ran W;
    both routes are evaluated and must agree to 1e-8 relative, the larger
    value is returned if they ever disagree beyond that.
    """
    V = np.atleast_2d(np.asarray(V, dtype=complex))
    W = np.atleast_2d(np.asarray(W, dtype=complex))
    pairing = W.conj().T @ V
    sv = sla.svd(pairing, compute_uv=False)
    if sv.size == 0 or sv[-1] <= 1e-12 * sv[0]:
        raise SingularPairing("W^H V numerically singular")

    Qv, Rv = sla.qr(V, mode="economic")
    Qw, Rw = sla.qr(W, mode="economic")
    cross = Qw.conj().T @ Qv
    s_cross = sla.svd(cross, compute_uv=False)
    if s_cross[-1] <= 1e-12:
        raise SingularPairing("ranges of V and W nearly orthogonal")
    by_angle = 1.0 / s_cross[-1]

    middle = Rv @ np.linalg.solve(pairing, Rw.conj().T)
    direct = float(sla.norm(middle, 2))
    if abs(direct - by_angle) > 1e-8 * max(direct, by_angle):
        return max(max(direct, by_angle), 1.0)
    return max(direct, 1.0)


def min_singular_scaled(X: np.ndarray, D) -> float:
    """Smallest singular value of X @ diag(D) through a full SVD."""
    X = np.atleast_2d(np.asarray(X, dtype=complex))
    d = np.asarray(D)
    if d.ndim == 2:
        offdiag = d - np.diag(np.diag(d))
        if np.any(offdiag != 0):
            raise ValueError("D must be diagonal")
        d = np.diag(d).copy()
    if np.any(d.real <= 0) or np.any(d.imag != 0):
        raise ValueError("D must have strictly positive real diagonal")
    s = sla.svd(X * d.real[np.newaxis, :], compute_uv=False)
    return float(s[-1])


def lyapunov_solve(
    A: np.ndarray,
    E: np.ndarray,
    G: np.ndarray,
    stability_check: bool = True,
) -> np.ndarray:
    """Solve A P E^T + E P A^T + G = 0 for symmetric P.

    Reduces to standard form with E^-1 and uses the Schur-based
    (Bartels-Stewart) dense solver; one refinement sweep is applied if the
    relative residual exceeds 1e-10.
    """
    A = np.asarray(A, dtype=float)
    E = np.asarray(E, dtype=float)
    G = np.asarray(G, dtype=float)
    se = sla.svd(E, compute_uv=False)
    if se[-1] <= 1e-12 * se[0]:
        raise SingularE("E numerically singular in Lyapunov solve")
    if stability_check:
        lam = sla.eig(A, E, right=False)
        if np.any(lam.real >= 0):
            raise UnstablePencil("Lyapunov solve requires a stable pencil")

    lu = sla.lu_factor(E)

    def reduced(M):
        # E^-1 M E^-T
        X = sla.lu_solve(lu, M)
        return sla.lu_solve(lu, X.T).T

    Ar = sla.lu_solve(lu, A)
    P = sla.solve_continuous_lyapunov(Ar, -reduced(G))
    P = 0.5 * (P + P.T)

    gnorm = sla.norm(G, "fro")
    if gnorm == 0.0:
        return np.zeros_like(G)
    for _ in range(2):
        R = A @ P @ E.T + E @ P @ A.T + G
        if sla.norm(R, "fro") <= 1e-10 * gnorm:
            return P
        delta = sla.solve_continuous_lyapunov(Ar, -reduced(R))
        P = P + 0.5 * (delta + delta.T)
    R = A @ P @ E.T + E @ P @ A.T + G
    rel = sla.norm(R, "fro") / gnorm
    if rel > 1e-10:
        raise UnstablePencil(
            f"Lyapunov residual {rel:.2e} did not reach 1e-10; pencil too ill-conditioned"
        )
    return P
