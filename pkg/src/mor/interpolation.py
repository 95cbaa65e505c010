"""Tangential interpolation bases, Petrov-Galerkin projection, and
verification of the interpolation conditions.

Conventions follow the bilinear (plain transpose) pairing throughout:
right columns solve K(sigma_j) v_j = B(sigma_j) b_j, left columns solve
K(mu_i)^T w_i = C(mu_i)^T c_i, and the reduced factors are
K_r(s) = W^T K(s) V, B_r(s) = W^T B(s), C_r(s) = C(s) V.  With conjugate-
closed data the projecting bases are replaced by a real basis of the same
span before any constant matrices are materialized, so reduced descriptor
quadruples come out real.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import (
    RankDeficientBasis,
    SingularPairing,
    SolverStagnation,
)
from .lti_core import (
    CoprimeRealization,
    DelaySystem,
    DescriptorSystem,
    eval_transfer,
    eval_transfer_derivative,
)
from .numerics import RANK_TOL, unit_columns

_POINT_GAP_RTOL = 1e-12
_DIRECTION_MIN_NORM = 1e-14


def _check_distinct(points: np.ndarray, label: str) -> None:
    if len(points) < 2:
        return
    scale = float(np.max(np.abs(points)))
    gap = np.min(np.abs(points[:, None] - points[None, :])[~np.eye(len(points), dtype=bool)])
    if gap <= _POINT_GAP_RTOL * scale:
        raise ValueError(f"{label} interpolation points not distinct (gap {gap:.2e})")


@dataclass(frozen=True)
class InterpolationData:
    """Points and tangent directions {sigma_j, mu_i, b_j, c_i}.

    ``b`` holds the right directions as columns (m x r), ``c`` the left
    directions (p x r).
    """

    sigma: np.ndarray
    mu: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=complex).ravel()
        mu = np.asarray(self.mu, dtype=complex).ravel()
        r = sigma.size
        if mu.size != r:
            raise ValueError("sigma and mu must have equal length")
        b = np.atleast_2d(np.asarray(self.b, dtype=complex))
        c = np.atleast_2d(np.asarray(self.c, dtype=complex))
        if b.shape[1] != r and b.shape[0] == r:
            b = b.T
        if c.shape[1] != r and c.shape[0] == r:
            c = c.T
        if b.shape[1] != r or c.shape[1] != r:
            raise ValueError("direction arrays must provide one column per point")
        _check_distinct(sigma, "right")
        _check_distinct(mu, "left")
        if np.any(np.linalg.norm(b, axis=0) <= _DIRECTION_MIN_NORM) or np.any(
            np.linalg.norm(c, axis=0) <= _DIRECTION_MIN_NORM
        ):
            raise ValueError("tangent directions must be nonzero")
        for name, val in (("sigma", sigma), ("mu", mu), ("b", b), ("c", c)):
            object.__setattr__(self, name, val)

    @classmethod
    def coincident(cls, sigma, b, c) -> "InterpolationData":
        sigma = np.asarray(sigma, dtype=complex).ravel()
        return cls(sigma=sigma, mu=sigma.copy(), b=b, c=c)

    @property
    def r(self) -> int:
        return self.sigma.size

    @property
    def is_coincident(self) -> bool:
        return bool(np.array_equal(self.sigma, self.mu))

    @property
    def is_conjugate_closed(self) -> bool:
        return (
            _pairing_of(self.sigma, self.b) is not None
            and _pairing_of(self.mu, self.c) is not None
        )


def _pairing_of(points: np.ndarray, directions: np.ndarray) -> Optional[np.ndarray]:
    """partner[j] = index of conj(points[j]) with conjugated direction, else None."""
    r = points.size
    scale = max(float(np.max(np.abs(points))), 1e-300)
    partner = np.full(r, -1, dtype=int)
    for j in range(r):
        target = np.conj(points[j])
        k = int(np.argmin(np.abs(points - target)))
        if abs(points[k] - target) > 1e-10 * scale:
            return None
        dnorm = max(np.linalg.norm(directions[:, j]), 1e-300)
        if np.linalg.norm(directions[:, k] - np.conj(directions[:, j])) > 1e-10 * dnorm:
            return None
        partner[j] = k
    return partner


def conjugate_pairs(points: np.ndarray) -> list[tuple[int, int]]:
    """Representative pairs (j, partner(j)) with j listed once per pair.

    Real points pair with themselves.  Raises ValueError when the set is not
    closed under conjugation.
    """
    points = np.asarray(points, dtype=complex).ravel()
    scale = max(float(np.max(np.abs(points))), 1e-300)
    pairs = []
    seen = set()
    for j in range(points.size):
        if j in seen:
            continue
        if abs(points[j].imag) <= 1e-12 * max(abs(points[j]), scale * 1e-6):
            pairs.append((j, j))
            seen.add(j)
            continue
        k = int(np.argmin(np.abs(points - np.conj(points[j]))))
        if k == j or abs(points[k] - np.conj(points[j])) > 1e-10 * scale:
            raise ValueError("point set is not closed under conjugation")
        pairs.append((j, k))
        seen.update((j, k))
    return pairs


def realify_basis(X: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Real basis of the span of a conjugate-closed primitive basis.

    Conjugate column pairs (x, conj x) are replaced by (sqrt2 Re x,
    sqrt2 Im x); columns at real points keep their real part.  The change of
    basis is nonsingular, so any projected transfer function is unchanged.
    """
    X = np.asarray(X, dtype=complex)
    out = np.empty_like(X)
    for j, k in conjugate_pairs(points):
        if j == k:
            out[:, j] = X[:, j].real
        else:
            out[:, j] = np.sqrt(2.0) * X[:, j].real
            out[:, k] = np.sqrt(2.0) * X[:, j].imag
    return out


@dataclass(frozen=True)
class InterpolationBasis:
    """Primitive (possibly inexact) bases with their residual matrices.

    Column j of R_b is K(sigma_j) V[:, j] - B(sigma_j) b_j; column i of R_c
    is K(mu_i)^T W[:, i] - C(mu_i)^T c_i.  Bases are kept unorthogonalized:
    the error bounds need primitive columns, projections may re-basis freely.
    """

    V: np.ndarray
    W: np.ndarray
    R_b: np.ndarray
    R_c: np.ndarray
    reports_right: tuple
    reports_left: tuple
    exact: bool
    data: InterpolationData
    rhs_b_norms: np.ndarray
    rhs_c_norms: np.ndarray

    def __post_init__(self):
        for name in ("V", "W", "R_b", "R_c"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=complex))
        for M, name in ((self.V, "V"), (self.W, "W")):
            s = sla.svd(unit_columns(M), compute_uv=False)
            if s[-1] <= RANK_TOL:
                raise RankDeficientBasis(
                    f"{name} lost full column rank (scaled smin {s[-1]:.2e})"
                )

    @property
    def r(self) -> int:
        return self.V.shape[1]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    def residual_norms(self):
        return (
            np.linalg.norm(self.R_b, axis=0),
            np.linalg.norm(self.R_c, axis=0),
        )


def _right_rhs(sys: CoprimeRealization, data: InterpolationData, j: int) -> np.ndarray:
    return sys.B(data.sigma[j]) @ data.b[:, j]


def _left_rhs(sys: CoprimeRealization, data: InterpolationData, i: int) -> np.ndarray:
    return sys.C(data.mu[i]).T @ data.c[:, i]


def build_bases_exact(sys: CoprimeRealization, data: InterpolationData) -> InterpolationBasis:
    """Direct dense solves of the primitive interpolation systems.

    One step of iterative refinement keeps residuals at the 1e-12 relative
    level even for moderately ill-conditioned K.  Conjugate-closed data is
    solved once per representative point and completed by conjugation.
    """
    from .inexact_solvers import SolveReport

    n, r = sys.n, data.r
    V = np.zeros((n, r), dtype=complex)
    W = np.zeros((n, r), dtype=complex)
    R_b = np.zeros((n, r), dtype=complex)
    R_c = np.zeros((n, r), dtype=complex)

    def direct(K_mat, factor_solve, rhs):
        x = factor_solve(rhs)
        x = x + factor_solve(rhs - K_mat @ x)
        return x, K_mat @ x - rhs

    def solve_all(points, rhs_of, transpose):
        cols = np.zeros((n, r), dtype=complex)
        res = np.zeros((n, r), dtype=complex)
        try:
            pairs = conjugate_pairs(points)
        except ValueError:
            pairs = [(j, j) for j in range(r)]
        done = set()
        for j, k in pairs:
            if j in done:
                continue
            K_mat = sys.K(points[j])
            kf = sys.factor(points[j])
            if transpose:
                K_used, solver = K_mat.T, kf.solve_t
            else:
                K_used, solver = K_mat, kf.solve
            cols[:, j], res[:, j] = direct(K_used, solver, rhs_of(j))
            done.add(j)
            if k != j:
                cols[:, k] = np.conj(cols[:, j])
                res[:, k] = np.conj(res[:, j])
                done.add(k)
        return cols, res

    V, R_b = solve_all(data.sigma, lambda j: _right_rhs(sys, data, j), transpose=False)
    W, R_c = solve_all(data.mu, lambda i: _left_rhs(sys, data, i), transpose=True)

    rhs_b = np.array([np.linalg.norm(_right_rhs(sys, data, j)) for j in range(r)])
    rhs_c = np.array([np.linalg.norm(_left_rhs(sys, data, i)) for i in range(r)])
    rep_r = tuple(
        SolveReport(
            iterations=0,
            final_relative_residual=float(np.linalg.norm(R_b[:, j]) / max(rhs_b[j], 1e-300)),
            tolerance=0.0,
            warm_started=False,
            breakdown=False,
        )
        for j in range(r)
    )
    rep_l = tuple(
        SolveReport(
            iterations=0,
            final_relative_residual=float(np.linalg.norm(R_c[:, i]) / max(rhs_c[i], 1e-300)),
            tolerance=0.0,
            warm_started=False,
            breakdown=False,
        )
        for i in range(r)
    )
    return InterpolationBasis(
        V=V,
        W=W,
        R_b=R_b,
        R_c=R_c,
        reports_right=rep_r,
        reports_left=rep_l,
        exact=True,
        data=data,
        rhs_b_norms=rhs_b,
        rhs_c_norms=rhs_c,
    )


def build_bases_inexact(
    sys: CoprimeRealization,
    data: InterpolationData,
    solver_config,
    v0: Optional[np.ndarray] = None,
    w0: Optional[np.ndarray] = None,
):
    """Iterative solves of the primitive systems to a relative tolerance.

    ``solver_config`` names gmres, bicg, or pg_shared (see inexact_solvers).
    The pg_shared route returns the shared-subspace Petrov-Galerkin basis and
    additionally hands back the spaces; here only the basis is returned.
    """
    from . import inexact_solvers as solvers

    cfg = solvers.SolverConfig.coerce(solver_config)
    if cfg.solver == "pg_shared":
        basis, _ = solvers.shared_pg_basis_build(
            sys, data, cfg.epsilon, max_iter=cfg.max_iter, v0=v0, w0=w0
        )
        return basis

    n, r = sys.n, data.r
    V = np.zeros((n, r), dtype=complex)
    W = np.zeros((n, r), dtype=complex)
    R_b = np.zeros((n, r), dtype=complex)
    R_c = np.zeros((n, r), dtype=complex)
    rep_r: list = [None] * r
    rep_l: list = [None] * r

    if cfg.solver == "bicg":
        if not data.is_coincident:
            raise ValueError("bicg dual solves require coincident interpolation data")
        for j in range(r):
            K_mat = sys.K(data.sigma[j])
            out = solvers.bicg_dual(
                lambda x, K=K_mat: K @ x,
                lambda x, K=K_mat: K.T @ x,
                _right_rhs(sys, data, j),
                _left_rhs(sys, data, j),
                cfg.epsilon,
                x0=None if v0 is None else v0[:, j],
                y0=None if w0 is None else w0[:, j],
                max_iter=cfg.max_iter or n,
            )
            V[:, j], W[:, j] = out.v, out.w
            R_b[:, j] = K_mat @ out.v - _right_rhs(sys, data, j)
            R_c[:, j] = K_mat.T @ out.w - _left_rhs(sys, data, j)
            rep_r[j], rep_l[j] = out.report_v, out.report_w
    elif cfg.solver == "gmres":
        for j in range(r):
            K_mat = sys.K(data.sigma[j])
            rhs = _right_rhs(sys, data, j)
            x, rep = solvers.gmres(
                lambda z, K=K_mat: K @ z,
                rhs,
                cfg.epsilon,
                x0=None if v0 is None else v0[:, j],
                max_iter=cfg.max_iter or n,
            )
            V[:, j] = x
            R_b[:, j] = K_mat @ x - rhs
            rep_r[j] = rep
        for i in range(r):
            K_mat = sys.K(data.mu[i])
            rhs = _left_rhs(sys, data, i)
            x, rep = solvers.gmres(
                lambda z, K=K_mat: K.T @ z,
                rhs,
                cfg.epsilon,
                x0=None if w0 is None else w0[:, i],
                max_iter=cfg.max_iter or n,
            )
            W[:, i] = x
            R_c[:, i] = K_mat.T @ x - rhs
            rep_l[i] = rep
    else:
        raise ValueError(f"unknown solver {cfg.solver!r}")

    for j, rep in enumerate(rep_r):
        if rep.stagnated or rep.breakdown:
            raise SolverStagnation(j, rep.final_relative_residual)
    for i, rep in enumerate(rep_l):
        if rep.stagnated or rep.breakdown:
            raise SolverStagnation(i, rep.final_relative_residual)

    rhs_b = np.array([np.linalg.norm(_right_rhs(sys, data, j)) for j in range(r)])
    rhs_c = np.array([np.linalg.norm(_left_rhs(sys, data, i)) for i in range(r)])
    return InterpolationBasis(
        V=V,
        W=W,
        R_b=R_b,
        R_c=R_c,
        reports_right=tuple(rep_r),
        reports_left=tuple(rep_l),
        exact=False,
        data=data,
        rhs_b_norms=rhs_b,
        rhs_c_norms=rhs_c,
    )


@dataclass(frozen=True)
class ReducedModel:
    """Projected system, kept in the (real, when possible) working basis.

    ``coprime`` evaluates the reduced factors; for descriptor sources the
    constant quadruple (Er, Ar, Br, Cr) is materialized from the same bases,
    so K_r(s) == s Er - Ar identically.
    """

    Vbasis: np.ndarray
    Wbasis: np.ndarray
    coprime: CoprimeRealization
    one_sided: bool = False
    reduced_descriptor: Optional[DescriptorSystem] = None
    reduced_delay: Optional[DelaySystem] = None
    well_posed: bool = True

    @property
    def r(self) -> int:
        return self.Vbasis.shape[1]


_PROBE_POINTS = (0.3511 + 0.81j, 1.77, 0.02 + 2.4j, 4.1 - 0.33j, 0.95 + 0.05j)


def _as_real_if_possible(M: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    scale = max(np.max(np.abs(M)), 1e-300)
    if np.max(np.abs(M.imag)) <= rtol * scale:
        return np.ascontiguousarray(M.real)
    return M


def project(sys: CoprimeRealization, basis: InterpolationBasis, one_sided: bool = False) -> ReducedModel:
    """Petrov-Galerkin projection onto the computed bases.

    With conjugate-closed data the bases are realified first (same spans,
    hence the same reduced transfer function); reduced constant matrices for
    descriptor and delay sources are materialized from the working bases.
    """
    V = basis.V
    W = basis.V if one_sided else basis.W
    if basis.data.is_conjugate_closed:
        V = _as_real_if_possible(realify_basis(V, basis.data.sigma).astype(complex))
        W = V if one_sided else _as_real_if_possible(
            realify_basis(basis.W, basis.data.mu).astype(complex)
        )

    pairing = W.T @ V
    sv = sla.svd(pairing, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise SingularPairing(
            f"W^T V numerically singular (smin/smax {sv[-1] / sv[0]:.2e})"
        )

    r = V.shape[1]
    reduced_desc = None
    reduced_delay = None
    src = sys.source
    if isinstance(src, DescriptorSystem):
        Er = _as_real_if_possible(W.T @ (src.E @ V))
        Ar = _as_real_if_possible(W.T @ (src.A @ V))
        Br = _as_real_if_possible(W.T @ src.B)
        Cr = _as_real_if_possible(src.C @ V)
        if all(np.isrealobj(M) for M in (Er, Ar, Br, Cr)):
            reduced_desc = DescriptorSystem(E=Er, A=Ar, B=Br, C=Cr)
            red = _descriptor_coprime_keep(reduced_desc)
        else:
            red = _quadruple_coprime(Er, Ar, Br, Cr, r, sys.m, sys.p)
    elif isinstance(src, DelaySystem):
        Er = _as_real_if_possible(W.T @ (src.E @ V))
        A0r = _as_real_if_possible(W.T @ (src.A0 @ V))
        A1r = _as_real_if_possible(W.T @ (src.A1 @ V))
        Br = _as_real_if_possible(W.T @ src.B)
        Cr = _as_real_if_possible(src.C @ V)
        if all(np.isrealobj(M) for M in (Er, A0r, A1r, Br, Cr)):
            reduced_delay = DelaySystem(
                E=Er, A0=A0r, A1=A1r, B=Br, C=Cr,
                tau_sys=src.tau_sys, tau_inp=src.tau_inp, tau_out=src.tau_out,
            )
            from .lti_core import delay_as_coprime

            red = delay_as_coprime(reduced_delay)
        else:
            red = _generic_projected(sys, V, W)
    else:
        red = _generic_projected(sys, V, W)

    well_posed = True
    for s in _PROBE_POINTS:
        Kr = red.K(s)
        svk = sla.svd(Kr, compute_uv=False)
        if svk[-1] <= 1e-12 * max(svk[0], 1e-300):
            well_posed = False
            break

    return ReducedModel(
        Vbasis=V,
        Wbasis=W,
        coprime=red,
        one_sided=one_sided,
        reduced_descriptor=reduced_desc,
        reduced_delay=reduced_delay,
        well_posed=well_posed,
    )


def _descriptor_coprime_keep(ds: DescriptorSystem) -> CoprimeRealization:
    from .lti_core import as_coprime

    return as_coprime(ds)


def _quadruple_coprime(Er, Ar, Br, Cr, r, m, p) -> CoprimeRealization:
    return CoprimeRealization(
        n=r,
        m=m,
        p=p,
        eval_K=lambda s: s * Er - Ar,
        eval_dK=lambda s: Er,
        eval_B=lambda s: Br,
        eval_C=lambda s: Cr,
        kind="descriptor",
    )


def _generic_projected(sys: CoprimeRealization, V: np.ndarray, W: np.ndarray) -> CoprimeRealization:
    Wt = W.T
    return CoprimeRealization(
        n=V.shape[1],
        m=sys.m,
        p=sys.p,
        eval_K=lambda s: Wt @ sys.K(s) @ V,
        eval_dK=lambda s: Wt @ sys.dK(s) @ V,
        eval_B=lambda s: Wt @ sys.B(s),
        eval_C=lambda s: sys.C(s) @ V,
        eval_dB=(lambda s: Wt @ sys.dB(s)) if sys.eval_dB is not None else None,
        eval_dC=(lambda s: sys.dC(s) @ V) if sys.eval_dC is not None else None,
        kind="projected",
    )


@dataclass(frozen=True)
class InterpolationReport:
    """Tangential defects of a reduced model at the interpolation data."""

    right_defect: np.ndarray
    right_scale: np.ndarray
    left_defect: np.ndarray
    left_scale: np.ndarray
    hermite_defect: Optional[np.ndarray]
    hermite_scale: Optional[np.ndarray]

    @property
    def right_relative(self) -> np.ndarray:
        return self.right_defect / np.maximum(self.right_scale, 1e-300)

    @property
    def left_relative(self) -> np.ndarray:
        return self.left_defect / np.maximum(self.left_scale, 1e-300)

    @property
    def hermite_relative(self) -> Optional[np.ndarray]:
        if self.hermite_defect is None:
            return None
        return self.hermite_defect / np.maximum(self.hermite_scale, 1e-300)

    def max_relative(self) -> float:
        worst = max(self.right_relative.max(), self.left_relative.max())
        if self.hermite_defect is not None:
            worst = max(worst, self.hermite_relative.max())
        return float(worst)


def verify_interpolation(
    sys: CoprimeRealization, red: ReducedModel, data: InterpolationData
) -> InterpolationReport:
    """Measure right, left, and (for coincident data) Hermite defects.

    Defects are reported, never raised: exact bases should push all of them
    to roundoff, inexact ones leave residual-driven gaps.
    """
    r = data.r
    right = np.zeros(r)
    right_scale = np.zeros(r)
    left = np.zeros(r)
    left_scale = np.zeros(r)
    for j in range(r):
        H = eval_transfer(sys, data.sigma[j])
        Hr = eval_transfer(red.coprime, data.sigma[j])
        hb = H @ data.b[:, j]
        right[j] = np.linalg.norm(hb - Hr @ data.b[:, j])
        right_scale[j] = np.linalg.norm(hb)
    for i in range(r):
        H = eval_transfer(sys, data.mu[i])
        Hr = eval_transfer(red.coprime, data.mu[i])
        ch = data.c[:, i] @ H
        left[i] = np.linalg.norm(ch - data.c[:, i] @ Hr)
        left_scale[i] = np.linalg.norm(ch)

    hermite = hermite_scale = None
    if data.is_coincident:
        hermite = np.zeros(r)
        hermite_scale = np.zeros(r)
        for j in range(r):
            dH = eval_transfer_derivative(sys, data.sigma[j])
            dHr = eval_transfer_derivative(red.coprime, data.sigma[j])
            full = data.c[:, j] @ dH @ data.b[:, j]
            hermite[j] = abs(data.c[:, j] @ dHr @ data.b[:, j] - full)
            hermite_scale[j] = abs(full)

    return InterpolationReport(
        right_defect=right,
        right_scale=right_scale,
        left_defect=left,
        left_scale=left_scale,
        hermite_defect=hermite,
        hermite_scale=hermite_scale,
    )
