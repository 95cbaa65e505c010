"""Forward error bounds for inexact interpolatory reduction.

The local (per-point) bounds dominate the tangential interpolation defects
of the inexactly computed reduced model; their ingredients are transfer
condition numbers, angles between residual-bearing subspaces, and the norms
of two skew projectors.  The skew projectors are handled in the bilinear
pairing of the reduction: P(s) = K(s) V Kr(s)^-1 W^T projects onto
Ran(K(s)V) along the orthogonal complement of span(conj W), so every
Hermitian-geometry quantity below is evaluated with the conjugated left
basis.  A subspace perturbation bound and a global relative H-infinity
bound connect the solver tolerance to model-level error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import SingularPairing, ToleranceViolated, ZeroTransfer
from .interpolation import (
    InterpolationBasis,
    InterpolationData,
    ReducedModel,
    project,
    verify_interpolation,
)
from .lti_core import CoprimeRealization, eval_transfer, kinv_norm
from .numerics import (
    Subspace,
    min_singular_scaled,
    oblique_projector_norm,
    subspace_angle_sin,
)
from .system_norms import FrequencyGrid, difference_coprime, hinf_norm_on_grid


class SkewProjectors:
    """Factored projectors P(s) = K(s)V Kr^-1 W^T and Q(s) = V Kr^-1 W^T K(s).

    Never materialized at full size unless n <= 500; ranges and cokernels are
    exposed as explicit subspaces.
    """

    def __init__(self, sys: CoprimeRealization, V: np.ndarray, W: np.ndarray, s: complex):
        self.s = s
        self.V = np.asarray(V, dtype=complex)
        self.W = np.asarray(W, dtype=complex)
        self.K = sys.K(s)
        self.KV = self.K @ self.V
        Kr = self.W.T @ self.KV
        sv = sla.svd(Kr, compute_uv=False)
        if sv[-1] <= 1e-13 * max(sv[0], 1e-300):
            raise SingularPairing(f"reduced K(s) singular at s={s}")
        self._lu = sla.lu_factor(Kr)

    def apply_p(self, x: np.ndarray) -> np.ndarray:
        return self.KV @ sla.lu_solve(self._lu, self.W.T @ x)

    def apply_q(self, x: np.ndarray) -> np.ndarray:
        return self.V @ sla.lu_solve(self._lu, self.W.T @ (self.K @ x))

    def norm_p(self) -> float:
        return oblique_projector_norm(self.KV, np.conj(self.W))

    def norm_q(self) -> float:
        return oblique_projector_norm(self.V, np.conj(self.K.T @ self.W))

    def range_p(self) -> Subspace:
        return Subspace(self.KV)

    def range_q(self) -> Subspace:
        return Subspace(self.V)

    def cokernel_p(self) -> Subspace:
        return Subspace(np.conj(self.W))

    def cokernel_q(self) -> Subspace:
        return Subspace(np.conj(self.K.T @ self.W))

    def dense_p(self) -> np.ndarray:
        if self.K.shape[0] > 500:
            raise MemoryError("dense projector only materialized for n <= 500")
        return self.KV @ sla.lu_solve(self._lu, self.W.T)


def condition_numbers(sys: CoprimeRealization, s: complex):
    """Transfer-response condition numbers (cond_B, cond_C) at a point."""
    kf = sys.factor(s)
    B, C = sys.B(s), sys.C(s)
    H = C @ kf.solve(B)
    hnorm = sla.norm(H, 2)
    if hnorm < 1e-300:
        raise ZeroTransfer(f"H(s) vanishes at s={s}")
    CKinv_norm = sla.norm(kf.solve_t(C.T), 2)
    KinvB_norm = sla.norm(kf.solve(B), 2)
    cond_b = CKinv_norm * sla.norm(B, 2) / hnorm
    cond_c = sla.norm(C, 2) * KinvB_norm / hnorm
    return float(cond_b), float(cond_c)


@dataclass
class PointBounds:
    """Bounds and measured defects for one interpolation point."""

    sigma: complex
    mu: complex
    eta_norm: float
    xi_norm: float
    cond_b_tangential: float
    cond_c_tangential: float
    sin_cp_w: float
    cos_p_w: float
    sin_bm_v: float
    cos_q_v: float
    bound_right_rel: float
    defect_right_rel: float
    bound_left_rel: float
    defect_left_rel: float
    kinv_norm: Optional[float] = None
    bound_cross_abs: Optional[float] = None
    defect_cross_abs: Optional[float] = None
    deriv_const: Optional[float] = None
    bound_deriv_abs: Optional[float] = None
    defect_deriv_abs: Optional[float] = None


@dataclass
class ForwardBoundReport:
    points: list
    coincident: bool
    schema: str = "mor/forward-bounds/1"

    def all_dominate(self, slack: float = 1.0) -> bool:
        """True when every bound is >= its measured defect (times slack)."""
        for pb in self.points:
            if pb.bound_right_rel < slack * pb.defect_right_rel:
                return False
            if pb.bound_left_rel < slack * pb.defect_left_rel:
                return False
            if self.coincident and pb.bound_cross_abs < slack * pb.defect_cross_abs:
                return False
            if self.coincident and pb.bound_deriv_abs < slack * pb.defect_deriv_abs:
                return False
        return True

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, complex):
                return {"re": o.real, "im": o.imag}
            raise TypeError(type(o))

        payload = {"schema": self.schema, "coincident": self.coincident,
                   "points": [asdict(p) for p in self.points]}
        return json.dumps(payload, default=enc, sort_keys=True)


def _dkinv_norm(sys: CoprimeRealization, s: complex) -> float:
    """|| d/ds K(s)^-1 || = || K^-1 dK K^-1 ||, exact at desk scale."""
    kf = sys.factor(s)
    n = sys.n
    if n <= 2000:
        M = kf.solve(sys.dK(s) @ kf.solve(np.eye(n, dtype=complex)))
        return float(sla.norm(M, 2))
    rng = np.random.default_rng(0xD1FF)
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    x /= np.linalg.norm(x)
    dK = sys.dK(s)
    lam = 0.0
    for _ in range(20):
        y = kf.solve(dK @ kf.solve(x))
        z = kf.solve_h(dK.conj().T @ kf.solve_h(y))
        lam = float(np.linalg.norm(z))
        x = z / lam
    return float(np.sqrt(lam))


def local_bounds(
    sys: CoprimeRealization,
    basis: InterpolationBasis,
    data: InterpolationData,
    one_sided: bool = False,
) -> ForwardBoundReport:
    """Per-point interpolation-error bounds with their measured defects.

    The right/left bounds are relative to the tangential response norms; the
    coincident-point cross-moment and derivative bounds are absolute.  The
    derivative constant is assembled from analytic factor derivatives (finite
    differences could spuriously break domination).
    """
    V = basis.V
    W = basis.V if one_sided else basis.W
    red = project(sys, basis, one_sided=one_sided)
    rep = verify_interpolation(sys, red, data)

    eta_norms, xi_norms = basis.residual_norms()
    if one_sided:
        # residuals of V used as left approximations: xi_i = K(mu)^T v_i - C^T c_i
        xi_cols = np.zeros_like(basis.V)
        for i in range(data.r):
            xi_cols[:, i] = (
                sys.K(data.mu[i]).T @ V[:, i] - sys.C(data.mu[i]).T @ data.c[:, i]
            )
        xi_norms = np.linalg.norm(xi_cols, axis=0)

    points = []
    for j in range(data.r):
        sj, mj = data.sigma[j], data.mu[j]
        kf_s = sys.factor(sj)
        proj_s = SkewProjectors(sys, V, W, sj)
        C_s = sys.C(sj)
        B_s = sys.B(sj)
        H_s = C_s @ kf_s.solve(B_s)
        Hb = H_s @ data.b[:, j]
        Bb = B_s @ data.b[:, j]
        ckinv_norm = sla.norm(kf_s.solve_t(C_s.T), 2)
        cond_b = float(ckinv_norm * np.linalg.norm(Bb) / max(np.linalg.norm(Hb), 1e-300))
        cp_basis = kf_s.solve_h(np.conj(C_s.T))
        sin_cw = subspace_angle_sin(np.conj(W), cp_basis)
        cos_pw = 1.0 / proj_s.norm_p()
        bound_right = cond_b * (sin_cw / cos_pw) * eta_norms[j] / max(np.linalg.norm(Bb), 1e-300)

        coincident = data.is_coincident
        kf_m = kf_s if coincident else sys.factor(mj)
        proj_m = proj_s if coincident else SkewProjectors(sys, V, W, mj)
        C_m = C_s if coincident else sys.C(mj)
        B_m = B_s if coincident else sys.B(mj)
        H_m = H_s if coincident else C_m @ kf_m.solve(B_m)
        cH = data.c[:, j] @ H_m
        cC = data.c[:, j] @ C_m
        KinvB = kf_m.solve(B_m)
        cond_c = float(
            np.linalg.norm(cC) * sla.norm(KinvB, 2) / max(np.linalg.norm(cH), 1e-300)
        )
        sin_bv = subspace_angle_sin(V, KinvB)
        cos_qv = 1.0 / proj_m.norm_q()
        bound_left = cond_c * (sin_bv / cos_qv) * xi_norms[j] / max(np.linalg.norm(cC), 1e-300)

        pb = PointBounds(
            sigma=complex(sj),
            mu=complex(mj),
            eta_norm=float(eta_norms[j]),
            xi_norm=float(xi_norms[j]),
            cond_b_tangential=cond_b,
            cond_c_tangential=cond_c,
            sin_cp_w=float(sin_cw),
            cos_p_w=float(cos_pw),
            sin_bm_v=float(sin_bv),
            cos_q_v=float(cos_qv),
            bound_right_rel=float(bound_right),
            defect_right_rel=float(rep.right_relative[j]),
            bound_left_rel=float(bound_left),
            defect_left_rel=float(rep.left_relative[j]),
        )

        if coincident:
            kinv = kinv_norm(sys, sj)
            pb.kinv_norm = float(kinv)
            pb.bound_cross_abs = float(
                kinv * eta_norms[j] * xi_norms[j] / max(cos_pw, cos_qv)
            )
            from .lti_core import eval_transfer as _et

            Hr_val = _et(red.coprime, sj)
            pb.defect_cross_abs = float(
                abs(data.c[:, j] @ (H_s - Hr_val) @ data.b[:, j])
            )
            # derivative pieces: d/ds[c^T C K^-1], d/ds[K^-1 B b], d/ds[K^-1]
            dK = sys.dK(sj)
            dB = sys.dB(sj)
            dC = sys.dC(sj)
            w_exact = kf_s.solve_t(C_s.T @ data.c[:, j])
            term1 = kf_s.solve_t(dC.T @ data.c[:, j] - dK.T @ w_exact)
            v_exact = kf_s.solve(Bb)
            term2 = kf_s.solve(dB @ data.b[:, j] - dK @ v_exact)
            M_const = max(
                float(np.linalg.norm(term1)),
                float(np.linalg.norm(term2)),
                _dkinv_norm(sys, sj),
            )
            pb.deriv_const = M_const
            fp = eta_norms[j] / cos_pw
            fq = xi_norms[j] / cos_qv
            pb.bound_deriv_abs = float(M_const * (fp + fq + fp * fq))
            pb.defect_deriv_abs = float(rep.hermite_defect[j])

        points.append(pb)

    return ForwardBoundReport(points=points, coincident=data.is_coincident)


@dataclass
class SubspaceBoundReport:
    """Angle bounds between exact and inexact interpolation subspaces."""

    bound_v: float
    bound_w: float
    actual_v: float
    actual_w: float
    practical_bound_v: float
    practical_bound_w: float
    kappa_v: float
    kappa_w: float
    epsilon: float


def subspace_perturbation_bounds(
    sys: CoprimeRealization,
    exact_basis: InterpolationBasis,
    inexact_basis: InterpolationBasis,
    eps: float,
) -> SubspaceBoundReport:
    """Angle bounds sin(V, Vhat) <= eps sqrt(r) / smin(Vhat D) and the
    unit-column practical variant with its linear-system condition factor."""
    data = inexact_basis.data
    r = data.r
    eta_norms, xi_norms = inexact_basis.residual_norms()
    rhs_b, rhs_c = inexact_basis.rhs_b_norms, inexact_basis.rhs_c_norms
    if np.any(eta_norms > eps * rhs_b * (1 + 1e-12)) or np.any(
        xi_norms > eps * rhs_c * (1 + 1e-12)
    ):
        worst = max(
            float(np.max(eta_norms / np.maximum(rhs_b, 1e-300))),
            float(np.max(xi_norms / np.maximum(rhs_c, 1e-300))),
        )
        raise ToleranceViolated(
            f"recorded residuals reach {worst:.3e}, above eps={eps:.3e}"
        )

    kinv_sigma = np.array([kinv_norm(sys, s) for s in data.sigma])
    kinv_mu = (
        kinv_sigma if data.is_coincident else np.array([kinv_norm(sys, s) for s in data.mu])
    )
    Vh, Wh = inexact_basis.V, inexact_basis.W
    d_v = 1.0 / (kinv_sigma * rhs_b)
    d_w = 1.0 / (kinv_mu * rhs_c)
    bound_v = eps * np.sqrt(r) / min_singular_scaled(Vh, d_v)
    bound_w = eps * np.sqrt(r) / min_singular_scaled(Wh, d_w)

    vnorms = np.linalg.norm(Vh, axis=0)
    wnorms = np.linalg.norm(Wh, axis=0)
    kappa_v = float(np.max(kinv_sigma * rhs_b / vnorms))
    kappa_w = float(np.max(kinv_mu * rhs_c / wnorms))
    practical_v = kappa_v * eps * np.sqrt(r) / min_singular_scaled(Vh, 1.0 / vnorms)
    practical_w = kappa_w * eps * np.sqrt(r) / min_singular_scaled(Wh, 1.0 / wnorms)

    actual_v = subspace_angle_sin(Vh, exact_basis.V)
    actual_w = subspace_angle_sin(Wh, exact_basis.W)
    return SubspaceBoundReport(
        bound_v=float(bound_v),
        bound_w=float(bound_w),
        actual_v=float(actual_v),
        actual_w=float(actual_w),
        practical_bound_v=float(practical_v),
        practical_bound_w=float(practical_w),
        kappa_v=kappa_v,
        kappa_w=kappa_w,
        epsilon=eps,
    )


@dataclass
class GlobalBoundReport:
    bound: float
    actual: float
    amplification: float
    sin_v: float
    sin_w: float
    skipped_points: list
    grid_size: int


def global_hinf_bound(
    sys: CoprimeRealization,
    exact_red: ReducedModel,
    inexact_red: ReducedModel,
    grid: FrequencyGrid | None = None,
) -> GlobalBoundReport:
    """Relative H-infinity distance bound between exact and inexact models.

    All omega extrema are taken over the finite grid (the true suprema are
    not computable in general); the measured error uses the same grid so the
    pointwise inequality chain survives the discretization.
    """
    grid = grid or FrequencyGrid.default(num=60)
    V, W = exact_red.Vbasis, exact_red.Wbasis
    Vh, Wh = inexact_red.Vbasis, inexact_red.Wbasis
    sin_v = subspace_angle_sin(Vh, V)
    sin_w = subspace_angle_sin(Wh, W)

    max_cond_c = 0.0
    max_cond_b = 0.0
    min_cos_qhat = np.inf
    min_cos_p = np.inf
    skipped = []
    for w in grid.points:
        s = 1j * w
        try:
            Kr = exact_red.coprime.K(s)
            Hr = exact_red.coprime.C(s) @ np.linalg.solve(Kr, exact_red.coprime.B(s))
            QKB = V @ np.linalg.solve(Kr, exact_red.coprime.B(s))
            cond_c = sla.norm(sys.C(s), 2) * sla.norm(QKB, 2) / max(sla.norm(Hr, 2), 1e-300)

            Krh = inexact_red.coprime.K(s)
            Hrh = inexact_red.coprime.C(s) @ np.linalg.solve(Krh, inexact_red.coprime.B(s))
            CP = (sys.C(s) @ Vh) @ np.linalg.solve(Krh, Wh.T)
            cond_b = sla.norm(CP, 2) * sla.norm(sys.B(s), 2) / max(sla.norm(Hrh, 2), 1e-300)

            K_full = sys.K(s)
            cos_qhat = 1.0 / oblique_projector_norm(Vh, np.conj(K_full.T @ Wh))
            cos_p = 1.0 / oblique_projector_norm(K_full @ V, np.conj(W))
        except (SingularPairing, np.linalg.LinAlgError):
            skipped.append(float(w))
            continue
        max_cond_c = max(max_cond_c, float(cond_c))
        max_cond_b = max(max_cond_b, float(cond_b))
        min_cos_qhat = min(min_cos_qhat, cos_qhat)
        min_cos_p = min(min_cos_p, cos_p)

    amplification = 2.0 * max(max_cond_c / min_cos_qhat, max_cond_b / min_cos_p)
    bound = amplification * max(sin_v, sin_w)

    err, _ = hinf_norm_on_grid(difference_coprime(exact_red.coprime, inexact_red.coprime), grid)
    nr, _ = hinf_norm_on_grid(exact_red.coprime, grid)
    nrh, _ = hinf_norm_on_grid(inexact_red.coprime, grid)
    actual = err / max(0.5 * (nr + nrh), 1e-300)
    return GlobalBoundReport(
        bound=float(bound),
        actual=float(actual),
        amplification=float(amplification),
        sin_v=float(sin_v),
        sin_w=float(sin_w),
        skipped_points=skipped,
        grid_size=len(grid.points),
    )
