"""H2 and H-infinity norms for descriptor and generalized coprime systems.

The H2 norm is the square-rooted energy integral
sqrt((1/2pi) int ||H(iw)||_F^2 dw); for stable descriptor systems it is
computed exactly through the controllability Gramian, otherwise by adaptive
quadrature over frequency.  The H-infinity norm is a scan-and-refine
estimator: it is a certified lower bound of the true peak whose quality is
controlled by the grid density.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NonDecaying, UnstablePencil
from .lti_core import (
    CoprimeRealization,
    DelaySystem,
    DescriptorSystem,
    as_coprime,
    delay_as_coprime,
    eval_transfer,
)
from .numerics import lyapunov_solve

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FrequencyGrid:
    """Nonnegative frequencies, strictly increasing; symmetry in w is exploited."""

    points: np.ndarray
    depth: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size == 0:
            raise ValueError("empty frequency grid")
        if np.any(pts < 0):
            raise ValueError("grid frequencies must be nonnegative")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid frequencies must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls, lo: float = 1e-4, hi: float = 1e6, num: int = 400) -> "FrequencyGrid":
        pts = np.concatenate(([0.0], np.logspace(np.log10(lo), np.log10(hi), num)))
        return cls(points=pts)

    def refined(self) -> "FrequencyGrid":
        """Insert a geometric midpoint in every interval (doubles density)."""
        p = self.points
        inner = np.where(p[:-1] > 0, np.sqrt(p[:-1] * p[1:]), 0.5 * (p[:-1] + p[1:]))
        merged = np.unique(np.concatenate([p, inner]))
        return FrequencyGrid(points=merged, depth=self.depth + 1)


def _coerce(system) -> CoprimeRealization:
    if isinstance(system, CoprimeRealization):
        return system
    if isinstance(system, DescriptorSystem):
        return as_coprime(system)
    if isinstance(system, DelaySystem):
        return delay_as_coprime(system)
    raise TypeError(f"unsupported system type {type(system).__name__}")


def h2_norm_descriptor(ds: DescriptorSystem) -> float:
    """Exact H2 norm sqrt(trace(C P C^T)) via the controllability Gramian."""
    if not ds.stable:
        raise UnstablePencil("H2 norm defined only for stable pencils")
    P = lyapunov_solve(ds.A, ds.E, ds.B @ ds.B.T, stability_check=False)
    val = float(np.trace(ds.C @ P @ ds.C.T))
    return float(np.sqrt(max(val, 0.0)))


def _adaptive_simpson(f, a: float, b: float, fa: float, fm: float, fb: float, tol: float, depth: int) -> float:
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    return _adaptive_simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) + _adaptive_simpson(
        f, m, b, fm, frm, fb, 0.5 * tol, depth - 1
    )


def _integrate_panels(f, breakpoints: np.ndarray, rel_tol: float = 1e-10) -> float:
    total = 0.0
    for a, b in zip(breakpoints[:-1], breakpoints[1:]):
        fa, fm, fb = f(a), f(0.5 * (a + b)), f(b)
        rough = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
        tol = rel_tol * max(abs(total), abs(rough), 1e-300)
        total += _adaptive_simpson(f, a, b, fa, fm, fb, tol, depth=28)
    return total


def _panel_breakpoints(lo_scale: float, omega_max: float, source) -> np.ndarray:
    lo = min(lo_scale, omega_max / 10.0)
    decades = np.log10(omega_max / lo)
    pts = [0.0, lo]
    pts.extend(np.logspace(np.log10(lo), np.log10(omega_max), max(int(8 * decades), 8))[1:])
    if isinstance(source, DescriptorSystem):
        # put resonance frequencies on panel edges so narrow peaks are sampled
        for lam in source.finite_poles:
            w = abs(lam.imag)
            if 0.0 < w < omega_max:
                pts.extend([w, max(w - abs(lam.real), 0.0), w + abs(lam.real)])
    return np.unique(np.clip(np.asarray(pts), 0.0, omega_max))


def h2_integral_sqrt(
    integrand,
    omega_start: float = 1e4,
    source=None,
    lo_scale: float = 1e-4,
    tail_rel: float = 1e-8,
    omega_cap: float = 1e9,
) -> float:
    """sqrt((1/2pi) * integral over the whole real line) of a symmetric integrand.

    ``integrand(w)`` must return the squared Frobenius response at +w; the
    negative half-line is folded in by symmetry.  The upper limit is extended
    by decades until the algebraic tail estimate w*g(w) drops below tail_rel
    of the accumulated integral.
    """
    omega_max = float(omega_start)
    total = _integrate_panels(integrand, _panel_breakpoints(lo_scale, omega_max, source))
    while True:
        tail = omega_max * integrand(omega_max)
        if tail <= tail_rel * max(total, 1e-300) or total == 0.0:
            break
        if omega_max >= omega_cap:
            raise NonDecaying(f"response tail not decaying by omega={omega_max:.1e}")
        new_max = min(omega_max * 10.0, omega_cap)
        seg = np.logspace(np.log10(omega_max), np.log10(new_max), 9)
        total += _integrate_panels(integrand, seg)
        omega_max = new_max
    return float(np.sqrt(max(total, 0.0) / np.pi))


def h2_norm_quadrature(system, grid: FrequencyGrid | None = None) -> float:
    """H2 norm by adaptive composite Simpson over frequency.

    Warns when the response at the top of the grid is not small relative to
    the peak (the system should be strictly proper).
    """
    sys_ = _coerce(system)
    grid = grid or FrequencyGrid.default()

    def g(w: float) -> float:
        H = eval_transfer(sys_, 1j * w)
        return float(np.linalg.norm(H, "fro") ** 2)

    sample = np.sqrt([g(w) for w in grid.points[:: max(len(grid.points) // 40, 1)]])
    peak = float(np.max(sample)) if sample.size else 0.0
    if peak == 0.0:
        return 0.0
    top = np.sqrt(g(grid.points[-1]))
    if top > 1e-3 * peak:
        warnings.warn(
            f"system may not be strictly proper: |H| at omega_max is {top:.2e} "
            f"vs peak {peak:.2e}",
            stacklevel=2,
        )
    lo = grid.points[1] if grid.points[0] == 0.0 and len(grid.points) > 1 else 1e-4
    return h2_integral_sqrt(
        g,
        omega_start=float(grid.points[-1]),
        source=getattr(sys_, "source", None),
        lo_scale=float(min(lo, 1e-2)),
    )


def _golden_max(f, a: float, b: float, rel_width: float = 1e-6):
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    scale = max(abs(b), 1e-12)
    while (b - a) > rel_width * scale:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def _scan_and_refine(value_at, grid: FrequencyGrid, refine: bool = True):
    pts = grid.points
    vals = np.array([value_at(w) for w in pts])
    best_w, best_v = float(pts[int(np.argmax(vals))]), float(np.max(vals))
    if not refine:
        return best_v, best_w
    interior = np.where(
        (vals[1:-1] >= vals[:-2]) & (vals[1:-1] >= vals[2:])
    )[0] + 1
    candidates = list(interior)
    if vals[0] >= vals[1]:
        candidates.append(0)
    if vals[-1] >= vals[-2]:
        candidates.append(len(pts) - 1)
    candidates.sort(key=lambda i: -vals[i])
    for i in candidates[:3]:
        a = pts[i - 1] if i > 0 else pts[0]
        b = pts[i + 1] if i < len(pts) - 1 else pts[-1]
        if b <= a:
            continue
        w, v = _golden_max(value_at, a, b)
        if v > best_v:
            best_v, best_w = float(v), float(w)
    return best_v, best_w


def hinf_norm(system, grid: FrequencyGrid | None = None):
    """Peak of ||H(iw)||_2 over frequency: coarse scan plus golden refinement.

    Returns (value, argmax omega).  Best-effort: the result is a lower bound
    of the true H-infinity norm, tight for grids resolving every peak.
    """
    sys_ = _coerce(system)
    grid = grid or FrequencyGrid.default()

    def val(w: float) -> float:
        return float(sla.norm(eval_transfer(sys_, 1j * w), 2))

    return _scan_and_refine(val, grid, refine=True)


def hinf_norm_on_grid(system, grid: FrequencyGrid):
    """Grid-restricted H-infinity scan (no refinement); used by bound checks."""
    sys_ = _coerce(system)

    def val(w: float) -> float:
        return float(sla.norm(eval_transfer(sys_, 1j * w), 2))

    return _scan_and_refine(val, grid, refine=False)


def difference_coprime(sys1, sys2) -> CoprimeRealization:
    """Block realization of H1(s) - H2(s)."""
    s1, s2 = _coerce(sys1), _coerce(sys2)
    if (s1.m, s1.p) != (s2.m, s2.p):
        raise DimensionMismatch(
            f"io dims differ: ({s1.p}x{s1.m}) vs ({s2.p}x{s2.m})"
        )
    n1, n2 = s1.n, s2.n

    def blockdiag(M1, M2):
        out = np.zeros((n1 + n2, n1 + n2), dtype=complex)
        out[:n1, :n1] = M1
        out[n1:, n1:] = M2
        return out

    return CoprimeRealization(
        n=n1 + n2,
        m=s1.m,
        p=s1.p,
        eval_K=lambda s: blockdiag(s1.K(s), s2.K(s)),
        eval_dK=lambda s: blockdiag(s1.dK(s), s2.dK(s)),
        eval_B=lambda s: np.vstack([s1.B(s), s2.B(s)]),
        eval_C=lambda s: np.hstack([s1.C(s), -s2.C(s)]),
        eval_dB=lambda s: np.vstack([s1.dB(s), s2.dB(s)]),
        eval_dC=lambda s: np.hstack([s1.dC(s), -s2.dC(s)]),
        kind="difference",
    )


def difference_descriptor(d1: DescriptorSystem, d2: DescriptorSystem) -> DescriptorSystem:
    """Augmented realization diag(E1,E2), diag(A1,A2), [B1;B2], [C1,-C2]."""
    if (d1.m, d1.p) != (d2.m, d2.p):
        raise DimensionMismatch("io dims differ")
    return DescriptorSystem(
        E=sla.block_diag(d1.E, d2.E),
        A=sla.block_diag(d1.A, d2.A),
        B=np.vstack([d1.B, d2.B]),
        C=np.hstack([d1.C, -d2.C]),
    )


def system_error(sys1, sys2, norm_kind: str = "h2", grid: FrequencyGrid | None = None) -> float:
    """Norm of the difference system.

    Two descriptor systems measured in H2 go through the exact block
    realization and the Lyapunov route; every other combination uses
    quadrature (H2) or the scan estimator (Hinf) on pointwise differences.
    """
    if norm_kind not in ("h2", "hinf"):
        raise ValueError(f"unknown norm kind {norm_kind!r}")
    d1 = sys1 if isinstance(sys1, DescriptorSystem) else getattr(_coerce(sys1), "source", None)
    d2 = sys2 if isinstance(sys2, DescriptorSystem) else getattr(_coerce(sys2), "source", None)
    if norm_kind == "h2" and isinstance(d1, DescriptorSystem) and isinstance(d2, DescriptorSystem):
        return h2_norm_descriptor(difference_descriptor(d1, d2))
    diff = difference_coprime(sys1, sys2)
    if norm_kind == "h2":
        return h2_norm_quadrature(diff, grid)
    return hinf_norm(diff, grid)[0]
