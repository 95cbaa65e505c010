"""Iterative rational Krylov for H2-optimal reduction, exact and inexact.

Each sweep projects onto the current interpolation bases, eigendecomposes
the reduced pencil with the left eigenvectors normalized so Y^H E_r X = I,
reflects the reduced poles into the right half-plane as the next shifts, and
reads the next tangent directions off the residues H_r(s) =
sum_k c_k b_k^T / (s - lambda_k).  The inexact variant swaps the direct
solves for the shared Petrov-Galerkin construction and warm-starts every
shift's solve from the previous sweep, so the final model carries an exact
backward perturbation certificate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import (
    EmptySpectrum,
    MultiplePoles,
    SingularReducedPencil,
    UnstableReduced,
)
from .interpolation import (
    InterpolationBasis,
    InterpolationData,
    ReducedModel,
    build_bases_exact,
    project,
)
from .lti_core import (
    CoprimeRealization,
    DescriptorSystem,
    as_coprime,
    eval_transfer,
    eval_transfer_derivative,
)
from .numerics import lyapunov_solve


@dataclass(frozen=True)
class IrkaState:
    """Snapshot of one outer iteration."""

    k: int
    shifts: np.ndarray
    b_dirs: np.ndarray
    c_dirs: np.ndarray
    shift_change: float
    converged: bool
    reflected: int
    inner_iterations: int
    inner_per_shift: tuple = ()
    reduced: Optional[ReducedModel] = None
    h2_error: Optional[float] = None


@dataclass(frozen=True)
class IrkaResult:
    reduced: ReducedModel
    history: tuple
    basis: InterpolationBasis
    converged: bool

    @property
    def final_shifts(self) -> np.ndarray:
        return self.history[-1].shifts

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def total_inner_iterations(self) -> int:
        return int(sum(st.inner_iterations for st in self.history))


def _canonical_order(shifts: np.ndarray) -> np.ndarray:
    """Deterministic shift ordering: by real part, then |imag|, +imag first."""
    return np.lexsort((-np.sign(shifts.imag), np.abs(shifts.imag), shifts.real))


def _closed_set(shifts: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Force exact conjugate closure onto an approximately closed set."""
    shifts = shifts.copy()
    b = b.copy()
    c = c.copy()
    scale = max(float(np.max(np.abs(shifts))), 1e-300)
    used = np.zeros(len(shifts), dtype=bool)
    for j in range(len(shifts)):
        if used[j]:
            continue
        if abs(shifts[j].imag) <= 1e-9 * max(abs(shifts[j]), scale * 1e-3):
            shifts[j] = shifts[j].real
            phase_c = c[np.argmax(np.abs(c[:, j])), j]
            phase_b = b[np.argmax(np.abs(b[:, j])), j]
            if abs(phase_c) > 0:
                c[:, j] = (c[:, j] * np.conj(phase_c / abs(phase_c))).real
            if abs(phase_b) > 0:
                b[:, j] = (b[:, j] * np.conj(phase_b / abs(phase_b))).real
            used[j] = True
            continue
        others = np.where(~used)[0]
        others = others[others != j]
        if others.size == 0:
            raise ValueError("shift set cannot be closed under conjugation")
        k = others[int(np.argmin(np.abs(shifts[others] - np.conj(shifts[j]))))]
        shifts[k] = np.conj(shifts[j])
        b[:, k] = np.conj(b[:, j])
        c[:, k] = np.conj(c[:, j])
        used[j] = used[k] = True
    return shifts, b, c


def init_shifts(
    ds: DescriptorSystem, r: int, strategy: str = "rectangle", seed: int = 0,
    given: Optional[np.ndarray] = None,
    log_range: tuple[float, float] = (0.5, 1.0),
):
    """Initial shifts and tangent directions.

    rectangle: uniform draws from the mirrored pole box (conjugate-closed);
    logspace: real points 10^a .. 10^b; given: a user-supplied closed list.
    SISO directions are identically one.
    """
    rng = np.random.default_rng(seed)
    if strategy == "rectangle":
        lam = ds.finite_poles
        if lam.size == 0:
            raise EmptySpectrum("rectangle strategy needs finite poles")
        re_lo, re_hi = np.min(np.abs(lam.real)), np.max(np.abs(lam.real))
        re_lo = max(re_lo, 1e-8 * max(re_hi, 1.0))
        im_hi = max(np.max(np.abs(lam.imag)), 1e-3 * re_hi)
        n_pair, n_real = divmod(r, 2)
        picks = rng.uniform(re_lo, re_hi, n_pair) + 1j * rng.uniform(0, im_hi, n_pair)
        shifts = np.concatenate([picks, np.conj(picks), rng.uniform(re_lo, re_hi, n_real)])
    elif strategy == "logspace":
        shifts = np.logspace(log_range[0], log_range[1], r).astype(complex)
    elif strategy == "given":
        if given is None:
            raise ValueError("strategy 'given' needs a shift list")
        shifts = np.asarray(given, dtype=complex).ravel()
        if shifts.size != r:
            raise ValueError("given shift list has wrong length")
    else:
        raise ValueError(f"unknown shift strategy {strategy!r}")

    if ds.m == 1:
        b = np.ones((1, r), dtype=complex)
    else:
        b = rng.standard_normal((ds.m, r)).astype(complex)
        b /= np.linalg.norm(b, axis=0)
    if ds.p == 1:
        c = np.ones((1, r), dtype=complex)
    else:
        c = rng.standard_normal((ds.p, r)).astype(complex)
        c /= np.linalg.norm(c, axis=0)
    shifts, b, c = _closed_set(shifts, b, c)
    order = _canonical_order(shifts)
    return shifts[order], b[:, order], c[:, order]


def shift_change_metric(new: np.ndarray, old: np.ndarray) -> float:
    """max_i min_j |new_i - old_j| / |old_j|."""
    dists = np.abs(new[:, None] - old[None, :]) / np.maximum(np.abs(old)[None, :], 1e-300)
    return float(np.max(np.min(dists, axis=1)))


def _greedy_match(new: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Permutation p with new[p[i]] assigned to ref[i], largest |ref| first."""
    used = np.zeros(len(new), dtype=bool)
    perm = np.empty(len(new), dtype=int)
    for i in np.argsort(-np.abs(ref)):
        d = np.abs(new - ref[i]) + np.where(used, np.inf, 0.0)
        j = int(np.argmin(d))
        used[j] = True
        perm[i] = j
    return perm


class _ShiftAccelerator:
    """Depth-1 Anderson mixing on the conjugate-pair representatives.

    The bare update sigma <- mirror(poles) is a fixed-point map whose local
    Jacobian can sit near +-1 (slow monotone drift or period-2 flutter);
    secant mixing collapses both while leaving the fixed points, hence the
    optimality conditions, untouched.  Acceleration engages only once the
    shift movement settles below 1 and the real/complex pair structure is
    unchanged between sweeps; degenerate or wild extrapolations fall back to
    the plain update.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self._prev = None  # (signature, sigma_reps, f_reps)

    @staticmethod
    def _reps(shifts: np.ndarray):
        idx = [j for j in range(len(shifts)) if shifts[j].imag >= 0]
        signature = tuple(shifts[j].imag > 0 for j in idx)
        return np.asarray(idx), signature

    def propose(self, current: np.ndarray, plain_next: np.ndarray, metric: float) -> np.ndarray:
        if not self.enabled:
            return plain_next
        perm = _greedy_match(plain_next, current)
        g = plain_next[perm]
        idx, sig = self._reps(current)
        idx_g, sig_g = self._reps(g)
        if sig_g != sig or not np.array_equal(idx_g, idx):
            self._prev = None
            return plain_next
        f = g[idx] - current[idx]
        out = plain_next
        if self._prev is not None and metric < 1.0:
            prev_sig, s_prev, f_prev = self._prev
            if prev_sig == sig:
                df = f - f_prev
                denom = float(np.vdot(df, df).real)
                if denom > 1e-300:
                    gamma = float(np.clip((np.vdot(df, f) / denom).real, -1.0, 5.0))
                    cand = current[idx] + f - gamma * ((current[idx] - s_prev) + df)
                    cand.real = np.abs(cand.real)
                    cand.real[cand.real == 0] = 1e-8
                    cand.imag[~np.asarray(sig)] = 0.0
                    full = np.concatenate([cand, np.conj(cand[np.asarray(sig)])])
                    if self._acceptable(full, g):
                        out = full
        self._prev = (sig, current[idx].copy(), f.copy())
        return out

    @staticmethod
    def _acceptable(cand: np.ndarray, g: np.ndarray) -> bool:
        scale = float(np.max(np.abs(g))) + 1e-300
        if not np.all(np.isfinite(cand)):
            return False
        if np.max(np.abs(cand)) > 20.0 * scale or np.min(np.abs(cand)) < scale * 1e-8:
            return False
        if len(cand) > 1:
            off = ~np.eye(len(cand), dtype=bool)
            gap = np.min(np.abs(cand[:, None] - cand[None, :])[off])
            if gap <= 1e-6 * scale:
                return False
        return True


def _eigen_directions(Er: np.ndarray, Ar: np.ndarray, Br: np.ndarray, Cr: np.ndarray):
    """Reduced poles and residue directions with Y^H E_r X = I normalization."""
    sv = sla.svd(Er, compute_uv=False)
    if sv[-1] <= 1e-13 * max(sv[0], 1e-300):
        raise SingularReducedPencil("projected E_r numerically singular")
    lam, Yl, X = sla.eig(Ar, Er, left=True, right=True)
    delta = np.diag(Yl.conj().T @ Er @ X)
    if np.any(np.abs(delta) <= 1e-14 * sla.norm(Er, 2)):
        raise MultiplePoles("eigenvector normalization broke down (defective pencil?)")
    Y = Yl / np.conj(delta)[np.newaxis, :]
    b_dirs = (Y.conj().T @ Br).T  # column k is b_k with residue c_k b_k^T
    c_dirs = Cr @ X
    return lam, b_dirs, c_dirs


def _next_data(red: ReducedModel, m: int, p: int):
    ds = red.reduced_descriptor
    if ds is None:
        raise SingularReducedPencil("reduced model has no real descriptor form")
    lam, b_dirs, c_dirs = _eigen_directions(ds.E, ds.A, ds.B, ds.C)
    shifts = -lam
    reflected = int(np.count_nonzero(shifts.real <= 0))
    shifts = np.where(shifts.real <= 0, np.abs(shifts.real) + 1j * shifts.imag, shifts)
    shifts = np.where(shifts.real == 0, 1e-8 + 1j * shifts.imag, shifts)
    if m == 1:
        b_dirs = np.ones((1, len(shifts)), dtype=complex)
    if p == 1:
        c_dirs = np.ones((1, len(shifts)), dtype=complex)
    # direction scale is immaterial to the spans; unit columns keep the
    # projected eigenproblem well conditioned across sweeps
    b_dirs = b_dirs / np.maximum(np.linalg.norm(b_dirs, axis=0), 1e-300)
    c_dirs = c_dirs / np.maximum(np.linalg.norm(c_dirs, axis=0), 1e-300)
    shifts, b_dirs, c_dirs = _closed_set(shifts, b_dirs, c_dirs)
    order = _canonical_order(shifts)
    return shifts[order], b_dirs[:, order], c_dirs[:, order], reflected


class H2ErrorTracker:
    """Fast sequence of ||H - H_r^(k)||_H2 values against one full model.

    Caches the complex Schur form of E^-1 A once; each reduced model then
    costs one small Lyapunov solve and one n x r Sylvester solve.
    """

    def __init__(self, ds: DescriptorSystem):
        self.ds = ds
        lu = sla.lu_factor(ds.E)
        self.A1 = sla.lu_solve(lu, ds.A)
        self.Bs = sla.lu_solve(lu, ds.B)
        self.T, self.Z = sla.schur(self.A1, output="complex")
        P = lyapunov_solve(ds.A, ds.E, ds.B @ ds.B.T, stability_check=False)
        self.h2_full_sq = float(np.trace(ds.C @ P @ ds.C.T))

    def _cross_gramian(self, rds: DescriptorSystem) -> np.ndarray:
        # solves A1 X + X A2 = -Bs Br^T Er^-T with A2 = (Er^-1 Ar)^T
        lur = sla.lu_factor(rds.E)
        A2 = sla.lu_solve(lur, rds.A).T
        Q = self.Bs @ sla.lu_solve(lur, rds.B).T
        S, U = sla.schur(A2.astype(complex), output="complex")
        rhs = -(self.Z.conj().T @ Q @ U)
        r = S.shape[0]
        n = self.T.shape[0]
        Yt = np.zeros((n, r), dtype=complex)
        eye = np.eye(n)
        for j in range(r):
            col = rhs[:, j] - Yt[:, :j] @ S[:j, j]
            Yt[:, j] = sla.solve_triangular(self.T + S[j, j] * eye, col, check_finite=False)
        return (self.Z @ Yt @ U.conj().T).real

    def error(self, red: ReducedModel) -> float:
        rds = red.reduced_descriptor
        if rds is None or not rds.stable:
            return float("nan")
        X = self._cross_gramian(rds)
        Pr = lyapunov_solve(rds.A, rds.E, rds.B @ rds.B.T, stability_check=False)
        h2_red_sq = float(np.trace(rds.C @ Pr @ rds.C.T))
        cross = float(np.trace(self.ds.C @ X @ rds.C.T))
        val = self.h2_full_sq - 2.0 * cross + h2_red_sq
        return float(np.sqrt(max(val, 0.0)))


def _run_irka(
    ds: DescriptorSystem,
    r: int,
    data0: InterpolationData,
    conv_tol: float,
    max_iter: int,
    solve_fn,
    trace_path=None,
    h2_trace: bool = False,
    acceleration: bool = True,
):
    sysc = as_coprime(ds)
    shifts = data0.sigma.copy()
    b_dirs = data0.b.copy()
    c_dirs = data0.c.copy()
    tracker = H2ErrorTracker(ds) if h2_trace else None
    # secant mixing is sound when the directions are fixed (SISO); for MIMO
    # the direction iteration must settle on its own, so run the bare sweep
    accel = _ShiftAccelerator(enabled=acceleration and ds.m == 1 and ds.p == 1)

    history = []
    basis = None
    red = None
    prev_v = prev_w = None
    converged = False
    trace_fh = open(trace_path, "w") if trace_path else None
    try:
        for k in range(max_iter):
            data = InterpolationData.coincident(shifts, b_dirs, c_dirs)
            basis = solve_fn(data, prev_v, prev_w)
            red = project(sysc, basis)
            prev_v, prev_w = basis.V, basis.W
            new_shifts, b_dirs, c_dirs, reflected = _next_data(red, ds.m, ds.p)
            metric = shift_change_metric(new_shifts, shifts)
            proposed = accel.propose(shifts, new_shifts, metric)
            if proposed is not new_shifts:
                pm = _greedy_match(new_shifts, proposed)
                b_dirs, c_dirs = b_dirs[:, pm], c_dirs[:, pm]
                proposed, b_dirs, c_dirs = _closed_set(proposed, b_dirs, c_dirs)
                order = _canonical_order(proposed)
                new_shifts = proposed[order]
                b_dirs, c_dirs = b_dirs[:, order], c_dirs[:, order]
            per_shift = tuple(int(rep.iterations) for rep in basis.reports_right)
            inner = int(sum(per_shift))
            converged = metric < conv_tol
            h2_err = tracker.error(red) if tracker else None
            state = IrkaState(
                k=k,
                shifts=shifts.copy(),
                b_dirs=basis.data.b.copy(),
                c_dirs=basis.data.c.copy(),
                shift_change=metric,
                converged=converged,
                reflected=reflected,
                inner_iterations=inner,
                inner_per_shift=per_shift,
                reduced=red,
                h2_error=h2_err,
            )
            history.append(state)
            if trace_fh:
                rec = {
                    "k": k,
                    "shifts": [[float(s.real), float(s.imag)] for s in shifts],
                    "shift_change": metric,
                    "inner_iterations": inner,
                }
                if h2_err is not None:
                    rec["h2_error"] = h2_err
                trace_fh.write(json.dumps(rec, sort_keys=True) + "\n")
            shifts = new_shifts
            if converged:
                break
    finally:
        if trace_fh:
            trace_fh.close()
    return IrkaResult(reduced=red, history=tuple(history), basis=basis, converged=converged)


def irka(
    ds: DescriptorSystem,
    r: int,
    init=None,
    conv_tol: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
    trace_path=None,
    h2_trace: bool = False,
    acceleration: bool = True,
) -> IrkaResult:
    """Exact-solve iteration toward the first-order H2 optimality conditions.

    ``init`` is a strategy name, or an explicit (shifts, b, c) triple.  Stops
    when the relative shift movement drops below conv_tol; non-convergence
    within max_iter is reported through the result, not raised.
    """
    if not ds.stable:
        raise UnstableReduced("full model must be stable for IRKA")
    data0 = _initial_data(ds, r, init, seed)
    sysc = as_coprime(ds)

    def solve_fn(data, v_prev, w_prev):
        return build_bases_exact(sysc, data)

    return _run_irka(
        ds, r, data0, conv_tol, max_iter, solve_fn, trace_path, h2_trace, acceleration
    )


def inexact_irka(
    ds: DescriptorSystem,
    r: int,
    eps: float,
    init=None,
    conv_tol: float = 1e-6,
    max_iter: int = 100,
    seed: int = 0,
    solver: str = "pg_shared",
    warm_start: bool = True,
    trace_path=None,
    h2_trace: bool = False,
    acceleration: bool = True,
):
    """IRKA with shared Petrov-Galerkin inexact solves and warm starts.

    Returns (result, backward_perturbation); the perturbation certifies that
    the final reduced model satisfies the H2 optimality conditions for the
    nearby full model with K(s) + F_2r.  With solver="gmres" no certificate
    exists and None is returned in its place.
    """
    from . import inexact_solvers as solvers
    from .interpolation import build_bases_inexact

    if not ds.stable:
        raise UnstableReduced("full model must be stable for IRKA")
    data0 = _initial_data(ds, r, init, seed)
    sysc = as_coprime(ds)

    def solve_fn(data, v_prev, w_prev):
        v0 = v_prev if warm_start else None
        w0 = w_prev if warm_start else None
        if solver == "pg_shared":
            basis, _ = solvers.shared_pg_basis_build(sysc, data, eps, v0=v0, w0=w0)
            return basis
        cfg = solvers.SolverConfig(solver=solver, epsilon=eps)
        return build_bases_inexact(sysc, data, cfg, v0=v0, w0=w0)

    result = _run_irka(
        ds, r, data0, conv_tol, max_iter, solve_fn, trace_path, h2_trace, acceleration
    )
    perturbation = None
    if solver == "pg_shared" and result.basis is not None:
        from .backward_error import build_f2r

        perturbation = build_f2r(result.basis)
    return result, perturbation


def _initial_data(ds, r, init, seed) -> InterpolationData:
    if init is None or isinstance(init, str):
        strategy = init or "rectangle"
        shifts, b, c = init_shifts(ds, r, strategy=strategy, seed=seed)
    else:
        shifts, b, c = init
        shifts = np.asarray(shifts, dtype=complex).ravel()
        b = np.atleast_2d(np.asarray(b, dtype=complex))
        c = np.atleast_2d(np.asarray(c, dtype=complex))
        shifts, b, c = _closed_set(shifts, b, c)
        order = _canonical_order(shifts)
        shifts, b, c = shifts[order], b[:, order], c[:, order]
    return InterpolationData.coincident(shifts, b, c)


@dataclass(frozen=True)
class OptimalityReport:
    """First-order H2 optimality defects at the mirrored reduced poles."""

    poles: np.ndarray
    right_defect: np.ndarray
    left_defect: np.ndarray
    hermite_defect: np.ndarray

    @property
    def max_defect(self) -> float:
        return float(
            max(self.right_defect.max(), self.left_defect.max(), self.hermite_defect.max())
        )


def optimality_residuals(system, red: ReducedModel) -> OptimalityReport:
    """Measure the three interpolatory optimality conditions of the reduced model.

    The reduced pencil must be diagonalizable with simple, stable poles;
    defects are normalized by the corresponding full-model response sizes.
    """
    sysc = system if isinstance(system, CoprimeRealization) else as_coprime(system)
    rds = red.reduced_descriptor
    if rds is None:
        raise SingularReducedPencil("optimality conditions need a descriptor reduced model")
    lam, b_dirs, c_dirs = _eigen_directions(rds.E, rds.A, rds.B, rds.C)
    if np.any(lam.real >= 0):
        raise UnstableReduced("reduced model has a pole with Re >= 0")
    if len(lam) > 1:
        gap = np.min(
            np.abs(lam[:, None] - lam[None, :])[~np.eye(len(lam), dtype=bool)]
        )
        if gap <= 1e-8 * np.max(np.abs(lam)):
            raise MultiplePoles(f"pole gap {gap:.2e} too small for residue extraction")

    r = len(lam)
    right = np.zeros(r)
    left = np.zeros(r)
    herm = np.zeros(r)
    for k in range(r):
        s = -lam[k]
        H = eval_transfer(sysc, s)
        Hr = eval_transfer(red.coprime, s)
        bk, ck = b_dirs[:, k], c_dirs[:, k]
        right[k] = np.linalg.norm((H - Hr) @ bk) / max(np.linalg.norm(H @ bk), 1e-300)
        left[k] = np.linalg.norm(ck @ (H - Hr)) / max(np.linalg.norm(ck @ H), 1e-300)
        dH = eval_transfer_derivative(sysc, s)
        dHr = eval_transfer_derivative(red.coprime, s)
        herm[k] = abs(ck @ (dH - dHr) @ bk) / max(abs(ck @ dH @ bk), 1e-300)
    return OptimalityReport(
        poles=lam, right_defect=right, left_defect=left, hermite_defect=herm
    )
