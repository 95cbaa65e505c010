"""Experiment drivers and the ``mor`` command-line harness.

Five desk-scale studies mirror the published experiment suite: an epsilon
sweep of interpolation defects against their bounds on a delay surrogate,
subspace-angle/relative-error tables for optimal versus ad hoc shifts, a
shift-quality comparison of conditioning quantities over random shift draws,
an exact-versus-inexact IRKA comparison, and a warm-start effort study.
Every run is a pure function of its configuration (seeds included): reruns
write byte-identical artifacts.  Exit codes: 0 done, 1 bad configuration,
2 a bound was beaten by its measurement.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.linalg as sla

from . import forward_error as fw
from . import h2opt_irka as hk
from . import inexact_solvers as solvers
from .backward_error import verify_backward_interpolation
from .errors import ConfigError, MorError, RankDeficientBasis, SingularPairing
from .interpolation import (
    InterpolationData,
    build_bases_exact,
    build_bases_inexact,
    project,
    verify_interpolation,
)
from .lti_core import (
    DescriptorSystem,
    as_coprime,
    delay_as_coprime,
    delay_heat_surrogate,
    eval_transfer,
    load_system,
    random_stable_descriptor,
)
from .numerics import min_singular_scaled, oblique_projector_norm, subspace_angle_sin
from .system_norms import (
    FrequencyGrid,
    difference_coprime,
    difference_descriptor,
    h2_norm_descriptor,
    hinf_norm,
)

EXPERIMENTS = (
    "eps_sweep",
    "angle_table",
    "shift_quality",
    "irka_compare",
    "warmstart_study",
)

_DEFAULT_EPS = {
    "eps_sweep": tuple(10.0 ** (-k / 2.0) for k in range(2, 17)),
    "angle_table": tuple(10.0 ** -k for k in range(1, 9)),
    "shift_quality": (),
    "irka_compare": (1e-5, 1e-4, 1e-3, 1e-2, 1e-1),
    "warmstart_study": (1e-3,),
}

_DEFAULT_SYSTEM = {
    "eps_sweep": {"generator": "delay_heat", "n": 400, "seed": 0},
    # wide, lightly damped spectrum: iterative solves then need well over r
    # iterations even at loose tolerances, so inexact bases keep full rank
    "angle_table": {
        "generator": "random_descriptor",
        "n": 800,
        "m": 1,
        "p": 1,
        "seed": 0,
        "re_range": (0.001, 50.0),
        "im_max": 20.0,
    },
    "shift_quality": {
        "generator": "random_descriptor",
        "n": 600,
        "m": 1,
        "p": 1,
        "seed": 0,
        "re_range": (0.05, 2.0),
        "im_max": 8.0,
    },
    "irka_compare": {
        "generator": "random_descriptor",
        "n": 1000,
        "m": 2,
        "p": 2,
        "seed": 0,
        "re_range": (0.5, 5.0),
        "im_max": 2.0,
    },
    "warmstart_study": {
        "generator": "random_descriptor",
        "n": 1000,
        "m": 2,
        "p": 2,
        "seed": 0,
        "re_range": (0.5, 5.0),
        "im_max": 2.0,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment cell: system recipe, order, tolerances, trial counts."""

    experiment: str
    system: dict = field(default_factory=dict)
    r: int = 6
    eps_list: tuple = ()
    trials: int = 200
    r_list: tuple = (2, 6, 10, 14)
    seed: int = 0
    out_dir: Optional[str] = None
    threads: int = 1
    grid: dict = field(default_factory=lambda: {"lo": 1e-4, "hi": 1e6, "num": 400})
    max_iter: int = 100
    conv_tol: float = 1e-6

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.eps_list:
            object.__setattr__(self, "eps_list", _DEFAULT_EPS[self.experiment])
        if not self.system:
            object.__setattr__(self, "system", dict(_DEFAULT_SYSTEM[self.experiment]))
        for e in self.eps_list:
            if not (0.0 < e < 1.0):
                raise ConfigError(f"epsilon {e} outside (0, 1)")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.r < 1:
            raise ConfigError("r must be >= 1")
        if "mtx" in self.system:
            path = Path(self.system["mtx"])
            if not path.exists():
                raise ConfigError(f"system file {path} does not exist")

    @classmethod
    def from_file(cls, path, experiment: Optional[str] = None) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        if experiment is not None:
            raw["experiment"] = experiment
        raw["eps_list"] = tuple(raw.get("eps_list", ()))
        raw["r_list"] = tuple(raw.get("r_list", (2, 6, 10, 14)))
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def frequency_grid(self) -> FrequencyGrid:
        return FrequencyGrid.default(
            lo=self.grid.get("lo", 1e-4),
            hi=self.grid.get("hi", 1e6),
            num=int(self.grid.get("num", 400)),
        )


def build_system(spec: dict):
    """Instantiate the system a config names (generator recipe or mtx dir)."""
    if "mtx" in spec:
        return load_system(spec["mtx"])
    gen = spec.get("generator", "random_descriptor")
    kw = {k: v for k, v in spec.items() if k != "generator"}
    if gen == "delay_heat":
        return delay_heat_surrogate(n=kw.get("n", 400), seed=kw.get("seed", 0))
    if gen == "random_descriptor":
        if "re_range" in kw:
            kw["re_range"] = tuple(kw["re_range"])
        return random_stable_descriptor(
            n=kw.get("n", 100),
            m=kw.get("m", 1),
            p=kw.get("p", 1),
            seed=kw.get("seed", 0),
            spd_e=kw.get("spd_e", False),
            re_range=kw.get("re_range", (0.01, 10.0)),
            im_max=kw.get("im_max", 5.0),
        )
    raise ConfigError(f"unknown generator {gen!r}")


# ---------------------------------------------------------------------------
# deterministic serialization helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.complexfloating):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=1) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _maybe_write(cfg: ExperimentConfig, report: dict, csv_blocks: dict) -> None:
    if cfg.out_dir is None:
        return
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / f"{cfg.experiment}.json", report)
    for name, (header, rows) in csv_blocks.items():
        _write_csv(out / f"{cfg.experiment}_{name}.csv", header, rows)


def _pairwise_slopes(x: np.ndarray, y: np.ndarray) -> list:
    out = []
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            if x[j] != x[i]:
                out.append((y[j] - y[i]) / (x[j] - x[i]))
    return out


def _fit_slope(eps: np.ndarray, values: np.ndarray, floor: float = 1e-13) -> float:
    """Theil-Sen slope of log(value) vs log(eps), masking the noise floor.

    The median of pairwise slopes is robust against the run-to-run alignment
    scatter that residual-direction effects put on individual cells.
    """
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = values > floor
    if np.count_nonzero(mask) < 2:
        return float("nan")
    slopes = _pairwise_slopes(np.log10(eps[mask]), np.log10(values[mask]))
    return float(np.median(slopes))


def _pooled_slope(eps: np.ndarray, curves: np.ndarray, floor: float = 1e-13) -> float:
    """Median of within-curve pairwise log-log slopes, pooled over columns."""
    eps = np.asarray(eps, dtype=float)
    pool = []
    for j in range(curves.shape[1]):
        vals = np.asarray(curves[:, j], dtype=float)
        mask = vals > floor
        if np.count_nonzero(mask) >= 2:
            pool.extend(_pairwise_slopes(np.log10(eps[mask]), np.log10(vals[mask])))
    return float(np.median(pool)) if pool else float("nan")


# ---------------------------------------------------------------------------
# experiment: eps_sweep (delay surrogate, defects and local bounds vs eps)


def run_eps_sweep(cfg: ExperimentConfig) -> dict:
    system = build_system(cfg.system)
    sysc = delay_as_coprime(system) if not isinstance(system, DescriptorSystem) else as_coprime(system)
    sigma = np.array([1e-3, 10.0 ** -1.5, 1.0])
    r = sigma.size
    data = InterpolationData.coincident(sigma, np.ones((sysc.m, r)), np.ones((sysc.p, r)))

    eps_arr = np.asarray(cfg.eps_list, dtype=float)
    h_vals = np.array([abs(eval_transfer(sysc, s)[0, 0]) for s in sigma])
    floor = 1e-13 * float(np.max(h_vals))

    def eval_floor(red, j) -> float:
        # measured defects below the roundoff of the two transfer evaluations
        # are noise, not measurements; bounds need only dominate above this
        s = sigma[j]
        Kr = red.coprime.K(s)
        sv = sla.svd(Kr, compute_uv=False)
        amp_red = (
            sla.norm(red.coprime.C(s), 2) * sla.norm(red.coprime.B(s), 2) / max(sv[-1], 1e-300)
        )
        kf = sysc.factor(s)
        amp_full = sla.norm(kf.solve_t(sysc.C(s).T), 2) * np.linalg.norm(
            sysc.B(s) @ data.b[:, j]
        )
        return 128.0 * np.finfo(float).eps * (amp_red + amp_full)

    rows = []
    defect_two = np.zeros((len(eps_arr), r))
    defect_one = np.zeros((len(eps_arr), r))
    bound_two = np.zeros((len(eps_arr), r))
    bound_one = np.zeros((len(eps_arr), r))
    violations = 0
    for i, eps in enumerate(eps_arr):
        scfg = solvers.SolverConfig(solver="gmres", epsilon=float(eps))
        basis = build_bases_inexact(sysc, data, scfg)
        rep_two = fw.local_bounds(sysc, basis, data, one_sided=False)
        rep_one = fw.local_bounds(sysc, basis, data, one_sided=True)
        red_two = project(sysc, basis)
        red_one = project(sysc, basis, one_sided=True)
        for j in range(r):
            p2 = rep_two.points[j]
            p1 = rep_one.points[j]
            defect_two[i, j] = p2.defect_cross_abs
            bound_two[i, j] = p2.bound_cross_abs
            defect_one[i, j] = p1.defect_right_rel * h_vals[j]
            bound_one[i, j] = p1.bound_right_rel * h_vals[j]
            if defect_two[i, j] > max(floor, eval_floor(red_two, j)):
                violations += int(bound_two[i, j] < defect_two[i, j])
            if defect_one[i, j] > max(floor, eval_floor(red_one, j)):
                violations += int(bound_one[i, j] < defect_one[i, j])
            rows.append(
                (eps, j, defect_one[i, j], bound_one[i, j], defect_two[i, j], bound_two[i, j])
            )
    slopes = {
        "one_sided_defect": [_fit_slope(eps_arr, defect_one[:, j], floor) for j in range(r)],
        "one_sided_bound": [_fit_slope(eps_arr, bound_one[:, j], floor) for j in range(r)],
        "two_sided_defect": [_fit_slope(eps_arr, defect_two[:, j], floor) for j in range(r)],
        "two_sided_bound": [_fit_slope(eps_arr, bound_two[:, j], floor) for j in range(r)],
        "pooled": {
            "one_sided_defect": _pooled_slope(eps_arr, defect_one, floor),
            "one_sided_bound": _pooled_slope(eps_arr, bound_one, floor),
            "two_sided_defect": _pooled_slope(eps_arr, defect_two, floor),
            "two_sided_bound": _pooled_slope(eps_arr, bound_two, floor),
        },
    }
    report = {
        "schema": "mor/eps-sweep/1",
        "experiment": "eps_sweep",
        "sigma": list(sigma),
        "eps": list(eps_arr),
        "slopes": slopes,
        "violations": violations,
        "noise_floor": floor,
    }
    _maybe_write(
        cfg,
        report,
        {
            "curves": (
                ["eps", "sigma_index", "defect_one", "bound_one", "defect_two", "bound_two"],
                rows,
            )
        },
    )
    return report


# ---------------------------------------------------------------------------
# experiment: angle_table (optimal vs ad hoc shifts: angles and Hinf error)


def run_angle_table(cfg: ExperimentConfig) -> dict:
    ds = build_system(cfg.system)
    sysc = as_coprime(ds)
    r = cfg.r
    res = hk.irka(ds, r, seed=cfg.seed, conv_tol=1e-8, max_iter=cfg.max_iter)
    shift_sets = {
        "h2_optimal": res.basis.data,
        "ad_hoc": InterpolationData.coincident(
            np.logspace(0.5, 1.0, r).astype(complex),
            np.ones((ds.m, r)),
            np.ones((ds.p, r)),
        ),
    }
    grid = FrequencyGrid.default(num=200)
    eps_arr = np.asarray(cfg.eps_list, dtype=float)
    rows = []
    violations = 0
    errors = {}
    for name, data in shift_sets.items():
        exact = build_bases_exact(sysc, data)
        red_exact = project(sysc, exact)
        hr_norm, _ = hinf_norm(red_exact.coprime, grid)
        errs = []
        for eps in eps_arr:
            scfg = solvers.SolverConfig(solver="gmres", epsilon=float(eps))
            basis = build_bases_inexact(sysc, data, scfg)
            bounds = fw.subspace_perturbation_bounds(sysc, exact, basis, float(eps))
            red_inexact = project(sysc, basis)
            err, _ = hinf_norm(
                difference_coprime(red_exact.coprime, red_inexact.coprime), grid
            )
            rel = err / max(hr_norm, 1e-300)
            errs.append(rel)
            violations += int(bounds.bound_v < bounds.actual_v)
            violations += int(bounds.bound_w < bounds.actual_w)
            rows.append(
                (name, eps, bounds.actual_v, bounds.bound_v, bounds.actual_w, bounds.bound_w, rel)
            )
        errors[name] = errs
    slopes = {name: _fit_slope(eps_arr, np.asarray(vals)) for name, vals in errors.items()}
    report = {
        "schema": "mor/angle-table/1",
        "experiment": "angle_table",
        "eps": list(eps_arr),
        "relative_hinf_error": errors,
        "slopes": slopes,
        "optimal_shifts": list(res.final_shifts),
        "irka_converged": res.converged,
        "violations": violations,
    }
    _maybe_write(
        cfg,
        report,
        {
            "table": (
                ["shift_set", "eps", "sin_v", "bound_v", "sin_w", "bound_w", "rel_hinf_error"],
                rows,
            )
        },
    )
    return report


# ---------------------------------------------------------------------------
# experiment: shift_quality (conditioning quantities across random shifts)


def _shift_quality_triple(sysc, data: InterpolationData):
    basis = build_bases_exact(sysc, data)
    vn = np.linalg.norm(basis.V, axis=0)
    wn = np.linalg.norm(basis.W, axis=0)
    inv_smin_v = 1.0 / min_singular_scaled(basis.V, 1.0 / vn)
    inv_smin_w = 1.0 / min_singular_scaled(basis.W, 1.0 / wn)
    phi = oblique_projector_norm(basis.V, np.conj(basis.W))
    return inv_smin_v, inv_smin_w, phi


def run_shift_quality(cfg: ExperimentConfig) -> dict:
    ds = build_system(cfg.system)
    sysc = as_coprime(ds)
    lam = ds.finite_poles
    re_lo = max(float(np.min(np.abs(lam.real))), 1e-8)
    re_hi = float(np.max(np.abs(lam.real)))
    im_hi = float(np.max(np.abs(lam.imag)))

    results = {}
    rows = []
    for r in cfg.r_list:
        res = hk.irka(ds, int(r), seed=cfg.seed, max_iter=cfg.max_iter)
        opt = _shift_quality_triple(sysc, res.basis.data)

        def one_trial(t: int):
            rng = np.random.default_rng([cfg.seed, int(r), t])
            n_pair, n_real = divmod(int(r), 2)
            picks = rng.uniform(re_lo, re_hi, n_pair) + 1j * rng.uniform(0.0, im_hi, n_pair)
            sig = np.concatenate([picks, np.conj(picks), rng.uniform(re_lo, re_hi, n_real)])
            data = InterpolationData.coincident(
                sig, np.ones((ds.m, int(r))), np.ones((ds.p, int(r)))
            )
            try:
                return _shift_quality_triple(sysc, data)
            except (RankDeficientBasis, SingularPairing, MorError):
                return (np.inf, np.inf, np.inf)

        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                trials = list(pool.map(one_trial, range(cfg.trials)))
        else:
            trials = [one_trial(t) for t in range(cfg.trials)]
        trials = np.asarray(trials)
        wins = (trials >= np.asarray(opt)[None, :]).mean(axis=0)
        results[int(r)] = {
            "optimal": list(map(float, opt)),
            "optimal_win_fraction": {
                "inv_smin_v": float(wins[0]),
                "inv_smin_w": float(wins[1]),
                "projector_norm": float(wins[2]),
            },
            "irka_converged": res.converged,
        }
        for t, (a, b, ph) in enumerate(trials):
            rows.append((int(r), t, a, b, ph))

    report = {
        "schema": "mor/shift-quality/1",
        "experiment": "shift_quality",
        "trials": cfg.trials,
        "per_r": results,
        "violations": 0,
    }
    _maybe_write(
        cfg,
        report,
        {"trials": (["r", "trial", "inv_smin_v", "inv_smin_w", "projector_norm"], rows)},
    )
    return report


# ---------------------------------------------------------------------------
# experiment: irka_compare (exact vs inexact IRKA across eps)


def run_irka_compare(cfg: ExperimentConfig) -> dict:
    ds = build_system(cfg.system)
    r = cfg.r
    init = hk.init_shifts(ds, r, strategy="rectangle", seed=cfg.seed)
    tracker = hk.H2ErrorTracker(ds)
    grid = FrequencyGrid.default(num=200)

    exact = hk.irka(ds, r, init=init, conv_tol=cfg.conv_tol, max_iter=cfg.max_iter)
    exact_red = exact.reduced.reduced_descriptor
    exact_err_h2 = tracker.error(exact.reduced)
    exact_err_hinf = _hinf_error_vs_full(ds, exact.reduced, grid)

    runs = {}
    rows = []
    pert_h2 = []
    for eps in cfg.eps_list:
        res, F = hk.inexact_irka(
            ds, r, float(eps), init=init, conv_tol=cfg.conv_tol, max_iter=cfg.max_iter
        )
        red = res.reduced.reduced_descriptor
        err_h2 = tracker.error(res.reduced)
        err_hinf = _hinf_error_vs_full(ds, res.reduced, grid)
        dev_h2 = h2_norm_descriptor(difference_descriptor(exact_red, red)) if red.stable else float("nan")
        dev_hinf, _ = hinf_norm(
            difference_coprime(exact.reduced.coprime, res.reduced.coprime), grid
        )
        shift_gap = hk.shift_change_metric(res.final_shifts, exact.final_shifts)
        backward_ok = None
        if F is not None:
            rep = verify_backward_interpolation(as_coprime(ds), res.basis, res.basis.data)
            backward_ok = bool(rep.max_relative_defect <= 1e-8)
        runs[float(eps)] = {
            "converged": res.converged,
            "iterations": res.iterations,
            "inner_iterations_total": res.total_inner_iterations,
            "h2_error": err_h2,
            "hinf_error": err_hinf,
            "h2_vs_exact_model": dev_h2,
            "hinf_vs_exact_model": dev_hinf,
            "final_shift_gap": shift_gap,
            "backward_exactness": backward_ok,
            "final_shifts": list(res.final_shifts),
        }
        pert_h2.append(dev_h2)
        rows.append(
            (eps, err_h2, err_hinf, dev_h2, dev_hinf, shift_gap, res.total_inner_iterations)
        )

    slope = _fit_slope(np.asarray(cfg.eps_list), np.asarray(pert_h2))
    report = {
        "schema": "mor/irka-compare/1",
        "experiment": "irka_compare",
        "r": r,
        "exact": {
            "converged": exact.converged,
            "iterations": exact.iterations,
            "h2_error": exact_err_h2,
            "hinf_error": exact_err_hinf,
            "final_shifts": list(exact.final_shifts),
        },
        "inexact": runs,
        "perturbation_slope_h2": slope,
        "violations": 0,
    }
    _maybe_write(
        cfg,
        report,
        {
            "errors": (
                [
                    "eps",
                    "h2_error",
                    "hinf_error",
                    "h2_vs_exact_model",
                    "hinf_vs_exact_model",
                    "final_shift_gap",
                    "inner_iterations",
                ],
                rows,
            )
        },
    )
    return report


def _hinf_error_vs_full(ds, red, grid) -> float:
    err, _ = hinf_norm(difference_coprime(as_coprime(ds), red.coprime), grid)
    return float(err)


# ---------------------------------------------------------------------------
# experiment: warmstart_study (BiCG effort, warm vs cold starts)


def run_warmstart_study(cfg: ExperimentConfig) -> dict:
    ds = build_system(cfg.system)
    r = cfg.r
    eps = float(cfg.eps_list[0])
    init = hk.init_shifts(ds, r, strategy="rectangle", seed=cfg.seed)

    traces = {}
    totals = {}
    rows = []
    for label, warm in (("warm", True), ("cold", False)):
        res, _ = hk.inexact_irka(
            ds,
            r,
            eps,
            init=init,
            conv_tol=cfg.conv_tol,
            max_iter=cfg.max_iter,
            warm_start=warm,
        )
        per_iter = []
        for st in res.history:
            idx = int(np.argmin(np.abs(st.shifts.real)))
            per_iter.append(int(st.inner_per_shift[idx]))
        traces[label] = per_iter
        totals[label] = res.total_inner_iterations
        for k, count in enumerate(per_iter):
            rows.append((label, k, count))

    report = {
        "schema": "mor/warmstart/1",
        "experiment": "warmstart_study",
        "eps": eps,
        "nearest_axis_counts": traces,
        "totals": totals,
        "violations": 0,
    }
    _maybe_write(cfg, report, {"counts": (["mode", "iteration", "bicg_steps"], rows)})
    return report


RUNNERS = {
    "eps_sweep": run_eps_sweep,
    "angle_table": run_angle_table,
    "shift_quality": run_shift_quality,
    "irka_compare": run_irka_compare,
    "warmstart_study": run_warmstart_study,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    return RUNNERS[cfg.experiment](cfg)


def _parse_system_flag(text: str) -> dict:
    if text.startswith("mtx:"):
        return {"mtx": text[4:]}
    if text.startswith("gen:"):
        return dict(_DEFAULT_SYSTEM.get(text[4:], {"generator": text[4:]}))
    raise ConfigError(f"--system must look like mtx:<dir> or gen:<name>, got {text!r}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mor",
        description="Model-order-reduction experiment harness (desk-scale studies).",
    )
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="JSON experiment configuration file")
    parser.add_argument("--out", help="output directory for JSON/CSV reports")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--threads", type=int, help="worker threads (MOR_THREADS overrides)")
    parser.add_argument("--epsilon-list", nargs="+", type=float, help="solver tolerances")
    parser.add_argument("--system", help="system override: mtx:<dir> or gen:<name>")
    parser.add_argument("-r", "--order", type=int, help="reduced order override")
    args = parser.parse_args(argv)

    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config, experiment=args.experiment)
        else:
            cfg = ExperimentConfig(experiment=args.experiment)
        updates = {}
        if args.out is not None:
            updates["out_dir"] = args.out
        if args.seed is not None:
            updates["seed"] = args.seed
            system = dict(cfg.system)
            if "mtx" not in system:
                system["seed"] = args.seed
            updates["system"] = system
        if args.epsilon_list:
            updates["eps_list"] = tuple(args.epsilon_list)
        if args.system:
            updates["system"] = _parse_system_flag(args.system)
        if args.order:
            updates["r"] = args.order
        env_threads = os.environ.get("MOR_THREADS")
        if env_threads is not None:
            updates["threads"] = int(env_threads)
        elif args.threads is not None:
            updates["threads"] = args.threads
        if updates:
            cfg = replace(cfg, **updates)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"mor: configuration error: {exc}", file=sys.stderr)
        return 1

    try:
        report = run_experiment(cfg)
    except ConfigError as exc:
        print(f"mor: configuration error: {exc}", file=sys.stderr)
        return 1

    violations = int(report.get("violations", 0))
    print(json.dumps(_jsonable({k: v for k, v in report.items() if k != "inexact"}), sort_keys=True)[:2000])
    if violations:
        print(f"mor: {violations} bound/measurement violations", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
