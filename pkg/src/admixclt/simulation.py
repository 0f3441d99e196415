"""Synthetic data and Monte Carlo experiments for the limit theorems.

Every (cell, replicate) pair draws from its own ``SeedSequence`` child, so
records are identical whether replicates run serially or in a process pool.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import block_diag

from .asymptotics import ConeSpec, boundary_law
from .estimation import (
    EstimationProblem,
    align_labels,
    fit_em_multistart,
    fit_supervised_newton,
    metric_d,
)
from .fisher import expected_info_q, fisher_blocks, invert_blocks
from .model import GenotypeMatrix, ModelConfig, check_ancestry, check_freqs, success_probs

MODES = ("supervised", "semi", "unsupervised")


def generate(q0, p0, seed) -> GenotypeMatrix:
    """Independent Binomial(2, <q0_i, p0_m>) genotype counts."""
    c = success_probs(check_ancestry(q0, tol=1e-6), check_freqs(p0))
    assert np.all((c >= 0) & (c <= 1))
    rng = np.random.default_rng(seed)
    return GenotypeMatrix(rng.binomial(2, c).astype(np.int64))


@dataclass
class SimSpec:
    q0: np.ndarray
    p0: np.ndarray
    m_grid: list
    n_grid: list = field(default_factory=lambda: [1])
    replicates: int = 100
    seed: int = 0
    mode: str = "supervised"
    n_free: int | None = None
    m_free: int | None = None
    starts: int = 1
    max_iter: int = 10000
    tol_ll: float = 1e-8
    eps_boundary: float = 1e-4

    def __post_init__(self):
        self.q0 = check_ancestry(self.q0, tol=1e-6)
        self.p0 = check_freqs(self.p0)
        if self.q0.shape[1] != self.p0.shape[0]:
            raise ValueError("q0 and p0 disagree on K")
        self.m_grid, self.n_grid = [int(m) for m in self.m_grid], [int(n) for n in self.n_grid]
        for name, grid in (("m_grid", self.m_grid), ("n_grid", self.n_grid)):
            if not grid or min(grid) < 1:
                raise ValueError(f"{name} must be non-empty with positive entries")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError(f"{name} must be strictly ascending")
        if max(self.m_grid) > self.p0.shape[1]:
            raise ValueError("m_grid exceeds the number of markers in p0")
        if max(self.n_grid) > self.q0.shape[0]:
            raise ValueError("n_grid exceeds the number of individuals in q0")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def k(self) -> int:
        return self.q0.shape[1]


@dataclass
class ExperimentResult:
    records: list
    stats: dict

    def columns(self):
        cols = []
        for r in self.records:
            for key in r:
                if key not in cols:
                    cols.append(key)
        return cols


def _seeds(spec: SimSpec):
    root = np.random.SeedSequence(spec.seed)
    cells = [(M, N) for M in spec.m_grid for N in spec.n_grid]
    children = root.spawn(len(cells))
    for (M, N), child in zip(cells, children):
        for rep, s in enumerate(child.spawn(spec.replicates)):
            yield M, N, rep, s


def _fit(spec: SimSpec, x, q0, p0, seed):
    """Fit one dataset according to the experiment mode; returns (q_hat, p_hat)."""
    N, M = x.counts.shape
    K = spec.k
    config = ModelConfig(K, eps_boundary=spec.eps_boundary)
    if spec.mode == "supervised":
        q_hat = np.empty((N, K))
        for i in range(N):
            q_hat[i] = fit_supervised_newton(x, p0, i, config).q
        return q_hat, p0
    if spec.mode == "semi":
        n_free = N if spec.n_free is None else min(spec.n_free, N)
        m_free = M if spec.m_free is None else min(spec.m_free, M)
        q_fixed = np.arange(N) >= n_free
        p_fixed = np.arange(M) >= m_free
        prob = EstimationProblem(x, K, known_q=q0, q_fixed=q_fixed,
                                 known_p=p0, p_fixed=p_fixed, config=config)
        res = fit_em_multistart(prob, spec.starts, int(seed.generate_state(1)[0]),
                                max_iter=spec.max_iter, tol_ll=spec.tol_ll)
        return res.q_hat, res.p_hat
    prob = EstimationProblem(x, K, config=config)
    res = fit_em_multistart(prob, spec.starts, int(seed.generate_state(1)[0]),
                            max_iter=spec.max_iter, tol_ll=spec.tol_ll)
    return res.q_hat, res.p_hat


def _one_replicate(spec: SimSpec, M, N, rep, seed):
    q0, p0 = spec.q0[:N], spec.p0[:, :M]
    data_seed, fit_seed = seed.spawn(2)
    x = generate(q0, p0, data_seed)
    t0 = time.perf_counter()
    try:
        q_hat, p_hat = _fit(spec, x, q0, p0, fit_seed)
        error = ""
    except Exception as exc:  # recorded per cell, not fatal
        return {"M": M, "N": N, "replicate": rep, "error": repr(exc)}
    elapsed = time.perf_counter() - t0
    if spec.mode == "unsupervised":
        perm, q_hat, p_hat = align_labels(q_hat, p_hat, q0, p0)
    rec = {
        "M": M, "N": N, "replicate": rep, "error": error,
        "metric_d": metric_d(q_hat, p_hat, q0, p0),
        "mae_q": float(np.abs(q_hat - q0).mean()),
        "mae_p": float(np.abs(p_hat - p0).mean()),
        "seconds": elapsed,
    }
    for i in range(min(N, 4)):
        for k in range(spec.k):
            rec[f"q_{i}_{k}"] = float(q_hat[i, k])
    rec["_q_hat"] = q_hat
    rec["_p_hat"] = p_hat
    return rec


def _run_all(spec: SimSpec, n_jobs: int = 1):
    jobs = list(_seeds(spec))
    if n_jobs <= 1:
        return [_one_replicate(spec, *job) for job in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        futures = [pool.submit(_one_replicate, spec, *job) for job in jobs]
        return [f.result() for f in futures]


def _public(records):
    return [{k: v for k, v in r.items() if not k.startswith("_")} for r in records]


def loglog_slope(ms, errors) -> float:
    """Least-squares slope of log(error) against log(M)."""
    slope, _ = np.polyfit(np.log(np.asarray(ms, float)), np.log(np.asarray(errors, float)), 1)
    return float(slope)


def run_consistency(spec: SimSpec, n_jobs: int = 1) -> ExperimentResult:
    """Error of the (label-aligned) MLE over the (M, N) grid."""
    records = _run_all(spec, n_jobs)
    ok = [r for r in records if not r.get("error")]
    by_m = {}
    for r in ok:
        by_m.setdefault(r["M"], []).append(r["mae_q"])
    mean_err = {M: float(np.mean(v)) for M, v in sorted(by_m.items())}
    out = {
        "experiment": "consistency",
        "mean_abs_error_by_M": {str(M): v for M, v in mean_err.items()},
        "mean_metric_d_by_M": {
            str(M): float(np.mean([r["metric_d"] for r in ok if r["M"] == M])) for M in mean_err
        },
        "failed": len(records) - len(ok),
    }
    if len(mean_err) >= 2 and all(v > 0 for v in mean_err.values()):
        out["loglog_slope"] = loglog_slope(list(mean_err), list(mean_err.values()))
    if spec.mode == "unsupervised":
        out["note"] = ("errors are measured after the best label permutation only; "
                       "continuous non-identifiability of Q and P is not corrected")
    return ExperimentResult(_public(records), out)


def _scaled_errors(spec: SimSpec, rec, ref):
    """Joint scaled error vector: sqrt(M) (q - q0) in reduced coords, sqrt(N) (p - p0)."""
    M, N = rec["M"], rec["N"]
    q0 = spec.q0[:N]
    keep = [k for k in range(spec.k) if k != ref]
    parts = []
    n_q = N if spec.mode != "semi" or spec.n_free is None else min(spec.n_free, N)
    parts.append((math.sqrt(M) * (rec["_q_hat"][:n_q] - q0[:n_q])[:, keep]).ravel())
    if spec.mode == "semi":
        m_p = M if spec.m_free is None else min(spec.m_free, M)
        parts.append((math.sqrt(N) * (rec["_p_hat"][:, :m_p] - spec.p0[:, :m_p])).T.ravel())
    return np.concatenate(parts)


def _theory_covariance(spec: SimSpec, M, N, ref):
    q0, p0 = spec.q0[:N], spec.p0[:, :M]
    if spec.mode == "semi":
        n_q = N if spec.n_free is None else min(spec.n_free, N)
        m_p = M if spec.m_free is None else min(spec.m_free, M)
        blocks = fisher_blocks(q0, p0, range(n_q), range(m_p), ref=ref)
    else:
        blocks = fisher_blocks(q0, p0, range(N), (), ref=ref)
    return block_diag(*invert_blocks(blocks))


def _frob_rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def run_clt_interior(spec: SimSpec, n_jobs: int = 1) -> ExperimentResult:
    """Compare the scaled estimation error with the Gaussian limit law."""
    if spec.mode == "unsupervised":
        raise ValueError("the interior CLT experiment needs supervised or semi mode")
    if np.any(spec.q0 <= 0) or np.any(spec.q0 >= 1):
        raise ValueError("run_clt_interior needs strictly interior ancestries")
    ref = spec.k - 1
    records = _run_all(spec, n_jobs)
    out = {"experiment": "clt_interior", "cells": {}}
    prev = None
    for M in spec.m_grid:
        for N in spec.n_grid:
            recs = [r for r in records if r["M"] == M and r["N"] == N and not r.get("error")]
            cov = _theory_covariance(spec, M, N, ref)
            z = np.array([_scaled_errors(spec, r, ref) for r in recs])
            emp = np.cov(z, rowvar=False).reshape(cov.shape)
            sd = np.sqrt(np.diag(cov))
            ks = [stats.kstest(z[:, j], "norm", args=(0.0, sd[j])) for j in range(z.shape[1])]
            cell = {
                "replicates": len(recs),
                "cov_rel_error": _frob_rel(emp, cov),
                "ks_statistic": [float(t.statistic) for t in ks],
                "ks_pvalue": [float(t.pvalue) for t in ks],
                "mean": z.mean(axis=0).tolist(),
                "theory_covariance": cov.tolist(),
                "empirical_covariance": emp.tolist(),
            }
            if prev is not None and prev[1] == N and prev[2].shape[1] == z.shape[1]:
                cell["ks_vs_previous_M"] = [
                    float(stats.ks_2samp(z[:, j], prev[2][:, j]).pvalue) for j in range(z.shape[1])
                ]
            prev = (M, N, z)
            out["cells"][f"M={M},N={N}"] = cell
    for r in records:
        if "_q_hat" in r:
            z = _scaled_errors(spec, r, ref)
            for j, v in enumerate(z[:8]):
                r[f"scaled_{j}"] = float(v)
    return ExperimentResult(_public(records), out)


def run_clt_boundary(spec: SimSpec, n_law_samples: int = 100_000, law_seed: int | None = None,
                     n_jobs: int = 1) -> ExperimentResult:
    """Compare the scaled error of a single individual with the projected limit law."""
    if spec.q0.shape[0] != 1 or spec.n_grid != [1]:
        raise ValueError("run_clt_boundary handles a single individual")
    if spec.mode != "supervised":
        raise ValueError("run_clt_boundary needs supervised mode")
    q0 = spec.q0[0]
    cone = ConeSpec.from_q0(q0, spec.eps_boundary)
    ref, labels = cone.ref, list(cone.labels)
    records = _run_all(spec, n_jobs)
    out = {"experiment": "clt_boundary", "ref": ref, "labels": labels,
           "k_min": list(cone.k_min), "k_max": list(cone.k_max), "cells": {}}
    for M in spec.m_grid:
        recs = [r for r in records if r["M"] == M and not r.get("error")]
        p0 = spec.p0[:, :M]
        gamma = expected_info_q(q0, p0, ref=ref)
        law = boundary_law(gamma, cone, n_law_samples, spec.seed if law_seed is None else law_seed)
        q_hat = np.array([r["_q_hat"][0] for r in recs])
        z = math.sqrt(M) * (q_hat - q0)[:, labels]
        pinned = np.zeros_like(z, dtype=bool)
        for j in cone.k_min:
            pinned[:, j] = q_hat[:, labels[j]] <= spec.eps_boundary
        for j in cone.k_max:
            pinned[:, j] = q_hat[:, labels[j]] >= 1 - spec.eps_boundary
        cell = {"replicates": len(recs), "coords": []}
        for j in range(cone.dim):
            info = {"population": labels[j],
                    "constrained": j in cone.constrained,
                    "empirical_atom": float(pinned[:, j].mean()),
                    "law_atom": law.atom_probability(j)}
            emp_cont = z[~pinned[:, j], j]
            law_cont = law.samples[~law.pinned[:, j], j]
            if emp_cont.size > 1 and law_cont.size > 1:
                t = stats.ks_2samp(emp_cont, law_cont)
                info["ks2_statistic"], info["ks2_pvalue"] = float(t.statistic), float(t.pvalue)
            cell["coords"].append(info)
        out["cells"][f"M={M}"] = cell
    for r in records:
        if "_q_hat" in r:
            for j, k in enumerate(labels):
                r[f"scaled_{j}"] = float(math.sqrt(r["M"]) * (r["_q_hat"][0, k] - q0[k]))
    return ExperimentResult(_public(records), out)


EXPERIMENTS = {
    "consistency": run_consistency,
    "clt_interior": run_clt_interior,
    "clt_boundary": run_clt_boundary,
}
