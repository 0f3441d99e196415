"""Command-line entry point: ``admixclt {estimate,uncertainty,check,simulate}``.

Exit codes: 0 success, 2 input error, 3 non-convergence (results still
written), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .asymptotics import (ConeSpec, GaussianLaw, ProjectedLaw, boundary_law, interior_law,
                          summarize_law)
from .estimation import EstimationProblem, fit_em_multistart, fit_supervised_newton
from .fisher import (SingularFisherError, check_assumption_star, check_assumption_starstar,
                     check_condition_au, expected_info_q, is_pd, min_eigenvalue)
from .io import (InputError, load_config, read_genotypes, read_p, read_q, spec_from_config,
                 write_csv, write_json, write_p, write_q)
from .model import ModelConfig, log_likelihood, reduce_freqs
from .simulation import EXPERIMENTS
from .uniqueness import check_uniqueness_general, check_uniqueness_k2, k2_extremes

log = logging.getLogger("admixclt")

EXIT_OK, EXIT_INPUT, EXIT_NONCONV, EXIT_NUMERIC = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


# --- estimate -----------------------------------------------------------------

def _estimate(args) -> int:
    g = read_genotypes(args.geno)
    N, M = g.counts.shape
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p_known = read_p(args.p_file) if args.p_file else None
    q_known = read_q(args.q_known) if args.q_known else None

    if args.mode == "supervised":
        if p_known is None:
            raise InputError("--mode supervised needs --p-file")
        if q_known is not None:
            raise InputError("--q-known is only used with --mode semi")
        K = p_known.shape[0]
        if args.K is not None and args.K != K:
            raise InputError(f"--K {args.K} disagrees with the P file (K = {K})")
        if p_known.shape[1] != M:
            raise InputError(f"P file has {p_known.shape[1]} markers, genotypes have {M}")
        config = ModelConfig(K)
        fits = [fit_supervised_newton(g, p_known, i, config, max_iter=args.max_iter, tol=args.tol)
                for i in range(N)]
        q_hat = np.array([f.q for f in fits])
        p_hat = p_known
        converged = all(f.converged for f in fits)
        trace = [{"stage": "newton", "iteration": max(f.iterations for f in fits),
                  "loglik": log_likelihood(g, q_hat, p_hat)}]
        extra = {"per_individual": [
            {"individual": i + 1, "iterations": f.iterations, "converged": f.converged,
             "kkt_residual": f.kkt_residual, "boundary": f.boundary_flags}
            for i, f in enumerate(fits)]}
        iterations = trace[0]["iteration"]
        boundary = np.array([f.boundary_flags for f in fits])
    else:
        if args.mode == "unsupervised":
            if args.K is None:
                raise InputError("--mode unsupervised needs --K")
            if p_known is not None or q_known is not None:
                raise InputError("--p-file/--q-known are not used with --mode unsupervised")
            problem = EstimationProblem(g, args.K)
        else:
            if p_known is None and q_known is None:
                raise InputError("--mode semi needs --q-known and/or --p-file")
            K = (p_known if p_known is not None else q_known.T).shape[0]
            if args.K is not None and args.K != K:
                raise InputError(f"--K {args.K} disagrees with the known matrices (K = {K})")
            # known rows/columns describe the trailing individuals/markers
            kq = np.zeros((N, K)) + 1.0 / K
            q_fixed = np.zeros(N, dtype=bool)
            if q_known is not None:
                if q_known.shape[1] != K or q_known.shape[0] > N:
                    raise InputError("--q-known shape does not fit the genotypes and K")
                r = q_known.shape[0]
                kq[N - r:], q_fixed[N - r:] = q_known, True
            kp = np.full((K, M), 0.5)
            p_fixed = np.zeros(M, dtype=bool)
            if p_known is not None:
                if p_known.shape[1] > M:
                    raise InputError("--p-file has more markers than the genotypes")
                s = p_known.shape[1]
                kp[:, M - s:], p_fixed[M - s:] = p_known, True
            try:
                problem = EstimationProblem(g, K, known_q=kq, q_fixed=q_fixed,
                                            known_p=kp, p_fixed=p_fixed)
            except ValueError as exc:
                raise InputError(str(exc)) from None
        try:
            res = fit_em_multistart(problem, args.starts, args.seed,
                                    max_iter=args.max_iter, tol_ll=args.tol)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        q_hat, p_hat = res.q_hat, res.p_hat
        converged, iterations = res.converged, res.iterations
        trace = [{"stage": "em", "iteration": t, "loglik": v} for t, v in enumerate(res.loglik_trace)]
        boundary = res.boundary_flags_q
        extra = {}

    write_q(out / "result.Q", q_hat)
    write_p(out / "result.P", p_hat)
    write_csv(out / "loglik.csv", trace, ["stage", "iteration", "loglik"])
    write_json(out / "fit.json", {
        "mode": args.mode, "K": int(q_hat.shape[1]), "N": N, "M": M,
        "seed": args.seed, "starts": args.starts,
        "loglik": log_likelihood(g, q_hat, p_hat),
        "converged": bool(converged), "iterations": int(iterations),
        "boundary_flags_q": np.asarray(boundary, dtype=bool),
        **extra,
    })
    if not converged:
        log.error("fit did not converge within %d iterations; results written and flagged",
                  args.max_iter)
        return EXIT_NONCONV
    return EXIT_OK


# --- uncertainty --------------------------------------------------------------

def analyze_individual(q_row, p, n_markers=None, n_samples=100_000, seed=0,
                       eps_boundary: float = 1e-4, bins: int = 50):
    """Limit law of sqrt(M) (q_hat - q0) for one individual at a plug-in estimate.

    Returns ``(law, cone, gamma, summaries)`` where ``summaries`` maps each
    population (0-based) to its ``LawSummary``. The eliminated coordinate is
    the largest one; its law is minus the sum of the others.
    """
    q_row = np.asarray(q_row, dtype=float)
    K, M_p = p.shape
    M = n_markers or M_p
    cone = ConeSpec.from_q0(q_row, eps_boundary)
    gamma = expected_info_q(q_row, p, ref=cone.ref)
    if not is_pd(gamma):
        err = SingularFisherError([("q", 0, min_eigenvalue(gamma))])
        raise NumericalFailure(str(err), err.report())
    summaries = {}
    if cone.constrained:
        law = boundary_law(gamma, cone, n_samples, seed)
        full = np.zeros((law.samples.shape[0], K))
        full[:, list(cone.labels)] = law.samples
        full[:, cone.ref] = -law.samples.sum(axis=1)
        pin = np.zeros_like(full, dtype=bool)
        pin[:, list(cone.labels)] = law.pinned
        # the joint law over all K populations
        view = ProjectedLaw(gamma, cone, full, pin, law.point_masses)
        for k in range(K):
            summaries[k] = summarize_law(view, k, bins=bins, estimate=q_row[k], n_markers=M)
    else:
        law = interior_law(gamma, n_markers=M)
        idx = list(cone.labels)
        a = np.zeros((K, K - 1))
        a[idx, range(K - 1)] = 1.0
        a[cone.ref] = -1.0
        cov = a @ law.covariance @ a.T
        full = GaussianLaw(cov)
        for k in range(K):
            summaries[k] = summarize_law(full, k, bins=bins, estimate=q_row[k], n_markers=M)
    return law, cone, gamma, summaries


def _uncertainty(args) -> int:
    q = read_q(args.q_file)
    p = read_p(args.p_file)
    if q.shape[1] != p.shape[0]:
        raise InputError(f"Q has K = {q.shape[1]} but P has K = {p.shape[0]}")
    if not 1 <= args.individual <= q.shape[0]:
        raise InputError(f"--individual must be in 1..{q.shape[0]}")
    i = args.individual - 1
    q_row = q[i]
    source = "q-file"
    if args.geno:
        g = read_genotypes(args.geno)
        if g.counts.shape != (q.shape[0], p.shape[1]):
            raise InputError("genotype shape does not match the Q and P files")
        fit = fit_supervised_newton(g, p, i, ModelConfig(p.shape[0]))
        q_row, source = fit.q, "refit-from-genotypes"
    M = args.M or p.shape[1]
    law, cone, gamma, summaries = analyze_individual(q_row, p, M, args.samples, args.seed,
                                                     args.eps_boundary, args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, s in summaries.items():
        rows += [{"coord": k + 1, "bin_left": a, "bin_right": b, "mass": m}
                 for _, a, b, m in s.table]
    write_csv(out / "density.csv", rows, ["coord", "bin_left", "bin_right", "mass"])
    cov = np.linalg.inv(gamma)
    write_json(out / "summary.json", {
        "individual": args.individual,
        "estimate": q_row,
        "estimate_source": source,
        "M": M,
        "samples": args.samples if cone.constrained else 0,
        "seed": args.seed,
        "law": "projected-gaussian" if cone.constrained else "gaussian",
        "relabeling": {"eliminated_population": cone.ref + 1,
                       "reduced_populations": [k + 1 for k in cone.labels],
                       "lower_bound_constrained": [cone.labels[j] + 1 for j in cone.k_min],
                       "upper_bound_constrained": [cone.labels[j] + 1 for j in cone.k_max]},
        "gamma": gamma,
        "covariance_scaled": cov,
        "covariance": cov / M,
        "atoms": {str(k + 1): s.atom for k, s in summaries.items()},
        "faces": ({",".join(str(cone.labels[j] + 1) for j in sorted(f)) or "none": m
                   for f, m in law.point_masses.items()} if cone.constrained else {}),
        "quantiles": {str(k + 1): {str(a): v for a, v in s.quantiles.items()}
                      for k, s in summaries.items()},
        "intervals_95": {str(k + 1): s.interval for k, s in summaries.items()},
    })
    return EXIT_OK


# --- check --------------------------------------------------------------------

def _check(args) -> int:
    q = read_q(args.q_file)
    p = read_p(args.p_file)
    if q.shape[1] != p.shape[0]:
        raise InputError(f"Q has K = {q.shape[1]} but P has K = {p.shape[0]}")
    K = q.shape[1]
    report = {}
    if K == 2:
        rep = check_uniqueness_k2(q, p, args.tol)
        report["uniqueness"] = rep.as_dict()
        report["k2_extremes"] = k2_extremes(q, p, args.tol).as_dict()
    elif K > 2:
        report["uniqueness"] = check_uniqueness_general(q, p, args.tol).as_dict()
    report["assumption_star"] = check_assumption_star(p, args.threshold).as_dict()
    report["assumption_starstar"] = check_assumption_starstar(q, args.threshold).as_dict()
    if K >= 2:
        q0 = None
        if args.individual is not None:
            if not 1 <= args.individual <= q.shape[0]:
                raise InputError(f"--individual must be in 1..{q.shape[0]}")
            q0 = q[args.individual - 1]
        elif K > 2:
            q0 = np.full(K, 1.0 / K)
        au = check_condition_au(p, q0=q0, delta=args.delta)
        report["condition_au"] = au.as_dict()
        # directions in the reduced coordinates that leave every c unchanged
        pr = reduce_freqs(p)
        w, v = np.linalg.eigh(pr @ pr.T / p.shape[1])
        null = v[:, w <= 1e-10 * max(1.0, w[-1])]
        report["degenerate_directions"] = [
            np.append(d, -d.sum()).tolist() for d in null.T
        ]
    print(json.dumps(_jsonable_report(report), indent=2))
    return EXIT_OK


def _jsonable_report(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable_report(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable_report(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --- simulate -----------------------------------------------------------------

def _simulate(args) -> int:
    cfg = load_config(args.config)
    exp, spec, options = spec_from_config(cfg, Path(args.config).parent)
    threads = args.threads or os.cpu_count() or 1
    runner = EXPERIMENTS[exp]
    if exp == "clt_boundary":
        try:
            result = runner(spec, options["law_samples"], options["law_seed"], n_jobs=threads)
        except ValueError as exc:
            raise InputError(str(exc), "run") from None
    else:
        try:
            result = runner(spec, n_jobs=threads)
        except ValueError as exc:
            raise InputError(str(exc), "run") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "experiment.csv", result.records, result.columns())
    write_json(out / "summary.json", {"config": cfg, **result.stats})
    return EXIT_OK


# --- wiring -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="admixclt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    e = sub.add_parser("estimate", help="fit Q (and P) by maximum likelihood")
    e.add_argument("--geno", required=True)
    e.add_argument("--K", type=int)
    e.add_argument("--mode", choices=("supervised", "semi", "unsupervised"), default="supervised")
    e.add_argument("--p-file", help="M x K .P file (known frequencies)")
    e.add_argument("--q-known", help="N' x K .Q file fixing the last N' individuals (semi mode)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--starts", type=int, default=1)
    e.add_argument("--max-iter", type=int, default=10000)
    e.add_argument("--tol", type=float, default=1e-8)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_estimate)

    u = sub.add_parser("uncertainty", help="asymptotic law of one individual's ancestry")
    u.add_argument("--q-file", required=True)
    u.add_argument("--p-file", required=True)
    u.add_argument("--geno")
    u.add_argument("--individual", type=int, default=1, help="1-based row of the Q file")
    u.add_argument("--M", type=int)
    u.add_argument("--samples", type=int, default=100_000)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--bins", type=int, default=50)
    u.add_argument("--eps-boundary", type=float, default=1e-4)
    u.add_argument("--out", required=True)
    u.set_defaults(func=_uncertainty)

    c = sub.add_parser("check", help="identifiability diagnostics")
    c.add_argument("--q-file", required=True)
    c.add_argument("--p-file", required=True)
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--threshold", type=int, default=1)
    c.add_argument("--delta", type=float, default=0.05)
    c.add_argument("--individual", type=int)
    c.set_defaults(func=_check)

    s = sub.add_parser("simulate", help="run a declared simulation experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=0, help="worker processes (default: all cores)")
    s.set_defaults(func=_simulate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    for name in ("samples", "starts", "max_iter", "bins", "threads"):
        v = getattr(args, name, None)
        if v is not None and v < (0 if name == "threads" else 1):
            log.error("--%s must be positive", name.replace("_", "-"))
            return EXIT_INPUT
    try:
        return args.func(args)
    except InputError as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        print(json.dumps(exc.report, indent=2))
        return EXIT_NUMERIC
    except SingularFisherError as exc:
        log.error("numerical failure: %s", exc)
        print(json.dumps(exc.report(), indent=2))
        return EXIT_NUMERIC
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
