"""Maximum likelihood fitting of (Q, P).

``fit_em`` runs block EM (q-step, then p-step) in the supervised,
semi-supervised and unsupervised settings. The M-steps are solved exactly
on the clamped box ``[eps_clamp, 1 - eps_clamp]``, so clamping never breaks
the monotone likelihood trace.

``fit_supervised_newton`` refines one ancestry row for known P with an
active-set Newton method that can land exactly on the simplex boundary.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .model import (
    GenotypeMatrix,
    ModelConfig,
    as_genotypes,
    cell_loglik,
    check_ancestry,
    check_freqs,
    curvatures,
    residuals,
)

log = logging.getLogger(__name__)


@dataclass
class EstimationProblem:
    """Data plus the known parts of (Q, P).

    ``q_fixed[i]`` marks rows of ``known_q`` held fixed; ``p_fixed[m]`` marks
    columns of ``known_p`` held fixed. Unmarked entries of the known arrays
    are ignored.
    """

    x: GenotypeMatrix
    k: int
    known_q: np.ndarray | None = None
    q_fixed: np.ndarray | None = None
    known_p: np.ndarray | None = None
    p_fixed: np.ndarray | None = None
    config: ModelConfig | None = None

    def __post_init__(self):
        self.x = as_genotypes(self.x)
        N, M = self.x.counts.shape
        if self.k < 1:
            raise ValueError("K must be at least 1")
        if self.config is None:
            self.config = ModelConfig(self.k)
        elif self.config.k_populations != self.k:
            raise ValueError("config.k_populations does not match k")
        if self.known_q is None:
            if self.q_fixed is not None and np.any(self.q_fixed):
                raise ValueError("q_fixed given without known_q")
            self.q_fixed = np.zeros(N, dtype=bool)
        else:
            self.known_q = np.atleast_2d(np.asarray(self.known_q, dtype=float))
            if self.known_q.shape != (N, self.k):
                raise ValueError(f"known_q must be {N} x {self.k}, got {self.known_q.shape}")
            self.q_fixed = (np.ones(N, dtype=bool) if self.q_fixed is None
                            else np.asarray(self.q_fixed, dtype=bool))
            if self.q_fixed.shape != (N,):
                raise ValueError("q_fixed must have one flag per individual")
            check_ancestry(self.known_q[self.q_fixed], tol=1e-6)
        if self.known_p is None:
            if self.p_fixed is not None and np.any(self.p_fixed):
                raise ValueError("p_fixed given without known_p")
            self.p_fixed = np.zeros(M, dtype=bool)
        else:
            self.known_p = np.asarray(self.known_p, dtype=float)
            if self.known_p.shape != (self.k, M):
                raise ValueError(f"known_p must be {self.k} x {M}, got {self.known_p.shape}")
            self.p_fixed = (np.ones(M, dtype=bool) if self.p_fixed is None
                            else np.asarray(self.p_fixed, dtype=bool))
            if self.p_fixed.shape != (M,):
                raise ValueError("p_fixed must have one flag per marker")
            check_freqs(self.known_p[:, self.p_fixed])
        if self.q_fixed.all() and self.p_fixed.all():
            raise ValueError("nothing to estimate: every row of Q and column of P is fixed")

    @classmethod
    def supervised(cls, x, p, config=None):
        p = check_freqs(p)
        return cls(x, p.shape[0], known_p=p, config=config)

    @classmethod
    def unsupervised(cls, x, k, config=None):
        return cls(x, k, config=config)

    @property
    def free_rows(self) -> np.ndarray:
        return np.flatnonzero(~self.q_fixed)

    @property
    def free_cols(self) -> np.ndarray:
        return np.flatnonzero(~self.p_fixed)


@dataclass
class FitResult:
    q_hat: np.ndarray
    p_hat: np.ndarray
    loglik_trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    boundary_flags_q: np.ndarray | None = None

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]


def boundary_flags(q, eps_boundary):
    q = np.asarray(q)
    return (q <= eps_boundary) | (q >= 1.0 - eps_boundary)


def project_capped_simplex(a, eps):
    """Maximize ``sum_k a_k log q_k`` over ``{q : sum q = 1, q >= eps}`` row-wise.

    The solution is ``q_k = max(eps, a_k / lam)`` with ``lam`` fixing the sum
    (water filling). Rows of ``a`` must be non-negative with a positive sum.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    K = a.shape[1]
    if K * eps >= 1:
        raise ValueError("eps too large for K")
    pinned = np.zeros_like(a, dtype=bool)
    for _ in range(K):
        free_mass = np.where(pinned, 0.0, a).sum(axis=1, keepdims=True)
        budget = 1.0 - eps * pinned.sum(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(pinned, eps, a * budget / free_mass)
        newly = ~pinned & (q < eps)
        if not newly.any():
            break
        pinned |= newly
    return q


def _init_params(problem: EstimationProblem, rng):
    N, M = problem.x.counts.shape
    K = problem.k
    eps = problem.config.eps_clamp
    q = np.empty((N, K))
    if problem.known_q is not None:
        q[problem.q_fixed] = problem.known_q[problem.q_fixed]
    free = problem.free_rows
    if free.size:
        q[free] = project_capped_simplex(rng.dirichlet(np.ones(K), size=free.size), eps)
    p = np.empty((K, M))
    if problem.known_p is not None:
        p[:, problem.p_fixed] = problem.known_p[:, problem.p_fixed]
    cols = problem.free_cols
    if cols.size:
        p[:, cols] = rng.uniform(0.1, 0.9, size=(K, cols.size))
    return q, p


def _loglik(x, obs, q, p):
    return float(cell_loglik(x, np.clip(q @ p, 0.0, 1.0), obs).sum())


def _q_step(x, obs, q, p, rows, eps):
    c = np.clip(q[rows] @ p, 0.0, 1.0)
    xr, orows = x[rows], obs[rows]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(orows & (xr > 0), xr / c, 0.0)
        v = np.where(orows & (xr < 2), (2.0 - xr) / (1.0 - c), 0.0)
    a = q[rows] * (u @ p.T + v @ (1.0 - p).T)
    # individuals without observed genotypes keep their current row
    empty = a.sum(axis=1) <= 0
    a[empty] = q[rows][empty]
    q[rows] = project_capped_simplex(a, eps)


def _p_step(x, obs, q, p, cols, eps):
    c = np.clip(q @ p[:, cols], 0.0, 1.0)
    xc, oc = x[:, cols], obs[:, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(oc & (xc > 0), xc / c, 0.0)
        v = np.where(oc & (xc < 2), (2.0 - xc) / (1.0 - c), 0.0)
    A = p[:, cols] * (q.T @ u)
    B = (1.0 - p[:, cols]) * (q.T @ v)
    total = A + B
    with np.errstate(divide="ignore", invalid="ignore"):
        new = np.where(total > 0, A / total, p[:, cols])
    p[:, cols] = np.clip(new, eps, 1.0 - eps)


def fit_em(problem: EstimationProblem, max_iter: int = 10000, tol_ll: float = 1e-8,
           seed: int = 0, q_init=None, p_init=None) -> FitResult:
    """Block EM for the admixture MLE.

    Stops when the gain in the unnormalized log-likelihood drops below
    ``tol_ll`` or after ``max_iter`` iterations. ``q_init``/``p_init``
    override the seeded random start for the free blocks.
    """
    g = problem.x
    N, M = g.counts.shape
    if problem.known_q is None and problem.known_p is None and problem.k > min(N, M):
        raise ValueError(f"unsupervised fit needs K <= min(N, M), got K={problem.k}")
    eps = problem.config.eps_clamp
    x, obs = g.as_float()
    rng = np.random.default_rng(seed)
    q, p = _init_params(problem, rng)
    rows, cols = problem.free_rows, problem.free_cols
    if q_init is not None:
        q[rows] = project_capped_simplex(np.asarray(q_init, dtype=float)[rows], eps)
    if p_init is not None:
        p[:, cols] = np.clip(np.asarray(p_init, dtype=float)[:, cols], eps, 1 - eps)

    ll = _loglik(x, obs, q, p)
    if not math.isfinite(ll):
        raise ValueError("log-likelihood is -inf at the start: known frequencies "
                         "or ancestries are incompatible with the data")
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if rows.size:
            _q_step(x, obs, q, p, rows, eps)
        if cols.size:
            _p_step(x, obs, q, p, cols, eps)
        new = _loglik(x, obs, q, p)
        trace.append(new)
        if new - ll < tol_ll:
            converged = True
            break
        ll = new
    if not converged:
        log.warning("EM did not converge in %d iterations", max_iter)
    return FitResult(q, p, trace, it, converged,
                     boundary_flags(q, problem.config.eps_boundary))


def fit_em_multistart(problem: EstimationProblem, starts: int = 1, seed: int = 0,
                      **kwargs) -> FitResult:
    """Run ``fit_em`` from ``starts`` seeded starts and keep the highest final likelihood."""
    if starts < 1:
        raise ValueError("starts must be positive")
    seeds = np.random.SeedSequence(seed).generate_state(starts)
    best = None
    for s in seeds:
        res = fit_em(problem, seed=int(s), **kwargs)
        if best is None or res.loglik > best.loglik:
            best = res
    return best


@dataclass
class SupervisedFit:
    q: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    kkt_residual: float
    boundary_flags: np.ndarray


def _simplex_kkt(q, g, tol_zero=0.0):
    """KKT residual for maximizing over the simplex given gradient ``g``."""
    free = q > tol_zero
    mu = g[free].mean()
    res = np.abs(g[free] - mu).max(initial=0.0)
    if (~free).any():
        res = max(res, float(np.max(g[~free] - mu, initial=0.0)))
    return res, mu


def fit_supervised_newton(x, p, individual: int = 0, config: ModelConfig | None = None,
                          q_init=None, max_iter: int = 200, tol: float = 1e-8) -> SupervisedFit:
    """Active-set Newton refinement of one ancestry row with P known.

    Coordinates at zero with a non-positive KKT multiplier stay pinned; the
    Newton step on the remaining coordinates respects ``sum(q) = 1`` and is
    truncated where a coordinate reaches zero. A failed step (non-ascent or
    no increase after backtracking) falls back to one EM step. ``tol`` bounds
    the KKT residual of the gradient averaged over observed markers.
    """
    g = as_genotypes(x)
    p = check_freqs(p)
    K, M = p.shape
    if g.n_markers != M:
        raise ValueError("genotype and frequency marker counts differ")
    config = config or ModelConfig(K)
    xf, obs = g.as_float()
    xi, oi = xf[individual], obs[individual]

    def ll_of(qv):
        return float(cell_loglik(xi, np.clip(qv @ p, 0.0, 1.0), oi).sum())

    q = np.full(K, 1.0 / K) if q_init is None else np.asarray(q_init, dtype=float).copy()
    if np.any(q <= 0):
        raise ValueError("Newton refinement needs a strictly interior start")
    q /= q.sum()
    ll = ll_of(q)
    if not math.isfinite(ll):
        raise ValueError("log-likelihood is -inf at the start")

    # the gradient is a sum over markers; tol applies to its per-marker average
    scale = max(1, int(oi.sum()))
    converged = False
    res = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        c = np.clip(q @ p, 0.0, 1.0)
        grad = p @ residuals(xi, c, oi)
        res, mu = _simplex_kkt(q, grad)
        if res < tol * scale:
            converged = True
            break
        H = -(p * curvatures(xi, c, oi)) @ p.T

        active = q <= 0.0
        # release pinned coordinates whose multiplier says they should grow
        while True:
            free = np.flatnonzero(~active)
            kkt = np.zeros((free.size + 1, free.size + 1))
            kkt[:-1, :-1] = H[np.ix_(free, free)]
            kkt[:-1, -1] = 1.0
            kkt[-1, :-1] = 1.0
            rhs = np.concatenate([-grad[free], [0.0]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = None
                break
            mu_f = -sol[-1]
            wants = active & (grad - mu_f > 0)
            if not wants.any():
                break
            active[np.argmax(np.where(wants, grad - mu_f, -np.inf))] = False

        step_ok = False
        if sol is not None and np.all(np.isfinite(sol)):
            d = np.zeros(K)
            d[free] = sol[:-1]
            slope = float(grad @ d)
            if 0 <= slope <= 1e-15 * max(1.0, abs(ll)):
                # the Newton decrement is below the resolution of ll
                converged = True
                break
            if slope > 0:
                neg = d < 0
                t_max = np.min(np.where(neg, q / np.where(neg, -d, 1.0), np.inf))
                t = min(1.0, t_max)
                for _ in range(40):
                    cand = q + t * d
                    if t == t_max:
                        cand[np.argmin(np.where(neg, q / np.where(neg, -d, 1.0), np.inf))] = 0.0
                    cand = np.maximum(cand, 0.0)
                    cand /= cand.sum()
                    new = ll_of(cand)
                    if math.isfinite(new) and new >= ll + 1e-4 * t * slope:
                        step_ok = True
                        break
                    t *= 0.5
                if step_ok and new >= ll:
                    moved = np.abs(cand - q).max()
                    q, ll = cand, new
                    if moved == 0.0:
                        break
                else:
                    step_ok = False
        if not step_ok:
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.where(oi & (xi > 0), xi / c, 0.0)
                v = np.where(oi & (xi < 2), (2.0 - xi) / (1.0 - c), 0.0)
            a = q * (p @ u + (1.0 - p) @ v)
            cand = a / a.sum()
            new = ll_of(cand)
            if not new > ll:
                break
            q, ll = cand, new

    c = np.clip(q @ p, 0.0, 1.0)
    res, _ = _simplex_kkt(q, p @ residuals(xi, c, oi))
    converged = converged or res < tol * scale
    return SupervisedFit(q, ll, it, converged, float(res),
                         boundary_flags(q, config.eps_boundary))


def align_labels(q_hat, p_hat, q_ref, p_ref=None):
    """Permutation of population labels that best matches ``q_ref``.

    Returns ``(perm, q_aligned, p_aligned)`` with ``q_aligned = q_hat[:, perm]``
    and ``p_aligned = p_hat[perm]``. Among equal-cost permutations the
    lexicographically smallest wins.
    """
    q_hat = np.atleast_2d(np.asarray(q_hat, dtype=float))
    q_ref = np.atleast_2d(np.asarray(q_ref, dtype=float))
    if q_hat.shape != q_ref.shape:
        raise ValueError("q_hat and q_ref shapes differ")
    K = q_hat.shape[1]
    if p_hat is not None and np.asarray(p_hat).shape[0] != K:
        raise ValueError("p_hat has the wrong number of populations")
    if p_ref is not None and np.asarray(p_ref).shape[0] != K:
        raise ValueError("p_ref has the wrong number of populations")
    if K > 8:
        raise NotImplementedError("exhaustive label alignment supports K <= 8 only")
    # cost[a, b]: L1 distance between estimated column a and reference column b
    cost = np.abs(q_hat[:, :, None] - q_ref[:, None, :]).sum(axis=0)
    perms = np.array(list(itertools.permutations(range(K))))
    totals = cost[perms, np.arange(K)].sum(axis=1)
    best = int(np.flatnonzero(totals <= totals.min() + 1e-12)[0])
    perm = perms[best]
    p_aligned = None if p_hat is None else np.asarray(p_hat, dtype=float)[perm]
    return perm, q_hat[:, perm], p_aligned


def metric_d(q_a, p_a, q_b, p_b) -> float:
    """Weighted L1 distance ``sum_i 2^-i |q_a,i - q_b,i| + sum_m 2^-m |p_a,m - p_b,m|`` (1-based i, m)."""
    q_a, q_b = np.atleast_2d(q_a), np.atleast_2d(q_b)
    p_a, p_b = np.asarray(p_a, dtype=float), np.asarray(p_b, dtype=float)
    if q_a.shape != q_b.shape or p_a.shape != p_b.shape:
        raise ValueError("dimension mismatch")
    wi = 0.5 ** np.arange(1, q_a.shape[0] + 1)
    wm = 0.5 ** np.arange(1, p_a.shape[1] + 1) if p_a.ndim == 2 else np.zeros(0)
    dq = np.abs(q_a - q_b).sum(axis=1)
    dp = np.abs(p_a - p_b).sum(axis=0) if p_a.size else np.zeros(0)
    return float(wi @ dq + wm @ dp)
