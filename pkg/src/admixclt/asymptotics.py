"""Limit laws of the scaled ancestry estimate.

Interior parameters get the Gaussian law with covariance equal to the inverse
information. Boundary parameters get the law of the information-metric
projection of that Gaussian onto the sign cone

    {v : v_i >= 0 for i in k_min, v_j <= 0 for j in k_max},

computed exactly by enumerating active sets.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .fisher import FisherBlocks, SingularFisherError, invert_blocks, is_pd, min_eigenvalue

MAX_CONSTRAINTS = 12


@dataclass(frozen=True)
class ConeSpec:
    """Sign constraints on the reduced coordinates.

    ``labels[j]`` is the original population index of reduced coordinate j and
    ``ref`` the population eliminated through the sum constraint.
    """

    dim: int
    k_min: tuple = ()
    k_max: tuple = ()
    ref: int | None = None
    labels: tuple | None = None

    def __post_init__(self):
        k_min, k_max = tuple(sorted(self.k_min)), tuple(sorted(self.k_max))
        if set(k_min) & set(k_max):
            raise ValueError("k_min and k_max overlap")
        if any(not 0 <= j < self.dim for j in k_min + k_max):
            raise ValueError("constraint index out of range")
        object.__setattr__(self, "k_min", k_min)
        object.__setattr__(self, "k_max", k_max)
        if self.labels is None:
            object.__setattr__(self, "labels", tuple(range(self.dim)))

    @property
    def constrained(self) -> tuple:
        return tuple(sorted(self.k_min + self.k_max))

    @classmethod
    def from_q0(cls, q0, eps_boundary: float = 1e-4):
        """Cone for an ancestry vector, eliminating its largest coordinate."""
        q0 = np.asarray(q0, dtype=float).ravel()
        K = q0.size
        ref = int(np.argmax(q0))
        labels = tuple(k for k in range(K) if k != ref)
        k_min = tuple(j for j, k in enumerate(labels) if q0[k] <= eps_boundary)
        k_max = tuple(j for j, k in enumerate(labels) if q0[k] >= 1 - eps_boundary)
        return cls(K - 1, k_min, k_max, ref, labels)


@dataclass
class GaussianLaw:
    covariance: np.ndarray
    std_errors: np.ndarray | None = None
    labels: list | None = None

    def __post_init__(self):
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))


@dataclass
class ProjectedLaw:
    gamma: np.ndarray
    cone: ConeSpec
    samples: np.ndarray
    pinned: np.ndarray
    point_masses: dict = field(default_factory=dict)

    def atom_probability(self, coord: int) -> float:
        return float(self.pinned[:, coord].mean())

    @property
    def continuous_mass(self) -> float:
        return self.point_masses.get(frozenset(), 0.0)


def _check_pd(gamma):
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if gamma.shape[0] != gamma.shape[1] or not np.allclose(gamma, gamma.T, rtol=1e-10, atol=1e-12):
        raise ValueError("gamma must be a symmetric matrix")
    if not is_pd(gamma):
        raise ValueError(f"gamma is not positive definite (min eigenvalue {min_eigenvalue(gamma):.3g})")
    return 0.5 * (gamma + gamma.T)


def interior_law(gamma, n_markers: int | None = None, n_individuals: int | None = None,
                 pseudo: bool = False) -> GaussianLaw:
    """Gaussian limit law with covariance equal to the inverse information.

    ``gamma`` is either a ``FisherBlocks`` (inverted blockwise, singular blocks
    reported by name) or an assembled matrix. Standard errors of the
    unscaled estimates divide by sqrt(M) for ancestry coordinates and by
    sqrt(N) for frequency coordinates.
    """
    if isinstance(gamma, FisherBlocks):
        from scipy.linalg import block_diag

        inverses = invert_blocks(gamma, pseudo=pseudo)
        cov = block_diag(*inverses)
        M = n_markers or gamma.n_markers
        N = n_individuals or gamma.n_individuals
        nq = sum(b.shape[0] for b in gamma.q_blocks)
        scale = np.concatenate([np.full(nq, M), np.full(cov.shape[0] - nq, N)]).astype(float)
        labels = [("q", i, j) for i, b in zip(gamma.q_index, gamma.q_blocks) for j in range(b.shape[0])]
        labels += [("p", m, k) for m, b in zip(gamma.p_index, gamma.p_blocks) for k in range(b.shape[0])]
    else:
        g = np.atleast_2d(np.asarray(gamma, dtype=float))
        if not is_pd(g):
            if not pseudo:
                raise SingularFisherError([("gamma", 0, min_eigenvalue(g))])
            cov = np.linalg.pinv(g)
        else:
            cov = np.linalg.inv(g)
        scale = np.full(cov.shape[0], float(n_markers)) if n_markers else None
        labels = None
    cov = 0.5 * (cov + cov.T)
    se = None if scale is None else np.sqrt(np.diag(cov) / scale)
    return GaussianLaw(cov, se, labels)


def _subsets(constrained):
    for r in range(len(constrained) + 1):
        yield from itertools.combinations(constrained, r)


def project_many(z, gamma, cone: ConeSpec):
    """Project each row of ``z`` onto the cone in the ``gamma`` metric.

    Returns ``(lam, pinned)``. Every active set is tried; for each sample the
    one with the smallest KKT violation (exactly zero for the true optimum)
    is kept, so pinned coordinates are exactly zero.
    """
    gamma = _check_pd(gamma)
    z = np.atleast_2d(np.asarray(z, dtype=float))
    R, d = z.shape
    if d != cone.dim or gamma.shape[0] != d:
        raise ValueError("dimension mismatch between z, gamma and cone")
    cons = cone.constrained
    if len(cons) > MAX_CONSTRAINTS:
        raise ValueError(f"at most {MAX_CONSTRAINTS} constraints are supported")
    sign = np.zeros(d)
    sign[list(cone.k_min)] = 1.0
    sign[list(cone.k_max)] = -1.0

    best_lam = z.copy()
    best_viol = np.full(R, np.inf)
    best_pin = np.zeros((R, d), dtype=bool)
    for A in _subsets(cons):
        A = list(A)
        F = [j for j in range(d) if j not in A]
        lam = np.zeros_like(z)
        if F:
            lam[:, F] = z[:, F]
            if A:
                # stationarity on F with lam_A = 0
                corr = np.linalg.solve(gamma[np.ix_(F, F)], gamma[np.ix_(F, A)])
                lam[:, F] += z[:, A] @ corr.T
        grad = (lam - z) @ gamma
        viol = np.zeros(R)
        # feasibility of free constrained coordinates
        for j in F:
            if sign[j]:
                viol = np.maximum(viol, np.maximum(-sign[j] * lam[:, j], 0.0))
        # multiplier signs of pinned coordinates
        for j in A:
            viol = np.maximum(viol, np.maximum(-sign[j] * grad[:, j], 0.0))
        better = viol < best_viol
        best_viol = np.where(better, viol, best_viol)
        best_lam[better] = lam[better]
        pin = np.zeros(d, dtype=bool)
        pin[A] = True
        best_pin[better] = pin
    return best_lam, best_pin


def project_onto_cone(z, gamma, cone: ConeSpec) -> np.ndarray:
    """Exact minimizer of ``(lam - z)' gamma (lam - z)`` over the cone."""
    lam, _ = project_many(np.asarray(z, dtype=float)[None, :], gamma, cone)
    return lam[0]


def kkt_residual(lam, z, gamma, cone: ConeSpec) -> float:
    """Largest violation of primal feasibility, stationarity or multiplier sign."""
    lam = np.asarray(lam, dtype=float)
    grad = np.asarray(gamma) @ (lam - np.asarray(z, dtype=float))
    res = 0.0
    cons = set(cone.constrained)
    for j in range(cone.dim):
        s = 1.0 if j in cone.k_min else (-1.0 if j in cone.k_max else 0.0)
        if j in cons and lam[j] == 0.0:
            res = max(res, max(-s * grad[j], 0.0))
        else:
            res = max(res, abs(grad[j]))
            if s:
                res = max(res, max(-s * lam[j], 0.0))
    return res


def _draw_gaussian(cov, n, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    L = np.linalg.cholesky(cov)
    return rng.standard_normal((n, cov.shape[0])) @ L.T


def boundary_law(gamma, cone: ConeSpec, n_samples: int = 100_000, seed: int = 0) -> ProjectedLaw:
    """Sample the projected limit law for an ancestry on the boundary."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    gamma = _check_pd(gamma)
    cov = np.linalg.inv(gamma)
    z = _draw_gaussian(0.5 * (cov + cov.T), n_samples, seed)
    lam, pinned = project_many(z, gamma, cone)
    faces, counts = np.unique(pinned, axis=0, return_counts=True)
    masses = {frozenset(np.flatnonzero(f).tolist()): c / n_samples for f, c in zip(faces, counts)}
    return ProjectedLaw(gamma, cone, lam, pinned, masses)


@dataclass
class LawSummary:
    coord: int
    table: list
    quantiles: dict
    atom: float
    density: np.ndarray | None = None
    interval: tuple | None = None


QUANTILES = (0.025, 0.5, 0.975)


def summarize_law(law, coord: int, grid=None, bins: int = 50, estimate: float | None = None,
                  n_markers: int | None = None) -> LawSummary:
    """Histogram (or exact normal masses), atoms and quantiles of one coordinate.

    ``grid`` gives bin edges; by default ``bins`` equal bins spanning the
    samples (projected law) or +-4 sd (Gaussian law). With ``estimate`` and
    ``n_markers`` the quantiles are mapped back to a clipped interval
    ``estimate + quantile / sqrt(M)``.
    """
    if isinstance(law, GaussianLaw):
        sd = math.sqrt(law.covariance[coord, coord])
        edges = np.linspace(-4 * sd, 4 * sd, bins + 1) if grid is None else np.asarray(grid, float)
        mass = np.diff(stats.norm.cdf(edges, scale=sd))
        density = stats.norm.pdf(edges, scale=sd)
        quant = {q: float(stats.norm.ppf(q, scale=sd)) for q in QUANTILES}
        atom = 0.0
    else:
        s = law.samples[:, coord]
        if s.size == 0:
            raise ValueError("empty samples")
        pinned = law.pinned[:, coord]
        cont = s[~pinned]
        if grid is None:
            lo, hi = (cont.min(), cont.max()) if cont.size else (-1.0, 1.0)
            if lo == hi:
                lo, hi = lo - 0.5, hi + 0.5
            edges = np.linspace(lo, hi, bins + 1)
        else:
            edges = np.asarray(grid, dtype=float)
        counts, _ = np.histogram(cont, bins=edges)
        mass = counts / s.size
        density = None
        quant = {q: float(np.quantile(s, q)) for q in QUANTILES}
        atom = float(pinned.mean())
    table = [(coord, float(a), float(b), float(m)) for a, b, m in zip(edges[:-1], edges[1:], mass)]
    interval = None
    if estimate is not None and n_markers:
        r = math.sqrt(n_markers)
        interval = (float(np.clip(estimate + quant[0.025] / r, 0, 1)),
                    float(np.clip(estimate + quant[0.975] / r, 0, 1)))
    return LawSummary(coord, table, quant, atom, density, interval)
