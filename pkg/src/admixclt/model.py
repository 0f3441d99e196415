"""Admixture Model likelihood for biallelic markers.

Genotypes are counts of the reference allele, ``x[i, m]`` in {0, 1, 2}, with
``MISSING`` marking unobserved cells. Ancestries ``q`` are N x K with rows on
the simplex, frequencies ``p`` are K x M. Given ``c = q @ p`` every observed
cell is Binomial(2, c[i, m]).

Derivatives are taken of the unnormalized log-likelihood. The q-direction
uses the reduced parametrization in which one coordinate (``ref``, the last
one by default) is eliminated through ``q_ref = 1 - sum(others)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MISSING = 9
NEG_INF = -math.inf


@dataclass(frozen=True)
class ModelConfig:
    k_populations: int
    eps_clamp: float = 1e-6
    eps_boundary: float = 1e-4
    tol_simplex: float = 1e-9

    def __post_init__(self):
        if self.k_populations < 1:
            raise ValueError("k_populations must be positive")
        if not 0 < self.eps_clamp < self.eps_boundary < 0.5:
            raise ValueError("need 0 < eps_clamp < eps_boundary < 0.5")
        if self.tol_simplex <= 0:
            raise ValueError("tol_simplex must be positive")


@dataclass(frozen=True)
class GenotypeMatrix:
    """N x M reference-allele counts with ``MISSING`` for unobserved cells."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] == 0 or counts.shape[1] == 0:
            raise ValueError(f"genotypes must be a non-empty 2-d array, got shape {counts.shape}")
        if not np.issubdtype(counts.dtype, np.integer):
            if not np.all(np.isfinite(counts)) or np.any(counts != np.round(counts)):
                raise ValueError("genotype counts must be integers")
            counts = counts.astype(np.int64)
        bad = ~np.isin(counts, (0, 1, 2, MISSING))
        if bad.any():
            i, m = np.argwhere(bad)[0]
            raise ValueError(f"invalid genotype {counts[i, m]} at individual {i}, marker {m}")
        object.__setattr__(self, "counts", counts)

    @property
    def n_individuals(self) -> int:
        return self.counts.shape[0]

    @property
    def n_markers(self) -> int:
        return self.counts.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return self.counts != MISSING

    def as_float(self):
        """Return ``(x, obs)``: counts as floats with zeros at missing cells, and the mask."""
        obs = self.observed
        x = np.where(obs, self.counts, 0).astype(float)
        return x, obs


def as_genotypes(x) -> GenotypeMatrix:
    if isinstance(x, GenotypeMatrix):
        return x
    return GenotypeMatrix(np.atleast_2d(np.asarray(x)))


def check_ancestry(q, tol: float = 1e-9) -> np.ndarray:
    """Validate an N x K ancestry matrix and return it as a float array."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if q.ndim != 2:
        raise ValueError("ancestry matrix must be 2-d")
    if np.any(q < -tol) or np.any(q > 1 + tol) or not np.all(np.isfinite(q)):
        raise ValueError("ancestry entries must lie in [0, 1]")
    dev = np.abs(q.sum(axis=1) - 1.0)
    if np.any(dev > tol):
        i = int(np.argmax(dev))
        raise ValueError(f"ancestry row {i} sums to {q[i].sum():.12g}, not 1")
    return q


def check_freqs(p, tol: float = 1e-12) -> np.ndarray:
    """Validate a K x M allele frequency matrix and return it as a float array."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if p.ndim != 2:
        raise ValueError("frequency matrix must be 2-d")
    if np.any(p < -tol) or np.any(p > 1 + tol) or not np.all(np.isfinite(p)):
        raise ValueError("allele frequencies must lie in [0, 1]")
    return p


def success_probs(q, p) -> np.ndarray:
    """Per-cell success probabilities ``c[i, m] = <q[i], p[:, m]>``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if q.shape[1] != p.shape[0]:
        raise ValueError(f"dimension mismatch: q has K={q.shape[1]}, p has K={p.shape[0]}")
    # rounding can leave convex combinations a hair outside [0, 1]
    return np.clip(q @ p, 0.0, 1.0)


def _check_dims(g: GenotypeMatrix, q, p):
    if q.shape[0] != g.n_individuals or p.shape[1] != g.n_markers or q.shape[1] != p.shape[0]:
        raise ValueError(
            f"dimension mismatch: x {g.counts.shape}, q {q.shape}, p {p.shape}"
        )


def cell_loglik(x, c, obs=None) -> np.ndarray:
    """Binomial log-likelihood of each cell without the binomial coefficient.

    Uses 0 * log 0 = 0; an impossible cell evaluates to ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > 0, x * np.log(c), 0.0)
        b = np.where(x < 2, (2.0 - x) * np.log1p(-c), 0.0)
    out = a + b
    if obs is not None:
        out = np.where(obs, out, 0.0)
    return out


def log_likelihood(x, q, p, normalized: bool = True) -> float:
    """Admixture log-likelihood.

    With ``normalized=True`` the sum is divided by twice the number of observed
    cells, i.e. ``1/(2MN)`` for complete data. Returns ``NEG_INF`` when some
    observed count is impossible under ``c``.
    """
    g = as_genotypes(x)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.asarray(p, dtype=float)
    _check_dims(g, q, p)
    xf, obs = g.as_float()
    terms = cell_loglik(xf, success_probs(q, p), obs)
    total = float(terms.sum())
    if not math.isfinite(total):
        return NEG_INF
    if normalized:
        n_obs = int(obs.sum())
        if n_obs == 0:
            raise ValueError("no observed genotypes")
        total /= 2.0 * n_obs
    return total


def residuals(x, c, obs=None) -> np.ndarray:
    """``x/c - (2-x)/(1-c)``, the derivative of a cell log-likelihood in ``c``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(x > 0, x / c, 0.0) - np.where(x < 2, (2.0 - x) / (1.0 - c), 0.0)
    if obs is not None:
        r = np.where(obs, r, 0.0)
    return r


def curvatures(x, c, obs=None) -> np.ndarray:
    """``x/c^2 + (2-x)/(1-c)^2``, minus the second derivative in ``c``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(x > 0, x / c**2, 0.0) + np.where(x < 2, (2.0 - x) / (1.0 - c) ** 2, 0.0)
    if obs is not None:
        w = np.where(obs, w, 0.0)
    return w


def reduce_freqs(p, ref: int | None = None) -> np.ndarray:
    """Reduced frequency vectors ``p[k, m] - p[ref, m]`` for ``k != ref``, shape (K-1) x M."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    K = p.shape[0]
    ref = K - 1 if ref is None else ref
    keep = [k for k in range(K) if k != ref]
    return p[keep] - p[ref]


def _row_terms(x, q, p, individual):
    g = as_genotypes(x)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.asarray(p, dtype=float)
    _check_dims(g, q, p)
    xf, obs = g.as_float()
    c = success_probs(q[individual], p)[0]
    return xf[individual], obs[individual], c, q, p


def _col_terms(x, q, p, marker):
    g = as_genotypes(x)
    q = np.atleast_2d(np.asarray(q, dtype=float))
    p = np.asarray(p, dtype=float)
    _check_dims(g, q, p)
    xf, obs = g.as_float()
    c = success_probs(q, p[:, marker])[:, 0]
    return xf[:, marker], obs[:, marker], c, q, p


def _require_finite(x, c, obs):
    impossible = obs & (((x > 0) & (c <= 0.0)) | ((x < 2) & (c >= 1.0)))
    if impossible.any():
        raise ValueError("likelihood is -inf at this point (c hits 0 or 1 against the data)")


def _require_interior(row, what):
    if np.any(row <= 0.0) or np.any(row >= 1.0):
        raise ValueError(f"{what} is on the boundary; use the asymptotics module for boundary points")


def score_q_full(x, q, p, individual) -> np.ndarray:
    """Gradient of individual ``individual``'s log-likelihood in all K coordinates of q."""
    xi, oi, c, q, p = _row_terms(x, q, p, individual)
    _require_finite(xi, c, oi)
    return p @ residuals(xi, c, oi)


def grad_q(x, q, p, individual: int, ref: int | None = None) -> np.ndarray:
    """Gradient in the K-1 free ancestry coordinates of one individual."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _require_interior(q[individual], f"ancestry row {individual}")
    xi, oi, c, q, p = _row_terms(x, q, p, individual)
    _require_finite(xi, c, oi)
    return reduce_freqs(p, ref) @ residuals(xi, c, oi)


def grad_p(x, q, p, marker: int) -> np.ndarray:
    """Gradient in the K frequencies of one marker."""
    xm, om, c, q, p = _col_terms(x, q, p, marker)
    _require_finite(xm, c, om)
    return q.T @ residuals(xm, c, om)


def hessian_q(x, q, p, individual: int, ref: int | None = None) -> np.ndarray:
    """Observed Hessian in the K-1 free ancestry coordinates of one individual."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    _require_interior(q[individual], f"ancestry row {individual}")
    xi, oi, c, q, p = _row_terms(x, q, p, individual)
    _require_finite(xi, c, oi)
    pr = reduce_freqs(p, ref)
    return -(pr * curvatures(xi, c, oi)) @ pr.T


def hessian_p(x, q, p, marker: int) -> np.ndarray:
    """Observed Hessian in the K frequencies of one marker."""
    xm, om, c, q, p = _col_terms(x, q, p, marker)
    _require_finite(xm, c, om)
    return -(q.T * curvatures(xm, c, om)) @ q
