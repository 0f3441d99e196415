"""Expected information blocks and identifiability checks.

The information for one individual's ancestry is averaged over markers and
lives in the reduced (K-1)-coordinate parametrization; the information for
one marker's frequencies is averaged over individuals and is K x K. The full
matrix is block diagonal in (individual blocks, marker blocks).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .model import check_ancestry, check_freqs, reduce_freqs, success_probs


class SingularFisherError(np.linalg.LinAlgError):
    """An information block is not positive definite.

    ``offenders`` lists ``(kind, index, min_eigenvalue)`` with kind ``"q"``
    (individual) or ``"p"`` (marker).
    """

    def __init__(self, offenders):
        self.offenders = list(offenders)
        names = ", ".join(f"{kind}-block {idx} (min eig {ev:.3g})"
                          for kind, idx, ev in self.offenders)
        super().__init__(f"singular information block(s): {names}")

    def report(self) -> dict:
        return {"offending_blocks": [
            {"kind": kind, "index": int(idx), "min_eigenvalue": float(ev)}
            for kind, idx, ev in self.offenders
        ]}


def _info_weights(c, what):
    """2 / (c (1 - c)) on (0, 1); 2 where c is 0 or 1, with a warning."""
    c = np.asarray(c, dtype=float)
    inner = (c > 0) & (c < 1)
    if not inner.all():
        warnings.warn(f"{int((~inner).sum())} {what} with success probability 0 or 1; "
                      "using the degenerate contribution 2", RuntimeWarning, stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(inner, 2.0 / (c * (1.0 - c)), 2.0)


def reduced_outer(p_col, ref: int | None = None):
    """Reduced frequency vector of one marker and its outer product."""
    pr = reduce_freqs(np.asarray(p_col, dtype=float)[:, None], ref)[:, 0]
    return pr, np.outer(pr, pr)


def expected_info_q(q_row, p, markers=None, ref: int | None = None) -> np.ndarray:
    """Average expected information of one ancestry row, (K-1) x (K-1).

    ``markers`` selects the markers averaged over (all by default); ``ref``
    is the eliminated population (last by default).
    """
    q_row = check_ancestry(q_row, tol=1e-6)[0]
    p = check_freqs(p)
    if markers is not None:
        p = p[:, markers]
    if p.shape[1] == 0:
        raise ValueError("empty marker range")
    c = success_probs(q_row, p)[0]
    w = _info_weights(c, "markers")
    pr = reduce_freqs(p, ref)
    return (pr * w) @ pr.T / p.shape[1]


def expected_info_p(q, p_col, individuals=None) -> np.ndarray:
    """Average expected information of one marker's frequencies, K x K."""
    q = check_ancestry(q, tol=1e-6)
    if individuals is not None:
        q = q[individuals]
    if q.shape[0] == 0:
        raise ValueError("empty individual range")
    p_col = check_freqs(p_col)[:, 0]
    c = q @ p_col
    w = _info_weights(np.clip(c, 0, 1), "individuals")
    return (q.T * w) @ q / q.shape[0]


@dataclass
class FisherBlocks:
    q_blocks: list = field(default_factory=list)
    p_blocks: list = field(default_factory=list)
    q_index: list = field(default_factory=list)
    p_index: list = field(default_factory=list)
    n_markers: int = 0
    n_individuals: int = 0
    ref: int | None = None

    @property
    def size(self) -> int:
        return sum(b.shape[0] for b in self.q_blocks) + sum(b.shape[0] for b in self.p_blocks)

    def blocks(self):
        yield from (("q", i, b) for i, b in zip(self.q_index, self.q_blocks))
        yield from (("p", m, b) for m, b in zip(self.p_index, self.p_blocks))


def fisher_blocks(q, p, individuals=(), markers=(), ref: int | None = None) -> FisherBlocks:
    """Information blocks for the estimated individuals and markers.

    Individual blocks average over all markers of ``p``, marker blocks over
    all individuals of ``q``.
    """
    q = check_ancestry(q, tol=1e-6)
    p = check_freqs(p)
    individuals, markers = list(individuals), list(markers)
    return FisherBlocks(
        q_blocks=[expected_info_q(q[i], p, ref=ref) for i in individuals],
        p_blocks=[expected_info_p(q, p[:, m]) for m in markers],
        q_index=individuals,
        p_index=markers,
        n_markers=p.shape[1],
        n_individuals=q.shape[0],
        ref=ref,
    )


def assemble_gamma(blocks: FisherBlocks) -> np.ndarray:
    """Block-diagonal information matrix: individual blocks first, then marker blocks."""
    mats = list(blocks.q_blocks) + list(blocks.p_blocks)
    if not mats:
        raise ValueError("no blocks to assemble")
    return block_diag(*mats)


def min_eigenvalue(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(np.linalg.eigvalsh(0.5 * (a + a.T))[0]) if a.size else np.inf


def is_pd(a, rtol: float = 1e-12) -> bool:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return True
    ev = np.linalg.eigvalsh(0.5 * (a + a.T))
    return bool(ev[0] > rtol * max(1.0, abs(ev[-1])))


def invert_blocks(blocks: FisherBlocks, pseudo: bool = False):
    """Blockwise inverses; singular blocks raise unless ``pseudo`` is set."""
    bad = [(kind, idx, min_eigenvalue(b)) for kind, idx, b in blocks.blocks() if not is_pd(b)]
    if bad and not pseudo:
        raise SingularFisherError(bad)
    inv = np.linalg.pinv if pseudo else np.linalg.inv
    return [inv(b) for _, _, b in blocks.blocks()]


@dataclass
class AssumptionReport:
    name: str
    count: int
    threshold: int
    satisfied: bool
    subsets: list

    def as_dict(self):
        return {"name": self.name, "count": self.count, "threshold": self.threshold,
                "satisfied": self.satisfied, "subsets": [list(map(int, s)) for s in self.subsets]}


def greedy_independent_subsets(vectors, size: int, tol: float = 1e-8) -> list:
    """Disjoint subsets of ``size`` linearly independent vectors, built greedily.

    Each pass scans the unused vectors in order and keeps every vector that
    raises the rank of the current subset; vectors skipped in one pass stay
    available for later ones.
    """
    vectors = np.asarray(vectors, dtype=float)
    if size < 1:
        return []
    remaining = list(range(len(vectors)))
    subsets = []
    while len(remaining) >= size:
        chosen = []
        for idx in remaining:
            trial = vectors[chosen + [idx]]
            if np.linalg.matrix_rank(trial, tol=tol) == len(chosen) + 1:
                chosen.append(idx)
                if len(chosen) == size:
                    break
        if len(chosen) < size:
            break
        subsets.append(chosen)
        taken = set(chosen)
        remaining = [i for i in remaining if i not in taken]
    return subsets


def check_assumption_star(p, threshold: int = 1, ref: int | None = None,
                          tol: float = 1e-8) -> AssumptionReport:
    """Count disjoint groups of K-1 independent reduced frequency vectors."""
    p = check_freqs(p)
    K = p.shape[0]
    subsets = greedy_independent_subsets(reduce_freqs(p, ref).T, K - 1, tol)
    return AssumptionReport("star", len(subsets), threshold, len(subsets) >= threshold, subsets)


def check_assumption_starstar(q, threshold: int = 1, tol: float = 1e-8) -> AssumptionReport:
    """Count disjoint groups of K independent ancestry rows."""
    q = check_ancestry(q, tol=1e-6)
    subsets = greedy_independent_subsets(q, q.shape[1], tol)
    return AssumptionReport("starstar", len(subsets), threshold, len(subsets) >= threshold, subsets)


def third_moment_averages(q, p) -> dict:
    """Finite-sample averages of ``2 / (c (1 - c))^3`` over c in (0, 1).

    Returned per individual (averaged over markers) and per marker
    (averaged over individuals).
    """
    c = success_probs(check_ancestry(q, tol=1e-6), check_freqs(p))
    inner = (c > 0) & (c < 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(inner, 2.0 / (c * (1.0 - c)) ** 3, 0.0)
    return {"per_individual": t.mean(axis=1), "per_marker": t.mean(axis=0)}


def simplex_grid(K: int, step: float) -> np.ndarray:
    """All points of the simplex lattice with spacing ``step`` (1/step must be an integer)."""
    n = int(round(1.0 / step))
    if not np.isclose(n * step, 1.0):
        raise ValueError("1/step must be an integer")
    pts = []

    def rec(prefix, left):
        if len(prefix) == K - 1:
            pts.append(prefix + [left])
            return
        for j in range(left + 1):
            rec(prefix + [j], left - j)

    rec([], n)
    return np.array(pts, dtype=float) / n


@dataclass
class AUReport:
    statistic: float
    threshold: float
    holds: bool
    min_eigenvalue: float
    degenerate: list

    def as_dict(self):
        return {"statistic": self.statistic, "threshold": self.threshold, "holds": self.holds,
                "min_eigenvalue": self.min_eigenvalue,
                "degenerate": [list(map(float, d)) for d in self.degenerate]}


def check_condition_au(p, q0=None, candidates=None, delta: float = 0.05,
                       step: float = 0.05, zero_tol: float = 1e-12) -> AUReport:
    """Pinsker-type sufficient check of the identifiability condition for one individual.

    For K=2 the statistic is ``mean_m (p[1, m] - p[0, m])^2``. For general K it is
    the minimum over candidate ancestries q != q0 of
    ``mean_m (c_m - c0_m)^2 / |q - q0|^2`` with ``|.|`` taken over the K-1
    reduced coordinates; it equals the K=2 statistic when K=2. Candidates whose
    unnormalized statistic vanishes are reported as degenerate. The condition
    holds when the statistic exceeds ``delta**2``.
    """
    p = check_freqs(p)
    K, M = p.shape
    pr = reduce_freqs(p)
    gram = pr @ pr.T / M
    min_eig = float(np.linalg.eigvalsh(gram)[0]) if K > 1 else 0.0
    if K == 2 and q0 is None:
        stat = float(np.mean((p[1] - p[0]) ** 2))
        return AUReport(stat, delta**2, stat > delta**2, min_eig, [])
    if q0 is None:
        raise ValueError("q0 is required for K > 2")
    q0 = check_ancestry(q0, tol=1e-6)[0]
    cand = simplex_grid(K, step) if candidates is None else np.atleast_2d(candidates)
    diff = cand - q0
    dist2 = (diff[:, :-1] ** 2).sum(axis=1)
    keep = dist2 > 1e-18
    cand, diff, dist2 = cand[keep], diff[keep], dist2[keep]
    raw = ((diff @ p) ** 2).mean(axis=1)
    ratio = raw / dist2
    stat = float(ratio.min())
    degenerate = [c for c, r in zip(cand, raw) if r <= zero_tol]
    return AUReport(stat, delta**2, stat > delta**2, min_eig, degenerate)
