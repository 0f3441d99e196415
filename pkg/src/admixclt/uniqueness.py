"""Non-identifiability diagnostics for unsupervised estimates.

For an invertible S, ``(Q S, S^-1 P)`` has the same likelihood as ``(Q, P)``.
S is *possible* when the transformed pair is still a valid parameter:
rows of ``Q S`` on the simplex and entries of ``S^-1 P`` in [0, 1]. The
checks below look for the vertex individuals and anchor markers that leave
only permutation matrices possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UNIQUE = "unique-up-to-permutation"
INCONCLUSIVE = "inconclusive"

FINITE_SAMPLE_NOTE = (
    "As M, N grow, estimates can only be told apart by changes on a positive "
    "fraction of markers and individuals; a unique verdict here means such a "
    "change alters the likelihood, not that every single entry is pinned."
)


@dataclass
class UniquenessReport:
    k: int
    vertex_individuals: dict = field(default_factory=dict)
    anchor_markers: dict = field(default_factory=dict)
    distinct_a: bool = False
    verdict: str = INCONCLUSIVE
    collisions: list = field(default_factory=list)
    details: dict = field(default_factory=dict)
    tol: float = 1e-3
    note: str = FINITE_SAMPLE_NOTE

    def as_dict(self):
        return {
            "k": self.k,
            "tol": self.tol,
            "verdict": self.verdict,
            "vertex_individuals": {str(k): list(map(int, v)) for k, v in self.vertex_individuals.items()},
            "anchor_markers": {f"{k},{j}": [[int(m), float(a)] for m, a in v]
                               for (k, j), v in self.anchor_markers.items()},
            "distinct_a": self.distinct_a,
            "collisions": [[list(map(int, c[0])), list(map(int, c[1]))] for c in self.collisions],
            "details": self.details,
            "note": self.note,
        }


def _near(a, b, tol):
    return np.abs(np.asarray(a) - b) <= tol


def check_uniqueness_k2(q_hat, p_hat, tol: float = 1e-3) -> UniquenessReport:
    """Exact characterization for K = 2.

    With ``S = [[1-a, a], [b, 1-b]]``, vertex individuals in both populations
    force ``a, b >= 0``. ``a <= 0`` is forced by a marker with population 1 at a
    fixed allele (frequency 0 or 1) and population 2 different; ``b <= 0``
    by the mirror image. All four together leave only permutations.
    """
    q = np.atleast_2d(np.asarray(q_hat, dtype=float))
    p = np.asarray(p_hat, dtype=float)
    if q.shape[1] != 2 or p.shape[0] != 2:
        raise ValueError("check_uniqueness_k2 needs K = 2")
    p1, p2 = p
    i1 = np.flatnonzero(_near(q[:, 0], 1.0, tol))
    i2 = np.flatnonzero(_near(q[:, 0], 0.0, tol))
    fix1 = (_near(p1, 1.0, tol) & ~_near(p2, 1.0, tol)) | (_near(p1, 0.0, tol) & ~_near(p2, 0.0, tol))
    fix2 = (_near(p2, 1.0, tol) & ~_near(p1, 1.0, tol)) | (_near(p2, 0.0, tol) & ~_near(p1, 0.0, tol))
    m1, m2 = np.flatnonzero(fix1), np.flatnonzero(fix2)
    rep = UniquenessReport(k=2, tol=tol)
    rep.vertex_individuals = {0: i1.tolist(), 1: i2.tolist()}
    rep.anchor_markers = {(0, 1): [(int(m), float(p2[m])) for m in m1],
                          (1, 0): [(int(m), float(p1[m])) for m in m2]}
    rep.distinct_a = True
    ok = bool(i1.size and i2.size and m1.size and m2.size)
    rep.verdict = UNIQUE if ok else INCONCLUSIVE
    rep.details = {"pins_a": m1.tolist(), "pins_b": m2.tolist()}
    return rep


def check_uniqueness_general(q_hat, p_hat, tol: float = 1e-3) -> UniquenessReport:
    """Sufficient condition for any K >= 2.

    Needs, for every population k, an individual at the vertex e_k, and for
    every ordered pair (k, j) a marker whose frequency column is
    ``e_k + a e_j`` with ``0 < a < 1``; all the ``a`` values must differ.
    """
    q = np.atleast_2d(np.asarray(q_hat, dtype=float))
    p = np.asarray(p_hat, dtype=float)
    K = q.shape[1]
    if K < 2 or p.shape[0] != K:
        raise ValueError("need K >= 2 with matching q and p")
    rep = UniquenessReport(k=K, tol=tol)
    eye = np.eye(K)
    for k in range(K):
        dist = np.abs(q - eye[k]).max(axis=1)
        rep.vertex_individuals[k] = np.flatnonzero(dist <= tol).tolist()
    all_a = []
    for k in range(K):
        for j in range(K):
            if j == k:
                continue
            others = np.ones(K, dtype=bool)
            others[[k, j]] = False
            a = p[j]
            hit = (_near(p[k], 1.0, tol) & (a > tol) & (a < 1 - tol)
                   & np.all(p[others] < tol, axis=0))
            rep.anchor_markers[(k, j)] = [(int(m), float(a[m])) for m in np.flatnonzero(hit)]
            all_a.extend(((k, j), int(m), float(a[m])) for m in np.flatnonzero(hit))

    # the a values of one chosen anchor per pair must be pairwise distinct
    chosen = _pick_distinct(rep.anchor_markers, tol)
    rep.distinct_a = chosen is not None
    if chosen is None:
        rep.collisions = _collisions(all_a, tol)
    vertices_ok = all(rep.vertex_individuals[k] for k in range(K))
    anchors_ok = all(rep.anchor_markers[key] for key in rep.anchor_markers)
    rep.verdict = UNIQUE if (vertices_ok and anchors_ok and rep.distinct_a) else INCONCLUSIVE
    if chosen is not None:
        rep.details = {"chosen_anchors": {f"{k},{j}": m for (k, j), m in chosen.items()}}
    return rep


def _pick_distinct(anchors, tol):
    """One anchor per pair with pairwise distinct a values (backtracking), or None."""
    keys = [key for key in anchors if anchors[key]]
    if len(keys) < len(anchors):
        return None
    keys.sort(key=lambda k: len(anchors[k]))
    chosen, used = {}, []

    def rec(idx):
        if idx == len(keys):
            return True
        for m, a in anchors[keys[idx]]:
            if all(abs(a - b) > tol for b in used):
                chosen[keys[idx]] = m
                used.append(a)
                if rec(idx + 1):
                    return True
                used.pop()
                del chosen[keys[idx]]
        return False

    return chosen if rec(0) else None


def _collisions(all_a, tol):
    out = []
    for x in range(len(all_a)):
        for y in range(x + 1, len(all_a)):
            if all_a[x][0] != all_a[y][0] and abs(all_a[x][2] - all_a[y][2]) <= tol:
                out.append(((*all_a[x][0], all_a[x][1]), (*all_a[y][0], all_a[y][1])))
    return out


def is_possible(S, q_hat, p_hat, tol: float = 1e-9) -> bool:
    """Whether ``(Q S, S^-1 P)`` is still a valid parameter pair."""
    S = np.asarray(S, dtype=float)
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        return False
    qs = np.atleast_2d(q_hat) @ S
    ps = Sinv @ np.asarray(p_hat, dtype=float)
    return bool(np.all(qs >= -tol) and np.all(np.abs(qs.sum(axis=1) - 1) <= tol)
                and np.all(ps >= -tol) and np.all(ps <= 1 + tol))


@dataclass
class K2Extremes:
    u_star_lo: float
    u_star_hi: float
    v_star_lo: float
    v_star_hi: float
    conditions: dict = field(default_factory=dict)

    def as_dict(self):
        f = lambda v: v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
        return {"u_lo": f(self.u_star_lo), "u_hi": f(self.u_star_hi),
                "v_lo": f(self.v_star_lo), "v_hi": f(self.v_star_hi),
                "conditions": self.conditions}


def _ratios(num, den):
    num, den = np.asarray(num, dtype=float), np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(den > 0, num / den, np.where(num > 0, np.inf, np.nan))
    return r[~np.isnan(r)]


def _cond_value(which, u, v):
    """Values of the four extreme-ratio expressions, with limits at infinity."""
    if which == "a":
        if math.isinf(u) and math.isinf(v):
            return math.nan
        if math.isinf(u):
            return 1.0
        if math.isinf(v):
            return 0.0
        return (u - 1) / (u + v) if u + v else math.nan
    if which == "b":
        if math.isinf(u) and math.isinf(v):
            return math.nan
        if math.isinf(u):
            return -v
        if math.isinf(v):
            return 1 - u
        return (1 - u) * v / (u + v) if u + v else math.nan
    if which == "c":
        if math.isinf(u) and math.isinf(v):
            return math.nan
        if math.isinf(v):
            return 1.0
        if math.isinf(u):
            return 0.0
        return (1 + v) / (u + v) if u + v else math.nan
    if which == "d":
        if math.isinf(u) and math.isinf(v):
            return math.nan
        if math.isinf(u):
            return 1 + v
        if math.isinf(v):
            return u
        return (1 + v) * u / (u + v) if u + v else math.nan
    raise ValueError(which)


def k2_extremes(q_hat, p_hat, tol: float = 1e-3) -> K2Extremes:
    """Extreme frequency ratios (over both alleles) and ancestry ratios for K = 2.

    ``conditions`` evaluates

        a) (u_hi - 1) / (u_hi + v_lo) = 1    b) (1 - u_hi) / (1 + u_hi / v_lo) = 0
        c) (1 + v_hi) / (u_lo + v_hi) = 1    d) (1 + v_hi) / (1 + v_hi / u_lo) = 0

    at tolerance ``tol``; zero denominators give +inf ratios.
    """
    q = np.atleast_2d(np.asarray(q_hat, dtype=float))
    p = np.asarray(p_hat, dtype=float)
    if q.shape[1] != 2 or p.shape[0] != 2:
        raise ValueError("k2_extremes needs K = 2")
    u = np.concatenate([_ratios(p[1], p[0]), _ratios(1 - p[1], 1 - p[0])])
    v = _ratios(q[:, 0], q[:, 1])
    u_lo, u_hi = (float(u.min()), float(u.max())) if u.size else (math.nan, math.nan)
    v_lo, v_hi = (float(v.min()), float(v.max())) if v.size else (math.nan, math.nan)
    targets = {"a": 1.0, "b": 0.0, "c": 1.0, "d": 0.0}
    args = {"a": (u_hi, v_lo), "b": (u_hi, v_lo), "c": (u_lo, v_hi), "d": (u_lo, v_hi)}
    conds = {}
    for key, target in targets.items():
        val = _cond_value(key, *args[key])
        conds[key] = {"value": val if math.isfinite(val) else None,
                      "holds": bool(math.isfinite(val) and abs(val - target) <= tol)}
    return K2Extremes(u_lo, u_hi, v_lo, v_hi, conds)
