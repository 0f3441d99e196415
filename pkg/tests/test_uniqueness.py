import itertools

import numpy as np
import pytest

from admixclt.io import read_p, read_q
from admixclt.uniqueness import (INCONCLUSIVE, UNIQUE, check_uniqueness_general,
                                 check_uniqueness_k2, is_possible, k2_extremes)

# dense near zero, where non-trivial S_2 would hide
AXIS = np.unique(np.r_[-np.logspace(-4, 0, 9), 0.0, np.logspace(-4, 0, 9), np.linspace(0, 1, 41)])


def possible_s2(q, p):
    """All non-identity, non-swap S_2 = [[1-a, a], [b, 1-b]] on the grid that are possible."""
    found = []
    for a, b in itertools.product(AXIS, AXIS):
        if (a, b) in ((0.0, 0.0), (1.0, 1.0)) or abs(1 - a - b) < 1e-9:
            continue
        if is_possible(np.array([[1 - a, a], [b, 1 - b]]), q, p):
            found.append((a, b))
    return found


def load(fixtures, name):
    return read_q(fixtures / f"{name}.Q"), read_p(fixtures / f"{name}.P")


def test_k2_fixture_unique_and_grid_agrees(fixtures):
    q, p = load(fixtures, "unique_k2")
    assert check_uniqueness_k2(q, p).verdict == UNIQUE
    assert possible_s2(q, p) == []


def test_printed_k2_condition_is_not_sufficient(fixtures):
    # markers (1, 0.4) and (0, 0.7) both pin the same S_2 parameter
    q, p = load(fixtures, "nonunique_k2")
    rep = check_uniqueness_k2(q, p)
    assert rep.verdict == INCONCLUSIVE
    assert rep.details["pins_a"] == [0, 1] and rep.details["pins_b"] == []
    S = np.array([[1.0, 0.0], [0.2, 0.8]])
    assert is_possible(S, q, p)
    np.testing.assert_allclose((q @ S) @ np.linalg.inv(S) @ p, q @ p)
    # the family itself, or composed with the label swap
    for a, b in possible_s2(q, p):
        assert (a == 0.0 and 0 < b <= 0.3 + 1e-12) or (a == 1.0 and 0.7 - 1e-12 <= b < 1)


def test_k2_verdict_agrees_with_grid_on_random_fixtures(rng):
    vals = np.array([0.0, 1.0, 0.3, 0.6, 0.85])
    for _ in range(60):
        p = vals[rng.integers(0, 5, size=(2, 3))]
        q = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
        if rng.random() < 0.3:
            q = q[1:]
        unique = check_uniqueness_k2(q, p).verdict == UNIQUE
        assert unique == (possible_s2(q, p) == [])


def test_k2_extremes_match_pins(fixtures):
    # a: u_hi infinite, d: u_lo zero (the two pinning markers); b, c: the vertex individuals
    for name in ("unique_k2", "nonunique_k2"):
        q, p = load(fixtures, name)
        rep = check_uniqueness_k2(q, p)
        conds = {k: v["holds"] for k, v in k2_extremes(q, p).conditions.items()}
        assert conds["b"] and conds["c"]
        assert conds["a"] == bool(rep.details["pins_a"])
        assert conds["d"] == bool(rep.details["pins_b"])
        # the expressions mix u and v, so without both vertices only the verdict lines up
        for qq in (q, q[1:], q[:1]):
            conds = {k: v["holds"] for k, v in k2_extremes(qq, p).conditions.items()}
            assert all(conds.values()) == (check_uniqueness_k2(qq, p).verdict == UNIQUE)


def test_k3_fixture_unique(fixtures, rng):
    q, p = load(fixtures, "unique_k3")
    rep = check_uniqueness_general(q, p)
    assert rep.verdict == UNIQUE and rep.distinct_a
    for S in np.eye(3)[list(itertools.permutations(range(3)))]:
        assert is_possible(S, q, p)
    for _ in range(300):
        S = np.eye(3) + rng.normal(scale=10 ** rng.uniform(-4, 0), size=(3, 3))
        S /= S.sum(axis=1, keepdims=True)
        assert not is_possible(S, q, p)


def test_colliding_anchor_values(fixtures):
    q, p = load(fixtures, "unique_k3")
    p = p.copy()
    p[:, :6] = p[:, :6].round(1)
    p[p == 0.2] = 0.3
    rep = check_uniqueness_general(q, p)
    assert rep.verdict == INCONCLUSIVE and not rep.distinct_a and rep.collisions


def test_collinear_is_inconclusive(fixtures):
    q, p = load(fixtures, "collinear")
    assert check_uniqueness_general(q, p).verdict == INCONCLUSIVE


def test_missing_vertex_individual(fixtures):
    q, p = load(fixtures, "unique_k2")
    rep = check_uniqueness_k2(q[1:], p)
    assert rep.verdict == INCONCLUSIVE and rep.vertex_individuals[0] == []


def test_report_serializes(fixtures):
    import json

    q, p = load(fixtures, "unique_k3")
    json.dumps(check_uniqueness_general(q, p).as_dict())
    json.dumps(k2_extremes(*load(fixtures, "unique_k2")).as_dict())


def test_k2_rejects_other_k(fixtures):
    with pytest.raises(ValueError):
        check_uniqueness_k2(*load(fixtures, "unique_k3"))
