import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from admixclt.asymptotics import (ConeSpec, GaussianLaw, boundary_law, interior_law, kkt_residual,
                                  project_many, project_onto_cone, summarize_law)
from admixclt.fisher import fisher_blocks


def random_problem(rng, d=None):
    d = d or int(rng.integers(1, 6))
    a = rng.normal(size=(d, d))
    gamma = a @ a.T + 0.1 * np.eye(d)
    idx = rng.permutation(d)
    n_min, n_max = rng.integers(0, d + 1), 0
    n_max = rng.integers(0, d - n_min + 1)
    cone = ConeSpec(d, tuple(idx[:n_min]), tuple(idx[n_min:n_min + n_max]))
    return rng.normal(size=d) * 2, gamma, cone


def objective(lam, z, gamma):
    r = lam - z
    return r @ gamma @ r


def test_matches_slsqp(rng):
    for _ in range(30):
        z, gamma, cone = random_problem(rng)
        lam = project_onto_cone(z, gamma, cone)
        bounds = [(0, None) if j in cone.k_min else (None, 0) if j in cone.k_max else (None, None)
                  for j in range(cone.dim)]
        ref = optimize.minimize(objective, np.zeros(cone.dim), args=(z, gamma), bounds=bounds,
                                method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
        assert objective(lam, z, gamma) <= ref.fun + 1e-9
        assert kkt_residual(lam, z, gamma, cone) < 1e-10


def test_never_worse_than_random_feasible(rng):
    for _ in range(50):
        z, gamma, cone = random_problem(rng)
        lam = project_onto_cone(z, gamma, cone)
        pts = rng.normal(size=(500, cone.dim)) * 3
        pts[:, list(cone.k_min)] = np.abs(pts[:, list(cone.k_min)])
        pts[:, list(cone.k_max)] = -np.abs(pts[:, list(cone.k_max)])
        r = pts - z
        assert objective(lam, z, gamma) <= np.einsum("ij,jk,ik->i", r, gamma, r).min()


def test_pinned_are_exact_zeros(rng):
    z, gamma, cone = random_problem(rng, d=3)
    cone = ConeSpec(3, (0, 1))
    zs = rng.normal(size=(200, 3))
    lam, pinned = project_many(zs, gamma, cone)
    assert np.all(lam[pinned] == 0.0)
    assert not pinned[:, 2].any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 100))
def test_positive_homogeneity_and_idempotence(seed, scale):
    rng = np.random.default_rng(seed)
    z, gamma, cone = random_problem(rng)
    lam = project_onto_cone(z, gamma, cone)
    np.testing.assert_allclose(project_onto_cone(scale * z, gamma, cone), scale * lam,
                               rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(project_onto_cone(lam, gamma, cone), lam, rtol=1e-9, atol=1e-12)


def test_unconstrained_projection_is_identity(rng):
    z, gamma, _ = random_problem(rng, d=3)
    np.testing.assert_array_equal(project_onto_cone(z, gamma, ConeSpec(3)), z)


def test_cone_from_q0():
    cone = ConeSpec.from_q0([0.937166, 0.000010, 0.062824])
    assert cone.ref == 0 and cone.labels == (1, 2)
    assert cone.k_min == (0,) and cone.k_max == ()
    cone = ConeSpec.from_q0([0.2, 0.8])
    assert cone.constrained == ()
    with pytest.raises(ValueError):
        ConeSpec(2, (0,), (0,))


def test_one_constraint_atom_is_half():
    law = boundary_law(np.array([[3.0]]), ConeSpec(1, (0,)), n_samples=100_000, seed=4)
    assert abs(law.atom_probability(0) - 0.5) < 0.005
    assert law.point_masses[frozenset({0})] + law.continuous_mass == pytest.approx(1.0)


def test_boundary_law_deterministic():
    g = np.array([[2.0, 0.5], [0.5, 1.0]])
    a = boundary_law(g, ConeSpec(2, (0,)), 1000, seed=3)
    b = boundary_law(g, ConeSpec(2, (0,)), 1000, seed=3)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_interior_law_standard_errors(rng):
    q = rng.dirichlet(np.ones(3), size=6)
    p = rng.uniform(0.1, 0.9, size=(3, 50))
    blocks = fisher_blocks(q, p, individuals=[0], markers=[3])
    law = interior_law(blocks)
    assert law.covariance.shape == (5, 5)
    d = np.diag(law.covariance)
    np.testing.assert_allclose(law.std_errors, np.sqrt(np.r_[d[:2] / 50, d[2:] / 6]))
    with pytest.raises(np.linalg.LinAlgError):
        interior_law(np.zeros((2, 2)))


def test_summaries():
    g = GaussianLaw(np.array([[4.0]]))
    s = summarize_law(g, 0, bins=40, estimate=0.5, n_markers=100)
    assert sum(m for *_, m in s.table) == pytest.approx(1.0, abs=1e-4)
    assert s.quantiles[0.975] == pytest.approx(1.959964 * 2, rel=1e-6)
    assert s.interval == pytest.approx((0.5 - 0.392, 0.5 + 0.392), abs=1e-3)
    law = boundary_law(np.array([[1.0]]), ConeSpec(1, (0,)), 20_000, seed=1)
    s = summarize_law(law, 0, estimate=0.0, n_markers=100)
    assert s.atom + sum(m for *_, m in s.table) == pytest.approx(1.0)
    assert s.interval[0] == 0.0


def exact_free_marginal_cdf(cov, y):
    """CDF of the free coordinate when a 2-d Gaussian is projected onto {v_0 >= 0}.

    With prob. 1/2 (z_0 < 0) the free coordinate is the residual of z_1 given z_0;
    otherwise it is z_1 restricted to z_0 >= 0.
    """
    from scipy import integrate, stats

    s0, s1 = np.sqrt(np.diag(cov))
    rho = cov[0, 1] / (s0 * s1)
    resid = 0.5 * stats.norm.cdf(y, scale=s1 * np.sqrt(1 - rho**2))
    dens = lambda t: stats.norm.pdf(t, scale=s1) * stats.norm.sf(0, loc=rho * s0 / s1 * t,
                                                                 scale=s0 * np.sqrt(1 - rho**2))
    return resid + np.array([integrate.quad(dens, -np.inf, v)[0] for v in np.atleast_1d(y)])


def test_projected_marginal_matches_exact_mixture():
    from scipy import stats

    gamma = np.linalg.inv(np.array([[0.25, -0.13], [-0.13, 0.33]]))
    law = boundary_law(gamma, ConeSpec(2, (0,)), 40_000, seed=21)
    cdf = lambda y: exact_free_marginal_cdf(np.linalg.inv(gamma), y)
    sample = law.samples[:, 1]
    grid = np.quantile(sample, np.linspace(0.01, 0.99, 99))
    emp = np.searchsorted(np.sort(sample), grid, side="right") / sample.size
    assert np.abs(emp - cdf(grid)).max() < 0.01
    # and the mixture is measurably non-normal
    d = np.abs(cdf(grid) - stats.norm.cdf(grid, sample.mean(), sample.std())).max()
    assert d > 1e-3
