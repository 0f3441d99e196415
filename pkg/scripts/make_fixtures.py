"""Regenerate tests/fixtures.

Everything is seeded, so rerunning reproduces the committed files byte for
byte. The golden supervised estimate is computed by a grid search on the
scipy binomial log-pmf, independent of the package's likelihood code.

    python3 scripts/make_fixtures.py [--out tests/fixtures]
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import stats

HG00096_K3 = (0.937166, 0.000010, 0.062824)
HG00096_K2 = (0.000010, 0.999990)


def save(path, a, fmt="%.6f"):
    np.savetxt(path, np.atleast_2d(a), fmt=fmt, delimiter=" ")


def kidd_like_p(k, m=55, seed=0):
    # ancestry-informative markers: U-shaped frequencies, kept off {0, 1}
    rng = np.random.default_rng(seed)
    return rng.beta(0.6, 0.6, size=(k, m)).clip(0.02, 0.98)


def grid_mle_k2(x, obs, p, step=1e-4, final=1e-7):
    """argmax over q1 in [0, 1] of the K=2 binomial log-likelihood, by zooming grids."""
    xs, ps = x[obs], p[:, obs]

    def ll(t):
        c = np.clip(np.outer(t, ps[0]) + np.outer(1 - t, ps[1]), 0, 1)
        return stats.binom.logpmf(xs, 2, c).sum(axis=1)

    lo, hi, h = 0.0, 1.0, step
    while True:
        grid = np.clip(np.arange(lo, hi + h / 2, h), 0, 1)
        t = grid[np.argmax(ll(grid))]
        if h <= final:
            return t
        lo, hi, h = max(t - h, 0.0), min(t + h, 1.0), h / 10


def supervised_toy(out, seed=7):
    rng = np.random.default_rng(seed)
    q0 = np.array([[0.3, 0.7], [0.85, 0.15], [0.0, 1.0], [0.5, 0.5]])
    m = 300
    p = rng.uniform(0.05, 0.95, size=(2, m))
    x = rng.binomial(2, q0 @ p)
    miss = rng.random(x.shape) < 0.03
    x[miss] = 9
    save(out / "toy.geno", x, fmt="%d")
    save(out / "toy.P", p.T)
    # the golden file is computed from the P values as written to disk
    p_disk = np.loadtxt(out / "toy.P").T
    q1 = [grid_mle_k2(x[i], x[i] != 9, p_disk) for i in range(len(q0))]
    save(out / "toy_golden.Q", np.column_stack([q1, 1 - np.asarray(q1)]), fmt="%.9f")


def uniqueness_fixtures(out):
    # K=2: both vertex individuals, one marker pinning each S_2 parameter
    save(out / "unique_k2.Q", [[1, 0], [0, 1], [0.4, 0.6], [0.75, 0.25]])
    save(out / "unique_k2.P", [[1.0, 0.4], [0.7, 0.0], [0.3, 0.5], [0.6, 0.2]])
    # both fixed-allele markers pin the same parameter: not unique
    save(out / "nonunique_k2.Q", [[1, 0], [0, 1]])
    save(out / "nonunique_k2.P", [[1.0, 0.4], [0.0, 0.7]])
    # K=3: vertex individuals and anchors e_k + a e_j with distinct a
    q = np.vstack([np.eye(3), [[0.2, 0.3, 0.5], [0.6, 0.1, 0.3]]])
    anchors = []
    a_vals = iter([0.15, 0.25, 0.35, 0.45, 0.55, 0.65])
    for k in range(3):
        for j in range(3):
            if j != k:
                col = np.zeros(3)
                col[k], col[j] = 1.0, next(a_vals)
                anchors.append(col)
    rng = np.random.default_rng(3)
    p = np.column_stack(anchors + list(rng.uniform(0.1, 0.9, size=(4, 3))))
    save(out / "unique_k3.Q", q)
    save(out / "unique_k3.P", p.T)
    # collinear frequencies: p3 is the midpoint of p1 and p2
    rng = np.random.default_rng(4)
    p12 = rng.uniform(0.1, 0.9, size=(2, 40))
    pc = np.vstack([p12, p12.mean(axis=0)])
    qc = rng.dirichlet(np.ones(3), size=6)
    save(out / "collinear.Q", qc)
    save(out / "collinear.P", pc.T)


CONSISTENCY_TOML = """\
experiment = "consistency"

[model]
K = 2

[truth]
q0 = [[0.3, 0.7]]

[truth.p0]
kind = "separated"
markers = 4000
seed = 11

[grid]
M = [250, 1000, 4000]
N = [1]

[run]
replicates = 40
seed = 5
mode = "supervised"
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "fixtures"))
    out = Path(ap.parse_args().out)
    out.mkdir(parents=True, exist_ok=True)
    save(out / "kidd_like_k3.P", kidd_like_p(3, seed=0).T)
    save(out / "kidd_like_k2.P", kidd_like_p(2, seed=0).T)
    save(out / "hg00096_k3.Q", [HG00096_K3])
    save(out / "hg00096_k2.Q", [HG00096_K2])
    supervised_toy(out)
    uniqueness_fixtures(out)
    (out / "consistency.toml").write_text(CONSISTENCY_TOML)
    (out / "empty.toml").write_text("")
    save(out / "bad_rowsum.Q", [[0.3, 0.6], [0.5, 0.5]])
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
