import csv
import json

import numpy as np
import pytest

from admixclt.cli import main
from admixclt.io import read_p, read_q


def run(*argv):
    return main([str(a) for a in argv])


def test_supervised_estimate_matches_golden(fixtures, tmp_path):
    rc = run("estimate", "--geno", fixtures / "toy.geno", "--p-file", fixtures / "toy.P",
             "--mode", "supervised", "--out", tmp_path)
    assert rc == 0
    golden = np.loadtxt(fixtures / "toy_golden.Q")
    # the file holds 6 decimals, so allow the rounding on top of 1e-6
    np.testing.assert_allclose(read_q(tmp_path / "result.Q"), golden, atol=1e-6 + 5e-7)
    np.testing.assert_allclose(read_p(tmp_path / "result.P"), read_p(fixtures / "toy.P"))
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["schema_version"] == 1 and fit["converged"] and fit["K"] == 2
    assert fit["boundary_flags_q"][2] == [True, True]


def test_starts_pick_highest_loglik(fixtures, tmp_path):
    lls = []
    for s in (1, 5):
        out = tmp_path / f"s{s}"
        assert run("estimate", "--geno", fixtures / "toy.geno", "--mode", "unsupervised", "--K", 2,
                   "--starts", s, "--seed", 3, "--max-iter", 3000, "--tol", 1e-6, "--out", out) == 0
        lls.append(json.loads((out / "fit.json").read_text())["loglik"])
        rows = list(csv.DictReader(open(out / "loglik.csv")))
        assert rows[0]["stage"] == "em"
    assert lls[1] >= lls[0] - 1e-12


def test_estimate_deterministic(fixtures, tmp_path):
    for d in ("a", "b"):
        run("estimate", "--geno", fixtures / "toy.geno", "--mode", "unsupervised", "--K", 2,
            "--seed", 7, "--max-iter", 200, "--out", tmp_path / d)
    assert (tmp_path / "a" / "result.Q").read_text() == (tmp_path / "b" / "result.Q").read_text()


def test_semi_mode(fixtures, tmp_path):
    golden = tmp_path / "known.Q"
    np.savetxt(golden, np.loadtxt(fixtures / "toy_golden.Q")[2:], fmt="%.6f")
    rc = run("estimate", "--geno", fixtures / "toy.geno", "--mode", "semi", "--q-known", golden,
             "--max-iter", 5000, "--out", tmp_path / "o")
    assert rc in (0, 3)
    q = read_q(tmp_path / "o" / "result.Q")
    np.testing.assert_allclose(q[2:], np.loadtxt(golden), atol=1e-6)


def test_nonconvergence_exit_3(fixtures, tmp_path):
    rc = run("estimate", "--geno", fixtures / "toy.geno", "--mode", "unsupervised", "--K", 2,
             "--max-iter", 2, "--out", tmp_path)
    assert rc == 3
    assert (tmp_path / "result.Q").exists()
    assert json.loads((tmp_path / "fit.json").read_text())["converged"] is False


@pytest.mark.parametrize("extra", [
    ["--mode", "supervised"],
    ["--mode", "unsupervised"],
    ["--mode", "semi"],
    ["--mode", "supervised", "--p-file", "{f}/kidd_like_k2.P"],
    ["--mode", "supervised", "--p-file", "{f}/toy.P", "--K", "3"],
    ["--mode", "bogus"],
])
def test_estimate_input_errors(fixtures, tmp_path, extra):
    extra = [e.format(f=fixtures) for e in extra]
    assert run("estimate", "--geno", fixtures / "toy.geno", "--out", tmp_path, *extra) == 2


def test_bad_genotype_file_exit_2(tmp_path, fixtures, caplog):
    (tmp_path / "g.txt").write_text("0 1\n1 5\n")
    assert run("estimate", "--geno", tmp_path / "g.txt", "--p-file", fixtures / "toy.P",
               "--out", tmp_path) == 2
    assert "g.txt:2:2" in caplog.text


def test_q_row_sum_exit_2(fixtures, tmp_path):
    assert run("uncertainty", "--q-file", fixtures / "bad_rowsum.Q", "--p-file",
               fixtures / "kidd_like_k2.P", "--out", tmp_path) == 2
    assert run("check", "--q-file", fixtures / "bad_rowsum.Q", "--p-file",
               fixtures / "kidd_like_k2.P") == 2


def test_uncertainty_boundary_k2(fixtures, tmp_path):
    rc = run("uncertainty", "--q-file", fixtures / "hg00096_k2.Q", "--p-file",
             fixtures / "kidd_like_k2.P", "--samples", 20000, "--seed", 1, "--out", tmp_path)
    assert rc == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["law"] == "projected-gaussian" and s["M"] == 55
    assert abs(s["atoms"]["1"] - 0.5) < 0.02
    assert s["relabeling"]["eliminated_population"] == 2
    # the lower quantile sits on the atom, so the interval starts at the estimate
    assert s["intervals_95"]["1"][0] == pytest.approx(1e-5)
    rows = list(csv.DictReader(open(tmp_path / "density.csv")))
    assert list(rows[0]) == ["coord", "bin_left", "bin_right", "mass"]
    mass1 = sum(float(r["mass"]) for r in rows if r["coord"] == "1")
    assert mass1 + s["atoms"]["1"] == pytest.approx(1.0)


def test_uncertainty_interior_is_gaussian(fixtures, tmp_path):
    (tmp_path / "q.Q").write_text("0.300000 0.700000\n")
    assert run("uncertainty", "--q-file", tmp_path / "q.Q", "--p-file",
               fixtures / "kidd_like_k2.P", "--out", tmp_path) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["law"] == "gaussian" and set(s["atoms"].values()) == {0.0}
    se = np.sqrt(np.array(s["covariance"])[0, 0])
    lo, hi = s["intervals_95"]["1"]
    assert hi - lo == pytest.approx(2 * 1.959964 * se, rel=1e-5)


def test_uncertainty_deterministic(fixtures, tmp_path):
    for d in ("a", "b"):
        run("uncertainty", "--q-file", fixtures / "hg00096_k3.Q", "--p-file",
            fixtures / "kidd_like_k3.P", "--samples", 5000, "--seed", 9, "--out", tmp_path / d)
    assert (tmp_path / "a" / "density.csv").read_bytes() == (tmp_path / "b" / "density.csv").read_bytes()


def test_uncertainty_with_genotypes_refits(fixtures, tmp_path):
    rc = run("uncertainty", "--q-file", fixtures / "toy_golden.Q", "--p-file", fixtures / "toy.P",
             "--geno", fixtures / "toy.geno", "--individual", 1, "--samples", 1000,
             "--out", tmp_path)
    assert rc == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["estimate_source"] == "refit-from-genotypes"
    assert s["estimate"][0] == pytest.approx(np.loadtxt(fixtures / "toy_golden.Q")[0, 0], abs=1e-6)


def test_uncertainty_singular_exit_4(tmp_path, capsys):
    (tmp_path / "q.Q").write_text("0.3 0.3 0.4\n")
    (tmp_path / "p.P").write_text("0.2 0.6 0.4\n0.5 0.1 0.3\n0.7 0.3 0.5\n")
    assert run("uncertainty", "--q-file", tmp_path / "q.Q", "--p-file", tmp_path / "p.P",
               "--out", tmp_path) == 4
    assert "offending_blocks" in capsys.readouterr().out


def test_check_reports(fixtures, capsys):
    assert run("check", "--q-file", fixtures / "collinear.Q", "--p-file", fixtures / "collinear.P") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["uniqueness"]["verdict"] == "inconclusive"
    d = np.array(rep["degenerate_directions"][0])
    np.testing.assert_allclose(d / d[2], [-0.5, -0.5, 1.0], atol=1e-8)
    assert rep["condition_au"]["degenerate"]
    assert run("check", "--q-file", fixtures / "unique_k2.Q", "--p-file", fixtures / "unique_k2.P") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["uniqueness"]["verdict"] == "unique-up-to-permutation"
    assert rep["assumption_star"]["count"] == 4 and "k2_extremes" in rep


def test_simulate_consistency_fixture(fixtures, tmp_path):
    assert run("simulate", "--config", fixtures / "consistency.toml", "--out", tmp_path,
               "--threads", 1) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert abs(s["loglog_slope"] + 0.5) < 0.1
    assert (tmp_path / "experiment.csv").read_text().startswith("M,N,replicate")


def test_simulate_empty_config_exit_2(fixtures, tmp_path, caplog):
    assert run("simulate", "--config", fixtures / "empty.toml", "--out", tmp_path) == 2
    (tmp_path / "c.toml").write_text('experiment = "consistency"\n[model]\nK = "two"\n')
    assert run("simulate", "--config", tmp_path / "c.toml", "--out", tmp_path) == 2
    assert "model.K" in caplog.text
