import numpy as np
import pytest

from admixclt.io import (ConfigError, InputError, load_config, make_p0, read_genotypes, read_p,
                         read_q, spec_from_config, write_json, write_p, write_q)


def test_q_round_trip(tmp_path, rng):
    q = rng.dirichlet(np.ones(3), size=5).round(6)
    q[:, -1] = 1 - q[:, :-1].sum(axis=1)
    write_q(tmp_path / "a.Q", q)
    np.testing.assert_allclose(read_q(tmp_path / "a.Q"), q, atol=5e-7)
    assert (tmp_path / "a.Q").read_text().split()[0].count(".") == 1
    assert len((tmp_path / "a.Q").read_text().split()[0].split(".")[1]) == 6


def test_p_orientation(tmp_path):
    p = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    write_p(tmp_path / "a.P", p)
    lines = (tmp_path / "a.P").read_text().splitlines()
    assert len(lines) == 3 and lines[0] == "0.100000 0.400000"
    np.testing.assert_array_equal(read_p(tmp_path / "a.P"), p)


def test_q_renormalization(tmp_path):
    (tmp_path / "a.Q").write_text("0.50004 0.5\n0.2 0.8\n")
    q = read_q(tmp_path / "a.Q")
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
    (tmp_path / "b.Q").write_text("0.2 0.8\n0.3 0.6\n")
    with pytest.raises(InputError, match=r"b\.Q:2"):
        read_q(tmp_path / "b.Q")


@pytest.mark.parametrize("text,where", [
    ("0 1 2\n1 3 0\n", ":2:2"),
    ("0 1 x\n", ":1:3"),
    ("0 1\n0 1 2\n", ":2"),
])
def test_genotype_diagnostics(tmp_path, text, where):
    (tmp_path / "g.txt").write_text(text)
    with pytest.raises(InputError) as err:
        read_genotypes(tmp_path / "g.txt")
    assert where in str(err.value)


def test_genotypes_with_missing(tmp_path):
    (tmp_path / "g.txt").write_text("0 9 2\n1 1 9\n")
    g = read_genotypes(tmp_path / "g.txt")
    assert g.observed.sum() == 4


def test_values_outside_unit_interval(tmp_path):
    (tmp_path / "a.P").write_text("0.5 1.2\n")
    with pytest.raises(InputError, match=":1:2"):
        read_p(tmp_path / "a.P")
    with pytest.raises(InputError, match="cannot read"):
        read_p(tmp_path / "missing.P")
    (tmp_path / "e.P").write_text("\n\n")
    with pytest.raises(InputError, match="empty"):
        read_p(tmp_path / "e.P")


def test_json_schema_version(tmp_path):
    import json

    write_json(tmp_path / "s.json", {"x": np.float64(np.inf), "a": np.arange(2)})
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc == {"schema_version": 1, "x": "inf", "a": [0, 1]}


BASE = """
experiment = "consistency"
[model]
K = 2
[truth]
q0 = [[0.3, 0.7]]
[truth.p0]
kind = "uniform"
markers = 500
[grid]
M = [100, 400]
"""


def test_config_parses(tmp_path):
    (tmp_path / "c.toml").write_text(BASE + "[run]\nreplicates = 3\n")
    exp, spec, opts = spec_from_config(load_config(tmp_path / "c.toml"))
    assert exp == "consistency" and spec.replicates == 3 and spec.p0.shape == (2, 500)
    assert opts["law_samples"] == 100_000


@pytest.mark.parametrize("edit,path", [
    (lambda s: s.replace('"consistency"', '"nope"'), "experiment"),
    (lambda s: s.replace("K = 2", "K = 2.5"), "model.K"),
    (lambda s: s.replace('kind = "uniform"', 'kind = "weird"'), "truth.p0.kind"),
    (lambda s: s.replace("markers = 500", ""), "truth.p0.markers"),
    (lambda s: s.replace("M = [100, 400]", "M = [100, -4]"), "grid.M"),
    (lambda s: s.replace("q0 = [[0.3, 0.7]]", "q0 = [[0.3, 0.6]]"), "truth.q0"),
    (lambda s: s + "[run]\nmode = \"x\"\n", "run.mode"),
    (lambda s: s.replace("[grid]\nM = [100, 400]", ""), "grid"),
])
def test_config_errors_name_the_key(tmp_path, edit, path):
    (tmp_path / "c.toml").write_text(edit(BASE))
    with pytest.raises(ConfigError) as err:
        spec_from_config(load_config(tmp_path / "c.toml"))
    assert err.value.where == path


def test_empty_and_invalid_config(tmp_path):
    (tmp_path / "e.toml").write_text("")
    with pytest.raises(ConfigError, match="empty"):
        load_config(tmp_path / "e.toml")
    (tmp_path / "b.toml").write_text("x = [\n")
    with pytest.raises(ConfigError, match="TOML"):
        load_config(tmp_path / "b.toml")


def test_p0_generators(tmp_path):
    sep = make_p0({"kind": "separated", "markers": 100, "seed": 2}, 3)
    assert sep.shape == (3, 100)
    # each marker uses one low, one middle and one high level
    s = np.sort(sep, axis=0)
    assert np.all(s[2] - s[0] > 0.5)
    ex = make_p0({"kind": "explicit", "values": [[0.1, 0.2], [0.3, 0.4]]}, 2)
    np.testing.assert_array_equal(ex, [[0.1, 0.2], [0.3, 0.4]])
    write_p(tmp_path / "f.P", ex)
    np.testing.assert_array_equal(make_p0({"kind": "file", "path": "f.P"}, 2, base_dir=tmp_path), ex)
    with pytest.raises(ConfigError):
        make_p0({"kind": "explicit", "values": [[0.1, 0.2]]}, 2)
