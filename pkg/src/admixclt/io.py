"""File formats and experiment configs.

Genotypes are whitespace-delimited N x M integers with 9 for missing. Q files
follow the ADMIXTURE .Q layout (N x K). P files follow the ADMIXTURE .P
layout, which is M x K on disk; every reader and writer here converts to and
from the K x M orientation used in memory.
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .model import MISSING, GenotypeMatrix
from .simulation import MODES, SimSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
RENORM_TOL = 1e-4


class InputError(ValueError):
    """Malformed input; ``where`` locates it (file, line, column or key path)."""

    def __init__(self, message, where=None):
        self.where = where
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(InputError):
    pass


def _read_rows(path, what):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read {what} file: {exc.strerror}", str(path)) from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        rows.append((lineno, line.split()))
    if not rows:
        raise InputError(f"empty {what} file", str(path))
    width = len(rows[0][1])
    for lineno, fields in rows:
        if len(fields) != width:
            raise InputError(f"expected {width} columns, found {len(fields)}", f"{path}:{lineno}")
    return path, rows


def read_genotypes(path) -> GenotypeMatrix:
    path, rows = _read_rows(path, "genotype")
    out = np.empty((len(rows), len(rows[0][1])), dtype=np.int64)
    for r, (lineno, fields) in enumerate(rows):
        for c, tok in enumerate(fields):
            try:
                v = int(tok)
            except ValueError:
                v = -1
            if v not in (0, 1, 2, MISSING):
                raise InputError(f"genotype must be 0, 1, 2 or {MISSING}, got {tok!r}",
                                 f"{path}:{lineno}:{c + 1}")
            out[r, c] = v
    return GenotypeMatrix(out)


def _read_unit_matrix(path, what):
    path, rows = _read_rows(path, what)
    out = np.empty((len(rows), len(rows[0][1])))
    for r, (lineno, fields) in enumerate(rows):
        for c, tok in enumerate(fields):
            try:
                v = float(tok)
            except ValueError:
                raise InputError(f"not a number: {tok!r}", f"{path}:{lineno}:{c + 1}") from None
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise InputError(f"value {tok} outside [0, 1]", f"{path}:{lineno}:{c + 1}")
            out[r, c] = v
    return path, rows, out


def read_q(path, renorm_tol: float = RENORM_TOL) -> np.ndarray:
    """N x K ancestry matrix; rows off the simplex by at most ``renorm_tol`` are rescaled."""
    path, rows, q = _read_unit_matrix(path, "Q")
    s = q.sum(axis=1)
    for r, (lineno, _) in enumerate(rows):
        if abs(s[r] - 1.0) > renorm_tol:
            raise InputError(f"row sums to {s[r]:.6g}, not 1", f"{path}:{lineno}")
    return q / s[:, None]


def read_p(path) -> np.ndarray:
    """Read an M x K .P file and return the K x M frequency matrix."""
    _, _, p = _read_unit_matrix(path, "P")
    return np.ascontiguousarray(p.T)


def _write_matrix(path, a):
    np.savetxt(path, np.asarray(a, dtype=float), fmt="%.6f", delimiter=" ")


def write_q(path, q):
    _write_matrix(path, np.atleast_2d(q))


def write_p(path, p):
    """Write a K x M frequency matrix in the M x K .P layout."""
    _write_matrix(path, np.asarray(p, dtype=float).T)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, payload: dict):
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(payload)
    Path(path).write_text(json.dumps(_jsonable(doc), indent=2) + "\n")


def write_csv(path, records, columns=None):
    columns = columns or (list(records[0]) if records else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for rec in records:
            w.writerow({k: _jsonable(v) for k, v in rec.items()})


# --- experiment configs -------------------------------------------------------

EXPERIMENT_NAMES = ("consistency", "clt_interior", "clt_boundary")


def load_config(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        cfg = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"invalid TOML: {exc}", str(path)) from None
    if not cfg:
        raise ConfigError("config is empty", str(path))
    return cfg


def _get(cfg, key, kind, where, default=...):
    if key not in cfg:
        if default is ...:
            raise ConfigError("missing required key", f"{where}.{key}" if where else key)
        return default
    val = cfg[key]
    ok = isinstance(val, kind) and not (kind in (int, (int, float)) and isinstance(val, bool))
    if not ok:
        name = kind.__name__ if isinstance(kind, type) else "number"
        raise ConfigError(f"expected {name}, got {type(val).__name__}",
                          f"{where}.{key}" if where else key)
    return val


def _table(cfg, key, where=""):
    val = _get(cfg, key, dict, where)
    return val, f"{where}.{key}" if where else key


def make_p0(table: dict, k: int, where: str = "truth.p0", base_dir=None) -> np.ndarray:
    """Frequency matrix from a ``[truth.p0]`` table.

    kinds: ``uniform`` (iid U(low, high)), ``separated`` (per marker a random
    permutation of K evenly spaced levels in [low, high] plus small jitter),
    ``explicit`` (``values``, K x M) and ``file`` (an M x K .P file).
    """
    kind = _get(table, "kind", str, where)
    if kind in ("uniform", "separated"):
        m = _get(table, "markers", int, where)
        if m < 1:
            raise ConfigError("must be positive", f"{where}.markers")
        low = float(_get(table, "low", (int, float), where, 0.1 if kind == "uniform" else 0.05))
        high = float(_get(table, "high", (int, float), where, 0.9 if kind == "uniform" else 0.95))
        if not 0.0 <= low < high <= 1.0:
            raise ConfigError("need 0 <= low < high <= 1", f"{where}.low")
        rng = np.random.default_rng(_get(table, "seed", int, where, 0))
        if kind == "uniform":
            return rng.uniform(low, high, size=(k, m))
        levels = np.linspace(low, high, k)
        jitter = 0.25 * (high - low) / max(k - 1, 1)
        p = np.stack([rng.permutation(levels) for _ in range(m)], axis=1)
        return np.clip(p + rng.uniform(-jitter, jitter, size=p.shape), low, high)
    if kind == "explicit":
        vals = _get(table, "values", list, where)
        try:
            p = np.asarray(vals, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError("must be a K x M numeric array", f"{where}.values") from None
        if p.ndim != 2 or p.shape[0] != k:
            raise ConfigError(f"must have shape K x M with K = {k}", f"{where}.values")
        if np.any(p < 0) or np.any(p > 1):
            raise ConfigError("values must lie in [0, 1]", f"{where}.values")
        return p
    if kind == "file":
        rel = Path(_get(table, "path", str, where))
        p = read_p(rel if rel.is_absolute() or base_dir is None else Path(base_dir) / rel)
        if p.shape[0] != k:
            raise ConfigError(f"P file has K = {p.shape[0]}, expected {k}", f"{where}.path")
        return p
    raise ConfigError(f"unknown kind {kind!r}", f"{where}.kind")


def spec_from_config(cfg: dict, base_dir=None):
    """Validate a simulate config; returns ``(experiment, SimSpec, options)``.

    Layout::

        experiment = "consistency"        # or clt_interior, clt_boundary
        [model]  K = 2
        [truth]  q0 = [[0.3, 0.7]]
        [truth.p0] kind = "uniform"; markers = 16000; seed = 1
        [grid]   M = [250, 1000]; N = [1]
        [run]    replicates = 100; seed = 0; mode = "supervised"; ...
    """
    exp = _get(cfg, "experiment", str, "")
    if exp not in EXPERIMENT_NAMES:
        raise ConfigError(f"must be one of {EXPERIMENT_NAMES}", "experiment")
    model, mw = _table(cfg, "model")
    k = _get(model, "K", int, mw)
    if k < 1:
        raise ConfigError("must be positive", f"{mw}.K")
    truth, tw = _table(cfg, "truth")
    q_raw = _get(truth, "q0", list, tw)
    try:
        q0 = np.atleast_2d(np.asarray(q_raw, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError("must be a list of ancestry rows", f"{tw}.q0") from None
    if q0.ndim != 2 or q0.shape[1] != k:
        raise ConfigError(f"rows must have K = {k} entries", f"{tw}.q0")
    if np.any(q0 < 0) or np.any(np.abs(q0.sum(axis=1) - 1) > 1e-6):
        raise ConfigError("rows must lie on the simplex", f"{tw}.q0")
    repeat = _get(truth, "repeat_q0", int, tw, 1)
    if repeat < 1:
        raise ConfigError("must be positive", f"{tw}.repeat_q0")
    q0 = np.tile(q0, (repeat, 1))
    p_table, pw = _table(truth, "p0", tw)
    p0 = make_p0(p_table, k, pw, base_dir)
    grid, gw = _table(cfg, "grid")
    m_grid = _get(grid, "M", list, gw)
    n_grid = _get(grid, "N", list, gw, [1])
    for key, g in (("M", m_grid), ("N", n_grid)):
        if not g or not all(isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in g):
            raise ConfigError("must be a non-empty list of positive integers", f"{gw}.{key}")
    run = cfg.get("run", {})
    if not isinstance(run, dict):
        raise ConfigError("expected table", "run")
    mode = _get(run, "mode", str, "run", "supervised")
    if mode not in MODES:
        raise ConfigError(f"must be one of {MODES}", "run.mode")
    kwargs = dict(
        replicates=_get(run, "replicates", int, "run", 100),
        seed=_get(run, "seed", int, "run", 0),
        mode=mode,
        n_free=_get(run, "n_free", int, "run", None),
        m_free=_get(run, "m_free", int, "run", None),
        starts=_get(run, "starts", int, "run", 1),
        max_iter=_get(run, "max_iter", int, "run", 10000),
        tol_ll=float(_get(run, "tol_ll", (int, float), "run", 1e-8)),
        eps_boundary=float(_get(run, "eps_boundary", (int, float), "run", 1e-4)),
    )
    options = {
        "law_samples": _get(run, "law_samples", int, "run", 100_000),
        "law_seed": _get(run, "law_seed", int, "run", None),
    }
    try:
        spec = SimSpec(q0, p0, m_grid, n_grid, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc), "run") from None
    return exp, spec, options
