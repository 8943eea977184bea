"""CSV and JSON input/output with byte-stable formatting."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .models import GaussianConjugateModel, LogisticRegressionModel

__all__ = ["format_value", "write_csv", "read_csv", "write_json", "config_hash", "save_dataset", "load_dataset"]


def format_value(v):
    """Shortest round-trip text for floats, plain text otherwise."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return str(v)


def write_csv(path, rows, columns=None):
    """Write dict rows with a header; ``columns`` fixes the column order."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([format_value(row.get(c)) for c in columns])
    return path


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def canonical_json(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config):
    """SHA-256 of the canonical JSON form of ``config`` (first 16 hex digits)."""
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n")
    return path


def save_dataset(model, path, seed=None):
    """Write ``model``'s data as CSV plus a ``.json`` metadata sidecar."""
    path = Path(path)
    if isinstance(model, GaussianConjugateModel):
        rows = ({"y": float(v)} for v in model.y)
        write_csv(path, rows, ["y"])
        meta = {"model": "gaussian", "sigma_theta_sq": model.sigma_theta_sq, "sigma_y_sq": model.sigma_y_sq,
                "N": model.n_data, "d": 1}
    elif isinstance(model, LogisticRegressionModel):
        cols = [f"x{j + 1}" for j in range(model.dim)] + ["y"]
        rows = ({**{f"x{j + 1}": float(v) for j, v in enumerate(x)}, "y": int(t)}
                for x, t in zip(model.X, model.y))
        write_csv(path, rows, cols)
        meta = {"model": "logistic", "prior_variance": model.prior_variance, "N": model.n_data, "d": model.dim}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    meta["seed"] = seed if seed is not None else getattr(model, "seed", None)
    write_json(path.with_suffix(".json"), meta)
    return path


def load_dataset(path):
    """Inverse of :func:`save_dataset`."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=np.float64)
    if meta["model"] == "gaussian":
        return GaussianConjugateModel(np.atleast_1d(data["y"]), meta["sigma_theta_sq"], meta["sigma_y_sq"])
    d = int(meta["d"])
    X = np.column_stack([np.atleast_1d(data[f"x{j + 1}"]) for j in range(d)])
    return LogisticRegressionModel(X, np.atleast_1d(data["y"]), meta["prior_variance"])
