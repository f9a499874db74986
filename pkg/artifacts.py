"""
Artifact Emission

CSV and JSON writers with a stable field order, shortest round-trip float
formatting and LF newlines, the GraphFunction codec, and the run manifest
and error record written next to every experiment's outputs.
"""

import csv
import hashlib
import json
import logging
import math
import platform
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from errors import EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC, StarwaveError
from graph_core import GraphFunction, build_star_grid

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VERSIONED_PACKAGES = ("numpy", "scipy")
ERROR_KINDS = {EXIT_CONFIG: "config", EXIT_NUMERIC: "numeric", EXIT_HYPOTHESIS: "hypothesis"}


@dataclass
class Table:
    """Rows under a fixed header; the header order is the CSV column order."""

    columns: tuple
    rows: list = field(default_factory=list)

    def append(self, row):
        if len(row) != len(self.columns):
            raise ValueError(f"Row has {len(row)} fields, header has {len(self.columns)}")
        self.rows.append(list(row))


def format_value(value):
    """Shortest round-trip text for CSV cells."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (complex, np.complexfloating)):
        raise ValueError(f"Complex value {value} must be split into real and imaginary columns")
    return str(value)


def to_jsonable(value):
    """Plain JSON types; complex numbers become [re, im] and non-finite floats their names."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, (complex, np.complexfloating)):
        return [to_jsonable(complex(value).real), to_jsonable(complex(value).imag)]
    if isinstance(value, GraphFunction):
        return graph_function_to_json(value)
    return value


def write_csv(path, table):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug("Wrote %s (%d rows)", path, len(table.rows))
    return path


def dumps_json(payload):
    return json.dumps(to_jsonable(payload), indent=2, allow_nan=False) + "\n"


def write_json(path, payload):
    """Write payload with `schema` as its first field, via a temporary file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"schema": SCHEMA_VERSION}
    document.update({k: v for k, v in payload.items() if k != "schema"})
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with tmp.open("w", newline="\n", encoding="utf-8") as handle:
            handle.write(dumps_json(document))
        tmp.replace(path)
    finally:
        if tmp.exists():
            tmp.unlink()
    logger.debug("Wrote %s", path)
    return path


def emit(artifact, path, format=None):
    """
    Write a Table as CSV or a dict as JSON.

    Args:
        artifact: Table or dict
        path: Target file
        format: "csv" or "json"; inferred from the suffix when None

    Returns:
        Path written
    """
    path = Path(path)
    format = format or path.suffix.lstrip(".")
    if format == "csv":
        if not isinstance(artifact, Table):
            raise ValueError("CSV output needs a Table")
        return write_csv(path, artifact)
    if format == "json":
        if not isinstance(artifact, dict):
            raise ValueError("JSON output needs a dict")
        return write_json(path, artifact)
    raise ValueError(f"Unsupported artifact format '{format}', expected csv or json")


def graph_function_to_json(u):
    """{n_edges, components, M, L, data} with data as [re, im] pairs, edge -> component -> sample."""
    return {
        "n_edges": u.grid.n_edges,
        "components": u.components,
        "M": u.grid.samples_per_edge,
        "L": u.grid.edge_length,
        "data": [[float(z.real), float(z.imag)] for z in u.data.reshape(-1)],
    }


def graph_function_from_json(payload):
    grid = build_star_grid(payload["n_edges"], payload["L"], payload["M"])
    pairs = np.asarray(payload["data"], dtype=float)
    expected = payload["n_edges"] * payload["components"] * payload["M"]
    if pairs.shape != (expected, 2):
        raise ValueError(f"GraphFunction payload holds {pairs.shape[0]} samples, expected {expected}")
    values = pairs[:, 0] + 1j * pairs[:, 1]
    return GraphFunction.from_flat(grid, payload["components"], values)


def graph_function_table(u):
    """One row per (edge, component, x, re, im)."""
    table = Table(("edge", "component", "x", "re", "im"))
    x = u.grid.x
    for j in range(u.grid.n_edges):
        for c in range(u.components):
            for xi, z in zip(x, u.data[j, c]):
                table.append((j, c, float(xi), float(z.real), float(z.imag)))
    return table


def config_hash(config):
    raw = json.dumps(to_jsonable(config), separators=(",", ":"), sort_keys=True).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()


def package_versions():
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_manifest(out_dir, experiment, config, artifacts, wall_time, warnings_seen=()):
    """manifest.json: experiment, resolved config with every tolerance used, its hash, versions, wall time."""
    return write_json(Path(out_dir) / "manifest.json", {
        "experiment": experiment,
        "config_hash": config_hash(config),
        "config": config,
        "artifacts": sorted(str(Path(a).name) for a in artifacts),
        "versions": package_versions(),
        "wall_time_s": round(float(wall_time), 3),
        "warnings": list(warnings_seen),
    })


def write_error(out_dir, exc, exit_code):
    """error.json = {schema, error, type, message, exit_code}."""
    return write_json(Path(out_dir) / "error.json", {
        "error": ERROR_KINDS.get(int(exit_code), "internal") if isinstance(exc, StarwaveError) else "internal",
        "type": type(exc).__name__,
        "message": str(exc),
        "exit_code": int(exit_code),
    })
