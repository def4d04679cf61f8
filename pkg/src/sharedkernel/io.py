"""CSV and JSON persistence.

Datasets are site-by-subject matrices: a header row ``site_id, g_1, ..., g_N``
of 0/1 group labels, then one row per site. Lines starting with ``#`` are
metadata and are skipped on input. Floats are written with 17 significant
digits, which round-trips every double exactly.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .model import DataError, KernelDictionary, ScreeningDataset


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    return str(value)


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def metadata(command: str, config: dict) -> dict:
    """Metadata block echoed into every output file."""
    return {"program": "sharedkernel", "version": __version__, "command": command,
            "seed": config.get("seed"), "config_sha256": config_hash(config), "config": config}


def _header_lines(meta: dict) -> str:
    lines = [f"# {key}: {json.dumps(meta[key], sort_keys=True)}" for key in
             ("program", "version", "command", "seed", "config_sha256", "config")]
    return "\n".join(lines) + "\n"


def _reject(site, column, message):
    raise DataError(f"site {site!r}, column {column}: {message}")


def parse_csv_text(text: str, source: str = "<input>") -> ScreeningDataset:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    rows = list(csv.reader(lines))
    if not rows:
        raise DataError(f"{source}: missing header row")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise DataError(f"{source}: header needs a site-id column and at least one group label")
    group = []
    for j, cell in enumerate(header[1:], start=2):
        if cell.strip() not in ("0", "1"):
            raise DataError(f"{source}: header column {j}: group label {cell!r} is not 0 or 1")
        group.append(int(cell.strip()))
    group = np.asarray(group, dtype=np.int64)
    if not body:
        raise DataError(f"{source}: no sites")
    if np.unique(group).size < 2:
        raise DataError(f"{source}: all subjects are in one group; both groups are required")
    N = group.size
    values = np.empty((len(body), N))
    ids = []
    for i, row in enumerate(body):
        site = row[0].strip() if row else ""
        if not site:
            raise DataError(f"{source}: data row {i + 1} has no site id")
        if len(row) - 1 != N:
            raise DataError(f"{source}: site {site!r} has {len(row) - 1} values, header has {N}")
        for j, cell in enumerate(row[1:]):
            col = j + 2
            if not cell.strip():
                _reject(site, col, "missing value")
            try:
                v = float(cell)
            except ValueError:
                _reject(site, col, f"cannot parse {cell!r} as a number")
            if math.isnan(v):
                _reject(site, col, "value is NaN")
            if not 0.0 <= v <= 1.0:
                _reject(site, col, f"value {cell.strip()} outside [0, 1]")
            values[i, j] = v
        ids.append(site)
    if len(set(ids)) != len(ids):
        raise DataError(f"{source}: duplicate site ids")
    return ScreeningDataset(values, group, tuple(ids))


def ingest_csv(path) -> ScreeningDataset:
    """Read a dataset; errors name the site and the 1-based file column."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_csv_text(text, str(path))


def dataset_csv_text(dataset: ScreeningDataset, meta: dict | None = None) -> str:
    buf = _io.StringIO()
    if meta is not None:
        buf.write(_header_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["site_id", *map(str, dataset.group)])
    for site, row in zip(dataset.site_ids, dataset.values):
        w.writerow([site, *map(fmt, row)])
    return buf.getvalue()


def write_dataset_csv(path, dataset: ScreeningDataset, meta: dict | None = None) -> None:
    Path(path).write_text(dataset_csv_text(dataset, meta))


def write_table_csv(path, rows, columns, meta: dict | None = None) -> None:
    """Write dict rows in ``columns`` order, floats at 17 significant digits."""
    buf = _io.StringIO()
    if meta is not None:
        buf.write(_header_lines(meta))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def read_table_csv(path) -> list:
    """Rows of a table written by :func:`write_table_csv`, as strings."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def write_json(path, doc: dict) -> None:
    # json emits the shortest repr of each float, which is exact on reload
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_dictionary(path, dictionary: KernelDictionary, meta: dict | None = None) -> None:
    doc = dictionary.to_dict()
    if meta is not None:
        doc["meta"] = {**doc.get("meta", {}), **meta}
    write_json(path, doc)


def load_dictionary(path) -> KernelDictionary:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load dictionary {path}: {exc}") from exc
    return KernelDictionary.from_dict(doc)
