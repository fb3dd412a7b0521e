"""
Run-directory writer: plot-ready CSVs with schema sidecars and the hashed
manifest.

All files of a run go through one ``RunWriter`` so the manifest lists them in
write order. Nothing written here carries wall-clock data, so identical runs
give identical hashes.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import integrator as it

MANIFEST_NAME = "manifest.json"

PLOT_SCHEMAS = {
    "energy": {
        "file": "energy.csv",
        "columns": {"t": "time", "V": "energy functional 1/2|u|^2 + nu int |u|_V^2 - int <u,f>"},
    },
    "dist_w": {
        "file": "dist_w.csv",
        "columns": {"N": "taper threshold", "dist_w": "weak-metric semidistance to the reference cloud"},
    },
}


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.generic,)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    return obj


class RunWriter:
    """Ordered writer for one run directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"{self.directory}: {exc.strerror or exc}") from exc
        self.files = []

    def path(self, name):
        return self.directory / name

    def register(self, path, kind):
        path = Path(path)
        self.files.append((path, kind))
        return path

    def _guard(self, path, func):
        try:
            func()
        except OSError as exc:
            raise OSError(f"{path}: {exc.strerror or exc}") from exc

    def write_json(self, name, obj, kind):
        path = self.path(name)
        self._guard(path, lambda: path.write_text(json.dumps(_plain(obj), indent=1, sort_keys=True)
                                                  + "\n"))
        return self.register(path, kind)

    def write_csv(self, name, header, rows, kind):
        rows = list(rows)
        if not rows:
            raise ValueError(f"refusing to write an empty series to {self.path(name)}")
        path = self.path(name)

        def write():
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([format(float(x), ".17g") for x in row])

        self._guard(path, write)
        return self.register(path, kind)

    def write_manifest(self):
        entries = [{"path": p.relative_to(self.directory).as_posix(), "sha256": sha256_file(p),
                    "kind": kind} for p, kind in self.files]
        path = self.path(MANIFEST_NAME)
        self._guard(path, lambda: path.write_text(json.dumps({"files": entries}, indent=1) + "\n"))
        return path


def emit_plot_data(data, writer):
    """Write plot-ready CSVs for a trajectory or a ``(N, dist_w)`` series.

    A ``Trajectory`` gives ``energy.csv`` (``t,V``); anything else is read as
    ``(N, dist_w)`` rows (or an object with ``rows()``) and gives
    ``dist_w.csv``. Each CSV gets a ``<name>.schema.json`` sidecar. Empty input
    raises ``ValueError`` before any file is created.
    """
    if not isinstance(writer, RunWriter):
        writer = RunWriter(writer)
    if isinstance(data, it.Trajectory):
        if len(data.times) == 0:
            raise ValueError("empty trajectory")
        key = "energy"
        rows = zip(data.times, it.energy_functional(data))
    else:
        rows = data.rows() if hasattr(data, "rows") else data
        key = "dist_w"
    rows = list(rows)
    if not rows:
        raise ValueError(f"empty {key} series; nothing written")
    schema = PLOT_SCHEMAS[key]
    header = list(schema["columns"])
    csv_path = writer.write_csv(schema["file"], header, rows, kind="plot")
    writer.write_json(f"{key}.schema.json",
                      {"file": schema["file"], "columns": [{"name": c, "description": d}
                                                           for c, d in schema["columns"].items()],
                       "format_version": 1}, kind="schema")
    return csv_path
