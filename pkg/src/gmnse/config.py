"""
Experiment configuration (TOML, format version 1).

Every section and key is optional except ``seed`` for randomized
experiments; unknown keys are rejected. Example::

    version = 1
    seed = 7
    run_id = "demo"

    [grid]
    n = 24

    [params]
    nu = 1.0
    taper_N = 4.0          # inf for the unmodified system, 0 for Stokes
    dt = 0.01
    cfl = 1.0

    [[forcing]]            # f = sum z exp(i k.x) + c.c., projected
    k = [1, 0, 0]
    re = [0.0, 1.0, 0.0]
    im = [0.0, 0.0, 0.0]

    [taylor_green]         # alternative forcing, added to [[forcing]]
    amplitude = 6.0

    [initial]
    kind = "random"        # zero | random | rough | shear | snapshot
    norm = 2.0
    exponent = 1.0

    [schedule]
    t_end = 1.0
    stride = 10
    N_list = [1.0, 2.0, 4.0]

    [tolerances]
    trend = 0.1
"""

import math
import sys
from dataclasses import dataclass, field

from . import spectral as sp
from .errors import ConfigError
from .rhs import SimParams, forcing_from_entries, taylor_green_forcing

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

FORMAT_VERSION = 1
KINDS = ("simulate", "verify", "attractor", "semicontinuity", "gronwall", "rates")
RANDOMIZED = {"verify", "attractor", "semicontinuity", "rates"}

_SECTIONS = {
    "grid": {"n": 24},
    "params": {"nu": 1.0, "taper_N": math.inf, "dt": 0.01, "cfl": 1.0},
    "taylor_green": {"amplitude": 0.0},
    "initial": {"kind": "zero", "norm": 1.0, "exponent": 1.0, "amplitude": 1.0, "path": ""},
    "ensemble": {"count": 3, "seed": None, "radius": None, "exponent": 1.0},
    "schedule": {"t_end": 1.0, "stride": 1, "N_list": [1.0, 2.0, 4.0, 8.0, 16.0],
                 "t_list": [], "offsets": [0.0], "eps": 1e-3,
                 "N_ref": [32.0, 64.0, 128.0], "ref_seed_offset": 1},
    "gronwall": {"settings": [[1.0, 0.5, 1.0], [2.0, 0.5, 0.5], [0.5, 0.3, 1.0]],
                 "alpha": 0.4, "beta": 0.2, "scales": [0.25, 0.5, 1.0, 2.0, 4.0]},
    "rates": {"theta": [0.125, 0.25, 0.375], "eta": 0.1, "window": [1e-3, 1e-1],
              "norm": 1.0, "exponent": 1.5, "t_end": 0.1, "p": 1.5},
    "verify": {"taper_samples": 10_000, "tensor_pairs": 50, "identity_pairs": 20,
               "stokes_steps": 200},
    "tolerances": {"trend": 0.1, "trend_abs": 1e-6, "gronwall_rtol": 1e-4,
                   "smoothing_margin": 0.1, "derivative_margin": 0.1},
}
# per-experiment defaults layered over the shared ones
_KIND_DEFAULTS = {
    "simulate": {"schedule": {"stride": 10}},
    "verify": {"grid": {"n": 16}},
    "attractor": {"taylor_green": {"amplitude": 6.0}, "params": {"dt": 0.05},
                  "schedule": {"N_list": [1.0, 4.0, 16.0]}, "ensemble": {"count": 2}},
    "semicontinuity": {"taylor_green": {"amplitude": 6.0}, "params": {"dt": 0.05}},
    "gronwall": {},
    "rates": {"grid": {"n": 32}, "params": {"dt": 1e-3}, "schedule": {"t_end": 0.1}},
}
_TOP = {"version", "kind", "seed", "run_id", "forcing"} | set(_SECTIONS)


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = None
    run_id: str = "run"
    forcing: list = field(default_factory=list)
    sections: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.sections[section]

    def params(self):
        """``SimParams`` built from the grid, params and forcing sections."""
        grid = _grid(self["grid"]["n"])
        forcing = forcing_from_entries(self.forcing, grid)
        amp = self["taylor_green"]["amplitude"]
        if amp:
            forcing = forcing + taylor_green_forcing(grid, amp)
        pr = self["params"]
        return SimParams(grid, nu=pr["nu"], taper_N=pr["taper_N"], forcing=forcing,
                         dt=pr["dt"], cfl=pr["cfl"])

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("seed", f"a seed is required for '{self.kind}'")
        return self.seed


def _grid(n):
    try:
        return sp.make_grid(n)
    except ValueError as exc:
        raise ConfigError("grid.n", str(exc)) from None


def _check_type(key, value, default):
    if default is None and key.endswith(".seed"):
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(key, f"expected a nonnegative integer, got {value!r}")
        return value
    if default is None:
        if value is not None and not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return None if value is None else float(value)
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(key, f"unexpected boolean {value!r}")
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(key, f"expected a list, got {value!r}")
        return value
    return value


def from_dict(raw, kind, seed=None):
    """Validate a parsed document. ``seed`` (from the command line) overrides."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a table")
    unknown = set(raw) - _TOP
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    version = raw.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise ConfigError("version", f"unsupported format version {version!r}")
    file_kind = raw.get("kind", kind)
    if file_kind not in KINDS:
        raise ConfigError("kind", f"unknown experiment kind {file_kind!r}")
    if kind is not None and file_kind != kind:
        raise ConfigError("kind", f"config is for '{file_kind}', command is '{kind}'")

    sections = {}
    for name, defaults in _SECTIONS.items():
        defaults = {**defaults, **_KIND_DEFAULTS[file_kind].get(name, {})}
        given = raw.get(name, {})
        if not isinstance(given, dict):
            raise ConfigError(name, "expected a table")
        extra = set(given) - set(defaults)
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown key")
        merged = {}
        for key, default in defaults.items():
            if key in given:
                merged[key] = _check_type(f"{name}.{key}", given[key], default)
            else:
                merged[key] = list(default) if isinstance(default, list) else default
        sections[name] = merged

    for key, value in sections["tolerances"].items():
        if not value > 0:
            raise ConfigError(f"tolerances.{key}", f"must be positive, got {value}")
    sched = sections["schedule"]
    if not sched["t_end"] > 0:
        raise ConfigError("schedule.t_end", "must be positive")
    if sched["stride"] < 1:
        raise ConfigError("schedule.stride", "must be >= 1")
    if sections["initial"]["kind"] not in ("zero", "random", "rough", "shear", "snapshot"):
        raise ConfigError("initial.kind", f"unknown initial condition {sections['initial']['kind']!r}")
    if sections["ensemble"]["count"] < 1:
        raise ConfigError("ensemble.count", "must be >= 1")

    forcing = raw.get("forcing", [])
    if not isinstance(forcing, list) or not all(isinstance(e, dict) for e in forcing):
        raise ConfigError("forcing", "expected an array of tables")

    file_seed = raw.get("seed")
    if file_seed is not None and (not isinstance(file_seed, int) or isinstance(file_seed, bool)
                                  or not 0 <= file_seed < 2 ** 64):
        raise ConfigError("seed", f"expected an unsigned 64-bit integer, got {file_seed!r}")
    seed = file_seed if seed is None else seed
    run_id = raw.get("run_id", "run")
    if not isinstance(run_id, str) or not run_id or any(c in run_id for c in "/\\ "):
        raise ConfigError("run_id", f"invalid run id {run_id!r}")

    cfg = ExperimentConfig(file_kind, seed, run_id, forcing, sections)
    if file_kind in RANDOMIZED or (file_kind == "simulate"
                                   and sections["initial"]["kind"] in ("random", "rough")):
        cfg.require_seed()
    # build the parameters once so that bad values surface as config errors
    cfg.params()
    return cfg


def load(path, kind, seed=None):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError("--config", f"no such file: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("--config", f"{path}: {exc}") from None
    return from_dict(raw, kind, seed)


def default(kind, seed=None):
    """Built-in configuration used when no ``--config`` is given."""
    raw = {"seed": 0} if kind in RANDOMIZED else {}
    return from_dict(raw, kind, seed)
