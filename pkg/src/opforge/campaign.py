"""Data generation: LHS design, simulation campaign, filtering, scaling, splits, I/O."""

from __future__ import annotations

import json
import logging
import math
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .heat_source import BOUNDS, PARAM_NAMES, ProcessParams
from .thermal import GridSpec, MaterialProps, SimulationRecord, run_simulation

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DATASET_FORMAT = "opforge-dataset"
QOI_NAMES = ("v_bead", "t_mp")


class CampaignError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def derive_seed(seed, stage):
    """Stable per-stage seed split from one root seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(stage.encode()),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- sampling ---------------------------------------------------------------------

def lhs_unit(n, d, rng):
    """``n`` points in [0,1)^d with one point per 1/n stratum in every column."""
    out = np.empty((n, d))
    for j in range(d):
        out[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return out


@dataclass
class LhsDesign:
    n_samples: int
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))
    seed: int = 0


def _check_bounds(bounds):
    for name in PARAM_NAMES:
        if name not in bounds:
            raise ValueError(f"missing bounds for {name}")
        lo, hi = bounds[name]
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError(f"invalid bounds for {name}: ({lo}, {hi})")


def lhs_sample(design):
    if design.n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    _check_bounds(design.bounds)
    unit = lhs_unit(design.n_samples, len(PARAM_NAMES), np.random.default_rng(design.seed))
    lo = np.array([design.bounds[n][0] for n in PARAM_NAMES])
    hi = np.array([design.bounds[n][1] for n in PARAM_NAMES])
    return [ProcessParams.from_array(row) for row in lo + unit * (hi - lo)]


# -- campaign --------------------------------------------------------------------

def _simulate(args):
    pp, mat, grid = args
    return run_simulation(pp, mat, grid)


def run_campaign(designs, mat=None, grid=None, worker_count=1):
    """One record per design point, in design order whatever the scheduling."""
    mat = mat or MaterialProps()
    grid = grid or GridSpec()
    jobs = [(pp, mat, grid) for pp in designs]
    if not jobs:
        return []
    records = []
    if worker_count <= 1:
        for i, job in enumerate(jobs):
            try:
                records.append(_simulate(job))
            except Exception as exc:
                raise CampaignError(f"sample {i} failed: {exc}") from exc
        return records
    with ProcessPoolExecutor(max_workers=worker_count) as pool:
        futures = [pool.submit(_simulate, job) for job in jobs]
        for i, fut in enumerate(futures):
            try:
                records.append(fut.result())
            except Exception as exc:
                raise CampaignError(f"sample {i} failed: {exc}") from exc
    return records


def filter_non_melting(records):
    kept = [r for r in records if r.melted]
    removed = len(records) - len(kept)
    if records and not kept:
        log.error("no sample reached the melting point; all %d records removed", removed)
    return kept, removed


# -- scaling ---------------------------------------------------------------------

@dataclass
class Scaler:
    """Per-channel standardization (population std)."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values):
        values = np.asarray(values, dtype=float)
        values = values.reshape(-1, values.shape[-1])
        if values.shape[0] < 2:
            raise ValueError("need at least two samples to fit a scaler")
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        if np.any(std <= 0):
            raise ValueError(f"zero-variance channel(s): {np.flatnonzero(std <= 0).tolist()}")
        return cls(mean, std)

    def transform(self, values):
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def fit_scaler(records, series=False):
    """Scaler over the two QoIs: scalar maxima, or series pooled over time."""
    if series:
        values = np.stack([np.stack([r.v_bead, r.t_mp], axis=-1) for r in records])
    else:
        values = np.array([[r.v_bead_max, r.t_mp_max] for r in records])
    return Scaler.fit(values)


# -- splitting -------------------------------------------------------------------

def split_sizes(n, ratios):
    """Floor every split but the last; the last takes the remainder."""
    sizes = [math.floor(n * r + 1e-9) for r in ratios[:-1]]
    sizes.append(n - sum(sizes))
    return sizes


def split_indices(n, ratios=(0.8, 0.1, 0.1), seed=0):
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    sizes = split_sizes(n, ratios)
    if min(sizes) < 1:
        raise ValueError(f"{n} records cannot fill three non-empty splits with ratios {ratios}")
    order = np.random.default_rng(seed).permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return {
        "train": sorted(order[:a].tolist()),
        "val": sorted(order[a:b].tolist()),
        "test": sorted(order[b:].tolist()),
    }


@dataclass
class Dataset:
    records: list
    split: dict
    scalar_scaler: Scaler
    series_scaler: Scaler
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))
    grid: GridSpec = field(default_factory=GridSpec)
    material: MaterialProps = field(default_factory=MaterialProps)
    removed: int = 0
    schema_version: int = SCHEMA_VERSION

    def __len__(self):
        return len(self.records)

    @property
    def n_steps(self):
        return len(self.records[0].v_bead)

    def indices(self, part):
        return np.asarray(self.split[part], dtype=int)

    def inputs(self, part=None):
        """Min-max scaled process parameters, shape (n, 5)."""
        return scale_inputs(self._params(part), self.bounds)

    def _params(self, part):
        recs = self._subset(part)
        return np.array([r.params.as_array() for r in recs])

    def _subset(self, part):
        if part is None:
            return self.records
        return [self.records[i] for i in self.split[part]]

    def scalar_targets(self, part=None):
        return np.array([[r.v_bead_max, r.t_mp_max] for r in self._subset(part)])

    def series_targets(self, part=None):
        """Shape (n, steps, 2)."""
        return np.stack([np.stack([r.v_bead, r.t_mp], axis=-1) for r in self._subset(part)])

    def time_coords(self):
        return time_coords(self.n_steps)


def time_coords(n_steps):
    """Normalized time of each output step, ``(i+1)/n``."""
    return np.arange(1, n_steps + 1) / n_steps


def scale_inputs(params, bounds=None):
    bounds = bounds or BOUNDS
    params = np.asarray(params, dtype=float)
    lo = np.array([bounds[n][0] for n in PARAM_NAMES])
    hi = np.array([bounds[n][1] for n in PARAM_NAMES])
    return (params - lo) / (hi - lo)


def unscale_inputs(scaled, bounds=None):
    bounds = bounds or BOUNDS
    lo = np.array([bounds[n][0] for n in PARAM_NAMES])
    hi = np.array([bounds[n][1] for n in PARAM_NAMES])
    return lo + np.asarray(scaled, dtype=float) * (hi - lo)


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed=0, bounds=None, grid=None,
                  material=None, removed=0):
    """Shuffle-split records and fit both scalers on the training part only."""
    split = split_indices(len(records), ratios, seed)
    train = [records[i] for i in split["train"]]
    return Dataset(
        records=list(records),
        split=split,
        scalar_scaler=fit_scaler(train),
        series_scaler=fit_scaler(train, series=True),
        bounds=dict(bounds or BOUNDS),
        grid=grid or GridSpec(),
        material=material or MaterialProps(),
        removed=removed,
    )


# -- persistence -----------------------------------------------------------------

def _dumps(obj):
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def save_dataset(ds, path):
    """JSON-lines file: one header line, then one line per record.

    Floats are written with Python's shortest round-trip repr, so loading
    reproduces every value bit for bit.
    """
    header = {
        "format": DATASET_FORMAT,
        "schema_version": ds.schema_version,
        "bounds": {k: list(v) for k, v in ds.bounds.items()},
        "grid": asdict(ds.grid),
        "material": asdict(ds.material),
        "scalers": {"scalar": ds.scalar_scaler.to_dict(), "series": ds.series_scaler.to_dict()},
        "split": ds.split,
        "removed": ds.removed,
        "n_records": len(ds.records),
        "qois": list(QOI_NAMES),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for i, r in enumerate(ds.records):
            fh.write(_dumps({
                "index": i,
                "params": r.params.as_dict(),
                "melted": r.melted,
                "time_grid": r.time_grid.tolist(),
                "v_bead": r.v_bead.tolist(),
                "t_mp": r.t_mp.tolist(),
            }) + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"{path} is not a dataset file")
        if header["schema_version"] != SCHEMA_VERSION:
            raise ValueError(f"unsupported dataset schema {header['schema_version']}")
        records = []
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(SimulationRecord(
                params=ProcessParams(**d["params"]),
                time_grid=np.array(d["time_grid"], dtype=float),
                v_bead=np.array(d["v_bead"], dtype=float),
                t_mp=np.array(d["t_mp"], dtype=float),
                melted=bool(d["melted"]),
            ))
    if len(records) != header["n_records"]:
        raise ValueError(f"{path}: expected {header['n_records']} records, found {len(records)}")
    return Dataset(
        records=records,
        split={k: list(v) for k, v in header["split"].items()},
        scalar_scaler=Scaler.from_dict(header["scalers"]["scalar"]),
        series_scaler=Scaler.from_dict(header["scalers"]["series"]),
        bounds={k: tuple(v) for k, v in header["bounds"].items()},
        grid=GridSpec(**header["grid"]),
        material=MaterialProps(**header["material"]),
        removed=header["removed"],
        schema_version=header["schema_version"],
    )


# -- configuration ---------------------------------------------------------------

_GRID_KEYS = {f.name for f in fields(GridSpec)}
_MAT_KEYS = {f.name for f in fields(MaterialProps)}


@dataclass
class CampaignConfig:
    n_samples: int = 500
    seed: int = 0
    bounds: dict = field(default_factory=lambda: dict(BOUNDS))
    grid: GridSpec = field(default_factory=GridSpec)
    material: MaterialProps = field(default_factory=MaterialProps)
    ratios: tuple = (0.8, 0.1, 0.1)

    @classmethod
    def from_mapping(cls, data):
        """Build from a flat mapping.

        Recognized keys: ``n_samples``, ``seed``, ``bounds_<param>: [lo, hi]``,
        ``train_ratio``/``val_ratio``/``test_ratio``, and any GridSpec or
        MaterialProps field name.
        """
        data = dict(data or {})
        bounds = dict(BOUNDS)
        grid_kw, mat_kw = {}, {}
        ratios = [0.8, 0.1, 0.1]
        out = {}
        for key, value in data.items():
            if key in ("n_samples", "seed"):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigError(f"{key} must be an integer, got {value!r}")
                out[key] = value
            elif key.startswith("bounds_") and key[7:] in PARAM_NAMES:
                if not (isinstance(value, (list, tuple)) and len(value) == 2):
                    raise ConfigError(f"{key} must be a [low, high] pair")
                bounds[key[7:]] = (float(value[0]), float(value[1]))
            elif key in ("train_ratio", "val_ratio", "test_ratio"):
                ratios[("train_ratio", "val_ratio", "test_ratio").index(key)] = float(value)
            elif key in _GRID_KEYS:
                grid_kw[key] = value
            elif key in _MAT_KEYS:
                mat_kw[key] = float(value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            _check_bounds(bounds)
            cfg = cls(bounds=bounds, grid=GridSpec(**grid_kw), material=MaterialProps(**mat_kw),
                      ratios=tuple(ratios), **out)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if cfg.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        return cfg

    @classmethod
    def from_file(cls, path):
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a flat key: value mapping")
        return cls.from_mapping(data)


def default_workers():
    env = os.environ.get("OPFORGE_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer OPFORGE_WORKERS=%r", env)
    return 1


def generate_dataset(cfg, workers=1):
    """LHS -> campaign -> non-melting filter -> split; returns the Dataset."""
    design = LhsDesign(cfg.n_samples, cfg.bounds, derive_seed(cfg.seed, "lhs"))
    records = run_campaign(lhs_sample(design), cfg.material, cfg.grid, workers)
    kept, removed = filter_non_melting(records)
    return split_dataset(kept, cfg.ratios, derive_seed(cfg.seed, "split"), cfg.bounds,
                         cfg.grid, cfg.material, removed)
