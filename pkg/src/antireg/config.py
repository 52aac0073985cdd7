"""YAML run configuration: dataset list, grid section and output settings.

Example::

    output_dir: experiments
    parallelism: 1
    datasets:
      - name: airfoil
        task: regression
        source: dat
        path: data/airfoil_self_noise.dat
        n_features: 5
    grid:
      fractions: [0.01, 0.05, 0.10, 0.25, 0.50]
      seeds: [0, 1, 2, 3]
      lambda0: [1.0e-4, 3.0e-4, 1.0e-3, 3.0e-3, 1.0e-2]
      optimizers: [adam, sgdm]
      trust_radii: [5.0, 5.0]
"""

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from .harness import DatasetSpec, GridSpec, default_grid


@dataclass
class RunConfig:
    datasets: list
    grid: GridSpec
    output_dir: Optional[str] = None
    parallelism: int = 1
    extra: dict = field(default_factory=dict)


def _known(cls, section, where):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(section) - names)
    if unknown:
        raise ValueError(f"unknown keys in {where}: {unknown}")
    return dict(section)


def _seeds(value):
    # accept "range: N" as shorthand for 0..N-1
    if isinstance(value, dict) and set(value) == {"range"}:
        return list(range(int(value["range"])))
    return [int(s) for s in value]


def parse_config(mapping):
    """Build a :class:`RunConfig` from an already-parsed mapping."""
    if not isinstance(mapping, dict):
        raise ValueError("configuration must be a mapping")
    raw_ds = mapping.get("datasets")
    if not raw_ds:
        raise ValueError("configuration needs a non-empty 'datasets' list")
    datasets = [DatasetSpec(**_known(DatasetSpec, d, "datasets")) for d in raw_ds]
    tasks = {d.task for d in datasets}
    if len(tasks) != 1:
        raise ValueError("all datasets in one configuration must share a task")
    grid_raw = _known(GridSpec, mapping.get("grid") or {}, "grid")
    if "seeds" in grid_raw:
        grid_raw["seeds"] = _seeds(grid_raw["seeds"])
    grid = default_grid(tasks.pop(), **grid_raw)
    extra = {k: v for k, v in mapping.items() if k not in ("datasets", "grid", "output_dir",
                                                           "parallelism")}
    return RunConfig(datasets, grid, mapping.get("output_dir"), int(mapping.get("parallelism", 1)),
                     extra)


def load_config(path):
    text = Path(path).read_text()
    return parse_config(yaml.safe_load(text))
