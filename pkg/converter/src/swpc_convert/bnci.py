"""Reader for the BNCI-Horizon .mat run layout.

Each subject file holds a struct array ``data`` with one element per
recording run. A run carries X (samples x channels), trial (1-based sample
index of each trial marker), y (cue class codes, aligned with trial), fs,
and a few demographic fields this tool ignores. Some files start with
baseline runs that contain no trials; those are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import loadmat


@dataclass
class Run:
    """One recording run: signal block plus its trial markers."""

    x: np.ndarray  # [n_samples, n_cols] float64, source units
    trial_starts: np.ndarray  # 0-based sample index per trial marker
    labels: np.ndarray  # cue code per trial marker
    fs: float

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]


def _field(run, name: str):
    # loadmat yields mat_struct under struct_as_record=False; fabricated
    # files written from dicts come back the same way, but stay tolerant.
    if hasattr(run, name):
        return getattr(run, name)
    if isinstance(run, dict):
        return run[name]
    raise KeyError(f"run struct has no field {name!r}")


def load_runs(path) -> list[Run]:
    """Parse every run with at least one trial marker, in file order."""
    mat = loadmat(path, squeeze_me=True, struct_as_record=False)
    if "data" not in mat:
        raise ValueError(f"{path}: no 'data' struct array")
    runs = []
    # squeeze_me collapses single-run files to a bare struct
    for raw in np.atleast_1d(mat["data"]):
        trial = np.atleast_1d(np.asarray(_field(raw, "trial"))).ravel()
        if trial.size == 0:
            continue
        x = np.asarray(_field(raw, "X"), dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"{path}: run signal must be 2-D, got {x.shape}")
        y = np.atleast_1d(np.asarray(_field(raw, "y"))).ravel()
        if y.size != trial.size:
            raise ValueError(
                f"{path}: {trial.size} trial markers but {y.size} labels"
            )
        runs.append(
            Run(
                x=x,
                trial_starts=trial.astype(np.int64) - 1,  # MATLAB is 1-based
                labels=y.astype(np.int64),
                fs=float(_field(raw, "fs")),
            )
        )
    if not runs:
        raise ValueError(f"{path}: no runs with trial markers")
    return runs
