"""Shared converter fixtures: a cache seeded with fabricated subject files."""

from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))

from fabricate import fabricate_001_2014, fabricate_002_2014, fabricate_004_2014


@pytest.fixture(scope="session")
def bnci_cache(tmp_path_factory):
    """Cache directory seeded with one fabricated subject per dataset."""
    root = tmp_path_factory.mktemp("bnci-cache")
    d001 = root / "001-2014"
    d002 = root / "002-2014"
    d004 = root / "004-2014"
    for d in (d001, d002, d004):
        d.mkdir()
    fabricate_001_2014(d001 / "A01T.mat")
    fabricate_002_2014(d002 / "S01T.mat", n_runs=5)
    fabricate_002_2014(d002 / "S01E.mat", n_runs=3)
    fabricate_004_2014(d004 / "B04T.mat", trials_per_run=60)
    fabricate_004_2014(d004 / "B04E.mat", trials_per_run=30, n_runs=2)
    return root
