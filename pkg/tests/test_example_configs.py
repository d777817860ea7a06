"""The shipped example configs must stay loadable as the schema evolves."""

from pathlib import Path

import pytest

from rfim_lab.config import load_config, load_grid

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"
EXPERIMENTS = sorted(
    p for p in CONFIG_DIR.glob("*.toml") if not p.stem.startswith("grid")
)


def test_examples_present():
    assert len(EXPERIMENTS) >= 4
    assert (CONFIG_DIR / "grid_theta.toml").exists()


@pytest.mark.parametrize("path", EXPERIMENTS, ids=lambda p: p.stem)
def test_experiment_config_loads(path):
    cfg = load_config(path, env={})
    assert cfg.tag == path.stem
    assert cfg.ensemble.n >= 2


def test_grid_file_loads():
    points = load_grid(CONFIG_DIR / "grid_theta.toml")
    assert [p["theta"] for p in points] == [0.1, 0.2, 0.3, 0.4, 0.5]
