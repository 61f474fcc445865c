from pathlib import Path

import numpy as np
import pytest

from agtrainer.model import TrainerConfig
from agtrainer.tiles import PLANE_NAMES, Tile, write_tile

GOLDEN_DIR = Path(__file__).parent / "golden"

# normalizer fitted once on a zero-inflated excess-loss population
ETA, MU, SIGMA = 1.25, 0.7731235155443092, 0.41102317036517544


def normalize_db(m_db):
    n = np.arcsinh(10.0 ** (np.asarray(m_db, dtype=np.float64) / 10.0) / ETA)
    return (n - MU) / SIGMA


def smooth_field(rng, n=32, scale=6.0):
    """Blobby [0,1] field without scipy: cosine-basis mixture."""
    gx, gy = np.meshgrid(np.linspace(0, 1, n), np.linspace(0, 1, n))
    f = np.zeros((n, n))
    for _ in range(6):
        fx, fy = rng.uniform(0.5, scale, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        f += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * fx * gx + ph[0]) \
            * np.cos(2 * np.pi * fy * gy + ph[1])
    f -= f.min()
    return f / f.max()


def synthetic_tile(rng, mask_frac=0.05, n=32, loss_db=None, geometry=(40.0, 120.0, 850.0)):
    """Tile whose excess loss is a smooth function of the DEM plane."""
    dem = smooth_field(rng, n)
    if loss_db is None:
        loss_db = 35.0 * np.clip(dem - 0.45, 0.0, None)  # zero-inflated
    mask = (rng.random((n, n)) < mask_frac).astype(np.float32)
    obs_z = (normalize_db(loss_db) * mask).astype(np.float32)
    planes = np.stack([
        dem.astype(np.float32),
        (0.4 * dem).astype(np.float32),
        np.zeros((n, n), np.float32),
        np.ones((n, n), np.float32),
        rng.integers(0, 19, (n, n)).astype(np.float32),
        obs_z,
        mask,
    ])
    el, az, alt = geometry
    return Tile(planes=planes, elev_deg=el, az_deg=az, alt_km=alt,
                eta=ETA, mu=MU, sigma=SIGMA,
                geo={"origin_x": 0.0, "origin_y": 0.0, "cell_size": 10.0}), loss_db


def write_tile_dir(path, tiles):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(tiles):
        write_tile(t, path / f"tile_{i:03d}.agx")
    return path


def tiny_config(**kw):
    base = dict(epochs=30, batch_size=4, T=40, curriculum_epochs=5,
                lambda_cls=0.5, widths=(8, 16, 24, 32), lr=2e-3, seed=0)
    base.update(kw)
    return TrainerConfig(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(321)
