import numpy as np
import pytest

from agchan.raster import RasterGrid


def make_grid(values, cell_size=10.0, origin=(0.0, 0.0), nodata=-9999.0) -> RasterGrid:
    values = np.asarray(values, dtype=np.float64)
    return RasterGrid(
        origin_x=origin[0], origin_y=origin[1], cell_size=cell_size,
        width=values.shape[1], height=values.shape[0],
        nodata=nodata, values=values,
    )


def flat_dem(n=16, value=0.0, cell_size=10.0, origin=(0.0, 0.0)) -> RasterGrid:
    return make_grid(np.full((n, n), value), cell_size, origin)


def east_plane(n=16, rise_per_cell=1.0, cell_size=10.0, base=100.0) -> RasterGrid:
    """Plane rising eastward by rise_per_cell per cell."""
    col = np.arange(n, dtype=np.float64)
    return make_grid(base + np.tile(col * rise_per_cell, (n, 1)), cell_size)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
