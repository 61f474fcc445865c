import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from agchan.engine import (
    ChannelEstimate,
    EstimateContext,
    LossBreakdown,
    estimate_link,
    idw_raster,
    moving_average,
    pearson,
    region_sweep,
    sign_agreement,
)
from agchan.errors import MetricError
from agchan.geometry import LinkSpec
from agchan.losses import WeatherRecord, bullington_loss, vegetation_loss
from agchan.raytrace import TraceContext, trace_link
from agchan.sampling import GroundSample, SampleDesign, satellite_grid
from agchan.config import SatelliteGridConfig

from conftest import flat_dem, make_grid

ZERO_TABLES = dict(
    gas_table={1e9: 0.0, 50e9: 0.0},
    cloud_table={1e9: 0.0, 50e9: 0.0},
    rain_table={1e9: (0.0, 1.0), 50e9: (0.0, 1.0)},
)


def quiet_context(dem, landcover=None):
    return EstimateContext(trace=TraceContext.from_grids(dem, landcover),
                           **ZERO_TABLES)


def make_link(dem, rc, el, az=90.0, alt=500.0, agl=1.5, pid=0):
    x, y = dem.pixel_to_world(*rc)
    return LinkSpec(ut_x=x, ut_y=y, elevation_deg=el, azimuth_deg=az,
                    altitude_km=alt, frequency_hz=12e9, ut_height_agl_m=agl,
                    point_id=pid)


class TestLossBreakdown:
    def test_additivity(self, rng):
        for _ in range(20):
            b = LossBreakdown(*rng.uniform(0.0, 30.0, 5))
            assert b.total_db == pytest.approx(b.fspl_db + b.total_excess_db)
            assert b.total_excess_db == pytest.approx(
                b.diffraction_db + b.vegetation_db + b.atmosphere_db + b.multipath_db
            )


class TestEstimateLink:
    def test_flat_dry_sky_near_zero_excess(self):
        dem = flat_dem(64)
        est = estimate_link(make_link(dem, (32, 32), 85.0), quiet_context(dem))
        assert est.verdict == "LOS"
        assert est.breakdown.total_excess_db == pytest.approx(0.0, abs=1e-9)
        assert est.breakdown.fspl_db == pytest.approx(168.0, abs=0.5)  # ~502 km at 12 GHz

    def test_wall_excess_is_single_knife_edge(self):
        vals = np.zeros((64, 64))
        vals[32, 42] = 50.0
        dem = make_grid(vals, cell_size=10.0)
        link = make_link(dem, (32, 32), 25.0)
        est = estimate_link(link, quiet_context(dem))
        assert est.verdict == "NLOS"
        profile = trace_link(link, TraceContext.from_grids(dem))
        want = bullington_loss(profile, link)
        assert est.breakdown.diffraction_db == pytest.approx(want, abs=0.01)
        assert est.breakdown.total_excess_db == pytest.approx(want, abs=0.01)
        assert est.breakdown.vegetation_db == 0.0

    def test_forest_belt_excess_is_vegetation_alone(self):
        # low ray through a canopy strip right of the UT: every obstructed
        # pixel is vegetation, so diffraction is stripped and the excess
        # equals the extinction term
        n = 64
        dem = flat_dem(n, value=0.0, cell_size=10.0)
        lc_vals = np.full((n, n), 2.0)
        lc_vals[:, 34:37] = 15.0  # forest belt 15-45 m east of the UT pixel
        lc = make_grid(lc_vals, cell_size=10.0)
        link = make_link(dem, (32, 32), 25.0)
        est = estimate_link(link, quiet_context(dem, lc))
        assert est.verdict == "NLOS"
        assert est.breakdown.vegetation_db > 0.5
        assert est.breakdown.diffraction_db == 0.0
        assert est.breakdown.total_excess_db == pytest.approx(
            est.breakdown.vegetation_db, abs=1e-9
        )

    def test_antenna_under_canopy_is_extinction_not_diffraction(self):
        # the path starts inside vegetation: the leading canopy span must
        # land in the extinction term, not become a knife edge millimeters
        # from the antenna
        n = 64
        dem = flat_dem(n, value=0.0, cell_size=10.0)
        lc_vals = np.full((n, n), 2.0)
        lc_vals[:, 32:36] = 15.0  # forest from the UT pixel eastward
        lc = make_grid(lc_vals, cell_size=10.0)
        link = make_link(dem, (32, 32), 25.0)
        est = estimate_link(link, quiet_context(dem, lc))
        assert est.verdict == "NLOS"
        assert est.breakdown.vegetation_db > 1.0
        assert est.breakdown.diffraction_db < 1.0
        assert est.breakdown.vegetation_db <= 30.0  # capped fit

    def test_atmosphere_applied_with_weather(self):
        dem = flat_dem(64)
        ectx = EstimateContext(
            trace=TraceContext.from_grids(dem),
            weather=[WeatherRecord(0.0, 0.0, 10.0, 0.5)],
        )
        est = estimate_link(make_link(dem, (32, 32), 30.0), ectx)
        assert est.breakdown.atmosphere_db > 0.5
        assert est.verdict == "LOS"

    def test_error_carries_link_identity(self):
        dem = flat_dem(16)
        link = LinkSpec(ut_x=-500.0, ut_y=0.0, elevation_deg=45.0,
                        azimuth_deg=0.0, altitude_km=500.0, frequency_hz=12e9,
                        point_id=77)
        with pytest.raises(Exception, match="point_id=77"):
            estimate_link(link, quiet_context(dem))


def design_for(dem, pixels, elevations=(25.0, 40.0, 55.0, 70.0, 85.0)):
    samples = [
        GroundSample(i, *dem.pixel_to_world(r, c), 0, 2, 2, 0)
        for i, (r, c) in enumerate(pixels)
    ]
    cfg = SatelliteGridConfig(elevations_deg=tuple(elevations),
                              azimuths_deg=(0.0, 120.0, 240.0),
                              altitudes_km=(500.0,))
    return SampleDesign(samples=samples, quotas={}, achieved={}, overflow={},
                        satellite_grid=satellite_grid(cfg))


class TestRegionSweep:
    def test_flat_region_zero_rates(self):
        dem = flat_dem(48)
        design = design_for(dem, [(24, 24), (10, 30)])
        rep = region_sweep(design, quiet_context(dem), 12e9)
        assert set(rep.obstruction_rate_by_elevation) == {25.0, 40.0, 55.0, 70.0, 85.0}
        assert all(v == 0.0 for v in rep.obstruction_rate_by_elevation.values())
        assert rep.failures == []

    def test_single_point_rates_binary(self):
        rng = np.random.default_rng(3)
        vals = gaussian_filter(rng.uniform(0.0, 400.0, (48, 48)), 2.0)
        dem = make_grid(vals, cell_size=10.0)
        design = design_for(dem, [(24, 24)], elevations=(25.0, 85.0))
        design.satellite_grid = [(25.0, 0.0, 500.0), (85.0, 0.0, 500.0)]
        rep = region_sweep(design, quiet_context(dem), 12e9)
        assert all(v in (0.0, 1.0) for v in rep.obstruction_rate_by_elevation.values())

    def test_ridge_field_trend(self):
        # rugged synthetic ridges: low elevations see more blockage
        rng = np.random.default_rng(8)
        vals = gaussian_filter(rng.uniform(0.0, 500.0, (64, 64)), 1.5)
        dem = make_grid(vals, cell_size=10.0)
        pix = [(r, c) for r in range(12, 52, 8) for c in range(12, 52, 8)]
        design = design_for(dem, pix)
        rep = region_sweep(design, quiet_context(dem), 12e9)
        rates = [rep.obstruction_rate_by_elevation[e] for e in (25.0, 40.0, 55.0, 70.0, 85.0)]
        assert rates[0] > rates[-1]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_threads_match_serial(self):
        rng = np.random.default_rng(5)
        vals = gaussian_filter(rng.uniform(0.0, 300.0, (48, 48)), 2.0)
        dem = make_grid(vals, cell_size=10.0)
        design = design_for(dem, [(20, 20), (30, 35)], elevations=(25.0, 55.0))
        r1 = region_sweep(design, quiet_context(dem), 12e9, threads=1)
        r2 = region_sweep(design, quiet_context(dem), 12e9, threads=4)
        assert r1.obstruction_rate_by_elevation == r2.obstruction_rate_by_elevation
        t1 = sorted(e.breakdown.total_excess_db for e in r1.estimates)
        t2 = sorted(e.breakdown.total_excess_db for e in r2.estimates)
        assert np.allclose(t1, t2)

    def test_empty_design_rejected(self):
        dem = flat_dem(16)
        design = SampleDesign([], {}, {}, {}, satellite_grid())
        with pytest.raises(ValueError):
            region_sweep(design, quiet_context(dem), 12e9)

    def test_idw_exact_at_samples(self):
        out = idw_raster([15.0], [15.0], [7.5], (0.0, 0.0, 30.0, 30.0), 10.0)
        assert out.shape == (3, 3)
        assert out[1, 1] == pytest.approx(7.5)


class TestMetrics:
    def test_sign_agreement_identity_and_negation(self, rng):
        x = np.diff(rng.standard_normal(200))
        assert sign_agreement(x, x) == 1.0
        nozero = x[x != 0]
        assert sign_agreement(nozero, -nozero) == 0.0

    def test_zero_matches_only_zero(self):
        assert sign_agreement(np.array([0.0, 1.0]), np.array([0.0, 1.0])) == 1.0
        assert sign_agreement(np.array([0.0, 1.0]), np.array([1e-12, 1.0])) == 0.5

    def test_pearson_affine(self):
        x = np.linspace(0.0, 10.0, 50)
        r, p = pearson(x, 2.0 * x + 1.0)
        assert r == pytest.approx(1.0, abs=1e-12)
        assert p < 1e-6
        r2, _ = pearson(x, -x)
        assert r2 == pytest.approx(-1.0, abs=1e-12)

    def test_pearson_p_value_against_scipy(self, rng):
        from scipy import stats

        x = rng.standard_normal(40)
        y = 0.3 * x + rng.standard_normal(40)
        r, p = pearson(x, y)
        want = stats.pearsonr(x, y)
        assert r == pytest.approx(want.statistic, abs=1e-12)
        assert p == pytest.approx(want.pvalue, rel=1e-9)

    def test_pearson_degenerate(self):
        with pytest.raises(MetricError):
            pearson(np.ones(10), np.arange(10.0))
        with pytest.raises(MetricError):
            pearson(np.arange(2.0), np.arange(2.0))

    def test_moving_average_preserves_mean_circular(self, rng):
        x = rng.standard_normal(500)
        sm = moving_average(x, 60)
        assert sm.mean() == pytest.approx(x.mean(), abs=1e-12)
        assert len(sm) == len(x)

    def test_moving_average_idempotent_on_constant(self):
        x = np.full(100, 3.3)
        assert np.allclose(moving_average(x, 60), x, atol=1e-12)
        assert np.allclose(moving_average(moving_average(x, 60), 60), x, atol=1e-12)
