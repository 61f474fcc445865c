import math

import numpy as np
import pytest

from agchan.geometry import LinkSpec
from agchan.losses import (
    CLEAR_SKY,
    VegSegment,
    WeatherRecord,
    atmosphere_loss,
    bullington_loss,
    fspl_db,
    knife_edge_loss,
    knife_edge_nu,
    load_weather_csv,
    nearest_weather,
    rain_k_alpha,
    segment_vegetation,
    spherical_earth_loss,
    twdp_mean_linear_power,
    twdp_stats,
    vegetation_loss,
    _bullington_core,
)
from agchan.raytrace import PathProfile, ProfileEntry
from agchan.reflection import ReflectionCandidate
from agchan.config import EFFECTIVE_EARTH_RADIUS_M


class TestFspl:
    def test_12ghz_1000km(self):
        assert fspl_db(12e9, 1000e3) == pytest.approx(32.45 + 81.58 + 60.0, abs=0.01)

    def test_doubling_distance(self):
        d1 = fspl_db(12e9, 500e3)
        d2 = fspl_db(12e9, 1000e3)
        assert d2 - d1 == pytest.approx(20.0 * math.log10(2.0), abs=1e-9)

    def test_1ghz_1km(self):
        assert fspl_db(1e9, 1000.0) == pytest.approx(92.45, abs=1e-9)

    def test_domain(self):
        with pytest.raises(ValueError):
            fspl_db(0.0, 1000.0)
        with pytest.raises(ValueError):
            fspl_db(1e9, -1.0)


class TestKnifeEdge:
    def test_clear_path_cutoff(self):
        assert knife_edge_loss(-0.78) == 0.0
        assert knife_edge_loss(-5.0) == 0.0

    def test_j_zero(self):
        # hand evaluation: 6.9 + 20 log10(sqrt(1.01) - 0.1)
        expected = 6.9 + 20.0 * math.log10(math.sqrt(1.01) - 0.1)
        assert expected == pytest.approx(6.03, abs=0.01)
        assert knife_edge_loss(0.0) == pytest.approx(expected, abs=1e-12)

    def test_j_one(self):
        # hand evaluation of the same expression at nu = 1:
        # 6.9 + 20 log10(sqrt(1.81) + 0.9) = 13.93 dB
        expected = 6.9 + 20.0 * math.log10(math.sqrt(1.81) + 0.9)
        assert expected == pytest.approx(13.93, abs=0.01)
        assert knife_edge_loss(1.0) == pytest.approx(expected, abs=1e-12)

    def test_monotone_increasing(self):
        nus = np.linspace(-0.7, 5.0, 200)
        vals = [knife_edge_loss(v) for v in nus]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_nu_parameter(self):
        # symmetric split: nu = h sqrt(2*2d/(lam d^2)) = h*2/sqrt(lam d)
        assert knife_edge_nu(3.0, 500.0, 500.0, 0.025) == pytest.approx(
            3.0 * math.sqrt(2.0 * 1000.0 / (0.025 * 500.0 * 500.0))
        )


def profile_from_points(points, d_tot, h_ts, h_rs, link=None):
    entries = [ProfileEntry(d, h, -1.0) for d, h in points]
    return PathProfile(
        entries=entries, min_clearance_m=-1.0, min_rho=0.0, verdict="NLOS",
        total_dist_m=d_tot, start_height_m=h_ts, end_height_m=h_rs, link=link,
    )


def edge_nu_with_bulge(d, h, d_tot, h_ts, h_rs, lam):
    g = h + d * (d_tot - d) / (2.0 * EFFECTIVE_EARTH_RADIUS_M)
    chord = (h_ts * (d_tot - d) + h_rs * d) / d_tot
    return knife_edge_nu(g - chord, d, d_tot - d, lam)


class TestBullington:
    LINK = LinkSpec(ut_x=0, ut_y=0, elevation_deg=30.0, azimuth_deg=0.0,
                    altitude_km=500.0, frequency_hz=12e9)

    def test_empty_profile_zero(self):
        p = profile_from_points([], 1000.0, 10.0, 300.0)
        assert bullington_loss(p, self.LINK) == 0.0

    def test_single_obstacle_collapse_random(self):
        # construction must reduce exactly to the lone knife edge
        rng = np.random.default_rng(99)
        lam = self.LINK.wavelength_m
        for _ in range(60):
            d_tot = rng.uniform(500.0, 4000.0)
            h_ts = rng.uniform(20.0, 80.0)
            h_rs = rng.uniform(h_ts + 50.0, h_ts + 800.0)
            d1 = rng.uniform(0.1, 0.9) * d_tot
            chord = h_ts + (h_rs - h_ts) * d1 / d_tot
            h1 = chord + rng.uniform(-20.0, 40.0)  # from below to obstructing
            p = profile_from_points([(d1, h1)], d_tot, h_ts, h_rs)
            got = bullington_loss(p, self.LINK)
            want = knife_edge_loss(edge_nu_with_bulge(d1, h1, d_tot, h_ts, h_rs, lam))
            assert got == pytest.approx(want, abs=1e-9), (d_tot, h_ts, h_rs, d1, h1)
            assert got >= 0.0

    def test_dominant_edge_wins(self):
        d_tot, h_ts, h_rs = 2000.0, 30.0, 400.0
        big = (1000.0, 350.0)
        small = (600.0, 60.0)  # strictly below the lines through the big edge
        p_both = profile_from_points([small, big], d_tot, h_ts, h_rs)
        p_big = profile_from_points([big], d_tot, h_ts, h_rs)
        assert bullington_loss(p_both, self.LINK) == pytest.approx(
            bullington_loss(p_big, self.LINK), abs=1e-9
        )

    def test_endpoint_degenerate_falls_back(self):
        p = profile_from_points([(0.0, 55.0)], 1000.0, 50.0, 300.0)
        loss = bullington_loss(p, self.LINK)
        assert math.isfinite(loss) and loss >= 0.0

    def test_nonnegative_on_random_profiles(self, rng):
        for _ in range(50):
            d_tot = rng.uniform(200.0, 5000.0)
            n = rng.integers(1, 12)
            ds = np.sort(rng.uniform(0.01, 0.99, n)) * d_tot
            hs = rng.uniform(0.0, 200.0, n)
            p = profile_from_points(list(zip(ds, hs)), d_tot, 10.0, 250.0)
            assert bullington_loss(p, self.LINK) >= 0.0

    def test_spherical_earth_beyond_horizon_positive(self):
        # two low terminals far beyond the smooth-earth horizon
        loss = spherical_earth_loss(100e3, 5.0, 5.0, 0.025, 12e9)
        assert loss > 10.0

    def test_spherical_earth_cleared_is_zero(self):
        assert spherical_earth_loss(2000.0, 30.0, 60.0, 0.025, 12e9) == 0.0


class TestVegetationSegmentation:
    @staticmethod
    def interval_oracle(a, b, veg_class=15, other=2):
        return lambda s: veg_class if a <= s < b else other

    def test_no_vegetation(self):
        segs = segment_vegetation(lambda s: 2, 1000.0, 50.0, 0.5)
        assert segs == []

    def test_forest_interval_recovered(self):
        segs = segment_vegetation(self.interval_oracle(100.0, 200.0),
                                  1000.0, 50.0, 0.5)
        assert len(segs) == 1
        assert 99.5 <= segs[0].s_in_m <= 100.5
        assert 199.5 <= segs[0].s_out_m <= 200.5
        assert segs[0].class_id == 15

    def test_end_of_path_closure(self):
        s_max = 500.0
        segs = segment_vegetation(self.interval_oracle(490.0, 1e9),
                                  s_max, 50.0, 0.5)
        assert len(segs) == 1
        assert segs[0].s_out_m == s_max  # exact closure at the path end

    def test_random_boundaries_within_tolerance(self):
        # strips narrower than the coarse step are undetectable by design,
        # so widths here always exceed it
        rng = np.random.default_rng(31)
        for _ in range(40):
            step = rng.uniform(20.0, 80.0)
            a = rng.uniform(10.0, 400.0)
            b = min(a + step + rng.uniform(1.0, 300.0), 999.0)
            tol = rng.uniform(0.05, 1.0)
            segs = segment_vegetation(self.interval_oracle(a, b),
                                      1000.0, step, tol)
            assert len(segs) == 1
            assert abs(segs[0].s_in_m - a) <= tol
            assert abs(segs[0].s_out_m - b) <= tol

    def test_adjacent_vegetation_classes_stay_open(self):
        # forest then shrub with no gap: one segment opened at the forest
        # entry, closed when vegetation ends (per the bookkeeping rules)
        def oracle(s):
            if 100.0 <= s < 200.0:
                return 15
            if 200.0 <= s < 300.0:
                return 9
            return 2

        segs = segment_vegetation(oracle, 1000.0, 40.0, 0.25)
        assert len(segs) == 1
        assert segs[0].class_id == 15
        assert abs(segs[0].s_in_m - 100.0) <= 0.25
        assert abs(segs[0].s_out_m - 300.0) <= 0.25

    def test_parameter_contract(self):
        with pytest.raises(ValueError):
            segment_vegetation(lambda s: 2, 100.0, 0.5, 0.5)


class TestVegetationLoss:
    def test_empty_zero(self):
        assert vegetation_loss([], 12e9) == 0.0

    def test_configured_fit_hand_value(self):
        # forest row A=0.25 B=0.39 C=0.25, cap 30 dB at 12 GHz, 10 m span
        raw = 0.25 * 12000.0**0.39 * 10.0**0.25
        assert raw == pytest.approx(17.3, abs=0.1)
        capped = 30.0 * (1.0 - math.exp(-raw / 30.0))
        seg = VegSegment(100.0, 110.0, 15)
        assert vegetation_loss([seg], 12e9) == pytest.approx(capped, abs=1e-12)
        assert capped == pytest.approx(13.2, abs=0.1)

    def test_two_segments_exceed_either(self):
        a = vegetation_loss([VegSegment(0.0, 20.0, 15)], 12e9)
        b = vegetation_loss([VegSegment(50.0, 60.0, 15)], 12e9)
        both = vegetation_loss(
            [VegSegment(0.0, 20.0, 15), VegSegment(50.0, 60.0, 15)], 12e9
        )
        assert both > a and both > b
        assert both == pytest.approx(a + b, abs=1e-9)

    def test_monotone_in_length_and_frequency(self):
        lengths = [5.0, 20.0, 100.0, 500.0]
        losses = [vegetation_loss([VegSegment(0.0, L, 15)], 12e9) for L in lengths]
        assert all(a < b for a, b in zip(losses, losses[1:]))
        assert all(v <= 30.0 for v in losses)  # bounded by the cap
        freqs = [2e9, 8e9, 20e9, 40e9]
        fl = [vegetation_loss([VegSegment(0.0, 30.0, 15)], f) for f in freqs]
        assert all(a < b for a, b in zip(fl, fl[1:]))

    def test_invalid_segment(self):
        with pytest.raises(ValueError):
            VegSegment(10.0, 5.0, 15)


class TestAtmosphere:
    def test_all_zero_tables(self):
        zero = {1e9: 0.0, 50e9: 0.0}
        got = atmosphere_loss(45.0, 12e9, CLEAR_SKY, gas_table=zero,
                              cloud_table=zero, rain_table={1e9: (0.0, 1.0), 50e9: (0.0, 1.0)})
        assert got == 0.0

    def test_cosecant_law(self):
        w = WeatherRecord(0, 0, 5.0, 0.3)
        z = atmosphere_loss(90.0, 12e9, w)
        at30 = atmosphere_loss(30.0, 12e9, w)
        assert at30 == pytest.approx(2.0 * z, rel=1e-12)
        for el in (10.0, 25.0, 55.0, 70.0):
            got = atmosphere_loss(el, 12e9, w)
            assert got * math.sin(math.radians(el)) == pytest.approx(z, rel=1e-12)

    def test_rain_power_law_row(self):
        k, alpha = rain_k_alpha(12e9)
        assert (k, alpha) == (0.0188, 1.217)
        gamma = k * 10.0**alpha
        assert gamma == pytest.approx(0.31, abs=0.005)

    def test_elevation_domain(self):
        with pytest.raises(ValueError):
            atmosphere_loss(0.0, 12e9, CLEAR_SKY)

    def test_weather_csv_and_nearest(self, tmp_path):
        p = tmp_path / "w.csv"
        p.write_text(
            "x,y,rain_mm_h,cloud_lwc,temp_c,pressure_hpa\n"
            "0,0,1.0,0.1,10,1000\n100,100,9.0,0.5,-5,990\n"
        )
        recs = load_weather_csv(p)
        assert len(recs) == 2
        assert nearest_weather(recs, 90.0, 90.0).rain_mm_h == 9.0
        assert nearest_weather([], 0, 0) == CLEAR_SKY


def refl(rel_db, validated=True):
    return ReflectionCandidate(x=0, y=0, r_value=1.0, specular_error_deg=0.0,
                               validated=validated, path_excess_delay_s=1e-8,
                               relative_power_db=rel_db)


class TestTwdp:
    def test_pure_los_no_fade(self):
        params, fade = twdp_stats(0.0, None, -200.0)
        assert fade == pytest.approx(0.0, abs=1e-8)
        assert params.delta == 0.0

    def test_equal_waves_delta_one(self):
        params, _ = twdp_stats(0.0, refl(0.0), -20.0)
        assert params.delta == pytest.approx(1.0)

    def test_unvalidated_reflection_ignored(self):
        params, fade = twdp_stats(0.0, refl(0.0, validated=False), -200.0)
        assert params.delta == 0.0
        assert fade == pytest.approx(0.0, abs=1e-8)

    def test_mean_linear_power_conserved(self):
        # quadrature mean of the envelope power equals the component sum
        p1 = 1.0
        p2 = 10.0 ** (-3.0 / 10.0)
        pd = 10.0 ** (-20.0 / 10.0)
        got = twdp_mean_linear_power(0.0, refl(-3.0), -20.0)
        assert got == pytest.approx(p1 + p2 + pd, rel=1e-3)

    def test_monte_carlo_oracle(self):
        # 1e6 uniform phase draws reproduce the 256-point quadrature fade
        rng = np.random.default_rng(7)
        p1, rel_db, pd_db = 1.0, -2.0, -15.0
        p2 = p1 * 10.0 ** (rel_db / 10.0)
        pd = 10.0 ** (pd_db / 10.0)
        phases = rng.uniform(0.0, 2.0 * math.pi, 1_000_000)
        env = p1 + p2 + 2.0 * math.sqrt(p1 * p2) * np.cos(phases) + pd
        mc_fade = 10.0 * math.log10(p1) - float(np.mean(10.0 * np.log10(env)))
        _, fade = twdp_stats(0.0, refl(rel_db), pd_db)
        assert fade == pytest.approx(mc_fade, abs=0.1)

    def test_k_factor_definition(self):
        params, _ = twdp_stats(0.0, refl(-3.0), -20.0)
        p2 = 10.0 ** (-3.0 / 10.0)
        expected = 10.0 * math.log10((1.0 + p2) / 10.0 ** (-2.0))
        assert params.k_db == pytest.approx(expected)

    def test_equal_waves_tiny_diffuse_near_zero_fade(self):
        # two equal specular waves: dB-average of the two-wave envelope is
        # exactly the single-wave power, so the fade stays near zero
        _, fade = twdp_stats(0.0, refl(0.0), -60.0)
        assert abs(fade) < 0.05
