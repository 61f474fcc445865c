"""Shipped default tables and run configuration.

Every physical table here (canopy heights, reflection coefficients,
vegetation extinction fits, atmospheric lookup rows) is a config value
with a documented default, overridable from a TOML run file or CLI flags.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SPEED_OF_LIGHT = 299_792_458.0  # m/s
EARTH_RADIUS_M = 6_371_000.0
EFFECTIVE_EARTH_RADIUS_M = 4.0 / 3.0 * EARTH_RADIUS_M  # 4/3-earth refraction model

ENV_DATA_DIR = "AGC_DATA_DIR"


@dataclass(frozen=True)
class LandCoverClass:
    class_id: int
    name: str
    canopy_height_m: float
    is_vegetation: bool
    beta_reflect: float

    def __post_init__(self):
        if not -1.0 <= self.beta_reflect <= 1.0:
            raise ValueError(f"beta_reflect out of [-1,1] for class {self.class_id}")
        if self.canopy_height_m < 0:
            raise ValueError(f"negative canopy height for class {self.class_id}")


# 19 land-cover classes, ids 0..18. Canopy heights: forests 15 m, shrub 2 m,
# grass/crop 0.5 m, everything non-vegetated 0 m. Reflection boosts:
# water +0.50 and forest -0.10 are fixed calibration points; the rest are
# shipped defaults in the same spirit (smooth/specular up, rough/absorbing down).
DEFAULT_LANDCOVER_CLASSES: tuple[LandCoverClass, ...] = (
    LandCoverClass(0, "water", 0.0, False, 0.50),
    LandCoverClass(1, "permanent_ice", 0.0, False, 0.40),
    LandCoverClass(2, "barren", 0.0, False, 0.00),
    LandCoverClass(3, "barren_lichen_moss", 0.0, False, 0.00),
    LandCoverClass(4, "rock_rubble", 0.0, False, -0.05),
    LandCoverClass(5, "urban", 0.0, False, 0.10),
    LandCoverClass(6, "cropland", 0.5, False, 0.00),
    LandCoverClass(7, "grassland", 0.5, False, 0.00),
    LandCoverClass(8, "grassland_lichen_moss", 0.5, False, 0.00),
    LandCoverClass(9, "shrubland", 2.0, True, -0.05),
    LandCoverClass(10, "shrubland_lichen_moss", 2.0, True, -0.05),
    LandCoverClass(11, "wetland", 0.5, False, 0.20),
    LandCoverClass(12, "wetland_treed", 10.0, True, -0.10),
    LandCoverClass(13, "broadleaf_forest", 15.0, True, -0.10),
    LandCoverClass(14, "broadleaf_forest_open", 15.0, True, -0.10),
    LandCoverClass(15, "needleleaf_forest", 15.0, True, -0.10),
    LandCoverClass(16, "needleleaf_forest_open", 15.0, True, -0.10),
    LandCoverClass(17, "mixed_forest", 15.0, True, -0.10),
    LandCoverClass(18, "taiga_needleleaf", 15.0, True, -0.10),
)

N_LANDCOVER_CLASSES = 19


def landcover_table(overrides: dict | None = None) -> dict[int, LandCoverClass]:
    """Return {class_id: LandCoverClass}, optionally patched from a config dict.

    Override entries look like ``{"13": {"canopy_height_m": 20.0}}``.
    """
    table = {c.class_id: c for c in DEFAULT_LANDCOVER_CLASSES}
    if overrides:
        for key, patch in overrides.items():
            cid = int(key)
            if cid not in table:
                raise ValueError(f"unknown land-cover class id {cid}")
            base = table[cid]
            table[cid] = LandCoverClass(
                cid,
                patch.get("name", base.name),
                float(patch.get("canopy_height_m", base.canopy_height_m)),
                bool(patch.get("is_vegetation", base.is_vegetation)),
                float(patch.get("beta_reflect", base.beta_reflect)),
            )
    return table


# Vegetation extinction fit L = A * f_MHz^B * d_m^C, capped at A_m via
# L_cap = A_m * (1 - exp(-L/A_m)). Woodland row is the terrestrial fit;
# lighter canopies get smaller amplitude/cap.
DEFAULT_VEGETATION_FITS: dict[str, dict[str, float]] = {
    "forest": {"A": 0.25, "B": 0.39, "C": 0.25, "max_db": 30.0},
    "shrub": {"A": 0.15, "B": 0.39, "C": 0.25, "max_db": 20.0},
    "wetland_treed": {"A": 0.20, "B": 0.39, "C": 0.25, "max_db": 25.0},
}

# Map vegetation class ids onto fit rows.
DEFAULT_VEGETATION_FIT_BY_CLASS: dict[int, str] = {
    9: "shrub",
    10: "shrub",
    12: "wetland_treed",
    13: "forest",
    14: "forest",
    15: "forest",
    16: "forest",
    17: "forest",
    18: "forest",
}

# Zenith gaseous attenuation (dB) and cloud coefficient (dB per kg/m^2 of
# columnar liquid water) by frequency. Sparse rows, log-frequency interpolated.
DEFAULT_GAS_ZENITH_DB: dict[float, float] = {
    1e9: 0.035,
    4e9: 0.038,
    12e9: 0.050,
    20e9: 0.30,
    30e9: 0.24,
    50e9: 1.20,
}

DEFAULT_CLOUD_COEFF_DB_PER_KGM2: dict[float, float] = {
    1e9: 0.0008,
    4e9: 0.011,
    12e9: 0.10,
    20e9: 0.27,
    30e9: 0.58,
    50e9: 1.50,
}

# Rain specific-attenuation power law gamma = k * R^alpha (circular pol rows).
DEFAULT_RAIN_KALPHA: dict[float, tuple[float, float]] = {
    4e9: (0.00084, 1.442),
    8e9: (0.0065, 1.301),
    12e9: (0.0188, 1.217),
    20e9: (0.0751, 1.099),
    30e9: (0.187, 1.021),
    50e9: (0.536, 0.873),
}

DEFAULT_RAIN_HEIGHT_KM = 3.0


@dataclass
class SamplingCoeffs:
    """Mixture coefficients and factor tables of the stratified design."""

    alpha: float = 0.25  # terrain factor weight
    beta: float = 0.25   # functional-region factor weight
    gamma: float = 0.25  # land-cover factor weight
    delta: float = 0.25  # elevation-gain factor weight
    omega_terrain: dict[str, float] = field(default_factory=dict)
    omega_function: dict[int, float] = field(default_factory=dict)
    omega_landcover: dict[int, float] = field(default_factory=dict)

    def validate(self):
        s = self.alpha + self.beta + self.gamma + self.delta
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"mixture coefficients must sum to 1, got {s!r}")
        for name, table in (("omega_terrain", self.omega_terrain),
                            ("omega_function", self.omega_function),
                            ("omega_landcover", self.omega_landcover)):
            for k, v in table.items():
                if v < 0:
                    raise ValueError(f"{name}[{k}] is negative")


def sampling_preset(name: str) -> SamplingCoeffs:
    """Task presets: blockage analysis favors relief, reflection favors water/ice."""
    if name == "los":
        return SamplingCoeffs(
            alpha=0.40, beta=0.10, gamma=0.10, delta=0.40,
            omega_terrain={"ridge": 2.0, "valley": 1.5, "upper_slope": 1.2},
            omega_landcover={0: 0.2, 1: 0.5},
        )
    if name == "reflection":
        return SamplingCoeffs(
            alpha=0.20, beta=0.10, gamma=0.50, delta=0.20,
            omega_landcover={0: 2.5, 1: 2.0, 11: 1.5},
        )
    if name == "balanced":
        return SamplingCoeffs()
    raise ValueError(f"unknown sampling preset {name!r}")


@dataclass
class SatelliteGridConfig:
    elevations_deg: tuple[float, ...] = (25.0, 40.0, 55.0, 70.0, 85.0)
    azimuths_deg: tuple[float, ...] = (0.0, 60.0, 120.0, 180.0, 240.0, 300.0)
    altitudes_km: tuple[float, ...] = (500.0, 850.0, 1200.0)


@dataclass
class RunConfig:
    """Resolved run configuration; a JSON snapshot is written next to outputs."""

    dem_path: str = ""
    landcover_path: str = ""
    function_path: str = ""
    weather_path: str = ""
    output_dir: str = "out"

    frequency_hz: float = 12e9
    ut_height_agl_m: float = 1.5
    truncation_margin_m: float = 100.0
    dem_min_m: float = -500.0
    dem_max_m: float = 9000.0

    sample_budget: int = 100
    s_min: int = 1
    d_min_m: float = 0.0
    kmeans_k: int = 12
    seed: int = 0
    preset: str = "balanced"
    threads: int = 0  # 0 = logical cores

    tpi_small_px: int = 3
    tpi_large_px: int = 15
    slope_flat_deg: float = 5.0

    reflect_w_slope: float = 0.4
    reflect_w_rough: float = 0.4
    reflect_w_curv: float = 0.2
    reflect_percentile: float = 90.0
    reflect_floor: float = 0.05
    reflect_ring_start_m: float = 10.0
    reflect_ring_factor: float = 1.5
    reflect_ring_max_m: float = 5000.0
    reflect_ring_points: int = 72
    specular_tol_deg: float = 5.0
    diffuse_offset_db: float = -20.0

    rain_height_km: float = DEFAULT_RAIN_HEIGHT_KM
    diffusion_steps: int = 250
    schedule: str = "cosine"
    gate_gamma: float = 1.0
    tile_size: int = 256

    satellite: SatelliteGridConfig = field(default_factory=SatelliteGridConfig)
    coeffs: SamplingCoeffs = field(default_factory=SamplingCoeffs)
    landcover_overrides: dict = field(default_factory=dict)

    def resolved_path(self, p: str) -> str:
        """Resolve a data path against AGC_DATA_DIR when it is relative."""
        if not p or os.path.isabs(p):
            return p
        root = os.environ.get(ENV_DATA_DIR, "")
        if root and not os.path.exists(p):
            return str(Path(root) / p)
        return p

    def snapshot(self) -> dict:
        def enc(obj):
            if hasattr(obj, "__dict__"):
                return {k: enc(v) for k, v in vars(obj).items()}
            if isinstance(obj, dict):
                return {str(k): enc(v) for k, v in obj.items()}
            if isinstance(obj, (list, tuple)):
                return [enc(v) for v in obj]
            return obj

        return enc(self)

    def write_lock(self, out_dir: str | Path):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "run.lock.json", "w") as f:
            json.dump(self.snapshot(), f, indent=2, sort_keys=True)
            f.write("\n")


def load_config(path: str | Path | None) -> RunConfig:
    """Load a TOML run file into a RunConfig; missing file -> defaults."""
    cfg = RunConfig()
    if path is None:
        return cfg
    with open(path, "rb") as f:
        doc = tomllib.load(f)

    plain = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    for key, value in plain.items():
        if not hasattr(cfg, key):
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, key, type(getattr(cfg, key))(value) if getattr(cfg, key) is not None else value)

    if "satellite" in doc:
        sat = doc["satellite"]
        cfg.satellite = SatelliteGridConfig(
            tuple(float(x) for x in sat.get("elevations_deg", cfg.satellite.elevations_deg)),
            tuple(float(x) for x in sat.get("azimuths_deg", cfg.satellite.azimuths_deg)),
            tuple(float(x) for x in sat.get("altitudes_km", cfg.satellite.altitudes_km)),
        )
    if "coeffs" in doc:
        c = doc["coeffs"]
        base = sampling_preset(cfg.preset) if cfg.preset else SamplingCoeffs()
        cfg.coeffs = SamplingCoeffs(
            float(c.get("alpha", base.alpha)),
            float(c.get("beta", base.beta)),
            float(c.get("gamma", base.gamma)),
            float(c.get("delta", base.delta)),
            {str(k): float(v) for k, v in c.get("omega_terrain", base.omega_terrain).items()},
            {int(k): float(v) for k, v in c.get("omega_function", base.omega_function).items()},
            {int(k): float(v) for k, v in c.get("omega_landcover", base.omega_landcover).items()},
        )
    elif cfg.preset:
        cfg.coeffs = sampling_preset(cfg.preset)
    if "landcover_overrides" in doc:
        cfg.landcover_overrides = copy.deepcopy(doc["landcover_overrides"])
    cfg.coeffs.validate()
    return cfg
