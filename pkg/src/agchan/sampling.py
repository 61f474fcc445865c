"""Region clustering and stratified ground/satellite sampling.

Cluster weights follow W_i = rho_i * (alpha*wT + beta*wF + gamma*wL +
delta*wE) with rho_i the cluster's area share and the omega terms
area-weighted means of per-pixel factor lookups; wE is the min-max
normalized mean cluster elevation. Cluster quotas and per-combination
quotas are integerized by the largest-remainder method with per-combination
minimum floors winning over proportional shares.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import SamplingCoeffs, SatelliteGridConfig


# -- k-means -----------------------------------------------------------------


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 300,
           tol: float = 1e-10) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding.

    Deterministic under a fixed seed; a cluster that empties is re-seeded
    from the point farthest from its assigned centroid. Returns
    (assignment[n], centroids[k, d]).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = len(points)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        dist = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(dist, axis=1)
        new_centroids = np.empty_like(centroids)
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                far = int(np.argmax(dist[np.arange(n), assign]))
                new_centroids[j] = points[far]
                assign[far] = j
            else:
                new_centroids[j] = members.mean(axis=0)
        shift = float(np.max(np.sum((new_centroids - centroids) ** 2, axis=1)))
        centroids = new_centroids
        if shift <= tol:
            break
    dist = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    assign = np.argmin(dist, axis=1)
    return assign, centroids


def robust_standardize(column: np.ndarray) -> np.ndarray:
    """Median/IQR standardization; degenerate spread maps to zeros."""
    med = np.median(column)
    q25, q75 = np.percentile(column, [25, 75])
    iqr = q75 - q25
    if iqr < 1e-12:
        return np.zeros_like(column)
    return (column - med) / iqr


def build_feature_matrix(slope, roughness, elevation,
                         terrain_class, function_class, landcover_class,
                         categorical_weight: float = 1.0) -> np.ndarray:
    """Numeric feature rows for k-means: standardized continuous + one-hot."""
    cont = np.column_stack([
        robust_standardize(np.asarray(slope, dtype=np.float64)),
        robust_standardize(np.asarray(roughness, dtype=np.float64)),
        robust_standardize(np.asarray(elevation, dtype=np.float64)),
    ])
    if not np.all(np.isfinite(cont)):
        raise ValueError("continuous features must be finite")
    blocks = [cont]
    for cats in (terrain_class, function_class, landcover_class):
        cats = np.asarray(cats)
        values = np.unique(cats)
        onehot = (cats[:, None] == values[None, :]).astype(np.float64)
        blocks.append(onehot * categorical_weight)
    return np.hstack(blocks)


# -- quota allocation ----------------------------------------------------------


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integerize non-negative shares so they sum exactly to total."""
    shares = np.asarray(shares, dtype=np.float64)
    if shares.sum() <= 0:
        shares = np.ones_like(shares)
    shares = shares / shares.sum() * total
    floors = np.floor(shares).astype(np.int64)
    short = int(total - floors.sum())
    if short > 0:
        remainders = shares - floors
        order = np.lexsort((np.arange(len(shares)), -remainders))
        floors[order[:short]] += 1
    return floors


@dataclass
class ClusterInfo:
    cluster_id: int
    size: int
    mean_elevation: float
    omega_terrain: float  # area-weighted mean factor over member pixels
    omega_function: float
    omega_landcover: float


def elevation_gain_factors(clusters: list[ClusterInfo]) -> np.ndarray:
    """Min-max normalized mean cluster elevation in [0, 1] (the shipped wE)."""
    elevs = np.array([c.mean_elevation for c in clusters], dtype=np.float64)
    span = elevs.max() - elevs.min()
    return (elevs - elevs.min()) / span if span > 1e-12 else np.zeros_like(elevs)


def cluster_weights(clusters: list[ClusterInfo], coeffs: SamplingCoeffs,
                    omega_elev: np.ndarray | None = None) -> np.ndarray:
    """Mixture weights W_i = rho_i * (a wT + b wF + g wL + d wE).

    omega_elev defaults to the min-max normalized mean cluster elevation;
    passing it explicitly keeps the mixture homogeneous in all four factor
    tables (scaling every table by c scales every W_i by c).
    """
    coeffs.validate()
    n_total = sum(c.size for c in clusters)
    if n_total == 0:
        raise ValueError("empty cluster set")
    omega_e = (np.asarray(omega_elev, dtype=np.float64)
               if omega_elev is not None else elevation_gain_factors(clusters))

    out = np.empty(len(clusters))
    for i, c in enumerate(clusters):
        rho = c.size / n_total
        out[i] = rho * (
            coeffs.alpha * c.omega_terrain
            + coeffs.beta * c.omega_function
            + coeffs.gamma * c.omega_landcover
            + coeffs.delta * omega_e[i]
        )
    return out


def cluster_quotas(weights: np.ndarray, budget: int) -> np.ndarray:
    return largest_remainder(weights, budget)


WEISS_NAMES = {
    0: "valley", 1: "lower_slope", 2: "flat",
    3: "middle_slope", 4: "upper_slope", 5: "ridge",
}


def omega_terrain_factor(coeffs: SamplingCoeffs, terrain_id,
                         terrain_names: dict | None = None) -> float:
    names = terrain_names if terrain_names is not None else WEISS_NAMES
    key = names.get(int(terrain_id), str(terrain_id))
    return coeffs.omega_terrain.get(key, coeffs.omega_terrain.get(str(terrain_id), 1.0))


def combination_weight(combo: tuple, coeffs: SamplingCoeffs,
                       terrain_names: dict | None = None) -> float:
    """w_k = wT(t) * wF(f) * wL(l) from the factor tables (default 1.0)."""
    t, f, l = combo
    wt = omega_terrain_factor(coeffs, t, terrain_names)
    wf = coeffs.omega_function.get(f, 1.0)
    wl = coeffs.omega_landcover.get(l, 1.0)
    return wt * wf * wl


def allocate_combination_quotas(combos: list[tuple], weights: list[float],
                                s_i: int, s_min: int) -> tuple[dict, int]:
    """Split a cluster quota across its feature combinations.

    Every combination receives at least s_min. While honoring the floors,
    the remaining budget is shared proportionally to the combination
    weights (largest remainder); combinations pinned at the floor stay
    there and the rest shrink. Returns ({combo: quota}, overflow), where
    overflow > 0 reports by how much the floors alone exceed s_i.
    """
    if not combos:
        return {}, 0
    n = len(combos)
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("combination weights must be non-negative")
    if n * s_min >= s_i:
        return {c: s_min for c in combos}, n * s_min - s_i

    quotas = np.full(n, s_min, dtype=np.int64)
    free = np.ones(n, dtype=bool)
    # pin any combination whose proportional share falls below the floor,
    # then re-share the rest; the pinned set only grows, so this terminates
    while True:
        free_idx = np.nonzero(free)[0]
        budget_free = s_i - s_min * (n - len(free_idx))
        share = largest_remainder(w[free_idx], budget_free)
        low = share < s_min
        if not low.any():
            quotas[free_idx] = share
            break
        free[free_idx[low]] = False
    return {c: int(q) for c, q in zip(combos, quotas)}, 0


# -- point drawing -------------------------------------------------------------


@dataclass
class GroundSample:
    point_id: int
    x: float
    y: float
    cluster: int
    terrain: int
    landcover: int
    function: int


@dataclass
class SampleDesign:
    samples: list[GroundSample]
    quotas: dict          # {(cluster, combo): quota}
    achieved: dict        # {(cluster, combo): drawn count}
    overflow: dict        # {cluster: floor overflow beyond s_i}
    satellite_grid: list  # [(elev_deg, az_deg, alt_km)]
    d_min_m: float = 0.0

    @property
    def shortfalls(self) -> dict:
        return {
            key: self.quotas[key] - self.achieved.get(key, 0)
            for key in self.quotas
            if self.achieved.get(key, 0) < self.quotas[key]
        }


def draw_points(pixels_by_combo: dict, quotas: dict, d_min_m: float,
                seed: int) -> tuple[list[tuple], dict]:
    """Uniform draws per combination with a global minimum-spacing filter.

    pixels_by_combo maps combo -> list of (x, y). Candidates are visited in
    a seeded random permutation, so each draw is uniform among the
    remaining pixels; any candidate within d_min of an already retained
    point (across all combinations) is rejected. Quotas that cannot be
    met are reported as shortfalls, never fatal.
    """
    rng = np.random.default_rng(seed)
    retained: list[tuple] = []  # (x, y, combo)
    achieved: dict = {}
    d2min = d_min_m * d_min_m
    for combo in sorted(pixels_by_combo):
        quota = quotas.get(combo, 0)
        pix = pixels_by_combo[combo]
        achieved[combo] = 0
        if quota <= 0 or not pix:
            continue
        order = rng.permutation(len(pix))
        for idx in order:
            if achieved[combo] >= quota:
                break
            x, y = pix[idx]
            if d2min > 0 and any(
                (x - rx) ** 2 + (y - ry) ** 2 < d2min for rx, ry, _ in retained
            ):
                continue
            retained.append((x, y, combo))
            achieved[combo] += 1
    return retained, achieved


def satellite_grid(cfg: SatelliteGridConfig | None = None) -> list[tuple[float, float, float]]:
    """Cross product of elevation x azimuth x altitude geometries."""
    cfg = cfg if cfg is not None else SatelliteGridConfig()
    return [
        (el, az, alt)
        for el in cfg.elevations_deg
        for az in cfg.azimuths_deg
        for alt in cfg.altitudes_km
    ]


def write_manifest(design: SampleDesign, path):
    """CSV manifest; each ground point carries a round-robin geometry."""
    grid = design.satellite_grid or [(90.0, 0.0, 500.0)]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([
            "point_id", "x", "y", "cluster", "terrain", "landcover",
            "function", "elev_deg", "az_deg", "alt_km",
        ])
        for s in design.samples:
            el, az, alt = grid[s.point_id % len(grid)]
            w.writerow([
                s.point_id, repr(s.x), repr(s.y), s.cluster, s.terrain,
                s.landcover, s.function, el, az, alt,
            ])


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        rows = []
        for row in csv.DictReader(f):
            rows.append({
                "point_id": int(row["point_id"]),
                "x": float(row["x"]),
                "y": float(row["y"]),
                "cluster": int(row["cluster"]),
                "terrain": int(row["terrain"]),
                "landcover": int(row["landcover"]),
                "function": int(row["function"]),
                "elev_deg": float(row["elev_deg"]),
                "az_deg": float(row["az_deg"]),
                "alt_km": float(row["alt_km"]),
            })
        return rows


def design_from_rasters(cluster_ids, terrain_ids, landcover_ids, function_ids,
                        elevation, xs, ys, coeffs: SamplingCoeffs, budget: int,
                        s_min: int, d_min_m: float, seed: int,
                        sat_cfg: SatelliteGridConfig | None = None,
                        terrain_names: dict | None = None) -> SampleDesign:
    """Full stratified design over flattened per-pixel layers."""
    cluster_ids = np.asarray(cluster_ids)
    unique_clusters = np.unique(cluster_ids)

    infos = []
    for cid in unique_clusters:
        m = cluster_ids == cid
        infos.append(ClusterInfo(
            cluster_id=int(cid),
            size=int(m.sum()),
            mean_elevation=float(np.mean(elevation[m])),
            omega_terrain=float(np.mean([
                omega_terrain_factor(coeffs, t, terrain_names) for t in terrain_ids[m]
            ])),
            omega_function=float(np.mean([coeffs.omega_function.get(int(fc), 1.0)
                                          for fc in function_ids[m]])),
            omega_landcover=float(np.mean([coeffs.omega_landcover.get(int(lc), 1.0)
                                           for lc in landcover_ids[m]])),
        ))
    weights = cluster_weights(infos, coeffs)
    s_by_cluster = cluster_quotas(weights, budget)

    all_quotas: dict = {}
    overflow: dict = {}
    pixels_by_key: dict = {}
    for info, s_i in zip(infos, s_by_cluster):
        m = cluster_ids == info.cluster_id
        combos_here: dict = {}
        for x, y, t, fc, lc in zip(xs[m], ys[m], terrain_ids[m],
                                   function_ids[m], landcover_ids[m]):
            combo = (int(t), int(fc), int(lc))
            combos_here.setdefault(combo, []).append((float(x), float(y)))
        combos = sorted(combos_here)
        w = [combination_weight(c, coeffs, terrain_names) for c in combos]
        quotas, over = allocate_combination_quotas(combos, w, int(s_i), s_min)
        if over:
            overflow[info.cluster_id] = over
        for combo, q in quotas.items():
            key = (info.cluster_id, combo)
            all_quotas[key] = q
            pixels_by_key[key] = combos_here[combo]

    retained, achieved = draw_points(pixels_by_key, all_quotas, d_min_m, seed)
    samples = [
        GroundSample(i, x, y, key[0], key[1][0], key[1][2], key[1][1])
        for i, (x, y, key) in enumerate(retained)
    ]
    return SampleDesign(
        samples=samples, quotas=all_quotas, achieved=achieved,
        overflow=overflow, satellite_grid=satellite_grid(sat_cfg), d_min_m=d_min_m,
    )
