"""Clustering baselines and their parameter-selection procedures.

All of them consume raw (lat, lon) points. K-means and the elbow criterion
work in degree space; DBSCAN, its epsilon estimation and the silhouette score
use haversine meters. Each trained baseline can also serve as a region model
so the sample builder treats every aggregation identically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cluster import ClusterError, RegionId, RegionModel
from .geocode import GeoPoint, cell_center, child_cells, encode


def _as_array(points) -> np.ndarray:
    arr = np.asarray([(p.lat, p.lon) for p in points], dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ClusterError("points must be a sequence of GeoPoint")
    return arr


def _haversine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise great-circle distances in meters between rows of a and b."""
    lat1 = np.radians(a[:, 0])[:, None]
    lat2 = np.radians(b[:, 0])[None, :]
    d_lat = lat2 - lat1
    d_lon = np.radians(b[:, 1])[None, :] - np.radians(a[:, 1])[:, None]
    s = np.sin(d_lat / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(d_lon / 2.0) ** 2
    s = np.clip(s, 0.0, 1.0)
    return 2.0 * 6_371_000.0 * np.arctan2(np.sqrt(s), np.sqrt(1.0 - s))


def _canonical_order(arr: np.ndarray) -> np.ndarray:
    """Point order by full-precision geohash code; makes scans deterministic."""
    codes = [encode(GeoPoint(lat, lon), 12).code for lat, lon in arr]
    return np.argsort(np.array(codes), kind="stable")


# ------------------------------------------------------------------ k-means

@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss_trace: list[float]

    @property
    def wcss(self) -> float:
        return self.wcss_trace[-1]


def _kmeanspp_init(arr: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids proportionally to D^2."""
    n = len(arr)
    centroids = [arr[int(rng.integers(n))]]
    d2 = ((arr - centroids[0]) ** 2).sum(axis=1)
    while len(centroids) < k:
        total = d2.sum()
        if total <= 0:  # all remaining points coincide with a centroid
            centroids.append(arr[int(rng.integers(n))])
        else:
            idx = int(rng.choice(n, p=d2 / total))
            centroids.append(arr[idx])
        d2 = np.minimum(d2, ((arr - centroids[-1]) ** 2).sum(axis=1))
    return np.array(centroids)


def kmeans(points, k: int, rng: np.random.Generator,
           tol_deg: float = 1e-6, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations in degree space until centroids move < tol_deg."""
    arr = _as_array(points)
    n = len(arr)
    if k < 1:
        raise ClusterError("k must be >= 1")
    if k > n:
        raise ClusterError(f"k={k} exceeds {n} points")
    centroids = _kmeanspp_init(arr, k, rng)
    trace = []
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((arr[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        trace.append(float(d2[np.arange(n), labels].sum()))
        new_centroids = centroids.copy()
        for j in range(k):
            members = arr[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            # An empty cluster keeps its centroid; moving it could break
            # Lloyd's monotone-WCSS guarantee.
        move = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        if move < tol_deg:
            break
    d2 = ((arr[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    trace.append(float(d2[np.arange(n), labels].sum()))
    return KMeansResult(labels, centroids, trace)


def elbow_k(points, k_max: int, rng: np.random.Generator,
            restarts: int = 5, knee_threshold: float = 1.0) -> tuple[int, bool]:
    """Pick k by the sharpest bend of the WCSS-over-k elbow curve.

    Curvature is measured as the second difference of log(WCSS), which is
    scale-invariant: log(W[k-1] * W[k+1] / W[k]^2) is large exactly where the
    curve stops dropping by whole factors. (The raw second difference always
    peaks at k=2 for well-separated clusters because the first drop contains
    all the between-cluster variance, so it cannot locate elbows past 2.)
    Returns (k, flat_flag); a curve without a pronounced knee - the smooth
    ~1/k decay of a single blob stays far under the threshold - falls back
    to (1, True).
    """
    if k_max < 2:
        raise ClusterError("k_max must be >= 2")
    arr = _as_array(points)
    k_max = min(k_max, len(arr))
    wcss = []
    for k in range(1, k_max + 1):
        best = np.inf
        for _ in range(restarts):
            sub = np.random.default_rng(rng.integers(2 ** 32))
            best = min(best, kmeans(arr_to_points(arr), k, sub).wcss)
        wcss.append(best)
    total = wcss[0]
    if total <= 0 or len(wcss) < 3:
        return 1, True
    logw = np.log(np.maximum(wcss, 1e-12 * total))
    second = logw[:-2] - 2 * logw[1:-1] + logw[2:]
    best_i = int(np.argmax(second))
    if second[best_i] < knee_threshold:
        return 1, True
    return best_i + 2, False


def arr_to_points(arr: np.ndarray) -> list[GeoPoint]:
    return [GeoPoint(float(lat), float(lon)) for lat, lon in arr]


# ------------------------------------------------------------------- dbscan

NOISE = -1


def dbscan(points, eps_m: float, min_pts: int) -> np.ndarray:
    """Density clustering with haversine distances.

    Points are scanned in canonical geohash order, so labels do not depend on
    the input order: cluster ids count up in discovery order and border
    points join the first cluster that reaches them.
    """
    if eps_m <= 0:
        raise ClusterError("eps must be positive")
    if min_pts < 1:
        raise ClusterError("min_pts must be >= 1")
    arr = _as_array(points)
    n = len(arr)
    order = _canonical_order(arr)
    neighbors = []
    for start in range(0, n, 512):  # block-wise to bound memory on big inputs
        block = _haversine_matrix(arr[start:start + 512], arr)
        neighbors.extend(np.flatnonzero(row <= eps_m) for row in block)
    core = np.array([len(neighbors[i]) >= min_pts for i in range(n)])

    labels = np.full(n, NOISE, dtype=int)
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    cluster = 0
    for i in order:
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        frontier = [i]
        while frontier:
            next_frontier = []
            for u in frontier:
                for v in sorted(neighbors[u], key=lambda j: rank[j]):
                    if labels[v] == NOISE:
                        labels[v] = cluster
                        if core[v]:
                            next_frontier.append(v)
            frontier = next_frontier
        cluster += 1
    return labels


def kth_nearest_distances(points, k: int = 3) -> np.ndarray:
    """Sorted distance-to-kth-neighbor curve (self excluded), in meters."""
    arr = _as_array(points)
    if len(arr) < k + 1:
        raise ClusterError(f"need at least {k + 1} points for k={k} neighbor distances")
    dist = _haversine_matrix(arr, arr)
    np.fill_diagonal(dist, np.inf)
    kth = np.sort(dist, axis=1)[:, k - 1]
    return np.sort(kth)


def estimate_eps_dmdbscan(points, k: int = 3) -> list[float]:
    """Epsilon candidates from knees of the sorted k-distance curve.

    A knee is a local maximum of the curvature (second difference) of the
    smoothed curve; multi-density data yields one candidate per density
    level. A flat curve has one candidate: the distance itself.
    """
    if len(points) < 3:
        raise ClusterError("need at least 3 points")
    d = kth_nearest_distances(points, k=k)
    n = len(d)
    scale = float(d.mean())
    if scale <= 0 or (d[-1] - d[0]) < 0.05 * scale:
        return [float(d[-1])]
    window = max(3, n // 50)
    kernel = np.ones(window) / window
    smooth = np.convolve(d, kernel, mode="same")
    second = smooth[:-2] - 2 * smooth[1:-1] + smooth[2:]
    threshold = 0.25 * second.max()
    candidates = []
    i = 0
    while i < len(second):
        if second[i] >= threshold > 0:
            # Take the strongest curvature of this contiguous burst.
            j = i
            while j + 1 < len(second) and second[j + 1] >= threshold:
                j += 1
            peak = i + int(np.argmax(second[i:j + 1]))
            candidates.append(float(d[peak + 1]))
            i = j + window  # skip the rest of this knee
        else:
            i += 1
    merged: list[float] = []
    for c in sorted(candidates):
        if not merged or c > 1.25 * merged[-1]:
            merged.append(c)
    return merged or [float(d[-1])]


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient under haversine distance.

    Requires >= 2 clusters and no empty cluster; singleton clusters
    contribute 0 by the usual convention.
    """
    arr = _as_array(points)
    labels = np.asarray(labels, dtype=int)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ClusterError("silhouette needs at least two clusters")
    dist = _haversine_matrix(arr, arr)
    scores = np.zeros(len(arr))
    masks = {l: labels == l for l in uniq}
    sizes = {l: int(m.sum()) for l, m in masks.items()}
    for i in range(len(arr)):
        own = labels[i]
        if sizes[own] == 1:
            scores[i] = 0.0
            continue
        a = dist[i][masks[own]].sum() / (sizes[own] - 1)
        b = min(dist[i][masks[l]].mean() for l in uniq if l != own)
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def select_dbscan_params(points, min_pts_grid=(3, 4, 5, 8, 10), k: int = 3,
                         max_points: int = 2000, seed: int = 0) -> tuple[float, int]:
    """Pick (eps, min_pts) by the best silhouette over the candidate grid.

    Selection runs on a subsample when the input is large; the quadratic
    silhouette matrix is the limit, not the clustering itself.
    """
    if len(points) > max_points:
        idx = np.random.default_rng(seed).choice(len(points), max_points, replace=False)
        points = [points[i] for i in sorted(idx)]
    best = (np.inf, 0, -2.0)
    for eps in estimate_eps_dmdbscan(points, k=k):
        for m in min_pts_grid:
            labels = dbscan(points, eps, m)
            clustered = labels != NOISE
            if clustered.sum() < 2 or len(np.unique(labels[clustered])) < 2:
                continue
            sub_points = [points[i] for i in np.flatnonzero(clustered)]
            score = silhouette(sub_points, labels[clustered])
            if score > best[2]:
                best = (eps, m, score)
    if best[1] == 0:
        raise ClusterError("no (eps, min_pts) combination produced >= 2 clusters")
    return best[0], best[1]


# ---------------------------------------------------------------------- som

class SOMModel(RegionModel):
    """Trained self-organizing map used as a clustering of the input points."""

    def __init__(self, weights: np.ndarray, rows: int, cols: int,
                 norm_min: np.ndarray, norm_range: np.ndarray,
                 train_points: np.ndarray, train_bmu: np.ndarray,
                 quantization_errors: list[float]):
        self.weights = weights
        self.rows = rows
        self.cols = cols
        self._norm_min = norm_min
        self._norm_range = norm_range
        self._train_points = train_points
        self._train_bmu = train_bmu
        self.quantization_errors = quantization_errors
        self._nonempty = np.unique(train_bmu)

    def _normalize(self, arr: np.ndarray) -> np.ndarray:
        return (arr - self._norm_min) / self._norm_range

    def n_clusters(self) -> int:
        return len(self._nonempty)

    def unit_of(self, point: GeoPoint) -> int:
        x = self._normalize(np.array([[point.lat, point.lon]]))[0]
        d2 = ((self.weights - x) ** 2).sum(axis=1)
        # Restrict to units that absorbed training points, so every region
        # a consumer sees is a real cluster.
        k = self._nonempty[int(np.argmin(d2[self._nonempty]))]
        return int(k)

    def assign(self, point: GeoPoint) -> RegionId:
        u = self.unit_of(point)
        return RegionId("som", f"{u // self.cols},{u % self.cols}")

    def _unit_points(self, region: RegionId) -> np.ndarray:
        r, c = (int(v) for v in region.key.split(","))
        u = r * self.cols + c
        pts = self._train_points[self._train_bmu == u]
        if not len(pts):
            raise ClusterError(f"som unit {region.key} has no training points")
        return pts

    def region_center(self, region: RegionId) -> GeoPoint:
        pts = self._unit_points(region)
        return GeoPoint(float(pts[:, 0].mean()), float(pts[:, 1].mean()))

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        pts = self._unit_points(region)
        return sorted({encode(GeoPoint(lat, lon), precision).code for lat, lon in pts})


def som_train(points, map_rows: int, map_cols: int, epochs: int,
              rng: np.random.Generator) -> SOMModel:
    """Online Kohonen training with Gaussian neighborhood.

    The neighborhood radius decays exponentially from max(rows, cols)/2 to 1
    over the epoch budget and the learning rate from 0.5 to 0.01.
    """
    if map_rows < 1 or map_cols < 1:
        raise ClusterError("map dimensions must be >= 1")
    arr = _as_array(points)
    lo = arr.min(axis=0)
    rng_span = arr.max(axis=0) - lo
    rng_span[rng_span == 0] = 1.0
    data = (arr - lo) / rng_span

    n_units = map_rows * map_cols
    weights = rng.random((n_units, 2))
    grid = np.stack(np.divmod(np.arange(n_units), map_cols), axis=1).astype(float)

    sigma0 = max(map_rows, map_cols) / 2.0
    lr0, lr1 = 0.5, 0.01
    total = max(1, epochs)
    q_errors = []
    for epoch in range(total):
        frac = epoch / total
        sigma = max(1.0, sigma0 * (1.0 / sigma0) ** frac) if sigma0 > 1 else 1.0
        lr = lr0 * (lr1 / lr0) ** frac
        order = rng.permutation(len(data))
        sq_err = 0.0
        for idx in order:
            x = data[idx]
            d2 = ((weights - x) ** 2).sum(axis=1)
            bmu = int(np.argmin(d2))
            sq_err += float(np.sqrt(d2[bmu]))
            g2 = ((grid - grid[bmu]) ** 2).sum(axis=1)
            h = np.exp(-g2 / (2.0 * sigma * sigma))
            weights += lr * h[:, None] * (x - weights)
        q_errors.append(sq_err / len(data))

    d2 = ((data[:, None, :] - weights[None, :, :]) ** 2).sum(axis=2)
    bmu = d2.argmin(axis=1)
    return SOMModel(weights, map_rows, map_cols, lo, rng_span, arr, bmu, q_errors)


# ------------------------------------------------- baseline region wrappers

class KMeansRegionModel(RegionModel):
    """Nearest-centroid assignment over a k-means result."""

    def __init__(self, result: KMeansResult, train_points: np.ndarray):
        self.result = result
        self._train_points = train_points

    def assign(self, point: GeoPoint) -> RegionId:
        d2 = ((self.result.centroids - np.array([point.lat, point.lon])) ** 2).sum(axis=1)
        return RegionId("kmeans", str(int(np.argmin(d2))))

    def region_center(self, region: RegionId) -> GeoPoint:
        c = self.result.centroids[int(region.key)]
        return GeoPoint(float(c[0]), float(c[1]))

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        pts = self._train_points[self.result.labels == int(region.key)]
        return sorted({encode(GeoPoint(lat, lon), precision).code for lat, lon in pts})


class DBSCANRegionModel(RegionModel):
    """Density clusters plus the same threshold/fallback rule as grid growing."""

    def __init__(self, labels: np.ndarray, train_points: np.ndarray,
                 distance_threshold_m: float = 400.0, fallback_precision: int = 6):
        clustered = labels != NOISE
        if not clustered.any():
            raise ClusterError("dbscan produced only noise; cannot build regions")
        self.labels = labels[clustered]
        self._points = train_points[clustered]
        self.distance_threshold_m = distance_threshold_m
        self.fallback_precision = fallback_precision
        self.overflow: dict[str, RegionId] = {}

    def assign(self, point: GeoPoint) -> RegionId:
        d = _haversine_matrix(np.array([[point.lat, point.lon]]), self._points)[0]
        k = int(np.argmin(d))
        if d[k] < self.distance_threshold_m:
            return RegionId("dbscan", str(int(self.labels[k])))
        base = encode(point, self.fallback_precision).code
        region = self.overflow.setdefault(base, RegionId("fallback", base))
        return region

    def region_center(self, region: RegionId) -> GeoPoint:
        if region.kind == "fallback":
            return cell_center(region.key)
        pts = self._points[self.labels == int(region.key)]
        return GeoPoint(float(pts[:, 0].mean()), float(pts[:, 1].mean()))

    def member_cells(self, region: RegionId, precision: int) -> list[str]:
        if region.kind == "fallback":
            return list(child_cells(region.key, precision))
        pts = self._points[self.labels == int(region.key)]
        return sorted({encode(GeoPoint(lat, lon), precision).code for lat, lon in pts})
