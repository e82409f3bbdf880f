"""Detection extraction from fused soft maps.

Three steps: excision thresholding, class-adaptive gated nearest-neighbor
association to predicted tracks, and DBSCAN on the residue. Cluster centroids
and sample covariances become the measurement set for the trackers.

Gates and the DBSCAN radius are expressed in grid cells by default; set
``units="meters"`` to interpret them in meters instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PEDESTRIAN = "pedestrian"
VEHICLE = "vehicle"


@dataclass(frozen=True)
class ClusteringConfig:
    excision_threshold: float = 2e-7
    knn_gate_pedestrian: float = 4.0
    knn_gate_vehicle: float = 6.0
    knn_gate_fixed: float | None = None  # set to disable class adaptation
    dbscan_eps: float = 3.0
    dbscan_min_pts: int = 50
    units: str = "cells"  # "cells" | "meters"

    def __post_init__(self):
        if self.excision_threshold < 0:
            raise ValueError("excision threshold must be >= 0")
        for g in (self.knn_gate_pedestrian, self.knn_gate_vehicle, self.dbscan_eps):
            if g <= 0:
                raise ValueError("gates and the DBSCAN radius must be > 0")
        if self.dbscan_min_pts < 1:
            raise ValueError("dbscan_min_pts must be >= 1")
        if self.units not in ("cells", "meters"):
            raise ValueError("units must be 'cells' or 'meters'")

    def gate_for(self, class_label):
        """Association gate for a track; unlabeled tracks get the vehicle gate."""
        if self.knn_gate_fixed is not None:
            return self.knn_gate_fixed
        return self.knn_gate_pedestrian if class_label == PEDESTRIAN else self.knn_gate_vehicle


@dataclass
class MeasurementSet:
    """Cluster centroids with per-measurement sample covariances."""

    centroids_m: np.ndarray          # (M, 2)
    covariances: np.ndarray          # (M, 2, 2)
    member_points: list              # per centroid: (N_z, 2) member positions, m
    member_values: list              # per centroid: (N_z,) map values
    counts: np.ndarray               # (M,) member counts
    provenance: list                 # per centroid: ("gated", track_id) | ("dbscan", k)

    def __len__(self):
        return len(self.centroids_m)

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 2)), np.zeros((0, 2, 2)), [], [], np.zeros(0, int), [])


def excise(soft_map, threshold):
    """Cells with value strictly above the threshold.

    Returns (cells, values): integer (N, 2) array of (ix, iy) coordinates and
    the corresponding map values.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    iy, ix = np.nonzero(soft_map.values > threshold)
    cells = np.column_stack([ix, iy]).astype(int)
    return cells, soft_map.values[iy, ix]


def _to_gate_units(points_cells, grid, units):
    if units == "cells":
        return np.asarray(points_cells, dtype=float)
    return grid.cells_to_meters(points_cells)


def _track_to_gate_units(position_m, grid, units):
    if units == "meters":
        return np.asarray(position_m, dtype=float)
    return np.array([(position_m[0] - grid.x_min_m) / grid.dx_m - 0.5,
                     (position_m[1] - grid.y_min_m) / grid.dy_m - 0.5])


def gate_assign(cells, predicted_tracks, config, grid):
    """Assign excised points to their nearest predicted track within the gate.

    ``predicted_tracks`` is a list of (track_id, position_m, class_label).
    Each point joins the nearest track if the distance is within that track's
    gate; distance ties go to the lower track id. Returns (assignments,
    residual_idx) where assignments maps track_id -> point indices.
    """
    n = len(cells)
    if n == 0 or not predicted_tracks:
        return {}, np.arange(n)
    pts = _to_gate_units(cells, grid, config.units)
    order = sorted(range(len(predicted_tracks)), key=lambda i: predicted_tracks[i][0])
    track_xy = np.array([_track_to_gate_units(predicted_tracks[i][1], grid, config.units)
                         for i in order])
    gates = np.array([config.gate_for(predicted_tracks[i][2]) for i in order])
    ids = [predicted_tracks[i][0] for i in order]

    dists = np.linalg.norm(pts[:, None, :] - track_xy[None, :, :], axis=2)
    nearest = np.argmin(dists, axis=1)  # ties -> lowest index = lowest track id
    within = dists[np.arange(n), nearest] <= gates[nearest]

    assignments = {}
    for p_idx in np.nonzero(within)[0]:
        assignments.setdefault(ids[nearest[p_idx]], []).append(int(p_idx))
    residual = np.nonzero(~within)[0]
    return assignments, residual


def dbscan(points, eps, min_pts):
    """Euclidean DBSCAN; returns labels (noise = -1), order-invariant.

    Points are processed in canonical (lexicographic) order so the clustering
    does not depend on the input ordering; a core point's neighborhood count
    includes the point itself.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = len(points)
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    canon = np.lexsort((points[:, 1], points[:, 0]))
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2)
    neighbors = d2 <= eps * eps
    counts = neighbors.sum(axis=1)
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for seed in canon:
        if visited[seed] or counts[seed] < min_pts:
            continue
        frontier = [seed]
        visited[seed] = True
        labels[seed] = cluster
        while frontier:
            q = frontier.pop()
            if counts[q] < min_pts:
                continue
            for nb in np.nonzero(neighbors[q])[0]:
                if labels[nb] == -1:
                    labels[nb] = cluster
                if not visited[nb]:
                    visited[nb] = True
                    frontier.append(nb)
        cluster += 1
    return labels


def centroids_and_covariance(clusters, grid, epsilon=1e-6):
    """Measurement set from clusters of (cells, values, provenance) triples.

    Centroids are value-weighted means of member cell centers; covariances are
    the unweighted sample covariance of member positions about the centroid
    (single-member clusters fall back to the cell-size covariance). A small
    diagonal jitter keeps every covariance positive definite.
    """
    centroids, covs, members, mvalues, counts, prov = [], [], [], [], [], []
    for cells, values, tag in clusters:
        pos = grid.cells_to_meters(cells)
        w = np.asarray(values, dtype=float)
        if len(pos) == 0:
            continue
        z = (w[:, None] * pos).sum(axis=0) / w.sum()
        nz = len(pos)
        if nz > 1:
            diff = pos - z
            r = diff.T @ diff / (nz - 1)
        else:
            r = np.diag([grid.dx_m ** 2, grid.dy_m ** 2])
        r = 0.5 * (r + r.T) + epsilon * np.eye(2)
        centroids.append(z)
        covs.append(r)
        members.append(pos)
        mvalues.append(w)
        counts.append(nz)
        prov.append(tag)
    if not centroids:
        return MeasurementSet.empty()
    return MeasurementSet(np.array(centroids), np.array(covs), members, mvalues,
                          np.array(counts, dtype=int), prov)


def extract_measurements(soft_map, predicted_tracks, config):
    """Full three-step extraction from one fused soft map.

    ``predicted_tracks`` holds (track_id, position_m, class_label) predictions
    from the previous scan; at the first scan pass an empty list and the whole
    point set goes to DBSCAN. DBSCAN noise points are discarded.
    """
    grid = soft_map.grid
    cells, values = excise(soft_map, config.excision_threshold)
    assignments, residual_idx = gate_assign(cells, predicted_tracks, config, grid)

    clusters = []
    for track_id in sorted(assignments):
        idx = assignments[track_id]
        clusters.append((cells[idx], values[idx], ("gated", track_id)))

    if len(residual_idx):
        rcells = cells[residual_idx]
        rvalues = values[residual_idx]
        pts = _to_gate_units(rcells, grid, config.units)
        labels = dbscan(pts, config.dbscan_eps, config.dbscan_min_pts)
        for k in range(labels.max() + 1 if len(labels) else 0):
            sel = labels == k
            clusters.append((rcells[sel], rvalues[sel], ("dbscan", k)))

    return centroids_and_covariance(clusters, grid)
