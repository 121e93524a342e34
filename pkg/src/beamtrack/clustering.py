"""Density clustering of radar point clouds and the zero-doppler background filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import ValidationError

_NOISE = -1


@dataclass(frozen=True)
class DbscanParams:
    eps_m: float = 0.3
    min_pts: int = 100


@dataclass
class Cluster:
    label: int
    core_point: np.ndarray  # (2,) centroid of member (x, y)
    mean_doppler_mps: float
    point_count: int
    member_indices: list[int]
    velocity_mps: np.ndarray | None = None  # filled by the tracker once matched


def dbscan(points: np.ndarray, params: DbscanParams) -> tuple[list[Cluster], list[int]]:
    """Classic density clustering over the 3-D coordinates of a point cloud.

    points is (n, 4): x, y, z, doppler. Neighborhoods are Euclidean balls of
    eps_m in 3-D (a point counts itself). Clusters are labeled 0, 1, ... in
    discovery order with points scanned in input order; border points reachable
    from several clusters go to the first one discovered. Returns the clusters
    and the indices of noise points.
    """
    if params.eps_m <= 0:
        raise ValidationError("eps_m must be > 0")
    if params.min_pts < 1:
        raise ValidationError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return [], []
    n = pts.shape[0]
    xyz = np.ascontiguousarray(pts[:, :3])
    pairs = cKDTree(xyz).query_pairs(params.eps_m, output_type="ndarray")
    counts = np.bincount(pairs.ravel(), minlength=n) + 1  # a point counts itself
    is_core = counts >= params.min_pts
    core_idx = np.flatnonzero(is_core)

    labels = np.full(n, _NOISE, dtype=int)
    n_clusters = 0
    if core_idx.size:
        # Core points within eps of each other always share a cluster, so the
        # clusters' core memberships are the connected components of the
        # core-core adjacency graph, numbered by first appearance in scan order.
        # Cores sharing a grid cell of side eps/sqrt(3) are mutually within eps
        # (the cell diagonal is exactly eps), so cells collapse to single nodes
        # and the component search runs on the far smaller cell graph.
        core_pos = np.full(n, -1, dtype=int)
        core_pos[core_idx] = np.arange(core_idx.size)
        cells = np.floor(xyz[core_idx] / (params.eps_m / np.sqrt(3.0))).astype(np.int64)
        ucells, cell_of_core = np.unique(cells, axis=0, return_inverse=True)
        n_cells = len(ucells)

        both_core = is_core[pairs[:, 0]] & is_core[pairs[:, 1]]
        cell_a = cell_of_core[core_pos[pairs[both_core, 0]]]
        cell_b = cell_of_core[core_pos[pairs[both_core, 1]]]
        edge_key = np.unique(cell_a.astype(np.int64) * n_cells + cell_b)
        graph = coo_matrix(
            (np.ones(len(edge_key), dtype=np.int8), divmod(edge_key, n_cells)),
            shape=(n_cells, n_cells),
        )
        n_clusters, comp_of_cell = connected_components(graph, directed=False)
        comp_of_core = comp_of_cell[cell_of_core]
        first_seen = np.full(n_clusters, n, dtype=int)
        np.minimum.at(first_seen, comp_of_core, core_idx)
        rank = np.empty(n_clusters, dtype=int)
        rank[np.argsort(first_seen)] = np.arange(n_clusters)
        core_labels = rank[comp_of_core]
        labels[core_idx] = core_labels

        # Border points (non-core within eps of a core) go to the smallest
        # adjacent label, matching sequential region growing in label order.
        one_core = is_core[pairs[:, 0]] ^ is_core[pairs[:, 1]]
        bp = pairs[one_core]
        if len(bp):
            first_is_core = is_core[bp[:, 0]]
            border = np.where(first_is_core, bp[:, 1], bp[:, 0])
            reached_by = np.where(first_is_core, bp[:, 0], bp[:, 1])
            best = np.full(n, n_clusters, dtype=int)
            np.minimum.at(best, border, core_labels[core_pos[reached_by]])
            claimed = best < n_clusters
            labels[claimed] = best[claimed]

    clusters = []
    for label in range(n_clusters):
        members = np.flatnonzero(labels == label)
        clusters.append(
            Cluster(
                label=label,
                core_point=pts[members, :2].mean(axis=0),
                mean_doppler_mps=float(pts[members, 3].mean()),
                point_count=len(members),
                member_indices=members.tolist(),
            )
        )
    noise = np.flatnonzero(labels == _NOISE).tolist()
    return clusters, noise


def filter_background(
    clusters: list[Cluster], points: np.ndarray, doppler_zero_tol: float = 1e-3
) -> list[Cluster]:
    """Drop clusters whose every member has |doppler| <= doppler_zero_tol.

    Static objects return exactly zero doppler; anything alive keeps at least
    a few moving points, so one non-zero member is enough to retain a cluster.
    """
    pts = np.asarray(points, dtype=float)
    kept = []
    for c in clusters:
        if np.any(np.abs(pts[c.member_indices, 3]) > doppler_zero_tol):
            kept.append(c)
    return kept
