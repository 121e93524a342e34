"""Frame-to-frame cluster association and track label maintenance.

Consecutive frames are associated by an exact minimum-cost assignment on core
point distances. A matched cluster whose displacement is physically implausible
(at or beyond the walking-speed threshold) is deleted outright; survivors
inherit the previous label and gain a displacement velocity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import Cluster
from .errors import ValidationError


@dataclass(frozen=True)
class ThresholdParams:
    v_mean_mps: float
    v_std_mps: float
    k_sigma: float = 3.0


@dataclass
class ClusterFrame:
    frame_index: int
    clusters: list[Cluster]

    def by_label(self) -> dict[int, Cluster]:
        return {c.label: c for c in self.clusters}


@dataclass
class Matching:
    pairs: list[tuple[int, int]]  # (prev_label, curr_label), ascending by prev
    unmatched_prev: list[int]
    unmatched_curr: list[int]
    total_cost_m: float


def displacement_threshold(params: ThresholdParams, frame_time_s: float) -> float:
    """Maximum plausible core-point displacement in one frame."""
    if frame_time_s <= 0:
        raise ValidationError("frame_time_s must be > 0")
    if params.v_mean_mps < 0 or params.v_std_mps < 0:
        raise ValidationError("speed statistics must be >= 0")
    return (params.v_mean_mps + params.k_sigma * params.v_std_mps) * frame_time_s


def _canonical_cost(pairs: list[tuple[int, int]], dist: np.ndarray) -> float:
    total = 0.0
    for r, c in sorted(pairs):
        total += dist[r, c]
    return total


def _optimal_completion(
    dist: np.ndarray, rows_free: list[int], cols_free: list[int]
) -> list[tuple[int, int]]:
    if not rows_free or not cols_free:
        return []
    sub = dist[np.ix_(rows_free, cols_free)]
    rr, cc = linear_sum_assignment(sub)
    return [(rows_free[a], cols_free[b]) for a, b in zip(rr, cc)]


def match_clusters(prev: ClusterFrame, curr: ClusterFrame) -> Matching:
    """Exact min-cost injective matching of cluster core points across frames.

    Matches min(|prev|, |curr|) pairs minimizing the summed Euclidean core
    distance. Cost ties are resolved deterministically: among optimal
    assignments, the sorted (prev_label, curr_label) pair list that compares
    lexicographically smallest wins.
    """
    prev_sorted = sorted(prev.clusters, key=lambda c: c.label)
    curr_sorted = sorted(curr.clusters, key=lambda c: c.label)
    if not prev_sorted or not curr_sorted:
        return Matching(
            pairs=[],
            unmatched_prev=[c.label for c in prev_sorted],
            unmatched_curr=[c.label for c in curr_sorted],
            total_cost_m=0.0,
        )
    p_cores = np.array([c.core_point for c in prev_sorted])
    c_cores = np.array([c.core_point for c in curr_sorted])
    diff = p_cores[:, None, :] - c_cores[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    n_rows, n_cols = dist.shape
    n_pairs = min(n_rows, n_cols)

    best_pairs = _optimal_completion(dist, list(range(n_rows)), list(range(n_cols)))
    best_cost = _canonical_cost(best_pairs, dist)

    # lexicographic refinement: greedily fix the smallest (row, col) pair that
    # still completes to an assignment of exactly the optimal cost; sorted pair
    # lists have strictly increasing rows, so candidates scan rows past the
    # last fixed one
    for _attempt in range(8):
        chosen: list[tuple[int, int]] = []
        used_rows: set[int] = set()
        used_cols: set[int] = set()
        last_row = -1
        improved = False
        while len(chosen) < n_pairs:
            placed = False
            for r in range(last_row + 1, n_rows):
                for c in range(n_cols):
                    if c in used_cols:
                        continue
                    rows_free = [x for x in range(n_rows) if x not in used_rows and x != r]
                    cols_free = [x for x in range(n_cols) if x not in used_cols and x != c]
                    completion = _optimal_completion(dist, rows_free, cols_free)
                    total = _canonical_cost(chosen + [(r, c)] + completion, dist)
                    if total < best_cost:
                        # resummation order found a lower canonical total; adopt it
                        best_cost = total
                        best_pairs = chosen + [(r, c)] + completion
                        improved = True
                        break
                    if total == best_cost:
                        chosen.append((r, c))
                        used_rows.add(r)
                        used_cols.add(c)
                        last_row = r
                        placed = True
                        break
                if placed or improved:
                    break
            if not placed:
                break
        if len(chosen) == n_pairs:
            best_pairs = chosen
            break
        if not improved:
            break  # keep the plain assignment; cost is still optimal

    pairs = sorted(
        (prev_sorted[r].label, curr_sorted[c].label) for r, c in best_pairs
    )
    matched_prev = {p for p, _ in pairs}
    matched_curr = {c for _, c in pairs}
    return Matching(
        pairs=pairs,
        unmatched_prev=[c.label for c in prev_sorted if c.label not in matched_prev],
        unmatched_curr=[c.label for c in curr_sorted if c.label not in matched_curr],
        total_cost_m=_canonical_cost(best_pairs, dist),
    )


def update_clusters(
    prev: ClusterFrame | None,
    curr_clusters: list[Cluster],
    threshold_m: float,
    frame_time_s: float,
    next_label: int,
    frame_index: int,
) -> tuple[ClusterFrame, int]:
    """Carry track labels from the previous frame onto this frame's clusters.

    With no previous clusters, every current cluster is adopted under a fresh
    label with no velocity. Otherwise matched clusters that moved less than
    threshold_m inherit the previous label and get a displacement velocity;
    matched clusters at or beyond the threshold are deleted as implausible
    jumps; unmatched current clusters get fresh labels. Unmatched previous
    clusters simply disappear (no coasting). Returns the new frame and the
    advanced label counter.
    """
    if frame_time_s <= 0:
        raise ValidationError("frame_time_s must be > 0")
    out: list[Cluster] = []
    if prev is None or not prev.clusters:
        for c in curr_clusters:
            out.append(replace(c, label=next_label, velocity_mps=None))
            next_label += 1
        return ClusterFrame(frame_index=frame_index, clusters=out), next_label

    curr_frame = ClusterFrame(frame_index=frame_index, clusters=curr_clusters)
    matching = match_clusters(prev, curr_frame)
    prev_by_label = prev.by_label()
    curr_by_label = curr_frame.by_label()

    matched_curr = set()
    for prev_label, curr_label in matching.pairs:
        matched_curr.add(curr_label)
        p = prev_by_label[prev_label]
        c = curr_by_label[curr_label]
        disp = c.core_point - p.core_point
        if float(np.hypot(disp[0], disp[1])) >= threshold_m:
            continue  # implausible jump: delete
        out.append(replace(c, label=prev_label, velocity_mps=disp / frame_time_s))
    for c in curr_clusters:
        if c.label not in matched_curr:
            out.append(replace(c, label=next_label, velocity_mps=None))
            next_label += 1
    out.sort(key=lambda c: c.label)
    return ClusterFrame(frame_index=frame_index, clusters=out), next_label
