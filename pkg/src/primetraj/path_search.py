"""Reference-path search over lane connectivity.

The target is localized on the lane graph, then every predecessor and
successor chain of each root segment is enumerated depth-first until the
backward / forward distance budget is used up (or the graph dead-ends).
Forward and backward chains are joined through the root, nested duplicates
are removed, and each surviving chain becomes a resampled polyline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import Config
from .errors import DegeneratePath, NoRootSegment
from .scene import AgentState, LaneGraph, wrap_angle


@dataclass(frozen=True)
class ReferencePath:
    segment_ids: tuple[str, ...]
    points: np.ndarray  # (M, 2), spacing ~ path_point_spacing
    cum_arclength: np.ndarray  # (M,), starts at 0

    @property
    def length(self) -> float:
        return float(self.cum_arclength[-1])


def closest_point_on_polyline(point, polyline: np.ndarray):
    """Distance, foot point, unit direction and arc length of the closest point.

    Ties go to the earliest polyline segment.
    """
    p = np.asarray(point, dtype=float)
    a = polyline[:-1]
    e = np.diff(polyline, axis=0)
    seg_len2 = np.einsum("ij,ij->i", e, e)
    u = np.clip(np.einsum("ij,ij->i", p - a, e) / seg_len2, 0.0, 1.0)
    foot = a + u[:, None] * e
    dist = np.hypot(*(p - foot).T)
    k = int(np.argmin(dist))
    seg_len = np.sqrt(seg_len2)
    s = float(seg_len[:k].sum() + u[k] * seg_len[k])
    return float(dist[k]), foot[k], e[k] / seg_len[k], s


def localize(graph: LaneGraph, state: AgentState, radius: float) -> list[str]:
    """Root segments within ``radius`` of the agent, nearest first.

    Ties in distance are broken by heading alignment with the lane direction
    at the closest point, then by segment id.
    """
    if len(graph) == 0:
        raise NoRootSegment("lane graph is empty")
    ranked = []
    for sid, seg in graph.segments.items():
        dist, _, tangent, _ = closest_point_on_polyline(state.position, seg.centerline)
        if dist <= radius:
            misalign = abs(wrap_angle(state.heading - math.atan2(tangent[1], tangent[0])))
            ranked.append((round(dist, 9), misalign, sid))
    if not ranked:
        raise NoRootSegment(
            f"no lane segment within {radius} m of ({state.position[0]:.2f}, {state.position[1]:.2f})"
        )
    ranked.sort()
    return [sid for _, _, sid in ranked]


def _walk(graph: LaneGraph, start: str, budget_used: float, bound: float,
          forward: bool, visited: frozenset[str]) -> list[tuple[str, ...]]:
    """All maximal chains leaving ``start`` (excluded) in one direction.

    A chain stops as soon as its cumulative length reaches ``bound`` or it hits
    a dead end; segment ids never repeat within a chain.
    """
    out: list[tuple[str, ...]] = []

    def dfs(seg_id: str, used: float, chain: tuple[str, ...], seen: frozenset[str]):
        if used >= bound:
            out.append(chain)
            return
        seg = graph.segments[seg_id]
        nexts = [n for n in (seg.successors if forward else seg.predecessors) if n not in seen]
        if not nexts:
            out.append(chain)
            return
        for n in nexts:
            dfs(n, used + graph.segments[n].length, chain + (n,), seen | {n})

    dfs(start, budget_used, (), visited | {start})
    return out


def enumerate_chains(graph: LaneGraph, root: str, forward_dist: float, backward_dist: float,
                     origin=None) -> list[tuple[str, ...]]:
    """Raw (not yet de-duplicated) segment chains through ``root``.

    Distances are measured from the origin's projection onto the root when
    ``origin`` is given, otherwise from the root's start (forward) and end
    (backward).
    """
    seg = graph.segments[root]
    if origin is None:
        ahead, behind = seg.length, seg.length
    else:
        _, _, _, s_on_root = closest_point_on_polyline(origin, seg.centerline)
        ahead, behind = seg.length - s_on_root, s_on_root
    # forward first: on a cycle the segments ahead of the target win over
    # the ones behind it, so every segment reachable ahead is covered
    chains = []
    for fwd in _walk(graph, root, ahead, forward_dist, True, frozenset()):
        for back in _walk(graph, root, behind, backward_dist, False, frozenset(fwd)):
            chains.append(tuple(reversed(back)) + (root,) + fwd)
    return chains


def _is_contiguous_sub(short: Sequence[str], long: Sequence[str]) -> bool:
    n, m = len(short), len(long)
    if n > m:
        return False
    return any(tuple(long[i:i + n]) == tuple(short) for i in range(m - n + 1))


def dedupe_chains(chains: Iterable[Sequence[str]]) -> list[tuple[str, ...]]:
    """Drop chains that are a contiguous sub-sequence of another chain.

    Exact duplicates collapse to one. The survivors are returned in
    lexicographic order of their id sequences.
    """
    unique = sorted(set(tuple(c) for c in chains), key=lambda c: (-len(c), c))
    kept: list[tuple[str, ...]] = []
    for c in unique:
        if not any(_is_contiguous_sub(c, k) for k in kept):
            kept.append(c)
    return sorted(kept)


def dedupe_paths(paths: Sequence[ReferencePath]) -> list[ReferencePath]:
    by_ids = {p.segment_ids: p for p in paths}
    return [by_ids[ids] for ids in dedupe_chains(by_ids)]


def build_reference_path(graph: LaneGraph, segment_ids: Sequence[str], spacing: float) -> ReferencePath:
    """Concatenate centerlines and resample them at ``spacing`` by linear
    interpolation along arc length (the final point is always kept)."""
    pieces = []
    for k, sid in enumerate(segment_ids):
        c = graph.segments[sid].centerline
        if k > 0 and pieces and np.hypot(*(c[0] - pieces[-1][-1])) < 1e-9:
            c = c[1:]
        pieces.append(c)
    pts = np.concatenate(pieces)
    step = np.hypot(*np.diff(pts, axis=0).T)
    keep = np.concatenate([[True], step > 1e-9])
    pts = pts[keep]
    if len(pts) < 2:
        raise DegeneratePath(f"path {list(segment_ids)} has no extent")
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    total = cum[-1]
    s = np.arange(0.0, total, spacing)
    if total - s[-1] < 1e-6 * spacing:
        s = s[:-1]
    s = np.append(s, total)
    res = np.stack([np.interp(s, cum, pts[:, 0]), np.interp(s, cum, pts[:, 1])], axis=-1)
    rcum = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(res, axis=0).T))])
    return ReferencePath(tuple(segment_ids), res, rcum)


def search_paths(graph: LaneGraph, roots: Sequence[str], forward_dist: float,
                 backward_dist: float, spacing: float = 2.0, origin=None) -> list[ReferencePath]:
    """Potential reference paths for all roots, de-duplicated and resampled."""
    if not (forward_dist > 0 and backward_dist > 0):
        raise ValueError("forward_dist and backward_dist must be positive")
    chains = []
    for root in roots:
        chains.extend(enumerate_chains(graph, root, forward_dist, backward_dist, origin))
    return [build_reference_path(graph, ids, spacing) for ids in dedupe_chains(chains)]


def find_reference_paths(graph: LaneGraph, state: AgentState, cfg: Config) -> list[ReferencePath]:
    roots = localize(graph, state, cfg.localization_radius)
    return search_paths(graph, roots, cfg.forward_dist, cfg.backward_dist,
                        cfg.path_point_spacing, origin=state.position)
