"""Streaks (one flash across consecutive frames) and trajectories (flash trains)."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .match import Flash3D

DEFAULT_D_MAX = 0.3
DEFAULT_DT_MAX_S = 1.0
DEFAULT_DR_MAX = 1.0


@dataclass
class Streak:
    id: int
    flashes: list[Flash3D]
    flash_ids: list[int]  # indices into the input flash list

    @property
    def start(self) -> int:
        return self.flashes[0].frame

    @property
    def end(self) -> int:
        return self.flashes[-1].frame

    @property
    def first(self) -> np.ndarray:
        return self.flashes[0].position

    @property
    def last(self) -> np.ndarray:
        return self.flashes[-1].position


@dataclass
class Trajectory:
    id: int
    streak_ids: list[int]
    start: int
    end: int


def connectivity_edges(flashes: Sequence[Flash3D], d_max: float) -> list[tuple[int, int, float]]:
    """Directed edges ``(i, j, distance)`` with ``frame_j - frame_i == 1`` and distance < d_max."""
    by_frame: dict[int, list[int]] = defaultdict(list)
    for i, f in enumerate(flashes):
        by_frame[f.frame].append(i)
    edges = []
    for k in sorted(by_frame):
        nxt = by_frame.get(k + 1)
        if not nxt:
            continue
        cur = by_frame[k]
        P = np.array([flashes[i].position for i in cur])
        Q = np.array([flashes[j].position for j in nxt])
        D = np.linalg.norm(P[:, None, :] - Q[None, :, :], axis=2)
        for a, b in zip(*np.nonzero(D < d_max)):
            edges.append((cur[a], nxt[b], float(D[a, b])))
    return edges


def _make_streaks(flashes, groups) -> list[Streak]:
    groups = [sorted(g, key=lambda i: (flashes[i].frame, i)) for g in groups]
    groups.sort(key=lambda g: (flashes[g[0]].frame, g[0]))
    return [Streak(id=n, flashes=[flashes[i] for i in g], flash_ids=list(g)) for n, g in enumerate(groups)]


def build_streaks(flashes: Sequence[Flash3D], d_max: float = DEFAULT_D_MAX, mode: str = "nearest") -> list[Streak]:
    """Partition flashes into streaks.

    ``mode="components"`` returns the raw connected components of the
    consecutive-frame proximity graph. ``mode="nearest"`` (default) first
    reduces the graph to one-to-one links by taking edges in ascending
    distance (ties: lower flash ids), so every streak is a chain with exactly
    one flash per frame.
    """
    n = len(flashes)
    if n == 0:
        return []
    edges = connectivity_edges(flashes, d_max)
    if mode == "nearest":
        edges.sort(key=lambda e: (e[2], e[0], e[1]))
        has_succ, has_pred = set(), set()
        kept = []
        for i, j, _ in edges:
            if i not in has_succ and j not in has_pred:
                has_succ.add(i)
                has_pred.add(j)
                kept.append((i, j))
        edges = [(i, j, 0.0) for i, j in kept]
    elif mode != "components":
        raise ValueError(f"unknown streak mode {mode!r}")
    if edges:
        rows = [e[0] for e in edges]
        cols = [e[1] for e in edges]
        graph = coo_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    else:
        graph = coo_matrix((n, n))
    _, labels = connected_components(graph, directed=True, connection="weak")
    groups: dict[int, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        groups[int(lab)].append(i)
    return _make_streaks(flashes, list(groups.values()))


def _link_candidates(streaks, gap_max, dr_max):
    """Eligible (predecessor, successor, distance) links."""
    out = []
    for b in streaks:
        for a in streaks:
            gap = b.start - a.end
            if 1 <= gap <= gap_max:
                d = float(np.linalg.norm(b.first - a.last))
                if d <= dr_max:
                    out.append((a.id, b.id, d))
    return out


def link_trajectories(
    streaks: Sequence[Streak],
    dt_max: float = DEFAULT_DT_MAX_S,
    dr_max: float = DEFAULT_DR_MAX,
    fps: float = 30.0,
    method: str = "greedy",
) -> list[Trajectory]:
    """Chain streaks into trajectories.

    A link joins the last flash of an earlier streak to the first flash of a
    later one when the frame gap is at most ``dt_max * fps`` and the distance
    at most ``dr_max``. ``method="greedy"`` walks streaks chronologically and
    attaches each to its nearest still-free predecessor. ``method="optimal"``
    picks the maximum number of links (then minimum total distance) by
    assignment, which makes the trajectory count monotone in the gates.
    """
    if fps <= 0:
        raise ValueError("fps must be positive")
    if not streaks:
        return []
    gap_max = dt_max * fps + 1e-9
    cands = _link_candidates(streaks, gap_max, dr_max)
    succ: dict[int, int] = {}
    pred: dict[int, int] = {}
    if method == "greedy":
        by_succ: dict[int, list[tuple[float, int]]] = defaultdict(list)
        for a, b, d in cands:
            by_succ[b].append((d, a))
        for s in sorted(streaks, key=lambda s: (s.start, s.id)):
            for d, a in sorted(by_succ.get(s.id, [])):
                if a not in succ:
                    succ[a] = s.id
                    pred[s.id] = a
                    break
    elif method == "optimal":
        if cands:
            ids = [s.id for s in streaks]
            pos = {sid: n for n, sid in enumerate(ids)}
            total = sum(d for _, _, d in cands) + 1.0
            big = total * (len(ids) + 1)
            cost = np.full((len(ids), len(ids)), 2 * big * len(ids))
            for a, b, d in cands:
                cost[pos[a], pos[b]] = d
            rows, cols = linear_sum_assignment(cost)
            for r, c in zip(rows, cols):
                if cost[r, c] < big:
                    succ[ids[r]] = ids[c]
                    pred[ids[c]] = ids[r]
    else:
        raise ValueError(f"unknown linking method {method!r}")

    by_id = {s.id: s for s in streaks}
    heads = sorted((s for s in streaks if s.id not in pred), key=lambda s: (s.start, s.id))
    out = []
    for n, head in enumerate(heads):
        chain = [head.id]
        while chain[-1] in succ:
            chain.append(succ[chain[-1]])
        out.append(Trajectory(id=n, streak_ids=chain, start=by_id[chain[0]].start, end=by_id[chain[-1]].end))
    return out


def summarize(flashes: Sequence[Flash3D], streaks: Sequence[Streak], trajectories: Sequence[Trajectory], fps: float) -> dict:
    by_id = {s.id: s for s in streaks}
    streak_len = [len(s.flashes) for s in streaks]
    traj_streaks = [len(t.streak_ids) for t in trajectories]
    traj_flashes = [sum(len(by_id[i].flashes) for i in t.streak_ids) for t in trajectories]

    def hist(values):
        out: dict[str, int] = {}
        for v in sorted(values):
            out[str(v)] = out.get(str(v), 0) + 1
        return out

    return {
        "counts": {"flashes": len(flashes), "streaks": len(streaks), "trajectories": len(trajectories)},
        "streak_length_histogram": hist(streak_len),
        "trajectory_streak_count_histogram": hist(traj_streaks),
        "trajectory_flash_count_histogram": hist(traj_flashes),
        "trajectories": [
            {
                "id": t.id,
                "start_frame": t.start,
                "end_frame": t.end,
                "duration_frames": t.end - t.start + 1,
                "duration_s": (t.end - t.start + 1) / fps,
                "n_streaks": len(t.streak_ids),
                "n_flashes": nf,
            }
            for t, nf in zip(trajectories, traj_flashes)
        ],
    }
