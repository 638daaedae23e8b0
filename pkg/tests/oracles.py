"""Independent brute-force reference implementations used by the tests."""

from __future__ import annotations

import itertools
from collections import deque

import numpy as np


def flood_fill_components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    """8-connected components by BFS, each a sorted list of (row, col)."""
    H, W = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    comps = []
    for r in range(H):
        for c in range(W):
            if not mask[r, c] or seen[r, c]:
                continue
            comp = []
            q = deque([(r, c)])
            seen[r, c] = True
            while q:
                y, x = q.popleft()
                comp.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < H and 0 <= xx < W and mask[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
            comps.append(sorted(comp))
    return comps


def blob_stats(fg: np.ndarray, comp) -> tuple[float, float, int, float]:
    """(w, h, area, peak) of one component, by explicit loops."""
    m = sw = sh = 0.0
    peak = -np.inf
    for y, x in comp:
        v = float(fg[y, x])
        m += v
        sw += v * x
        sh += v * y
        peak = max(peak, v)
    return sw / m, sh / m, len(comp), peak


def union_find_components(n: int, edges) -> list[frozenset]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    groups: dict[int, set] = {}
    for i in range(n):
        groups.setdefault(find(i), set()).add(i)
    return [frozenset(g) for g in groups.values()]


def connectivity_matrix(frames, positions, d_max) -> np.ndarray:
    """C[i, j] = (frame_j - frame_i == 1) and |p_i - p_j| < d_max, by double loop."""
    n = len(frames)
    C = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(n):
            if frames[j] - frames[i] == 1:
                d = np.sqrt(sum((positions[i][k] - positions[j][k]) ** 2 for k in range(3)))
                C[i, j] = d < d_max
    return C


def nearest_one_to_one(frames, positions, d_max) -> list[tuple[int, int]]:
    """Greedy ascending-distance link selection (ties by lower ids) on the C matrix."""
    C = connectivity_matrix(frames, positions, d_max)
    cand = []
    for i, j in zip(*np.nonzero(C)):
        d = float(np.linalg.norm(np.asarray(positions[i], float) - np.asarray(positions[j], float)))
        cand.append((d, int(i), int(j)))
    cand.sort()
    used_out, used_in, links = set(), set(), []
    for _, i, j in cand:
        if i in used_out or j in used_in:
            continue
        used_out.add(i)
        used_in.add(j)
        links.append((i, j))
    return links


def exhaustive_assignment(cost: np.ndarray, tol: float) -> tuple[int, float]:
    """Best (number of pairs with cost < tol, total cost) over all partial assignments.

    More pairs beats fewer; among equally many, lower total cost wins.
    """
    n1, n2 = cost.shape
    best = (0, 0.0)
    if n1 <= n2:
        for perm in itertools.permutations(range(n2), n1):
            pairs = [(i, perm[i]) for i in range(n1) if cost[i, perm[i]] < tol]
            cand = (len(pairs), sum(cost[i, j] for i, j in pairs))
            if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
    else:
        k, tot = exhaustive_assignment(cost.T, tol)
        best = (k, tot)
    return best
