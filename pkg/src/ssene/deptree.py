"""Dependency trees and pairwise tree distances."""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

import numpy as np


class TreeError(ValueError):
    """Head array does not describe a single rooted tree."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class DepTree:
    heads: tuple[int, ...]
    labels: tuple[str, ...] | None = None

    @property
    def n(self) -> int:
        return len(self.heads)

    @property
    def root(self) -> int:
        return self.heads.index(-1)

    def neighbours(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for child, head in enumerate(self.heads):
            if head >= 0:
                adj[child].append(head)
                adj[head].append(child)
        return adj


def validate_tree(heads: Sequence[int], labels: Sequence[str] | None = None) -> DepTree:
    """Check that ``heads`` is a single-rooted acyclic head array.

    Raises :class:`TreeError` naming the first offending token index.
    """
    heads = [int(h) for h in heads]
    n = len(heads)
    if n == 0:
        raise TreeError("empty head array")
    if labels is not None and len(labels) != n:
        raise TreeError(f"{len(labels)} labels for {n} tokens")
    roots = []
    for i, h in enumerate(heads):
        if h == -1:
            roots.append(i)
        elif not 0 <= h < n:
            raise TreeError(f"token {i}: head {h} out of range [0, {n})", index=i)
        elif h == i:
            raise TreeError(f"token {i}: head points to itself", index=i)
    if not roots:
        raise TreeError("no root (head -1)")
    if len(roots) > 1:
        raise TreeError(f"multiple roots at tokens {roots}", index=roots[1])
    # walk each token upward; a path longer than n means a cycle
    state = [0] * n  # 0 unseen, 1 on current path, 2 reaches root
    state[roots[0]] = 2
    for start in range(n):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node]
        if state[node] == 1:
            raise TreeError(f"cycle through token {node}", index=node)
        for p in path:
            state[p] = 2
    return DepTree(tuple(heads), tuple(labels) if labels is not None else None)


def _bfs(adj: list[list[int]], source: int) -> list[int]:
    dist = [-1] * len(adj)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def tree_distances(tree: DepTree) -> np.ndarray:
    """Undirected path length between every token pair, as an n x n int array.

    Each pair climbs from ``j`` until it meets an ancestor of ``i``; the two
    step counts add up to the path length through their lowest common ancestor.
    """
    n = tree.n
    heads = tree.heads
    ancestors = []
    for i in range(n):
        up = {}
        node, steps = i, 0
        while node != -1:
            up[node] = steps
            node, steps = heads[node], steps + 1
        ancestors.append(up)
    out = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        up_i = ancestors[i]
        for j in range(i + 1, n):
            node, steps = j, 0
            while node not in up_i:
                node, steps = heads[node], steps + 1
            out[i, j] = out[j, i] = steps + up_i[node]
    return out


def bfs_distances(tree: DepTree) -> np.ndarray:
    """All-pairs distances by breadth-first search from every token."""
    adj = tree.neighbours()
    return np.array([_bfs(adj, s) for s in range(tree.n)], dtype=np.int64)


def diameter(tree: DepTree) -> int:
    """Longest shortest path, by the double-BFS trick."""
    adj = tree.neighbours()
    first = _bfs(adj, 0)
    far = int(np.argmax(first))
    return int(max(_bfs(adj, far)))


def align_to_model_positions(d: np.ndarray, special_positions: Iterable[int]) -> np.ndarray:
    """Insert special (non-word) positions into a word-level distance matrix.

    ``special_positions`` are indices in the *output* matrix. Every pair that
    touches a special position gets the tree diameter plus one; word pairs keep
    their distances in order. The diagonal stays zero.
    """
    d = np.asarray(d)
    specials = sorted(set(int(p) for p in special_positions))
    n = d.shape[0]
    size = n + len(specials)
    if any(not 0 <= p < size for p in specials):
        raise ValueError(f"special positions {specials} outside [0, {size})")
    if not specials:
        return d.copy()
    far = (int(d.max()) if d.size else 0) + 1
    words = [i for i in range(size) if i not in set(specials)]
    out = np.full((size, size), far, dtype=d.dtype)
    out[np.ix_(words, words)] = d
    np.fill_diagonal(out, 0)
    return out
