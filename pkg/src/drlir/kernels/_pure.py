"""Pure-numpy fallback for the compiled hot kernels.

Semantics here are the contract; the compiled module in ``_native.pyx`` mirrors
them operation-for-operation so either backend can run the full pipeline.
"""

from __future__ import annotations

import heapq
import math

import numpy as np


def backend_name():
    return "pure"


def pmf_epoch(U, V, u_rows, i_rows, ratings, order, lr, l2_user, l2_item):
    """One in-place SGD sweep over the ratings in the given visitation order.

    Per visit the gradient of ``(r - u.v)^2 + l2_user*|u|^2 + l2_item*|v|^2``
    is taken at the current point; both rows step simultaneously.
    """
    for t in order:
        uu = u_rows[t]
        ii = i_rows[t]
        u = U[uu]
        v = V[ii]
        err = ratings[t] - u @ v
        g_u = (-2.0 * err) * v + (2.0 * l2_user) * u
        g_v = (-2.0 * err) * u + (2.0 * l2_item) * v
        U[uu] = u - lr * g_u
        V[ii] = v - lr * g_v


def forest_collect(
    roots,
    node_left,
    node_right,
    node_plane,
    leaf_start,
    leaf_end,
    planes,
    plane_off,
    leaf_items,
    q,
    budget,
    n_items,
):
    """Collect a candidate pool from all trees via one shared priority queue.

    Entries are popped best-margin-first (ties in insertion order). Internal
    nodes push both children: the child on the query's side of the plane keeps
    the parent's priority capped by |margin|, the far child gets the negated
    margin. Stops once the deduplicated pool reaches ``budget`` or the queue
    drains. Returns (pool indices in first-seen order, popped node count).
    """
    heap: list[tuple[float, int, int]] = []
    counter = 0
    for r in roots:
        heap.append((-math.inf, counter, int(r)))
        counter += 1
    heapq.heapify(heap)
    seen = np.zeros(n_items, dtype=bool)
    pool: list[int] = []
    visited = 0
    while heap and len(pool) < budget:
        neg_p, _, node = heapq.heappop(heap)
        p = -neg_p
        visited += 1
        plane_row = node_plane[node]
        if plane_row < 0:
            for it in leaf_items[leaf_start[node]:leaf_end[node]]:
                if not seen[it]:
                    seen[it] = True
                    pool.append(int(it))
        else:
            margin = float(planes[plane_row] @ q) - plane_off[plane_row]
            heapq.heappush(heap, (-min(p, -margin), counter, int(node_left[node])))
            counter += 1
            heapq.heappush(heap, (-min(p, margin), counter, int(node_right[node])))
            counter += 1
    return np.asarray(pool, dtype=np.int64), visited
