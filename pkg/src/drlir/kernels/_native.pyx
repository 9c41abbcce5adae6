# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: factor-model SGD sweep and forest traversal.

Mirrors ``_pure`` operation-for-operation; only float summation order inside
dot products may differ, so cross-backend results agree to the last few ulps
rather than bit-for-bit. Within one backend everything is deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def backend_name():
    return "native"


def pmf_epoch(
    double[:, ::1] U,
    double[:, ::1] V,
    cnp.int64_t[::1] u_rows,
    cnp.int64_t[::1] i_rows,
    double[::1] ratings,
    cnp.int64_t[::1] order,
    double lr,
    double l2_user,
    double l2_item,
):
    """One in-place SGD sweep over the ratings in the given visitation order."""
    cdef Py_ssize_t m = U.shape[1]
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t idx, k, t, uu, ii
    cdef double dot, err, uk, vk
    with nogil:
        for idx in range(n):
            t = <Py_ssize_t> order[idx]
            uu = <Py_ssize_t> u_rows[t]
            ii = <Py_ssize_t> i_rows[t]
            dot = 0.0
            for k in range(m):
                dot += U[uu, k] * V[ii, k]
            err = ratings[t] - dot
            # read both rows before writing either: the per-visit gradient is
            # taken at the current point and the rows step simultaneously
            for k in range(m):
                uk = U[uu, k]
                vk = V[ii, k]
                U[uu, k] = uk - lr * ((-2.0 * err) * vk + (2.0 * l2_user) * uk)
                V[ii, k] = vk - lr * ((-2.0 * err) * uk + (2.0 * l2_item) * vk)


cdef inline bint _entry_less(double ap, cnp.int64_t ac, double bp, cnp.int64_t bc) noexcept nogil:
    # matches tuple ordering on (neg_priority, counter); counters are unique
    if ap < bp:
        return True
    if ap > bp:
        return False
    return ac < bc


cdef inline void _sift_up(double* hp, cnp.int64_t* hc, cnp.int64_t* hn, Py_ssize_t pos) noexcept nogil:
    cdef Py_ssize_t parent
    cdef double p
    cdef cnp.int64_t c, node
    p = hp[pos]
    c = hc[pos]
    node = hn[pos]
    while pos > 0:
        parent = (pos - 1) >> 1
        if _entry_less(p, c, hp[parent], hc[parent]):
            hp[pos] = hp[parent]
            hc[pos] = hc[parent]
            hn[pos] = hn[parent]
            pos = parent
        else:
            break
    hp[pos] = p
    hc[pos] = c
    hn[pos] = node


cdef inline void _sift_down(double* hp, cnp.int64_t* hc, cnp.int64_t* hn, Py_ssize_t size) noexcept nogil:
    cdef Py_ssize_t pos = 0
    cdef Py_ssize_t child
    cdef double p
    cdef cnp.int64_t c, node
    p = hp[0]
    c = hc[0]
    node = hn[0]
    while True:
        child = 2 * pos + 1
        if child >= size:
            break
        if child + 1 < size and _entry_less(hp[child + 1], hc[child + 1], hp[child], hc[child]):
            child += 1
        if _entry_less(hp[child], hc[child], p, c):
            hp[pos] = hp[child]
            hc[pos] = hc[child]
            hn[pos] = hn[child]
            pos = child
        else:
            break
    hp[pos] = p
    hc[pos] = c
    hn[pos] = node


def forest_collect(
    cnp.int64_t[::1] roots,
    cnp.int64_t[::1] node_left,
    cnp.int64_t[::1] node_right,
    cnp.int64_t[::1] node_plane,
    cnp.int64_t[::1] leaf_start,
    cnp.int64_t[::1] leaf_end,
    double[:, ::1] planes,
    double[::1] plane_off,
    cnp.int64_t[::1] leaf_items,
    double[::1] q,
    Py_ssize_t budget,
    Py_ssize_t n_items,
):
    """Collect a candidate pool from all trees via one shared priority queue.

    Same contract as the fallback: best-margin-first pops with insertion-order
    ties, dedup into first-seen order, stop at ``budget``. Returns the pool as
    int64 plus the popped node count.
    """
    cdef Py_ssize_t n_nodes = node_left.shape[0]
    cdef Py_ssize_t n_roots = roots.shape[0]
    cdef Py_ssize_t m = q.shape[0]

    # each node enters the heap at most once (one parent per node)
    heap_p_arr = np.empty(n_nodes + n_roots + 1, dtype=np.float64)
    heap_c_arr = np.empty(n_nodes + n_roots + 1, dtype=np.int64)
    heap_n_arr = np.empty(n_nodes + n_roots + 1, dtype=np.int64)
    pool_arr = np.empty(n_items, dtype=np.int64)
    seen_arr = np.zeros(n_items, dtype=np.uint8)

    cdef double[::1] heap_p = heap_p_arr
    cdef cnp.int64_t[::1] heap_c = heap_c_arr
    cdef cnp.int64_t[::1] heap_n = heap_n_arr
    cdef cnp.int64_t[::1] pool = pool_arr
    cdef cnp.uint8_t[::1] seen = seen_arr

    cdef double* hp = &heap_p[0]
    cdef cnp.int64_t* hc = &heap_c[0]
    cdef cnp.int64_t* hn = &heap_n[0]

    cdef Py_ssize_t heap_size = 0
    cdef Py_ssize_t pool_len = 0
    cdef Py_ssize_t visited = 0
    cdef cnp.int64_t counter = 0
    cdef Py_ssize_t i, k, node, plane_row
    cdef cnp.int64_t it
    cdef double neg_p, p, margin, child_p

    with nogil:
        for i in range(n_roots):
            hp[heap_size] = -INFINITY
            hc[heap_size] = counter
            hn[heap_size] = roots[i]
            heap_size += 1
            counter += 1
            _sift_up(hp, hc, hn, heap_size - 1)

        while heap_size > 0 and pool_len < budget:
            neg_p = hp[0]
            node = <Py_ssize_t> hn[0]
            heap_size -= 1
            if heap_size > 0:
                hp[0] = hp[heap_size]
                hc[0] = hc[heap_size]
                hn[0] = hn[heap_size]
                _sift_down(hp, hc, hn, heap_size)
            p = -neg_p
            visited += 1
            plane_row = <Py_ssize_t> node_plane[node]
            if plane_row < 0:
                for i in range(leaf_start[node], leaf_end[node]):
                    it = leaf_items[i]
                    if seen[it] == 0:
                        seen[it] = 1
                        pool[pool_len] = it
                        pool_len += 1
            else:
                margin = 0.0
                for k in range(m):
                    margin += planes[plane_row, k] * q[k]
                margin -= plane_off[plane_row]

                child_p = p if p < -margin else -margin
                hp[heap_size] = -child_p
                hc[heap_size] = counter
                hn[heap_size] = node_left[node]
                heap_size += 1
                counter += 1
                _sift_up(hp, hc, hn, heap_size - 1)

                child_p = p if p < margin else margin
                hp[heap_size] = -child_p
                hc[heap_size] = counter
                hn[heap_size] = node_right[node]
                heap_size += 1
                counter += 1
                _sift_up(hp, hc, hn, heap_size - 1)

    return pool_arr[:pool_len].copy(), visited
