"""Compiled tree traversal for :mod:`sparse_advtrain.hsr`.

The per-point test multiplies and adds in coordinate order with no fused
multiply-add, matching ``hsr.lifted_scores`` bit for bit. Bounds are only used
for pruning decisions and carry a relative slack, so their rounding is free.
"""

from __future__ import annotations

import numpy as np
from numba import njit

BOUND_SLACK = 1e-10


@njit(cache=True, nogil=True)
def _emit_bulk(node, lo, hi, leaf_lo, leaf_hi, xs, xptr, alive, slot_id, out, n_out):
    for s in range(lo[node], hi[node]):
        if alive[s]:
            out[n_out] = slot_id[s]
            n_out += 1
    for t in range(xptr[leaf_lo[node]], xptr[leaf_hi[node]]):
        s = xs[t]
        if alive[s]:
            out[n_out] = slot_id[s]
            n_out += 1
    return n_out


@njit(cache=True, nogil=True)
def _score(P, s, q):
    z = P[s, 0] * q[0]
    for j in range(1, q.shape[0]):
        z = z + P[s, j] * q[j]
    return z


@njit(cache=True, nogil=True)
def query_batch(Q, Qt, tau, center, cnorm, radius, mid, mnorm, half, left, right, count,
                lo, hi, leaf_lo, leaf_hi, xs, xptr, P, alive, slot_id, out, ends, visits, checked):
    """Answer every row of Q; ids for row k land in out[k * cap:ends[k]], unsorted.

    Node bounds are in tree coordinates (queries Qt); the exact test uses P and Q.
    """
    D = Q.shape[1]
    cap = out.shape[0] // Q.shape[0]
    stack = np.empty(256, np.int64)
    for k in range(Q.shape[0]):
        q = Q[k]
        qt = Qt[k]
        qnorm = 0.0
        for j in range(D):
            qnorm += qt[j] * qt[j]
        qnorm = np.sqrt(qnorm)
        base = k * cap
        tmag = abs(tau) if np.isfinite(tau) else 0.0
        n_out = base
        nv = 0
        nc = 0
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            node = stack[sp]
            nv += 1
            if count[node] == 0:
                continue
            qc = 0.0
            qm = 0.0
            hq = 0.0
            for j in range(D):
                qc += center[node, j] * qt[j]
                qm += mid[node, j] * qt[j]
                hq += half[node, j] * abs(qt[j])
            rq = radius[node] * qnorm
            slack = BOUND_SLACK * (qnorm * (cnorm[node] + mnorm[node]) + rq + hq + tmag) + 1e-300
            upper = min(qc + rq, qm + hq)
            if upper < tau - slack:
                continue
            lower = max(qc - rq, qm - hq)
            if lower > tau + slack:
                n_out = _emit_bulk(node, lo, hi, leaf_lo, leaf_hi, xs, xptr, alive, slot_id, out, n_out)
                continue
            if left[node] < 0:
                for s in range(lo[node], hi[node]):
                    if alive[s]:
                        nc += 1
                        if _score(P, s, q) > tau:
                            out[n_out] = slot_id[s]
                            n_out += 1
                for t in range(xptr[leaf_lo[node]], xptr[leaf_hi[node]]):
                    s = xs[t]
                    if alive[s]:
                        nc += 1
                        if _score(P, s, q) > tau:
                            out[n_out] = slot_id[s]
                            n_out += 1
                continue
            stack[sp] = right[node]
            stack[sp + 1] = left[node]
            sp += 2
        ends[k] = n_out
        visits[k] = nv
        checked[k] = nc


@njit(cache=True, nogil=True)
def path_add(leaves, parent, count, delta):
    """Add delta to the count of every node from each leaf up to the root."""
    for i in range(leaves.shape[0]):
        node = leaves[i]
        while node >= 0:
            count[node] += delta
            node = parent[node]


@njit(cache=True, nogil=True)
def inflate(leaves, Y, parent, center, radius, box_lo, box_hi, slack):
    """Grow the ball and box of every ancestor of leaves[i] to contain Y[i]."""
    D = Y.shape[1]
    for i in range(leaves.shape[0]):
        node = leaves[i]
        while node >= 0:
            d2 = 0.0
            for j in range(D):
                v = Y[i, j]
                diff = v - center[node, j]
                d2 += diff * diff
                if v < box_lo[node, j]:
                    box_lo[node, j] = v
                if v > box_hi[node, j]:
                    box_hi[node, j] = v
            r = np.sqrt(d2) * (1.0 + slack)
            if r > radius[node]:
                radius[node] = r
            node = parent[node]


@njit(cache=True, nogil=True)
def route(Y, left, right, normal, offset, out):
    """Leaf reached by each row of Y when following the split hyperplanes."""
    D = Y.shape[1]
    for i in range(Y.shape[0]):
        node = 0
        while left[node] >= 0:
            proj = 0.0
            for j in range(D):
                proj += Y[i, j] * normal[node, j]
            node = left[node] if proj <= offset[node] else right[node]
        out[i] = node
