"""Exact dynamic half-space range reporting.

Stores points p in R^D (here the lifted neurons (w_r || b_r)) and reports
``{id : <q, p_id> > tau}`` for a query vector q. The structure is a binary
space partition. Each node keeps a bounding ball (center c, radius r) and an
axis-aligned bounding box; the tighter of the two gives the range
[lower, upper] of <q, p> over the node (for the ball: <q, c> -+ r |q|):

* a node is pruned when ``upper < tau`` (nothing inside can qualify),
* bulk-reported when ``lower > tau`` (everything inside qualifies),
* otherwise its children are visited; leaves are checked point by point.

Both bound tests carry a small relative slack so that floating-point error in
the bound can never disagree with the exact per-point predicate. Nodes inside
the slack band are simply descended into, so results are exact with respect
to :func:`lifted_scores`, which is also what :func:`brute_force_query` uses.

Queries run as a compiled depth-first traversal. A vectorized level-by-level
traversal in numpy serves as the debug reference and asserts that every prune
and bulk report it makes is sound.

Dynamic updates: a removal tombstones the point's slot. An insertion is
routed down the split hyperplanes to a leaf; if the id's tombstoned slot sits
in that leaf it is revived in place, otherwise the point is appended to the
leaf's overflow list. Every ancestor ball and box is grown to contain it.
The whole tree is rebuilt once (tombstones + overflow) exceeds
``rebuild_ratio`` of the live count or a leaf grows past ``2 * leaf_size``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

_BALL_SLACK = 1e-13
_BOUND_SLACK = _kernels.BOUND_SLACK


class DuplicateIdError(KeyError):
    """Insert of an id that is already live in the index."""


class UnknownIdError(KeyError):
    """Removal of an id that is not live in the index."""


def lifted_scores(P: np.ndarray, q: np.ndarray) -> np.ndarray:
    """<q, p> for each row p of P, accumulated in coordinate order.

    ``q`` may be a single vector or one vector per row of P.
    """
    if q.ndim == 1:
        acc = P[:, 0] * q[0]
        for j in range(1, P.shape[1]):
            acc = acc + P[:, j] * q[j]
    else:
        acc = P[:, 0] * q[:, 0]
        for j in range(1, P.shape[1]):
            acc = acc + P[:, j] * q[:, j]
    return acc


def _query_frame(sample: np.ndarray, dim: int):
    """Rotation and per-axis scale that weight directions by the query second moment.

    Tree coordinates are y = (p @ R) * scale and queries map to (q @ R) / scale,
    so <q, p> is preserved while splits favour directions queries care about.
    """
    if sample.ndim != 2 or sample.shape[1] != dim or sample.shape[0] == 0:
        raise ValueError(f"query_sample must have shape (k, {dim})")
    M = sample.T @ sample / sample.shape[0]
    lam, R = np.linalg.eigh(M)
    lam = np.maximum(lam, 0.0)
    # floor keeps directions the sample never uses finite
    scale = np.sqrt(lam + 1e-3 * max(lam.max(), 1e-300))
    return R, scale


def brute_force_query(points, q, tau: float, ids=None) -> np.ndarray:
    """Linear scan; returns sorted ids (row numbers by default) with <q, p> > tau."""
    q = np.asarray(q, dtype=float)
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        return np.zeros(0, dtype=np.int64)
    if P.ndim != 2 or P.shape[1] != q.shape[0]:
        raise ValueError(f"query dimension {q.shape[0]} does not match points {P.shape}")
    hit = np.flatnonzero(lifted_scores(P, q) > tau)
    if ids is None:
        return hit.astype(np.int64)
    return np.sort(np.asarray(ids, dtype=np.int64)[hit])


def _expand_ranges(starts: np.ndarray, ends: np.ndarray, labels: np.ndarray):
    """Concatenate integer ranges [s, e) and carry a label for each element."""
    lengths = ends - starts
    keep = lengths > 0
    starts, lengths, labels = starts[keep], lengths[keep], labels[keep]
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    offsets = np.cumsum(lengths) - lengths
    pos = np.arange(total, dtype=np.int64) - np.repeat(offsets, lengths) + np.repeat(starts, lengths)
    return pos, np.repeat(labels, lengths)


@dataclass
class QueryStats:
    queries: int = 0
    visits: int = 0
    reported: int = 0
    checked: int = 0


@dataclass
class HalfSpaceIndex:
    """Dynamic exact half-space reporting index over points in R^dim."""

    dim: int
    leaf_size: int = 32
    split: str = "axis"  # or "random"
    rebuild_ratio: float = 0.25
    seed: int = 0
    query_sample: np.ndarray | None = field(default=None, repr=False)
    stats: QueryStats = field(default_factory=QueryStats)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        if self.split not in ("axis", "random"):
            raise ValueError(f"unknown split rule {self.split!r}")
        self._frame = None
        if self.query_sample is not None:
            self._frame = _query_frame(np.asarray(self.query_sample, dtype=float), self.dim)
        self.rebuilds = 0
        self.last_visits = np.zeros(0, dtype=np.int64)
        self._set_points(np.zeros(0, dtype=np.int64), np.zeros((0, self.dim)))

    # ------------------------------------------------------------------ build

    @classmethod
    def build(cls, points, ids=None, **kwargs) -> "HalfSpaceIndex":
        P = np.asarray(points, dtype=float)
        if P.ndim != 2:
            raise ValueError("points must be a 2-d array of row vectors")
        index = cls(dim=P.shape[1], **kwargs)
        ids = np.arange(P.shape[0], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if ids.shape != (P.shape[0],):
            raise ValueError("ids must have one entry per point")
        if ids.size and ids.min() < 0:
            raise ValueError("ids must be non-negative")
        if np.unique(ids).size != ids.size:
            raise DuplicateIdError("duplicate id in build input")
        index._set_points(ids, P)
        return index

    def _to_tree(self, P: np.ndarray) -> np.ndarray:
        if self._frame is None:
            return P
        R, scale = self._frame
        return (P @ R) * scale

    def _query_to_tree(self, Q: np.ndarray) -> np.ndarray:
        if self._frame is None:
            return Q
        R, scale = self._frame
        return np.ascontiguousarray((Q @ R) / scale)

    def _set_points(self, ids: np.ndarray, P: np.ndarray):
        """(Re)build the tree over the given live points."""
        n = ids.shape[0]
        Y = self._to_tree(P)
        rng = np.random.default_rng([self.seed, self.rebuilds])
        perm = np.arange(n, dtype=np.int64)
        centers, radii, left, right, lo, hi, normals, offsets = [], [], [], [], [], [], [], []
        parent, leaf_nodes = [], []
        box_lo, box_hi = [], []
        node_leaf_lo, node_leaf_hi = [], []

        def make(start, end, par):
            node = len(centers)
            sub = Y[perm[start:end]]
            c = sub.mean(axis=0)
            r = float(np.sqrt(((sub - c) ** 2).sum(axis=1)).max())
            centers.append(c)
            radii.append(r * (1.0 + _BALL_SLACK))
            box_lo.append(sub.min(axis=0))
            box_hi.append(sub.max(axis=0))
            parent.append(par)
            lo.append(start)
            hi.append(end)
            left.append(-1)
            right.append(-1)
            normals.append(np.zeros(self.dim))
            offsets.append(0.0)
            node_leaf_lo.append(len(leaf_nodes))
            node_leaf_hi.append(-1)
            cnt = end - start
            if cnt <= self.leaf_size:
                leaf_nodes.append(node)
                node_leaf_hi[node] = len(leaf_nodes)
                return node
            if self.split == "axis":
                dimk = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
                normal = np.zeros(self.dim)
                normal[dimk] = 1.0
                proj = sub[:, dimk].copy()
            else:
                normal = rng.normal(size=self.dim)
                normal /= np.linalg.norm(normal)
                proj = sub @ normal
            # lower median, ties broken by id
            order = np.lexsort((ids[perm[start:end]], proj))
            perm[start:end] = perm[start:end][order]
            mid = (cnt + 1) // 2
            normals[node] = normal
            offsets[node] = float(proj[order[mid - 1]])
            left[node] = make(start, start + mid, node)
            right[node] = make(start + mid, end, node)
            node_leaf_hi[node] = len(leaf_nodes)
            return node

        if n:
            make(0, n, -1)
        self._P = P[perm].copy()
        self._Y = self._P if self._frame is None else Y[perm].copy()
        self._slot_id = ids[perm].copy()
        self._alive = np.ones(n, dtype=bool)
        self._n_slots = n
        nn = len(centers)
        D = self.dim
        self._center = np.array(centers).reshape(nn, D)
        self._radius = np.array(radii, dtype=float)
        self._box_lo = np.array(box_lo).reshape(nn, D)
        self._box_hi = np.array(box_hi).reshape(nn, D)
        self._left = np.array(left, dtype=np.int64)
        self._right = np.array(right, dtype=np.int64)
        self._lo = np.array(lo, dtype=np.int64)
        self._hi = np.array(hi, dtype=np.int64)
        self._normal = np.array(normals).reshape(nn, D)
        self._offset = np.array(offsets, dtype=float)
        self._parent = np.array(parent, dtype=np.int64)
        self._leaf_node = np.array(leaf_nodes, dtype=np.int64)
        self._leaf_lo = np.array(node_leaf_lo, dtype=np.int64)
        self._leaf_hi = np.array(node_leaf_hi, dtype=np.int64)
        self._node_leaf = np.full(nn, -1, dtype=np.int64)
        self._node_leaf[self._leaf_node] = np.arange(len(leaf_nodes))
        # live count per node: the build range has no tombstones yet
        self._count = self._hi - self._lo
        self._slot_leaf = np.zeros(n, dtype=np.int64)
        for k, node in enumerate(leaf_nodes):
            self._slot_leaf[self._lo[node]:self._hi[node]] = k
        self._build_slots = n
        self._slot_of = np.full(int(ids.max()) + 1 if n else 0, -1, dtype=np.int64)
        self._slot_of[self._slot_id] = np.arange(n)
        self._extra = []  # overflow slots (appended after the build slots)
        self._extras_dirty = True
        self._bounds_dirty = True
        self._tombstones = 0

    # ------------------------------------------------------------- accessors

    def __len__(self) -> int:
        return int(self._count[0]) if self._count.size else 0

    @property
    def node_count(self) -> int:
        return int(self._center.shape[0])

    @property
    def depth(self) -> int:
        if not self.node_count:
            return 0
        depth = np.zeros(self.node_count, dtype=np.int64)
        for node in range(1, self.node_count):  # parents precede children
            depth[node] = depth[self._parent[node]] + 1
        return int(depth.max()) + 1

    def live_ids(self) -> np.ndarray:
        alive = self._alive[: self._n_slots]
        return np.sort(self._slot_id[: self._n_slots][alive])

    def live_points(self) -> tuple[np.ndarray, np.ndarray]:
        """(ids, points) of all live entries, sorted by id."""
        slots = np.flatnonzero(self._alive[: self._n_slots])
        order = np.argsort(self._slot_id[slots], kind="stable")
        slots = slots[order]
        return self._slot_id[slots].copy(), self._P[slots].copy()

    def contains(self, id_: int) -> bool:
        return 0 <= id_ < self._slot_of.shape[0] and self._slot_of[id_] >= 0 and bool(self._alive[self._slot_of[id_]])

    def _live_mask(self, ids: np.ndarray) -> np.ndarray:
        ok = (ids >= 0) & (ids < self._slot_of.shape[0])
        slots = np.where(ok, self._slot_of[np.where(ok, ids, 0)], -1)
        return ok & (slots >= 0) & self._alive[np.maximum(slots, 0)]

    def _extras_csr(self):
        if self._extras_dirty:
            L = self._leaf_node.shape[0]
            if self._extra:
                # dead overflow slots stay listed: a re-insert may revive them
                xs = np.array(self._extra, dtype=np.int64)
                leaves = self._slot_leaf[xs]
                order = np.argsort(leaves, kind="stable")
                self._xs_sorted = xs[order]
                self._x_ptr = np.concatenate([[0], np.cumsum(np.bincount(leaves, minlength=L))]).astype(np.int64)
            else:
                self._xs_sorted = np.zeros(0, dtype=np.int64)
                self._x_ptr = np.zeros(L + 1, dtype=np.int64)
            self._extras_dirty = False
        return self._xs_sorted, self._x_ptr

    # ---------------------------------------------------------------- query

    def prepare(self) -> None:
        """Materialize lazy caches so that concurrent readers never write them."""
        self._extras_csr()
        self._bound_arrays()

    def query(self, q, tau: float, debug: bool = False) -> np.ndarray:
        """Sorted ids with <q, p> > tau."""
        q = np.asarray(q, dtype=float)
        if q.shape != (self.dim,):
            raise ValueError(f"query has shape {q.shape}, expected ({self.dim},)")
        return self.query_many(q[None, :], tau, debug=debug)[0]

    def query_many(self, Q, tau: float, debug: bool = False) -> list[np.ndarray]:
        """Answer one query per row of Q. Visit counts go to ``last_visits``.

        ``debug=True`` runs the vectorized reference traversal instead of the
        compiled one and asserts that every pruned subtree holds no qualifying
        point and every bulk-reported subtree holds only qualifying points.
        """
        Q = np.ascontiguousarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[1] != self.dim:
            raise ValueError(f"queries have shape {Q.shape}, expected (k, {self.dim})")
        nq = Q.shape[0]
        self.stats.queries += nq
        if len(self) == 0 or nq == 0:
            self.last_visits = np.zeros(nq, dtype=np.int64)
            return [np.zeros(0, dtype=np.int64) for _ in range(nq)]
        tau = float(tau)
        if math.isnan(tau):
            raise ValueError("threshold is NaN")
        if debug:
            return self._query_reference(Q, tau)
        cnorm, mid, half, mnorm = self._bound_arrays()
        xs, ptr = self._extras_csr()
        cap = len(self)
        out = np.empty(nq * cap, dtype=np.int64)
        ends = np.empty(nq, dtype=np.int64)
        visits = np.empty(nq, dtype=np.int64)
        checked = np.empty(nq, dtype=np.int64)
        _kernels.query_batch(
            Q, self._query_to_tree(Q), tau, self._center, cnorm, self._radius, mid, mnorm, half, self._left, self._right,
            self._count, self._lo, self._hi, self._leaf_lo, self._leaf_hi, xs, ptr, self._P,
            self._alive, self._slot_id, out, ends, visits, checked,
        )
        self.last_visits = visits
        self.stats.visits += int(visits.sum())
        self.stats.checked += int(checked.sum())
        res = [np.sort(out[k * cap:ends[k]]) for k in range(nq)]
        self.stats.reported += sum(r.size for r in res)
        return res

    def _bound_arrays(self):
        if self._bounds_dirty:
            mid = 0.5 * (self._box_lo + self._box_hi)
            self._bounds = (
                np.sqrt((self._center * self._center).sum(axis=1)),
                mid,
                0.5 * (self._box_hi - self._box_lo),
                np.sqrt((mid * mid).sum(axis=1)),
            )
            self._bounds_dirty = False
        return self._bounds

    def _query_reference(self, Q: np.ndarray, tau: float) -> list[np.ndarray]:
        nq = Q.shape[0]
        visits = np.zeros(nq, dtype=np.int64)
        Qt = self._query_to_tree(Q)
        qnorm = np.sqrt((Qt * Qt).sum(axis=1))
        Qabs = np.abs(Qt)
        cnorm, mid, half, mnorm = self._bound_arrays()
        fq = np.arange(nq, dtype=np.int64)
        fn = np.zeros(nq, dtype=np.int64)
        bulk_q, bulk_n, chk_q, chk_n, pr_q, pr_n = [], [], [], [], [], []
        while fq.size:
            visits += np.bincount(fq, minlength=nq)
            Qf = Qt[fq]
            qc = np.einsum("ij,ij->i", self._center[fn], Qf)
            rq = self._radius[fn] * qnorm[fq]
            qm = np.einsum("ij,ij->i", mid[fn], Qf)
            hq = np.einsum("ij,ij->i", half[fn], Qabs[fq])
            # the slack dominates any rounding in the bounds themselves
            scale = qnorm[fq] * (cnorm[fn] + mnorm[fn]) + rq + hq + (abs(tau) if math.isfinite(tau) else 0.0)
            slack = _BOUND_SLACK * scale + 1e-300
            lower = np.maximum(qc - rq, qm - hq)
            upper = np.minimum(qc + rq, qm + hq)
            live = self._count[fn] > 0
            bulk = live & (lower > tau + slack)
            prune = ~live | (upper < tau - slack)
            rest = ~(bulk | prune)
            leaf = self._left[fn] < 0
            chk = rest & leaf
            down = rest & ~leaf
            bulk_q.append(fq[bulk])
            bulk_n.append(fn[bulk])
            chk_q.append(fq[chk])
            chk_n.append(fn[chk])
            pr_q.append(fq[prune])
            pr_n.append(fn[prune])
            dq, dn = fq[down], fn[down]
            fq = np.concatenate([dq, dq])
            fn = np.concatenate([self._left[dn], self._right[dn]])
        self.last_visits = visits
        self.stats.visits += int(visits.sum())

        bq, bn = np.concatenate(bulk_q), np.concatenate(bulk_n)
        cq, cn = np.concatenate(chk_q), np.concatenate(chk_n)
        b_slots, b_lab = self._node_slots(bn, bq)
        c_slots, c_lab = self._node_slots(cn, cq)
        keep_b = self._alive[b_slots]
        b_slots, b_lab = b_slots[keep_b], b_lab[keep_b]
        keep_c = self._alive[c_slots]
        c_slots, c_lab = c_slots[keep_c], c_lab[keep_c]
        self.stats.checked += int(c_slots.size)
        if c_slots.size:
            hit = lifted_scores(self._P[c_slots], Q[c_lab]) > tau
            c_slots, c_lab = c_slots[hit], c_lab[hit]
        p_slots, p_lab = self._node_slots(np.concatenate(pr_n), np.concatenate(pr_q))
        keep = self._alive[p_slots]
        p_slots, p_lab = p_slots[keep], p_lab[keep]
        if p_slots.size and np.any(lifted_scores(self._P[p_slots], Q[p_lab]) > tau):
            raise AssertionError("pruned subtree contains a qualifying point")
        if b_slots.size and not np.all(lifted_scores(self._P[b_slots], Q[b_lab]) > tau):
            raise AssertionError("bulk-reported subtree contains a non-qualifying point")
        ids = self._slot_id[np.concatenate([b_slots, c_slots])]
        lab = np.concatenate([b_lab, c_lab])
        order = np.lexsort((ids, lab))
        ids, lab = ids[order], lab[order]
        self.stats.reported += int(ids.size)
        bounds = np.searchsorted(lab, np.arange(nq + 1))
        return [ids[bounds[k]:bounds[k + 1]] for k in range(nq)]

    def _node_slots(self, nodes: np.ndarray, labels: np.ndarray):
        """All slots (build range plus overflow) under the given nodes."""
        s1, l1 = _expand_ranges(self._lo[nodes], self._hi[nodes], labels)
        xs, ptr = self._extras_csr()
        if xs.size == 0:
            return s1, l1
        pos, l2 = _expand_ranges(ptr[self._leaf_lo[nodes]], ptr[self._leaf_hi[nodes]], labels)
        return np.concatenate([s1, xs[pos]]), np.concatenate([l1, l2])

    # --------------------------------------------------------------- updates

    def insert(self, id_: int, p) -> None:
        p = np.asarray(p, dtype=float)
        if p.shape != (self.dim,):
            raise ValueError(f"point has shape {p.shape}, expected ({self.dim},)")
        if id_ < 0:
            raise ValueError("ids must be non-negative")
        if self.contains(id_):
            raise DuplicateIdError(f"id {id_} is already in the index")
        self._insert_many(np.array([id_], dtype=np.int64), p[None, :])
        self._maybe_rebuild()

    def remove(self, id_: int) -> None:
        if not self.contains(id_):
            raise UnknownIdError(f"id {id_} is not in the index")
        self._remove_many(np.array([id_], dtype=np.int64))
        self._maybe_rebuild()

    def update(self, ids, points) -> None:
        """Remove every id and re-insert it at its new point (one batch)."""
        ids = np.asarray(ids, dtype=np.int64)
        P = np.asarray(points, dtype=float).reshape(ids.size, self.dim)
        if ids.size == 0:
            return
        if np.unique(ids).size != ids.size:
            raise DuplicateIdError("duplicate id in update batch")
        live = self._live_mask(ids)
        if not live.all():
            raise UnknownIdError(f"id {int(ids[~live][0])} is not in the index")
        self._remove_many(ids)
        self._insert_many(ids, P)
        self._maybe_rebuild()

    def _path_add(self, leaf_nodes: np.ndarray, delta: int):
        _kernels.path_add(np.ascontiguousarray(leaf_nodes, dtype=np.int64), self._parent, self._count, delta)

    def _remove_many(self, ids: np.ndarray):
        slots = self._slot_of[ids]
        self._alive[slots] = False
        self._tombstones += ids.size
        self._path_add(self._leaf_node[self._slot_leaf[slots]], -1)
        self._extras_dirty = True

    def _route(self, Y: np.ndarray) -> np.ndarray:
        """Leaf node reached by following the split hyperplanes (tree coordinates)."""
        out = np.empty(Y.shape[0], dtype=np.int64)
        _kernels.route(np.ascontiguousarray(Y), self._left, self._right, self._normal, self._offset, out)
        return out

    def _insert_many(self, ids: np.ndarray, P: np.ndarray):
        if self.node_count == 0:
            self._set_points(ids, P)
            return
        if ids.max() >= self._slot_of.shape[0]:
            grown = np.full(int(ids.max()) + 1, -1, dtype=np.int64)
            grown[: self._slot_of.shape[0]] = self._slot_of
            self._slot_of = grown
        Y = self._to_tree(P)
        dest = self._route(Y)
        dest_leaf = self._node_leaf[dest]
        old = self._slot_of[ids]
        revive = (old >= 0) & (self._slot_leaf[np.maximum(old, 0)] == dest_leaf)
        if np.any(revive):
            s = old[revive]
            self._P[s] = P[revive]
            if self._frame is not None:
                self._Y[s] = Y[revive]
            self._alive[s] = True
            self._tombstones -= int(s.size)
        fresh = ~revive
        nf = int(fresh.sum())
        if nf:
            need = self._n_slots + nf
            if need > self._P.shape[0]:
                cap = max(need, 2 * self._P.shape[0], 16)
                self._P = np.resize(self._P, (cap, self.dim))
                self._Y = self._P if self._frame is None else np.resize(self._Y, (cap, self.dim))
                self._slot_id = np.resize(self._slot_id, cap)
                self._alive = np.resize(self._alive, cap)
                self._slot_leaf = np.resize(self._slot_leaf, cap)
            new = np.arange(self._n_slots, need)
            self._P[new] = P[fresh]
            if self._frame is not None:
                self._Y[new] = Y[fresh]
            self._slot_id[new] = ids[fresh]
            self._alive[new] = True
            self._slot_leaf[new] = dest_leaf[fresh]
            self._slot_of[ids[fresh]] = new
            self._n_slots = need
            self._extra.extend(new.tolist())
            self._extras_dirty = True
        self._path_add(dest, +1)
        # grow every ancestor ball and box to cover the new points
        _kernels.inflate(dest, np.ascontiguousarray(Y), self._parent, self._center, self._radius,
                         self._box_lo, self._box_hi, _BALL_SLACK)
        self._bounds_dirty = True

    def _maybe_rebuild(self):
        live = len(self)
        dirty = self._tombstones + len(self._extra)
        leaf_counts = self._count[self._leaf_node] if self.node_count else np.zeros(0)
        overflow = leaf_counts.size and leaf_counts.max() > 2 * self.leaf_size
        if dirty > self.rebuild_ratio * max(live, 1) or overflow:
            self.rebuild()

    def rebuild(self):
        ids, P = self.live_points()
        self.rebuilds += 1
        self._set_points(ids, P)

    # ------------------------------------------------------------ debugging

    def check_invariants(self) -> None:
        """Live counts and ball/box containment; raises AssertionError on violation."""
        if self.node_count == 0:
            return
        live = np.flatnonzero(self._alive[: self._n_slots])
        leaf = self._leaf_node[self._slot_leaf[live]]
        build = live < self._build_slots
        assert np.all((self._lo[leaf[build]] <= live[build]) & (live[build] < self._hi[leaf[build]])), \
            "build slot outside its leaf range"
        counts = np.zeros(self.node_count, dtype=np.int64)
        cur, pts = leaf, self._Y[live]
        while cur.size:
            counts += np.bincount(cur, minlength=self.node_count)
            dist = np.sqrt(((pts - self._center[cur]) ** 2).sum(axis=1))
            bad = dist > self._radius[cur] * (1 + 1e-12)
            assert not bad.any(), f"ball violated at node {int(cur[bad][0])}"
            out = (pts < self._box_lo[cur]) | (pts > self._box_hi[cur])
            assert not out.any(), f"box violated at node {int(cur[out.any(axis=1)][0])}"
            up = self._parent[cur]
            keep = up >= 0
            cur, pts = up[keep], pts[keep]
        bad = np.flatnonzero(counts != self._count)
        assert bad.size == 0, f"count mismatch at node {int(bad[0]) if bad.size else -1}"

    def tree_stats(self) -> dict:
        return {
            "depth": self.depth,
            "nodes": self.node_count,
            "leaves": int(self._leaf_node.shape[0]),
            "live": len(self),
            "tombstones": self._tombstones,
            "overflow": len(self._extra),
            "rebuilds": self.rebuilds,
            "queries": self.stats.queries,
            "visits": self.stats.visits,
            "checked": self.stats.checked,
            "reported": self.stats.reported,
        }

    def stats_csv(self) -> str:
        buf = io.StringIO()
        row = self.tree_stats()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(row))
        w.writerow(list(row.values()))
        return buf.getvalue()
