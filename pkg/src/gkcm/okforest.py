"""Output-kernel random forests.

Trees split on covariates ``z`` so as to maximise the reduction of the
within-node variance of the output embeddings ``phi(x_i)``,

    Var(S) = mean_{i in S} k(x_i, x_i) - mean_{i, j in S} k(x_i, x_j),

evaluated through the output Gram ``K`` (``split_mode="exact_kernel"``) or
through explicit random Fourier features (``split_mode="rff"``). A fitted
forest predicts by leaf averaging, which makes it a weight-matrix regressor
like kernel ridge regression.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numba as nb
import numpy as np

from .exceptions import ConfigError, DimensionError, TooFewSamplesError

_NO_SPLIT = -1


@dataclass(frozen=True)
class ForestSpec:
    """Forest hyperparameters. ``None`` fields are resolved from ``d`` by :meth:`resolve`."""

    num_trees: Optional[int] = None
    mtry: Optional[int] = None
    min_node_size: int = 5
    subsample_fraction: float = 0.5
    with_replacement: bool = False
    split_mode: str = "exact_kernel"
    rff_features: int = 100
    route_all_points: bool = False
    seed: int = 0

    def resolve(self, d: int) -> "ForestSpec":
        spec = replace(
            self,
            num_trees=100 * d if self.num_trees is None else int(self.num_trees),
            mtry=d if self.mtry is None else int(self.mtry),
        )
        spec.validate(d)
        return spec

    def validate(self, d: int) -> None:
        if self.num_trees is None or self.num_trees < 1:
            raise ConfigError(f"num_trees must be >= 1, got {self.num_trees}")
        if self.mtry is None or not 1 <= self.mtry <= d:
            raise ConfigError(f"mtry must lie in [1, {d}], got {self.mtry}")
        if self.min_node_size < 1:
            raise ConfigError(f"min_node_size must be >= 1, got {self.min_node_size}")
        if not 0 < self.subsample_fraction <= 1:
            raise ConfigError(f"subsample_fraction must lie in (0, 1], got {self.subsample_fraction}")
        if self.split_mode not in ("exact_kernel", "rff"):
            raise ConfigError(f"unknown split_mode {self.split_mode!r}")
        if self.split_mode == "rff" and self.rff_features < 1:
            raise ConfigError("rff split mode needs rff_features >= 1")


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    reduction: float

    def __iter__(self):
        # unpacks as (feature, threshold)
        return iter((self.feature, self.threshold))


@dataclass(frozen=True)
class Tree:
    """Flat binary tree.

    Node arrays are indexed by node id; ``left == -1`` marks a leaf. Each
    node owns the segment ``members[start:start + count]`` of bag indices
    that reached it during growth.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    members: np.ndarray
    bag: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self, node: int) -> bool:
        return self.left[node] == _NO_SPLIT

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.left == _NO_SPLIT)

    def leaf_members(self, node: int) -> np.ndarray:
        s = self.start[node]
        return self.members[s:s + self.count[node]]

    def apply(self, z) -> np.ndarray:
        z = np.ascontiguousarray(np.atleast_2d(np.asarray(z, dtype=np.float64)))
        return _route(self.feature, self.threshold, self.left, self.right, z)


@dataclass(frozen=True)
class Forest:
    trees: list
    spec: ForestSpec
    z_train: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.z_train.shape[0]


def node_variance(gram, S) -> float:
    """Mean of ``K``'s diagonal over ``S`` minus the mean of the ``S x S`` block."""
    S = np.asarray(S, dtype=np.int64)
    if S.size == 0:
        raise ConfigError("node_variance of an empty index set")
    K = np.asarray(gram)
    block = K[np.ix_(S, S)]
    return float(np.mean(np.diag(block)) - block.mean())


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@nb.njit(cache=True)
def _better(score, best):
    # ties within relative 1e-12 keep the earlier (lower feature, lower threshold) candidate
    if best == -np.inf:
        return True
    return score > best + 1e-12 * abs(best)


@nb.njit(cache=True)
def _split_gram(K, S, z, cand, mns):
    m = S.shape[0]
    rs = np.zeros(m)
    for a in range(m):
        acc = 0.0
        ia = S[a]
        for b in range(m):
            acc += K[ia, S[b]]
        rs[a] = acc
    total = rs.sum()
    best = -np.inf
    best_f = -1
    best_t = 0.0
    vals = np.empty(m)
    for f in cand:
        for a in range(m):
            vals[a] = z[S[a], f]
        order = np.argsort(vals, kind="mergesort")
        sv = vals[order]
        if sv[0] == sv[m - 1]:
            continue
        sll = 0.0
        cumr = 0.0
        for k in range(m - 1):
            ia = S[order[k]]
            acc = 0.0
            for i in range(k):
                acc += K[ia, S[order[i]]]
            sll += 2.0 * acc + K[ia, ia]
            cumr += rs[order[k]]
            nl = k + 1
            nr = m - nl
            if nr < mns:
                break
            if nl < mns or sv[k] == sv[k + 1]:
                continue
            slr = cumr - sll
            srr = total - sll - 2.0 * slr
            score = sll / nl + srr / nr
            if _better(score, best):
                best = score
                best_f = f
                t = 0.5 * (sv[k] + sv[k + 1])
                if t >= sv[k + 1]:
                    t = sv[k]
                best_t = t
    reduction = (best - total / m) / m if best_f >= 0 else 0.0
    return best_f, best_t, reduction


@nb.njit(cache=True)
def _split_features(F, S, z, cand, mns):
    m = S.shape[0]
    D = F.shape[1]
    Fs = np.empty((m, D))
    for a in range(m):
        Fs[a] = F[S[a]]
    tot = np.zeros(D)
    for a in range(m):
        for j in range(D):
            tot[j] += Fs[a, j]
    total = 0.0
    for j in range(D):
        total += tot[j] * tot[j]
    best = -np.inf
    best_f = -1
    best_t = 0.0
    vals = np.empty(m)
    pre = np.empty(D)
    for f in cand:
        for a in range(m):
            vals[a] = z[S[a], f]
        order = np.argsort(vals, kind="mergesort")
        sv = vals[order]
        if sv[0] == sv[m - 1]:
            continue
        pre[:] = 0.0
        for k in range(m - 1):
            row = order[k]
            for j in range(D):
                pre[j] += Fs[row, j]
            nl = k + 1
            nr = m - nl
            if nr < mns:
                break
            if nl < mns or sv[k] == sv[k + 1]:
                continue
            sll = 0.0
            srr = 0.0
            for j in range(D):
                p = pre[j]
                r = tot[j] - p
                sll += p * p
                srr += r * r
            score = sll / nl + srr / nr
            if _better(score, best):
                best = score
                best_f = f
                t = 0.5 * (sv[k] + sv[k + 1])
                if t >= sv[k + 1]:
                    t = sv[k]
                best_t = t
    reduction = (best - total / m) / m if best_f >= 0 else 0.0
    return best_f, best_t, reduction


@nb.njit(cache=True)
def _grow(z, out, use_gram, bag, mtry, mns, keys):
    m = bag.shape[0]
    d = z.shape[1]
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    start = np.zeros(cap, np.int64)
    count = np.zeros(cap, np.int64)
    members = bag.copy()
    start[0] = 0
    count[0] = m
    n_nodes = 1
    stack = np.empty(cap, np.int64)
    stack[0] = 0
    top = 1
    buf = np.empty(m, np.int64)
    while top > 0:
        top -= 1
        node = stack[top]
        s0 = start[node]
        c = count[node]
        if c < 2 * mns:
            continue
        S = members[s0:s0 + c]
        if mtry < d:
            cand = np.sort(np.argsort(keys[node])[:mtry])
        else:
            cand = np.arange(d)
        if use_gram:
            f, t, red = _split_gram(out, S, z, cand, mns)
        else:
            f, t, red = _split_features(out, S, z, cand, mns)
        if f < 0:
            continue
        nl = 0
        for a in range(c):
            if z[S[a], f] <= t:
                buf[nl] = S[a]
                nl += 1
        nr = 0
        for a in range(c):
            if z[S[a], f] > t:
                buf[nl + nr] = S[a]
                nr += 1
        members[s0:s0 + c] = buf[:c]
        feature[node] = f
        threshold[node] = t
        lft = n_nodes
        rgt = n_nodes + 1
        n_nodes += 2
        left[node] = lft
        right[node] = rgt
        start[lft] = s0
        count[lft] = nl
        start[rgt] = s0 + nl
        count[rgt] = nr
        stack[top] = rgt
        stack[top + 1] = lft
        top += 2
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            start[:n_nodes], count[:n_nodes], members)


@nb.njit(cache=True)
def _route(feature, threshold, left, right, z):
    n = z.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while left[node] != -1:
            if z[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@nb.njit(cache=True)
def _accumulate(W, rows_leaf, start, count, members, scale):
    for i in range(rows_leaf.shape[0]):
        leaf = rows_leaf[i]
        s0 = start[leaf]
        c = count[leaf]
        if c == 0:
            continue
        w = scale / c
        for a in range(s0, s0 + c):
            W[i, members[a]] += w


# --------------------------------------------------------------------------
# public API
# --------------------------------------------------------------------------

def best_split(gram, S, z, candidate_features, min_node_size: int = 1) -> Optional[Split]:
    """Variance-reduction maximising split of node ``S``.

    Thresholds are midpoints between consecutive distinct values of a
    feature within ``S``; both children must keep at least
    ``min_node_size`` samples. Ties go to the lowest feature index, then the
    lowest threshold. Returns ``None`` when no admissible split exists.
    """
    S = np.ascontiguousarray(S, dtype=np.int64)
    z = np.ascontiguousarray(np.asarray(z, dtype=np.float64).reshape(np.shape(z)[0], -1))
    cand = np.unique(np.asarray(candidate_features, dtype=np.int64))
    if cand.size == 0:
        raise ConfigError("no candidate features")
    if S.size < 2:
        return None
    f, t, red = _split_gram(np.ascontiguousarray(gram, dtype=np.float64), S, z, cand, int(min_node_size))
    if f < 0:
        return None
    return Split(int(f), float(t), float(red))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64)
    with np.errstate(over="ignore"):
        x = x + np.uint64(0x9E3779B97F4A7C15)
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        x = x ^ (x >> np.uint64(31))
    return x


def _draw_bag(rng, n, spec: ForestSpec, tree_index: int, sample_keys) -> np.ndarray:
    size = max(1, int(round(spec.subsample_fraction * n)))
    if sample_keys is not None:
        if spec.with_replacement:
            raise ConfigError("sample_keys bagging supports only subsampling without replacement")
        with np.errstate(over="ignore"):
            salt = _splitmix64(np.array([spec.seed * 1_000_003 + tree_index], dtype=np.uint64))[0]
            h = _splitmix64(np.asarray(sample_keys, dtype=np.uint64) ^ salt)
        return np.sort(np.argsort(h, kind="stable")[:size]).astype(np.int64)
    if spec.with_replacement:
        return np.sort(rng.integers(0, n, size=size)).astype(np.int64)
    if size == n:
        return np.arange(n, dtype=np.int64)
    return np.sort(rng.choice(n, size=size, replace=False)).astype(np.int64)


def gram_factor(K: np.ndarray, max_rank: int):
    """Return ``F`` with ``F @ F.T == K`` to rounding, or ``None`` if rank exceeds ``max_rank``.

    Eigenvalues below ``n * eps * lambda_max`` are dropped; they are at the
    noise level of the eigensolver itself.
    """
    n = K.shape[0]
    w, V = np.linalg.eigh(0.5 * (K + K.T))
    cut = n * np.finfo(np.float64).eps * max(w[-1], 0.0)
    keep = w > cut
    if keep.sum() > max_rank:
        return None
    return np.ascontiguousarray(V[:, keep] * np.sqrt(w[keep]))


def fit_forest(z, output, spec: ForestSpec = ForestSpec(), *, sample_keys=None,
               low_rank: bool = True) -> Forest:
    """Grow a bagged forest of output-kernel trees.

    ``output`` is the n x n output Gram for ``split_mode="exact_kernel"`` and
    an n x D feature matrix (e.g. random Fourier features of x) for
    ``split_mode="rff"``. Tree ``t`` draws its bag and per-node feature
    subsets from a stream keyed on ``(spec.seed, t)``.

    ``sample_keys`` (one integer per row) makes bag membership a function of
    the key rather than the row position, so permuting rows together with
    their keys permutes the forest.

    With ``low_rank`` an exact-kernel Gram of small numerical rank is swept
    through its factor ``F F^T = K``; the split scores are the same
    quantities, computed in O(r) rather than O(m) per candidate.
    """
    z = np.ascontiguousarray(np.asarray(z, dtype=np.float64))
    if z.ndim == 1:
        z = z.reshape(-1, 1)
    n, d = z.shape
    spec = spec.resolve(d)
    out = np.ascontiguousarray(np.asarray(output, dtype=np.float64))
    use_gram = spec.split_mode == "exact_kernel"
    if use_gram and out.shape != (n, n):
        raise DimensionError(f"output Gram has shape {out.shape}, expected ({n}, {n})")
    if not use_gram and out.shape[0] != n:
        raise DimensionError(f"output features have {out.shape[0]} rows, expected {n}")
    if n < 2:
        raise TooFewSamplesError(f"need at least 2 samples to grow a forest, got {n}")
    if sample_keys is not None and len(sample_keys) != n:
        raise DimensionError("sample_keys must have one entry per row")

    if use_gram and low_rank and n >= 64:
        F = gram_factor(out, n // 4)
        if F is not None:
            out, use_gram = F, False

    trees = []
    for t in range(spec.num_trees):
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(t,)))
        bag = _draw_bag(rng, n, spec, t, sample_keys)
        keys = rng.random((2 * bag.size + 1, d)) if spec.mtry < d else np.empty((1, d))
        arrays = _grow(z, out, use_gram, bag, spec.mtry, spec.min_node_size, keys)
        trees.append(Tree(*arrays, bag=bag))
    return Forest(trees=trees, spec=spec, z_train=z)


def _leaf_tables(tree: Tree, train_leaf: np.ndarray, route_all: bool):
    if not route_all:
        return tree.start, tree.count, tree.members
    order = np.argsort(train_leaf, kind="stable")
    count = np.bincount(train_leaf, minlength=tree.num_nodes).astype(np.int64)
    start = np.concatenate([[0], np.cumsum(count)[:-1]]).astype(np.int64)
    return start, count, order.astype(np.int64)


def forest_weights_many(forest: Forest, z_query) -> np.ndarray:
    """Weights (m x n) over training points for each row of ``z_query``."""
    zq = np.ascontiguousarray(np.atleast_2d(np.asarray(z_query, dtype=np.float64)))
    if zq.shape[1] != forest.z_train.shape[1]:
        raise DimensionError(f"queries have {zq.shape[1]} columns, expected {forest.z_train.shape[1]}")
    W = np.zeros((zq.shape[0], forest.n))
    scale = 1.0 / len(forest.trees)
    route_all = forest.spec.route_all_points
    for tree in forest.trees:
        q_leaf = tree.apply(zq)
        train_leaf = tree.apply(forest.z_train) if route_all else None
        start, count, members = _leaf_tables(tree, train_leaf, route_all)
        _accumulate(W, q_leaf, start, count, members, scale)
    return W


def forest_weights(forest: Forest, z_query) -> np.ndarray:
    """Leaf-averaging weights for one query point; nonnegative and summing to 1."""
    zq = np.atleast_1d(np.asarray(z_query, dtype=np.float64))
    if zq.ndim != 1:
        raise DimensionError("forest_weights takes a single query point")
    return forest_weights_many(forest, zq[None, :])[0]


def forest_weight_matrix(forest: Forest, z_train=None) -> np.ndarray:
    """In-sample weight matrix; row i equals ``forest_weights(forest, z_i)``."""
    z = forest.z_train if z_train is None else z_train
    return forest_weights_many(forest, z)
