"""Token pooling: clustering-based downsampling plus baseline selectors.

``token_pool`` reduces N tokens to K by k-means or k-medoids (optionally
weighted), or by the baseline random / importance / grid methods. Clustering
minimizes the nearest-retained-token reconstruction error

    loss = sum_i w_i * min_j ||f_i - fhat_j||^2

(w_i = 1 unless a weighted method is used). Determinism rules: every
argmin/argmax tie resolves to the lowest index, and the k-medoids
token-to-token distance matrix is computed exactly once per call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as kernels
from .errors import DataError, UsageError
from .numerics import Rng, as_matrix, pairwise_sq_dists, sample_without_replacement
from .transformer import TokenSet

METHODS = ("kmeans", "wkmeans", "kmedoids", "wkmedoids", "random", "importance", "grid")
INITS = ("topk_weight", "random")
_WEIGHTED = ("wkmeans", "wkmedoids")
_MEDOID = ("kmedoids", "wkmedoids")
_CLUSTERING = ("kmeans", "wkmeans", "kmedoids", "wkmedoids")


@dataclass
class PoolSpec:
    method: str
    k: int
    max_iters: int = 5
    init: str = "topk_weight"
    seed: int = 0
    protect_first: bool = True
    emit_counts: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise UsageError(f"unknown method {self.method!r}; choose one of {METHODS}")
        if self.init not in INITS:
            raise UsageError(f"unknown init {self.init!r}; choose one of {INITS}")
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.max_iters < 1:
            raise UsageError("max_iters must be >= 1")


@dataclass
class ClusterResult:
    """Outcome over the clustered (non-protected) tokens."""

    assignment: np.ndarray            # token -> cluster index
    centers: np.ndarray               # (K, M) retained tokens
    iterations: int
    loss: float
    counts: np.ndarray                # per-cluster sums of input multiplicities
    medoid_indices: np.ndarray | None = None


def chamfer_loss(f, fhat, weights=None) -> float:
    """Reconstruction error of ``f`` under nearest-neighbor lookup into ``fhat``."""
    feats = f.features if isinstance(f, TokenSet) else as_matrix(f, "tokens")
    fhat = as_matrix(fhat, "retained tokens")
    if fhat.shape[0] < 1:
        raise UsageError("need at least one retained token")
    if feats.shape[1] != fhat.shape[1]:
        raise DataError(
            f"feature dims differ: {feats.shape[1]} vs {fhat.shape[1]}"
        )
    if weights is None and isinstance(f, TokenSet):
        weights = f.weights
    mins = kernels.pairwise_sq_dists(feats, fhat).min(axis=1)
    if weights is None:
        return float(mins.sum())
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if weights.shape[0] != feats.shape[0]:
        raise UsageError(f"weights length {weights.shape[0]} != {feats.shape[0]} tokens")
    return float((weights * mins).sum())


def _init_indices(n: int, k: int, init: str, init_weights: np.ndarray, seed: int) -> np.ndarray:
    if init == "topk_weight":
        # stable sort: equal weights keep ascending token order
        order = np.argsort(-init_weights, kind="stable")
        chosen = order[:k]
    else:
        chosen = sample_without_replacement(Rng(seed), n, k)
    return np.sort(chosen)


def _repair_empty(centers, feats, occupied, medoids=None):
    """Deserted clusters each take the worst-reconstructed token as a singleton.

    Error is measured against the freshly updated centers of occupied
    clusters, so the promoted token always differs from every live center and
    the move can only lower the reconstruction objective.
    """
    errs = kernels.pairwise_sq_dists(feats, centers[occupied]).min(axis=1)
    for j in np.flatnonzero(~occupied):
        t = int(np.argmax(errs))
        centers[j] = feats[t]
        if medoids is not None:
            medoids[j] = t
        # fold the new center in so equal-valued tokens stop looking bad
        errs = np.minimum(errs, kernels.pairwise_sq_dists(feats, feats[t:t + 1])[:, 0])
        errs[t] = -np.inf


def _lloyd(feats, obj_w, init_w, spec: PoolSpec):
    """Alternating assignment / center update until assignments stabilize."""
    n, _ = feats.shape
    k = spec.k
    medoid = spec.method in _MEDOID
    init_idx = _init_indices(n, k, spec.init, init_w, spec.seed)

    d2_all = kernels.pairwise_sq_dists(feats, feats) if medoid else None
    medoids = init_idx.astype(np.int64) if medoid else None
    centers = feats[init_idx].astype(np.float64, copy=True)

    def assign(cur_centers):
        d2 = d2_all[:, medoids] if medoid else kernels.pairwise_sq_dists(feats, cur_centers)
        labels = d2.argmin(axis=1)
        return labels.astype(np.int64), d2[np.arange(n), labels]

    labels, errs = assign(centers)
    prev = labels
    iterations = 0
    for step in range(spec.max_iters):
        occupied = np.bincount(labels, minlength=k) > 0
        if medoid:
            new_med = kernels.medoid_update(d2_all, labels, k)
            medoids[occupied] = new_med[occupied]
            centers = feats[medoids].astype(np.float64, copy=True)
            if not occupied.all():
                _repair_empty(centers, feats, occupied, medoids)
        else:
            sums = np.zeros((k, feats.shape[1]))
            np.add.at(sums, labels, obj_w[:, None] * feats)
            mass = np.bincount(labels, weights=obj_w, minlength=k)
            centers[occupied] = sums[occupied] / mass[occupied, None]
            if not occupied.all():
                _repair_empty(centers, feats, occupied)
        labels, errs = assign(centers)
        iterations = step + 1
        if np.array_equal(labels, prev):
            break
        prev = labels
    loss = float((obj_w * errs).sum())
    return labels, centers, medoids, iterations, loss


def _result_counts(labels: np.ndarray, k: int, multiplicities: np.ndarray) -> np.ndarray:
    return np.bincount(labels, weights=multiplicities, minlength=k)


def _nearest_assignment(feats, centers, multiplicities):
    d2 = kernels.pairwise_sq_dists(feats, centers)
    labels = d2.argmin(axis=1).astype(np.int64)
    loss = float(d2[np.arange(feats.shape[0]), labels].sum())
    counts = _result_counts(labels, centers.shape[0], multiplicities)
    return labels, loss, counts


def _identity_result(feats, multiplicities, medoid: bool) -> ClusterResult:
    n = feats.shape[0]
    idx = np.arange(n, dtype=np.int64)
    return ClusterResult(
        assignment=idx.copy(),
        centers=feats.copy(),
        iterations=0,
        loss=0.0,
        counts=multiplicities.copy(),
        medoid_indices=idx.copy() if medoid else None,
    )


def token_pool(f: TokenSet, spec: PoolSpec) -> tuple[TokenSet, ClusterResult]:
    """Downsample a token set; returns the pooled set and the cluster record.

    With ``protect_first`` the first token passes through untouched, is
    excluded from clustering and from the reported loss, and does not count
    toward K. If K covers all clusterable tokens the input is returned
    unchanged.
    """
    if spec.method in _WEIGHTED and f.weights is None:
        raise UsageError(f"method {spec.method!r} requires token weights")
    if spec.method == "importance" and f.weights is None:
        raise UsageError("importance selection requires token weights (scores)")
    if spec.method == "grid":
        return _grid_result(f, spec)

    offset = 1 if spec.protect_first else 0
    if spec.protect_first and f.n_tokens < 2:
        # only the protected token exists; nothing to cluster
        return f.copy(), _identity_result(
            f.features[1:], np.ones(0), spec.method in _MEDOID
        )
    feats = np.ascontiguousarray(f.features[offset:])
    n_eff = feats.shape[0]
    mult = (f.counts[offset:] if f.counts is not None else np.ones(n_eff)).copy()
    w_in = f.weights[offset:] if f.weights is not None else None

    if spec.k >= n_eff:
        return f.copy(), _identity_result(feats, mult, spec.method in _MEDOID)

    if spec.method in _CLUSTERING:
        init_w = w_in if w_in is not None else np.ones(n_eff)
        obj_w = init_w if spec.method in _WEIGHTED else np.ones(n_eff)
        labels, centers, medoids, iterations, loss = _lloyd(feats, obj_w, init_w, spec)
        counts = _result_counts(labels, spec.k, mult)
        result = ClusterResult(labels, centers, iterations, loss, counts, medoids)
        out_feats = centers
        sel = medoids  # None for means
    elif spec.method == "random":
        rng = Rng(spec.seed)
        sel = np.sort(sample_without_replacement(rng, n_eff, spec.k))
        out_feats = feats[sel]
        labels, loss, counts = _nearest_assignment(feats, out_feats, mult)
        result = ClusterResult(labels, out_feats.copy(), 0, loss, counts, sel.astype(np.int64))
    else:  # importance
        scores = w_in
        if scores.sum() <= 0:
            raise DataError("importance scores sum to zero")
        rng = Rng(spec.seed)
        sel = np.sort(sample_without_replacement(rng, n_eff, spec.k, scores))
        out_feats = feats[sel]
        labels, loss, counts = _nearest_assignment(feats, out_feats, mult)
        result = ClusterResult(labels, out_feats.copy(), 0, loss, counts, sel.astype(np.int64))

    pooled = _assemble(f, out_feats, result.counts, sel, spec, offset)
    return pooled, result


def _assemble(f, out_feats, counts, sel, spec, offset) -> TokenSet:
    rows = [f.features[:offset], out_feats]
    features = np.concatenate(rows, axis=0)
    out_counts = None
    if spec.emit_counts:
        head = f.counts[:offset] if f.counts is not None else np.ones(offset)
        out_counts = np.concatenate([head, counts])
    out_weights = None
    if sel is not None and f.weights is not None and spec.method in ("random", "importance"):
        head_w = f.weights[:offset]
        out_weights = np.concatenate([head_w, f.weights[offset:][sel]])
    return TokenSet(features, out_weights, out_counts, None)


def random_select(f: TokenSet, k: int, seed: int, protect_first: bool = True) -> TokenSet:
    """Uniform selection without replacement; survivor order is preserved."""
    spec = PoolSpec(method="random", k=k, seed=seed, protect_first=protect_first)
    _check_select_k(f, k, protect_first)
    out, _ = token_pool(f, spec)
    return out


def importance_select(
    f: TokenSet, scores, k: int, seed: int, protect_first: bool = True
) -> TokenSet:
    """Plackett-Luce selection with probabilities proportional to ``scores``."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.shape[0] != f.n_tokens:
        raise UsageError(f"scores length {scores.shape[0]} != {f.n_tokens} tokens")
    if not np.isfinite(scores).all() or (scores < 0).any():
        raise DataError("scores must be finite and nonnegative")
    offset = 1 if protect_first else 0
    if scores[offset:].sum() <= 0:
        raise DataError("scores sum to zero")
    _check_select_k(f, k, protect_first)
    # weights must be positive in a TokenSet; route scores directly instead
    feats = f.features[offset:]
    if k >= feats.shape[0]:
        return f.copy()
    rng = Rng(seed)
    sel = np.sort(sample_without_replacement(rng, feats.shape[0], k, scores[offset:]))
    rows = np.concatenate([f.features[:offset], feats[sel]], axis=0)
    counts = None
    if f.counts is not None:
        counts = np.concatenate([f.counts[:offset], f.counts[offset:][sel]])
    weights = None
    if f.weights is not None:
        weights = np.concatenate([f.weights[:offset], f.weights[offset:][sel]])
    return TokenSet(rows, weights, counts, None)


def _check_select_k(f: TokenSet, k: int, protect_first: bool) -> None:
    if k < 1:
        raise UsageError("k must be >= 1")
    limit = f.n_tokens - (1 if protect_first else 0)
    if k > limit:
        raise UsageError(f"cannot select {k} of {limit} selectable tokens")


def grid_pool(f: TokenSet) -> TokenSet:
    """Mean-pool non-overlapping 2x2 grid patches; grid dims halve."""
    out, _ = _grid_result(f, None)
    return out


def _grid_result(f: TokenSet, spec: PoolSpec | None):
    if f.grid is None:
        raise UsageError("grid pooling requires a token grid")
    h, w = f.grid
    if h % 2 or w % 2:
        raise UsageError(f"grid dims must be even to 2x2-pool, got {h}x{w}")
    offset = f.n_tokens - h * w  # 1 when a classification token is present
    m = f.dim
    body = f.features[offset:].reshape(h, w, m)
    blocks = body.reshape(h // 2, 2, w // 2, 2, m)
    pooled = blocks.mean(axis=(1, 3)).reshape(-1, m)

    rows = np.concatenate([f.features[:offset], pooled], axis=0)
    if spec is not None and spec.emit_counts:
        base = f.counts[offset:] if f.counts is not None else np.ones(h * w)
        counts = base.reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3)).reshape(-1)
        head = f.counts[:offset] if f.counts is not None else np.ones(offset)
        out_counts = np.concatenate([head, counts])
    else:
        out_counts = None
        base = f.counts[offset:] if f.counts is not None else np.ones(h * w)
    out = TokenSet(rows, None, out_counts, (h // 2, w // 2))

    # structural assignment: each body token belongs to its 2x2 block
    rr, cc = np.divmod(np.arange(h * w), w)
    labels = ((rr // 2) * (w // 2) + cc // 2).astype(np.int64)
    loss = chamfer_loss(f.features[offset:], pooled, None)
    counts_rec = np.bincount(labels, weights=base, minlength=pooled.shape[0])
    result = ClusterResult(labels, pooled.copy(), 1, loss, counts_rec, None)
    return out, result
