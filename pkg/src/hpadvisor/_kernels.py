"""Numeric hot loops, compiled with numba when it is installed.

Everything here works unchanged as plain Python if numba is missing; the
decorator then degrades to a no-op. The kernels operate on packed node
arrays: one flat block per ensemble with per-tree offsets, node fields
(feature, threshold, left, right, value, cover) in parallel arrays, and
`left < 0` marking leaves. Samples go left iff x[feature] < threshold.
"""
from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


@njit(cache=True)
def predict_batch(feature, threshold, left, right, value, tree_start, n_trees, base_score, shrinkage, X):
    n = X.shape[0]
    out = np.full(n, base_score)
    for i in range(n):
        acc = 0.0
        for t in range(n_trees):
            node = tree_start[t]
            while left[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] += shrinkage * acc
    return out


@njit(cache=True)
def _path_extend(feat_buf, zero_buf, one_buf, pw_buf, off, depth, zf, of, fi):
    feat_buf[off + depth] = fi
    zero_buf[off + depth] = zf
    one_buf[off + depth] = of
    if depth == 0:
        pw_buf[off] = 1.0
    else:
        pw_buf[off + depth] = 0.0
    for i in range(depth - 1, -1, -1):
        pw_buf[off + i + 1] += of * pw_buf[off + i] * (i + 1.0) / (depth + 1.0)
        pw_buf[off + i] = zf * pw_buf[off + i] * (depth - i) / (depth + 1.0)


@njit(cache=True)
def _path_unwind(feat_buf, zero_buf, one_buf, pw_buf, off, depth, pi):
    of = one_buf[off + pi]
    zf = zero_buf[off + pi]
    next_one = pw_buf[off + depth]
    for i in range(depth - 1, -1, -1):
        if of != 0.0:
            tmp = pw_buf[off + i]
            pw_buf[off + i] = next_one * (depth + 1.0) / ((i + 1.0) * of)
            next_one = tmp - pw_buf[off + i] * zf * (depth - i) / (depth + 1.0)
        else:
            pw_buf[off + i] = pw_buf[off + i] * (depth + 1.0) / (zf * (depth - i))
    for i in range(pi, depth):
        feat_buf[off + i] = feat_buf[off + i + 1]
        zero_buf[off + i] = zero_buf[off + i + 1]
        one_buf[off + i] = one_buf[off + i + 1]


@njit(cache=True)
def _path_unwound_sum(zero_buf, one_buf, pw_buf, off, depth, pi):
    of = one_buf[off + pi]
    zf = zero_buf[off + pi]
    next_one = pw_buf[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if of != 0.0:
            tmp = next_one * (depth + 1.0) / ((i + 1.0) * of)
            total += tmp
            next_one = pw_buf[off + i] - tmp * zf * (depth - i) / (depth + 1.0)
        else:
            total += pw_buf[off + i] / zf / ((depth - i) / (depth + 1.0))
    return total


@njit(cache=True)
def shap_single_tree(feature, threshold, left, right, value, cover, root, x, phi,
                     feat_buf, zero_buf, one_buf, pw_buf,
                     stack_node, stack_depth, stack_off, stack_fi, stack_zf, stack_of):
    """Exact path-dependent Shapley values for one tree, added into phi.

    Iterative form of the classic polynomial-time recursion: a DFS stack
    replaces the call stack, and each visit owns a region of the shared
    path buffers at offset parent_offset + depth + 1, exactly mirroring
    the recursive slicing discipline.
    """
    top = 0
    stack_node[0] = root
    stack_depth[0] = 0
    stack_off[0] = 0
    stack_fi[0] = -1
    stack_zf[0] = 1.0
    stack_of[0] = 1.0
    while top >= 0:
        node = stack_node[top]
        d = stack_depth[top]
        po = stack_off[top]
        fi = stack_fi[top]
        zf = stack_zf[top]
        of = stack_of[top]
        top -= 1
        o = po + d + 1
        for i in range(d):
            feat_buf[o + i] = feat_buf[po + i]
            zero_buf[o + i] = zero_buf[po + i]
            one_buf[o + i] = one_buf[po + i]
            pw_buf[o + i] = pw_buf[po + i]
        _path_extend(feat_buf, zero_buf, one_buf, pw_buf, o, d, zf, of, fi)
        if left[node] < 0:
            for i in range(1, d + 1):
                w = _path_unwound_sum(zero_buf, one_buf, pw_buf, o, d, i)
                phi[feat_buf[o + i]] += w * (one_buf[o + i] - zero_buf[o + i]) * value[node]
        else:
            f = feature[node]
            if x[f] < threshold[node]:
                hot, cold = left[node], right[node]
            else:
                hot, cold = right[node], left[node]
            w = cover[node]
            hot_zf = cover[hot] / w
            cold_zf = cover[cold] / w
            inc_zf = 1.0
            inc_of = 1.0
            pi = 0
            while pi <= d:
                if feat_buf[o + pi] == f:
                    break
                pi += 1
            if pi != d + 1:
                inc_zf = zero_buf[o + pi]
                inc_of = one_buf[o + pi]
                _path_unwind(feat_buf, zero_buf, one_buf, pw_buf, o, d, pi)
                d -= 1
            top += 1
            stack_node[top] = cold
            stack_depth[top] = d + 1
            stack_off[top] = o
            stack_fi[top] = f
            stack_zf[top] = cold_zf * inc_zf
            stack_of[top] = 0.0
            top += 1
            stack_node[top] = hot
            stack_depth[top] = d + 1
            stack_off[top] = o
            stack_fi[top] = f
            stack_zf[top] = hot_zf * inc_zf
            stack_of[top] = inc_of


@njit(cache=True)
def shap_matrix(feature, threshold, left, right, value, cover, tree_start, n_trees,
                shrinkage, X, buf_size, stack_cap):
    """Per-record, per-feature Shapley values for every row of X."""
    n, n_feat = X.shape
    phi = np.zeros((n, n_feat))
    feat_buf = np.zeros(buf_size, dtype=np.int32)
    zero_buf = np.zeros(buf_size)
    one_buf = np.zeros(buf_size)
    pw_buf = np.zeros(buf_size)
    stack_node = np.zeros(stack_cap, dtype=np.int32)
    stack_depth = np.zeros(stack_cap, dtype=np.int32)
    stack_off = np.zeros(stack_cap, dtype=np.int32)
    stack_fi = np.zeros(stack_cap, dtype=np.int32)
    stack_zf = np.zeros(stack_cap)
    stack_of = np.zeros(stack_cap)
    row_phi = np.zeros(n_feat)
    for i in range(n):
        row_phi[:] = 0.0
        for t in range(n_trees):
            shap_single_tree(feature, threshold, left, right, value, cover, tree_start[t],
                             X[i], row_phi,
                             feat_buf, zero_buf, one_buf, pw_buf,
                             stack_node, stack_depth, stack_off, stack_fi, stack_zf, stack_of)
        for j in range(n_feat):
            phi[i, j] = shrinkage * row_phi[j]
    return phi
