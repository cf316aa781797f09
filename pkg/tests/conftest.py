"""Shared brute-force oracles.

Everything here is written in plain loops, independent of the library's
vectorized paths, so estimator tests compare two genuinely different
computations.
"""

import itertools

import numpy as np
import pytest


def dense_hermite(x, order):
    """Dense score tensor of one sample, assembled term by term."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    eye = np.eye(d)
    if order == 1:
        return x.copy()
    if order == 2:
        return np.outer(x, x) - eye
    if order == 3:
        T = np.zeros((d, d, d))
        for i in range(d):
            for j in range(d):
                for l in range(d):
                    T[i, j, l] = x[i] * x[j] * x[l]
        for j in range(d):
            e = eye[j]
            for placement in range(3):
                vecs = [e, e, e]
                vecs[placement] = x
                T -= np.einsum("i,j,l->ijl", *vecs)
        return T
    if order == 4:
        T = np.einsum("i,j,k,l->ijkl", x, x, x, x)
        for pair in itertools.combinations(range(4), 2):
            rest = [m for m in range(4) if m not in pair]
            for j in range(d):
                vecs = [None] * 4
                vecs[pair[0]] = x
                vecs[pair[1]] = x
                vecs[rest[0]] = eye[j]
                vecs[rest[1]] = eye[j]
                T -= np.einsum("i,j,k,l->ijkl", *vecs)
        for pairing in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))):
            for i in range(d):
                for j in range(d):
                    vecs = [None] * 4
                    vecs[pairing[0][0]] = eye[i]
                    vecs[pairing[0][1]] = eye[i]
                    vecs[pairing[1][0]] = eye[j]
                    vecs[pairing[1][1]] = eye[j]
                    T += np.einsum("i,j,k,l->ijkl", *vecs)
        return T
    raise ValueError(order)


def dense_contract(T, slots):
    """Naive slot contraction of a dense tensor; loops only."""
    d = T.shape[0]
    mats = []
    keep_dims = []
    for s in slots:
        if isinstance(s, str):
            mats.append(np.eye(d))
            keep_dims.append(d)
        else:
            arr = np.asarray(s, dtype=float)
            if arr.ndim == 1:
                mats.append(arr.reshape(d, 1))
                keep_dims.append(None)  # contracted away
            else:
                mats.append(arr)
                keep_dims.append(arr.shape[1])
    out_shape = tuple(k for k in keep_dims if k is not None)
    out = np.zeros(out_shape if out_shape else (1,))
    order = len(slots)
    for in_idx in itertools.product(range(d), repeat=order):
        val = T[in_idx]
        if val == 0.0:
            continue
        free_ranges = [range(keep_dims[m]) if keep_dims[m] is not None else (0,) for m in range(order)]
        for out_idx in itertools.product(*free_ranges):
            coeff = val
            for m in range(order):
                coeff *= mats[m][in_idx[m], out_idx[m]]
            pos = tuple(out_idx[m] for m in range(order) if keep_dims[m] is not None)
            out[pos if pos else (0,)] += coeff
    return float(out[0]) if not out_shape else out


def align_factor_error(factors, targets):
    """Max column error after best permutation and sign assignment."""
    k = targets.shape[1]
    t = targets / np.linalg.norm(targets, axis=0)
    best = np.inf
    for perm in itertools.permutations(range(k)):
        worst = 0.0
        for i in range(k):
            e = min(
                np.linalg.norm(factors[:, perm[i]] - t[:, i]),
                np.linalg.norm(factors[:, perm[i]] + t[:, i]),
            )
            worst = max(worst, e)
        best = min(best, worst)
    return best


def pipeline_slot_patterns(V, alpha):
    """Every (order, slots) contraction the recovery pipeline can request.

    Covers the subspace moment (two identity slots), its implicit-product
    form (identity and projection), the reduced tensor (three projections),
    and both recovery systems (one identity / two projections), across all
    admissible orders.
    """
    patterns = []
    for j in (2, 3, 4):  # subspace moment and implicit product
        patterns.append((j, ["I", "I"] + [alpha] * (j - 2)))
        patterns.append((j, ["I", V] + [alpha] * (j - 2)))
    for j in (3, 4):  # reduced third-order tensor
        patterns.append((j, [V, V, V] + [alpha] * (j - 3)))
    for l in (1, 2, 3, 4):  # magnitude system
        patterns.append((l, ["I"] + [alpha] * (l - 1)))
    for l in (2, 3, 4):  # sign system
        patterns.append((l, [V, V] + [alpha] * (l - 2)))
    return patterns


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
