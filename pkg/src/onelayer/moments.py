"""Label-weighted moment estimators and their population counterparts.

The j-th score moment of the data distribution is the y-weighted mean
of the j-th Hermite tensor of the input,

    M_j = E[y * He_j(x)],   He_1 = x,  He_2 = x x' - I,
    He_3 = x^(x3) - x (sym) I,  He_4 = x^(x4) - (x x') (sym) I + I (sym) I,

which for a one-hidden-layer teacher collapses to a rank-k symmetric
combination of the normalized hidden weights.  Estimators here never
materialize He_3 or He_4: every requested contraction is expanded over
Wick pairings into per-sample closed forms, so a d x k contraction of
the third moment costs O(n k d) rather than O(n d^3).

Slot convention: a contraction request is a list of ``order`` slots,
each either the string ``"I"`` (identity, keeps a mode of size d), a
d x k matrix (projects the mode), or a d-vector (contracts the mode
away).  The output carries one mode per non-vector slot, in order.
"""

from typing import NamedTuple

import numpy as np

from .activations import ZERO_MOMENT_TOL, ActivationError, MomentProfile, gaussian_moments

_MAX_ORDER = 4


class SlotError(ValueError):
    pass


class OrderSelection(NamedTuple):
    """Contraction orders for the initialization pipeline.

    subspace_order: first j >= 2 with nonvanishing m_j (matrix moment)
    tensor_order:   first j >= 3 with nonvanishing m_j (3-way moment)
    scale_order:    order of the vector moment feeding the magnitude system
    sign_order:     order of the matrix moment feeding the sign system
    """

    subspace_order: int
    tensor_order: int
    scale_order: int
    sign_order: int


def _pairings(j):
    """All partial pairings of range(j) as (pairs, unpaired) tuples."""
    if j == 0:
        return [((), ())]
    out = []
    rest = list(range(1, j))

    def rec(avail):
        if not avail:
            return [((), ())]
        head, tail = avail[0], avail[1:]
        results = []
        for pairs, free in rec(tail):
            results.append((pairs, (head, *free)))
        for i, mate in enumerate(tail):
            sub = tail[:i] + tail[i + 1 :]
            for pairs, free in rec(sub):
                results.append((((head, mate), *pairs), free))
        return results

    return rec(list(range(j)))


def _classify_slots(slots, d):
    kinds, mats, vecs = [], {}, {}
    for i, s in enumerate(slots):
        if isinstance(s, str):
            if s != "I":
                raise SlotError(f"unknown slot marker {s!r}")
            kinds.append("I")
        else:
            arr = np.asarray(s, dtype=float)
            if arr.ndim == 1:
                if arr.shape[0] != d:
                    raise SlotError(f"vector slot {i} has length {arr.shape[0]}, expected {d}")
                kinds.append("v")
                vecs[i] = arr
            elif arr.ndim == 2:
                if arr.shape[0] != d:
                    raise SlotError(f"matrix slot {i} has {arr.shape[0]} rows, expected {d}")
                kinds.append("M")
                mats[i] = arr
            else:
                raise SlotError("slots must be 'I', a vector, or a matrix")
    return kinds, mats, vecs


def _slot_matrix(kinds, mats, vecs, i, d):
    if kinds[i] == "I":
        return np.eye(d)
    if kinds[i] == "M":
        return mats[i]
    return vecs[i]


def empirical_moment(samples, order, slots):
    """(1/n) sum_s y_s * He_order(x_s)(slots), expanded over pairings.

    ``samples`` provides X (d x n) and y (n).  Output shape has one
    axis per identity/matrix slot; all-vector requests give a float.
    """
    if not (1 <= order <= _MAX_ORDER):
        raise SlotError(f"order must be in 1..{_MAX_ORDER}, got {order}")
    if len(slots) != order:
        raise SlotError(f"need {order} slots, got {len(slots)}")
    X, y = samples.X, samples.y
    d, n = X.shape
    kinds, mats, vecs = _classify_slots(slots, d)

    # per-sample projections of each slot
    proj = {}
    for i, kind in enumerate(kinds):
        if kind == "I":
            proj[i] = X
        elif kind == "M":
            proj[i] = mats[i].T @ X
        else:
            proj[i] = vecs[i] @ X

    free_slots = [i for i, kind in enumerate(kinds) if kind != "v"]
    letters = {i: "abcd"[free_slots.index(i)] for i in free_slots}
    out_sub = "".join(letters[i] for i in free_slots)

    total = 0.0 if not free_slots else np.zeros(tuple(proj[i].shape[0] for i in free_slots))
    for pairs, unpaired in _pairings(order):
        weight = y.copy()
        const = 1.0
        operands, subs = [], []
        for i in unpaired:
            if kinds[i] == "v":
                weight = weight * proj[i]
            else:
                operands.append(proj[i])
                subs.append(letters[i] + "s")
        pair_ops, pair_subs = [], []
        for i, j in pairs:
            ki, kj = kinds[i], kinds[j]
            if ki != "v" and kj != "v":
                G = _slot_matrix(kinds, mats, vecs, i, d).T @ _slot_matrix(kinds, mats, vecs, j, d)
                pair_ops.append(G)
                pair_subs.append(letters[i] + letters[j])
            elif ki != "v" and kj == "v":
                pair_ops.append(_slot_matrix(kinds, mats, vecs, i, d).T @ vecs[j])
                pair_subs.append(letters[i])
            elif ki == "v" and kj != "v":
                pair_ops.append(_slot_matrix(kinds, mats, vecs, j, d).T @ vecs[i])
                pair_subs.append(letters[j])
            else:
                const *= float(vecs[i] @ vecs[j])
        sign = (-1.0) ** len(pairs)
        expr = ",".join(subs + ["s"] + pair_subs) + "->" + out_sub
        term = np.einsum(expr, *operands, weight, *pair_ops, optimize=True)
        total = total + sign * const * term
    result = total / n
    return float(result) if not free_slots else result


def population_moment(teacher, order, slots):
    """Exact M_order(slots) of the teacher distribution.

    Rank-k closed form: sum_i v_i m_order(|w_i|) wbar_i^(x order),
    contracted with the same slot convention as the estimator.
    """
    if not (1 <= order <= _MAX_ORDER):
        raise SlotError(f"order must be in 1..{_MAX_ORDER}, got {order}")
    if len(slots) != order:
        raise SlotError(f"need {order} slots, got {len(slots)}")
    W, v, act = teacher.W, teacher.v, teacher.activation
    d = W.shape[0]
    kinds, mats, vecs = _classify_slots(slots, d)
    free_slots = [i for i, kind in enumerate(kinds) if kind != "v"]

    total = 0.0 if not free_slots else None
    for i in range(W.shape[1]):
        norm = float(np.linalg.norm(W[:, i]))
        wbar = W[:, i] / norm
        coeff = float(v[i]) * gaussian_moments(act, norm).m[order - 1]
        for s, kind in enumerate(kinds):
            if kind == "v":
                coeff *= float(vecs[s] @ wbar)
        if not free_slots:
            total += coeff
            continue
        pieces = []
        for s in free_slots:
            pieces.append(wbar if kinds[s] == "I" else mats[s].T @ wbar)
        term = pieces[0]
        for piece in pieces[1:]:
            term = np.multiply.outer(term, piece)
        total = coeff * term if total is None else total + coeff * term
    return float(total) if not free_slots else total


def moment_matvec(samples, order, alpha, V):
    """M_hat_order(I, V, alpha, ..., alpha) in O(n k d) time.

    The identity-slot contraction of the subspace moment against a
    d x k block, written out per sample so no d x d matrix is formed.
    ``alpha`` is ignored for order 2.
    """
    X, y = samples.X, samples.y
    d, n = X.shape
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[0] != d:
        raise SlotError(f"V must be d x k with d={d}, got shape {V.shape}")
    Z = X.T @ V  # n x k
    if order == 2:
        return X @ (y[:, None] * Z) / n - y.mean() * V
    alpha = np.asarray(alpha, dtype=float)
    a = X.T @ alpha  # n
    aV = alpha @ V  # k
    if order == 3:
        w = y * a
        return (
            X @ (w[:, None] * Z) / n
            - w.mean() * V
            - np.outer(alpha, y @ Z) / n
            - np.outer(X @ y, aV) / n
        )
    if order == 4:
        w = y * a * a
        return (
            X @ (w[:, None] * Z) / n
            - w.mean() * V
            - 2.0 * np.outer(X @ (y * a), aV) / n
            - 2.0 * np.outer(alpha, (y * a) @ Z) / n
            - X @ (y[:, None] * Z) / n
            + y.mean() * (2.0 * np.outer(alpha, aV) + V)
        )
    raise SlotError(f"matvec supports orders 2..4, got {order}")


def _moment_is_zero(profile: MomentProfile, j):
    vals = profile.c if profile.c is not None else profile.m
    return abs(vals[j - 1]) < ZERO_MOMENT_TOL


def select_orders(profile: MomentProfile) -> OrderSelection:
    """Pick the contraction orders the initialization pipeline uses.

    The matrix/tensor orders are the first non-vanishing moments of
    degree >= 2 and >= 3.  The magnitude/sign system orders follow the
    three-way case split on which parities vanish: even activations
    share one even order for both systems, odd activations pair the
    first odd order with the third moment, and the generic case takes
    the first odd and first even orders.
    """
    zero = [None] + [_moment_is_zero(profile, j) for j in range(1, 5)]
    if zero[3] and zero[4]:
        raise ActivationError(
            f"{profile.activation}: third and fourth moments both vanish; "
            "tensor initialization is impossible"
        )
    j2 = next(j for j in (2, 3, 4) if not zero[j])
    j3 = next(j for j in (3, 4) if not zero[j])
    if zero[1] and zero[3]:
        l1 = l2 = next(j for j in (2, 4) if not zero[j])
    elif zero[2] and zero[4]:
        l1 = next(j for j in (1, 3) if not zero[j])
        l2 = 3
    else:
        l1 = next(j for j in (1, 3) if not zero[j])
        l2 = next(j for j in (2, 4) if not zero[j])
    return OrderSelection(j2, j3, l1, l2)
