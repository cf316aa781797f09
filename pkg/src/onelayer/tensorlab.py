"""Dense 3-way tensor algebra and low-rank symmetric decomposition.

Tensors are plain ndarrays of shape (m, m, m).  The special outer
products place a vector (or a symmetric matrix) against identity slots
symmetrically across the three modes; they are the correction terms
that turn raw outer-product moments into Hermite-style score moments.

``decompose_rank_k`` factors a (nearly) rank-k symmetric tensor into
weighted rank-1 symmetric terms by simultaneous diagonalization: random
contractions of the last mode give a pencil of matrices sharing the
factor basis, and the generalized eigenvectors of the best-conditioned
pair recover the factors up to permutation and a joint sign flip of
(weight, factor).
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import seeding


class DecompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class CpFactors:
    """Weights and unit factors of sum_i weight_i factor_i^(x3)."""

    weights: np.ndarray  # length k, sorted by magnitude descending
    factors: np.ndarray  # m x k, unit columns

    @property
    def k(self):
        return self.factors.shape[1]

    def reconstruct(self):
        return np.einsum("i,ai,bi,ci->abc", self.weights, self.factors, self.factors, self.factors)


def sym_outer_id(v):
    """sum_j (v x e_j x e_j + e_j x v x e_j + e_j x e_j x v)."""
    v = np.asarray(v, dtype=float)
    m = v.shape[0]
    eye = np.eye(m)
    T = np.multiply.outer(v, eye)
    return T + T.transpose(1, 0, 2) + T.transpose(1, 2, 0)


def sym_outer_mat(a, B, atol=1e-12):
    """T[i,j,l] = a_i B_jl + a_j B_il + a_l B_ij for symmetric B."""
    a = np.asarray(a, dtype=float)
    B = np.asarray(B, dtype=float)
    if not np.allclose(B, B.T, atol=atol, rtol=0):
        raise ValueError("B must be symmetric")
    T = np.multiply.outer(a, B)
    return T + T.transpose(1, 0, 2) + T.transpose(1, 2, 0)


def contract(T, A, B, C):
    """Triple contraction T(A, B, C); vectors act as one-column slots.

    Entry (a,b,c) is sum_{ijl} T[i,j,l] A[i,a] B[j,b] C[l,c].  Vector
    slots drop their mode, so e.g. T(I, I, g) is a matrix slice.
    """
    out = np.asarray(T, dtype=float)
    subs = "abc"
    terms, keep, operands = [], [], []
    for mode, S in enumerate((A, B, C)):
        S = np.asarray(S, dtype=float)
        if S.ndim == 1:
            terms.append(subs[mode])
        elif S.ndim == 2:
            terms.append(subs[mode] + subs[mode].upper())
            keep.append(subs[mode].upper())
        else:
            raise ValueError("slots must be vectors or matrices")
        operands.append(S)
    expr = "abc," + ",".join(terms) + "->" + "".join(keep)
    return np.einsum(expr, out, *operands, optimize=True)


def is_symmetric(T, atol=1e-12):
    T = np.asarray(T)
    for perm in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        if not np.allclose(T, T.transpose(perm), atol=atol, rtol=0):
            return False
    return True


def symmetrize(T):
    acc = np.zeros_like(np.asarray(T, dtype=float))
    for perm in ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
        acc += T.transpose(perm)
    return acc / 6.0


def flatten_mode0(T):
    m = T.shape[0]
    return np.asarray(T, dtype=float).reshape(m, m * m)


def operator_norm_estimate(T, restarts=10, seed=0, iters=200, tol=1e-12):
    """Bracket the operator norm max_{|a|=1} |T(a,a,a)| of symmetric T.

    Returns (estimate, upper): a lower-bound estimate from projected
    power iteration a <- normalize(T(a, a, I)) over several random
    starts, and the mode-0 flattening spectral norm, which dominates
    the operator norm.  Non-convergent starts contribute their best
    iterate.
    """
    T = np.asarray(T, dtype=float)
    m = T.shape[0]
    upper = float(np.linalg.norm(flatten_mode0(T), 2))
    if upper == 0.0:
        return 0.0, 0.0
    rng = seeding.stream(seed, seeding.NORM_EST)
    best = 0.0
    for _ in range(restarts):
        a = rng.standard_normal(m)
        a /= np.linalg.norm(a)
        prev = 0.0
        for _ in range(iters):
            b = np.einsum("ijl,i,j->l", T, a, a)
            nb = np.linalg.norm(b)
            if nb < 1e-300:
                break
            a = b / nb
            val = abs(float(np.einsum("ijl,i,j,l->", T, a, a, a)))
            if abs(val - prev) < tol * max(1.0, val):
                break
            prev = val
        best = max(best, abs(float(np.einsum("ijl,i,j,l->", T, a, a, a))))
    return best, upper


def _align_sign(u):
    # canonical orientation: largest-magnitude entry positive
    i = int(np.argmax(np.abs(u)))
    return u if u[i] >= 0 else -u


def decompose_rank_k(T, k, L=100, seed=0) -> CpFactors:
    """Rank-k symmetric decomposition via a random-projection pencil.

    Draws L random unit vectors, forms the slices T(I, I, g), and runs
    the generalized eigenproblem of the two best-conditioned slices.
    Weights are then the least-squares fit of the rank-1 terms to T.
    Factors come back sorted by weight magnitude; the caller aligns
    permutations and signs.
    """
    T = np.asarray(T, dtype=float)
    m = T.shape[0]
    if T.shape != (m, m, m):
        raise ValueError(f"expected a cubic tensor, got shape {T.shape}")
    if not (1 <= k <= m):
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    if L < 2:
        raise ValueError("need at least two random projections")
    T = symmetrize(T)

    rng = seeding.stream(seed, seeding.PENCIL)
    G = rng.standard_normal((m, L))
    G /= np.linalg.norm(G, axis=0)
    slices = [np.einsum("ijl,l->ij", T, G[:, i]) for i in range(L)]

    # restrict to the dominant k-dimensional slice space so the pencil
    # is square and noise outside the factor span is projected away
    stacked = np.concatenate(slices, axis=1)
    Ub, _, _ = np.linalg.svd(stacked, full_matrices=False)
    basis = Ub[:, :k]
    proj = [basis.T @ M @ basis for M in slices]

    sigma = [np.linalg.svd(M, compute_uv=False) for M in proj]
    base = int(np.argmax([s[-1] for s in sigma]))
    if sigma[base][-1] < 1e-10 * max(s[0] for s in sigma):
        raise DecompositionError(
            "slice pencil numerically rank deficient: sigma_min/sigma_max = "
            f"{sigma[base][-1] / max(s[0] for s in sigma):.3e}"
        )

    starts = []
    pencil = _pencil_start(proj, basis, base, k, L)
    if pencil is not None:
        starts.append(pencil)
    # fallbacks reached only when noise degenerates the pencil: the
    # symmetric eigenbasis of the steadiest slice, then a random frame
    eigvals, eigvecs = np.linalg.eigh(proj[base])
    order = np.argsort(-np.abs(eigvals))
    starts.append(basis @ eigvecs[:, order])
    q, _ = np.linalg.qr(rng.standard_normal((m, k)))
    starts.append(q)

    best = None
    for U0 in starts:
        weights, factors, fit = _sym_cp_als(T, U0)
        if best is None or fit < best[2]:
            best = (weights, factors, fit)
        if fit <= 1e-12 * max(1.0, float(np.linalg.norm(T))):
            break
    weights, factors, _ = best

    factors = np.column_stack([_align_sign(factors[:, i]) for i in range(k)])
    design = np.stack(
        [np.multiply.outer(np.outer(factors[:, i], factors[:, i]), factors[:, i]).reshape(-1) for i in range(k)],
        axis=1,
    )
    weights, *_ = np.linalg.lstsq(design, T.reshape(-1), rcond=None)

    idx = np.argsort(-np.abs(weights))
    return CpFactors(weights=weights[idx], factors=factors[:, idx])


def _pencil_start(proj, basis, base, k, L):
    """Factor estimate from the generalized eigenproblem of two slices.

    The partner slice is the one whose ratio eigenvalues are best
    separated; colliding ratios are what makes a noisy pencil go
    complex.  Returns None when the eigenvector basis degenerates.
    """
    M2 = proj[base]
    best_score, best = -np.inf, None
    for cand in range(L):
        if cand == base:
            continue
        vals = np.linalg.eigvals(np.linalg.solve(M2, proj[cand]))
        spread = max(float(np.abs(vals).max()), 1e-300)
        gap = (
            min(abs(vals[i] - vals[j]) for i in range(k) for j in range(i + 1, k))
            if k > 1
            else spread
        )
        score = gap / spread - 10.0 * float(np.max(np.abs(vals.imag))) / spread
        if score > best_score:
            best_score, best = score, cand

    vals, vecs = np.linalg.eig(np.linalg.solve(M2, proj[best]))
    if np.any(np.abs(vals.imag) > 1e-6 * np.maximum(np.abs(vals.real), 1e-300)):
        warnings.warn(
            "pencil eigenvalues have nontrivial imaginary parts; taking real parts",
            RuntimeWarning,
            stacklevel=3,
        )
    else:
        # eigenpair residual guards the eigensolver itself
        M1 = proj[best]
        scale = max(np.linalg.norm(M1) + np.linalg.norm(M2), 1.0)
        for i in range(k):
            r = np.linalg.norm(M1 @ vecs[:, i] - vals[i] * (M2 @ vecs[:, i]))
            if r > 1e-8 * scale:
                raise DecompositionError(f"pencil eigenpair residual {r:.3e} exceeds tolerance")
    vecs = vecs.real
    if np.linalg.cond(vecs) > 1e8:
        return None
    # generalized eigenvectors span the dual of the factor basis
    factors = basis @ np.linalg.inv(vecs).T
    norms = np.linalg.norm(factors, axis=0)
    if np.any(norms < 1e-300):
        return None
    return factors / norms


def _sym_cp_als(T, U0, iters=300, tol=1e-14):
    """Rank-k CP least squares seeded at U0; returns (weights, factors, fit).

    The three slots are updated independently; for symmetric input the
    iterates stay symmetric up to per-column sign patterns, and an
    exact decomposition is a fixed point.
    """
    m, k = U0.shape
    A = B = C = U0 / np.linalg.norm(U0, axis=0)
    lam = np.ones(k)
    norm_T = float(np.linalg.norm(T))
    prev_fit = np.inf
    views = (T.reshape(m, -1),
             T.transpose(1, 0, 2).reshape(m, -1),
             T.transpose(2, 0, 1).reshape(m, -1))
    for _ in range(iters):
        for mode in range(3):
            pair = (B, C) if mode == 0 else (A, C) if mode == 1 else (A, B)
            KR = np.einsum("jr,lr->jlr", *pair).reshape(-1, k)
            gram = (pair[0].T @ pair[0]) * (pair[1].T @ pair[1])
            F = np.linalg.solve(gram + 1e-14 * np.eye(k), (views[mode] @ KR).T).T
            norms = np.linalg.norm(F, axis=0)
            if np.any(norms < 1e-300):
                return lam, C, np.inf
            F = F / norms
            if mode == 0:
                A = F
            elif mode == 1:
                B = F
            else:
                C, lam = F, norms
        recon = np.einsum("r,ir,jr,lr->ijl", lam, A, B, C)
        fit = float(np.linalg.norm(T - recon))
        if abs(prev_fit - fit) < tol * max(1.0, norm_T):
            break
        prev_fit = fit
    return lam, C, fit


def save_tensor_csv(T, path):
    """Flat (i, j, l, value) dump for debugging."""
    T = np.asarray(T, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "l", "value"])
        for i in range(T.shape[0]):
            for j in range(T.shape[1]):
                for l in range(T.shape[2]):
                    writer.writerow([i, j, l, repr(float(T[i, j, l]))])
