"""Moment-based spectral initialization.

Three stages: (1) orthogonal iteration on shifted implicit products
with the subspace moment recovers the span of the hidden weights,
(2) the third-order moment reduced onto that span is decomposed into
rank-1 symmetric terms giving the weight directions up to sign, and
(3) two small least-squares systems against lower-order moments recover
each column's norm, its direction sign, and the output sign.  For
homogeneous activations the output signs are exact once the moments are
estimated well enough, and the weight error is linear in the moment
estimation error.  By default every stage consumes the full sample set;
the theory mode (``InitConfig(partition=True)``) feeds each stage a
disjoint third so the stages stay statistically independent.
"""

import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import seeding
from .activations import MomentProfile, gaussian_moments, homogeneous_constants
from .model import SampleSet, TeacherNetwork
from .moments import OrderSelection, empirical_moment, moment_matvec, population_moment, select_orders
from .tensorlab import CpFactors, decompose_rank_k


_LSTSQ_RCOND = 0.05


class InitError(RuntimeError):
    """Pipeline failure, tagged with the stage that raised it."""


class DegenerateSpectrumError(InitError):
    pass


class IllPosedRecoveryError(InitError):
    pass


@dataclass(frozen=True)
class InitConfig:
    power_iters: int = 100
    power_tol: float = 1e-10
    projections: int = 100  # random contractions for the tensor pencil
    alpha_min_coeff: float = 0.05  # accept alpha when min |alpha . V u_i| >= coeff/sqrt(k)
    alpha_max_draws: int = 20
    # theory mode: feed each stage a disjoint third of the samples so the
    # analysis independence assumptions hold; off by default, matching how
    # the reference experiments run the method on the full set
    partition: bool = False
    # sharpen the tensor factors against the better-estimated projected
    # subspace moment, which is congruent in the same factor basis
    joint_polish: bool = True
    seed: int = 0


@dataclass(frozen=True)
class SubspaceBasis:
    V: np.ndarray  # d x k, orthonormal columns
    eig_magnitudes: np.ndarray  # k Rayleigh magnitudes, chosen columns
    split: tuple  # (k1, k2) columns taken from the shifted-plus / shifted-minus branches


@dataclass(frozen=True)
class InitResult:
    W0: np.ndarray
    v0: np.ndarray
    s0: np.ndarray
    zhat: np.ndarray
    rhat: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    basis: Optional[SubspaceBasis] = None

    def to_dict(self):
        return {
            "W0": self.W0.tolist(),
            "v0": self.v0.tolist(),
            "s0": self.s0.tolist(),
            "zhat": self.zhat.tolist(),
            "rhat": self.rhat.tolist(),
            "diagnostics": {
                key: (val.tolist() if isinstance(val, np.ndarray) else val)
                for key, val in self.diagnostics.items()
            },
        }


@contextmanager
def _stage(name):
    try:
        yield
    except InitError as exc:
        if getattr(exc, "_staged", False):
            raise
        exc._staged = True
        exc.args = (f"[{name}] {exc.args[0] if exc.args else ''}",)
        raise
    except Exception as exc:  # noqa: BLE001 - tag and preserve the cause
        err = InitError(f"[{name}] {exc}")
        err._staged = True
        raise err from exc


def _orthonormal_start(rng, d, k):
    q, _ = np.linalg.qr(rng.standard_normal((d, k)))
    return q


def _subspace_change(V_new, V_old):
    # |V V' - Vp Vp'| = sqrt(1 - sigma_min(V' Vp)^2)
    s = np.linalg.svd(V_new.T @ V_old, compute_uv=False)
    return math.sqrt(max(0.0, 1.0 - float(s[-1]) ** 2))


def operator_norm(matvec, d, iters=50, seed=0):
    """Power-iteration estimate of the spectral norm of a symmetric operator."""
    rng = seeding.stream(seed, seeding.NORM_EST)
    v = rng.standard_normal((d, 1))
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = matvec(v)
        nw = float(np.linalg.norm(w))
        if nw < 1e-300:
            return 0.0
        est = nw
        v = w / nw
    return est


def power_method(matvec: Callable, d, k, iters=100, tol=1e-10, seed=0) -> SubspaceBasis:
    """Top-k eigenspace (by eigenvalue magnitude) of a symmetric operator.

    Runs orthogonal iteration on C I + P and C I - P with C three times
    a norm estimate of P, so both iterations have nonnegative spectra
    and the two branches surface the most positive and most negative
    eigenvalues.  The k directions with the largest Rayleigh magnitudes
    across both branches are kept; the second branch's picks are
    orthogonalized against the first.
    """
    if iters < 1:
        raise ValueError("need at least one iteration")
    C = 3.0 * operator_norm(matvec, d, seed=seed)
    if C <= 0.0:
        raise DegenerateSpectrumError("operator norm estimate is zero")

    rng = seeding.stream(seed, seeding.POWER_INIT)
    V1 = _orthonormal_start(rng, d, k)
    V2 = _orthonormal_start(rng, d, k)
    for _ in range(iters):
        V1_new, _ = np.linalg.qr(C * V1 + matvec(V1))
        V2_new, _ = np.linalg.qr(C * V2 - matvec(V2))
        change = max(_subspace_change(V1_new, V1), _subspace_change(V2_new, V2))
        V1, V2 = V1_new, V2_new
        if change < tol:
            break

    candidates = []
    for branch, V in ((1, V1), (2, V2)):
        PV = matvec(V)
        for i in range(k):
            candidates.append((abs(float(V[:, i] @ PV[:, i])), branch, i))
    candidates.sort(key=lambda t: (-t[0], t[1], t[2]))
    picked = candidates[:k]
    idx1 = [i for _, b, i in picked if b == 1]
    idx2 = [i for _, b, i in picked if b == 2]
    V1p, V2p = V1[:, idx1], V2[:, idx2]
    if len(idx2) == 0:
        V = V1p
    elif len(idx1) == 0:
        V = V2p
    else:
        B = V2p - V1p @ (V1p.T @ V2p)
        if np.linalg.svd(B, compute_uv=False)[-1] < 1e-8:
            raise DegenerateSpectrumError("branches picked overlapping directions")
        Q, _ = np.linalg.qr(B)
        V = np.column_stack([V1p, Q])

    # snap the span onto the operator image: one unshifted application
    # is exact for a rank-k operator and undoes the slow mixing the
    # C-shift causes inside the iteration; a rank-deficient image means
    # the operator cannot support k directions at all
    W = matvec(V)
    Uw, sw, _ = np.linalg.svd(W, full_matrices=False)
    if sw[-1] <= 1e-12 * max(sw[0], 1e-300):
        raise DegenerateSpectrumError(
            f"operator image is numerically rank deficient ({sw[-1]:.3e} vs {sw[0]:.3e})"
        )
    V = Uw

    PV = matvec(V)
    mags = np.abs(np.sum(V * PV, axis=0))
    if mags.min() < 1e-10 * C:
        raise DegenerateSpectrumError(
            f"only {int(np.sum(mags >= 1e-10 * C))} directions distinguishable "
            f"from noise (need {k})"
        )
    return SubspaceBasis(V=V, eig_magnitudes=mags, split=(len(idx1), len(idx2)))


def _sign(x):
    return np.where(np.asarray(x) >= 0, 1.0, -1.0)


def _joint_factor_polish(B, T, U0, weight=3.0, max_nfev=2000):
    """Refit the factors against both reduced moments simultaneously.

    B and T are the k x k projected subspace moment and the k x k x k
    reduced tensor; both are congruence-diagonal in the factor basis
    with their own coefficient vectors.  The matrix moment alone leaves
    the basis underdetermined, but it is estimated far more accurately,
    so a joint least-squares fit (factors shared, coefficients free)
    cuts the factor error well below what the tensor supports alone.
    An exact decomposition is a fixed point.
    """
    from scipy.optimize import least_squares

    k = U0.shape[1]
    if k == 1:
        return U0

    def unpack(x):
        U = x[: k * k].reshape(k, k)
        return U, x[k * k : k * k + k], x[k * k + k :]

    def resid(x):
        U, theta, phi = unpack(x)
        Un = U / np.linalg.norm(U, axis=0)
        r_mat = (B - (Un * theta) @ Un.T).ravel() * weight
        r_ten = (T - np.einsum("r,ir,jr,lr->ijl", phi, Un, Un, Un)).ravel()
        return np.concatenate([r_mat, r_ten])

    design2 = np.stack([np.outer(U0[:, i], U0[:, i]).ravel() for i in range(k)], axis=1)
    theta0, *_ = np.linalg.lstsq(design2, B.ravel(), rcond=None)
    design3 = np.stack(
        [np.einsum("i,j,l->ijl", U0[:, i], U0[:, i], U0[:, i]).ravel() for i in range(k)], axis=1
    )
    phi0, *_ = np.linalg.lstsq(design3, T.ravel(), rcond=None)
    sol = least_squares(
        resid, np.concatenate([U0.ravel(), theta0, phi0]), method="lm", max_nfev=max_nfev
    )
    U, _, _ = unpack(sol.x)
    return U / np.linalg.norm(U, axis=0)


def _polished_factors(factors: CpFactors, B, R3, enabled) -> CpFactors:
    if not enabled or factors.k == 1:
        return factors
    U = _joint_factor_polish(0.5 * (B + B.T), R3, factors.factors)
    k = U.shape[1]
    design = np.stack(
        [np.einsum("i,j,l->ijl", U[:, i], U[:, i], U[:, i]).ravel() for i in range(k)], axis=1
    )
    weights, *_ = np.linalg.lstsq(design, np.asarray(R3, dtype=float).ravel(), rcond=None)
    order = np.argsort(-np.abs(weights))
    return CpFactors(weights=weights[order], factors=U[:, order])


def _draw_alpha(rng, VU, coeff, max_draws):
    d = VU.shape[0]
    k = VU.shape[1]
    threshold = coeff / math.sqrt(k)
    for draws in range(1, max_draws + 1):
        g = rng.standard_normal(d)
        alpha = g / np.linalg.norm(g)
        proj = np.abs(alpha @ VU)
        if proj.min() >= threshold:
            return alpha, float(proj.min()), draws
    raise IllPosedRecoveryError(
        f"no projection vector with min |alpha . V u_i| >= {threshold:.3g} in {max_draws} draws"
    )


def _recover(VU, factors, q1_of, q2_of, profile, orders, rng, cfg, basis=None):
    """Shared magnitude/sign recovery once moment callables are fixed.

    ``q1_of(alpha)`` and ``q2_of(alpha)`` return the vector and matrix
    moments of the selected orders for a given projection vector.
    """
    k = factors.k
    c = profile.c
    p = profile.p
    l1, l2 = orders.scale_order, orders.sign_order

    alpha, min_proj, draws = _draw_alpha(rng, VU, cfg.alpha_min_coeff, cfg.alpha_max_draws)
    q1 = q1_of(alpha)
    q2 = q2_of(alpha)

    A1 = VU
    s1 = np.linalg.svd(A1, compute_uv=False)
    U = factors.factors
    A2 = np.stack([np.outer(U[:, i], U[:, i]).reshape(-1) for i in range(k)], axis=1)
    s2 = np.linalg.svd(A2, compute_uv=False)
    if s1[-1] < 1e-8 or s2[-1] < 1e-8:
        raise IllPosedRecoveryError(
            f"linear systems ill posed: sigma_min = {s1[-1]:.3e} (directions), {s2[-1]:.3e} (outer products)"
        )
    # design columns are noisy direction estimates, so singular values
    # below a few percent of the largest carry no signal; truncating
    # them keeps the recovered magnitudes from exploding when two
    # estimated directions nearly coincide
    zhat, *_ = np.linalg.lstsq(A1, q1, rcond=_LSTSQ_RCOND)
    rhat, *_ = np.linalg.lstsq(A2, q2.reshape(-1), rcond=_LSTSQ_RCOND)

    even = abs(c[0]) < 1e-8 and abs(c[2]) < 1e-8
    odd = abs(c[1]) < 1e-8 and abs(c[3]) < 1e-8
    if even:
        v0 = _sign(rhat * c[l2 - 1])
        s0 = np.ones(k)
    elif odd:
        v0 = np.ones(k)
        s0 = _sign(v0 * zhat * c[l1 - 1])
    else:
        v0 = _sign(rhat * c[l2 - 1])
        s0 = _sign(v0 * zhat * c[l1 - 1])

    coeffs = alpha @ VU
    norms = np.abs(zhat / (c[l1 - 1] * coeffs ** (l1 - 1))) ** (1.0 / (p + 1.0))
    W0 = VU * (s0 * norms)

    diagnostics = {
        "residual_z": float(np.linalg.norm(A1 @ zhat - q1)),
        "residual_r": float(np.linalg.norm(A2 @ rhat - q2.reshape(-1))),
        "norm_q1": float(np.linalg.norm(q1)),
        "norm_q2": float(np.linalg.norm(q2)),
        "min_alpha_proj": min_proj,
        "alpha_draws": draws,
        "orders": tuple(orders),
    }
    return InitResult(
        W0=W0, v0=v0, s0=s0, zhat=zhat, rhat=rhat, diagnostics=diagnostics, basis=basis,
    )


def _require_homogeneous(act):
    if not act.homogeneous:
        raise InitError(
            f"magnitude/sign recovery needs a homogeneous activation, got {act.name}"
        )
    homogeneous_constants(act)


def rec_mag_sign(V, factors: CpFactors, samples: SampleSet, profile: MomentProfile,
                 orders: OrderSelection, cfg: InitConfig = InitConfig()) -> InitResult:
    """Column norms and both sign families from two fresh sample halves."""
    S1, S2 = samples.split(2)
    VU = V @ factors.factors
    l1, l2 = orders.scale_order, orders.sign_order
    rng = seeding.stream(cfg.seed, seeding.ALPHA, 1)
    return _recover(
        VU, factors,
        q1_of=lambda a: empirical_moment(S1, l1, ["I"] + [a] * (l1 - 1)),
        q2_of=lambda a: empirical_moment(S2, l2, [V, V] + [a] * (l2 - 2)),
        profile=profile, orders=orders, rng=rng, cfg=cfg,
    )


def initialize(samples: SampleSet, k, activation, cfg: InitConfig = InitConfig()) -> InitResult:
    """Full pipeline on one sample set: subspace, factors, magnitudes, signs.

    With ``cfg.partition`` the three stages consume disjoint thirds of
    the samples (the independence structure the guarantees assume);
    otherwise every stage sees the full set, which is how the method is
    run in practice.
    """
    act = activation
    d = samples.d

    with _stage("eligibility"):
        _require_homogeneous(act)
        profile = gaussian_moments(act, 1.0)
        orders = select_orders(profile)
    j2, j3 = orders.subspace_order, orders.tensor_order

    if cfg.partition:
        S2, S3, S4 = samples.split(3)
    else:
        S2 = S3 = S4 = samples
    alpha_pipe = None
    if j2 > 2 or j3 > 3:
        rng = seeding.stream(cfg.seed, seeding.ALPHA, 0)
        g = rng.standard_normal(d)
        alpha_pipe = g / np.linalg.norm(g)

    with _stage("power_method"):
        matvec = lambda V: moment_matvec(S2, j2, alpha_pipe, V)  # noqa: E731
        basis = power_method(
            matvec, d, k, iters=cfg.power_iters, tol=cfg.power_tol, seed=cfg.seed,
        )
    with _stage("tensor_decomposition"):
        slots = [basis.V, basis.V, basis.V] + [alpha_pipe] * (j3 - 3)
        R3 = empirical_moment(S3, j3, slots)
        factors = decompose_rank_k(R3, k, L=cfg.projections, seed=cfg.seed)
        factors = _polished_factors(factors, basis.V.T @ matvec(basis.V), R3, cfg.joint_polish)
    with _stage("rec_mag_sign"):
        result = rec_mag_sign(basis.V, factors, S4, profile, orders, cfg)
    return replace(result, basis=basis)


def initialize_population(teacher: TeacherNetwork, cfg: InitConfig = InitConfig()) -> InitResult:
    """Pipeline with exact moments substituted for every estimator.

    Isolates the algebra of the method from sampling noise: with exact
    inputs the output matches the teacher up to column permutation and
    floating-point error.
    """
    act = teacher.activation
    d, k = teacher.d, teacher.k

    with _stage("eligibility"):
        _require_homogeneous(act)
        profile = gaussian_moments(act, 1.0)
        orders = select_orders(profile)
    j2, j3 = orders.subspace_order, orders.tensor_order

    alpha_pipe = None
    if j2 > 2 or j3 > 3:
        rng = seeding.stream(cfg.seed, seeding.ALPHA, 0)
        g = rng.standard_normal(d)
        alpha_pipe = g / np.linalg.norm(g)

    with _stage("power_method"):
        P2 = population_moment(teacher, j2, ["I", "I"] + [alpha_pipe] * (j2 - 2))
        basis = power_method(
            lambda V: P2 @ V, d, k, iters=cfg.power_iters, tol=cfg.power_tol, seed=cfg.seed,
        )
    with _stage("tensor_decomposition"):
        slots = [basis.V, basis.V, basis.V] + [alpha_pipe] * (j3 - 3)
        R3 = population_moment(teacher, j3, slots)
        factors = decompose_rank_k(R3, k, L=cfg.projections, seed=cfg.seed)
        factors = _polished_factors(factors, basis.V.T @ P2 @ basis.V, R3, cfg.joint_polish)
    with _stage("rec_mag_sign"):
        VU = basis.V @ factors.factors
        l1, l2 = orders.scale_order, orders.sign_order
        rng = seeding.stream(cfg.seed, seeding.ALPHA, 1)
        result = _recover(
            VU, factors,
            q1_of=lambda a: population_moment(teacher, l1, ["I"] + [a] * (l1 - 1)),
            q2_of=lambda a: population_moment(teacher, l2, [basis.V, basis.V] + [a] * (l2 - 2)),
            profile=profile, orders=orders, rng=rng, cfg=cfg, basis=basis,
        )
    return result
