"""Activation functions and their Gaussian moment functionals.

For an activation ``phi`` and a scale ``sigma > 0`` the recovery
machinery needs the scalar functionals

    gamma_j(sigma) = E[phi(sigma z) z^j]          j = 0..4
    alpha_q(sigma) = E[phi'(sigma z) z^q]         q = 0, 1, 2
    beta_q(sigma)  = E[phi'(sigma z)^2 z^q]       q = 0, 2

with z standard normal, plus the derived Hermite-moment coefficients

    m_1 = gamma_1
    m_2 = gamma_2 - gamma_0
    m_3 = gamma_3 - 3 gamma_1
    m_4 = gamma_4 + 3 gamma_0 - 6 gamma_2

and the non-linearity margin

    rho = min(beta_0 - alpha_0^2 - alpha_1^2,
              beta_2 - alpha_1^2 - alpha_2^2,
              alpha_0 alpha_2 - alpha_1^2).

A positive margin on every scale is what separates genuinely non-linear
activations (ReLU, sigmoid, ...) from the linear/quadratic controls and
drives positive definiteness of the loss Hessian near the optimum.

All functionals are evaluated by adaptive quadrature: Gauss-Hermite for
smooth integrands, falling back to composite Gauss-Legendre on panels
split at the kink pre-images z = kink / sigma when the integrand is
only piecewise smooth (or when Gauss-Hermite stalls, e.g. sigmoid at
large sigma, whose derivative has poles close to the real axis).
"""

import math
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

SQRT2PI = math.sqrt(2.0 * math.pi)

# |z| beyond which the Gaussian weight is below double-precision noise
# for polynomially bounded integrands
_Z_CUTOFF = 12.0
_NODES_START = 64
_NODES_CAP = 1024
_CONVERGED_TOL = 1e-9
_FAIL_TOL = 1e-6

# |m_j| or |c_j| below this counts as an exactly vanishing moment
ZERO_MOMENT_TOL = 1e-8


class QuadratureError(RuntimeError):
    """Raised when node doubling fails to stabilise an integral."""


class ActivationError(ValueError):
    """Raised for activations that do not support a requested operation."""


@dataclass(frozen=True)
class ActivationSpec:
    """One activation: callables, kink structure, and known constants.

    ``dphi`` is the left derivative at kinks.  ``ddphi`` is None for
    piecewise-linear activations (second derivative vanishes off the
    kink set).  ``p`` is the degree in the homogeneity relation
    phi(a z) = a^(p+1) phi(z); None when not homogeneous.
    """

    name: str
    phi: Callable
    dphi: Callable
    ddphi: Optional[Callable]
    kinks: tuple = ()
    p: Optional[float] = None
    smoothness_class: str = "3a"  # "3a" bounded phi'', "3b" piecewise linear
    L1: Optional[float] = None
    L2: Optional[float] = None

    @property
    def homogeneous(self) -> bool:
        return self.p is not None

    def __repr__(self):
        return f"ActivationSpec({self.name!r})"


@dataclass(frozen=True)
class MomentProfile:
    """Gaussian functionals of one activation at one scale."""

    activation: str
    sigma: float
    gamma: tuple  # gamma_0 .. gamma_4
    alpha: tuple  # alpha_0 .. alpha_2
    beta0: float
    beta2: float
    rho: float
    m: tuple  # m_1 .. m_4
    p: Optional[float] = None
    c: Optional[tuple] = None  # c_1 .. c_4, homogeneous activations only
    j2: Optional[int] = None
    j3: Optional[int] = None
    l1: Optional[int] = None
    l2: Optional[int] = None
    tau: Optional[float] = None

    def with_orders(self, j2, j3, l1, l2):
        return replace(self, j2=j2, j3=j3, l1=l1, l2=l2)


@dataclass(frozen=True)
class PropertyReport:
    """Outcome of the numeric property checks on a sigma grid."""

    activation: str
    sigma_grid: tuple
    derivative_nonnegative: bool
    fitted_L1: float
    rho_values: tuple
    rho_positive: bool
    smoothness_class: str
    kink_count: int
    homogeneous: bool
    homogeneity_verified: bool
    vanishing_m: tuple  # orders j in 1..4 with m_j == 0 on the whole grid
    parity: str  # "even", "odd", or "none"
    eligible_for_tensor_init: bool
    j2: Optional[int] = None
    j3: Optional[int] = None
    l1: Optional[int] = None
    l2: Optional[int] = None


# ---------------------------------------------------------------------------
# quadrature


@lru_cache(maxsize=None)
def _hermite_nodes(n):
    # probabilists' convention: integral of f(x) exp(-x^2/2) dx; the
    # node solver overflows internally at high degree, so guard and let
    # the caller fall through to the panel rule
    with np.errstate(all="ignore"):
        x, w = np.polynomial.hermite_e.hermegauss(n)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        return None
    return x, w

@lru_cache(maxsize=None)
def _legendre_nodes(n):
    return np.polynomial.legendre.leggauss(n)


def _gauss_hermite(f, n):
    nodes = _hermite_nodes(n)
    if nodes is None:
        return None
    x, w = nodes
    return float(w @ f(x)) / SQRT2PI


def _panel_quad(f, panels, n):
    x, w = _legendre_nodes(n)
    total = 0.0
    for a, b in panels:
        z = 0.5 * (b - a) * x + 0.5 * (b + a)
        total += 0.5 * (b - a) * float(w @ (f(z) * np.exp(-0.5 * z * z)))
    return total / SQRT2PI


def _panels(split_points):
    pts = sorted({-_Z_CUTOFF, _Z_CUTOFF, *(float(s) for s in split_points if abs(s) < _Z_CUTOFF)})
    # fixed dyadic refinement toward 0 keeps sharply scaled integrands
    # (sigmoid' at sigma = 10) resolvable without global node blow-up
    base = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
    pts = sorted({*pts, *[s for s in base + [-s for s in base] if abs(s) < _Z_CUTOFF]})
    return list(zip(pts[:-1], pts[1:]))


def gaussian_expect(f, kinks_z=()):
    """E[f(z)] for z ~ N(0,1) by adaptive node doubling.

    ``kinks_z`` lists points where f is not smooth; with kinks present
    (or when plain Gauss-Hermite stalls) the integral is evaluated on
    Gauss-Legendre panels split at those points.
    """
    if not kinks_z:
        prev = _gauss_hermite(f, _NODES_START)
        n = _NODES_START
        while prev is not None and n < _NODES_CAP:
            n *= 2
            cur = _gauss_hermite(f, n)
            if cur is None:
                break
            if abs(cur - prev) < _CONVERGED_TOL * max(1.0, abs(cur)):
                return cur
            prev = cur
    panels = _panels(kinks_z)
    prev = _panel_quad(f, panels, _NODES_START)
    n = _NODES_START
    while n < _NODES_CAP:
        n *= 2
        cur = _panel_quad(f, panels, n)
        if abs(cur - prev) < _CONVERGED_TOL * max(1.0, abs(cur)):
            return cur
        prev = cur
    if abs(cur - prev) > _FAIL_TOL * max(1.0, abs(cur)):
        raise QuadratureError(f"integral did not stabilise below {_FAIL_TOL} at {_NODES_CAP} nodes")
    return cur


# ---------------------------------------------------------------------------
# moment functionals


def _kinks_z(act, sigma):
    return tuple(k / sigma for k in act.kinks)


def gaussian_moments(act: ActivationSpec, sigma: float) -> MomentProfile:
    """All nine scalar functionals of ``act`` at scale ``sigma``.

    Order selection fields are left unset; they are filled by the
    moment-selection logic once the caller knows it needs them.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    kz = _kinks_z(act, sigma)
    gamma = tuple(gaussian_expect(lambda z, j=j: act.phi(sigma * z) * z**j, kz) for j in range(5))
    alpha = tuple(gaussian_expect(lambda z, q=q: act.dphi(sigma * z) * z**q, kz) for q in range(3))
    beta0 = gaussian_expect(lambda z: act.dphi(sigma * z) ** 2, kz)
    beta2 = gaussian_expect(lambda z: act.dphi(sigma * z) ** 2 * z * z, kz)
    m = (
        gamma[1],
        gamma[2] - gamma[0],
        gamma[3] - 3.0 * gamma[1],
        gamma[4] + 3.0 * gamma[0] - 6.0 * gamma[2],
    )
    r = _rho_from(alpha, beta0, beta2)
    c = None
    if act.homogeneous:
        scale = sigma ** (act.p + 1.0)
        c = tuple(mj / scale for mj in m)
    return MomentProfile(
        activation=act.name, sigma=float(sigma), gamma=gamma, alpha=alpha,
        beta0=beta0, beta2=beta2, rho=r, m=m, p=act.p, c=c,
    )


def _rho_from(alpha, beta0, beta2):
    return min(
        beta0 - alpha[0] ** 2 - alpha[1] ** 2,
        beta2 - alpha[1] ** 2 - alpha[2] ** 2,
        alpha[0] * alpha[2] - alpha[1] ** 2,
    )


def rho(act: ActivationSpec, sigma: float) -> float:
    """Non-linearity margin rho(sigma)."""
    return gaussian_moments(act, sigma).rho


def conditioning_tau(act: ActivationSpec, sigma_min: float, sigma_max: float, num=25) -> float:
    """(3 sigma_max / 2)^(4p) / min rho(sigma)^2 over [sigma_min/2, 3 sigma_max/2].

    The scale interval brackets every column norm a descent iterate can
    visit while it stays near the optimum.
    """
    p = act.p if act.homogeneous else 0.0
    grid = np.linspace(sigma_min / 2.0, 1.5 * sigma_max, num)
    rho_min = min(rho(act, s) for s in grid if s > 0)
    if rho_min <= 0:
        return math.inf
    return (1.5 * sigma_max) ** (4.0 * p) / rho_min**2


def homogeneous_constants(act: ActivationSpec):
    """(c_1, .., c_4) with m_j(sigma) = c_j sigma^(p+1).

    Verified numerically: the rescaled moments must agree across
    sigma in {0.5, 1, 2} to 1e-8 relative.
    """
    if not act.homogeneous:
        raise ActivationError(f"{act.name} is not homogeneous")
    _verify_homogeneity(act)
    ref = gaussian_moments(act, 1.0).c
    for s in (0.5, 2.0):
        other = gaussian_moments(act, s).c
        for a, b in zip(ref, other):
            if abs(a - b) > 1e-8 * max(1.0, abs(a)):
                raise ActivationError(
                    f"{act.name}: m_j(sigma)/sigma^(p+1) not constant ({a} vs {b} at sigma={s})"
                )
    return ref


def _verify_homogeneity(act, tol=1e-9):
    z = np.linspace(-3.0, 3.0, 41)
    for a in (2.0, 3.0):
        want = a ** (act.p + 1.0) * act.phi(z)
        got = act.phi(a * z)
        if not np.allclose(got, want, rtol=tol, atol=tol):
            raise ActivationError(f"{act.name}: phi(a z) != a^(p+1) phi(z); declared p is wrong")


def _parity(act, tol=1e-10):
    z = np.linspace(0.1, 4.0, 23)
    f, g = act.phi(z), act.phi(-z)
    if np.max(np.abs(f - g)) < tol:
        return "even"
    if np.max(np.abs(f + g)) < tol:
        return "odd"
    return "none"


def check_properties(act: ActivationSpec, sigma_grid) -> PropertyReport:
    """Numeric audit of the derivative, margin, and moment structure.

    Everything the tensor initialization needs to know about an
    activation is decided here: which Hermite moments vanish, the
    resulting contraction orders, and whether the activation is
    eligible at all (at least one of m_3, m_4 must survive).
    """
    sigma_grid = tuple(float(s) for s in sigma_grid)
    if not sigma_grid or min(sigma_grid) <= 0:
        raise ValueError("sigma_grid must be nonempty and positive")

    z = np.linspace(-8.0, 8.0, 1601)
    d = act.dphi(z)
    nonneg = bool(np.all(d >= -1e-12))
    p_fit = act.p if act.homogeneous else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(d) / np.maximum(np.abs(z) ** p_fit, 1e-300)
    fitted_L1 = float(np.max(ratio[np.abs(z) > 1e-6]))

    profiles = [gaussian_moments(act, s) for s in sigma_grid]
    rho_values = tuple(pr.rho for pr in profiles)
    rho_positive = all(r > 1e-6 for r in rho_values)

    vanishing = tuple(
        j for j in range(1, 5)
        if all(abs(pr.m[j - 1]) < ZERO_MOMENT_TOL for pr in profiles)
    )
    eligible = not (3 in vanishing and 4 in vanishing)

    homog_ok = False
    if act.homogeneous:
        try:
            _verify_homogeneity(act)
            homog_ok = True
        except ActivationError:
            homog_ok = False

    j2 = j3 = l1 = l2 = None
    if eligible:
        from .moments import select_orders  # late import, avoids a cycle

        j2, j3, l1, l2 = select_orders(profiles[0])

    return PropertyReport(
        activation=act.name,
        sigma_grid=sigma_grid,
        derivative_nonnegative=nonneg,
        fitted_L1=fitted_L1,
        rho_values=rho_values,
        rho_positive=rho_positive,
        smoothness_class=act.smoothness_class,
        kink_count=len(act.kinks),
        homogeneous=act.homogeneous,
        homogeneity_verified=homog_ok,
        vanishing_m=vanishing,
        parity=_parity(act),
        eligible_for_tensor_init=eligible,
        j2=j2, j3=j3, l1=l1, l2=l2,
    )


# ---------------------------------------------------------------------------
# the zoo


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def _dsigmoid(z):
    s = _sigmoid(z)
    return s * (1.0 - s)


def _ddsigmoid(z):
    s = _sigmoid(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


_ERF_SCALE = math.sqrt(math.pi) / 2.0

ACTIVATIONS = {
    "relu": ActivationSpec(
        name="relu",
        phi=lambda z: np.maximum(z, 0.0),
        dphi=lambda z: (z > 0).astype(float),
        ddphi=None,
        kinks=(0.0,),
        p=0.0,
        smoothness_class="3b",
        L1=1.0,
    ),
    "leaky_relu": ActivationSpec(
        name="leaky_relu",
        phi=lambda z: np.maximum(z, 0.01 * z),
        dphi=lambda z: np.where(z > 0, 1.0, 0.01),
        ddphi=None,
        kinks=(0.0,),
        p=0.0,
        smoothness_class="3b",
        L1=1.0,
    ),
    "squared_relu": ActivationSpec(
        name="squared_relu",
        phi=lambda z: np.maximum(z, 0.0) ** 2,
        dphi=lambda z: 2.0 * np.maximum(z, 0.0),
        ddphi=lambda z: 2.0 * (z > 0).astype(float),
        kinks=(0.0,),
        p=1.0,
        smoothness_class="3a",
        L1=2.0,
        L2=2.0,
    ),
    "sigmoid": ActivationSpec(
        name="sigmoid",
        phi=_sigmoid,
        dphi=_dsigmoid,
        ddphi=_ddsigmoid,
        smoothness_class="3a",
        L1=0.25,
        L2=0.1,
    ),
    "tanh": ActivationSpec(
        name="tanh",
        phi=np.tanh,
        dphi=lambda z: 1.0 - np.tanh(z) ** 2,
        ddphi=lambda z: -2.0 * np.tanh(z) * (1.0 - np.tanh(z) ** 2),
        smoothness_class="3a",
        L1=1.0,
        L2=0.7699,
    ),
    # integral-of-Gaussian flavour of erf: phi(z) = int_0^z exp(-t^2) dt
    "erf": ActivationSpec(
        name="erf",
        phi=lambda z: _ERF_SCALE * _np_erf(z),
        dphi=lambda z: np.exp(-(z**2)),
        ddphi=lambda z: -2.0 * z * np.exp(-(z**2)),
        smoothness_class="3a",
        L1=1.0,
        L2=0.8578,
    ),
    # negative controls: rho == 0 (linear) and rho < 0 (quadratic)
    "linear": ActivationSpec(
        name="linear",
        phi=lambda z: np.asarray(z, dtype=float),
        dphi=lambda z: np.ones_like(np.asarray(z, dtype=float)),
        ddphi=lambda z: np.zeros_like(np.asarray(z, dtype=float)),
        p=0.0,
        smoothness_class="3a",
        L1=1.0,
        L2=0.0,
    ),
    "quadratic": ActivationSpec(
        name="quadratic",
        phi=lambda z: np.asarray(z, dtype=float) ** 2,
        dphi=lambda z: 2.0 * np.asarray(z, dtype=float),
        ddphi=lambda z: np.full_like(np.asarray(z, dtype=float), 2.0),
        p=1.0,
        smoothness_class="3a",
        L2=2.0,
    ),
}


def _np_erf(z):
    from scipy.special import erf as _erf

    return _erf(np.asarray(z, dtype=float))


def get_activation(name: str) -> ActivationSpec:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ActivationError(f"unknown activation {name!r}; known: {sorted(ACTIVATIONS)}") from None


def rho_erf_closed_form(sigma: float) -> float:
    """Closed form of the margin for the integral-of-Gaussian erf."""
    s2 = sigma * sigma
    return min(
        (4 * s2 + 1) ** -0.5 - (2 * s2 + 1) ** -1.0,
        (4 * s2 + 1) ** -1.5 - (2 * s2 + 1) ** -3.0,
        (2 * s2 + 1) ** -2.0,
    )
