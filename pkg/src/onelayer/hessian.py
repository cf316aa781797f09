"""Dense empirical Hessian of the squared loss and its spectrum.

Block (j, l) of the dk x dk Hessian in the hidden weights is the
sample mean of v_j v_l phi'(w_j.x) phi'(w_l.x) x x'; smooth activations
add the residual-weighted phi'' term on the diagonal blocks, while
piecewise-linear ones drop it (their second derivative vanishes almost
surely).  Near the teacher the spectrum sits inside a bracket whose
lower end scales with the activation's non-linearity margin and whose
upper end scales with k sigma_1^(2p); the report carries both ends and
the measured extremes.
"""

from dataclasses import dataclass

import numpy as np

from . import seeding
from .activations import rho
from .model import SampleSet, TeacherNetwork, condition_numbers, sample

_DENSE_LIMIT = 2000


class HessianSizeError(ValueError):
    pass


@dataclass(frozen=True)
class HessianReport:
    lambda_min: float
    lambda_max: float
    theory_lower: float  # v_min^2 rho(sigma_k) / (kappa^2 lambda)
    theory_upper: float  # k v_max^2 sigma_1^(2p)
    n: int
    distance: float  # |W - W*|_F / |W*|_F

    @property
    def lower_ratio(self):
        return self.lambda_min / self.theory_lower if self.theory_lower > 0 else float("inf")

    @property
    def upper_ratio(self):
        return self.lambda_max / self.theory_upper

    def to_dict(self):
        return {
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "theory_lower": self.theory_lower,
            "theory_upper": self.theory_upper,
            "lower_ratio": self.lower_ratio,
            "upper_ratio": self.upper_ratio,
            "n": self.n,
            "distance": self.distance,
        }


def _force_symmetric(H):
    lower = np.tril(H)
    return lower + np.tril(H, -1).T


def empirical_hessian(W, v, samples: SampleSet, act):
    """Exactly symmetric dk x dk matrix, blocks ordered column-major in W."""
    d, k = W.shape
    if d * k > _DENSE_LIMIT:
        raise HessianSizeError(f"dk = {d * k} exceeds the dense limit {_DENSE_LIMIT}")
    X, y = samples.X, samples.y
    n = samples.n
    Z = W.T @ X
    C = v[:, None] * act.dphi(Z)  # k x n
    # stack so row (j*d + a) is c_j(x_s) x_a(x_s); the Gram of this
    # stack is the phi'-squared part of the Hessian
    F = (C[:, None, :] * X[None, :, :]).reshape(k * d, n)
    H = _force_symmetric(F @ F.T / n)
    if act.smoothness_class == "3a":
        res = v @ act.phi(Z) - y
        DD = act.ddphi(Z)
        for j in range(k):
            w = res * v[j] * DD[j]
            block = _force_symmetric((X * w) @ X.T / n)
            H[j * d : (j + 1) * d, j * d : (j + 1) * d] += block
    return H


def spectrum_report(teacher: TeacherNetwork, W, n, seed) -> HessianReport:
    """Eigenvalue extremes at W on fresh samples, beside the theory bracket."""
    samples = sample(teacher, n, seed)
    H = empirical_hessian(W, teacher.v, samples, teacher.activation)
    eigs = np.linalg.eigvalsh(H)
    cn = condition_numbers(teacher)
    p = teacher.activation.p if teacher.activation.homogeneous else 0.0
    rho_k = rho(teacher.activation, float(cn.sigma[-1]))
    theory_lower = cn.v_min**2 * max(rho_k, 0.0) / (cn.kappa**2 * cn.lam)
    theory_upper = teacher.k * cn.v_max**2 * float(cn.sigma[0]) ** (2.0 * p)
    dist = float(np.linalg.norm(W - teacher.W, "fro") / np.linalg.norm(teacher.W, "fro"))
    return HessianReport(
        lambda_min=float(eigs[0]),
        lambda_max=float(eigs[-1]),
        theory_lower=float(theory_lower),
        theory_upper=float(theory_upper),
        n=int(n),
        distance=dist,
    )


def offset_weights(teacher: TeacherNetwork, distance, seed):
    """Teacher weights moved by a random direction of given relative size."""
    if distance == 0:
        return teacher.W.copy()
    rng = seeding.stream(seed, seeding.PROBE)
    delta = rng.standard_normal(teacher.W.shape)
    delta *= distance * np.linalg.norm(teacher.W, "fro") / np.linalg.norm(delta, "fro")
    return teacher.W + delta


def locality_profile(teacher: TeacherNetwork, distances, n, seed, directions=4):
    """Worst-case lambda_min over probe directions at each distance.

    The curvature bracket holds uniformly over a neighborhood of the
    teacher, so its empirical fingerprint is the minimum of lambda_min
    over perturbation directions, which decays as the neighborhood
    radius grows.  Samples are shared across distances and directions.
    """
    out = []
    for dist in distances:
        worst = np.inf
        for probe in range(directions):
            W = offset_weights(teacher, dist, seed=probe)
            rep = spectrum_report(teacher, W, n, seed)
            worst = min(worst, rep.lambda_min)
            if dist == 0:
                break  # every direction degenerates to the teacher itself
        out.append(worst)
    return out
