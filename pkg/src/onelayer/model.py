"""Teacher networks, synthetic data, and conditioning quantities.

The data model: labels are produced by a fixed one-hidden-layer network

    y = sum_i v_i phi(w_i . x),    x ~ N(0, I_d),

with unit output weights v_i in {-1, +1} and a full-column-rank weight
matrix W (columns w_i, k <= d).  Everything downstream (moment
estimators, initialization, descent) consumes the value types defined
here.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import seeding
from .activations import ActivationSpec, get_activation


class DimensionError(ValueError):
    pass


class ConditioningError(RuntimeError):
    pass


@dataclass(frozen=True)
class TeacherNetwork:
    """Ground-truth parameters; immutable after construction."""

    W: np.ndarray  # d x k, columns are the hidden weights
    v: np.ndarray  # length k, entries in {-1, +1}
    activation: ActivationSpec
    kappa: float
    seed: int

    @property
    def d(self):
        return self.W.shape[0]

    @property
    def k(self):
        return self.W.shape[1]

    def predict(self, X):
        return forward(self.W, self.v, X, self.activation)


@dataclass(frozen=True)
class ConditionNumbers:
    sigma: np.ndarray  # singular values, descending
    kappa: float  # sigma_1 / sigma_k
    lam: float  # prod(sigma_i) / sigma_k^k
    nu: float  # v_max / v_min
    v_max: float
    v_min: float


@dataclass(frozen=True)
class SampleSet:
    """n draws from the teacher distribution, stored sample-per-column."""

    X: np.ndarray  # d x n, Fortran order so each sample is contiguous
    y: np.ndarray  # length n
    seed: int

    @property
    def n(self):
        return self.X.shape[1]

    @property
    def d(self):
        return self.X.shape[0]

    def split(self, parts):
        """Deterministic contiguous split into ``parts`` near-equal blocks."""
        bounds = np.linspace(0, self.n, parts + 1).astype(int)
        return [
            SampleSet(self.X[:, a:b], self.y[a:b], self.seed)
            for a, b in zip(bounds[:-1], bounds[1:])
        ]


def forward(W, v, X, act):
    """Network output for every column of X.

    The single evaluation path shared by sampling, risk, and gradients,
    so a network evaluated at its own generating parameters reproduces
    its labels bit for bit.
    """
    return v @ act.phi(W.T @ X)


def _haar_orthonormal(rng, rows, cols):
    # QR of a Gaussian matrix; forcing R's diagonal positive makes the
    # Q factor Haar distributed
    g = rng.standard_normal((rows, cols))
    q, r = np.linalg.qr(g)
    return q * np.sign(np.diag(r))


def generate_teacher(d, k, kappa, seed, activation="squared_relu") -> TeacherNetwork:
    """Random teacher with prescribed singular values.

    W = U diag(1, 1 + (kappa-1)/(k-1), ..., kappa) V^T with U, V drawn
    Haar; output weights are uniform signs.  k = 1 forces the single
    singular value to 1.
    """
    if not (1 <= k <= d):
        raise DimensionError(f"need 1 <= k <= d, got k={k}, d={d}")
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    act = get_activation(activation) if isinstance(activation, str) else activation

    rng_w = seeding.stream(seed, seeding.TEACHER_W)
    U = _haar_orthonormal(rng_w, d, k)
    V = _haar_orthonormal(rng_w, k, k)
    if k == 1:
        sv = np.array([1.0])
    else:
        sv = 1.0 + (kappa - 1.0) * np.arange(k) / (k - 1)
    W = (U * sv) @ V.T

    rng_v = seeding.stream(seed, seeding.TEACHER_V)
    v = rng_v.choice([-1.0, 1.0], size=k)
    return TeacherNetwork(W=W, v=v, activation=act, kappa=float(kappa), seed=int(seed))


def sample(teacher: TeacherNetwork, n, seed) -> SampleSet:
    """n i.i.d. standard-Gaussian inputs with noiseless labels."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = seeding.stream(seed, seeding.SAMPLES)
    X = np.asfortranarray(rng.standard_normal((teacher.d, n)))
    y = teacher.predict(X)
    return SampleSet(X=X, y=y, seed=int(seed))


def condition_numbers(teacher: TeacherNetwork) -> ConditionNumbers:
    """Singular values of W and the derived condition numbers."""
    sv = np.linalg.svd(teacher.W, compute_uv=False)
    if sv[-1] < 1e-12 * sv[0]:
        raise ConditioningError(
            f"W is numerically rank deficient (sigma_k/sigma_1 = {sv[-1] / sv[0]:.3e})"
        )
    v_abs = np.abs(teacher.v)
    v_max, v_min = float(v_abs.max()), float(v_abs.min())
    return ConditionNumbers(
        sigma=sv,
        kappa=float(sv[0] / sv[-1]),
        lam=float(np.prod(sv / sv[-1])),
        nu=v_max / v_min,
        v_max=v_max,
        v_min=v_min,
    )


# ---------------------------------------------------------------------------
# persistence


def save_teacher(teacher: TeacherNetwork, path):
    doc = {
        "d": teacher.d,
        "k": teacher.k,
        "kappa": teacher.kappa,
        "seed": teacher.seed,
        "W": teacher.W.tolist(),
        "v": teacher.v.tolist(),
        "activation": teacher.activation.name,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_teacher(path) -> TeacherNetwork:
    with open(path) as fh:
        doc = json.load(fh)
    W = np.asarray(doc["W"], dtype=float)
    v = np.asarray(doc["v"], dtype=float)
    if W.shape != (doc["d"], doc["k"]):
        raise DimensionError(f"W shape {W.shape} does not match d={doc['d']}, k={doc['k']}")
    return TeacherNetwork(
        W=W, v=v, activation=get_activation(doc["activation"]),
        kappa=float(doc["kappa"]), seed=int(doc["seed"]),
    )


def save_samples(samples: SampleSet, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i+1}" for i in range(samples.d)] + ["y"])
        for j in range(samples.n):
            writer.writerow([repr(float(val)) for val in samples.X[:, j]] + [repr(float(samples.y[j]))])


def load_samples(path, seed=0) -> SampleSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 1
        rows = [[float(c) for c in row] for row in reader]
    arr = np.asarray(rows, dtype=float)
    return SampleSet(X=np.asfortranarray(arr[:, :d].T), y=arr[:, d], seed=int(seed))
