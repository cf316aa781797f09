"""Empirical risk, gradients, the descent loop, and the recovery metric.

The objective is the squared loss of the student network against the
teacher's labels with the output signs held fixed at their initialized
values; only the hidden weights move.  Near the optimum the objective
is strongly convex, so plain gradient descent with the theory step size
1/(k v_max^2 sigma_1^(2p)) contracts the squared distance to the
teacher geometrically.  Success is measured permutation-invariantly:
the worst relative column error after optimally matching recovered
columns to teacher columns (with the sign freedoms the activation's
parity allows).
"""

import itertools
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import SampleSet, TeacherNetwork, forward

_BRUTE_FORCE_MAX_K = 8
_INFEASIBLE = 1e9


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GdConfig:
    eta: Optional[float] = None  # None picks 1 / (k v_max^2 sigma_1^(2p))
    iters: int = 500
    resample: bool = False
    tol: float = 0.01  # stop when the matched relative error drops below; 0 disables
    risk_tol: float = 0.0  # additionally stop when the objective drops below; 0 disables
    train_v: bool = False  # baseline mode: output weights follow their gradient
    seed: int = 0


@dataclass(frozen=True)
class RecoveryReport:
    W: np.ndarray
    v: np.ndarray
    rel_err: tuple  # matched max-column relative error per iteration
    fro_err: tuple  # matched Frobenius distance per iteration
    risk: tuple  # objective per iteration (index 0 is the starting point)
    permutation: Optional[tuple]
    v_matched: bool
    success: bool
    iters: int
    eta: float
    seconds: float

    def to_dict(self):
        return {
            "W": self.W.tolist(),
            "v": self.v.tolist(),
            "rel_err": list(self.rel_err),
            "fro_err": list(self.fro_err),
            "risk": list(self.risk),
            "permutation": list(self.permutation) if self.permutation is not None else None,
            "v_matched": self.v_matched,
            "success": self.success,
            "iters": self.iters,
            "eta": self.eta,
            "seconds": self.seconds,
        }


def empirical_risk(W, v, samples: SampleSet, act):
    res = forward(W, v, samples.X, act) - samples.y
    return float(res @ res) / (2.0 * samples.n)


def empirical_gradient(W, v, samples: SampleSet, act):
    """d x k gradient of the empirical risk in the hidden weights."""
    X, y = samples.X, samples.y
    n = samples.n
    Z = W.T @ X
    res = v @ act.phi(Z) - y
    D = act.dphi(Z)
    return X @ ((res[None, :] * D) * v[:, None]).T / n


def _risk_grads(W, v, samples, act, train_v):
    X, y = samples.X, samples.y
    n = samples.n
    Z = W.T @ X
    phi = act.phi(Z)
    res = v @ phi - y
    risk = float(res @ res) / (2.0 * n)
    gW = X @ ((res[None, :] * act.dphi(Z)) * v[:, None]).T / n
    gv = phi @ res / n if train_v else None
    return risk, gW, gv


def default_eta(W0, v0, p):
    """Theory step size from the recovered parameters."""
    sigma1 = float(np.max(np.linalg.norm(W0, axis=0)))
    v_max = float(np.max(np.abs(v0)))
    return 1.0 / (W0.shape[1] * v_max**2 * sigma1 ** (2.0 * p))


def learn(samples: SampleSet, act, W0, v0, cfg: GdConfig = GdConfig(),
          teacher: Optional[TeacherNetwork] = None) -> RecoveryReport:
    """Gradient descent from (W0, v0); v0 stays fixed unless cfg.train_v.

    With ``cfg.resample`` the sample set is pre-partitioned into
    disjoint per-iteration blocks so each step's gradient is
    independent of the iterate; otherwise the full set is reused.
    When a teacher is supplied the matched errors are recorded per
    iteration and the loop stops early at cfg.tol.
    """
    start = time.perf_counter()
    W = np.array(W0, dtype=float)
    v = np.array(v0, dtype=float)
    p = act.p if act.homogeneous else 0.0
    eta = cfg.eta if cfg.eta is not None else default_eta(W, v, p)
    if eta <= 0:
        raise ValueError("step size must be positive")

    blocks = samples.split(cfg.iters) if cfg.resample else None

    rel_trace, fro_trace, risk_trace = [], [], []
    perm, v_matched = None, False
    grow_count, grow_anchor = 0, None

    def record_match():
        nonlocal perm, v_matched
        if teacher is None:
            return np.inf
        rel, fro, perm, v_matched = _matched_errors(W, v, teacher)
        rel_trace.append(rel)
        fro_trace.append(fro)
        return rel

    risk_trace.append(empirical_risk(W, v, samples, act))
    rel = record_match()
    iters_done = 0
    for q in range(cfg.iters):
        if teacher is not None and cfg.tol > 0 and rel <= cfg.tol:
            break
        if cfg.risk_tol > 0 and risk_trace[-1] <= cfg.risk_tol:
            break
        batch = blocks[q] if blocks is not None else samples
        with np.errstate(over="ignore", invalid="ignore"):
            _, gW, gv = _risk_grads(W, v, batch, act, cfg.train_v)
            W = W - eta * gW
            if cfg.train_v:
                v = v - eta * gv
            iters_done = q + 1
            risk = empirical_risk(W, v, samples, act)
        # divergence guard: overflow, or sustained growth by an order
        # of magnitude
        if not np.isfinite(risk):
            raise DivergenceError(
                f"risk overflowed after {iters_done} steps; eta={eta:.3g} too large"
            )
        risk_trace.append(risk)
        rel = record_match()
        if risk > risk_trace[-2]:
            if grow_count == 0:
                grow_anchor = risk_trace[-2]
            grow_count += 1
            if grow_count >= 10 and risk >= 10.0 * max(grow_anchor, 1e-300):
                raise DivergenceError(
                    f"risk grew from {grow_anchor:.3e} to {risk:.3e} over "
                    f"{grow_count} consecutive steps; eta={eta:.3g} too large"
                )
        else:
            grow_count = 0

    success_tol = cfg.tol if cfg.tol > 0 else 0.01
    success = bool(teacher is not None and rel_trace and rel_trace[-1] <= success_tol and v_matched)
    return RecoveryReport(
        W=W, v=v,
        rel_err=tuple(rel_trace), fro_err=tuple(fro_trace), risk=tuple(risk_trace),
        permutation=tuple(perm) if perm is not None else None,
        v_matched=v_matched, success=success, iters=iters_done,
        eta=float(eta), seconds=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# permutation-matched recovery metric


def _column_costs(W, v, teacher):
    """Cost[j, i]: relative error matching teacher column j to student column i.

    Even activations admit a free sign flip per column; odd activations
    admit a joint (v, w) flip, which makes every pairing v-feasible.
    Returns (costs, flips, feasible).
    """
    Wt, vt = teacher.W, teacher.v
    act = teacher.activation
    k = Wt.shape[1]
    parity = _activation_parity(act)
    norms = np.linalg.norm(Wt, axis=0)
    costs = np.empty((k, k))
    flips = np.ones((k, k))
    feasible = np.empty((k, k), dtype=bool)
    for j in range(k):
        plus = np.linalg.norm(W - Wt[:, j][:, None], axis=0) / norms[j]
        minus = np.linalg.norm(W + Wt[:, j][:, None], axis=0) / norms[j]
        if parity == "even":
            costs[j] = np.minimum(plus, minus)
            flips[j] = np.where(plus <= minus, 1.0, -1.0)
            feasible[j] = v == vt[j]
        elif parity == "odd":
            same = v == vt[j]
            costs[j] = np.where(same, plus, minus)
            flips[j] = np.where(same, 1.0, -1.0)
            feasible[j] = True
        else:
            costs[j] = plus
            feasible[j] = v == vt[j]
    return costs, flips, feasible


def _activation_parity(act):
    z = np.linspace(0.1, 4.0, 23)
    f, g = act.phi(z), act.phi(-z)
    if np.max(np.abs(f - g)) < 1e-10:
        return "even"
    if np.max(np.abs(f + g)) < 1e-10:
        return "odd"
    return "none"


def _best_permutation(costs, feasible):
    k = costs.shape[0]
    if k <= _BRUTE_FORCE_MAX_K:
        best, best_perm = np.inf, None
        for perm in itertools.permutations(range(k)):
            if not all(feasible[j, perm[j]] for j in range(k)):
                continue
            worst = max(costs[j, perm[j]] for j in range(k))
            if worst < best:
                best, best_perm = worst, perm
        return best, best_perm
    penalized = np.where(feasible, costs, costs + _INFEASIBLE)
    _, cols = linear_sum_assignment(penalized)
    perm = tuple(int(c) for c in cols)
    if not all(feasible[j, perm[j]] for j in range(k)):
        return np.inf, None
    return float(max(costs[j, perm[j]] for j in range(k))), perm


def _matched_errors(W, v, teacher):
    costs, flips, feasible = _column_costs(W, v, teacher)
    rel, perm = _best_permutation(costs, feasible)
    matched = perm is not None
    if not matched:
        rel, perm = _best_permutation(costs, np.ones_like(feasible, dtype=bool))
    aligned = np.column_stack([flips[j, perm[j]] * W[:, perm[j]] for j in range(len(perm))])
    fro = float(np.linalg.norm(aligned - teacher.W, "fro"))
    return float(rel), fro, perm, matched


def recovery_error(W, v, teacher: TeacherNetwork):
    """(worst matched relative column error, permutation, v matched).

    The permutation maps teacher column j to student column perm[j].
    Matching respects the output signs; when no sign-consistent
    matching exists the error of the unconstrained matching is
    reported with v_matched False.
    """
    rel, _, perm, matched = _matched_errors(W, v, teacher)
    return rel, perm, matched


def aligned_frobenius(W, v, teacher: TeacherNetwork):
    """Frobenius distance to the teacher after optimal matching."""
    _, fro, _, _ = _matched_errors(W, v, teacher)
    return fro
