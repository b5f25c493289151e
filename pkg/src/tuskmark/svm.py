"""Binary max-margin classifier with an RBF kernel, trained by SMO.

The dual problem is solved by sequential minimal optimization with the
classic two-heuristic working-set selection and an error cache kept as
a full decision vector.  Training data here is small (per-seizure
review samples, a few hundred points), so the kernel matrix is held
densely.

Decision values are mapped to probabilities by a sigmoid fit with a
robust Newton iteration on cross-validated margins.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np


class SvmConvergenceError(RuntimeError):
    """Optimizer hit the sweep cap before clearing all KKT violations."""


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """exp(-gamma * ||x - y||^2) for all row pairs of `a` and `b`."""
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def scale_gamma(x: np.ndarray) -> float:
    """Default kernel width: 1 / (n_features * mean per-feature variance)."""
    mean_var = float(np.mean(np.var(x, axis=0)))
    if mean_var <= 0.0:
        return 1.0
    return 1.0 / (x.shape[1] * mean_var)


@dataclass
class RbfSvm:
    """Trained dual state: support vectors, their coefficients, and bias.

    `alphas` holds the full training alpha vector for KKT diagnostics;
    it is not needed for prediction and is not serialized.
    """

    support_vectors: np.ndarray  # (s, k)
    dual_coef: np.ndarray  # (s,) alpha_i * y_i
    bias: float
    gamma: float
    alphas: np.ndarray | None = None

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = rbf_kernel(x, self.support_vectors, self.gamma)
        return k @ self.dual_coef + self.bias


def train_rbf_svm(
    x: np.ndarray,
    y: np.ndarray,
    c: float = 1.0,
    gamma: float | None = None,
    tol: float = 5e-4,
    seed: int = 0,
    max_sweeps: int = 2000,
) -> RbfSvm:
    """Fit the dual with SMO until no example violates KKT beyond `tol`.

    `y` must be +/-1.  Box constraints 0 <= alpha <= c are enforced by
    clipping each pair update to its feasible segment, so they hold
    exactly in the returned state.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if set(np.unique(y)) - {-1.0, 1.0}:
        raise ValueError("labels must be +1/-1")
    if gamma is None:
        gamma = scale_gamma(x)
    n = len(y)
    kernel = rbf_kernel(x, x, gamma)
    alpha = np.zeros(n)
    decision = np.zeros(n)  # running f(x_i), bias included
    bias = 0.0
    rng = random.Random(seed)
    eps = 1e-12

    def take_step(i1: int, i2: int) -> bool:
        nonlocal bias
        if i1 == i2:
            return False
        a1_old, a2_old = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        e1 = decision[i1] - y1
        e2 = decision[i2] - y2
        s = y1 * y2
        if s > 0:
            low, high = max(0.0, a1_old + a2_old - c), min(c, a1_old + a2_old)
        else:
            low, high = max(0.0, a2_old - a1_old), min(c, c + a2_old - a1_old)
        if low >= high:
            return False
        k11, k12, k22 = kernel[i1, i1], kernel[i1, i2], kernel[i2, i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > 0.0:
            a2 = a2_old + y2 * (e1 - e2) / eta
            a2 = min(max(a2, low), high)
        else:
            # Flat direction: evaluate the objective at both segment ends.
            f1 = y1 * e1 - a1_old * k11 - s * a2_old * k12
            f2 = y2 * e2 - s * a1_old * k12 - a2_old * k22
            l1 = a1_old + s * (a2_old - low)
            h1 = a1_old + s * (a2_old - high)
            obj_low = (
                l1 * f1 + low * f2 + 0.5 * l1 * l1 * k11 + 0.5 * low * low * k22
                + s * low * l1 * k12
            )
            obj_high = (
                h1 * f1 + high * f2 + 0.5 * h1 * h1 * k11 + 0.5 * high * high * k22
                + s * high * h1 * k12
            )
            if obj_low < obj_high - eps:
                a2 = low
            elif obj_low > obj_high + eps:
                a2 = high
            else:
                return False
        if abs(a2 - a2_old) < eps * (a2 + a2_old + eps):
            return False
        a1 = a1_old + s * (a2_old - a2)
        # Snap numeric dust onto the box so constraints hold exactly.
        if a1 < eps:
            a1 = 0.0
        elif a1 > c - eps:
            a1 = c
        d1, d2 = y1 * (a1 - a1_old), y2 * (a2 - a2_old)
        b1 = bias - e1 - d1 * k11 - d2 * k12
        b2 = bias - e2 - d1 * k12 - d2 * k22
        if 0.0 < a1 < c:
            new_bias = b1
        elif 0.0 < a2 < c:
            new_bias = b2
        else:
            new_bias = (b1 + b2) / 2.0
        decision[:] += d1 * kernel[i1] + d2 * kernel[i2] + (new_bias - bias)
        alpha[i1], alpha[i2] = a1, a2
        bias = new_bias
        return True

    def examine(i2: int) -> int:
        y2, a2 = y[i2], alpha[i2]
        r2 = (decision[i2] - y2) * y2
        if not ((r2 < -tol and a2 < c) or (r2 > tol and a2 > 0.0)):
            return 0
        non_bound = np.flatnonzero((alpha > 0.0) & (alpha < c))
        if len(non_bound) > 1:
            errors = decision - y
            i1 = int(non_bound[np.argmax(np.abs(errors[non_bound] - errors[i2]))])
            if take_step(i1, i2):
                return 1
        start = rng.randrange(max(1, len(non_bound))) if len(non_bound) else 0
        for offset in range(len(non_bound)):
            if take_step(int(non_bound[(start + offset) % len(non_bound)]), i2):
                return 1
        start = rng.randrange(n)
        for offset in range(n):
            if take_step((start + offset) % n, i2):
                return 1
        return 0

    examine_all = True
    changed = 0
    sweeps = 0
    while changed > 0 or examine_all:
        sweeps += 1
        if sweeps > max_sweeps:
            raise SvmConvergenceError(f"no convergence after {max_sweeps} sweeps")
        changed = 0
        if examine_all:
            for i in range(n):
                changed += examine(i)
            examine_all = False
        else:
            for i in np.flatnonzero((alpha > 0.0) & (alpha < c)):
                changed += examine(int(i))
            if changed == 0:
                examine_all = True
                changed = 1  # force one final full pass before stopping
                continue

    support = alpha > 0.0
    return RbfSvm(
        support_vectors=x[support].copy(),
        dual_coef=(alpha * y)[support].copy(),
        bias=bias,
        gamma=gamma,
        alphas=alpha,
    )


def kkt_violation(model: RbfSvm, x: np.ndarray, y: np.ndarray, c: float = 1.0) -> float:
    """Worst KKT violation of the dual solution over its training set.

    For each point: alpha = 0 requires y*f >= 1, alpha = c requires
    y*f <= 1, and interior alphas require y*f = 1; the violation is how
    far the margin strays past the applicable bound.
    """
    if model.alphas is None:
        raise ValueError("model carries no training alphas")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    f = model.decision_function(x)
    worst = 0.0
    for i in range(len(x)):
        margin = y[i] * f[i]
        if model.alphas[i] <= 0.0:
            violation = max(0.0, 1.0 - margin)
        elif model.alphas[i] >= c:
            violation = max(0.0, margin - 1.0)
        else:
            violation = abs(margin - 1.0)
        worst = max(worst, violation)
    return worst


@dataclass
class SigmoidCalibrator:
    """Maps a decision value f to P(positive) = 1 / (1 + exp(a*f + b))."""

    a: float
    b: float

    def probability(self, decision_values: np.ndarray) -> np.ndarray:
        f = np.asarray(decision_values, dtype=float)
        z = self.a * f + self.b
        out = np.empty_like(f)
        pos = z >= 0
        out[pos] = np.exp(-z[pos]) / (1.0 + np.exp(-z[pos]))
        out[~pos] = 1.0 / (1.0 + np.exp(z[~pos]))
        return out


def fit_sigmoid(
    decision_values: np.ndarray, positive: np.ndarray, max_iter: int = 100
) -> SigmoidCalibrator:
    """Regularized sigmoid fit (Platt's method, numerically hardened).

    Newton iteration with backtracking line search on the cross-entropy
    against smoothed targets; stable for separable margin sets where
    the naive fit diverges.
    """
    f = np.asarray(decision_values, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pos) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    target = np.where(pos, hi, lo)

    a = 0.0
    b = math.log((n_neg + 1.0) / (n_pos + 1.0))
    sigma = 1e-12
    min_step = 1e-10

    def objective(av: float, bv: float) -> float:
        z = av * f + bv
        # log(1 + exp(-|z|)) + max(z, 0) keeps terms finite
        return float(
            np.sum(
                target * z + np.log1p(np.exp(-np.abs(z))) + np.maximum(-z, 0.0)
            )
        )

    def stable_p(z: np.ndarray) -> np.ndarray:
        out = np.empty_like(z)
        neg = z < 0
        out[~neg] = np.exp(-z[~neg]) / (1.0 + np.exp(-z[~neg]))
        out[neg] = 1.0 / (1.0 + np.exp(z[neg]))
        return out

    value = objective(a, b)
    for _ in range(max_iter):
        z = a * f + b
        p = stable_p(z)
        d1 = target - p
        d2 = p * (1 - p)
        h11 = float(np.sum(f * f * d2)) + sigma
        h22 = float(np.sum(d2)) + sigma
        h21 = float(np.sum(f * d2))
        g1 = float(np.sum(f * d1))
        g2 = float(np.sum(d1))
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            new_a, new_b = a + step * da, b + step * db
            new_value = objective(new_a, new_b)
            if new_value < value + 1e-4 * step * gd:
                a, b, value = new_a, new_b, new_value
                break
            step /= 2.0
        else:
            break
    return SigmoidCalibrator(a=a, b=b)


def cross_validated_margins(
    x: np.ndarray,
    y: np.ndarray,
    c: float,
    gamma: float | None,
    tol: float,
    seed: int,
    n_folds: int = 5,
) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold decision values for calibration.

    Folds are stratified so every training split keeps both classes;
    indices come from a seeded shuffle for reproducibility.
    """
    y = np.asarray(y, dtype=float)
    pos_idx = [int(i) for i in np.flatnonzero(y > 0)]
    neg_idx = [int(i) for i in np.flatnonzero(y < 0)]
    folds = max(2, min(n_folds, len(pos_idx), len(neg_idx)))
    rng = random.Random(seed)
    rng.shuffle(pos_idx)
    rng.shuffle(neg_idx)
    assignment = np.zeros(len(y), dtype=int)
    for rank, i in enumerate(pos_idx):
        assignment[i] = rank % folds
    for rank, i in enumerate(neg_idx):
        assignment[i] = rank % folds
    margins = np.zeros(len(y))
    for fold in range(folds):
        train = assignment != fold
        held = ~train
        model = train_rbf_svm(
            x[train], y[train], c=c, gamma=gamma, tol=tol, seed=seed + fold
        )
        margins[held] = model.decision_function(x[held])
    return margins, y > 0
