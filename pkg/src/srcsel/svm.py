"""Small dense SMO solver for support-vector classification and
epsilon-regression.

Solves min 0.5 a'Qa + p'a subject to y'a = 0 and 0 <= a <= C with the
maximal-violating-pair working-set rule and a two-variable analytic
update. Data here is tiny (hundreds of rows), so a dense, exact,
deterministic solver beats anything fancier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TAU = 1e-12


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    sq = (
        (a**2).sum(axis=1)[:, None]
        + (b**2).sum(axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def linear_kernel(a: np.ndarray, b: np.ndarray, gamma: float = 0.0) -> np.ndarray:
    return np.atleast_2d(np.asarray(a, dtype=float)) @ np.atleast_2d(
        np.asarray(b, dtype=float)
    ).T


KERNELS = {"rbf": rbf_kernel, "linear": linear_kernel}


@dataclass
class SMOResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    objective: float


def dual_objective(q: np.ndarray, p: np.ndarray, alpha: np.ndarray) -> float:
    return float(0.5 * alpha @ q @ alpha + p @ alpha)


def solve_smo(
    q: np.ndarray,
    p: np.ndarray,
    y: np.ndarray,
    c: float,
    tol: float = 1e-3,
    max_iter: int | None = None,
) -> SMOResult:
    """q is the signed Hessian (labels already folded in), y the +1/-1
    constraint signs. Selection: most violating pair; stop when the
    duality gap estimate falls below tol."""
    n = len(p)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    y = np.asarray(y, dtype=float)
    if q.shape != (n, n) or y.shape != (n,):
        raise ValueError("inconsistent problem shapes")
    if max_iter is None:
        max_iter = max(20000, 200 * n)
    alpha = np.zeros(n)
    grad = p.copy()
    iterations = 0
    neg_inf = -np.inf
    while iterations < max_iter:
        score = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            break
        up_score = np.where(up, score, neg_inf)
        low_score = np.where(low, score, np.inf)
        i = int(up_score.argmax())
        j = int(low_score.argmin())
        if up_score[i] - low_score[j] < tol:
            break
        old_i, old_j = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = q[i, i] + q[j, j] + 2.0 * q[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-grad[i] - grad[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = c - diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = c + diff
        else:
            quad = q[i, i] + q[j, j] - 2.0 * q[i, j]
            if quad <= 0:
                quad = TAU
            delta = (grad[i] - grad[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > c:
                if alpha[i] > c:
                    alpha[i] = c
                    alpha[j] = total - c
                if alpha[j] > c:
                    alpha[j] = c
                    alpha[i] = total - c
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        grad += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)
        iterations += 1
    else:
        raise RuntimeError(f"SMO did not converge within {max_iter} iterations")
    rho = _calculate_rho(alpha, grad, y, c)
    return SMOResult(alpha, rho, iterations, dual_objective(q, p, alpha))


def _calculate_rho(alpha: np.ndarray, grad: np.ndarray, y: np.ndarray, c: float) -> float:
    upper = np.inf
    lower = -np.inf
    free_sum = 0.0
    free_count = 0
    for t in range(len(alpha)):
        yg = y[t] * grad[t]
        if alpha[t] >= c:
            if y[t] < 0:
                upper = min(upper, yg)
            else:
                lower = max(lower, yg)
        elif alpha[t] <= 0:
            if y[t] > 0:
                upper = min(upper, yg)
            else:
                lower = max(lower, yg)
        else:
            free_count += 1
            free_sum += yg
    if free_count > 0:
        return free_sum / free_count
    return (upper + lower) / 2.0


class BinarySVC:
    """Two-class soft-margin SVM; labels must be +1/-1."""

    def __init__(self, c: float = 1.0, gamma: float = 1.0, kernel: str = "rbf", tol: float = 1e-3):
        if kernel not in KERNELS:
            raise ValueError(f"unknown kernel {kernel!r}")
        self.c = c
        self.gamma = gamma
        self.kernel = kernel
        self.tol = tol
        self.x: np.ndarray | None = None
        self.coef: np.ndarray | None = None
        self.rho: float = 0.0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "BinarySVC":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if set(np.unique(y)) != {-1.0, 1.0}:
            raise ValueError("labels must contain both +1 and -1")
        k = KERNELS[self.kernel](x, x, self.gamma)
        q = (y[:, None] * y[None, :]) * k
        result = solve_smo(q, -np.ones(len(y)), y, self.c, tol=self.tol)
        keep = result.alpha > 0
        self.x = x[keep]
        self.coef = (result.alpha * y)[keep]
        self.rho = result.rho
        return self

    def decision(self, x: np.ndarray) -> np.ndarray:
        if self.x is None:
            raise RuntimeError("classifier is not fitted")
        k = KERNELS[self.kernel](np.atleast_2d(np.asarray(x, dtype=float)), self.x, self.gamma)
        return k @ self.coef - self.rho


class SVR:
    """Epsilon-insensitive support-vector regression via the doubled
    dual: variables [a; a*], hessian [[K, -K], [-K, K]], linear term
    [eps - y; eps + y]."""

    def __init__(
        self,
        c: float = 1.0,
        epsilon: float = 0.1,
        gamma: float = 1.0,
        kernel: str = "rbf",
        tol: float = 1e-3,
    ):
        if kernel not in KERNELS:
            raise ValueError(f"unknown kernel {kernel!r}")
        if epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {epsilon}")
        self.c = c
        self.epsilon = epsilon
        self.gamma = gamma
        self.kernel = kernel
        self.tol = tol
        self.x: np.ndarray | None = None
        self.beta: np.ndarray | None = None
        self.rho: float = 0.0

    def fit(self, x: np.ndarray, y: np.ndarray) -> "SVR":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = len(y)
        k = KERNELS[self.kernel](x, x, self.gamma)
        q = np.block([[k, -k], [-k, k]])
        p = np.concatenate([self.epsilon - y, self.epsilon + y])
        signs = np.concatenate([np.ones(n), -np.ones(n)])
        result = solve_smo(q, p, signs, self.c, tol=self.tol)
        self.x = x
        self.beta = result.alpha[:n] - result.alpha[n:]
        self.rho = result.rho
        return self

    def predict(self, x: np.ndarray) -> np.ndarray:
        if self.x is None:
            raise RuntimeError("regressor is not fitted")
        k = KERNELS[self.kernel](np.atleast_2d(np.asarray(x, dtype=float)), self.x, self.gamma)
        return k @ self.beta - self.rho
