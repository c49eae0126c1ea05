"""Smooth losses: least squares and logistic regression.

Conventions: least squares f(x) = ||Ax - y||^2 / (2n) with gradient
A'(Ax - y)/n and curvature bound lam_max(A'A)/n; logistic
f(x) = mean(log(1 + exp(-y_i a_i'x))) with bound lam_max(A'A)/(4n).
"""

import numpy as np


class SmoothLoss:
    """Design-matrix loss with full and per-block gradients.

    The per-block partial gradient is defined as the block slice of the full
    gradient, so the two are consistent bit-for-bit.
    """

    def __init__(self, kind, A, y):
        if kind not in ("least_squares", "logistic"):
            raise ValueError(f"unknown loss kind {kind!r}")
        A = np.asarray(A, dtype=float)
        y = np.asarray(y, dtype=float)
        if A.ndim != 2 or A.size == 0:
            raise ValueError("design matrix must be a nonempty 2-d array")
        if y.shape != (A.shape[0],):
            raise ValueError(f"label vector shape {y.shape} does not match {A.shape[0]} rows")
        if kind == "logistic" and not np.all(np.abs(y) == 1):
            raise ValueError("logistic labels must be in {-1, +1}")
        self.kind = kind
        self.A = A
        self.y = y
        self.n, self.d = A.shape
        # cached normal-equation pieces make least-squares gradients O(d^2)
        if kind == "least_squares":
            self._AtA_n = (A.T @ A) / self.n
            self._Aty_n = (A.T @ y) / self.n
        self.L = lipschitz_estimate(self)

    def value(self, x):
        x = self._check(x)
        if self.kind == "least_squares":
            r = self.A @ x - self.y
            return float(r @ r) / (2.0 * self.n)
        m = -self.y * (self.A @ x)
        # log1p(exp(m)) computed stably for large margins
        return float(np.mean(np.logaddexp(0.0, m)))

    def gradient(self, x):
        x = self._check(x)
        if self.kind == "least_squares":
            return self._AtA_n @ x - self._Aty_n
        m = -self.y * (self.A @ x)
        sig = 1.0 / (1.0 + np.exp(-m))
        return self.A.T @ (-self.y * sig) / self.n

    def partial_gradient(self, x, i, layout):
        """Block-i slice of the full gradient (the consistency contract)."""
        if not 0 <= i < layout.p:
            raise ValueError(f"block index {i} out of range for p={layout.p}")
        return self.gradient(x)[layout.slice(i)]

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"point shape {x.shape}, expected ({self.d},)")
        return x


def lipschitz_estimate(loss, tol=1e-8, max_iter=10_000):
    """Curvature bound via power iteration on A'A, inflated by 1+1e-6.

    The inflation guarantees the returned value upper-bounds the true
    constant despite the iteration's finite tolerance.
    """
    A = loss.A
    n = A.shape[0]
    rng = np.random.default_rng(0)
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        lam_new = float(np.linalg.norm(w))
        if lam_new == 0.0:  # A'A v = 0; restart direction
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / lam_new
        if abs(lam_new - lam) <= tol * max(lam_new, 1e-30):
            lam = lam_new
            break
        lam = lam_new
    else:
        raise RuntimeError(f"power iteration did not converge in {max_iter} iterations")
    scale = 1.0 / n if loss.kind == "least_squares" else 1.0 / (4.0 * n)
    return lam * scale * (1.0 + 1e-6)


def load_csv(path, kind):
    """Dense CSV, rows = samples, last column = label."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return SmoothLoss(kind, data[:, :-1], data[:, -1])


def synthetic_lasso(n, d, k, sigma, seed):
    """Seeded Gaussian design with a planted k-sparse signal.

    Returns (loss, x_true): A ~ N(0,1)^{n x d}, x_true has k nonzero entries
    of magnitude >= 1, y = A x_true + sigma * noise.
    """
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, d))
    x_true = np.zeros(d)
    support = rng.choice(d, size=k, replace=False)
    x_true[support] = rng.choice([-1.0, 1.0], size=k) * (1.0 + rng.random(k))
    y = A @ x_true + sigma * rng.standard_normal(n)
    return SmoothLoss("least_squares", A, y), x_true
