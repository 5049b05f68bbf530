"""Kernelized movement primitives: training and Gaussian prediction.

A :class:`KmpModel` is trained on a :class:`~ukmp.gmm.ReferenceTrajectory`
of N points with D_O-dimensional outputs. Predictions at a query input are

    mean = k* (K + lambda1 Sigma)^-1 mu
    cov  = N / lambda2 * (k** - k* (K + lambda2 Sigma)^-1 k*^T)

with the block Gram matrix ``K = Kx (x) I_{D_O}`` built from the
squared-exponential kernel ``sigma_f2 * exp(-|xi - xj|^2 / lengthscale)``.
Note the kernel divides by ``lengthscale`` itself, not ``2 l^2``: the
effective correlation length is ``sqrt(lengthscale)``.

Far from every reference input the covariance tends to
``sigma_f2 * N / lambda2 * I`` (see :func:`uncertainty_limit`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag, cho_factor, cho_solve, solve_triangular
from scipy.spatial.distance import cdist

from .errors import FactorizationError, NumericalError, ValidationError
from .gmm import ReferenceTrajectory

PSD_TOL = 1e-9
_CHUNK = 128


@dataclass(frozen=True)
class KmpHyperparams:
    lambda1: float
    lambda2: float
    lengthscale: float
    sigma_f2: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lengthscale", "sigma_f2"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be a positive finite number, got {value!r}")
            object.__setattr__(self, name, float(value))


@dataclass(frozen=True)
class Prediction:
    mean: np.ndarray
    covariance: np.ndarray
    uncertainty_ratio: float


def kernel_matrix(a, b, hyper: KmpHyperparams) -> np.ndarray:
    """Scalar kernel between every row of ``a`` and every row of ``b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    sq = cdist(a, b, "sqeuclidean")
    return hyper.sigma_f2 * np.exp(-sq / hyper.lengthscale)


def kernel_eval(xi, xj, hyper: KmpHyperparams) -> float:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xj = np.atleast_1d(np.asarray(xj, dtype=float))
    if xi.shape != xj.shape:
        raise ValidationError(f"kernel arguments differ in shape: {xi.shape} vs {xj.shape}")
    sq = float(np.sum((xi - xj) ** 2))
    return hyper.sigma_f2 * float(np.exp(-sq / hyper.lengthscale))


def uncertainty_limit(hyper: KmpHyperparams, n: int, d_out: int) -> np.ndarray:
    """Covariance reached far from the data: ``sigma_f2 * n / lambda2 * I``."""
    if n < 1 or d_out < 1:
        raise ValidationError("n and d_out must be positive")
    return hyper.sigma_f2 * (n / hyper.lambda2) * np.eye(d_out)


class KmpModel:
    """Trained KMP. Treat as immutable; arrays are marked read-only."""

    def __init__(self, hyper: KmpHyperparams, reference: ReferenceTrajectory,
                 gram: np.ndarray, chol_mean, chol_cov, alpha: np.ndarray):
        self.hyper = hyper
        self.reference = reference
        self.gram_scalar = gram
        self._chol_mean = chol_mean
        self._chol_cov = chol_cov
        self._alpha = alpha
        for arr in (gram, chol_mean, chol_cov, alpha):
            arr.setflags(write=False)

    @property
    def n_points(self) -> int:
        return len(self.reference)

    @property
    def d_in(self) -> int:
        return self.reference.d_in

    @property
    def d_out(self) -> int:
        return self.reference.d_out

    @property
    def gram(self) -> np.ndarray:
        """Full (N D_O) x (N D_O) Gram matrix ``Kx (x) I``."""
        return np.kron(self.gram_scalar, np.eye(self.d_out))

    @property
    def stacked_mean(self) -> np.ndarray:
        return self.reference.means.reshape(-1)

    @property
    def stacked_cov(self) -> np.ndarray:
        return block_diag(*self.reference.covariances)

    @property
    def limit(self) -> np.ndarray:
        return uncertainty_limit(self.hyper, self.n_points, self.d_out)

    def solve_mean_system(self, rhs) -> np.ndarray:
        """Solve ``(K + lambda1 Sigma) x = rhs`` with the cached factor."""
        return cho_solve((self._chol_mean, True), rhs, check_finite=False)

    def solve_cov_system(self, rhs) -> np.ndarray:
        """Solve ``(K + lambda2 Sigma) x = rhs`` with the cached factor."""
        return cho_solve((self._chol_cov, True), rhs, check_finite=False)

    def __repr__(self):
        h = self.hyper
        return (f"KmpModel(N={self.n_points}, d_in={self.d_in}, d_out={self.d_out}, "
                f"lambda1={h.lambda1}, lambda2={h.lambda2}, "
                f"lengthscale={h.lengthscale}, sigma_f2={h.sigma_f2})")


def _factor(matrix, name):
    try:
        c, _ = cho_factor(matrix, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"{name} is not positive-definite; cannot factorize") from exc
    # cho_factor leaves garbage above the diagonal
    return np.tril(c)


def train(reference: ReferenceTrajectory, hyper: KmpHyperparams) -> KmpModel:
    """Assemble the Gram matrix and factor both regularized systems once."""
    n, d_out = len(reference), reference.d_out
    if n < 1:
        raise ValidationError("reference trajectory is empty")
    gram = kernel_matrix(reference.inputs, reference.inputs, hyper)
    full = np.kron(gram, np.eye(d_out))
    sigma = block_diag(*reference.covariances)
    chol_mean = _factor(full + hyper.lambda1 * sigma, "K + lambda1*Sigma")
    chol_cov = _factor(full + hyper.lambda2 * sigma, "K + lambda2*Sigma")
    mu = reference.means.reshape(-1)
    alpha = cho_solve((chol_mean, True), mu, check_finite=False).reshape(n, d_out)
    return KmpModel(hyper, reference, gram, chol_mean, chol_cov, alpha)


def _queries(model, query):
    q = np.asarray(query, dtype=float)
    if q.ndim <= 1:
        q = q.reshape(1, -1)
    if q.shape[1] != model.d_in:
        raise ValidationError(
            f"query dimension {q.shape[1]} does not match model input dim {model.d_in}")
    return q


def predict_mean_batch(model: KmpModel, queries) -> np.ndarray:
    q = _queries(model, queries)
    kx = kernel_matrix(q, model.reference.inputs, model.hyper)
    return kx @ model._alpha


def predict_mean(model: KmpModel, query) -> np.ndarray:
    return predict_mean_batch(model, query)[0]


def _clamp_psd(cov):
    w, v = np.linalg.eigh(cov)
    if w[0] >= 0.0:
        return cov
    if w[0] < -PSD_TOL:
        raise NumericalError(
            f"predicted covariance has eigenvalue {w[0]:.3e} below -{PSD_TOL:g}")
    floor = 1e-12 * max(float(np.trace(cov)), 0.0)
    w = np.where(w < 0.0, floor, w)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def predict_cov_batch(model: KmpModel, queries) -> np.ndarray:
    q = _queries(model, queries)
    h, n, d = model.hyper, model.n_points, model.d_out
    eye = np.eye(d)
    out = np.empty((q.shape[0], d, d))
    for start in range(0, q.shape[0], _CHUNK):
        block = q[start:start + _CHUNK]
        kx = kernel_matrix(block, model.reference.inputs, h)
        # k*^T for every query side by side: (N d) x (m d)
        kstar_t = np.kron(kx.T, eye)
        y = solve_triangular(model._chol_cov, kstar_t, lower=True, check_finite=False)
        m = block.shape[0]
        y = y.reshape(n * d, m, d)
        quad = np.einsum("imd,ime->mde", y, y)
        cov = (n / h.lambda2) * (h.sigma_f2 * eye - quad)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        for i in range(m):
            out[start + i] = _clamp_psd(cov[i])
    return out


def predict_cov(model: KmpModel, query) -> np.ndarray:
    return predict_cov_batch(model, query)[0]


def is_uncertain(model: KmpModel, cov) -> float:
    """Ratio ``trace(cov) / trace(limit)`` clamped to [0, 1]; 1 is fully uncertain."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    ratio = float(np.trace(cov) / np.trace(model.limit))
    return min(max(ratio, 0.0), 1.0)


def predict(model: KmpModel, query) -> Prediction:
    mean = predict_mean(model, query)
    cov = predict_cov(model, query)
    return Prediction(mean=mean, covariance=cov, uncertainty_ratio=is_uncertain(model, cov))


def predict_batch(model: KmpModel, queries) -> tuple[np.ndarray, np.ndarray]:
    """Means (Q, D_O) and covariances (Q, D_O, D_O) for many queries."""
    return predict_mean_batch(model, queries), predict_cov_batch(model, queries)
