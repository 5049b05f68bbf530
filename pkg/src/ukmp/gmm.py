"""Gaussian mixture fitting and regression used to initialize a KMP.

The mixture is fitted by EM on the joint ``[input, output]`` samples of one
or more demonstrations. Gaussian mixture regression (GMR) then conditions the
mixture on an input to obtain the output mean and covariance, which yields the
probabilistic reference trajectory consumed by :func:`ukmp.kmp.train`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import FactorizationError, ValidationError

REG_SCALE = 1e-6


@dataclass(frozen=True)
class Demonstration:
    """One recorded trajectory of paired input/output samples."""

    inputs: np.ndarray
    outputs: np.ndarray
    times: np.ndarray | None = None
    demo_id: int = 0

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if inputs.ndim != 2 or outputs.ndim != 2:
            raise ValidationError("demonstration inputs/outputs must be 2-D arrays")
        if inputs.shape[0] == 0:
            raise ValidationError("demonstration has no samples")
        if inputs.shape[0] != outputs.shape[0]:
            raise ValidationError(
                f"demonstration has {inputs.shape[0]} inputs but {outputs.shape[0]} outputs")
        if inputs.shape[1] < 1 or outputs.shape[1] < 1:
            raise ValidationError("input and output dimensions must be >= 1")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
            raise ValidationError("demonstration contains non-finite values")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)
        if self.times is not None:
            times = np.asarray(self.times, dtype=float).reshape(-1)
            if times.shape[0] != inputs.shape[0]:
                raise ValidationError("times length does not match sample count")
            object.__setattr__(self, "times", times)

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_out(self) -> int:
        return self.outputs.shape[1]

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class GmmModel:
    """Fitted joint input-output mixture.

    ``means`` has shape (K, D_I + D_O) and ``covariances`` (K, D, D); the first
    ``d_in`` coordinates are the input block.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    d_in: int
    log_likelihood: tuple = field(default=(), compare=False)
    converged: bool = field(default=True, compare=False)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def d_out(self) -> int:
        return self.dim - self.d_in


@dataclass(frozen=True)
class ReferenceTrajectory:
    """N probabilistic points ``(input, mean, covariance)`` that initialize a KMP."""

    inputs: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        means = np.asarray(self.means, dtype=float)
        covs = np.asarray(self.covariances, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        if means.ndim == 1:
            means = means[:, None]
        if covs.ndim == 1:
            covs = covs[:, None, None]
        n = inputs.shape[0]
        if n < 1:
            raise ValidationError("reference trajectory needs at least one point")
        d_out = means.shape[1]
        if means.shape[0] != n or covs.shape != (n, d_out, d_out):
            raise ValidationError(
                f"inconsistent reference shapes: inputs {inputs.shape}, "
                f"means {means.shape}, covariances {covs.shape}")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def d_in(self) -> int:
        return self.inputs.shape[1]

    @property
    def d_out(self) -> int:
        return self.means.shape[1]


def pool_samples(demos: Sequence[Demonstration]) -> tuple[np.ndarray, int]:
    """Stack all demonstrations into one ``(n, D_I + D_O)`` array."""
    if len(demos) == 0:
        raise ValidationError("no demonstrations given")
    d_in, d_out = demos[0].d_in, demos[0].d_out
    for demo in demos:
        if demo.d_in != d_in or demo.d_out != d_out:
            raise ValidationError("demonstrations have mismatched dimensions")
    data = np.vstack([np.hstack([d.inputs, d.outputs]) for d in demos])
    return data, d_in


def regularize(cov: np.ndarray) -> np.ndarray:
    """Add ``eps * I`` when the smallest eigenvalue drops below ``eps``.

    ``eps`` is ``1e-6`` times the mean diagonal magnitude.
    """
    cov = 0.5 * (cov + cov.T)
    eps = REG_SCALE * np.mean(np.abs(np.diag(cov)))
    if eps == 0.0:
        eps = REG_SCALE
    if np.linalg.eigvalsh(cov)[0] < eps:
        cov = cov + eps * np.eye(cov.shape[0])
    return cov


def _kmeans_pp(data, k, rng):
    n = data.shape[0]
    centers = np.empty((k, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    d2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centers[j]) ** 2, axis=1))
    return centers


def _kmeans(data, k, rng, n_iter=100):
    centers = _kmeans_pp(data, k, rng)
    labels = None
    for _ in range(n_iter):
        dist = ((data[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(dist, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = data[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    return labels


def _log_gauss(data, mean, cov):
    """Row-wise log N(x | mean, cov)."""
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("mixture covariance is not positive-definite") from exc
    diff = data - mean
    z = np.linalg.solve(chol, diff.T)
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + mean.shape[0] * np.log(2.0 * np.pi))


def _log_resp(data, weights, means, covs):
    logp = np.column_stack([
        np.log(weights[k]) + _log_gauss(data, means[k], covs[k])
        for k in range(weights.shape[0])
    ])
    norm = logsumexp(logp, axis=1)
    return logp - norm[:, None], norm


def _m_step(data, resp):
    n, dim = data.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    weights = weights / weights.sum()
    means = (resp.T @ data) / nk[:, None]
    covs = np.empty((resp.shape[1], dim, dim))
    for k in range(resp.shape[1]):
        diff = data - means[k]
        covs[k] = regularize((resp[:, k, None] * diff).T @ diff / nk[k])
    return weights, means, covs


def fit_gmm(data, n_components: int, d_in: int | None = None, seed: int = 0,
            max_iter: int = 200, tol: float = 1e-8) -> GmmModel:
    """Fit a full-covariance GMM with EM.

    Parameters
    ----------
    data : sequence of Demonstration, or array of shape (n, D_I + D_O)
        Pooled joint samples. When an array is given, ``d_in`` is required.
    n_components : int
        Number of mixture components K.
    seed : int
        Seeds the k-means++ initialization; the fit is deterministic given it.
    max_iter, tol : EM stops when the change in mean per-sample
        log-likelihood falls below ``tol`` or after ``max_iter`` M-steps.

    The per-sample log-likelihood of every parameter set visited is stored
    in ``GmmModel.log_likelihood``.
    """
    if isinstance(data, np.ndarray):
        if d_in is None:
            raise ValidationError("d_in is required when fitting on a raw array")
        samples = np.asarray(data, dtype=float)
    else:
        samples, d_in = pool_samples(list(data))
    if samples.ndim != 2 or not 1 <= d_in < samples.shape[1]:
        raise ValidationError("samples must be (n, D_I + D_O) with D_I, D_O >= 1")
    n = samples.shape[0]
    if n_components < 1:
        raise ValidationError("n_components must be >= 1")
    if n_components > n:
        raise ValidationError(f"n_components={n_components} exceeds sample count {n}")
    if max_iter < 1 or tol <= 0:
        raise ValidationError("max_iter must be >= 1 and tol > 0")

    rng = np.random.default_rng(seed)
    if n_components == 1:
        labels = np.zeros(n, dtype=int)
    else:
        labels = _kmeans(samples, n_components, rng)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), labels] = 1.0
    # an empty k-means cluster gets a uniform share so its M-step is defined
    empty = resp.sum(axis=0) == 0
    if np.any(empty):
        resp[:, empty] = 1.0 / n

    weights, means, covs = _m_step(samples, resp)
    log_resp, norm = _log_resp(samples, weights, means, covs)
    history = [float(norm.mean())]
    converged = False
    for _ in range(max_iter):
        weights, means, covs = _m_step(samples, np.exp(log_resp))
        log_resp, norm = _log_resp(samples, weights, means, covs)
        history.append(float(norm.mean()))
        if abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    return GmmModel(weights=weights, means=means, covariances=covs, d_in=d_in,
                    log_likelihood=tuple(history), converged=converged)


def _conditionals(model: GmmModel, queries: np.ndarray):
    """Per-component conditional means (Q, K, D_O), covariances (K, D_O, D_O)
    and log responsibilities (Q, K) for a batch of input queries."""
    di = model.d_in
    k = model.n_components
    nq = queries.shape[0]
    cond_means = np.empty((nq, k, model.d_out))
    cond_covs = np.empty((k, model.d_out, model.d_out))
    logp = np.empty((nq, k))
    for j in range(k):
        mu_i, mu_o = model.means[j, :di], model.means[j, di:]
        cov = model.covariances[j]
        s_ii, s_oi, s_oo = cov[:di, :di], cov[di:, :di], cov[di:, di:]
        gain = np.linalg.solve(s_ii, s_oi.T).T
        cond_means[:, j, :] = mu_o + (queries - mu_i) @ gain.T
        c = s_oo - gain @ s_oi.T
        cond_covs[j] = 0.5 * (c + c.T)
        logp[:, j] = np.log(model.weights[j]) + _log_gauss(queries, mu_i, s_ii)
    log_h = logp - logsumexp(logp, axis=1)[:, None]
    return cond_means, cond_covs, log_h


def gmr_batch(model: GmmModel, queries) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`gmr_condition` over ``queries`` of shape (Q, D_I)."""
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != model.d_in:
        raise ValidationError(
            f"query dimension {queries.shape[1]} does not match model input dim {model.d_in}")
    cond_means, cond_covs, log_h = _conditionals(model, queries)
    h = np.exp(log_h)
    mean = np.einsum("qk,qkd->qd", h, cond_means)
    spread = cond_means - mean[:, None, :]
    cov = (np.einsum("qk,kde->qde", h, cond_covs)
           + np.einsum("qk,qkd,qke->qde", h, spread, spread))
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    return mean, cov


def gmr_condition(model: GmmModel, query) -> tuple[np.ndarray, np.ndarray]:
    """Output mean and covariance of the mixture conditioned on ``query``.

    Responsibilities are computed in log space so queries far from every
    component still produce a finite, well-defined result.
    """
    mean, cov = gmr_batch(model, np.asarray(query, dtype=float).reshape(1, -1))
    return mean[0], cov[0]


def sample_inputs(model: GmmModel, n: int, seed: int = 0) -> np.ndarray:
    """Draw ``n`` inputs from the input marginal of ``model``.

    One-dimensional draws are sorted; multi-dimensional ones keep draw order.
    """
    if n < 1:
        raise ValidationError("need at least one input sample")
    rng = np.random.default_rng(seed)
    di = model.d_in
    comps = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, di))
    out = np.empty((n, di))
    for j in range(model.n_components):
        sel = comps == j
        chol = np.linalg.cholesky(model.covariances[j, :di, :di])
        out[sel] = model.means[j, :di] + z[sel] @ chol.T
    if di == 1:
        out = np.sort(out, axis=0)
    return out


def build_reference(model: GmmModel, inputs) -> ReferenceTrajectory:
    """GMR at each of ``inputs`` (order preserved)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if model.d_in == 1 and inputs.shape[0] == 1 and inputs.shape[1] != 1:
        inputs = inputs.T
    if inputs.shape[0] < 1:
        raise ValidationError("reference needs at least one input")
    mean, cov = gmr_batch(model, inputs)
    return ReferenceTrajectory(inputs=inputs, means=mean, covariances=cov)
