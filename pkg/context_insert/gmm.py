import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from loguru import logger
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.special import logsumexp

from .config import (
    GMM_COMPONENTS,
    GMM_MAX_ITER,
    GMM_N_INIT,
    GMM_REG_COVAR,
    GMM_SEED,
    GMM_TOL,
    MIN_SAMPLES_PER_COMPONENT,
)
from .errors import ContractViolationError, NoSamplesError
from .scene_model import PairFeature

DIM = 4
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)
    prec_chol: np.ndarray = field(init=False, repr=False)
    log_norm: float = field(init=False)

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float).reshape(DIM)
        cov = np.asarray(self.covariance, dtype=float).reshape(DIM, DIM)
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ContractViolationError("covariance is not symmetric")
        try:
            chol = cholesky(cov, lower=True)
        except LinAlgError as ex:
            raise ContractViolationError(f"covariance is not positive definite: {ex}") from ex
        # z = (x - m) @ prec_chol satisfies z.z = (x - m)^T cov^-1 (x - m)
        prec_chol = solve_triangular(chol, np.eye(DIM), lower=True).T
        log_norm = -0.5 * DIM * LOG_2PI - float(np.log(np.diag(chol)).sum())
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        object.__setattr__(self, "chol", chol)
        object.__setattr__(self, "prec_chol", prec_chol)
        object.__setattr__(self, "log_norm", log_norm)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        diff = np.atleast_2d(x) - self.mean
        z = solve_triangular(self.chol, diff.T, lower=True)
        return self.log_norm - 0.5 * np.einsum("ij,ij->j", z, z)


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    components: tuple[Gaussian, ...]

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", tuple(self.components))
        if len(self.components) < 1 or len(weights) != len(self.components):
            raise ContractViolationError(
                f"mixture needs K >= 1 weights matching {len(self.components)} components, got {len(weights)}"
            )
        if np.any(weights <= 0) or np.any(weights > 1) or abs(weights.sum() - 1.0) > 1e-9:
            raise ContractViolationError(f"mixture weights must lie in (0, 1] and sum to 1, got {weights}")

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def means(self) -> np.ndarray:
        return np.stack([c.mean for c in self.components])

    @property
    def covariances(self) -> np.ndarray:
        return np.stack([c.covariance for c in self.components])

    def component_terms(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(log a_k + log-normalizer, means, precision Cholesky factors) for batched scoring."""
        consts = np.log(self.weights) + np.array([c.log_norm for c in self.components])
        return consts, self.means, np.stack([c.prec_chol for c in self.components])

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "weights": [float(w) for w in self.weights],
            "means": [[float(v) for v in c.mean] for c in self.components],
            "covariances": [[float(v) for v in c.covariance.ravel()] for c in self.components],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GmmModel":
        components = tuple(
            Gaussian(np.asarray(m, dtype=float), np.asarray(cov, dtype=float).reshape(DIM, DIM))
            for m, cov in zip(data["means"], data["covariances"])
        )
        if len(components) != int(data["k"]):
            raise ContractViolationError(f"mixture declares k={data['k']} but stores {len(components)} components")
        return cls(np.asarray(data["weights"], dtype=float), components)


@dataclass(frozen=True)
class FitConfig:
    k: int = GMM_COMPONENTS
    max_iter: int = GMM_MAX_ITER
    tol: float = GMM_TOL
    reg_covar: float = GMM_REG_COVAR
    seed: int = GMM_SEED
    n_init: int = GMM_N_INIT

    def __post_init__(self) -> None:
        if self.k < 1 or self.max_iter < 1 or self.n_init < 1:
            raise ValueError(f"k, max_iter and n_init must be >= 1: {self}")
        if self.tol <= 0 or self.reg_covar < 0:
            raise ValueError(f"tol must be > 0 and reg_covar >= 0: {self}")


@dataclass(frozen=True, eq=False)
class FitResult:
    model: GmmModel
    trace: tuple[float, ...]    # mean log-likelihood, initial model first
    n_iter: int
    converged: bool

    @property
    def mean_loglik(self) -> float:
        return self.trace[-1]


def as_feature_array(samples: Sequence[PairFeature] | np.ndarray) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return np.asarray(samples, dtype=float).reshape(-1, DIM)
    return np.asarray([s.v for s in samples], dtype=float).reshape(-1, DIM)


def effective_components(n_samples: int, k: int) -> int:
    return min(k, max(1, n_samples // MIN_SAMPLES_PER_COMPONENT))


def _kmeans_pp_means(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[int(rng.integers(n))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        cumulative = np.cumsum(d2)
        total = cumulative[-1]
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = min(int(np.searchsorted(cumulative, rng.random() * total, side="right")), n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.stack(centers)


def _build_model(weights: np.ndarray, means: np.ndarray, covs: np.ndarray) -> GmmModel:
    weights = weights / weights.sum()
    return GmmModel(weights, tuple(Gaussian(m, c) for m, c in zip(means, covs)))


def _weighted_log_prob(model: GmmModel, X: np.ndarray) -> np.ndarray:
    return np.stack([c.log_pdf(X) for c in model.components], axis=1) + np.log(model.weights)


def _m_step(X: np.ndarray, resp: np.ndarray, reg_covar: float) -> GmmModel:
    n = len(X)
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    means = resp.T @ X / nk[:, None]
    covs = np.empty((len(nk), DIM, DIM))
    for j in range(len(nk)):
        diff = X - means[j]
        cov = (resp[:, j, None] * diff).T @ diff / nk[j]
        cov = (cov + cov.T) / 2
        cov.flat[:: DIM + 1] += reg_covar
        covs[j] = cov
    return _build_model(nk / n, means, covs)


def _run_em(X: np.ndarray, k: int, config: FitConfig, rng: np.random.Generator) -> FitResult:
    n = len(X)
    means = _kmeans_pp_means(X, k, rng)
    diff = X - X.mean(axis=0)
    base_cov = diff.T @ diff / n
    base_cov = (base_cov + base_cov.T) / 2
    base_cov.flat[:: DIM + 1] += config.reg_covar
    model = _build_model(np.full(k, 1.0 / k), means, np.repeat(base_cov[None], k, axis=0))

    log_prob = _weighted_log_prob(model, X)
    log_norm = logsumexp(log_prob, axis=1)
    trace = [float(log_norm.mean())]
    converged = False
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        resp = np.exp(log_prob - log_norm[:, None])
        model = _m_step(X, resp, config.reg_covar)
        log_prob = _weighted_log_prob(model, X)
        log_norm = logsumexp(log_prob, axis=1)
        trace.append(float(log_norm.mean()))
        if abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break
    return FitResult(model, tuple(trace), n_iter, converged)


def fit_em_traced(samples: Sequence[PairFeature] | np.ndarray, config: FitConfig = FitConfig()) -> FitResult:
    X = as_feature_array(samples)
    if len(X) == 0:
        raise NoSamplesError("cannot fit a mixture without samples")
    # canonical row order makes the fit independent of sample order
    X = X[np.lexsort(X.T[::-1])]
    k = effective_components(len(X), config.k)

    best: FitResult | None = None
    for restart in range(config.n_init):
        rng = np.random.default_rng(config.seed + restart)
        result = _run_em(X, k, config, rng)
        if best is None or result.mean_loglik > best.mean_loglik:
            best = result
    assert best is not None
    if not best.converged:
        logger.debug(f"EM stopped at max_iter={config.max_iter} without reaching tol={config.tol}")
    return best


def fit_em(samples: Sequence[PairFeature] | np.ndarray, config: FitConfig = FitConfig()) -> GmmModel:
    return fit_em_traced(samples, config).model


def log_density_batch(model: GmmModel, X: np.ndarray) -> np.ndarray:
    return logsumexp(_weighted_log_prob(model, np.atleast_2d(np.asarray(X, dtype=float))), axis=1)


def log_density(model: GmmModel, x: PairFeature | Sequence[float] | np.ndarray) -> float:
    vec = x.as_array() if isinstance(x, PairFeature) else np.asarray(x, dtype=float)
    return float(log_density_batch(model, vec.reshape(1, DIM))[0])


def mean_loglik(model: GmmModel, samples: Sequence[PairFeature] | np.ndarray) -> float:
    X = as_feature_array(samples)
    if len(X) == 0:
        raise NoSamplesError("mean log-likelihood of an empty sample set")
    return float(log_density_batch(model, X).mean())


def sample(model: GmmModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n features from the mixture."""
    labels = rng.choice(model.k, size=n, p=model.weights)
    z = rng.standard_normal((n, DIM))
    out = np.empty((n, DIM))
    for j, comp in enumerate(model.components):
        mask = labels == j
        out[mask] = comp.mean + z[mask] @ comp.chol.T
    return out


__all__ = [
    "FitConfig",
    "FitResult",
    "Gaussian",
    "GmmModel",
    "as_feature_array",
    "effective_components",
    "fit_em",
    "fit_em_traced",
    "log_density",
    "log_density_batch",
    "mean_loglik",
    "sample",
]
