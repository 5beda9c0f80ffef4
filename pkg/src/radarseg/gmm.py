"""Full-covariance Gaussian mixture fitted by expectation-maximization.

The functional layer (``gaussian_logpdf`` ... ``fit_em``) works on plain
arrays and immutable :class:`GmmParams`; :class:`GaussianMixtureEM` wraps it
in the scikit-learn estimator protocol.

All densities are evaluated in the log domain through a Cholesky factor of
each covariance, and mixture sums go through log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, ClusterMixin, DensityMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    ComponentCollapseError,
    FitFailureError,
    InsufficientDataError,
    InvalidThresholdError,
    SingularCovarianceError,
)

_LOG_2PI = np.log(2.0 * np.pi)
INIT_STRATEGIES = ("kmeans", "random")
# D7-style hardening: regularization grows tenfold per failure, capped here
MAX_REG_COVAR = 1e-2
MAX_REINIT_ATTEMPTS = 3
_KMEANS_MAX_ITER = 25


@dataclass(frozen=True, eq=False)
class GmmParams:
    """Mixture parameters: ``weights`` (K,), ``means`` (K, d), ``covariances`` (K, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        for name in ("weights", "means", "covariances"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        K = self.weights.shape[0]
        if self.weights.ndim != 1 or K < 1:
            raise ValueError("weights must be a non-empty 1-D array")
        if self.means.ndim != 2 or self.means.shape[0] != K or self.means.shape[1] < 1:
            raise ValueError(f"means must have shape (K={K}, d), got {self.means.shape}")
        d = self.means.shape[1]
        if self.covariances.shape != (K, d, d):
            raise ValueError(
                f"covariances must have shape {(K, d, d)}, got {self.covariances.shape}"
            )

    @property
    def n_components(self):
        return self.weights.shape[0]

    @property
    def n_features(self):
        return self.means.shape[1]

    def check(self, weight_tol=1e-9, sym_tol=1e-12):
        """Raise ``ValueError`` unless the parameters form a valid mixture."""
        w = self.weights
        if not (np.isfinite(w).all() and np.isfinite(self.means).all()
                and np.isfinite(self.covariances).all()):
            raise ValueError("parameters must be finite")
        if (w < 0).any():
            raise ValueError("weights must be non-negative")
        if abs(w.sum() - 1.0) > weight_tol:
            raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
        for k, cov in enumerate(self.covariances):
            if np.abs(cov - cov.T).max() > sym_tol:
                raise ValueError(f"covariance {k} is not symmetric")
            _cholesky(cov, k)
        return self


@dataclass(frozen=True)
class FitConfig:
    n_components: int = 3
    init: str = "kmeans"
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-6
    reg_covar: float = 1e-6

    def __post_init__(self):
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.init not in INIT_STRATEGIES:
            raise ValueError(f"init must be one of {INIT_STRATEGIES}, got {self.init!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.reg_covar > 0:
            raise ValueError("reg_covar must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class FitReport:
    n_iter: int = 0
    log_likelihood: list = field(default_factory=list)
    converged: bool = False
    reg_covar: float = 0.0
    # indices into ``log_likelihood`` where a component was reinitialized;
    # monotonicity is only guaranteed between consecutive restarts
    restarts: list = field(default_factory=list)

    @property
    def final_log_likelihood(self):
        return self.log_likelihood[-1] if self.log_likelihood else float("nan")

    def segments(self):
        """Split the trajectory at reinitialization points."""
        bounds = [0, *self.restarts, len(self.log_likelihood)]
        return [self.log_likelihood[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


@dataclass(frozen=True)
class GmmModel:
    """Fitted parameters plus an optional cluster -> class-code bijection."""

    params: GmmParams
    label_map: Optional[dict] = None

    def __post_init__(self):
        if self.label_map is not None:
            lm = {int(k): int(v) for k, v in self.label_map.items()}
            K = self.params.n_components
            if sorted(lm) != list(range(K)) or sorted(lm.values()) != list(range(K)):
                raise ValueError(f"label_map must be a bijection over 0..{K - 1}, got {lm}")
            object.__setattr__(self, "label_map", lm)

    def with_label_map(self, label_map):
        return GmmModel(self.params, label_map)


def _cholesky(cov, component=None):
    try:
        return linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularCovarianceError(
            f"covariance{'' if component is None else f' {component}'} is not "
            "positive definite",
            component,
        ) from exc


def _logpdf_chol(X, mu, chol):
    d = mu.shape[0]
    z = linalg.solve_triangular(chol, (X - mu).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", z, z)
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (d * _LOG_2PI + log_det + maha)


def gaussian_logpdf(x, mu, Sigma):
    """Log-density of N(mu, Sigma) at ``x``.

    ``x`` may be a single d-vector (scalar result) or an (n, d) array.
    """
    mu = np.asarray(mu, dtype=float)
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    x = np.asarray(x, dtype=float)
    if Sigma.shape != (mu.shape[0], mu.shape[0]) or x.shape[-1] != mu.shape[0]:
        raise ValueError("dimension mismatch between x, mu and Sigma")
    out = _logpdf_chol(np.atleast_2d(x), mu, _cholesky(Sigma))
    return float(out[0]) if x.ndim == 1 else out


def weighted_log_prob(params, X):
    """``ln pi_k + ln N(x_n; mu_k, Sigma_k)`` as an (N, K) array."""
    X = np.asarray(X, dtype=float)
    out = np.empty((X.shape[0], params.n_components))
    with np.errstate(divide="ignore"):
        log_w = np.log(params.weights)
    for k in range(params.n_components):
        chol = _cholesky(params.covariances[k], k)
        out[:, k] = log_w[k] + _logpdf_chol(X, params.means[k], chol)
    return out


def log_likelihood(params, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 1:
        raise InsufficientDataError("log_likelihood needs at least one sample")
    return float(logsumexp(weighted_log_prob(params, X), axis=1).sum())


def e_step(params, X):
    """Responsibilities, shape (N, K); each row sums to one."""
    lp = weighted_log_prob(params, np.atleast_2d(X))
    return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))


def _e_step_with_ll(params, X):
    lp = weighted_log_prob(params, X)
    lse = logsumexp(lp, axis=1, keepdims=True)
    return np.exp(lp - lse), float(lse.sum())


def m_step(resp, X, reg_covar):
    """Closed-form parameter update from responsibilities."""
    resp = np.asarray(resp, dtype=float)
    X = np.asarray(X, dtype=float)
    N, d = X.shape
    if resp.shape[0] != N:
        raise ValueError("responsibilities and data disagree on N")
    nk = resp.sum(axis=0)
    floor = 10.0 * d * np.finfo(float).eps
    for k, mass in enumerate(nk):
        if not mass >= floor:
            raise ComponentCollapseError(k, float(mass))
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((nk.shape[0], d, d))
    for k in range(nk.shape[0]):
        diff = X - means[k]
        cov = (resp[:, k] * diff.T) @ diff / nk[k]
        cov = 0.5 * (cov + cov.T)
        cov.flat[:: d + 1] += reg_covar
        covs[k] = cov
    return GmmParams(nk / nk.sum(), means, covs)


def _global_covariance(X, reg_covar):
    d = X.shape[1]
    diff = X - X.mean(axis=0)
    cov = diff.T @ diff / X.shape[0]
    cov = 0.5 * (cov + cov.T)
    cov.flat[:: d + 1] += reg_covar
    return cov


def _farthest_point_seeds(X, K, rng):
    idx = [int(rng.integers(X.shape[0]))]
    dist = ((X - X[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(dist))
        idx.append(nxt)
        dist = np.minimum(dist, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[idx].copy()


def _lloyd(X, centers):
    labels = None
    for _ in range(_KMEANS_MAX_ITER):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(centers.shape[0]):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    return centers


def init_params(X, config, rng=None):
    """Initial parameters, deterministic in ``(X, config.seed)``.

    ``"kmeans"``: greedy farthest-point seeding refined by Lloyd iterations,
    shared global covariance, uniform weights.  ``"random"``: one M-step on a
    random responsibility matrix.
    """
    X = np.asarray(X, dtype=float)
    N = X.shape[0]
    K = config.n_components
    if N < K:
        raise InsufficientDataError(f"need at least K={K} samples, got {N}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    if config.init == "random":
        resp = rng.random((N, K))
        resp /= resp.sum(axis=1, keepdims=True)
        return m_step(resp, X, config.reg_covar)
    centers = _lloyd(X, _farthest_point_seeds(X, K, rng))
    cov = _global_covariance(X, config.reg_covar)
    return GmmParams(np.full(K, 1.0 / K), centers, np.repeat(cov[None], K, axis=0))


def _reinit_component(params, k, X, reg_covar, rng):
    means = params.means.copy()
    covs = params.covariances.copy()
    weights = params.weights.copy()
    K = params.n_components
    means[k] = X[rng.integers(X.shape[0])]
    covs[k] = _global_covariance(X, reg_covar)
    weights[k] = 1.0 / K
    return GmmParams(weights / weights.sum(), means, covs)


def fit_em(X, config=None):
    """Fit a mixture by EM.  Returns ``(GmmModel, FitReport)``.

    Stops when the relative change of the log-likelihood drops below
    ``config.tol`` or after ``config.max_iter`` M-steps.  On a collapsed
    component or a non-factorizable covariance the regularization is raised
    tenfold (up to 1e-2) and the offending component is re-seeded at a random
    sample; the fourth such event aborts with :class:`FitFailureError`.
    """
    config = config or FitConfig()
    X = check_array(X, dtype=np.float64)
    if X.shape[0] < config.n_components:
        raise InsufficientDataError(
            f"need at least K={config.n_components} samples, got {X.shape[0]}"
        )
    rng = np.random.default_rng(config.seed)
    params = init_params(X, config, rng)
    reg = config.reg_covar
    report = FitReport(reg_covar=reg)
    attempts = 0
    prev = None
    while report.n_iter < config.max_iter:
        try:
            resp, ll = _e_step_with_ll(params, X)
            new = m_step(resp, X, reg)
        except (ComponentCollapseError, SingularCovarianceError) as exc:
            attempts += 1
            k = exc.component
            if attempts > MAX_REINIT_ATTEMPTS or k is None:
                raise FitFailureError(
                    f"EM failed after {attempts - 1} reinitializations: {exc}",
                    {"n_iter": report.n_iter, "reg_covar": reg, "component": k,
                     "log_likelihood": list(report.log_likelihood)},
                ) from exc
            reg = min(reg * 10.0, MAX_REG_COVAR)
            params = _reinit_component(params, k, X, reg, rng)
            report.restarts.append(len(report.log_likelihood))
            report.reg_covar = reg
            prev = None
            continue
        report.log_likelihood.append(ll)
        params = new
        report.n_iter += 1
        if prev is not None and abs(ll - prev) <= config.tol * abs(ll):
            report.converged = True
            break
        prev = ll
    return GmmModel(params), report


def posterior(model, x):
    """Responsibilities of each component for a single feature vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return e_step(model.params, x)[0]


def predict_map(model, x):
    """MAP component for ``x``; returns ``(cluster, class_code or None)``.

    Ties go to the lowest component index.
    """
    x = np.asarray(x, dtype=float).reshape(1, -1)
    k = int(np.argmax(weighted_log_prob(model.params, x)[0]))
    label = None if model.label_map is None else model.label_map[k]
    return k, label


def _check_threshold(t):
    if not 0.0 <= t <= 1.0:
        raise InvalidThresholdError(f"threshold must lie in [0, 1], got {t!r}")


def predict_thresholded(model, x, k, threshold):
    _check_threshold(threshold)
    if not 0 <= k < model.params.n_components:
        raise ValueError(f"component {k} out of range")
    return bool(posterior(model, x)[k] >= threshold)


class GaussianMixtureEM(ClusterMixin, DensityMixin, BaseEstimator):
    """Gaussian mixture with full covariances, fitted by EM.

    Parameters
    ----------
    n_components : int, default=3
        Number of mixture components.
    init : {"kmeans", "random"}, default="kmeans"
        Initialization strategy, see :func:`init_params`.
    max_iter : int, default=200
    tol : float, default=1e-6
        Relative log-likelihood change used as the convergence criterion.
    reg_covar : float, default=1e-6
        Non-negative ridge added to every covariance diagonal.
    random_state : int, default=0
        Seed; two fits with the same seed and data are bit-identical.

    Attributes
    ----------
    weights_, means_, covariances_ : ndarray
    label_map_ : dict or None
        Cluster index -> class code, set by :meth:`set_label_map`.
    fit_report_ : FitReport
    n_iter_ : int
    converged_ : bool
    """

    def __init__(self, n_components=3, init="kmeans", max_iter=200, tol=1e-6,
                 reg_covar=1e-6, random_state=0):
        self.n_components = n_components
        self.init = init
        self.max_iter = max_iter
        self.tol = tol
        self.reg_covar = reg_covar
        self.random_state = random_state

    def _config(self):
        return FitConfig(
            n_components=self.n_components,
            init=self.init,
            seed=int(self.random_state),
            max_iter=self.max_iter,
            tol=self.tol,
            reg_covar=self.reg_covar,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        model, report = fit_em(X, self._config())
        self._set_model(model)
        self.fit_report_ = report
        self.n_iter_ = report.n_iter
        self.converged_ = report.converged
        self.labels_ = self.predict(X)
        return self

    def _set_model(self, model):
        p = model.params
        self.weights_ = p.weights
        self.means_ = p.means
        self.covariances_ = p.covariances
        self.n_features_in_ = p.n_features
        self.label_map_ = model.label_map

    @classmethod
    def from_model(cls, model, **kwargs):
        """Wrap an already-fitted :class:`GmmModel` (e.g. one loaded from disk)."""
        est = cls(n_components=model.params.n_components, **kwargs)
        est._set_model(model)
        return est

    @property
    def model_(self):
        check_is_fitted(self, "weights_")
        return GmmModel(GmmParams(self.weights_, self.means_, self.covariances_),
                        self.label_map_)

    def set_label_map(self, label_map):
        self.label_map_ = self.model_.with_label_map(label_map).label_map
        return self

    def _check_X(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model expects {self.n_features_in_}"
            )
        return X

    def predict(self, X):
        """MAP cluster index per sample (ties -> lowest index)."""
        X = self._check_X(X)
        return np.argmax(weighted_log_prob(self.model_.params, X), axis=1)

    def predict_proba(self, X):
        return e_step(self.model_.params, self._check_X(X))

    def predict_classes(self, X):
        """MAP class codes through ``label_map_``."""
        if self.label_map_ is None:
            raise ValueError("no label_map set; associate clusters with classes first")
        lut = np.array([self.label_map_[k] for k in range(self.n_components)])
        return lut[self.predict(X)]

    def score_samples(self, X):
        return logsumexp(weighted_log_prob(self.model_.params, self._check_X(X)), axis=1)

    def score(self, X, y=None):
        """Mean per-sample log-likelihood."""
        return float(self.score_samples(X).mean())
