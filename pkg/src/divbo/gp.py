"""Gaussian-process regression for deterministic observations on the unit cube.

The surrogate is a constant-mean GP with an anisotropic squared-exponential
kernel.  Outputs are standardized internally (zero mean, unit variance) before
fitting so that the default Gamma hyperpriors operate on unit-scale data; the
``predict`` boundary de-standardizes back to raw objective units.  The constant
mean is profiled out analytically (generalized least squares) at every
objective evaluation, so the MAP search runs only over the log lengthscales
and the log signal variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import gammaln


class NumericalError(RuntimeError):
    """Linear-algebra breakdown that survived jitter escalation."""


# Hyperprior shapes/rates (shape-rate parameterization, pdf ~ x^(a-1) e^(-b x)).
SIGNAL_VARIANCE_PRIOR = (2.0, 0.15)
LENGTHSCALE_PRIOR = (3.0, 6.0)

# Search box for the MAP fit, in natural units.
LENGTHSCALE_BOUNDS = (1e-3, 1e2)
SIGNAL_VARIANCE_BOUNDS = (1e-4, 1e3)

# Nugget ladder, in standardized-output variance units.  The base value keeps
# the predictive sd at training points below 1e-3 (standardized); escalation
# only triggers on an actual Cholesky failure.
BASE_JITTER = 1e-6
MAX_JITTER = 1e-2

# Below this standardized sd, posterior correlations are defined as 0 (the
# ratio is 0/0 at training points).
CORR_SD_FLOOR = 1e-6


@dataclass(frozen=True)
class Dataset:
    """Evaluated design points in [0,1]^d with their raw objective values."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        if pts.ndim != 2 or len(pts) != len(vals) or len(vals) < 1:
            raise ValueError("points must be (n, d) with matching values, n >= 1")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(vals))):
            raise ValueError("non-finite inputs in dataset")
        if pts.min() < -1e-12 or pts.max() > 1 + 1e-12:
            raise ValueError("points must lie in the unit cube")
        # Deterministic simulator: duplicated inputs are a caller bug.
        for i in range(len(pts)):
            d = np.max(np.abs(pts[i + 1:] - pts[i]), axis=1, initial=np.inf)
            if d.size and d.min() < 1e-12:
                raise ValueError("duplicate design points rejected")

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def f_min(self) -> float:
        return float(np.min(self.values))


@dataclass(frozen=True)
class KernelParams:
    """Anisotropic squared-exponential kernel hyperparameters.

    ``mean`` is the constant GP mean in standardized output units and
    ``jitter`` the diagonal nugget (standardized variance units).
    """

    lengthscales: np.ndarray
    signal_variance: float
    mean: float = 0.0
    jitter: float = BASE_JITTER

    def __post_init__(self) -> None:
        ls = np.asarray(self.lengthscales, dtype=float).ravel()
        object.__setattr__(self, "lengthscales", ls)
        if not np.all(np.isfinite(ls)) or np.any(ls <= 0):
            raise ValueError("lengthscales must be positive and finite")
        if not np.isfinite(self.signal_variance) or self.signal_variance <= 0:
            raise ValueError("signal variance must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


@dataclass(frozen=True)
class PosteriorGaussian:
    """Marginal posterior of the objective at one point."""

    mean: float
    sd: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)) or self.sd < 0:
            raise ValueError("posterior must be finite with sd >= 0")


def kernel_eval(x: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """Kernel value tau^2 * exp(-sum_k (x_k - x2_k)^2 / (2 theta_k^2))."""
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise ValueError("non-finite kernel input")
    z = (x - x2) / params.lengthscales
    return float(params.signal_variance * np.exp(-0.5 * np.dot(z, z)))


def _correlation_matrix(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    """exp(-0.5 ||(x - x')/theta||^2) for all cross pairs, without tau^2."""
    A = X1 / lengthscales
    B = X2 / lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.exp(-0.5 * np.maximum(sq, 0.0))


def _standardization(values: np.ndarray) -> tuple[float, float]:
    """Shift/scale for unit-scale outputs; scale guard for constant data."""
    shift = float(np.mean(values))
    scale = float(np.std(values))
    if scale < 1e-12:
        scale = 1.0
    return shift, scale


def _chol_with_escalation(K_noiseless: np.ndarray, jitter0: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky of K + j*I, escalating j by 10x until MAX_JITTER."""
    n = len(K_noiseless)
    j = jitter0
    while True:
        try:
            L = cholesky(K_noiseless + j * np.eye(n), lower=True)
            return L, j
        except (np.linalg.LinAlgError, ValueError):
            pass
        if j >= MAX_JITTER:
            raise NumericalError(
                f"Cholesky failed for n={n} even at jitter={j:.1e}; "
                "kernel matrix is numerically singular"
            )
        j = min(j * 10.0, MAX_JITTER)


def _gamma_log_pdf(x: float, shape: float, rate: float) -> float:
    return shape * math.log(rate) - gammaln(shape) + (shape - 1.0) * math.log(x) - rate * x


def _profiled_loglik(L: np.ndarray, y: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Log N(y; mu_hat 1, K) with mu_hat the GLS estimate; returns (ll, mu_hat, alpha)."""
    n = len(y)
    Kinv_y = cho_solve((L, True), y)
    Kinv_1 = cho_solve((L, True), np.ones(n))
    mu_hat = float(np.sum(Kinv_y) / np.sum(Kinv_1))
    r = y - mu_hat
    alpha = Kinv_y - mu_hat * Kinv_1  # = K^-1 (y - mu_hat 1)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    ll = -0.5 * float(r @ alpha) - 0.5 * logdet - 0.5 * n * math.log(2.0 * math.pi)
    return ll, mu_hat, alpha


def _map_value_and_grad(
    log_params: np.ndarray,
    X: np.ndarray,
    y_std: np.ndarray,
    sq_dists: np.ndarray,
    jitter: float,
) -> tuple[float, np.ndarray]:
    """MAP objective (log lik + log priors) and its gradient in log-parameter space.

    ``log_params`` stacks (log theta_1..d, log tau^2).  The gradient of the
    profiled likelihood needs no mu_hat term: the GLS estimate zeroes the
    partial in mu, so the envelope theorem applies.
    """
    d = X.shape[1]
    theta = np.exp(log_params[:d])
    tau2 = float(np.exp(log_params[d]))
    C = _correlation_matrix(X, X, theta)
    L, _ = _chol_with_escalation(tau2 * C, jitter)
    ll, _, alpha = _profiled_loglik(L, y_std)

    a_t, b_t = SIGNAL_VARIANCE_PRIOR
    a_l, b_l = LENGTHSCALE_PRIOR
    value = ll + _gamma_log_pdf(tau2, a_t, b_t)
    value += sum(_gamma_log_pdf(t, a_l, b_l) for t in theta)

    Kinv = cho_solve((L, True), np.eye(len(y_std)))
    W = np.outer(alpha, alpha) - Kinv
    tau2C = tau2 * C
    grad = np.empty(d + 1)
    for k in range(d):
        dK = tau2C * (sq_dists[k] / theta[k] ** 2)
        grad[k] = 0.5 * float(np.sum(W * dK)) + (a_l - 1.0) - b_l * theta[k]
    grad[d] = 0.5 * float(np.sum(W * tau2C)) + (a_t - 1.0) - b_t * tau2
    return value, grad


def log_map_objective(params: KernelParams, data: Dataset) -> float:
    """Log marginal likelihood of the standardized data plus log hyperpriors.

    The constant mean is profiled out via generalized least squares, so
    ``params.mean`` does not enter.
    """
    if data.n < 1:
        raise ValueError("empty dataset")
    shift, scale = _standardization(data.values)
    y = (data.values - shift) / scale
    X = data.points
    diffs = X[:, None, :] - X[None, :, :]
    sq_dists = np.moveaxis(diffs * diffs, 2, 0)
    logp = np.concatenate([np.log(params.lengthscales), [math.log(params.signal_variance)]])
    value, _ = _map_value_and_grad(logp, X, y, sq_dists, params.jitter)
    return value


def log_map_objective_grad(params: KernelParams, data: Dataset) -> np.ndarray:
    """Gradient of ``log_map_objective`` in log-parameter space (theta_1..d, tau^2)."""
    shift, scale = _standardization(data.values)
    y = (data.values - shift) / scale
    X = data.points
    diffs = X[:, None, :] - X[None, :, :]
    sq_dists = np.moveaxis(diffs * diffs, 2, 0)
    logp = np.concatenate([np.log(params.lengthscales), [math.log(params.signal_variance)]])
    _, grad = _map_value_and_grad(logp, X, y, sq_dists, params.jitter)
    return grad


@dataclass
class GpModel:
    """Fitted GP: hyperparameters, Cholesky factor and precomputed solves.

    Instances are immutable by convention and safe to share across concurrent
    readers.  ``shift``/``scale`` record the output standardization;
    ``predict`` reports raw units while the ``*_standardized`` accessors stay
    in the internal unit-scale space used by the acquisitions.
    """

    dataset: Dataset
    params: KernelParams
    chol: np.ndarray
    alpha: np.ndarray
    shift: float
    scale: float
    _y_std: np.ndarray = field(repr=False, default=None)

    @classmethod
    def from_params(cls, data: Dataset, params: KernelParams) -> "GpModel":
        """Condition on data with fixed hyperparameters (no fitting).

        The stored mean is replaced by its GLS estimate for the given kernel.
        """
        shift, scale = _standardization(data.values)
        y = (data.values - shift) / scale
        C = _correlation_matrix(data.points, data.points, params.lengthscales)
        L, j = _chol_with_escalation(params.signal_variance * C, params.jitter)
        _, mu_hat, alpha = _profiled_loglik(L, y)
        final = KernelParams(params.lengthscales, params.signal_variance, mean=mu_hat, jitter=j)
        return cls(dataset=data, params=final, chol=L, alpha=alpha,
                   shift=shift, scale=scale, _y_std=y)

    # -- unit handling -------------------------------------------------

    def standardize_value(self, y_raw: float) -> float:
        return (y_raw - self.shift) / self.scale

    def destandardize_value(self, y_std: float) -> float:
        return y_std * self.scale + self.shift

    # -- prediction ----------------------------------------------------

    def _check_point(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.shape[0] != self.dataset.dim or not np.all(np.isfinite(x)):
            raise ValueError("query point has wrong shape or non-finite entries")
        if x.min() < -1e-9 or x.max() > 1 + 1e-9:
            raise ValueError("query point outside the unit cube")
        return np.clip(x, 0.0, 1.0)

    def _k_vec(self, x: np.ndarray) -> np.ndarray:
        c = _correlation_matrix(self.dataset.points, x[None, :], self.params.lengthscales)
        return self.params.signal_variance * c[:, 0]

    def _match_index(self, x: np.ndarray) -> int | None:
        """Index of a training point coinciding with x, if any.

        The nugget is a computational device, not observation noise: at an
        exact input match it belongs to the process covariance, which makes
        the posterior interpolate the (noiseless) data exactly.
        """
        gaps = np.max(np.abs(self.dataset.points - x), axis=1)
        i = int(np.argmin(gaps))
        return i if gaps[i] < 1e-12 else None

    def _k_vec_matched(self, x: np.ndarray) -> tuple[np.ndarray, float]:
        k = self._k_vec(x)
        prior_var = self.params.signal_variance
        i = self._match_index(x)
        if i is not None:
            k[i] += self.params.jitter
            prior_var += self.params.jitter
        return k, prior_var

    def predict_standardized(self, x: np.ndarray) -> PosteriorGaussian:
        x = self._check_point(x)
        k, prior_var = self._k_vec_matched(x)
        mean = self.params.mean + float(k @ self.alpha)
        v = solve_triangular(self.chol, k, lower=True)
        var = prior_var - float(v @ v)
        return PosteriorGaussian(mean=mean, sd=math.sqrt(max(var, 0.0)))

    def predict(self, x: np.ndarray) -> PosteriorGaussian:
        post = self.predict_standardized(x)
        return PosteriorGaussian(
            mean=self.destandardize_value(post.mean),
            sd=post.sd * self.scale,
        )

    def predict_joint_standardized(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        B = np.atleast_2d(np.asarray(batch, dtype=float))
        B = np.vstack([self._check_point(b) for b in B])
        Kc = self.params.signal_variance * _correlation_matrix(
            self.dataset.points, B, self.params.lengthscales
        )
        Kb = self.params.signal_variance * _correlation_matrix(B, B, self.params.lengthscales)
        matches = [self._match_index(b) for b in B]
        for j, i in enumerate(matches):
            if i is not None:
                Kc[i, j] += self.params.jitter
                for j2, i2 in enumerate(matches):
                    if i2 == i:
                        Kb[j, j2] += self.params.jitter
        V = solve_triangular(self.chol, Kc, lower=True)
        cov = Kb - V.T @ V
        cov = 0.5 * (cov + cov.T)
        w, U = np.linalg.eigh(cov)
        cov = (U * np.maximum(w, 0.0)) @ U.T
        mean = self.params.mean + Kc.T @ self.alpha
        return mean, cov

    def predict_joint(self, batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Joint posterior mean and covariance at a batch, in raw units."""
        mean, cov = self.predict_joint_standardized(batch)
        return mean * self.scale + self.shift, cov * self.scale**2

    def posterior_corr(self, x: np.ndarray, x2: np.ndarray) -> float:
        """Posterior correlation of the objective at two points, in [-1, 1].

        Defined as 0 when either marginal sd falls below the variance floor
        (the ratio is 0/0 at training points, and such points should not
        contribute to batch-diversity penalties).
        """
        x = self._check_point(x)
        x2 = self._check_point(x2)
        k1 = self._k_vec(x)
        k2 = self._k_vec(x2)
        v1 = solve_triangular(self.chol, k1, lower=True)
        v2 = solve_triangular(self.chol, k2, lower=True)
        var1 = max(self.params.signal_variance - float(v1 @ v1), 0.0)
        var2 = max(self.params.signal_variance - float(v2 @ v2), 0.0)
        sd1, sd2 = math.sqrt(var1), math.sqrt(var2)
        if sd1 < CORR_SD_FLOOR or sd2 < CORR_SD_FLOOR:
            return 0.0
        cov = kernel_eval(x, x2, self.params) - float(v1 @ v2)
        return float(np.clip(cov / (sd1 * sd2), -1.0, 1.0))

    # -- gradients for acquisition optimization -------------------------

    def predict_standardized_with_grad(
        self, x: np.ndarray
    ) -> tuple[float, float, np.ndarray, np.ndarray]:
        """(mean, sd, d mean/dx, d sd/dx) in standardized units.

        The sd gradient is reported as zero inside the variance floor, where
        the acquisitions switch to their deterministic limits anyway.
        """
        x = self._check_point(x)
        k, prior_var = self._k_vec_matched(x)
        mean = self.params.mean + float(k @ self.alpha)
        w = cho_solve((self.chol, True), k)
        var = prior_var - float(k @ w)
        var = max(var, 0.0)
        sd = math.sqrt(var)
        # rows: d k(x_i, x)/dx = k_i * (x_i - x)/theta^2
        J = k[:, None] * (self.dataset.points - x) / self.params.lengthscales**2
        dmean = J.T @ self.alpha
        dvar = -2.0 * (J.T @ w)
        dsd = dvar / (2.0 * sd) if sd > 1e-12 else np.zeros_like(dvar)
        return mean, sd, dmean, dsd

    def posterior_corr_with_grad(
        self, x: np.ndarray, x2: np.ndarray
    ) -> tuple[float, np.ndarray, np.ndarray]:
        """Posterior correlation and its gradients with respect to both points."""
        x = self._check_point(x)
        x2 = self._check_point(x2)
        d = self.dataset.dim
        k1 = self._k_vec(x)
        k2 = self._k_vec(x2)
        w1 = cho_solve((self.chol, True), k1)
        w2 = cho_solve((self.chol, True), k2)
        var1 = max(self.params.signal_variance - float(k1 @ w1), 0.0)
        var2 = max(self.params.signal_variance - float(k2 @ w2), 0.0)
        sd1, sd2 = math.sqrt(var1), math.sqrt(var2)
        if sd1 < CORR_SD_FLOOR or sd2 < CORR_SD_FLOOR:
            return 0.0, np.zeros(d), np.zeros(d)
        k12 = kernel_eval(x, x2, self.params)
        cov = k12 - float(k1 @ w2)
        corr = cov / (sd1 * sd2)
        theta2 = self.params.lengthscales**2
        J1 = k1[:, None] * (self.dataset.points - x) / theta2
        J2 = k2[:, None] * (self.dataset.points - x2) / theta2
        dk12_dx1 = k12 * (x2 - x) / theta2
        dk12_dx2 = -dk12_dx1
        dcov1 = dk12_dx1 - J1.T @ w2
        dcov2 = dk12_dx2 - J2.T @ w1
        dsd1 = (-(J1.T @ w1)) / sd1
        dsd2 = (-(J2.T @ w2)) / sd2
        g1 = dcov1 / (sd1 * sd2) - corr * dsd1 / sd1
        g2 = dcov2 / (sd1 * sd2) - corr * dsd2 / sd2
        if abs(corr) >= 1.0:
            corr = float(np.clip(corr, -1.0, 1.0))
        return float(corr), g1, g2


def fit_map(data: Dataset, n_restarts: int = 8, rng: np.random.Generator | None = None) -> GpModel:
    """MAP fit of the kernel hyperparameters via multi-start L-BFGS-B.

    The search runs in log space over the lengthscales and signal variance,
    box-bounded; the best restart wins, ties broken by restart index.
    Deterministic given (data, seed, n_restarts).
    """
    if data.n < 2:
        raise ValueError("fit_map needs at least 2 points")
    if rng is None:
        rng = np.random.default_rng(0)
    shift, scale = _standardization(data.values)
    y = (data.values - shift) / scale
    X = data.points
    d = data.dim
    diffs = X[:, None, :] - X[None, :, :]
    sq_dists = np.moveaxis(diffs * diffs, 2, 0)

    lo = np.concatenate([np.full(d, math.log(LENGTHSCALE_BOUNDS[0])),
                         [math.log(SIGNAL_VARIANCE_BOUNDS[0])]])
    hi = np.concatenate([np.full(d, math.log(LENGTHSCALE_BOUNDS[1])),
                         [math.log(SIGNAL_VARIANCE_BOUNDS[1])]])

    starts = [np.concatenate([np.full(d, math.log(0.5)), [0.0]])]
    for _ in range(max(n_restarts - 1, 0)):
        th = rng.uniform(math.log(0.05), math.log(2.0), size=d)
        t2 = rng.uniform(math.log(0.2), math.log(5.0))
        starts.append(np.concatenate([th, [t2]]))

    def neg(logp: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = _map_value_and_grad(logp, X, y, sq_dists, BASE_JITTER)
        return -v, -g

    best_val = -np.inf
    best_x = None
    failures: list[str] = []
    for x0 in starts[:n_restarts]:
        try:
            res = minimize(neg, x0, jac=True, method="L-BFGS-B",
                           bounds=list(zip(lo, hi)),
                           options={"maxiter": 200, "ftol": 1e-12, "gtol": 1e-8})
            val = -res.fun
        except NumericalError as exc:
            failures.append(str(exc))
            continue
        if np.isfinite(val) and val > best_val:
            best_val = val
            best_x = res.x
    if best_x is None:
        raise NumericalError(
            "all MAP restarts failed; last errors: " + "; ".join(failures[-3:])
        )

    theta = np.exp(best_x[:d])
    tau2 = float(np.exp(best_x[d]))
    return GpModel.from_params(data, KernelParams(theta, tau2, jitter=BASE_JITTER))
