"""Closed-form acquisition functions and their gradients.

The diverse-utility family scores a candidate by how much posterior mass it
places on objective values at or below the running tolerance threshold
``gamma = f_min + epsilon``, with a band of width ``lam * sd`` above the
threshold rewarding exploration of the near-tolerable contour.  Expectations
under the Gaussian posterior reduce to Phi/phi expressions; everything here
is plain scalar math so the functions are unit-agnostic.  Model-level
wrappers (``q_edu``, ``make_objective``) evaluate in the GP's standardized
output space, where the mixed ``1 + sd^2`` terms of the closed form are
meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .gp import GpModel, PosteriorGaussian

# Below this sd the posterior is treated as deterministic and acquisitions
# take their pointwise limits.
SD_FLOOR = 1e-12

KINDS = ("EI", "EDU", "Contour", "QEDU", "QEI", "Random")


@dataclass(frozen=True)
class ToleranceState:
    """Running tolerance bookkeeping: best observed value and band width."""

    f_min: float
    epsilon: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.f_min) and self.epsilon > 0):
            raise ValueError("need finite f_min and epsilon > 0")

    @property
    def gamma_n(self) -> float:
        return self.f_min + self.epsilon


@dataclass(frozen=True)
class AcquisitionSpec:
    """Which acquisition to run and its knobs."""

    kind: str
    lam: float = 0.5
    batch_size: int = 1
    mc_samples: int = 256

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition kind {self.kind!r}; expected one of {KINDS}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.batch_size < 1 or self.mc_samples < 1:
            raise ValueError("batch_size and mc_samples must be >= 1")

    @property
    def is_batch(self) -> bool:
        return self.kind in ("QEDU", "QEI")

    def label(self) -> str:
        parts = [self.kind.lower()]
        if self.kind in ("EDU", "Contour", "QEDU"):
            parts.append(f"l{self.lam:g}")
        if self.is_batch:
            parts.append(f"q{self.batch_size}")
        return "-".join(parts)


def gaussian_partial_moments(a: float, b: float, mu: float, sd: float) -> tuple[float, float, float]:
    """Integrals of (f - mu)^k, k = 0, 1, 2, of N(mu, sd^2) over [a, b].

    ``a`` may be -inf.  These are the building blocks for the closed-form
    expectations of the piecewise utilities.
    """
    if sd <= 0:
        raise ValueError("sd must be positive")
    if not (a < b):
        raise ValueError("need a < b")
    beta = (b - mu) / sd
    if math.isinf(a):
        if a > 0:
            raise ValueError("a must be -inf or finite")
        m0 = norm.cdf(beta)
        m1 = sd * (0.0 - norm.pdf(beta))
        m2 = sd * (0.0 - (b - mu) * norm.pdf(beta)) + sd**2 * m0
    else:
        alpha = (a - mu) / sd
        m0 = norm.cdf(beta) - norm.cdf(alpha)
        m1 = sd * (norm.pdf(alpha) - norm.pdf(beta))
        m2 = sd * ((a - mu) * norm.pdf(alpha) - (b - mu) * norm.pdf(beta)) + sd**2 * m0
    return float(m0), float(m1), float(m2)


def ei(post: PosteriorGaussian, f_min: float) -> float:
    """Expected improvement over the current best value; always >= 0."""
    if post.sd < SD_FLOOR:
        return max(f_min - post.mean, 0.0)
    u = (f_min - post.mean) / post.sd
    val = (f_min - post.mean) * norm.cdf(u) + post.sd * norm.pdf(u)
    return max(float(val), 0.0)


def du_utility(f: float, post: PosteriorGaussian, tol: ToleranceState, lam: float) -> float:
    """Pointwise diverse utility of an objective value f.

    Exposed as the integrand for the quadrature oracle of ``edu``; the band
    rewards near-threshold exploration, the improvement branch rewards values
    strictly below the threshold.
    """
    sd = post.sd
    gamma = tol.gamma_n
    if f < gamma:
        return lam**2 * sd**2 + sd**2 * (f - gamma) ** 2
    if f <= gamma + lam * sd:
        return lam**2 * sd**2 - (f - gamma) ** 2
    return 0.0


def _edu_value(mu: float, sd: float, gamma: float, lam: float) -> float:
    g = gamma - mu
    z = g / sd
    u = z + lam
    A = (1.0 + sd**2) * norm.cdf(z) - norm.cdf(u)
    B = (1.0 + sd**2) * norm.pdf(z) - norm.pdf(u)
    C = norm.pdf(u) + lam * norm.cdf(u)
    return float((sd**2 + g * g) * A + g * sd * B + lam * sd**2 * C)


def edu(post: PosteriorGaussian, tol: ToleranceState, lam: float) -> float:
    """Posterior expectation of the diverse utility.

    At sd -> 0 every branch of the utility vanishes at f = mean (both the
    sd^2-weighted terms and the zero-width band), so the deterministic limit
    is 0.
    """
    if post.sd < SD_FLOOR:
        return 0.0
    return _edu_value(post.mean, post.sd, tol.gamma_n, lam)


def edu_dlambda(post: PosteriorGaussian, tol: ToleranceState, lam: float) -> float:
    """Partial derivative of ``edu`` in the diversity parameter (diagnostic).

    Exact derivative of the closed form: the phi-term bracket ends in
    ``lam^2 sd^2 - (gamma - mu)^2``.
    """
    if post.sd <= 0:
        raise ValueError("edu_dlambda needs sd > 0")
    sd = post.sd
    g = tol.gamma_n - post.mean
    u = g / sd + lam
    return float(
        2.0 * lam * norm.cdf(u) * sd**2
        + norm.pdf(u) * (u * (g * sd - lam * sd**2) + lam**2 * sd**2 - g * g)
    )


def contour_acq(post: PosteriorGaussian, tol: ToleranceState, lam: float) -> float:
    """Expected contour utility at the adaptive level gamma_n.

    Integrates ``lam^2 sd^2 - (f - gamma)^2`` over the band
    ``[gamma - lam sd, gamma + lam sd]``, assembled from the partial moments.
    """
    sd = post.sd
    if sd < SD_FLOOR:
        return 0.0
    gamma = tol.gamma_n
    a = gamma - lam * sd
    b = gamma + lam * sd
    m0, m1, m2 = gaussian_partial_moments(a, b, post.mean, sd)
    shift = post.mean - gamma
    band_sq = m2 + 2.0 * shift * m1 + shift**2 * m0  # integral of (f - gamma)^2
    return float(lam**2 * sd**2 * m0 - band_sq)


# -- partial derivatives in (mu, sd), used for chain-rule x-gradients ------


def _ei_partials(mu: float, sd: float, f_min: float) -> tuple[float, float]:
    u = (f_min - mu) / sd
    return -float(norm.cdf(u)), float(norm.pdf(u))


def _edu_partials(mu: float, sd: float, gamma: float, lam: float) -> tuple[float, float]:
    g = gamma - mu
    z = g / sd
    u = z + lam
    Pz, pz = norm.cdf(z), norm.pdf(z)
    Pu, pu = norm.cdf(u), norm.pdf(u)
    A = (1.0 + sd**2) * Pz - Pu
    B = (1.0 + sd**2) * pz - pu
    C = pu + lam * Pu
    E = (1.0 + sd**2) * z * pz - u * pu
    dmu = -2.0 * g * A - ((sd**2 + g * g) / sd + sd) * B + g * E + lam * sd * z * pu
    dsd = (
        2.0 * sd * A
        + (sd**2 + g * g) * (2.0 * sd * Pz - (z / sd) * B)
        + g * B
        + g * sd * (2.0 * sd * pz + (z / sd) * E)
        + 2.0 * lam * sd * C
        + lam * sd * z**2 * pu
    )
    return float(dmu), float(dsd)


def _contour_partials(mu: float, sd: float, gamma: float, lam: float) -> tuple[float, float]:
    # value = sd^2 * h(z) with h = (lam^2 - z^2 - 1)(Phi(b) - Phi(a)) + b phi(a) - a phi(b),
    # a = z - lam, b = z + lam; h'(z) collapses to the two-term form below.
    z = (gamma - mu) / sd
    a, b = z - lam, z + lam
    dP = norm.cdf(b) - norm.cdf(a)
    h = (lam**2 - z * z - 1.0) * dP + b * norm.pdf(a) - a * norm.pdf(b)
    hp = -2.0 * z * dP + 2.0 * (norm.pdf(a) - norm.pdf(b))
    return float(-sd * hp), float(2.0 * sd * h - sd * z * hp)


# -- batch acquisitions ----------------------------------------------------


def _standardized_tol(model: GpModel, tol: ToleranceState) -> ToleranceState:
    return ToleranceState(model.standardize_value(tol.f_min), tol.epsilon / model.scale)


def _max_corr(model: GpModel, batch: np.ndarray) -> float:
    q = len(batch)
    best = -1.0
    for i in range(q):
        for j in range(i + 1, q):
            best = max(best, model.posterior_corr(batch[i], batch[j]))
    return best


def q_edu(model: GpModel, batch: np.ndarray, tol: ToleranceState, lam: float) -> float:
    """Batch diverse acquisition: [1 - max pairwise posterior corr] * sum of EDU.

    For a single point the bracket is defined as 1, recovering ``edu``.
    Duplicate points are allowed; their correlation of 1 zeroes the bracket.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    tol_std = _standardized_tol(model, tol)
    total = sum(edu(model.predict_standardized(x), tol_std, lam) for x in batch)
    if len(batch) == 1:
        return float(total)
    return float((1.0 - _max_corr(model, batch)) * total)


def q_ei_mc(
    model: GpModel,
    batch: np.ndarray,
    f_min: float,
    n_samples: int,
    rng: np.random.Generator | None = None,
    normals: np.ndarray | None = None,
) -> float:
    """Monte-Carlo batch expected improvement (max improvement over the batch).

    ``normals`` fixes the standard-normal draws so one optimizer run sees a
    deterministic objective (common random numbers); otherwise ``rng`` draws
    ``n_samples`` fresh ones.  Raw objective units.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    q = len(batch)
    if normals is None:
        if rng is None:
            raise ValueError("q_ei_mc needs either rng or pre-drawn normals")
        normals = rng.standard_normal((n_samples, q))
    if normals.shape[1] != q:
        raise ValueError("normals have wrong batch width")
    mean, cov = model.predict_joint(batch)
    w, U = np.linalg.eigh(cov)
    root = U * np.sqrt(np.maximum(w, 0.0))
    samples = mean[None, :] + normals @ root.T
    imp = np.maximum(f_min - samples, 0.0).max(axis=1)
    return float(imp.mean())


# -- optimizer-facing objective factory -------------------------------------


def make_objective(
    spec: AcquisitionSpec,
    model: GpModel,
    tol: ToleranceState,
    rng: np.random.Generator | None = None,
):
    """Build ``fun(x_flat) -> (value, grad)`` over the optimization cube.

    Single-point kinds take a flat d-vector; batch kinds take q*d entries.
    EI/EDU/Contour/QEDU evaluate in standardized output units and use exact
    chain-rule gradients through the GP posterior; QEI uses the raw-unit
    Monte-Carlo value with common random numbers and central differences.
    """
    d = model.dataset.dim
    tol_std = _standardized_tol(model, tol)

    if spec.kind in ("EI", "EDU", "Contour"):
        if spec.kind == "EI":
            partials = lambda m, s: _ei_partials(m, s, tol_std.f_min)
            value = lambda m, s: ei(PosteriorGaussian(m, s), tol_std.f_min)
        elif spec.kind == "EDU":
            partials = lambda m, s: _edu_partials(m, s, tol_std.gamma_n, spec.lam)
            value = lambda m, s: edu(PosteriorGaussian(m, s), tol_std, spec.lam)
        else:
            partials = lambda m, s: _contour_partials(m, s, tol_std.gamma_n, spec.lam)
            value = lambda m, s: contour_acq(PosteriorGaussian(m, s), tol_std, spec.lam)

        def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
            m, s, dm, ds = model.predict_standardized_with_grad(x)
            if s < SD_FLOOR:
                return value(m, s), np.zeros(d)
            dmu, dsd = partials(m, s)
            return value(m, s), dmu * dm + dsd * ds

        return fun

    if spec.kind == "QEDU":
        q = spec.batch_size

        def fun_q(x: np.ndarray) -> tuple[float, np.ndarray]:
            batch = np.asarray(x, dtype=float).reshape(q, d)
            vals = np.empty(q)
            grads = np.zeros((q, d))
            for j in range(q):
                m, s, dm, ds = model.predict_standardized_with_grad(batch[j])
                vals[j] = edu(PosteriorGaussian(m, s), tol_std, spec.lam)
                if s >= SD_FLOOR:
                    dmu, dsd = _edu_partials(m, s, tol_std.gamma_n, spec.lam)
                    grads[j] = dmu * dm + dsd * ds
            total = float(vals.sum())
            if q == 1:
                return total, grads.ravel()
            # exact value; subgradient through the active correlation pair
            cbest, g1b, g2b = -2.0, np.zeros(d), np.zeros(d)
            ibest = jbest = 0
            for i in range(q):
                for j in range(i + 1, q):
                    c, g1, g2 = model.posterior_corr_with_grad(batch[i], batch[j])
                    if c > cbest:
                        cbest, g1b, g2b, ibest, jbest = c, g1, g2, i, j
            bracket = 1.0 - cbest
            grad = bracket * grads
            grad[ibest] -= g1b * total
            grad[jbest] -= g2b * total
            return bracket * total, grad.ravel()

        return fun_q

    if spec.kind == "QEI":
        q = spec.batch_size
        if rng is None:
            rng = np.random.default_rng(0)
        normals = rng.standard_normal((spec.mc_samples, q))
        h = 1e-6

        def value_only(x: np.ndarray) -> float:
            return q_ei_mc(model, x.reshape(q, d), tol.f_min, spec.mc_samples,
                           normals=normals)

        def fun_mc(x: np.ndarray) -> tuple[float, np.ndarray]:
            x = np.asarray(x, dtype=float)
            v = value_only(x)
            grad = np.empty(x.size)
            for k in range(x.size):
                lo = max(x[k] - h, 0.0)
                hi = min(x[k] + h, 1.0)
                xp, xm = x.copy(), x.copy()
                xp[k], xm[k] = hi, lo
                grad[k] = (value_only(xp) - value_only(xm)) / (hi - lo)
            return v, grad

        return fun_mc

    raise ValueError(f"no optimizer objective for kind {spec.kind!r}")


def acq_gradient(
    spec: AcquisitionSpec,
    model: GpModel,
    point_or_batch: np.ndarray,
    tol: ToleranceState,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Gradient of the configured acquisition with respect to the inputs.

    Matches central finite differences of the same acquisition away from the
    batch max-correlation switch set.
    """
    fun = make_objective(spec, model, tol, rng=rng)
    x = np.asarray(point_or_batch, dtype=float).ravel()
    _, grad = fun(x)
    return grad
