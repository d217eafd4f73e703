"""Multi-start box-constrained maximization of acquisition surfaces.

Acquisition landscapes are multi-modal, so each proposal runs several
quasi-Newton ascents (L-BFGS-B on the negated objective) from a fresh Latin
hypercube of start points and keeps the best local maximum.  Restart count
defaults to round(4.5 * D) for a D-dimensional search.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


class OptimizationError(RuntimeError):
    """Every restart was discarded (non-finite acquisition values)."""


class _NonFiniteValue(Exception):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    n_restarts: int
    max_iters: int = 200
    grad_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.n_restarts < 1:
            raise ValueError("need at least one restart")

    @classmethod
    def for_dim(cls, dim: int, **kw) -> "OptimizerConfig":
        return cls(n_restarts=max(int(round(4.5 * dim)), 1), **kw)


@dataclass(frozen=True)
class OptResult:
    argmax: np.ndarray
    value: float
    restart_values: tuple[float, ...]


def lhs(n: int, d: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Latin hypercube design: per coordinate, one uniform draw per stratum
    [i/n, (i+1)/n), strata in random order."""
    if n < 1 or d < 1:
        raise ValueError("need n >= 1 and d >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    out = np.empty((n, d))
    for k in range(d):
        strata = rng.permutation(n)
        out[:, k] = (strata + rng.uniform(size=n)) / n
    return out


def maximize(
    acq,
    dim: int,
    cfg: OptimizerConfig | None = None,
    rng: np.random.Generator | None = None,
) -> OptResult:
    """Best local maximum of ``acq`` over [0,1]^dim via multi-start L-BFGS-B.

    ``acq(x) -> (value, gradient)``.  Restarts that hit a non-finite value are
    discarded with a warning; ties between restarts go to the lowest index.
    Deterministic given (acq, cfg, seed).
    """
    if cfg is None:
        cfg = OptimizerConfig.for_dim(dim)
    if rng is None:
        rng = np.random.default_rng(0)
    starts = lhs(cfg.n_restarts, dim, rng)

    def neg(x: np.ndarray) -> tuple[float, np.ndarray]:
        v, g = acq(x)
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            raise _NonFiniteValue
        return -v, -np.asarray(g, dtype=float)

    best_val = -np.inf
    best_x = None
    restart_values: list[float] = []
    for idx in range(cfg.n_restarts):
        x0 = starts[idx]
        try:
            v0, _ = acq(x0)
            if not np.isfinite(v0):
                raise _NonFiniteValue
            res = minimize(
                neg, x0, jac=True, method="L-BFGS-B",
                bounds=[(0.0, 1.0)] * dim,
                options={"maxiter": cfg.max_iters, "ftol": 1e-14, "gtol": cfg.grad_tol},
            )
            val, x = -res.fun, res.x
            if not np.isfinite(val) or val < v0:
                val, x = float(v0), x0
        except _NonFiniteValue:
            warnings.warn(f"restart {idx} discarded: non-finite acquisition value")
            continue
        restart_values.append(float(val))
        if val > best_val:
            best_val = float(val)
            best_x = np.clip(x, 0.0, 1.0)
    if best_x is None:
        raise OptimizationError("all restarts hit non-finite acquisition values")
    return OptResult(argmax=best_x, value=best_val, restart_values=tuple(restart_values))


def maximize_batch(
    acq_q,
    q: int,
    d: int,
    cfg: OptimizerConfig | None = None,
    rng: np.random.Generator | None = None,
) -> OptResult:
    """Joint maximization over a batch: same ascent on the q*d cube.

    ``acq_q`` takes the flat q*d vector; the returned argmax is reshaped to
    (q, d).  With q = 1 this is exactly ``maximize``.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    res = maximize(acq_q, q * d, cfg=cfg, rng=rng)
    return OptResult(argmax=res.argmax.reshape(q, d), value=res.value,
                     restart_values=res.restart_values)
