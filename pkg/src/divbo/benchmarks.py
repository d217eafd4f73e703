"""Benchmark problems with unit-cube wrappers and ground-truth registries.

Every benchmark exposes its objective on [0,1]^d (internally mapped to the
native domain) together with the known tolerable minimizers and global
minimum where available.  Registry minimizers are refined numerically at
build time rather than hard-coded.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

BOWLS_WIDTH = 0.15
ROVER_EPSILON = 17.0
ROVER_PARAM_BOUNDS = (-1.0 / 15.0, 1.0 / 3.0)


@dataclass(frozen=True)
class Benchmark:
    """Objective on the unit cube plus whatever ground truth is known."""

    name: str
    dim: int
    eval_unit: callable = field(repr=False)
    native_bounds: np.ndarray
    minimizers: np.ndarray          # (K, dim) in unit-cube coordinates; may be empty
    f_star: float | None
    epsilon: float | None
    epsilon_rule: str               # "tenth-of-min" or "fixed"
    eval_batch: callable | None = field(repr=False, default=None)

    def __call__(self, x: np.ndarray) -> float:
        return float(self.eval_unit(np.asarray(x, dtype=float)))

    def to_native(self, u: np.ndarray) -> np.ndarray:
        lo, hi = self.native_bounds[:, 0], self.native_bounds[:, 1]
        return lo + np.asarray(u, dtype=float) * (hi - lo)


def _as_bounds(pairs) -> np.ndarray:
    b = np.asarray(pairs, dtype=float)
    if b.ndim != 2 or b.shape[1] != 2 or np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("native bounds must be (d, 2) with lo < hi")
    return b


# -- sum-of-bowls test function ---------------------------------------------


def _bowl_centers(d: int) -> np.ndarray:
    return np.array(list(itertools.product([0.25, 0.75], repeat=d)))


def bowls_eval(x: np.ndarray) -> float:
    """Negated sum of 2^d Gaussian density bumps of width 0.15 on [0,1]^d.

    The density is evaluated at the scaled displacement without a 1/width^d
    normalization, so the minimum depth stays (2 pi)^(-d/2)-scaled regardless
    of dimension.
    """
    x = np.asarray(x, dtype=float).ravel()
    return float(bowls_eval_batch(x[None, :])[0])


def bowls_eval_batch(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = X.shape[1]
    centers = _bowl_centers(d)
    z = (X[:, None, :] - centers[None, :, :]) / BOWLS_WIDTH
    dens = (2.0 * math.pi) ** (-d / 2.0) * np.exp(-0.5 * np.sum(z * z, axis=2))
    return -np.sum(dens, axis=1)


@lru_cache(maxsize=None)
def bowls_registry(d: int) -> Benchmark:
    """Registry for the 2^d-bowls function: refined minimizers and epsilon.

    The cross-bowl pull shifts each minimizer slightly off its grid center,
    so the stored locations come from a local descent started at each center.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    refined = []
    values = []
    for c in _bowl_centers(d):
        res = minimize(bowls_eval, c, method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
                       options={"ftol": 1e-18, "gtol": 1e-14, "maxiter": 500})
        refined.append(res.x)
        values.append(float(res.fun))
    minimizers = np.array(refined)
    f_star = min(values)
    return Benchmark(
        name=f"bowls{d}",
        dim=d,
        eval_unit=bowls_eval,
        native_bounds=_as_bounds([(0.0, 1.0)] * d),
        minimizers=minimizers,
        f_star=f_star,
        epsilon=abs(f_star) / 10.0,
        epsilon_rule="tenth-of-min",
        eval_batch=bowls_eval_batch,
    )


# -- six-hump-camel sum ------------------------------------------------------

CAMEL_PAIR_BOUNDS = [(-3.0, 3.0), (-2.0, 2.0)]


def camel_pair_eval(t: float, e: float) -> float:
    """The classic two-variable six-hump-camel surface."""
    return float((4.0 - 2.1 * t * t + t**4 / 3.0) * t * t + t * e + (-4.0 + 4.0 * e * e) * e * e)


def camel8_eval(x: np.ndarray) -> float:
    """2 + sum of four independent six-hump-camel terms on consecutive pairs."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape[0] != 8:
        raise ValueError("camel8_eval expects an 8-vector")
    return 2.0 + sum(camel_pair_eval(x[2 * l], x[2 * l + 1]) for l in range(4))


def camel8_eval_batch(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = X[:, 0::2]
    e = X[:, 1::2]
    terms = (4.0 - 2.1 * t * t + t**4 / 3.0) * t * t + t * e + (-4.0 + 4.0 * e * e) * e * e
    return 2.0 + terms.sum(axis=1)


@lru_cache(maxsize=None)
def camel_local_minima() -> tuple[np.ndarray, np.ndarray]:
    """Catalog of the two-variable camel's local minima via multistart descent.

    Returns (locations sorted by value, values).  Used both to build the
    8-d registry and as the oracle that excluded local minima fall outside
    the tolerance band.
    """
    found: list[np.ndarray] = []
    vals: list[float] = []
    obj = lambda v: camel_pair_eval(v[0], v[1])
    for t0 in np.linspace(-3.0, 3.0, 13):
        for e0 in np.linspace(-2.0, 2.0, 9):
            res = minimize(obj, [t0, e0], method="L-BFGS-B", bounds=CAMEL_PAIR_BOUNDS,
                           options={"ftol": 1e-16, "gtol": 1e-12})
            if not res.success and not np.isfinite(res.fun):
                continue
            x = res.x
            if any(np.linalg.norm(x - y) < 1e-3 for y in found):
                continue
            found.append(x)
            vals.append(float(res.fun))
    order = np.argsort(vals)
    return np.array(found)[order], np.array(vals)[order]


@lru_cache(maxsize=None)
def camel8_registry() -> Benchmark:
    """Registry for the 8-d camel sum: 16 sign-combination minimizers.

    The sum is separable per pair, so the joint minimizers are products of
    the two per-pair global minimizers.  Construction verifies that swapping
    any pair to a non-global camel minimum leaves the tolerance band.
    """
    locs, vals = camel_local_minima()
    m_star = vals[0]
    globals_2d = locs[np.abs(vals - m_star) < 1e-9]
    if len(globals_2d) != 2:
        raise RuntimeError("expected exactly 2 global camel minimizers")
    f_star = 2.0 + 4.0 * m_star
    epsilon = abs(f_star) / 10.0
    for v in vals:
        if abs(v - m_star) < 1e-9:
            continue
        if (v - m_star) <= epsilon:
            raise RuntimeError("a non-global camel minimum falls inside the tolerance band")

    bounds = _as_bounds(CAMEL_PAIR_BOUNDS * 4)
    lo, hi = bounds[:, 0], bounds[:, 1]

    def eval_unit(u: np.ndarray) -> float:
        return camel8_eval(lo + np.asarray(u, dtype=float).ravel() * (hi - lo))

    def eval_unit_batch(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return camel8_eval_batch(lo[None, :] + U * (hi - lo)[None, :])

    minimizers = []
    for combo in itertools.product(globals_2d, repeat=4):
        native = np.concatenate(combo)
        minimizers.append((native - lo) / (hi - lo))
    return Benchmark(
        name="camel8",
        dim=8,
        eval_unit=eval_unit,
        native_bounds=bounds,
        minimizers=np.array(minimizers),
        f_star=f_star,
        epsilon=epsilon,
        epsilon_rule="tenth-of-min",
        eval_batch=eval_unit_batch,
    )


# -- rover trajectory cost ---------------------------------------------------


@dataclass(frozen=True)
class RoverEnv:
    """Planar obstacle course for the turn-point path objective.

    Obstacles are closed axis-aligned rectangles (xmin, ymin, xmax, ymax).
    Paths may leave the unit square; the cost needs no clipping.
    """

    obstacles: tuple[tuple[float, float, float, float], ...]
    m_steps: int = 1000
    start: tuple[float, float] = (0.05, 0.05)
    target: tuple[float, float] = (0.75, 0.75)
    penalty_rate: float = 30.0
    base_rate: float = 0.05
    offset: float = 5.0
    dist_scale: float = 100.0

    def __post_init__(self) -> None:
        if self.m_steps < 2:
            raise ValueError("m_steps must be >= 2")
        for rect in self.obstacles:
            x0, y0, x1, y1 = rect
            if not (x0 < x1 and y0 < y1):
                raise ValueError(f"degenerate obstacle rectangle {rect}")
        for p in (self.start, self.target):
            if self._contains(np.array([p]))[0]:
                raise ValueError("start/target may not sit on an obstacle")

    def _contains(self, pts: np.ndarray) -> np.ndarray:
        hit = np.zeros(len(pts), dtype=bool)
        for x0, y0, x1, y1 in self.obstacles:
            hit |= (
                (pts[:, 0] >= x0) & (pts[:, 0] <= x1)
                & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
            )
        return hit


def _check_rover_params(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if p.shape[0] != 12:
        raise ValueError("rover paths take 12 parameters (six turn points)")
    lo, hi = ROVER_PARAM_BOUNDS
    if p.min() < lo - 1e-9 or p.max() > hi + 1e-9:
        raise ValueError("rover parameters outside the step bounds")
    return p


def path_from_params(p: np.ndarray, env: RoverEnv) -> np.ndarray:
    """Discretized path: cumulative turn steps from the start, then the
    waypoint polyline resampled at m_steps points uniform in arc length."""
    p = _check_rover_params(p)
    steps = p.reshape(6, 2)
    waypoints = np.vstack([env.start, env.start + np.cumsum(steps, axis=0)])
    seg = np.linalg.norm(np.diff(waypoints, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0.0:
        return np.tile(waypoints[0], (env.m_steps, 1))
    s = np.linspace(0.0, total, env.m_steps)
    x = np.interp(s, cum, waypoints[:, 0])
    y = np.interp(s, cum, waypoints[:, 1])
    return np.column_stack([x, y])


def rover_eval(p: np.ndarray, env: RoverEnv) -> float:
    """Scaled endpoint-to-target distance plus trapezoid obstacle penalty,
    minus the fixed offset."""
    path = path_from_params(p, env)
    rates = env.base_rate + env.penalty_rate * env._contains(path)
    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1)
    travel = 0.5 * np.sum((rates[:-1] + rates[1:]) * seg_len)
    endpoint = env.dist_scale * float(np.linalg.norm(path[-1] - np.asarray(env.target)))
    return endpoint + float(travel) - env.offset


def rover_env_from_config(
    obstacles=None,
    m_steps: int = 1000,
    n_obstacles: int | None = None,
    size_range: tuple[float, float] = (0.1, 0.25),
    seed: int = 0,
    max_tries: int = 200,
) -> RoverEnv:
    """Build an environment from an explicit obstacle list or a seeded generator.

    Generated rectangles are redrawn while they cover the start or target;
    an impossible specification fails after ``max_tries`` draws per rectangle.
    """
    if obstacles is not None:
        return RoverEnv(obstacles=tuple(tuple(map(float, r)) for r in obstacles),
                        m_steps=m_steps)
    if n_obstacles is None:
        raise ValueError("need either an obstacle list or n_obstacles")
    rng = np.random.default_rng(seed)
    lo_s, hi_s = size_range
    if not (0 < lo_s <= hi_s <= 1):
        raise ValueError("size_range must satisfy 0 < lo <= hi <= 1")
    fixed = np.array([(0.05, 0.05), (0.75, 0.75)])
    rects = []
    for _ in range(n_obstacles):
        for attempt in range(max_tries):
            w, h = rng.uniform(lo_s, hi_s, size=2)
            x0 = rng.uniform(0.0, 1.0 - w)
            y0 = rng.uniform(0.0, 1.0 - h)
            rect = (x0, y0, x0 + w, y0 + h)
            covers = (
                (fixed[:, 0] >= rect[0]) & (fixed[:, 0] <= rect[2])
                & (fixed[:, 1] >= rect[1]) & (fixed[:, 1] <= rect[3])
            )
            if not covers.any():
                rects.append(rect)
                break
        else:
            raise ValueError("could not place obstacles clear of start/target")
    return RoverEnv(obstacles=tuple(rects), m_steps=m_steps)


def save_rover_env(env: RoverEnv, path: str | Path) -> None:
    doc = {
        "schema_version": 1,
        "obstacles": [list(r) for r in env.obstacles],
        "m_steps": env.m_steps,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_rover_env(path: str | Path) -> RoverEnv:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != 1:
        raise ValueError("unsupported rover environment schema")
    return RoverEnv(obstacles=tuple(tuple(map(float, r)) for r in doc["obstacles"]),
                    m_steps=int(doc.get("m_steps", 1000)))


def rover_benchmark(env: RoverEnv) -> Benchmark:
    """12-d unit-cube wrapper around the rover cost; tolerance fixed at 17.

    The true tolerable paths depend on the obstacle layout, so the registry
    carries no minimizers and no global minimum.
    """
    lo, hi = ROVER_PARAM_BOUNDS
    bounds = _as_bounds([(lo, hi)] * 12)

    def eval_unit(u: np.ndarray) -> float:
        p = lo + np.asarray(u, dtype=float).ravel() * (hi - lo)
        return rover_eval(p, env)

    return Benchmark(
        name="rover",
        dim=12,
        eval_unit=eval_unit,
        native_bounds=bounds,
        minimizers=np.empty((0, 12)),
        f_star=None,
        epsilon=ROVER_EPSILON,
        epsilon_rule="fixed",
    )


def get_benchmark(benchmark_id: str, **params) -> Benchmark:
    """Look up a benchmark by id: 'bowls' (requires d), 'camel8', 'rover'."""
    if benchmark_id == "bowls":
        return bowls_registry(int(params.get("d", 2)))
    if benchmark_id == "camel8":
        return camel8_registry()
    if benchmark_id == "rover":
        if "env_file" in params:
            env = load_rover_env(params["env_file"])
        else:
            env = rover_env_from_config(
                obstacles=params.get("obstacles"),
                m_steps=int(params.get("m_steps", 1000)),
                n_obstacles=params.get("n_obstacles"),
                size_range=tuple(params.get("size_range", (0.1, 0.25))),
                seed=int(params.get("seed", 0)),
            )
        return rover_benchmark(env)
    raise ValueError(f"unknown benchmark id {benchmark_id!r}")
