"""Evaluation metrics for diverse optimization runs.

Coverage asks how many of the K tolerable subregions contain at least one
evaluated point.  Subregion membership uses connected-component labels of the
tolerable sublevel set on a fine grid in d <= 2 and nearest-minimizer
assignment in higher dimensions.  The space-filling metrics measure how far
the unit cube (or a coordinate projection of it) can get from the basket of
tolerable solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import label as cc_label
from scipy.stats import qmc

from .benchmarks import Benchmark

FLOOD_FILL_RESOLUTION = 512
SF_CANDIDATES = 2**14


@dataclass
class GroundTruth:
    """Known minimizers and tolerance threshold for a benchmark objective."""

    minimizers: np.ndarray
    f_star: float
    epsilon: float
    objective: callable = field(repr=False)
    grid_resolution: int = FLOOD_FILL_RESOLUTION
    batch_objective: callable | None = field(repr=False, default=None)
    _grid_labels: np.ndarray | None = field(repr=False, default=None)
    _label_to_index: dict | None = field(repr=False, default=None)

    def __post_init__(self) -> None:
        self.minimizers = np.atleast_2d(np.asarray(self.minimizers, dtype=float))
        if self.epsilon <= 0 or len(self.minimizers) < 1:
            raise ValueError("ground truth needs epsilon > 0 and at least one minimizer")

    @classmethod
    def from_benchmark(cls, bench: Benchmark, grid_resolution: int = FLOOD_FILL_RESOLUTION,
                       epsilon: float | None = None) -> "GroundTruth":
        if bench.f_star is None or len(bench.minimizers) == 0:
            raise ValueError(f"benchmark {bench.name!r} has no usable ground truth")
        return cls(
            minimizers=bench.minimizers,
            f_star=bench.f_star,
            epsilon=epsilon if epsilon is not None else bench.epsilon,
            objective=bench.eval_unit,
            grid_resolution=grid_resolution,
            batch_objective=bench.eval_batch,
        )

    @property
    def k(self) -> int:
        return len(self.minimizers)

    @property
    def dim(self) -> int:
        return self.minimizers.shape[1]

    @property
    def threshold(self) -> float:
        return self.f_star + self.epsilon

    @property
    def uses_flood_fill(self) -> bool:
        return self.dim <= 2

    def _build_labels(self) -> None:
        r = self.grid_resolution
        axes = [(np.arange(r) + 0.5) / r] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.column_stack([m.ravel() for m in mesh])
        if self.batch_objective is not None:
            vals = np.asarray(self.batch_objective(pts), dtype=float)
        else:
            vals = np.array([self.objective(p) for p in pts])
        mask = (vals <= self.threshold).reshape([r] * self.dim)
        labels, _ = cc_label(mask)
        mapping: dict[int, int] = {}
        for k, m in enumerate(self.minimizers):
            cell = tuple(np.clip((m * r).astype(int), 0, r - 1))
            lbl = int(labels[cell])
            if lbl > 0:
                mapping[lbl] = k
        self._grid_labels = labels
        self._label_to_index = mapping

    def _nearest(self, x: np.ndarray) -> int:
        return int(np.argmin(np.linalg.norm(self.minimizers - x, axis=1)))

    def assign(self, x: np.ndarray, value: float) -> int | None:
        """Subregion index of a point, or None when it is not tolerable."""
        x = np.asarray(x, dtype=float).ravel()
        if value > self.threshold:
            return None
        if not self.uses_flood_fill:
            return self._nearest(x)
        if self._grid_labels is None:
            self._build_labels()
        cell = tuple(np.clip((x * self.grid_resolution).astype(int), 0,
                             self.grid_resolution - 1))
        lbl = int(self._grid_labels[cell])
        if lbl in self._label_to_index:
            return self._label_to_index[lbl]
        # boundary cell whose center sits above the threshold, or a stray
        # component without a registered minimizer
        return self._nearest(x)


def subregion_of(x: np.ndarray, gt: GroundTruth, f=None, value: float | None = None) -> int | None:
    """Index of the tolerable subregion containing x, or None."""
    if value is None:
        if f is None:
            raise ValueError("need the objective or a precomputed value")
        value = float(f(x))
    return gt.assign(x, value)


def coverage_rate(points: np.ndarray, gt: GroundTruth, f=None,
                  values: np.ndarray | None = None) -> float:
    """Fraction of the K subregions containing at least one evaluated point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if values is None:
        if f is None:
            raise ValueError("need the objective or precomputed values")
        values = np.array([f(p) for p in points])
    found = {gt.assign(p, float(v)) for p, v in zip(points, values)}
    found.discard(None)
    return len(found) / gt.k


def coverage_series(points: np.ndarray, values: np.ndarray, gt: GroundTruth) -> np.ndarray:
    """Coverage rate after each prefix of an evaluation sequence."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float).ravel()
    found: set[int] = set()
    out = np.empty(len(values))
    for i, (p, v) in enumerate(zip(points, values)):
        k = gt.assign(p, float(v))
        if k is not None:
            found.add(k)
        out[i] = len(found) / gt.k
    return out


def optimization_gap(values: np.ndarray, f_star: float) -> np.ndarray:
    """Running best-so-far objective minus the global minimum."""
    values = np.asarray(values, dtype=float).ravel()
    return np.minimum.accumulate(values) - f_star


def _candidate_set(dim: int, n_candidates: int) -> np.ndarray:
    sampler = qmc.Sobol(d=dim, scramble=False)
    m = int(np.log2(n_candidates))
    if 2**m == n_candidates:
        return sampler.random_base2(m)
    return sampler.random(n_candidates)


def sf_metrics(
    basket: np.ndarray,
    projection: list[int] | None = None,
    n_candidates: int = SF_CANDIDATES,
) -> tuple[float, float]:
    """Max and mean distance from a low-discrepancy cube sample to the basket.

    Smaller is better: both shrink as the basket covers the (projected) cube
    more evenly.  The candidate set is deterministic given ``n_candidates``.
    """
    basket = np.atleast_2d(np.asarray(basket, dtype=float))
    if basket.size == 0:
        raise ValueError("space-filling metrics need a nonempty basket")
    if projection is not None:
        basket = basket[:, list(projection)]
    cand = _candidate_set(basket.shape[1], n_candidates)
    # min distance to the basket, chunked over candidates
    best = np.full(len(cand), np.inf)
    for start in range(0, len(cand), 4096):
        block = cand[start:start + 4096]
        d2 = (
            np.sum(block * block, axis=1)[:, None]
            + np.sum(basket * basket, axis=1)[None, :]
            - 2.0 * block @ basket.T
        )
        best[start:start + len(block)] = np.sqrt(np.maximum(d2, 0.0)).min(axis=1)
    return float(best.max()), float(best.mean())
