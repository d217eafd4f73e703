"""Sequential and batch optimization campaigns over a black-box objective.

The campaign owns all state between proposals: evaluated data, the tolerance
threshold, the seeded generator and the per-evaluation trace.  ``run_bo`` and
``run_batch_bo`` drive a campaign against an in-process objective; the
ask/tell surface externalizes the same loop for objectives that run
elsewhere (each ask refits the surrogate and maximizes the configured
acquisition, each tell appends results).  Campaign state serializes to a
versioned JSON document and round-trips exactly, including the generator
position.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisitions import AcquisitionSpec, ToleranceState, make_objective
from .gp import Dataset, fit_map
from .optimize import OptimizerConfig, lhs, maximize, maximize_batch

DUPLICATE_TOL = 1e-9
NUDGE = 1e-6

STATE_SCHEMA_VERSION = 1


def default_n_init(dim: int) -> int:
    """10 d initial points, reduced to 10 in two dimensions where 20 would
    already saturate the space."""
    return 10 if dim == 2 else 10 * dim


@dataclass(frozen=True)
class LoopConfig:
    dim: int
    n_total: int
    spec: AcquisitionSpec
    epsilon: float
    n_init: int | None = None
    seed: int = 0
    fit_restarts: int = 8
    optimizer: OptimizerConfig | None = None

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.resolved_n_init > self.n_total:
            raise ValueError("n_init exceeds the evaluation budget")

    @property
    def resolved_n_init(self) -> int:
        return self.n_init if self.n_init is not None else default_n_init(self.dim)

    def optimizer_for(self, opt_dim: int) -> OptimizerConfig:
        return self.optimizer if self.optimizer is not None else OptimizerConfig.for_dim(opt_dim)

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "n_total": self.n_total,
            "epsilon": self.epsilon,
            "n_init": self.n_init,
            "seed": self.seed,
            "fit_restarts": self.fit_restarts,
            "spec": {
                "kind": self.spec.kind,
                "lambda": self.spec.lam,
                "batch_size": self.spec.batch_size,
                "mc_samples": self.spec.mc_samples,
            },
        }
        if self.optimizer is not None:
            d["optimizer"] = {
                "n_restarts": self.optimizer.n_restarts,
                "max_iters": self.optimizer.max_iters,
                "grad_tol": self.optimizer.grad_tol,
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        spec = AcquisitionSpec(
            kind=d["spec"]["kind"],
            lam=d["spec"].get("lambda", 0.5),
            batch_size=d["spec"].get("batch_size", 1),
            mc_samples=d["spec"].get("mc_samples", 256),
        )
        opt = None
        if "optimizer" in d:
            opt = OptimizerConfig(**d["optimizer"])
        return cls(dim=d["dim"], n_total=d["n_total"], spec=spec, epsilon=d["epsilon"],
                   n_init=d.get("n_init"), seed=d.get("seed", 0),
                   fit_restarts=d.get("fit_restarts", 8), optimizer=opt)


@dataclass(frozen=True)
class TraceRecord:
    iteration: int          # 1-based evaluation index
    batch_index: int        # 0 for the initial design, then the proposal round
    point: np.ndarray
    value: float
    f_min: float            # best value up to and including this evaluation
    gamma_n: float          # f_min + epsilon
    acq_value: float        # acquisition at the argmax; nan for init/random
    wall_ms: float          # proposal time for this round; not reproducible


@dataclass
class Trace:
    records: list[TraceRecord]
    epsilon: float
    error: str | None = None

    @property
    def points(self) -> np.ndarray:
        return np.array([r.point for r in self.records])

    @property
    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    @property
    def f_min(self) -> float:
        return self.records[-1].f_min

    def __len__(self) -> int:
        return len(self.records)


def tolerable(value: float, epsilon: float, f_lower: float | None = None,
              f_star: float | None = None) -> bool:
    """Whether a value sits within epsilon of the reference optimum.

    Exactly one of ``f_lower`` (an elicited lower bound on the minimum) or
    ``f_star`` (the known minimum) must be supplied; the comparison is
    inclusive.
    """
    if (f_lower is None) == (f_star is None):
        raise ValueError("supply exactly one of f_lower or f_star")
    ref = f_lower if f_lower is not None else f_star
    return value <= ref + epsilon


def _nudge_away(x: np.ndarray, existing: np.ndarray) -> np.ndarray:
    """Deterministically perturb a duplicate proposal back into the box."""
    out = x.copy()
    for k in range(out.size):
        out[k] = out[k] + NUDGE if out[k] + NUDGE <= 1.0 else out[k] - NUDGE
    if existing.size and np.min(np.max(np.abs(existing - out), axis=1)) < DUPLICATE_TOL:
        out = np.clip(out + 3 * NUDGE, 0.0, 1.0)
    return out


class Campaign:
    """Ask/tell driver for one optimization run.

    State is exclusively owned between ask and tell; a fitted model is built
    fresh inside every ask, matching the refit-before-every-proposal
    schedule.
    """

    def __init__(self, cfg: LoopConfig, rng: np.random.Generator | None = None,
                 initial_design: np.ndarray | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self._points: list[np.ndarray] = []
        self._values: list[float] = []
        self.records: list[TraceRecord] = []
        self.n_gp_fits = 0
        self._round = 0
        self._pending: np.ndarray | None = None
        self._last_acq = math.nan
        self._last_wall_ms = 0.0
        if initial_design is not None:
            design = np.atleast_2d(np.asarray(initial_design, dtype=float))
            if design.shape != (cfg.resolved_n_init, cfg.dim):
                raise ValueError("initial design has the wrong shape")
            self._initial_design = design
        else:
            self._initial_design = None

    # -- bookkeeping ----------------------------------------------------

    @property
    def n_evaluated(self) -> int:
        return len(self._values)

    @property
    def done(self) -> bool:
        return self.n_evaluated >= self.cfg.n_total

    @property
    def f_min(self) -> float:
        return min(self._values)

    @property
    def dataset(self) -> Dataset:
        return Dataset(np.array(self._points), np.array(self._values))

    def trace(self, error: str | None = None) -> Trace:
        return Trace(records=list(self.records), epsilon=self.cfg.epsilon, error=error)

    # -- the ask/tell protocol -------------------------------------------

    def ask(self) -> np.ndarray:
        """Propose the next evaluation points, shape (q, dim)."""
        if self._pending is not None:
            raise RuntimeError("previous proposal has not been told back")
        if self.done:
            raise RuntimeError("evaluation budget exhausted")
        t0 = time.perf_counter()
        if self.n_evaluated < self.cfg.resolved_n_init:
            if self._initial_design is not None:
                proposals = self._initial_design[self.n_evaluated:].copy()
            elif self.n_evaluated == 0:
                proposals = lhs(self.cfg.resolved_n_init, self.cfg.dim, self.rng)
            else:
                remaining_init = self.cfg.resolved_n_init - self.n_evaluated
                proposals = lhs(remaining_init, self.cfg.dim, self.rng)
            self._last_acq = math.nan
        else:
            remaining = self.cfg.n_total - self.n_evaluated
            q = min(self.cfg.spec.batch_size, remaining)
            if self.cfg.spec.kind == "Random":
                proposals = self.rng.uniform(size=(q, self.cfg.dim))
                self._last_acq = math.nan
            else:
                proposals = self._propose(q)
        proposals = np.clip(proposals, 0.0, 1.0)
        existing = np.array(self._points) if self._points else np.empty((0, self.cfg.dim))
        for i in range(len(proposals)):
            others = np.vstack([existing, proposals[:i]]) if i else existing
            if others.size and np.min(np.max(np.abs(others - proposals[i]), axis=1)) < DUPLICATE_TOL:
                proposals[i] = _nudge_away(proposals[i], others)
        self._last_wall_ms = (time.perf_counter() - t0) * 1e3
        self._pending = proposals.copy()
        return proposals

    def _propose(self, q: int) -> np.ndarray:
        model = fit_map(self.dataset, n_restarts=self.cfg.fit_restarts, rng=self.rng)
        self.n_gp_fits += 1
        tol = ToleranceState(f_min=self.f_min, epsilon=self.cfg.epsilon)
        spec = self.cfg.spec
        if spec.is_batch:
            spec = replace(spec, batch_size=q)
            fun = make_objective(spec, model, tol, rng=self.rng)
            res = maximize_batch(fun, q, self.cfg.dim,
                                 cfg=self.cfg.optimizer_for(q * self.cfg.dim), rng=self.rng)
            self._last_acq = res.value
            return np.atleast_2d(res.argmax)
        fun = make_objective(spec, model, tol, rng=self.rng)
        res = maximize(fun, self.cfg.dim, cfg=self.cfg.optimizer_for(self.cfg.dim),
                       rng=self.rng)
        self._last_acq = res.value
        return res.argmax[None, :]

    def tell(self, points: np.ndarray, values: np.ndarray) -> None:
        """Record evaluated results; rejects non-finite values and duplicates
        without mutating state."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        values = np.asarray(values, dtype=float).ravel()
        if points.shape != (len(values), self.cfg.dim):
            raise ValueError("points/values shape mismatch")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(values)):
            raise ValueError("non-finite results rejected")
        existing = np.array(self._points) if self._points else np.empty((0, self.cfg.dim))
        stack = np.vstack([existing, points])
        for i in range(len(existing), len(stack)):
            d = np.max(np.abs(stack[:i] - stack[i]), axis=1, initial=np.inf)
            if d.size and d.min() < DUPLICATE_TOL:
                raise ValueError("duplicate point rejected")
        if self.n_evaluated >= self.cfg.resolved_n_init:
            self._round += 1
            batch_index = self._round
        else:
            batch_index = 0
        running = min(self._values) if self._values else math.inf
        for p, v in zip(points, values):
            self._points.append(p.copy())
            self._values.append(float(v))
            running = min(running, float(v))
            self.records.append(TraceRecord(
                iteration=len(self._values),
                batch_index=batch_index,
                point=p.copy(),
                value=float(v),
                f_min=running,
                gamma_n=running + self.cfg.epsilon,
                acq_value=self._last_acq,
                wall_ms=self._last_wall_ms,
            ))
        self._pending = None
        self._last_acq = math.nan
        self._last_wall_ms = 0.0

    # -- persistence ------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "schema_version": STATE_SCHEMA_VERSION,
            "config": self.cfg.to_dict(),
            "points": [list(p) for p in self._points],
            "values": list(self._values),
            "rng_state": self.rng.bit_generator.state,
            "n_gp_fits": self.n_gp_fits,
            "round": self._round,
            "pending": None if self._pending is None else self._pending.tolist(),
            "last_acq": None if math.isnan(self._last_acq) else self._last_acq,
            "last_wall_ms": self._last_wall_ms,
            "initial_design": (None if self._initial_design is None
                               else self._initial_design.tolist()),
            "records": [
                {
                    "iteration": r.iteration,
                    "batch_index": r.batch_index,
                    "point": list(r.point),
                    "value": r.value,
                    "f_min": r.f_min,
                    "gamma_n": r.gamma_n,
                    "acq_value": None if math.isnan(r.acq_value) else r.acq_value,
                    "wall_ms": r.wall_ms,
                }
                for r in self.records
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Campaign":
        doc = json.loads(text)
        if doc.get("schema_version") != STATE_SCHEMA_VERSION:
            raise ValueError("unsupported campaign state schema")
        cfg = LoopConfig.from_dict(doc["config"])
        state = cls(cfg, rng=np.random.default_rng(0),
                    initial_design=(np.array(doc["initial_design"])
                                    if doc["initial_design"] is not None else None))
        state.rng.bit_generator.state = doc["rng_state"]
        state._points = [np.array(p, dtype=float) for p in doc["points"]]
        state._values = [float(v) for v in doc["values"]]
        state.n_gp_fits = int(doc["n_gp_fits"])
        state._round = int(doc["round"])
        state._pending = (np.array(doc["pending"], dtype=float)
                          if doc["pending"] is not None else None)
        state._last_acq = doc["last_acq"] if doc["last_acq"] is not None else math.nan
        state._last_wall_ms = float(doc.get("last_wall_ms", 0.0))
        state.records = [
            TraceRecord(
                iteration=int(r["iteration"]),
                batch_index=int(r["batch_index"]),
                point=np.array(r["point"], dtype=float),
                value=float(r["value"]),
                f_min=float(r["f_min"]),
                gamma_n=float(r["gamma_n"]),
                acq_value=(float(r["acq_value"]) if r["acq_value"] is not None
                           else math.nan),
                wall_ms=float(r["wall_ms"]),
            )
            for r in doc["records"]
        ]
        return state


def save_state(state: Campaign, path: str | Path) -> None:
    Path(path).write_text(state.to_json())


def load_state(path: str | Path) -> Campaign:
    return Campaign.from_json(Path(path).read_text())


def _drive(state: Campaign, objective) -> Trace:
    while not state.done:
        points = state.ask()
        values = np.array([objective(p) for p in points], dtype=float)
        if not np.all(np.isfinite(values)):
            bad = points[~np.isfinite(values)][0]
            return state.trace(error=f"objective returned a non-finite value at {bad.tolist()}")
        state.tell(points, values)
    return state.trace()


def run_bo(objective, cfg: LoopConfig, rng: np.random.Generator | None = None,
           initial_design: np.ndarray | None = None) -> Trace:
    """Run a sequential campaign: initial design, then one proposal per refit."""
    if cfg.spec.batch_size != 1:
        raise ValueError("run_bo is sequential; use run_batch_bo for q > 1")
    return _drive(Campaign(cfg, rng=rng, initial_design=initial_design), objective)


def run_batch_bo(objective, cfg: LoopConfig, rng: np.random.Generator | None = None,
                 initial_design: np.ndarray | None = None) -> Trace:
    """Run a batch campaign: q points per refit, final batch truncated to fit
    the budget.  With q = 1 this reduces to ``run_bo``."""
    return _drive(Campaign(cfg, rng=rng, initial_design=initial_design), objective)
