"""Replicated run-length simulation, ARL estimation and calibration of c.

Replications are simulated in lock-step: at each time step one vectorised
update advances every still-running replication. The per-element arithmetic
is exactly that of :func:`cusum_oal.detectors.detector_step`, so the batch
engine and the scalar reference path agree bit for bit.

Replication ``r`` draws its uniforms from the counter stream ``(seed, r)``
(see :mod:`cusum_oal.streams`), so results do not depend on how replications
are split across worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import models, streams
from .detectors import DetectorConfig, FullMean, GFunction, run_to_alarm
from .models import ModelPair

CENSORED = -1
BIAS_THRESHOLD = 1e-3

ZBlock = Callable[["SimPlan", np.ndarray, int, int], np.ndarray]


class EstimationError(RuntimeError):
    pass


class CalibrationError(RuntimeError):
    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


@dataclass(frozen=True)
class SimPlan:
    """One Monte Carlo design.

    ``tau`` is the first post-change index; ``None`` means the change never
    happens (in-control run lengths). ``z_block`` optionally replaces the
    model-driven LLR source with a deterministic stub.
    """

    pair: ModelPair
    true_post: float
    detector: DetectorConfig
    tau: Optional[int] = 1
    reps: int = 10_000
    seed: int = 0
    cap: int = 30_000
    z_block: Optional[ZBlock] = field(default=None, compare=False)

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be >= 1")
        self.pair.model(self.true_post)

    def with_c(self, c: float) -> "SimPlan":
        return replace(self, detector=replace(self.detector, c=c))


def model_z_block(plan: SimPlan, keys: np.ndarray, start: int, count: int) -> np.ndarray:
    """LLR values for steps start+1 .. start+count of the given replications."""
    u = streams.uniforms_from_keys(keys, start, count)
    pre = plan.pair.pre
    post = plan.pair.model(plan.true_post)
    tau = plan.tau
    if tau is None or tau > start + count:
        x = models.transform_uniforms(pre, u)
    elif tau <= start + 1:
        x = models.transform_uniforms(post, u)
    else:
        split = tau - 1 - start
        x = np.concatenate([models.transform_uniforms(pre, u[:, :split]),
                            models.transform_uniforms(post, u[:, split:])], axis=1)
    return np.asarray(models.llr(plan.pair, x))


def _z_block(plan: SimPlan) -> ZBlock:
    return plan.z_block or model_z_block


def simulate_run_length(plan: SimPlan, rep: int) -> int:
    """Run length of replication ``rep`` through the scalar detector, or CENSORED."""
    keys = streams.rep_keys(plan.seed, [rep])
    block = _z_block(plan)

    def source():
        start = 0
        while True:
            yield from block(plan, keys, start, 256)[0]
            start += 256

    outcome = run_to_alarm(plan.detector, source(), plan.cap)
    return outcome.stop if outcome.alarmed else CENSORED


def simulate_batch(plan: SimPlan, reps: Sequence[int]) -> np.ndarray:
    """Run lengths (CENSORED for cap hits) of the given replication indices."""
    reps = np.asarray(reps, dtype=np.uint64)
    keys = streams.rep_keys(plan.seed, reps)
    det = plan.detector
    c, u, mu0 = det.c, det.g.u, det.g.mu0
    width = det.capacity
    block = _z_block(plan)

    out = np.full(reps.size, CENSORED, dtype=np.int64)
    idx = np.arange(reps.size)
    s = np.zeros(reps.size)
    total = np.zeros(reps.size)
    if width is not None:
        buf = np.zeros((reps.size, width))
        wsum = np.zeros(reps.size)

    t = 0
    k = 64
    while idx.size and t < plan.cap:
        k = min(k, plan.cap - t)
        z_mat = block(plan, keys[idx], t, k)
        stop = np.zeros(idx.size, dtype=np.int64)
        live = np.ones(idx.size, dtype=bool)
        for j in range(k):
            n = t + j + 1
            z = z_mat[:, j]
            s = np.maximum(s, 0.0) + z
            total = total + z
            if width is None:
                mean = total / n
            else:
                pos = (n - 1) % width
                wsum = wsum + z
                if n > width:
                    wsum = wsum - buf[:, pos]
                buf[:, pos] = z
                mean = wsum / min(n, width)
            limit = c * np.where(mean <= mu0, 1.0, 1.0 - u * (mean - mu0))
            hit = live & (s >= limit)
            if hit.any():
                stop[hit] = n
                live &= ~hit
        done = ~live
        out[idx[done]] = stop[done]
        idx, s, total = idx[live], s[live], total[live]
        if width is not None:
            buf, wsum = buf[live], wsum[live]
        t += k
        k = min(2 * k, 2048)
    return out


def _batch_worker(args):
    plan, lo, hi = args
    return simulate_batch(plan, np.arange(lo, hi))


def run_lengths(plan: SimPlan, workers: int = 1) -> np.ndarray:
    """Run lengths of replications 0..reps-1, split over ``workers`` processes."""
    workers = max(1, min(int(workers), plan.reps))
    if workers == 1 or plan.z_block is not None:
        return simulate_batch(plan, np.arange(plan.reps))
    edges = np.linspace(0, plan.reps, workers + 1).astype(int)
    jobs = [(plan, int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_batch_worker, jobs))
    return np.concatenate(parts)


@dataclass(frozen=True)
class ArlEstimate:
    mean: float
    sd: float
    se: float
    reps_used: int
    censored: int
    reps: int

    @property
    def censored_fraction(self) -> float:
        return self.censored / self.reps

    @property
    def censored_biased(self) -> bool:
        return self.censored_fraction > BIAS_THRESHOLD

    def to_dict(self) -> dict:
        out = asdict(self)
        out["censored_biased"] = self.censored_biased
        return out


def summarize(lengths: np.ndarray, tau: Optional[int] = 1) -> ArlEstimate:
    """Mean/SD/SE of (N - tau + 1)^+ over uncensored replications."""
    ok = lengths[lengths != CENSORED]
    if ok.size == 0:
        raise EstimationError("every replication was censored; raise cap")
    shift = 0 if tau is None else tau - 1
    vals = np.maximum(ok - shift, 0).astype(np.float64)
    mean = float(np.mean(vals))
    sd = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return ArlEstimate(mean, sd, sd / math.sqrt(vals.size), int(vals.size),
                       int(lengths.size - ok.size), int(lengths.size))


def estimate_arl(plan: SimPlan, workers: int = 1) -> ArlEstimate:
    return summarize(run_lengths(plan, workers), plan.tau)


# -- calibration --------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationResult:
    c: float
    achieved: ArlEstimate
    history: tuple
    seed: int
    target: float
    tol: float

    def to_dict(self) -> dict:
        return dict(c=self.c, achieved=self.achieved.to_dict(), seed=self.seed,
                    target=self.target, tol=self.tol,
                    history=[dict(c=c, mean=m, censored=k) for c, m, k in self.history])


def calibrate_c(template: SimPlan, target: float, tol: float = 0.02, budget: int = 40,
                c0: Optional[float] = None, factor: float = 1.25, c_max: float = 1e3,
                workers: int = 1) -> CalibrationResult:
    """Bisect on c until the in-control ARL estimate is within tol*target.

    Every trial c reuses the template's seed (common random numbers), so the
    estimate is a deterministic step function of c. Trial points with heavy
    censoring are steered by the lower bound that counts censored runs at the
    cap; such points are never accepted.
    """
    if not target > 1.0:
        raise ValueError("target ARL must exceed 1")
    plan = replace(template, tau=None, true_post=template.pair.pre_param)
    history = []

    def evaluate(c):
        if len(history) >= budget:
            raise CalibrationError(f"budget of {budget} evaluations exhausted", history)
        lengths = run_lengths(plan.with_c(c), workers)
        n_cens = int(np.count_nonzero(lengths == CENSORED))
        lower = (float(lengths[lengths != CENSORED].sum()) + n_cens * plan.cap) / lengths.size
        est = summarize(lengths, None) if n_cens < lengths.size else None
        history.append((c, est.mean if est else math.inf, n_cens))
        if est is not None and not est.censored_biased and abs(est.mean - target) <= tol * target:
            return 0, est
        if lower >= target or (est is not None and est.mean > target):
            return 1, est
        return -1, est

    c = c0 if c0 is not None else max(math.log(target), 0.5)
    side, est = evaluate(c)
    lo = hi = None
    while side:
        if side < 0:
            lo = c
        else:
            hi = c
        if lo is not None and hi is not None:
            c = 0.5 * (lo + hi)
        elif hi is None:
            c = c * factor
            if c > c_max:
                raise CalibrationError(f"ARL0 stayed below {target} for c <= {c_max}", history)
        else:
            c = c / factor
            if c < 1e-6:
                raise CalibrationError(f"ARL0 stayed above {target} for c >= 1e-6", history)
        side, est = evaluate(c)
    return CalibrationResult(c, est, tuple(history), plan.seed, target, tol)


# -- calibrated ARL tables ----------------------------------------------------

@dataclass
class TableColumn:
    target: float
    u: float
    c: Optional[float]
    calibration: Optional[CalibrationResult]
    cells: dict = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class TableResult:
    pair: ModelPair
    true_params: tuple
    columns: list

    def column(self, target: float, u: float) -> TableColumn:
        for col in self.columns:
            if col.target == target and col.u == u:
                return col
        raise KeyError((target, u))


def table_experiment(pair: ModelPair, targets: Sequence[float], us: Sequence[float],
                     true_params: Sequence[float], reps: int = 10_000, seed: int = 0,
                     cap_factor: float = 100.0, tol: float = 0.02, budget: int = 40,
                     workers: int = 1, window=None) -> TableResult:
    """Calibrate c per (target, u) column, then estimate ARL_1 (tau = 1) per true parameter.

    A column whose calibration fails is kept with ``c = None`` and the error
    message, so the rest of the grid is still produced.
    """
    mu0 = models.mean_llr(pair, pair.pre_param)
    columns = []
    for target in targets:
        for u in us:
            det = DetectorConfig(1.0, GFunction(u, mu0), window or FullMean())
            template = SimPlan(pair, pair.pre_param, det, tau=None, reps=reps, seed=seed,
                               cap=int(cap_factor * target))
            try:
                cal = calibrate_c(template, target, tol=tol, budget=budget, workers=workers)
            except CalibrationError as exc:
                columns.append(TableColumn(target, u, None, None, error=f"{exc} history={exc.history}"))
                continue
            col = TableColumn(target, u, cal.c, cal)
            for v in true_params:
                if v == pair.pre_param:
                    col.cells[v] = cal.achieved
                else:
                    plan = replace(template.with_c(cal.c), true_post=v, tau=1)
                    col.cells[v] = estimate_arl(plan, workers)
            columns.append(col)
    return TableResult(pair, tuple(true_params), columns)

