"""Random splitting Markov chain engine.

One step of the chain draws a uniform permutation of the m fields of a
splitting and m independent exponential durations with mean h, then composes
the exact flows in that order. The intermediate states after each flow are
recorded on request.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .stats import Z95, mean_ci

OVERFLOW_LIMIT = 1e300


class NumericOverflowError(ArithmeticError):
    """A flow produced a non-finite state or one whose norm exceeds ``OVERFLOW_LIMIT``."""

    def __init__(self, field_id: int, label: str = "", trajectory: int | None = None):
        self.field_id = field_id
        self.label = label
        self.trajectory = trajectory
        where = f" in trajectory {trajectory}" if trajectory is not None else ""
        super().__init__(f"state overflow after field {field_id} ({label}){where}")


class VectorField:
    """A vector field with an exact flow.

    Subclasses implement ``__call__`` (evaluation) and ``flow``. ``growth(t)``
    bounds how much the flow can raise the Lyapunov function over time ``t``;
    it is zero for conservative fields.
    """

    label = "field"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def flow(self, x: np.ndarray, t: float) -> np.ndarray:
        raise NotImplementedError

    def growth(self, t: float) -> float:
        return 0.0


@dataclass(frozen=True)
class Splitting:
    """Ordered family of exactly integrable fields on R^dim."""

    fields: tuple
    dim: int

    @property
    def m(self) -> int:
        return len(self.fields)

    @property
    def labels(self) -> list[str]:
        return [f.label for f in self.fields]

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """Sum of all fields at ``x``."""
        total = np.zeros(self.dim)
        for f in self.fields:
            total += f(x)
        return total


@dataclass(frozen=True)
class CycleProgram:
    sigma: np.ndarray
    tau: np.ndarray


@dataclass
class StepTrace:
    intermediates: list
    program: CycleProgram

    @property
    def output(self) -> np.ndarray:
        return self.intermediates[-1]


@dataclass(frozen=True)
class RegionSpec:
    predicate: Callable[[np.ndarray], bool]
    label: str = "D"

    def __contains__(self, x) -> bool:
        return bool(self.predicate(x))


@dataclass(frozen=True)
class ConstantPredicate:
    """Picklable predicate that ignores its argument."""

    value: bool

    def __call__(self, x) -> bool:
        return self.value


WHOLE_SPACE = RegionSpec(ConstantPredicate(True), "whole space")
EMPTY_REGION = RegionSpec(ConstantPredicate(False), "empty")


def substream(seed: int, *key: int) -> np.random.Generator:
    """Philox generator for the substream ``key`` of the master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def worker_count() -> int:
    raw = os.environ.get("SPLITFLOW_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SPLITFLOW_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"SPLITFLOW_WORKERS must be a positive integer, got {raw!r}")
    return n


def _run_block(fn, seed, start, stop, args):
    return [fn(substream(seed, i), i, *args) for i in range(start, stop)]


def map_trials(fn: Callable, trials: int, seed: int, args: tuple = ()) -> list:
    """Evaluate ``fn(rng_i, i, *args)`` for i in range(trials), in trial order.

    Trial i always uses ``substream(seed, i)``, so the result does not depend
    on the worker count taken from ``SPLITFLOW_WORKERS``. ``fn`` and ``args``
    must be picklable when more than one worker is used.
    """
    workers = min(worker_count(), max(trials, 1))
    if workers == 1:
        return _run_block(fn, seed, 0, trials, args)
    bounds = np.linspace(0, trials, 4 * workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(_run_block, fn, seed, int(a), int(b), args)
            for a, b in zip(bounds[:-1], bounds[1:])
            if b > a
        ]
        out = []
        for fut in futures:
            out.extend(fut.result())
    return out


def sample_cycle(rng: np.random.Generator, m: int, h: float) -> CycleProgram:
    """Uniform permutation of ``m`` fields and i.i.d. exponential durations with mean ``h``."""
    if m < 1:
        raise ValueError("a cycle needs at least one field")
    if not h > 0:
        raise ValueError("mean duration h must be positive")
    sigma = rng.permutation(m)
    # 1 - U is uniform on (0, 1], so no duration is infinite
    tau = -h * np.log1p(-rng.random(m))
    tau[tau == 0.0] = np.nextafter(0.0, 1.0)
    return CycleProgram(sigma, tau)


def _overflowed(y: np.ndarray) -> bool:
    amax = float(np.max(np.abs(y)))
    if not math.isfinite(amax):
        return True
    if amax * math.sqrt(y.size) <= OVERFLOW_LIMIT:
        return False
    return amax * float(np.linalg.norm(y / amax)) > OVERFLOW_LIMIT


def apply_flow(s: Splitting, i: int, x: np.ndarray, t: float) -> np.ndarray:
    y = s.fields[i].flow(x, t)
    if _overflowed(y):
        raise NumericOverflowError(int(i), s.fields[i].label)
    return y


def compose_cycle(s: Splitting, x: np.ndarray, p: CycleProgram, keep: bool = True) -> StepTrace:
    """Apply the flows of ``p`` in order; ``keep=False`` stores only input and output."""
    x = np.asarray(x, dtype=float)
    states = [x]
    y = x
    for i, t in zip(p.sigma, p.tau):
        y = apply_flow(s, i, y, t)
        if keep:
            states.append(y)
    if not keep:
        states.append(y)
    return StepTrace(states, p)


def step(s: Splitting, x: np.ndarray, rng: np.random.Generator, h: float, keep: bool = True) -> StepTrace:
    return compose_cycle(s, x, sample_cycle(rng, s.m, h), keep)


@dataclass
class Trajectory:
    states: np.ndarray
    traces: list | None = None


def run_chain(
    s: Splitting,
    x0: np.ndarray,
    n: int,
    rng: np.random.Generator,
    h: float,
    keep_intermediates: bool = False,
) -> Trajectory:
    """Run ``n`` steps of the chain from ``x0``."""
    if n < 0:
        raise ValueError("number of steps must be non-negative")
    x = np.asarray(x0, dtype=float)
    states = np.empty((n + 1, x.size))
    states[0] = x
    traces = [] if keep_intermediates else None
    for k in range(n):
        tr = step(s, x, rng, h, keep=keep_intermediates)
        x = tr.output
        states[k + 1] = x
        if keep_intermediates:
            traces.append(tr)
    return Trajectory(states, traces)


def entrance_event(trace: StepTrace, D: RegionSpec, ell: int) -> bool:
    """True when the cycle first enters ``D`` at some state k < m and flow k+1 is ``ell``."""
    sigma = trace.program.sigma
    for k in range(len(sigma)):
        if trace.intermediates[k] in D:
            return int(sigma[k]) == ell
    return False


def first_entrance(s: Splitting, x: np.ndarray, p: CycleProgram, D: RegionSpec) -> int | None:
    """Index k of the first intermediate state in ``D``, computed without storing the trace."""
    y = np.asarray(x, dtype=float)
    for k in range(s.m):
        if y in D:
            return k
        y = apply_flow(s, p.sigma[k], y, p.tau[k])
    return None


def _entrance_trial(rng, i, s, x, D, ell, h, conditional):
    p = sample_cycle(rng, s.m, h)
    try:
        k = first_entrance(s, x, p, D)
    except NumericOverflowError as err:
        err.trajectory = i
        raise
    if k is None:
        return 0.0
    if not conditional:
        return float(p.sigma[k] == ell)
    # sigma[k] is uniform over the fields not used before the entrance
    if ell in p.sigma[:k]:
        return 0.0
    return 1.0 / (s.m - k)


@dataclass(frozen=True)
class EntranceEstimate:
    estimate: float
    halfwidth: float
    trials: int
    se: float


def estimate_entrance_probability(
    s: Splitting,
    x: np.ndarray,
    D: RegionSpec,
    ell: int,
    trials: int,
    seed: int,
    h: float,
    conditional: bool = False,
) -> EntranceEstimate:
    """Monte Carlo probability that one cycle from ``x`` enters ``D`` right before field ``ell``.

    With ``conditional=True`` each trial contributes the probability of the
    event given the path up to the first entrance, namely ``1 / (m - k)`` when
    ``ell`` has not fired yet. It has the same mean as the plain frequency and
    a much smaller variance when that probability is of order ``1 / m``.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    values = np.array(map_trials(_entrance_trial, trials, seed, (s, x, D, ell, h, conditional)))
    if conditional:
        est, half, se = mean_ci(values)
        if trials == 1:
            half = se = 0.0
        return EntranceEstimate(est, half, trials, se)
    est = float(values.mean())
    se = math.sqrt(est * (1.0 - est) / trials)
    return EntranceEstimate(est, Z95 * se, trials, se)
