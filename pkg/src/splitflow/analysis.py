"""Monte Carlo diagnostics for random splitting chains.

Covers Lyapunov drift estimates and their linear fit, return-time rate
functions and tail bounds, time averages along a trajectory, the triad
thermalization probability as the effective scale delta = 1/H shrinks, and
the scaling of dissipative-region entrance probabilities for Galerkin Euler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from . import euler
from .core import (
    NumericOverflowError,
    Splitting,
    first_entrance,
    map_trials,
    sample_cycle,
    step,
    substream,
)
from .lorenz96 import lyapunov_H
from .stats import Z95, mean_ci, proportion_ci

E2 = math.e ** 2


class AssumptionError(ValueError):
    """Initial data or system violates a precondition of an experiment."""


# ---------------------------------------------------------------- rate functions


@dataclass(frozen=True)
class RateFunctions:
    """G with K(t) = int_1^t ds / G(s), its inverse, and r = G o K^{-1}."""

    G: Callable
    K: Callable
    K_inverse: Callable
    r: Callable
    tag: str


def rate_functions_power(alpha: float, a: float) -> RateFunctions:
    """Rate functions of G(t) = alpha t^a."""
    if not alpha > 0 or not 0 < a <= 1:
        raise ValueError("need alpha > 0 and a in (0, 1]")
    if a == 1:
        return RateFunctions(
            G=lambda t: alpha * np.asarray(t, dtype=float),
            K=lambda t: np.log(t) / alpha,
            K_inverse=lambda t: np.exp(alpha * np.asarray(t, dtype=float)),
            r=lambda t: alpha * np.exp(alpha * np.asarray(t, dtype=float)),
            tag=f"power(alpha={alpha!r}, a=1)",
        )
    b = 1.0 - a
    return RateFunctions(
        G=lambda t: alpha * np.asarray(t, dtype=float) ** a,
        K=lambda t: (np.asarray(t, dtype=float) ** b - 1.0) / (alpha * b),
        K_inverse=lambda t: (alpha * b * np.asarray(t, dtype=float) + 1.0) ** (1.0 / b),
        r=lambda t: alpha * (alpha * b * np.asarray(t, dtype=float) + 1.0) ** (a / b),
        tag=f"power(alpha={alpha!r}, a={a!r})",
    )


def rate_functions_stretch(alpha: float) -> RateFunctions:
    """Rate functions of G(t) = alpha (t + e^2) / log(t + e^2)."""
    if not alpha > 0:
        raise ValueError("need alpha > 0")
    base = math.log1p(E2) ** 2

    def root(t):
        return np.sqrt(2.0 * alpha * np.asarray(t, dtype=float) + base)

    return RateFunctions(
        G=lambda t: alpha * (np.asarray(t, dtype=float) + E2) / np.log(np.asarray(t, dtype=float) + E2),
        K=lambda t: (np.log(np.asarray(t, dtype=float) + E2) ** 2 - base) / (2.0 * alpha),
        K_inverse=lambda t: np.exp(root(t)) - E2,
        r=lambda t: alpha * np.exp(root(t)) / root(t),
        tag=f"stretch(alpha={alpha!r})",
    )


def rate_functions_numeric(G: Callable, grid) -> RateFunctions:
    """Rate functions of an arbitrary concave nondecreasing positive G.

    K is integrated in the variable u = log s, where the integrand
    e^u / G(e^u) stays tame for large s; K^{-1} is found by bracketed
    root-finding in the same variable. ``grid`` (points >= 1) is used to
    spot-check positivity, monotonicity and concavity.
    """
    t = np.sort(np.asarray(grid, dtype=float))
    if t.size < 3 or t[0] < 1.0:
        raise ValueError("grid needs at least 3 points, all >= 1")
    g = np.array([float(G(s)) for s in t])
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("G must be positive on the grid")
    slopes = np.diff(g) / np.diff(t)
    scale = np.abs(slopes).max() + 1e-300
    if np.any(slopes < -1e-12 * scale):
        raise ValueError("G is decreasing somewhere on the grid")
    if np.any(np.diff(slopes) > 1e-9 * scale):
        raise ValueError("G fails the concavity check on the grid")

    def K_scalar(s: float) -> float:
        if s < 1.0:
            raise ValueError("K is defined on [1, inf)")
        val, _ = integrate.quad(lambda u: math.exp(u) / float(G(math.exp(u))), 0.0, math.log(s),
                                epsabs=0.0, epsrel=1e-12, limit=200)
        return val

    def Kinv_scalar(y: float) -> float:
        if y < 0:
            raise ValueError("K^{-1} is defined on [0, inf)")
        if y == 0:
            return 1.0
        hi = 1.0
        while K_scalar(math.exp(hi)) < y:
            hi *= 2.0
            if hi > 700.0:
                raise OverflowError("K^{-1} exceeds double range")
        u = optimize.brentq(lambda u: K_scalar(math.exp(u)) - y, 0.0, hi, xtol=1e-15, rtol=1e-15)
        return math.exp(u)

    K = np.vectorize(K_scalar, otypes=[float])
    Kinv = np.vectorize(Kinv_scalar, otypes=[float])
    return RateFunctions(
        G=G,
        K=K,
        K_inverse=Kinv,
        r=np.vectorize(lambda s: float(G(Kinv_scalar(s))), otypes=[float]),
        tag="numeric",
    )


# ----------------------------------------------------------------- drift


@dataclass(frozen=True)
class ChainModel:
    """A splitting with mean duration h, Lyapunov function and transition block.

    One transition of the chain studied by the return-time tools is ``block``
    consecutive steps, so a drift fit made with ``n_steps = block`` applies
    to it directly.
    """

    splitting: Splitting
    h: float
    lyapunov: Callable = lyapunov_H
    block: int = 1

    def advance(self, x, rng):
        for _ in range(self.block):
            x = step(self.splitting, x, rng, self.h, keep=False).output
        return x


@dataclass(frozen=True)
class DriftReport:
    H_x: float
    n_steps: int
    mean: float
    halfwidth: float
    se: float
    trials: int
    overflows: int


def _drift_trial(rng, i, model: ChainModel, x, n):
    y = np.asarray(x, dtype=float)
    try:
        for _ in range(n):
            y = step(model.splitting, y, rng, model.h, keep=False).output
    except NumericOverflowError:
        return math.nan
    return model.lyapunov(y)


def estimate_drift(model: ChainModel, x, n_steps: int, trials: int, seed: int) -> DriftReport:
    """Monte Carlo mean of H(X_n) from ``x``; overflowing trials are dropped and counted."""
    if trials < 100:
        raise ValueError("drift estimates need at least 100 trials")
    vals = np.array(map_trials(_drift_trial, trials, seed, (model, x, n_steps)))
    ok = vals[np.isfinite(vals)]
    mean, half, se = mean_ci(ok)
    return DriftReport(model.lyapunov(np.asarray(x, dtype=float)), n_steps, mean, half, se,
                       int(ok.size), int(vals.size - ok.size))


@dataclass(frozen=True)
class DriftFit:
    """E[H(X_n)] <= alpha H(x) + f fitted over a grid of starting points."""

    alpha: float
    f: float
    alpha_se: float
    max_violation: float

    @property
    def alpha_upper(self) -> float:
        """One-sided 95% upper confidence bound on alpha."""
        return self.alpha + 1.6448536269514722 * self.alpha_se


def fit_drift(reports: list[DriftReport]) -> DriftFit:
    """Least-squares line through (H(x), mean H(X_n)) with intercept f >= 0.

    The intercept is then raised by the largest remaining violation so the
    inequality holds at every grid point. The standard error of alpha comes
    from the linear dependence of the estimator on the per-point means.
    """
    H = np.array([r.H_x for r in reports])
    m = np.array([r.mean for r in reports])
    se = np.array([r.se for r in reports])
    if H.size >= 2:
        hc = H - H.mean()
        w = hc / (hc @ hc)
        alpha = float(w @ m)
        f = float(m.mean() - alpha * H.mean())
    else:
        f = -1.0
    if f < 0:
        w = H / (H @ H)
        alpha = float(w @ m)
        f = 0.0
    violation = float(np.max(m - (alpha * H + f)))
    f += max(violation, 0.0)
    return DriftFit(alpha, f, float(math.sqrt(np.sum((w * se) ** 2))), violation)


@dataclass(frozen=True)
class SublevelFit:
    """Exponential rate and sublevel radius implied by a drift inequality.

    With E[H(X_1)] <= alpha H + f, the choice G(t) = (1 - alpha) t / 2 gives
    P H - H <= -G(H) whenever H > R = 2 f / (1 - alpha).
    """

    alpha: float
    f: float
    R: float
    rates: RateFunctions


def fitted_sublevel(reports: list[DriftReport]) -> SublevelFit:
    """Drift constants with the smallest sublevel radius consistent with the data.

    Each point enters through the upper end of its 95% CI. For fixed alpha
    the least admissible f is max(0, max_i(m_i - alpha H_i)); R is monotone
    in alpha between the kinks of that envelope, so only kinks are tried.
    """
    H = np.array([r.H_x for r in reports])
    m = np.array([r.mean + r.halfwidth for r in reports])
    candidates = set((m / H).tolist())
    for a in range(H.size):
        for b in range(a + 1, H.size):
            if H[a] != H[b]:
                candidates.add(float((m[a] - m[b]) / (H[a] - H[b])))
    best = None
    for alpha in sorted(candidates):
        if not 0.0 <= alpha < 1.0:
            continue
        f = max(0.0, float(np.max(m - alpha * H)))
        R = 2.0 * f / (1.0 - alpha)
        if best is None or R < best[2]:
            best = (alpha, f, R)
    if best is None:
        raise AssumptionError("no contraction factor below 1 fits the drift data")
    alpha, f, R = best
    return SublevelFit(alpha, f, max(R, 1.0), rate_functions_power((1.0 - alpha) / 2.0, 1.0))


# ----------------------------------------------------------------- return times


@dataclass(frozen=True)
class ReturnTimeSample:
    """Samples of T_R; censored samples hold ``max_steps`` and mean T_R > max_steps."""

    times: np.ndarray
    censored: np.ndarray
    max_steps: int
    H_x: float
    R: float

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean())

    def survival(self, n) -> np.ndarray:
        """Empirical P(T_R >= n + 1); censored samples count as surviving."""
        n = np.atleast_1d(np.asarray(n))
        t = np.where(self.censored, np.iinfo(np.int64).max, self.times)
        return (t[None, :] >= n[:, None] + 1).mean(axis=1)

    def quantile(self, q: float) -> float:
        t = np.where(self.censored, self.max_steps + 1, self.times)
        return float(np.quantile(t, q))

    def weighted_sums(self, rates: RateFunctions) -> np.ndarray:
        """sum_{k < T_R} r(k) for every uncensored sample."""
        t = self.times[~self.censored]
        if t.size == 0:
            return np.array([])
        cum = np.concatenate([[0.0], np.cumsum(rates.r(np.arange(t.max())))])
        return cum[t]


def _return_trial(rng, i, model: ChainModel, x, R, max_steps):
    y = np.asarray(x, dtype=float)
    for n in range(max_steps + 1):
        if model.lyapunov(y) <= R:
            return n
        if n == max_steps:
            break
        try:
            y = model.advance(y, rng)
        except NumericOverflowError as err:
            err.trajectory = i
            raise
    return -1


def return_time_samples(model: ChainModel, x, R: float, max_steps: int, trials: int, seed: int) -> ReturnTimeSample:
    """i.i.d. samples of T_R = min{n >= 0 : H(X_n) <= R}, censored at ``max_steps``.

    n counts transitions of ``model``, each ``model.block`` steps long.
    """
    raw = np.array(map_trials(_return_trial, trials, seed, (model, x, R, max_steps)), dtype=np.int64)
    censored = raw < 0
    times = np.where(censored, max_steps, raw)
    return ReturnTimeSample(times, censored, max_steps, model.lyapunov(np.asarray(x, dtype=float)), R)


def tail_bound(H_x: float, rates: RateFunctions, n) -> np.ndarray:
    """(H(x) + 1) / K^{-1}(n)."""
    return (H_x + 1.0) / rates.K_inverse(np.asarray(n, dtype=float))


# ----------------------------------------------------------------- time averages


@dataclass(frozen=True)
class EmpiricalMeasure:
    averages: dict
    first_half: dict
    second_half: dict
    tightness_fraction: float | None = None
    tightness_bound: float | None = None


def empirical_measure(
    model: ChainModel,
    x,
    n: int,
    seed: int,
    observables: dict,
    tightness: tuple | None = None,
) -> EmpiricalMeasure:
    """Time averages over X_0..X_{n-1} of a single trajectory, streamed.

    X_k is the state after k transitions of ``model``.

    ``tightness = (G, f, R)`` additionally reports the fraction of time with
    G(H(X_k)) > R next to the Markov-inequality bound (H(x) + f) / R.
    """
    if n < 1:
        raise ValueError("need at least one step")
    rng = substream(seed, 0)
    names = list(observables)
    sums = np.zeros((2, len(names)))
    half = n // 2
    above = 0
    y = np.asarray(x, dtype=float)
    for k in range(n):
        vals = [observables[name](y) for name in names]
        sums[0 if k < half else 1] += vals
        if tightness is not None and float(tightness[0](model.lyapunov(y))) > tightness[2]:
            above += 1
        if k < n - 1:
            y = model.advance(y, rng)
    total = sums.sum(axis=0) / n
    first = sums[0] / max(half, 1)
    second = sums[1] / (n - half)
    frac = bound = None
    if tightness is not None:
        G, f, R = tightness
        frac = above / n
        bound = (model.lyapunov(np.asarray(x, dtype=float)) + f) / R
    return EmpiricalMeasure(dict(zip(names, total)), dict(zip(names, first)), dict(zip(names, second)), frac, bound)


# ----------------------------------------------------------------- thermalization


def check_triad_assumption(key, state, delta: float, xi: float, zeta: float) -> str:
    """Return "A1" or "A2" if the rescaled triad state satisfies the separatrix margins.

    Raises ``AssumptionError`` naming the first margin that fails.
    """
    j, k, l = key[:3]
    uj, uk, ul = 1.0 / euler.norm2(j), 1.0 / euler.norm2(k), 1.0 / euler.norm2(l)
    if not uj > uk:
        raise AssumptionError("margin |k| > |j| fails")
    if not 0 < xi < 1:
        raise AssumptionError("margin xi in (0, 1) fails")
    zmax = min(uj - uk, uk - ul) / 2.0
    if not 0 < zeta < zmax:
        raise AssumptionError(f"margin 0 < zeta < zeta0 d = {zmax!r} fails")
    x, y, z = state
    ens = x * x + y * y + z * z
    energy = uj * x * x + uk * y * y + ul * z * z
    if not xi <= ens:
        raise AssumptionError(f"margin xi <= Ens fails (Ens = {ens!r})")
    if not ens <= 1.0 + 1e-12:
        raise AssumptionError(f"margin Ens <= 1 fails (Ens = {ens!r})")
    gap = (uj - uk) * x * x - (uk - ul) * z * z  # E - Ens/|k|^2 without cancellation
    # the gap carries rounding of order eps Ens from the squares, whatever delta is
    tol = 1e-12 * zeta * delta * delta + 4e-16 * ens
    if gap < 0:
        if not energy >= ens * ul + zeta:
            raise AssumptionError("margin E >= Ens/|l|^2 + zeta fails")
        if not gap <= -zeta * delta * delta + tol:
            raise AssumptionError("margin E <= Ens/|k|^2 - zeta delta^2 fails")
        return "A1"
    if not gap >= zeta * delta * delta - tol:
        raise AssumptionError("margin E >= Ens/|k|^2 + zeta delta^2 fails")
    if not energy <= ens * uj - zeta:
        raise AssumptionError("margin E <= Ens/|j|^2 - zeta fails")
    return "A2"


def near_separatrix_state(key, zeta: float, y0: float = 0.0, ens: float = 1.0, branch: str = "A1"):
    """Family delta -> rescaled state with E = Ens/|k|^2 -+ zeta delta^2 and middle mode y0.

    "A1" puts E just below the separatrix, "A2" just above. The first and
    last modes are returned non-negative.
    """
    j, k, l = key[:3]
    uj, uk, ul = 1.0 / euler.norm2(j), 1.0 / euler.norm2(k), 1.0 / euler.norm2(l)
    sign = -1.0 if branch == "A1" else 1.0

    def family(delta: float):
        rest = ens - y0 * y0
        # (uj - ul) x^2 = (uk - ul) rest + (E - Ens uk), with z^2 = rest - x^2
        x2 = ((uk - ul) * rest + sign * zeta * delta * delta) / (uj - ul)
        z2 = rest - x2
        if x2 < 0 or z2 < 0:
            raise AssumptionError("no real state with these invariants")
        return math.sqrt(x2), y0, math.sqrt(z2)

    return family


@dataclass(frozen=True)
class ThermalizationScan:
    deltas: np.ndarray
    eta: float
    estimates: np.ndarray
    halfwidths: np.ndarray
    trials: int
    h: float

    @property
    def scaled(self) -> np.ndarray:
        """estimate * |log delta|."""
        return self.estimates * np.abs(np.log(self.deltas))

    @property
    def fitted_c(self) -> float:
        return float(self.scaled.min())

    @property
    def band_ratio(self) -> float:
        s = self.scaled
        return float(s.max() / s.min()) if s.min() > 0 else math.inf


def thermalization_scan(
    key,
    base_state_family: Callable,
    eta: float,
    delta_grid,
    trials: int,
    seed: int,
    h: float,
    xi: float = 0.5,
    zeta: float | None = None,
) -> ThermalizationScan:
    """Probability that the triad is thermalized after an exponential time, per delta.

    For each delta the rescaled state ``base_state_family(delta)`` is flowed
    by the triad equations with coefficients divided by delta (equivalently
    the unscaled flow for time tau / delta), with tau ~ exp(mean h). The event
    is min(|x|, |y|, |z|) >= eta; for equal-norm triads, where z is frozen,
    it is min(|x|, |y|) >= eta. When ``zeta`` is given, unequal-norm triads
    must satisfy the separatrix margins of ``check_triad_assumption``.
    """
    j, k, l = key[:3]
    g = euler.geometry(tuple(j), tuple(k), tuple(l))
    deltas = np.asarray(delta_grid, dtype=float)
    est, half = np.empty(deltas.size), np.empty(deltas.size)
    for i, delta in enumerate(deltas):
        x0, y0, z0 = base_state_family(delta)
        if zeta is not None and not g.trig:
            check_triad_assumption((j, k, l), (x0, y0, z0), delta, xi, zeta)
        rng = substream(seed, i)
        tau = -h * np.log1p(-rng.random(trials))
        if g.swapped:
            ys, xs, zs, _ = euler.spinning_top(g, y0, x0, z0, tau / delta)
        else:
            xs, ys, zs, _ = euler.spinning_top(g, x0, y0, z0, tau / delta)
        low = np.minimum(np.abs(xs), np.abs(ys))
        if not g.trig:
            low = np.minimum(low, np.abs(zs))
        hits = int(np.count_nonzero(low >= eta))
        est[i], half[i] = proportion_ci(hits, trials)
    return ThermalizationScan(deltas, eta, est, half, trials, h)


# ----------------------------------------------------------------- entrance scaling


def random_sphere_point(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(dim)
    return radius * v / np.linalg.norm(v)


def _scaling_trial(rng, i, s: Splitting, H, D, ell, h, conditional):
    q = random_sphere_point(rng, s.dim, H - 1.0)
    p = sample_cycle(rng, s.m, h)
    try:
        k = first_entrance(s, q, p, D)
    except NumericOverflowError as err:
        err.trajectory = i
        raise
    if k is None:
        return 0.0
    if not conditional:
        return float(p.sigma[k] == ell)
    if ell in p.sigma[:k]:
        return 0.0
    return 1.0 / (s.m - k)


@dataclass(frozen=True)
class EntranceScaling:
    radii: np.ndarray
    eta: float
    estimates: np.ndarray
    halfwidths: np.ndarray
    trials: int

    @property
    def scaled(self) -> np.ndarray:
        """estimate * log H."""
        return self.estimates * np.log(self.radii)

    @property
    def band_ratio(self) -> float:
        s = self.scaled
        return float(s.max() / s.min()) if s.min() > 0 else math.inf


def entrance_scaling(
    sys: euler.EulerSystem,
    radius_grid,
    eta: float,
    trials: int,
    seed: int,
    h: float,
    conditional: bool = True,
) -> EntranceScaling:
    """Single-cycle probability of entering D_eta right before the damping flow, per radius.

    Every trial draws its own q uniformly on the sphere H(q) = R. With
    ``conditional`` the per-trial value is the probability of the event
    given the path up to the first entrance (see
    ``core.estimate_entrance_probability``).
    """
    if euler.check_assumption(sys) is None:
        raise AssumptionError("damping and forcing satisfy neither DF1 nor DF2")
    s = euler.splitting(sys)
    D = euler.dissipative_region(sys, eta)
    ell = s.index("damp")
    radii = np.asarray(radius_grid, dtype=float)
    est, half = np.empty(radii.size), np.empty(radii.size)
    for i, H in enumerate(radii):
        vals = np.array(map_trials(_scaling_trial, trials, seed + i, (s, H, D, ell, h, conditional)))
        if conditional:
            est[i], half[i], _ = mean_ci(vals)
        else:
            est[i], half[i] = proportion_ci(int(vals.sum()), trials)
    return EntranceScaling(radii, eta, est, half, trials)
