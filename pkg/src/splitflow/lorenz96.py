"""Lorenz '96 with damping on the first mode, split into rotations plus a damped forcing field.

Modes are numbered 1..d at the public interface and wrap cyclically. Field
``i`` rotates the pair (x_i, x_{i+1}) at angular rate x_{i-1}; the last field
damps x_1 and adds the constant forcing. All arrays are 0-based internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import RegionSpec, Splitting, VectorField


@dataclass(frozen=True, eq=False)
class Lorenz96System:
    d: int
    beta: np.ndarray

    def __post_init__(self):
        if self.d < 4:
            raise ValueError(f"dimension must be at least 4, got {self.d}")
        beta = np.broadcast_to(np.asarray(self.beta, dtype=float), (self.d,)).copy()
        if np.any(beta == 0.0) or not np.all(np.isfinite(beta)):
            raise ValueError("every forcing constant must be finite and nonzero")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def beta_norm(self) -> float:
        return float(np.linalg.norm(self.beta))


def _pair(d: int, i: int) -> tuple[int, int, int]:
    """0-based (rate, first, second) coordinates rotated by field ``i`` (1-based)."""
    first = (i - 1) % d
    return (first - 1) % d, first, (first + 1) % d


def rotation_field(sys: Lorenz96System, x: np.ndarray, i: int) -> np.ndarray:
    """V_i(x) = x_{i+1} x_{i-1} e_i - x_i x_{i-1} e_{i+1}."""
    rate, a, b = _pair(sys.d, i)
    v = np.zeros(sys.d)
    v[a] = x[b] * x[rate]
    v[b] = -x[a] * x[rate]
    return v


def rotation_flow(sys: Lorenz96System, x: np.ndarray, i: int, t: float) -> np.ndarray:
    rate, a, b = _pair(sys.d, i)
    w = x[rate] * t
    c, s = math.cos(w), math.sin(w)
    y = np.array(x, dtype=float)
    y[a] = x[a] * c + x[b] * s
    y[b] = -x[a] * s + x[b] * c
    return y


def star_field(sys: Lorenz96System, x: np.ndarray) -> np.ndarray:
    v = sys.beta.copy()
    v[0] -= x[0]
    return v


def star_flow(sys: Lorenz96System, x: np.ndarray, t: float) -> np.ndarray:
    y = np.asarray(x, dtype=float) + sys.beta * t
    decay = math.exp(-t)
    y[0] = decay * x[0] - math.expm1(-t) * sys.beta[0]
    return y


def full_drift(sys: Lorenz96System, x: np.ndarray) -> np.ndarray:
    """Right-hand side (x_{i+1} - x_{i-2}) x_{i-1} - [i = 1] x_i + beta_i."""
    x = np.asarray(x, dtype=float)
    v = (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1) + sys.beta
    v[0] -= x[0]
    return v


def lyapunov_H(x: np.ndarray) -> float:
    return float(np.linalg.norm(x)) + 1.0


def in_dissipative_region(x: np.ndarray, eta: float) -> bool:
    """x_1^2 >= eta |x|^2."""
    x = np.asarray(x)
    return bool(x[0] * x[0] >= eta * float(x @ x))


@dataclass(frozen=True)
class _DampedShare:
    eta: float

    def __call__(self, x) -> bool:
        return in_dissipative_region(x, self.eta)


def dissipative_region(eta: float) -> RegionSpec:
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    return RegionSpec(_DampedShare(float(eta)), f"D_eta(eta={eta!r})")


def star_contraction(eta: float, t: float) -> float:
    """Factor by which the damped field contracts H on the dissipative region."""
    return math.sqrt(1.0 - eta * (1.0 - math.exp(-2.0 * t)))


class RotationField(VectorField):
    def __init__(self, sys: Lorenz96System, i: int):
        self.sys, self.i = sys, i
        self.label = f"V{i}"
        self.rate, self.a, self.b = _pair(sys.d, i)

    def __call__(self, x):
        return rotation_field(self.sys, x, self.i)

    def flow(self, x, t):
        w = x[self.rate] * t
        c, s = math.cos(w), math.sin(w)
        y = x.copy()
        xa, xb = x[self.a], x[self.b]
        y[self.a] = xa * c + xb * s
        y[self.b] = -xa * s + xb * c
        return y


class StarField(VectorField):
    label = "star"

    def __init__(self, sys: Lorenz96System):
        self.sys = sys

    def __call__(self, x):
        return star_field(self.sys, x)

    def flow(self, x, t):
        return star_flow(self.sys, x, t)

    def growth(self, t):
        return self.sys.beta_norm * t


def splitting(sys: Lorenz96System) -> Splitting:
    """Fields V_1..V_d followed by the damped forcing field (index d)."""
    fields = [RotationField(sys, i) for i in range(1, sys.d + 1)]
    fields.append(StarField(sys))
    return Splitting(tuple(fields), sys.d)


@dataclass(frozen=True)
class LadderConfig:
    """Radii of the nested regions routing energy toward the damped mode.

    ``log_radii[j]`` is log R_j for j = 0..d-1, with R_0 = 1/sqrt(d) and
    R_j = R_{j-1} h / 16. The outer radius is R = 2^(d+5) max(|beta|, 1) / R_{d-1}
    and ``log_r_star`` is log(2^(d-1) R + 1). Everything is kept in logs so that
    large d neither underflows R_j nor overflows R.
    """

    d: int
    h: float
    log_radii: tuple
    log_r: float
    log_r_star: float

    @classmethod
    def build(cls, d: int, h: float, beta_norm: float) -> "LadderConfig":
        if d < 4 or not h > 0 or not beta_norm > 0:
            raise ValueError("need d >= 4, h > 0 and a positive forcing norm")
        log_step = math.log(h / 16.0)
        log_radii = tuple(-0.5 * math.log(d) + j * log_step for j in range(d))
        log_r = (d + 5) * math.log(2.0) + math.log(max(beta_norm, 1.0)) - log_radii[-1]
        scaled = (d - 1) * math.log(2.0) + log_r
        log_r_star = scaled + math.log1p(math.exp(-scaled))
        return cls(d, h, log_radii, log_r, log_r_star)

    def radius(self, j: int) -> float:
        return math.exp(self.log_radii[j])

    @property
    def R(self) -> float:
        if self.log_r > 709.0:
            raise OverflowError("outer ladder radius exceeds double range")
        return math.exp(self.log_r)

    @property
    def R_star(self) -> float:
        if self.log_r_star > 709.0:
            raise OverflowError("covering radius exceeds double range")
        return math.exp(self.log_r_star)


def _log_abs(v: float) -> float:
    return math.log(abs(v)) if v != 0.0 else -math.inf


def ladder_region_index(sys: Lorenz96System, ladder: LadderConfig, x: np.ndarray) -> int | None:
    """Smallest j (1-based) with x in U_j, or None.

    U_1 = {|x| >= R, |x_1| >= R_{d-1}|x|}; for j >= 2,
    U_j = {|x| >= 2^(j-1) R, |x_j| >= R_{d-j}|x|, |x_{j-1}| < R_{d-j+1}|x|}.
    """
    if ladder.d != sys.d:
        raise ValueError("ladder built for a different dimension")
    x = np.asarray(x, dtype=float)
    amax = float(np.max(np.abs(x)))
    if amax == 0.0:
        return None
    log_norm = math.log(amax) + math.log(float(np.linalg.norm(x / amax)))
    d, lr = sys.d, ladder.log_radii
    if log_norm >= ladder.log_r and _log_abs(x[0]) >= lr[d - 1] + log_norm:
        return 1
    for j in range(2, d + 1):
        if log_norm < (j - 1) * math.log(2.0) + ladder.log_r:
            break
        if _log_abs(x[j - 1]) >= lr[d - j] + log_norm and _log_abs(x[j - 2]) < lr[d - j + 1] + log_norm:
            return j
    return None


def h_star_valid(h: float) -> bool:
    """Whether h meets the smallness conditions used by the entrance lemmas.

    Checks h < pi/12, exp(-6h) >= 3/4 and 1 - exp(-5h) - 3h exp(-5h) >= h in
    closed form, and that |sin y| <= h forces y within 3h of a multiple of pi
    on a grid over [0, 4 pi].
    """
    if not h > 0:
        raise ValueError("h must be positive")
    if not h < math.pi / 12.0:
        return False
    if math.exp(-6.0 * h) < 0.75:
        return False
    if 1.0 - math.exp(-5.0 * h) - 3.0 * h * math.exp(-5.0 * h) < h:
        return False
    y = np.linspace(0.0, 4.0 * np.pi, 200_001)
    near_zero = np.abs(np.sin(y)) <= h
    dist = np.abs(y - np.pi * np.round(y / np.pi))
    return bool(np.all(dist[near_zero] < 3.0 * h))


@dataclass(frozen=True)
class LemmaConstants:
    """Constants of the downward-transfer and energy-maintenance events."""

    c1: float
    c2: float
    c3: float
    c: float

    @classmethod
    def defaults(cls, d: int) -> "LemmaConstants":
        c1 = 1.0 / math.sqrt(d)
        return cls(c1=c1, c2=c1 / 4.0, c3=1.0, c=1.0 / math.sqrt(d))

    def transfer_probability_bound(self) -> float:
        return math.exp(-3.0 / self.c3) / 2.0


def downward_transfer(sys: Lorenz96System, x: np.ndarray, j: int, t: float, h: float, c: LemmaConstants) -> bool:
    """Whether rotating with field j-1 for time t leaves |x_{j-1}| >= (c1 - c2) h |x|."""
    y = rotation_flow(sys, x, j - 1, t)
    return bool(abs(y[(j - 2) % sys.d]) >= (c.c1 - c.c2) * h * np.linalg.norm(x))


def energy_maintained(sys: Lorenz96System, x: np.ndarray, j: int, field: int | str, t: float, c: LemmaConstants) -> bool:
    """Whether |x_j| >= (c/2) |x| still holds after flowing field ``field`` ("star" or 1..d) for time t."""
    y = star_flow(sys, x, t) if field == "star" else rotation_flow(sys, x, int(field), t)
    return bool(abs(y[(j - 1) % sys.d]) >= 0.5 * c.c * np.linalg.norm(y))
