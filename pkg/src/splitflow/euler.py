"""Galerkin-truncated 2D Euler split into triad, damping and forcing fields.

Modes live on the box {0 <= j1, j2 <= N} without the origin, in lexicographic
order. A state is q = (a, b): the cosine amplitudes of all modes followed by
the sine amplitudes, so the dimension is 2 N (N + 2).

Each triad j + k = l with j x k != 0 contributes four fields, each an Euler
spinning top in three coordinates (X, Y, Z):

    X' = theta_kl Y Z,   Y' = theta_jl X Z,   Z' = -theta_jk X Y.

Both E = X^2/|j|^2 + Y^2/|k|^2 + Z^2/|l|^2 and X^2 + Y^2 + Z^2 are conserved,
which is what makes the flow solvable with Jacobi elliptic functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import elliptic
from .core import RegionSpec, Splitting, VectorField

FAMILIES = ("aaa", "abb", "bab", "bba")

# (part, role, sign) of the X, Y, Z slots for each family
FAMILY_SLOTS = {
    "aaa": (("a", "j", 1.0), ("a", "k", 1.0), ("a", "l", 1.0)),
    "abb": (("a", "j", 1.0), ("b", "k", 1.0), ("b", "l", 1.0)),
    "bab": (("b", "j", 1.0), ("a", "k", 1.0), ("b", "l", 1.0)),
    "bba": (("b", "j", 1.0), ("b", "k", 1.0), ("a", "l", -1.0)),
}

# |E - Ens/|k|^2| below this multiple of Ens counts as the separatrix
INTERFACE_TOL = 1e-15


class InterfaceDegenerateError(ValueError):
    """The triad state sits on the separatrix E = Ens/|k|^2."""


class TriadKey(NamedTuple):
    j: tuple
    k: tuple
    l: tuple
    family: str


def norm2(j) -> int:
    return j[0] * j[0] + j[1] * j[1]


def cross(j, k) -> int:
    """j . k_perp with k_perp = (k2, -k1)."""
    return j[0] * k[1] - j[1] * k[0]


def build_index_set(N: int) -> list[tuple]:
    if N < 4:
        raise ValueError(f"truncation N must be at least 4, got {N}")
    return [(j1, j2) for j1 in range(N + 1) for j2 in range(N + 1) if (j1, j2) != (0, 0)]


def theta(k, l) -> float:
    """(k . l_perp) / (4 pi) * (1/|k|^2 - 1/|l|^2)."""
    return cross(k, l) / (4.0 * math.pi) * (1.0 / norm2(k) - 1.0 / norm2(l))


def enumerate_triads(indices) -> list[TriadKey]:
    """Triads l = j + k with j before k lexicographically, four families each.

    Swapping j and k reproduces the same set of fields (aaa and bba are
    symmetric, abb(k, j) is bab(j, k)), so unordered pairs suffice.
    """
    members = set(indices)
    keys = []
    for j in indices:
        for k in indices:
            if not j < k:
                continue
            l = (j[0] + k[0], j[1] + k[1])
            if l in members and cross(j, k) != 0:
                keys.extend(TriadKey(j, k, l, fam) for fam in FAMILIES)
    return keys


@dataclass(frozen=True)
class Layout:
    N: int
    indices: tuple
    position: dict

    @property
    def n_modes(self) -> int:
        return len(self.indices)

    @property
    def dim(self) -> int:
        return 2 * len(self.indices)

    def slot(self, part: str, mode) -> int:
        p = self.position[tuple(mode)]
        return p if part == "a" else p + len(self.indices)


@lru_cache(maxsize=None)
def layout(N: int) -> Layout:
    idx = tuple(build_index_set(N))
    return Layout(N, idx, {j: i for i, j in enumerate(idx)})


def layout_for_dim(d: int) -> Layout:
    N = round(math.sqrt(1.0 + d / 2.0) - 1.0)
    if 2 * N * (N + 2) != d:
        raise ValueError(f"dimension {d} is not 2N(N+2) for any N")
    return layout(N)


def conserved_pair(x: float, y: float, z: float, key: TriadKey) -> tuple[float, float]:
    """Relative energy and relative enstrophy of a triad triple."""
    e = x * x / norm2(key.j) + y * y / norm2(key.k) + z * z / norm2(key.l)
    return e, x * x + y * y + z * z


@dataclass(frozen=True)
class TriadParams:
    """Elliptic parameters of one triad orbit, in the frame where |X-mode| < |Y-mode|.

    ``branch`` is "A1" when E < Ens/|k|^2 (Z keeps its sign) and "A2" when
    E > Ens/|k|^2 (X keeps its sign). ``omega`` is the angular speed of the
    elliptic phase.
    """

    E: float
    ens: float
    kappa1: float
    gamma1: float
    kappa2: float
    gamma2: float
    rho: float
    rho_c: float
    theta0: float
    branch: str
    omega: float
    swapped: bool


class TriadGeometry:
    """Norm ordering and coefficients of a triad, put in canonical form.

    In canonical form u1 >= u2 > u3 are the inverse squared norms of the X, Y
    and Z modes and the equations read X' = -s (u2-u3) Y Z, Y' = s (u1-u3) X Z,
    Z' = -s (u1-u2) X Y. When |k| < |j| the roles of X and Y are exchanged,
    which leaves the system in the same form.
    """

    def __init__(self, j, k, l):
        uj, uk, ul = 1.0 / norm2(j), 1.0 / norm2(k), 1.0 / norm2(l)
        s = cross(j, k) / (4.0 * math.pi)
        self.trig = norm2(j) == norm2(k)
        self.swapped = norm2(k) < norm2(j)
        if self.swapped:
            uj, uk, s = uk, uj, -s
        self.u1, self.u2, self.u3, self.s = uj, uk, ul, s

    @property
    def b(self) -> float:
        return self.s * (self.u1 - self.u3)


def _fixed(x, y, z) -> bool:
    # squares, not values: a coordinate whose square underflows cannot drive the others
    return (x * x == 0.0) + (y * y == 0.0) + (z * z == 0.0) >= 2


def _params(g: TriadGeometry, x: float, y: float, z: float) -> TriadParams:
    u1, u2, u3 = g.u1, g.u2, g.u3
    x2, y2, z2 = x * x, y * y, z * z
    ens = x2 + y2 + z2
    energy = u1 * x2 + u2 * y2 + u3 * z2
    # differences of conserved quantities, each written without cancellation
    p1 = (u1 - u3) * x2 + (u2 - u3) * y2
    p2 = (u1 - u2) * y2 + (u1 - u3) * z2
    gap = (u1 - u2) * x2 - (u2 - u3) * z2
    if not abs(gap) > INTERFACE_TOL * ens:
        raise InterfaceDegenerateError(f"E - Ens/|k|^2 = {gap!r} at Ens = {ens!r}")
    kappa1, gamma1 = p1 / (u1 - u3), (u2 - u3) / p1
    kappa2, gamma2 = p2 / (u1 - u3), (u1 - u2) / p2
    b = g.b
    if gap < 0.0:
        rho = gamma2 / gamma1
        rho_c = (u1 - u3) * -gap / (p1 * p2 * gamma1)
        sz = math.copysign(1.0, z)
        omega = math.sqrt(gamma1 * kappa1 * kappa2) * b
        sn0, cn0 = sz * y * math.sqrt(gamma1), x / math.sqrt(kappa1)
        branch = "A1"
    else:
        rho = gamma1 / gamma2
        rho_c = (u1 - u3) * gap / (p1 * p2 * gamma2)
        sx = math.copysign(1.0, x)
        omega = math.sqrt(gamma2 * kappa1 * kappa2) * b
        sn0, cn0 = sx * y * math.sqrt(gamma2), z / math.sqrt(kappa2)
        branch = "A2"
    norm = math.hypot(sn0, cn0)
    theta0 = elliptic.phase_from_pair(rho, sn0 / norm, cn0 / norm, rho_c)
    return TriadParams(energy, ens, kappa1, gamma1, kappa2, gamma2, rho, rho_c, theta0, branch, omega, g.swapped)


def _elliptic_flow(g: TriadGeometry, x: float, y: float, z: float, t):
    """Closed-form spinning-top flow; ``t`` may be an array."""
    u1, u2, u3 = g.u1, g.u2, g.u3
    x2, y2, z2 = x * x, y * y, z * z
    p1 = (u1 - u3) * x2 + (u2 - u3) * y2
    p2 = (u1 - u2) * y2 + (u1 - u3) * z2
    gap = (u1 - u2) * x2 - (u2 - u3) * z2
    if not abs(gap) > INTERFACE_TOL * (x2 + y2 + z2):
        raise InterfaceDegenerateError(f"E - Ens/|k|^2 = {gap!r}")
    kappa1, gamma1 = p1 / (u1 - u3), (u2 - u3) / p1
    kappa2, gamma2 = p2 / (u1 - u3), (u1 - u2) / p2
    if gap < 0.0:
        # Z never vanishes: X ~ cn, Y ~ sn, Z ~ dn
        sz = math.copysign(1.0, z)
        rg, rk1, rk2 = math.sqrt(gamma1), math.sqrt(kappa1), math.sqrt(kappa2)
        omega = math.sqrt(gamma1 * kappa1 * kappa2) * g.b
        sn0, cn0 = sz * y * rg, x / rk1
        norm = math.hypot(sn0, cn0)
        sn, cn, dn, _ = elliptic.advance(
            gamma2 / gamma1, sn0 / norm, cn0 / norm, omega * t,
            (u1 - u3) * -gap / (p1 * p2 * gamma1),
        )
        return rk1 * cn, sz * sn / rg, sz * rk2 * dn
    # X never vanishes: X ~ dn, Y ~ sn, Z ~ cn
    sx = math.copysign(1.0, x)
    rg, rk1, rk2 = math.sqrt(gamma2), math.sqrt(kappa1), math.sqrt(kappa2)
    omega = math.sqrt(gamma2 * kappa1 * kappa2) * g.b
    sn0, cn0 = sx * y * rg, z / rk2
    norm = math.hypot(sn0, cn0)
    sn, cn, dn, _ = elliptic.advance(
        gamma1 / gamma2, sn0 / norm, cn0 / norm, omega * t,
        (u1 - u3) * gap / (p1 * p2 * gamma2),
    )
    return sx * rk1 * dn, sx * sn / rg, rk2 * cn


def _canonical_rhs(g: TriadGeometry):
    a, b, c = -g.s * (g.u2 - g.u3), g.b, -g.s * (g.u1 - g.u2)

    def rhs(_t, v):
        return [a * v[1] * v[2], b * v[0] * v[2], c * v[0] * v[1]]

    return rhs


def _integrate(g: TriadGeometry, x: float, y: float, z: float, t):
    from scipy.integrate import solve_ivp

    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if not np.any(ts):
        if np.ndim(t) == 0:
            return x, y, z
        return np.full(ts.shape, x), np.full(ts.shape, y), np.full(ts.shape, z)
    scale = max(abs(x), abs(y), abs(z))
    order = np.argsort(ts)
    sol = solve_ivp(
        _canonical_rhs(g), (0.0, float(ts.max(initial=0.0))), [x, y, z],
        method="DOP853", t_eval=ts[order], rtol=1e-12, atol=1e-14 * scale,
    )
    out = np.empty((3, ts.size))
    out[:, order] = sol.y
    if np.ndim(t) == 0:
        return float(out[0, 0]), float(out[1, 0]), float(out[2, 0])
    return out[0], out[1], out[2]


def spinning_top(g: TriadGeometry, x: float, y: float, z: float, t):
    """Flow the canonical triad for time ``t`` (scalar or array).

    Returns ``(X, Y, Z, method)`` with method one of "fixed", "trig",
    "elliptic" or "integrator"; the last marks the separatrix fallback.
    """
    if _fixed(x, y, z):
        shape = np.shape(t)
        if shape:
            return np.full(shape, x), np.full(shape, y), np.full(shape, z), "fixed"
        return x, y, z, "fixed"
    if g.trig:
        w = g.b * z * t
        c, s = np.cos(w), np.sin(w)
        zz = np.full(np.shape(t), z) if np.shape(t) else z
        return x * c - y * s, x * s + y * c, zz, "trig"
    # the flow is quadratic, so c q(c t) solves it from c q(0); a power of two
    # brings the state to unit size exactly and keeps products of squares normal
    scale = math.ldexp(1.0, math.frexp(max(abs(x), abs(y), abs(z)))[1])
    x, y, z, st = x / scale, y / scale, z / scale, scale * np.asarray(t, dtype=float)
    if np.ndim(t) == 0:
        st = float(st)
    try:
        xs, ys, zs = _elliptic_flow(g, x, y, z, st)
        method = "elliptic"
    except InterfaceDegenerateError:
        xs, ys, zs = _integrate(g, x, y, z, st)
        method = "integrator"
    return xs * scale, ys * scale, zs * scale, method


@lru_cache(maxsize=4096)
def geometry(j, k, l) -> TriadGeometry:
    return TriadGeometry(j, k, l)


class TriadField(VectorField):
    """One of the four triad fields of (j, k, l) acting on a Galerkin state."""

    def __init__(self, key: TriadKey, lay: Layout):
        self.key = key
        self.label = f"{key.family}{key.j}{key.k}{key.l}".replace(" ", "")
        roles = {"j": key.j, "k": key.k, "l": key.l}
        self.slots = tuple(lay.slot(part, roles[role]) for part, role, _ in FAMILY_SLOTS[key.family])
        self.z_sign = FAMILY_SLOTS[key.family][2][2]
        self.coef = (theta(key.k, key.l), theta(key.j, key.l), -theta(key.j, key.k))
        self.geom = geometry(key.j, key.k, key.l)

    def xyz(self, q):
        ix, iy, iz = self.slots
        return float(q[ix]), float(q[iy]), self.z_sign * float(q[iz])

    def __call__(self, q):
        x, y, z = self.xyz(q)
        ix, iy, iz = self.slots
        v = np.zeros(len(q))
        v[ix] = self.coef[0] * y * z
        v[iy] = self.coef[1] * x * z
        v[iz] = self.z_sign * self.coef[2] * x * y
        return v

    def solve(self, q, t):
        """New (X, Y, Z) after time ``t`` and the solution method used."""
        x, y, z = self.xyz(q)
        if self.geom.swapped:
            y2, x2, z2, method = spinning_top(self.geom, y, x, z, t)
        else:
            x2, y2, z2, method = spinning_top(self.geom, x, y, z, t)
        return x2, y2, z2, method

    def flow(self, q, t):
        x, y, z, _ = self.solve(q, t)
        out = q.copy()
        ix, iy, iz = self.slots
        out[ix], out[iy], out[iz] = x, y, self.z_sign * z
        return out


def _check_finite(q):
    if not np.all(np.isfinite(q)):
        raise ValueError("Galerkin state must be finite")


def triad_flow(q: np.ndarray, key: TriadKey, t: float) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _check_finite(q)
    return TriadField(key, layout_for_dim(q.size)).flow(q, t)


def triad_params(x0: float, y0: float, z0: float, key: TriadKey) -> TriadParams:
    """Elliptic parameters of the orbit through (x0, y0, z0).

    When |k| < |j| the parameters refer to the frame with X and Y exchanged,
    flagged by ``swapped``. Raises ``InterfaceDegenerateError`` on the
    separatrix and ``ValueError`` for the trigonometric case |j| = |k|.
    """
    g = geometry(key.j, key.k, key.l)
    if g.trig:
        raise ValueError("equal-norm triads rotate trigonometrically; no elliptic parameters")
    if _fixed(x0, y0, z0):
        raise ValueError("fixed point: at least two coordinates vanish")
    if g.swapped:
        x0, y0 = y0, x0
    return _params(g, x0, y0, z0)


def triad_period(x0: float, y0: float, z0: float, key: TriadKey) -> float:
    """Period of the triad orbit through (x0, y0, z0) (inf on the separatrix)."""
    g = geometry(key.j, key.k, key.l)
    if _fixed(x0, y0, z0):
        return math.inf
    if g.trig:
        w = abs(g.b * z0)
        return 2.0 * math.pi / w if w > 0 else math.inf
    try:
        p = triad_params(x0, y0, z0, key)
    except InterfaceDegenerateError:
        return math.inf
    return 4.0 * elliptic.quarter_period(p.rho, p.rho_c) / abs(p.omega)


@dataclass(frozen=True, eq=False)
class EulerSystem:
    """Galerkin Euler with damping rates on a mode set and constant forcing vectors.

    ``damping`` maps modes to positive rates; ``forcing`` holds dense vectors
    in the layout of ``layout(N)``.
    """

    N: int
    damping: dict = field(default_factory=dict)
    forcing: tuple = ()

    def __post_init__(self):
        lay = layout(self.N)
        damping = {tuple(j): float(r) for j, r in self.damping.items()}
        for j, r in damping.items():
            if j not in lay.position:
                raise ValueError(f"damped mode {j} is outside the index set")
            if not r > 0:
                raise ValueError(f"damping rate of {j} must be positive")
        forcing = tuple(np.array(b, dtype=float) for b in self.forcing)
        for b in forcing:
            if b.shape != (lay.dim,):
                raise ValueError(f"forcing vectors must have length {lay.dim}")
            b.setflags(write=False)
        object.__setattr__(self, "damping", damping)
        object.__setattr__(self, "forcing", forcing)
        rates = np.zeros(lay.dim)
        for j, r in damping.items():
            rates[lay.slot("a", j)] = rates[lay.slot("b", j)] = r
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "layout", lay)
        object.__setattr__(self, "triads", tuple(enumerate_triads(lay.indices)))

    @classmethod
    def from_sparse(cls, N: int, damping: dict, forcing: list) -> "EulerSystem":
        """Build from forcing given as one ``{(mode, part): value}`` map per forcing field."""
        lay = layout(N)
        dense = []
        for entries in forcing:
            b = np.zeros(lay.dim)
            for (mode, part), value in entries.items():
                if part not in ("a", "b"):
                    raise ValueError(f"forcing part must be 'a' or 'b', got {part!r}")
                if tuple(mode) not in lay.position:
                    raise ValueError(f"forced mode {mode} is outside the index set")
                b[lay.slot(part, mode)] = value
            dense.append(b)
        return cls(N, damping, tuple(dense))

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def damped_modes(self) -> set:
        return set(self.damping)


def damp_flow(sys: EulerSystem, q: np.ndarray, t: float) -> np.ndarray:
    return np.asarray(q, dtype=float) * np.exp(-sys.rates * t)


def force_flow(sys: EulerSystem, q: np.ndarray, t: float, ell: int) -> np.ndarray:
    """Drift along forcing vector ``ell`` (1-based) for time t."""
    if not 1 <= ell <= len(sys.forcing):
        raise ValueError(f"forcing index must be in 1..{len(sys.forcing)}")
    return np.asarray(q, dtype=float) + t * sys.forcing[ell - 1]


def damp_contraction(eta: float, rate: float, t: float) -> float:
    """Contraction factor of H under damping on the dissipative region."""
    return math.sqrt((math.exp(-rate * t) - 1.0) * eta + 1.0)


class DampField(VectorField):
    label = "damp"

    def __init__(self, sys: EulerSystem):
        self.rates = sys.rates

    def __call__(self, q):
        return -self.rates * q

    def flow(self, q, t):
        return q * np.exp(-self.rates * t)


class ForceField(VectorField):
    def __init__(self, sys: EulerSystem, ell: int):
        self.beta = sys.forcing[ell - 1]
        self.label = f"force{ell}"
        self._norm = float(np.linalg.norm(self.beta))

    def __call__(self, q):
        return self.beta.copy()

    def flow(self, q, t):
        return q + t * self.beta

    def growth(self, t):
        return self._norm * t


def splitting(sys: EulerSystem) -> Splitting:
    """Damping first, then forcing fields 1..m, then the triad fields in enumeration order."""
    fields = [DampField(sys)]
    fields += [ForceField(sys, ell) for ell in range(1, len(sys.forcing) + 1)]
    fields += [TriadField(key, sys.layout) for key in sys.triads]
    return Splitting(tuple(fields), sys.dim)


def lyapunov_H(q: np.ndarray) -> float:
    return float(np.linalg.norm(q)) + 1.0


def nonresonance_deltas(j, k, l, beta: np.ndarray) -> tuple[float, float]:
    """Discriminants of a forcing vector for the triad (j, k, l)."""
    lay = layout_for_dim(len(beta))
    uj, uk, ul = 1.0 / norm2(j), 1.0 / norm2(k), 1.0 / norm2(l)
    baj = beta[lay.slot("a", j)]
    bal, bbl = beta[lay.slot("a", l)], beta[lay.slot("b", l)]
    first = baj * baj * (uj - uk)
    return first - bal * bal * (uk - ul), first - bbl * bbl * (uk - ul)


def _nonzero(value: float, scale: float) -> bool:
    return abs(value) > 1e-14 * scale


def is_nonresonant(sys: EulerSystem, j) -> bool:
    """Whether some forcing vector kicks mode j off every triad separatrix through it."""
    j = tuple(j)
    lay = sys.layout
    partners = []
    for k in lay.indices:
        l = (j[0] + k[0], j[1] + k[1])
        if l in lay.position and norm2(j) != norm2(k):
            partners.append((k, l))
    for beta in sys.forcing:
        baj = beta[lay.slot("a", j)]
        if baj == 0.0:
            continue
        ok = True
        for k, l in partners:
            d1, d2 = nonresonance_deltas(j, k, l, beta)
            uk, ul = 1.0 / norm2(k), 1.0 / norm2(l)
            first = baj * baj * abs(1.0 / norm2(j) - uk)
            s1 = first + beta[lay.slot("a", l)] ** 2 * (uk - ul)
            s2 = first + beta[lay.slot("b", l)] ** 2 * (uk - ul)
            if not (_nonzero(d1, s1) and _nonzero(d2, s2)):
                ok = False
                break
        if ok:
            return True
    return False


def check_assumption(sys: EulerSystem) -> str | None:
    """Return "DF1", "DF2" or None according to which forcing/damping condition holds."""
    N = sys.N
    damped = sys.damped_modes
    nonres = {j for j in [(0, 1), (1, 0), (1, 1)] if is_nonresonant(sys, j)}
    if {(0, 1), (1, 0)} <= nonres and {(1, 0), (0, 1), (N, N)} <= damped:
        return "DF1"
    if {(0, 1), (1, 0), (1, 1)} <= nonres and ({(1, 0), (N, N)} <= damped or {(0, 1), (N, N)} <= damped):
        return "DF2"
    return None


def damped_mask(sys: EulerSystem) -> np.ndarray:
    return sys.rates > 0


def in_dissipative_region(sys: EulerSystem, q: np.ndarray, eta: float) -> bool:
    """Energy on damped modes is at least an eta fraction of |q|^2."""
    q = np.asarray(q, dtype=float)
    qd = q[sys.rates > 0]
    return bool(float(qd @ qd) >= eta * float(q @ q))


class _DampedShare:
    """Picklable membership test for the damped-energy region."""

    def __init__(self, mask: np.ndarray, eta: float):
        self.mask, self.eta = mask, eta

    def __call__(self, q) -> bool:
        qd = q[self.mask]
        return float(qd @ qd) >= self.eta * float(q @ q)


def dissipative_region(sys: EulerSystem, eta: float) -> RegionSpec:
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    return RegionSpec(_DampedShare(damped_mask(sys), float(eta)), f"D_eta(eta={eta!r})")


def full_rhs(sys: EulerSystem, q: np.ndarray) -> np.ndarray:
    """Galerkin Euler vector field with damping and the summed forcing.

    Computed mode by mode from the complex-amplitude equations: sums over
    j + k = l run over all k, sums over j = k + l over unordered pairs {k, l}.
    """
    lay = sys.layout
    q = np.asarray(q, dtype=float)
    n = lay.n_modes
    a, b = q[:n], q[n:]
    pos = lay.position
    da, db = np.zeros(n), np.zeros(n)
    for j in lay.indices:
        ij = pos[j]
        for k in lay.indices:
            l = (j[0] + k[0], j[1] + k[1])
            if l in pos:
                ik, il = pos[k], pos[l]
                th = theta(k, l)
                da[ij] += th * (a[ik] * a[il] + b[ik] * b[il])
                db[ij] += th * (a[ik] * b[il] - b[ik] * a[il])
            l = (j[0] - k[0], j[1] - k[1])
            if l in pos:
                ik, il = pos[k], pos[l]
                th = 0.5 * theta(k, l)
                da[ij] += th * (b[ik] * b[il] - a[ik] * a[il])
                db[ij] -= th * (a[ik] * b[il] + b[ik] * a[il])
    out = np.concatenate([da, db]) - sys.rates * q
    for beta in sys.forcing:
        out += beta
    return out


def zeta0(j, k, l, d: int) -> float:
    uj, uk, ul = 1.0 / norm2(j), 1.0 / norm2(k), 1.0 / norm2(l)
    if not uj > uk > ul:
        raise ValueError("zeta0 needs |j| < |k| < |l|")
    return min((uj - uk) / (2 * d), (uk - ul) / (2 * d))
