"""Jacobi elliptic functions with parameter ``rho`` (the parameter m, modulus k = sqrt(m)).

sn, cn and dn are obtained by inverting

    T(s) = int_0^s db / (sqrt(1 - rho b^2) sqrt(1 - b^2)),

with quarter period K = T(1). The functions are first evaluated on [0, K] and
extended to the real line by reflection: on [K, 2K], sn(x) = sn(2K - x) and
cn(x) = -cn(2K - x); on [2K, 4K], sn(x) = -sn(4K - x) and cn(x) = cn(4K - x).

Every public function accepts an optional ``rho_c`` equal to ``1 - rho``.
Callers that can form the complement without cancellation (the triad solver
does) should pass it, which keeps the functions accurate arbitrarily close to
``rho = 1``.
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "DegenerateModulusError",
    "quarter_period",
    "incomplete",
    "jacobi",
    "phase_from_pair",
    "advance",
    "reference_incomplete",
    "reference_jacobi",
]

# rho closer to 1 than this cannot be resolved from rho alone
NEAR_ONE = 1e-12


class DegenerateModulusError(ValueError):
    """Raised when ``rho`` is too close to 1 for ``1 - rho`` to be trusted."""


def _complement(rho: float, rho_c: float | None) -> float:
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"rho must lie in [0, 1), got {rho!r}")
    if rho_c is None:
        if rho > 1.0 - NEAR_ONE:
            raise DegenerateModulusError(
                f"rho={rho!r} is within {NEAR_ONE} of 1; pass rho_c explicitly"
            )
        return 1.0 - rho
    if not 0.0 < rho_c or abs(rho + rho_c - 1.0) > 1e-13:
        raise ValueError(f"rho_c={rho_c!r} is not 1 - rho for rho={rho!r}")
    # a complement formed from rounded data may exceed 1 by an ulp when rho is tiny
    return min(float(rho_c), 1.0)


def _landen(rho: float, rho_c: float) -> tuple[float, list[float]]:
    """AGM iteration returning ``a_N`` and the ratios ``c_n / a_n`` for n = 1..N."""
    a, b, c = 1.0, math.sqrt(rho_c), math.sqrt(rho)
    ratios = []
    while c > 1e-17 * a:
        a_next = 0.5 * (a + b)
        # c_n = c_{n-1}^2 / (4 a_n) avoids the cancellation in (a - b) / 2
        c = c * c / (4.0 * a_next)
        b = math.sqrt(a * b)
        a = a_next
        ratios.append(c / a)
    return a, ratios


def quarter_period(rho: float, rho_c: float | None = None) -> float:
    """Complete integral K = T(1), from the arithmetic-geometric mean of 1 and sqrt(1 - rho)."""
    rho_c = _complement(rho, rho_c)
    a_n, _ = _landen(rho, rho_c)
    return math.pi / (2.0 * a_n)


def _carlson_rf(x: float, y: float, z: float) -> float:
    """Carlson's symmetric integral R_F by duplication."""
    while True:
        mean = (x + y + z) / 3.0
        dx, dy, dz = 1.0 - x / mean, 1.0 - y / mean, 1.0 - z / mean
        if max(abs(dx), abs(dy), abs(dz)) < 1e-3:
            break
        sx, sy, sz = math.sqrt(x), math.sqrt(y), math.sqrt(z)
        lam = sx * sy + sy * sz + sz * sx
        x, y, z = 0.25 * (x + lam), 0.25 * (y + lam), 0.25 * (z + lam)
    e2 = dx * dy - dz * dz
    e3 = dx * dy * dz
    return (1.0 - e2 / 10.0 + e3 / 14.0 + e2 * e2 / 24.0 - 3.0 * e2 * e3 / 44.0) / math.sqrt(mean)


def _amplitude_integral(phi: float, rho: float, rho_c: float) -> float:
    """F(phi | rho) for phi in [0, pi/2]."""
    s, c = math.sin(phi), math.cos(phi)
    c2 = c * c
    # 1 - rho sin^2 written as cos^2 + (1 - rho) sin^2 to stay accurate near rho = 1
    return s * _carlson_rf(c2, c2 + rho_c * s * s, 1.0)


def incomplete(rho: float, s: float, rho_c: float | None = None) -> float:
    """T(s) for s in [0, 1]."""
    rho_c = _complement(rho, rho_c)
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s must lie in [0, 1], got {s!r}")
    if s == 0.0:
        return 0.0
    return _amplitude_integral(math.asin(s), rho, rho_c)


def _base_scalar(u: float, a_n: float, ratios: list[float], rho_c: float) -> tuple[float, float, float]:
    phi = a_n * u * 2.0 ** len(ratios)
    for r in reversed(ratios):
        phi = 0.5 * (phi + math.asin(r * math.sin(phi)))
    sn, cn = math.sin(phi), math.cos(phi)
    return sn, cn, math.sqrt(cn * cn + rho_c * sn * sn)


def _base_array(u: np.ndarray, a_n: float, ratios: list[float], rho_c: float):
    phi = a_n * u * 2.0 ** len(ratios)
    for r in reversed(ratios):
        phi = 0.5 * (phi + np.arcsin(r * np.sin(phi)))
    sn, cn = np.sin(phi), np.cos(phi)
    return sn, cn, np.sqrt(cn * cn + rho_c * sn * sn)


def _evaluate(x, a_n: float, ratios: list[float], rho_c: float, k: float):
    if np.ndim(x) == 0:
        r = math.fmod(float(x), 4.0 * k)
        if r < 0.0:
            r += 4.0 * k
        quadrant = min(int(r // k), 3)
        if quadrant == 0:
            return _base_scalar(r, a_n, ratios, rho_c)
        if quadrant == 1:
            sn, cn, dn = _base_scalar(2.0 * k - r, a_n, ratios, rho_c)
            return sn, -cn, dn
        if quadrant == 2:
            sn, cn, dn = _base_scalar(r - 2.0 * k, a_n, ratios, rho_c)
            return -sn, -cn, dn
        sn, cn, dn = _base_scalar(4.0 * k - r, a_n, ratios, rho_c)
        return -sn, cn, dn

    r = np.mod(np.asarray(x, dtype=float), 4.0 * k)
    quadrant = np.minimum(np.floor(r / k), 3.0).astype(int)
    u = np.choose(quadrant, [r, 2.0 * k - r, r - 2.0 * k, 4.0 * k - r])
    u = np.clip(u, 0.0, k)
    sn, cn, dn = _base_array(u, a_n, ratios, rho_c)
    sn_sign = np.where(quadrant >= 2, -1.0, 1.0)
    cn_sign = np.where((quadrant == 1) | (quadrant == 2), -1.0, 1.0)
    return sn_sign * sn, cn_sign * cn, dn


def jacobi(rho: float, x, rho_c: float | None = None):
    """Return ``(sn, cn, dn)`` at ``x``.

    Parameters
    ----------
    rho : float
        Parameter in [0, 1).
    x : float or array_like
        Argument; any real value, reduced modulo 4K.
    rho_c : float, optional
        ``1 - rho`` computed by the caller without cancellation.

    Returns
    -------
    tuple
        Floats for scalar ``x``, arrays otherwise.
    """
    rho_c = _complement(rho, rho_c)
    a_n, ratios = _landen(rho, rho_c)
    return _evaluate(x, a_n, ratios, rho_c, math.pi / (2.0 * a_n))


def _phase(sn_val: float, cn_val: float, rho: float, rho_c: float, k: float) -> float:
    if not abs(sn_val) <= 1.0 + 1e-12:
        raise ValueError(f"|sn| must not exceed 1, got {sn_val!r}")
    sn_val = max(-1.0, min(1.0, sn_val))
    cn_mag = math.sqrt(max(0.0, 1.0 - sn_val * sn_val))
    if cn_val == 0.0 and cn_mag > 1e-8:
        raise ValueError(f"cn cannot vanish where sn={sn_val!r}")
    if not abs(sn_val * sn_val + cn_val * cn_val - 1.0) < 1e-6:
        cn_val = math.copysign(cn_mag, cn_val)
    phi = math.atan2(sn_val, cn_val)
    if phi < 0.0:
        phi += 2.0 * math.pi
    half_pi = 0.5 * math.pi
    if phi <= half_pi:
        theta = _amplitude_integral(phi, rho, rho_c)
    elif phi <= math.pi:
        theta = 2.0 * k - _amplitude_integral(math.pi - phi, rho, rho_c)
    elif phi <= 3.0 * half_pi:
        theta = 2.0 * k + _amplitude_integral(phi - math.pi, rho, rho_c)
    else:
        theta = 4.0 * k - _amplitude_integral(2.0 * math.pi - phi, rho, rho_c)
    return 0.0 if theta >= 4.0 * k else theta


def phase_from_pair(rho: float, sn_val: float, cn_val: float, rho_c: float | None = None) -> float:
    """Unique phase in [0, 4K) where sn equals ``sn_val`` and cn has the sign of ``cn_val``.

    ``cn_val`` may be the full cn value or just a sign. When ``(sn_val, cn_val)``
    lies on the unit circle the pair is used as is, which keeps the inversion
    well conditioned near sn = +-1. The phase is the incomplete integral
    F(phi) of the amplitude phi = atan2(sn, cn), extended past pi/2 by the
    same reflections as sn and cn.
    """
    rho_c = _complement(rho, rho_c)
    return _phase(sn_val, cn_val, rho, rho_c, quarter_period(rho, rho_c))


def advance(rho: float, sn0: float, cn0: float, shift, rho_c: float | None = None):
    """``(sn, cn, dn, theta0)`` at ``theta0 + shift`` where theta0 is the phase of ``(sn0, cn0)``.

    Equivalent to ``jacobi(rho, phase_from_pair(rho, sn0, cn0) + shift)`` but
    runs the AGM iteration once.
    """
    rho_c = _complement(rho, rho_c)
    a_n, ratios = _landen(rho, rho_c)
    k = math.pi / (2.0 * a_n)
    theta0 = _phase(sn0, cn0, rho, rho_c, k)
    sn, cn, dn = _evaluate(theta0 + shift, a_n, ratios, rho_c, k)
    return sn, cn, dn, theta0


def reference_incomplete(rho: float, s: float) -> float:
    """Slow quadrature of T(s) after the substitution b = sin(phi); cross-check only."""
    from scipy.integrate import quad

    value, _ = quad(
        lambda p: 1.0 / math.sqrt(1.0 - rho * math.sin(p) ** 2),
        0.0,
        math.asin(s),
        epsabs=0.0,
        epsrel=1e-13,
        limit=200,
    )
    return value


def reference_jacobi(rho: float, x: float) -> tuple[float, float, float]:
    """Slow sn, cn, dn by root-finding on the quadrature of T; cross-check only."""
    from scipy.optimize import brentq

    k = reference_incomplete(rho, 1.0)
    r = math.fmod(x, 4.0 * k)
    if r < 0.0:
        r += 4.0 * k
    quadrant = min(int(r // k), 3)
    u = [r, 2.0 * k - r, r - 2.0 * k, 4.0 * k - r][quadrant]
    u = min(max(u, 0.0), k)
    if u >= k:
        sn = 1.0
    else:
        sn = brentq(lambda s: reference_incomplete(rho, s) - u, 0.0, 1.0, xtol=1e-15, rtol=1e-15)
    cn = math.sqrt(max(0.0, 1.0 - sn * sn))
    dn = math.sqrt(1.0 - rho * sn * sn)
    if quadrant >= 2:
        sn = -sn
    if quadrant in (1, 2):
        cn = -cn
    return sn, cn, dn
