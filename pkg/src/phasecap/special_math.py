"""Scalar special functions, the phase density of a noisy unit phasor, and
an adaptive quadrature engine.

The density of the angle of ``sqrt(nu) + Z`` with ``Z ~ CN(0, 1)`` is

    f(phi | nu) = exp(-nu) / (2 pi)
                  + sqrt(nu) cos(phi) exp(-nu sin^2 phi) [1 - Q(sqrt(2 nu) cos(phi))] / sqrt(pi)

All functions here are pure and broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .exceptions import ConvergenceError, DomainError

__all__ = [
    "NU_MAX",
    "QuadratureSpec",
    "q_function",
    "phase_pdf",
    "phase_pdf_dnu",
    "phase_pdf_d2nu",
    "integrate",
    "integrate_intervals",
]

#: Largest SNR accepted by the density routines.
NU_MAX = 1.0e6

_SQRT_PI = np.sqrt(np.pi)
_TWO_PI = 2.0 * np.pi
# sqrt(2 nu)|cos phi| above which the cos(phi) < 0 branch switches to the
# asymptotic expansion of erfcx.
_SCALED_SWITCH = 25.0


def q_function(x):
    """Gaussian tail probability ``Q(x) = P(N(0, 1) > x)``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("q_function requires finite input")
    out = 0.5 * special.erfc(x / np.sqrt(2.0))
    return out if out.ndim else float(out)


def _check_nu(nu, strict=False):
    nu = np.asarray(nu, dtype=float)
    if not np.all(np.isfinite(nu)):
        raise DomainError("nu must be finite")
    if strict and np.any(nu <= 0.0):
        raise DomainError("nu must be > 0 for derivatives of the phase density")
    if np.any(nu < 0.0):
        raise DomainError("nu must be >= 0")
    if np.any(nu > NU_MAX):
        raise DomainError(f"nu above the supported range (max {NU_MAX:g})")
    return nu


def _neg_cos_core(t):
    """``1/(2 pi) - t erfcx(t) / (2 sqrt(pi))`` for ``t >= 0`` without cancellation.

    For large ``t`` the two terms agree to ``O(1/t^2)``; the asymptotic series
    of erfcx gives the difference directly.
    """
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    big = np.sqrt(2.0) * t > _SCALED_SWITCH
    small = ~big
    ts = t[small]
    out[small] = 1.0 / _TWO_PI - ts * special.erfcx(ts) / (2.0 * _SQRT_PI)
    if np.any(big):
        z = 1.0 / (2.0 * t[big] ** 2)
        # sum_{k>=1} (-1)^(k+1) (2k-1)!! z^k, truncated where terms are < 1e-17
        acc = np.zeros_like(z)
        term = np.ones_like(z)
        for k in range(1, 12):
            term = term * (2 * k - 1) * z
            acc += term if k % 2 else -term
        out[big] = acc / _TWO_PI
    return out


def phase_pdf(phi, nu):
    """Density of the received phase given SNR ``nu`` (zero transmitted phase).

    Parameters
    ----------
    phi : float or ndarray
        Angle in radians. The density is 2*pi periodic, so any real value is
        accepted.
    nu : float or ndarray
        Signal-to-noise ratio, ``0 <= nu <= 1e6``. Broadcasts against ``phi``.
    """
    nu = _check_nu(nu)
    phi = np.asarray(phi, dtype=float)
    phi, nu = np.broadcast_arrays(phi, nu)
    c = np.cos(phi)
    s2 = np.sin(phi) ** 2
    t = np.sqrt(nu) * c
    e = np.exp(-nu)
    out = np.empty(phi.shape)

    pos = c >= 0.0
    tp = t[pos]
    out[pos] = (e[pos] / _TWO_PI
                + tp * np.exp(-nu[pos] * s2[pos]) * special.ndtr(np.sqrt(2.0) * tp) / _SQRT_PI)
    neg = ~pos
    # exp(-nu s^2) * Q(sqrt(2 nu)|c|) == exp(-nu) * erfcx(sqrt(nu)|c|) / 2
    out[neg] = e[neg] * _neg_cos_core(-t[neg])
    return out if out.ndim else float(out)


def phase_pdf_dnu(phi, nu):
    """First derivative of :func:`phase_pdf` with respect to ``nu`` (``nu > 0``)."""
    nu = _check_nu(nu, strict=True)
    phi = np.asarray(phi, dtype=float)
    phi, nu = np.broadcast_arrays(phi, nu)
    c = np.cos(phi)
    s2 = np.sin(phi) ** 2
    rt = np.sqrt(nu)
    t = rt * c
    e = np.exp(-nu)
    out = np.empty(phi.shape)

    pos = c >= 0.0
    n, cp = nu[pos], c[pos]
    out[pos] = (cp * np.exp(-n * s2[pos]) * special.ndtr(np.sqrt(2.0) * t[pos])
                * (1.0 - 2.0 * n * s2[pos]) / (2.0 * _SQRT_PI * rt[pos])
                - e[pos] * s2[pos] / _TWO_PI)
    neg = ~pos
    n, ac = nu[neg], -c[neg]
    out[neg] = e[neg] * (ac * special.erfcx(-t[neg]) * (2.0 * n * s2[neg] - 1.0)
                         / (4.0 * _SQRT_PI * rt[neg])
                         - s2[neg] / _TWO_PI)
    return out if out.ndim else float(out)


def phase_pdf_d2nu(phi, nu):
    """Second derivative of :func:`phase_pdf` with respect to ``nu`` (``nu > 0``)."""
    nu = _check_nu(nu, strict=True)
    phi = np.asarray(phi, dtype=float)
    phi, nu = np.broadcast_arrays(phi, nu)
    c = np.cos(phi)
    s2 = np.sin(phi) ** 2
    rt = np.sqrt(nu)
    t = rt * c
    e = np.exp(-nu)
    poly = (2.0 * nu * s2 - 1.0) ** 2 - 2.0
    tail = e * (c * c / (2.0 * _TWO_PI * nu) + s2 * s2 / _TWO_PI)
    out = np.empty(phi.shape)

    pos = c >= 0.0
    out[pos] = (c[pos] * np.exp(-nu[pos] * s2[pos]) * special.ndtr(np.sqrt(2.0) * t[pos])
                * poly[pos] / (4.0 * _SQRT_PI * nu[pos] * rt[pos]) + tail[pos])
    neg = ~pos
    out[neg] = (-e[neg] * (-c[neg]) * special.erfcx(-t[neg]) * poly[neg]
                / (8.0 * _SQRT_PI * nu[neg] * rt[neg]) + tail[neg])
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budget for :func:`integrate`.

    ``max_subdivisions`` is the number of panel bisections allowed per
    requested interval.
    """

    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    max_subdivisions: int = 60

    def __post_init__(self):
        if not self.abs_tol > 0 or not self.rel_tol > 0:
            raise DomainError("quadrature tolerances must be positive")
        if self.max_subdivisions < 1:
            raise DomainError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureSpec()

# Embedded pair: 8-point and 16-point Gauss-Legendre on [-1, 1].
_LO_X, _LO_W = np.polynomial.legendre.leggauss(8)
_HI_X, _HI_W = np.polynomial.legendre.leggauss(16)
_NODES = np.concatenate([_LO_X, _HI_X])


def _panel_rule(f, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x), dtype=float)
    if fx.shape != x.shape:
        fx = np.broadcast_to(fx, x.shape)
    low = half * (fx[:, :8] @ _LO_W)
    high = half * (fx[:, 8:] @ _HI_W)
    return high, np.abs(high - low)


def integrate_intervals(f, intervals, spec=DEFAULT_QUADRATURE, breakpoints=(), abs_tol=None):
    """Integrate a vectorized ``f`` over several intervals at once.

    Each interval is first cut at any ``breakpoints`` strictly inside it, then
    panels are bisected until the embedded error estimate of every panel is
    below its share of ``max(abs_tol, rel_tol * |estimate|)``.

    Parameters
    ----------
    f : callable
        Maps an ndarray of abscissae to an ndarray of the same shape.
    intervals : sequence of (a, b)
        Integration limits with ``a <= b``.
    spec : QuadratureSpec
    breakpoints : sequence of float
        Points where the integrand is not smooth (e.g. a sharp peak).
    abs_tol : array_like, optional
        Per-interval absolute tolerances replacing ``spec.abs_tol``.

    Returns
    -------
    ndarray
        One integral per interval.
    """
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if not np.all(np.isfinite(iv)):
        raise DomainError("integration limits must be finite")
    if np.any(iv[:, 0] > iv[:, 1]):
        raise DomainError("integration requires a <= b")
    n = iv.shape[0]
    floor = np.broadcast_to(spec.abs_tol if abs_tol is None else np.asarray(abs_tol, float), (n,))
    bps = np.sort(np.asarray(breakpoints, dtype=float).ravel())

    a, b = iv[:, 0], iv[:, 1]
    first = np.searchsorted(bps, a, side="right")
    ncut = np.maximum(np.searchsorted(bps, b, side="left") - first, 0)
    pieces = np.where(a < b, ncut + 1, 0)
    owner = np.repeat(np.arange(n), pieces)
    j = np.arange(owner.size) - np.repeat(np.cumsum(pieces) - pieces, pieces)
    k = first[owner] + j
    lo = np.where(j == 0, a[owner], bps[np.minimum(k - 1, bps.size - 1)] if bps.size else 0.0)
    hi = np.where(j == ncut[owner], b[owner], bps[np.minimum(k, bps.size - 1)] if bps.size else 0.0)
    width = np.zeros(n)
    np.add.at(width, owner, hi - lo)

    done = np.zeros(n)
    done_err = np.zeros(n)
    splits = np.zeros(n, dtype=int)
    while lo.size:
        est, err = _panel_rule(f, lo, hi)
        total = done.copy()
        np.add.at(total, owner, est)
        tol = np.maximum(floor, spec.rel_tol * np.abs(total))
        ok = err <= tol[owner] * (hi - lo) / width[owner]
        np.add.at(done, owner[ok], est[ok])
        np.add.at(done_err, owner[ok], err[ok])
        bad = ~ok
        if not np.any(bad):
            break
        lo, hi, owner = lo[bad], hi[bad], owner[bad]
        np.add.at(splits, owner, 1)
        if np.any(splits > spec.max_subdivisions):
            pend_err = np.zeros(n)
            np.add.at(pend_err, owner, err[bad])
            raise ConvergenceError(
                "adaptive quadrature exhausted its subdivision budget",
                estimate=total if n > 1 else float(total[0]),
                error_bound=(done_err + pend_err) if n > 1 else float(done_err[0] + pend_err[0]),
            )
        mid = 0.5 * (lo + hi)
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        owner = np.concatenate([owner, owner])
    return done


def integrate(f, a, b, spec=DEFAULT_QUADRATURE, breakpoints=()):
    """Adaptive integral of ``f`` over ``[a, b]``.

    ``f`` should accept ndarrays; scalar-only callables are wrapped with
    :func:`numpy.vectorize`.
    """
    def g(x):
        try:
            y = np.asarray(f(x), dtype=float)
        except (TypeError, ValueError):
            return np.vectorize(f, otypes=[float])(x)
        if y.shape != np.shape(x):
            return np.vectorize(f, otypes=[float])(x)
        return y

    return float(integrate_intervals(g, [(a, b)], spec, breakpoints)[0])
