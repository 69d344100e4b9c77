"""Geometry and output statistics of a uniform b-bit phase quantizer.

Output ``y`` covers the half-open arc ``[2 pi y / 2^b - pi, 2 pi (y + 1) / 2^b - pi)``.
For a noiseless input ``sqrt(nu) exp(j theta)`` in unit-variance complex
Gaussian noise, ``sector_prob`` returns ``P(Y = y)`` and ``entropy_w`` the
entropy (bits) of that output distribution.

Everything is O(2^b) per evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .exceptions import DomainError, SolverError
from .special_math import (
    DEFAULT_QUADRATURE,
    QuadratureSpec,
    NU_MAX,
    integrate_intervals,
    phase_pdf,
    phase_pdf_dnu,
)

__all__ = [
    "MAX_BITS",
    "QuantizerConfig",
    "SectorProbabilities",
    "sector_bounds",
    "sector_prob",
    "sector_probs_all",
    "sector_probs_dnu",
    "sector_probs_batch",
    "sector_probs_cumulative",
    "entropy_w_batch",
    "entropy_w",
    "entropy_w_dnu",
    "entropy_w_dnu_fd",
    "w_min_prime",
    "entropy_w_dnu_inverse",
    "quantize_phase",
]

MAX_BITS = 16
_TWO_PI = 2.0 * math.pi
_TINY = 1e-300
_MERGE_TOL = 1e-13


@dataclass(frozen=True)
class QuantizerConfig:
    """Resolution of the phase quantizer."""

    bits: int
    num_sectors: int = field(init=False)
    sector_width: float = field(init=False)

    def __post_init__(self):
        if isinstance(self.bits, bool) or int(self.bits) != self.bits:
            raise DomainError("bits must be an integer")
        if not 1 <= self.bits <= MAX_BITS:
            raise DomainError(f"bits must lie in [1, {MAX_BITS}]")
        object.__setattr__(self, "bits", int(self.bits))
        object.__setattr__(self, "num_sectors", 2 ** self.bits)
        object.__setattr__(self, "sector_width", _TWO_PI / 2 ** self.bits)

    @property
    def optimal_theta(self):
        """Angle ``pi / 2^b`` that centres the input on a sector."""
        return math.pi / self.num_sectors


def _as_config(config):
    return config if isinstance(config, QuantizerConfig) else QuantizerConfig(config)


@dataclass(frozen=True)
class SectorProbabilities:
    """Output PMF of the quantizer for one ``(nu, theta)``."""

    config: QuantizerConfig
    nu: float
    theta: float
    probs: np.ndarray

    @property
    def total(self):
        return float(self.probs.sum())

    def __getitem__(self, y):
        return self.probs[y]

    def __len__(self):
        return len(self.probs)


def sector_bounds(config, y):
    """Base arc of output ``y`` (``theta = 0``) as ``(lo, hi)`` radians."""
    config = _as_config(config)
    if isinstance(y, bool) or int(y) != y or not 0 <= y < config.num_sectors:
        raise IndexError(f"sector index {y} out of range for b={config.bits}")
    lo = config.sector_width * y - math.pi
    return lo, lo + config.sector_width


def quantize_phase(angles, config):
    """Map angles (radians, any real value) to quantizer outputs.

    Uses the half-open arcs of :func:`sector_bounds`, so an angle exactly on a
    boundary goes to the sector whose lower edge it is.
    """
    config = _as_config(config)
    a = np.asarray(angles, dtype=float)
    shifted = np.mod(a + math.pi, _TWO_PI)
    y = np.floor(shifted / config.sector_width).astype(np.int64)
    return np.minimum(y, config.num_sectors - 1)


def _check_theta(theta):
    theta = float(theta)
    if not math.isfinite(theta):
        raise DomainError("theta must be finite")
    return theta


def _check_nu(nu, positive=False):
    nu = float(nu)
    if not math.isfinite(nu) or nu < 0.0 or (positive and nu == 0.0):
        raise DomainError(f"nu must be {'>' if positive else '>='} 0, got {nu}")
    if nu > NU_MAX:
        raise DomainError(f"nu above the supported range (max {NU_MAX:g})")
    return nu


def _arcs(config, theta):
    """Integration arcs of every output after the ``-theta`` shift."""
    lo = config.sector_width * np.arange(config.num_sectors) - math.pi - theta
    return np.column_stack([lo, lo + config.sector_width])


def _peak_breaks(arcs, nu):
    """Break points at the density peaks (multiples of 2 pi) and around them.

    The peak has width ~ 1/sqrt(nu); the extra points keep the first panels
    from stepping over it at high SNR.
    """
    m = np.arange(math.floor(arcs.min() / _TWO_PI), math.ceil(arcs.max() / _TWO_PI) + 1)
    centres = _TWO_PI * m
    if nu <= 4.0:
        return centres
    scale = 1.0 / math.sqrt(nu)
    offs = scale * np.array([0.5, 2.0, 6.0, 20.0])
    offs = offs[offs < 1.0]
    return np.concatenate([centres] + [centres + s * o for o in offs for s in (-1.0, 1.0)])


def _integrate_sectors(density, config, nu, theta, spec):
    arcs = _arcs(config, theta)
    return integrate_intervals(lambda x: density(x, nu), arcs, spec,
                               breakpoints=_peak_breaks(arcs, nu))


def sector_prob(config, y, nu, theta, spec=DEFAULT_QUADRATURE):
    """Probability that the quantizer outputs ``y``."""
    config = _as_config(config)
    lo, hi = sector_bounds(config, y)
    nu = _check_nu(nu)
    theta = _check_theta(theta)
    if nu == 0.0:
        return 1.0 / config.num_sectors
    arc = np.array([[lo - theta, hi - theta]])
    val = integrate_intervals(lambda x: phase_pdf(x, nu), arc, spec,
                              breakpoints=_peak_breaks(arc, nu))[0]
    return float(min(max(val, 0.0), 1.0))


def sector_probs_all(config, nu, theta, spec=DEFAULT_QUADRATURE):
    """All ``2^b`` output probabilities; the raw sum is not renormalized."""
    config = _as_config(config)
    nu = _check_nu(nu)
    theta = _check_theta(theta)
    if nu == 0.0:
        probs = np.full(config.num_sectors, 1.0 / config.num_sectors)
    else:
        probs = np.clip(_integrate_sectors(phase_pdf, config, nu, theta, spec), 0.0, 1.0)
    return SectorProbabilities(config, nu, theta, probs)


def sector_probs_batch(config, nu, thetas, spec=DEFAULT_QUADRATURE):
    """Output PMFs for one ``nu`` and many input angles, shape ``(len(thetas), 2^b)``.

    All arcs go through a single quadrature call, which is much faster than
    looping over :func:`sector_probs_all`.
    """
    config = _as_config(config)
    nu = _check_nu(nu)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if not np.all(np.isfinite(thetas)):
        raise DomainError("theta must be finite")
    m = config.num_sectors
    if nu == 0.0 or thetas.size == 0:
        return np.full((thetas.size, m), 1.0 / m)
    base = config.sector_width * np.arange(m) - math.pi
    lo = (base[None, :] - thetas[:, None]).ravel()
    arcs = np.column_stack([lo, lo + config.sector_width])
    vals = integrate_intervals(lambda x: phase_pdf(x, nu), arcs, spec,
                               breakpoints=_peak_breaks(arcs, nu))
    return np.clip(vals.reshape(thetas.size, m), 0.0, 1.0)


def sector_probs_cumulative(config, nu, thetas, spec=DEFAULT_QUADRATURE):
    """Same result as :func:`sector_probs_batch`, via one cumulative table.

    Every arc endpoint of every angle is wrapped into ``[-pi, pi)`` and the
    density is integrated once over each gap between consecutive endpoints.
    Sector probabilities are then differences of the running sum. When many
    angles share endpoints (dense PSK constellations, angle grids) this needs
    far fewer density evaluations than integrating each arc separately.

    Probabilities are accurate to ~1e-16 absolute rather than relative, which
    is ample for entropies but not for resolving far-tail sectors at high SNR.
    """
    config = _as_config(config)
    nu = _check_nu(nu)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if not np.all(np.isfinite(thetas)):
        raise DomainError("theta must be finite")
    m = config.num_sectors
    if nu == 0.0 or thetas.size == 0:
        return np.full((thetas.size, m), 1.0 / m)
    base = config.sector_width * np.arange(m) - math.pi
    ends = np.mod(base[None, :] - thetas[:, None] + math.pi, _TWO_PI) - math.pi
    breaks = _peak_breaks(np.array([[-math.pi, math.pi]]), nu)
    breaks = breaks[(breaks > -math.pi) & (breaks < math.pi)]
    pts = np.concatenate([ends.ravel(), [-math.pi, math.pi], breaks])
    # endpoints closer than _MERGE_TOL are float noise of one another; give
    # them a common grid point
    order = np.argsort(pts, kind="stable")
    srt = pts[order]
    fresh = np.concatenate([[True], np.diff(srt) > _MERGE_TOL])
    grid = srt[fresh]
    cluster = np.empty(pts.size, dtype=np.int64)
    cluster[order] = np.cumsum(fresh) - 1
    lo = cluster[:ends.size].reshape(ends.shape)

    gaps = np.column_stack([grid[:-1], grid[1:]])
    gap_spec = QuadratureSpec(max(spec.abs_tol / len(gaps), 1e-18), spec.rel_tol,
                              spec.max_subdivisions)
    cum = np.concatenate([[0.0], np.cumsum(integrate_intervals(
        lambda x: phase_pdf(x, nu), gaps, gap_spec))])
    hi = np.roll(lo, -1, axis=1)
    probs = cum[hi] - cum[lo]
    wrapped = hi < lo
    probs[wrapped] += cum[-1]
    return np.clip(probs, 0.0, 1.0)


def entropy_w_batch(config, nu, thetas, spec=DEFAULT_QUADRATURE):
    """:func:`entropy_w` for one ``nu`` and an array of angles."""
    probs = sector_probs_batch(config, nu, thetas, spec)
    safe = np.where(probs > _TINY, probs, 1.0)
    return -np.sum(probs * np.log2(safe), axis=1)


def sector_probs_dnu(config, nu, theta, spec=DEFAULT_QUADRATURE):
    """Derivative of every output probability with respect to ``nu``.

    The arcs do not depend on ``nu``, so each derivative is the arc integral
    of :func:`~phasecap.special_math.phase_pdf_dnu`.
    """
    config = _as_config(config)
    nu = _check_nu(nu, positive=True)
    theta = _check_theta(theta)
    return _integrate_sectors(phase_pdf_dnu, config, nu, theta, spec)


def _entropy_bits(p):
    p = np.asarray(p, dtype=float)
    p = p[p > _TINY]
    return float(-np.sum(p * np.log2(p)))


def entropy_w(config, nu, theta, spec=DEFAULT_QUADRATURE):
    """Entropy in bits of the quantizer output for input ``sqrt(nu) e^{j theta}``."""
    config = _as_config(config)
    if float(nu) == 0.0:
        _check_theta(theta)
        return float(config.bits)
    return _entropy_bits(sector_probs_all(config, nu, theta, spec).probs)


def _folded_pieces(arcs):
    """Rewrite arcs as intervals in ``[0, 3 pi / 2]`` using the density's symmetry.

    Each arc is shifted by a multiple of 2 pi so its midpoint lies in
    ``[-pi, pi]``, reflected to a nonnegative midpoint, and split at 0 if it
    contains the peak. Mirror-image arcs then integrate over identical
    intervals and come out bitwise equal, which keeps their contributions to
    the entropy derivative cancelling exactly.

    Returns
    -------
    pieces : ndarray, shape (k, 2)
    owner : ndarray of int
        Arc index of each piece.
    """
    lo, hi = arcs[:, 0], arcs[:, 1]
    shift = _TWO_PI * np.round(0.5 * (lo + hi) / _TWO_PI)
    lo, hi = lo - shift, hi - shift
    neg = lo + hi < 0.0
    lo, hi = np.where(neg, -hi, lo), np.where(neg, -lo, hi)
    cross = lo < 0.0
    idx = np.arange(arcs.shape[0])
    pieces = np.concatenate([np.column_stack([np.where(cross, 0.0, lo), hi]),
                             np.column_stack([np.zeros(cross.sum()), -lo[cross]])])
    return pieces, np.concatenate([idx, idx[cross]])


def _entropy_dnu_from(p, dp):
    # sum_y dW_y * log2(W_ref / W_y): exact rewrite of -sum (1 + ln W) dW / ln 2
    # using sum dW = 0; the reference is the most likely output.
    ref = int(np.argmax(p))
    keep = p > _TINY
    keep[ref] = False
    return float(np.sum(dp[keep] * np.log2(p[ref] / p[keep])))


def entropy_w_dnu(config, nu, theta, spec=DEFAULT_QUADRATURE):
    """Derivative of :func:`entropy_w` with respect to ``nu`` (bits per unit SNR).

    The most likely output drops out of the derivative formula. All other
    arcs are integrated to relative accuracy only, so the result keeps its
    relative precision when the derivative is tiny at high SNR. The
    derivative of an arc may cancel to zero by symmetry, so its tolerance
    has a floor proportional to the arc's own probability. Each arc is first
    folded onto a canonical interval of the even density, so mirror-image
    arcs give bitwise equal results and their contributions cancel exactly.
    """
    config = _as_config(config)
    nu = _check_nu(nu, positive=True)
    theta = _check_theta(theta)
    pieces, owner = _folded_pieces(_arcs(config, theta))
    m = config.num_sectors
    tight = QuadratureSpec(_TINY, spec.rel_tol, spec.max_subdivisions)
    breaks = _peak_breaks(pieces, nu)
    pp = integrate_intervals(lambda x: phase_pdf(x, nu), pieces, tight, breaks)
    dpp = integrate_intervals(lambda x: phase_pdf_dnu(x, nu), pieces, tight, breaks,
                              abs_tol=np.maximum(spec.rel_tol * pp, _TINY))
    p = np.bincount(owner, weights=pp, minlength=m)
    dp = np.bincount(owner, weights=dpp, minlength=m)
    return _entropy_dnu_from(p, dp)


def entropy_w_dnu_fd(config, nu, theta, step=None, spec=DEFAULT_QUADRATURE):
    """Central finite difference of :func:`entropy_w`; for cross-checks only."""
    nu = _check_nu(nu, positive=True)
    h = step if step is not None else 1e-5 * max(nu, 1e-2)
    h = min(h, 0.5 * nu)
    return (entropy_w(config, nu + h, theta, spec) - entropy_w(config, nu - h, theta, spec)) / (2 * h)


def w_min_prime(config, unit="bits"):
    """Limit of ``d entropy_w / d nu`` at ``nu -> 0+`` for ``theta = pi / 2^b``.

    The low-SNR expansion gives
    ``-(M sin^2(pi/M) / (2 pi)) * sum_y cos^2(c_y)`` nats, with ``M = 2^b`` and
    ``c_y`` the arc centres relative to the input. For ``b >= 2`` the cosine
    sum is ``M / 2`` and this reduces to ``-2^(2b-1) sin^2(pi/2^b) / (2 pi)``;
    for ``b = 1`` the two arc centres sit on the real axis and the sum is 2.

    Parameters
    ----------
    unit : {"bits", "nats"}
        ``"bits"`` matches :func:`entropy_w_dnu`.
    """
    config = _as_config(config)
    m = config.num_sectors
    centres = _arcs(config, config.optimal_theta).mean(axis=1)
    nats = -(m * math.sin(math.pi / m) ** 2 / _TWO_PI) * float(np.sum(np.cos(centres) ** 2))
    if unit == "nats":
        return nats
    if unit == "bits":
        return nats / math.log(2.0)
    raise ValueError(f"unknown unit {unit!r}")


def entropy_w_dnu_inverse(config, target, theta=None, spec=DEFAULT_QUADRATURE, bracket=None):
    """SNR at which ``entropy_w_dnu`` equals ``target``.

    ``entropy_w_dnu`` increases strictly from ``w_min_prime`` (at 0+) towards 0,
    so the inverse exists for ``w_min_prime < target < 0``.

    Parameters
    ----------
    target : float
        Bits per unit SNR, in ``(w_min_prime(config), 0)``.
    theta : float, optional
        Input angle, default ``pi / 2^b``.
    bracket : (float, float), optional
        Guess ``(lo, hi)`` for the root. It is used only if the derivative
        changes sign across it; otherwise the default search runs.

    Raises
    ------
    DomainError
        If ``target`` is outside ``(w_min_prime, 0)``.
    SolverError
        If no upper bracket is found below ``nu = 1e6``.
    """
    config = _as_config(config)
    theta = config.optimal_theta if theta is None else _check_theta(theta)
    target = float(target)
    wmin = w_min_prime(config)
    if not wmin < target < 0.0:
        raise DomainError(f"target {target} outside ({wmin}, 0)")

    def g(nu):
        return entropy_w_dnu(config, nu, theta, spec) - target

    if bracket is not None:
        lo, hi = (max(float(v), 1e-12) for v in bracket)
        if lo < hi <= NU_MAX and g(lo) < 0.0 < g(hi):
            return float(optimize.brentq(g, lo, hi, xtol=1e-13, rtol=1e-12, maxiter=200))

    lo = 1e-12
    if g(lo) >= 0.0:
        return lo
    hi, trace = 1.0, []
    while True:
        val = g(hi)
        trace.append((hi, val))
        if val > 0.0:
            break
        if hi >= NU_MAX:
            raise SolverError(f"no bracket for target {target} below nu={NU_MAX:g}", trace)
        lo = hi
        hi = min(2.0 * hi, NU_MAX)
    root = optimize.brentq(g, lo, hi, xtol=1e-13, rtol=1e-12, maxiter=200)
    return float(root)
