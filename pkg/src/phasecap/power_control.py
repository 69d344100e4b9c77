"""Optimal power allocation over Rayleigh fading with full channel knowledge.

The transmitter rotates its ``2^b``-PSK by the channel phase and spends

    P*(|g|^2) = (sigma^2 / |g|^2) * [dw/dnu]^{-1}(-sigma^2 eta / |g|^2)

in state ``g`` when ``|g|^2 > sigma^2 eta / |w'_min|`` and nothing otherwise.
``eta`` is set so that ``E[P*(|G|^2)] = P``.

Writing ``u = |g|^2 / gamma^2 ~ Exp(1)`` and ``u_c`` for the cut-off in
those units, the argument of the inverse is ``w'_min * u_c / u``, so the
whole policy is a function of ``u_c``; ``eta = gamma^2 |w'_min| u_c / sigma^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import interpolate, optimize

from .capacity import LAGUERRE_ORDER, fading_nodes
from .exceptions import DomainError, SolverError
from .phase_quantizer import (
    DEFAULT_QUADRATURE,
    NU_MAX,
    QuantizerConfig,
    _as_config,
    entropy_w,
    entropy_w_dnu,
    entropy_w_dnu_inverse,
    w_min_prime,
)

__all__ = ["PowerPolicy", "solve_power_policy", "ergodic_capacity_csit"]

_RESIDUAL_RTOL = 1e-4


@dataclass(frozen=True)
class PowerPolicy:
    """Solved CSIT power allocation.

    Attributes
    ----------
    eta : float
        Multiplier of the average-power constraint, under the convention
        that ``-sigma^2 eta / |g|^2`` is the argument of the inverse.
    cutoff_gain_sq : float
        ``sigma^2 eta / |w'_min|``; states with ``|g|^2`` at or below it get
        no power.
    constraint_residual : float
        ``E[P*] - P`` of the solved policy.
    """

    config: QuantizerConfig
    P: float
    sigma_sq: float
    gamma_sq: float
    eta: float
    cutoff_gain_sq: float
    constraint_residual: float
    trace: tuple = field(default=(), repr=False)
    _nodes: tuple = field(default=(), repr=False, compare=False)

    def snr(self, gain_sq):
        """Received SNR ``|g|^2 P*(|g|^2) / sigma^2`` in state ``gain_sq``."""
        g2 = float(gain_sq)
        if not (math.isfinite(g2) and g2 >= 0.0):
            raise DomainError("gain_sq must be finite and >= 0")
        if g2 <= self.cutoff_gain_sq:
            return 0.0
        wmin = w_min_prime(self.config)
        target = wmin * self.cutoff_gain_sq / g2
        if not target < 0.0:
            return NU_MAX
        return entropy_w_dnu_inverse(self.config, target, bracket=_table_bracket(self.config, target))

    def evaluate(self, gain_sq):
        """Allocated power ``P*(|g|^2)``; accepts scalars or arrays."""
        g2 = np.asarray(gain_sq, dtype=float)
        out = np.array([0.0 if v == 0.0 else self.sigma_sq * self.snr(v) / v for v in g2.ravel()])
        out = out.reshape(g2.shape)
        return out if out.ndim else float(out)

    __call__ = evaluate

    @property
    def evaluator(self):
        return self.evaluate


@lru_cache(maxsize=None)
def _dnu_table(bits):
    """``log nu`` against ``log(-dw/dnu)`` on a log grid, for fast inverses."""
    config = QuantizerConfig(bits)
    nu = np.logspace(-6, math.log10(3000.0), 240)
    d = np.array([-entropy_w_dnu(config, v, config.optimal_theta) for v in nu])
    x, y = np.log(d)[::-1], np.log(nu)[::-1]
    # -dw/dnu flattens towards |w'_min| as nu -> 0; keep the strictly monotone part
    keep = np.concatenate([[True], np.diff(x) > 0]) & np.isfinite(x)
    x, y = x[keep], y[keep]
    return interpolate.PchipInterpolator(x, y, extrapolate=True), float(x[0]), float(x[-1])


def _table_nu(config, target):
    spline, xmin, xmax = _dnu_table(config.bits)
    x = math.log(-target)
    return float(math.exp(spline(min(max(x, xmin), xmax))))


def _table_bracket(config, target):
    guess = _table_nu(config, target)
    return guess * (1.0 - 1e-3), guess * (1.0 + 1e-3)


def _snr_at_nodes(config, u_c, u, exact):
    wmin = w_min_prime(config)
    targets = wmin * u_c / u
    if exact:
        return np.array([entropy_w_dnu_inverse(config, t, bracket=_table_bracket(config, t))
                         for t in targets])
    return np.array([_table_nu(config, t) for t in targets])


def _mean_power(config, u_c, sigma_sq, gamma_sq, order, exact):
    s, w = fading_nodes(order)
    u = u_c + s
    nu = _snr_at_nodes(config, u_c, u, exact)
    return sigma_sq / gamma_sq * math.exp(-u_c) * float(np.dot(w, nu / u)), nu


def solve_power_policy(P, sigma_sq, gamma_sq, config, order=LAGUERRE_ORDER):
    """Solve the average-power constraint for the optimal CSIT policy.

    A decade scan over ``eta`` in ``[1e-8, 1e4] * |w'_min|`` brackets the root,
    using a tabulated inverse of ``dw/dnu``; the bracket is then refined with
    the exact inverse until ``E[P*]`` matches ``P``.

    Raises
    ------
    SolverError
        If the scan cannot bracket the constraint; ``trace`` lists the
        ``(eta, E[P*] - P)`` pairs tried.
    """
    config = _as_config(config)
    P, sigma_sq, gamma_sq = float(P), float(sigma_sq), float(gamma_sq)
    if not (math.isfinite(P) and P > 0.0):
        raise DomainError("P must be > 0")
    if not (sigma_sq > 0.0 and gamma_sq > 0.0):
        raise DomainError("sigma_sq and gamma_sq must be > 0")
    wabs = abs(w_min_prime(config))
    # eta -> u_c is linear
    to_uc = sigma_sq / (gamma_sq * wabs)

    def excess(log_eta, exact):
        return _mean_power(config, math.exp(log_eta) * to_uc, sigma_sq, gamma_sq,
                           order, exact)[0] - P

    trace = []
    grid = np.log(wabs) + np.log(10.0) * np.arange(4, -9, -1)
    prev = None
    for le in grid:
        val = excess(le, exact=False)
        trace.append((float(math.exp(le)), float(val)))
        if val > 0.0:
            break
        prev = le
    else:
        raise SolverError("could not bracket eta: E[P*] stays below P over the scan", trace)
    if prev is None:
        raise SolverError("could not bracket eta: E[P*] exceeds P over the scan", trace)
    le0 = optimize.brentq(lambda v: excess(v, False), le, prev, xtol=1e-12)

    # exact refinement on a narrow bracket around the tabulated root
    step = 1e-6
    lo, hi = le0 - step, le0 + step
    f_lo, f_hi = excess(lo, True), excess(hi, True)
    while f_lo < 0.0 or f_hi > 0.0:
        trace.append((float(math.exp(lo)), float(f_lo)))
        step *= 10.0
        if step > 10.0:
            raise SolverError("exact refinement of eta failed to bracket", trace)
        if f_lo < 0.0:
            lo, f_lo = le0 - step, excess(le0 - step, True)
        if f_hi > 0.0:
            hi, f_hi = le0 + step, excess(le0 + step, True)
    log_eta = optimize.brentq(lambda v: excess(v, True), lo, hi,
                              xtol=1e-10, rtol=1e-12)
    eta = math.exp(log_eta)
    u_c = eta * to_uc
    mean, nu = _mean_power(config, u_c, sigma_sq, gamma_sq, order, exact=True)
    residual = mean - P
    if abs(residual) > _RESIDUAL_RTOL * P:
        raise SolverError(f"constraint residual {residual:.3g} above tolerance", trace)
    return PowerPolicy(config, P, sigma_sq, gamma_sq, eta, sigma_sq * eta / wabs, residual,
                       tuple(trace), (order, u_c, nu))


def ergodic_capacity_csit(P, sigma_sq, gamma_sq, config, policy=None, spec=DEFAULT_QUADRATURE,
                          order=LAGUERRE_ORDER):
    """Ergodic capacity with phase compensation and optimal power control.

    ``b - E[w(|g|^2 P*(|g|^2) / sigma^2, pi / 2^b)]``; states below the
    cut-off contribute ``w = b``.
    """
    config = _as_config(config)
    if policy is None:
        policy = solve_power_policy(P, sigma_sq, gamma_sq, config, order)
    order, u_c, nu = policy._nodes
    _, w = fading_nodes(order)
    theta = config.optimal_theta
    gains = np.array([config.bits - entropy_w(config, v, theta, spec) for v in nu])
    return math.exp(-u_c) * float(np.dot(w, gains))
