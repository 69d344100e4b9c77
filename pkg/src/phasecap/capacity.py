"""Mutual information, capacities and optimality certificates.

All information quantities are in bits. SNR arguments called ``nu`` are the
ratio ``|g|^2 alpha / sigma^2`` seen by a single mass point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .exceptions import ConvergenceError, DomainError
from .models import (
    FixedGain,
    InputDistribution,
    MassPoint,
    NoncoherentRician,
    RayleighCSIR,
    RayleighCSIT,
    wrap_phase,
)
from .phase_quantizer import (
    DEFAULT_QUADRATURE,
    SectorProbabilities,
    _as_config,
    entropy_w,
    entropy_w_dnu,
    sector_probs_all,
    sector_probs_batch,
    sector_probs_cumulative,
    w_min_prime,
)

__all__ = [
    "KtcReport",
    "channel_pmf_given_x",
    "mutual_information",
    "capacity_fixed_gain",
    "optimal_psk_input",
    "symmetrize_input",
    "capacity_rician_noncoherent",
    "ergodic_capacity_csir",
    "ergodic_capacity_phase_only",
    "ktc_check",
    "fading_nodes",
    "theta_nodes",
]

_TINY = 1e-300
#: Gauss-Laguerre order for expectations over ``|g|^2 / gamma^2 ~ Exp(1)``.
LAGUERRE_ORDER = 96
#: Gauss-Legendre order for the uniform channel-phase average over one sector.
THETA_ORDER = 64
_PHASE_TOL = 1e-12


@lru_cache(maxsize=None)
def _laguerre(order):
    x, w = np.polynomial.laguerre.laggauss(order)
    keep = w > 1e-25  # dropped weights contribute < 1e-24 * b in total
    return x[keep], w[keep]


def fading_nodes(order=LAGUERRE_ORDER):
    """Nodes and weights for ``E[h(U)]``, ``U ~ Exp(1)``.

    Nodes whose Gauss-Laguerre weight is below ``1e-25`` are dropped; with a
    bounded integrand this changes the result by less than ``1e-24`` times
    the bound.
    """
    x, w = _laguerre(int(order))
    return x.copy(), w.copy()


@lru_cache(maxsize=None)
def _legendre(order):
    return np.polynomial.legendre.leggauss(order)


def theta_nodes(config, order=THETA_ORDER):
    """Gauss-Legendre nodes on ``[0, 2 pi / 2^b)`` with weights summing to 1."""
    config = _as_config(config)
    x, w = _legendre(int(order))
    width = config.sector_width
    return 0.5 * width * (x + 1.0), 0.5 * w


def _entropy_rows(probs):
    probs = np.asarray(probs, dtype=float)
    safe = np.where(probs > _TINY, probs, 1.0)
    return -np.sum(probs * np.log2(safe), axis=-1)


def _mi_from_rows(rows, weights):
    """``H(sum_i p_i W_i) - sum_i p_i H(W_i)`` for rows ``W_i`` (last axis = output)."""
    py = np.tensordot(weights, rows, axes=([0], [0]))
    return float(_entropy_rows(py) - np.dot(weights, _entropy_rows(rows)))


def _check_power(P, name="P"):
    P = float(P)
    if not (math.isfinite(P) and P >= 0.0):
        raise DomainError(f"{name} must be finite and >= 0")
    return P


def _check_sigma(sigma_sq):
    s = float(sigma_sq)
    if not (math.isfinite(s) and s > 0.0):
        raise DomainError("sigma_sq must be > 0")
    return s


def channel_pmf_given_x(model, x, config, spec=DEFAULT_QUADRATURE):
    """Output PMF for one input symbol over a fixed-gain channel.

    Parameters
    ----------
    model : FixedGain
    x : MassPoint or complex
    config : QuantizerConfig or int

    Returns
    -------
    SectorProbabilities
    """
    if type(model) is not FixedGain:
        raise TypeError("channel_pmf_given_x needs a FixedGain model")
    config = _as_config(config)
    if not isinstance(x, MassPoint):
        x = complex(x)
        x = MassPoint(abs(x), math.atan2(x.imag, x.real), 1.0)
    nu = abs(model.g_los) ** 2 * x.power / model.noise_power
    theta = x.phase + math.atan2(model.g_los.imag, model.g_los.real)
    return sector_probs_all(config, nu, theta, spec)


def _point_snr_angle(dist, model):
    g = model.g_los
    alpha = dist.amplitudes ** 2
    angle = dist.phases + math.atan2(g.imag, g.real)
    if isinstance(model, NoncoherentRician):
        nu = abs(g) ** 2 * alpha / (model.gamma_sq * alpha + model.noise_power)
    else:
        nu = abs(g) ** 2 * alpha / model.noise_power
    return nu, angle


def _mi_direct(dist, model, config, spec):
    nu, angle = _point_snr_angle(dist, model)
    rows = np.array([sector_probs_all(config, n, t, spec).probs for n, t in zip(nu, angle)])
    return _mi_from_rows(rows, dist.probabilities)


def _amplitude_groups(dist):
    amps = dist.amplitudes
    for a in np.unique(amps):
        yield a, np.flatnonzero(amps == a)


def _mi_csir(dist, model, config, spec, order):
    """``E_G[I(X; Y | G)]`` with the channel phase averaged over one sector.

    Relabelling outputs by ``k`` sectors turns ``I(X;Y|G=g)`` into
    ``I(X;Y|G=g e^{j 2 pi k/2^b})``, so the uniform phase average only needs
    ``[0, 2 pi / 2^b)``.
    """
    u, wu = fading_nodes(order)
    th, wt = theta_nodes(config)
    m = config.num_sectors
    probs = dist.probabilities
    scale = model.gamma_sq / model.noise_power
    total = 0.0
    for uk, wk in zip(u, wu):
        py = np.zeros((th.size, m))
        h_cond = np.zeros(th.size)
        for a, idx in _amplitude_groups(dist):
            nu = uk * scale * a * a
            angles = dist.phases[idx][None, :] + th[:, None]
            rows = sector_probs_cumulative(config, nu, angles.ravel(), spec)
            rows = rows.reshape(th.size, idx.size, m)
            py += np.einsum("k,tky->ty", probs[idx], rows)
            h_cond += _entropy_rows(rows) @ probs[idx]
        total += wk * float(np.dot(wt, _entropy_rows(py) - h_cond))
    return total


def _mi_phase_compensated(dist, model, config, spec, order):
    u, wu = fading_nodes(order)
    probs = dist.probabilities
    scale = model.gamma_sq / model.noise_power
    total = 0.0
    for uk, wk in zip(u, wu):
        rows = np.zeros((len(dist), config.num_sectors))
        for a, idx in _amplitude_groups(dist):
            rows[idx] = sector_probs_batch(config, uk * scale * a * a, dist.phases[idx], spec)
        total += wk * _mi_from_rows(rows, probs)
    return total


def mutual_information(dist, model, config, spec=DEFAULT_QUADRATURE, order=LAGUERRE_ORDER):
    """Mutual information (bits) between the input and the quantizer output.

    Parameters
    ----------
    dist : InputDistribution
    model : FixedGain, NoncoherentRician, RayleighCSIR or RayleighCSIT
        For ``NoncoherentRician`` each mass point sees the effective SNR
        ``|g_los|^2 alpha / (gamma^2 alpha + sigma^2)`` and angle
        ``beta + angle(g_los)``. For ``RayleighCSIR`` the result is
        ``I(X; Y | G)`` averaged over the fading. For ``RayleighCSIT`` the
        transmitter removes the channel phase and keeps the input law fixed,
        so only ``|g|`` is averaged.
    config : QuantizerConfig or int
    order : int
        Gauss-Laguerre order for the fading average.
    """
    config = _as_config(config)
    if not isinstance(dist, InputDistribution):
        raise TypeError("dist must be an InputDistribution")
    if isinstance(model, FixedGain):
        return _mi_direct(dist, model, config, spec)
    if isinstance(model, RayleighCSIT):
        return _mi_phase_compensated(dist, model, config, spec, order)
    if isinstance(model, RayleighCSIR):
        return _mi_csir(dist, model, config, spec, order)
    raise TypeError(f"unsupported channel model {type(model).__name__}")


def capacity_fixed_gain(P, sigma_sq, g_los, config, spec=DEFAULT_QUADRATURE):
    """Capacity of the fixed-gain channel, ``b - w(|g|^2 P / sigma^2, pi / 2^b)``."""
    config = _as_config(config)
    nu = abs(complex(g_los)) ** 2 * _check_power(P) / _check_sigma(sigma_sq)
    return config.bits - entropy_w(config, nu, config.optimal_theta, spec)


def optimal_psk_input(P, g_los, config):
    """Equiprobable ``2^b``-PSK rotated so each point sits mid-sector after the channel."""
    config = _as_config(config)
    g = complex(g_los)
    offset = math.pi / config.num_sectors - math.atan2(g.imag, g.real)
    return InputDistribution.psk(config.num_sectors, _check_power(P), offset)


def symmetrize_input(dist, config):
    """Average of ``dist`` over rotations by multiples of one sector width.

    Coincident points (equal amplitude, phases within ``1e-12`` rad) are
    merged; all zero-amplitude points collapse into one.
    """
    config = _as_config(config)
    m = config.num_sectors
    amps = np.repeat(dist.amplitudes, m)
    phases = wrap_phase((dist.phases[:, None]
                         + config.sector_width * np.arange(m)[None, :]).ravel())
    probs = np.repeat(dist.probabilities / m, m)
    phases = np.where(amps == 0.0, 0.0, phases)

    merged_a, merged_ph, merged_p = [], [], []
    used = np.zeros(amps.size, dtype=bool)
    for i in range(amps.size):
        if used[i]:
            continue
        dphi = np.abs(wrap_phase(phases - phases[i]))
        same = ~used & (amps == amps[i]) & (dphi <= _PHASE_TOL)
        used |= same
        merged_a.append(amps[i])
        merged_ph.append(phases[i])
        merged_p.append(math.fsum(probs[same]))
    p = np.array(merged_p)
    return InputDistribution.from_arrays(merged_a, merged_ph, p / math.fsum(p))


def capacity_rician_noncoherent(P, sigma_sq, g_los, gamma_sq, config, spec=DEFAULT_QUADRATURE):
    """Capacity with a Rician gain unknown at both ends.

    Reduces to :func:`capacity_fixed_gain` at ``gamma_sq = 0``.
    """
    config = _as_config(config)
    P = _check_power(P)
    sigma_sq = _check_sigma(sigma_sq)
    gamma_sq = _check_power(gamma_sq, "gamma_sq")
    nu = abs(complex(g_los)) ** 2 * P / (gamma_sq * P + sigma_sq)
    return config.bits - entropy_w(config, nu, config.optimal_theta, spec)


def _fading_average(func, order, what):
    u, wu = fading_nodes(order)
    vals = np.empty(u.size)
    for k, uk in enumerate(u):
        try:
            vals[k] = func(uk)
        except ConvergenceError as exc:
            raise ConvergenceError(
                f"{what}: quadrature failed at |g|^2/gamma^2 = {uk:.6g}: {exc}",
                estimate=exc.estimate, error_bound=exc.error_bound) from exc
    return float(np.dot(wu, vals))


def ergodic_capacity_csir(P, sigma_sq, gamma_sq, config, spec=DEFAULT_QUADRATURE,
                          order=LAGUERRE_ORDER):
    """Ergodic capacity of Rayleigh fading with the gain known at the receiver only.

    Computed as ``b`` minus the fading and channel-phase average of ``w``.
    """
    config = _as_config(config)
    P = _check_power(P)
    scale = _check_power(gamma_sq, "gamma_sq") * P / _check_sigma(sigma_sq)
    if P == 0.0:
        return 0.0
    th, wt = theta_nodes(config)

    def avg_w(u):
        return float(np.dot(wt, _entropy_rows(sector_probs_batch(config, u * scale, th, spec))))

    return config.bits - _fading_average(avg_w, order, "ergodic_capacity_csir")


def ergodic_capacity_phase_only(P, sigma_sq, gamma_sq, config, spec=DEFAULT_QUADRATURE,
                                order=LAGUERRE_ORDER):
    """Ergodic capacity when the transmitter compensates the channel phase only.

    Power stays at ``P`` in every fading state.
    """
    config = _as_config(config)
    P = _check_power(P)
    scale = _check_power(gamma_sq, "gamma_sq") * P / _check_sigma(sigma_sq)
    if P == 0.0:
        return 0.0
    theta = config.optimal_theta
    return config.bits - _fading_average(
        lambda u: entropy_w(config, u * scale, theta, spec), order, "ergodic_capacity_phase_only")


@dataclass(frozen=True)
class KtcReport:
    """Kuhn-Tucker slack of a candidate input over an ``(alpha, beta')`` grid.

    ``slack[i, j]`` is ``C - b + mu (alpha_i - P) + w(|g|^2 alpha_i / sigma^2, beta'_j)``
    where ``beta'`` is the post-channel angle ``beta + angle(g_los)``.
    """

    mu: float
    capacity: float
    grid_min_slack: float
    slack_at_masspoints: list
    violating_points: list
    alphas: np.ndarray = field(repr=False)
    betas: np.ndarray = field(repr=False)
    slack: np.ndarray = field(repr=False)

    @property
    def satisfied(self) -> bool:
        return not self.violating_points


def ktc_check(dist, P, sigma_sq, g_los, config, alphas=None, betas=None, tol=1e-6,
              spec=DEFAULT_QUADRATURE):
    """Evaluate the Kuhn-Tucker slack of ``dist`` for the fixed-gain channel.

    The multiplier is the stationarity value at amplitude ``sqrt(P)``,
    ``mu = -(|g|^2 / sigma^2) dw/dnu(|g|^2 P / sigma^2, pi / 2^b)``, clamped
    at zero.

    Parameters
    ----------
    dist : InputDistribution
        Candidate optimum.
    alphas, betas : array_like, optional
        Grid of powers and post-channel angles. Defaults: 200 powers on
        ``[0, 4P]`` and 256 angles on ``[-pi, pi)``.
    tol : float
        Grid points with slack below ``-tol`` are reported as violations.
    """
    config = _as_config(config)
    P = _check_power(P)
    sigma_sq = _check_sigma(sigma_sq)
    g = complex(g_los)
    gain = abs(g) ** 2 / sigma_sq
    alphas = np.linspace(0.0, 4.0 * P, 200) if alphas is None else np.asarray(alphas, float)
    betas = (np.linspace(-math.pi, math.pi, 256, endpoint=False) if betas is None
             else np.asarray(betas, float))
    if np.any(alphas < 0):
        raise DomainError("alpha grid must be >= 0")

    nu_star = gain * P
    if nu_star > 0.0:
        slope = entropy_w_dnu(config, nu_star, config.optimal_theta, spec)
    else:
        slope = w_min_prime(config)
    mu = max(-gain * slope, 0.0)
    cap = mutual_information(dist, FixedGain(sigma_sq, g), config, spec)
    offset = cap - config.bits

    slack = np.empty((alphas.size, betas.size))
    for i, a in enumerate(alphas):
        w_row = _entropy_rows(sector_probs_batch(config, gain * a, betas, spec))
        slack[i] = offset + mu * (a - P) + w_row
    ang = math.atan2(g.imag, g.real)
    at_points = [offset + mu * (p.power - P) + entropy_w(config, gain * p.power, p.phase + ang, spec)
                 for p in dist]
    bad = np.argwhere(slack < -tol)
    violating = [(float(alphas[i]), float(betas[j])) for i, j in bad]
    return KtcReport(mu=float(mu), capacity=float(cap), grid_min_slack=float(slack.min()),
                     slack_at_masspoints=[float(s) for s in at_points],
                     violating_points=violating, alphas=alphas, betas=betas, slack=slack)
