"""Seeded Monte Carlo simulation of phase-quantized channels.

Randomness comes from numpy's Philox4x64 counter-based generator. Samples
are produced in fixed-size shards; shard ``k`` of a run with seed ``s`` uses
the stream ``SeedSequence(s, spawn_key=(k,))``. Counts therefore depend only
on ``(seed, num_samples, shard_size)`` and never on how many workers ran
the shards.

Gaussian variates use the Marsaglia polar method.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .exceptions import DomainError
from .models import (
    ChannelModel,
    FixedGain,
    InputDistribution,
    NoncoherentRician,
    RayleighCSIR,
    RayleighCSIT,
)
from .phase_quantizer import QuantizerConfig, _as_config, entropy_w, quantize_phase

__all__ = [
    "SimConfig",
    "EmpiricalHistogram",
    "make_rng",
    "standard_normal_polar",
    "complex_normal",
    "sample_channel",
    "empirical_mutual_information",
    "mutual_information_stderr",
    "circular_sum_uniformity",
    "ks_band",
    "gaussian_input_rate",
]

DEFAULT_SHARD_SIZE = 1 << 20


def make_rng(seed, stream=0):
    """Philox generator for ``(seed, stream)``; distinct streams never overlap."""
    ok = isinstance(seed, (int, np.integer)) and not isinstance(seed, bool)
    if not ok or seed < 0 or seed >= 2 ** 64:
        raise DomainError("seed must be an integer in [0, 2^64)")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.Philox(ss))


def standard_normal_polar(rng, n):
    """``n`` standard normal variates by the Marsaglia polar method."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        # acceptance rate is pi/4 and each accepted pair gives two variates
        m = int(need / 2 / (math.pi / 4) * 1.05) + 8
        u = 2.0 * rng.random(m) - 1.0
        v = 2.0 * rng.random(m) - 1.0
        s = u * u + v * v
        ok = (s > 0.0) & (s < 1.0)
        u, v, s = u[ok], v[ok], s[ok]
        scale = np.sqrt(-2.0 * np.log(s) / s)
        z = np.column_stack([u * scale, v * scale]).ravel()[:need]
        out[filled:filled + z.size] = z
        filled += z.size
    return out


def complex_normal(rng, n, variance=1.0):
    """``n`` draws of ``CN(0, variance)``: real and imaginary parts each ``variance / 2``."""
    z = standard_normal_polar(rng, 2 * n)
    return math.sqrt(variance / 2.0) * (z[:n] + 1j * z[n:])


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a simulation run.

    ``gain_bins`` and ``phase_bins`` control the fading strata used when the
    receiver knows the channel (Rayleigh models); see :func:`sample_channel`.
    """

    seed: int
    num_samples: int
    model: ChannelModel
    input: InputDistribution
    quantizer: QuantizerConfig
    shard_size: int = DEFAULT_SHARD_SIZE
    gain_bins: int = 32
    phase_bins: int = 16

    def __post_init__(self):
        make_rng(self.seed)  # validates the seed
        if int(self.num_samples) != self.num_samples or self.num_samples < 1:
            raise DomainError("num_samples must be a positive integer")
        if self.shard_size < 1 or self.gain_bins < 1 or self.phase_bins < 1:
            raise DomainError("shard_size and bin counts must be >= 1")
        object.__setattr__(self, "quantizer", _as_config(self.quantizer))

    @property
    def known_gain(self) -> bool:
        return isinstance(self.model, RayleighCSIR)

    def strata_shape(self):
        if isinstance(self.model, RayleighCSIT):
            return (self.gain_bins,)
        if isinstance(self.model, RayleighCSIR):
            return (self.gain_bins, self.phase_bins)
        return ()


@dataclass
class EmpiricalHistogram:
    """Counts over ``(stratum..., input index, output)``.

    For channels without receiver-side fading knowledge there are no strata
    and ``counts`` is ``(num_inputs, 2^b)``.
    """

    counts: np.ndarray
    total: int = field(init=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(self.counts < 0):
            raise DomainError("counts must be nonnegative")
        self.total = int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.total

    def output_frequencies(self) -> np.ndarray:
        """Marginal frequencies of the quantizer output."""
        flat = self.counts.reshape(-1, self.counts.shape[-1])
        return flat.sum(axis=0) / self.total

    def __add__(self, other):
        return EmpiricalHistogram(self.counts + other.counts)


def _gain_edges(n):
    # equiprobable bins for |g|^2 / gamma^2 ~ Exp(1)
    q = np.arange(1, n) / n
    return -np.log1p(-q)


def _shard(cfg, shard, n):
    rng = make_rng(cfg.seed, shard)
    q = cfg.quantizer
    m = q.num_sectors
    probs = cfg.input.probabilities
    idx = np.searchsorted(np.cumsum(probs), rng.random(n) * math.fsum(probs), side="right")
    idx = np.minimum(idx, probs.size - 1)
    x = cfg.input.symbols()[idx]
    model = cfg.model
    sigma_sq = model.noise_power

    strata = []
    if isinstance(model, FixedGain):
        g = model.g_los
        if isinstance(model, NoncoherentRician) and model.gamma_sq > 0.0:
            g = g + complex_normal(rng, n, model.gamma_sq)
    else:
        g = complex_normal(rng, n, model.gamma_sq)
        u = np.abs(g) ** 2 / model.gamma_sq
        strata.append(np.searchsorted(_gain_edges(cfg.gain_bins), u, side="right"))
        if isinstance(model, RayleighCSIT):
            # transmitter removes the channel phase
            g = np.abs(g)
    v = g * x + complex_normal(rng, n, sigma_sq)
    y = quantize_phase(np.arctan2(v.imag, v.real), q)

    if isinstance(model, RayleighCSIR) and not isinstance(model, RayleighCSIT):
        # relabel outputs by the whole sectors contained in angle(g): the
        # channel from x to the relabelled output depends on |g| and the
        # residual angle tau in [0, 2 pi / 2^b) only
        ang = np.mod(np.arctan2(g.imag, g.real), 2.0 * math.pi)
        k = np.minimum(np.floor(ang / q.sector_width).astype(np.int64), m - 1)
        tau = ang - k * q.sector_width
        y = np.mod(y - k, m)
        strata.append(np.minimum((tau / q.sector_width * cfg.phase_bins).astype(np.int64),
                                 cfg.phase_bins - 1))

    shape = cfg.strata_shape() + (probs.size, m)
    flat = np.ravel_multi_index(tuple(strata) + (idx, y), shape)
    return np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape)


def _run_shard(args):
    cfg, shard, n = args
    return _shard(cfg, shard, n)


def sample_channel(cfg: SimConfig, workers: int = 1) -> EmpiricalHistogram:
    """Simulate ``V = G X + Z``, quantize the phase of ``V`` and count.

    Returns the joint histogram of input index and output. When the receiver
    knows a Rayleigh gain, counts are further split into strata: equiprobable
    bins of ``|g|^2``, and for receiver-only knowledge also bins of the
    residual channel angle within one sector, with the output relabelled by
    the whole-sector part of the angle. :func:`empirical_mutual_information`
    then gives the stratified estimate of ``I(X; Y | G)``.

    Parameters
    ----------
    cfg : SimConfig
    workers : int
        Processes used for the shards; the result does not depend on it.
    """
    sizes = [cfg.shard_size] * (cfg.num_samples // cfg.shard_size)
    if cfg.num_samples % cfg.shard_size:
        sizes.append(cfg.num_samples % cfg.shard_size)
    jobs = [(cfg, k, n) for k, n in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_shard, jobs))
    else:
        parts = [_run_shard(j) for j in jobs]
    return EmpiricalHistogram(np.sum(parts, axis=0))


def _plugin_mi(counts):
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    pxy = counts / n
    px = pxy.sum(axis=1, keepdims=True)
    py = pxy.sum(axis=0, keepdims=True)
    nz = pxy > 0
    return float(np.sum(pxy[nz] * np.log2(pxy[nz] / (px @ py)[nz])))


def empirical_mutual_information(hist: EmpiricalHistogram) -> float:
    """Plug-in mutual information (bits) of a joint count table.

    Leading axes, if any, are strata: the result is the stratum-weighted
    average of the per-stratum plug-in estimates.
    """
    counts = hist.counts.reshape(-1, *hist.counts.shape[-2:])
    if hist.total < 1:
        raise DomainError("histogram is empty")
    weights = counts.sum(axis=(1, 2)) / hist.total
    return float(sum(w * _plugin_mi(c) for w, c in zip(weights, counts) if w > 0))


def mutual_information_stderr(hist: EmpiricalHistogram) -> float:
    """Delta-method standard error of :func:`empirical_mutual_information`.

    Uses the sample variance of the pointwise information
    ``log2 p(x, y | s) / (p(x | s) p(y | s))`` over all samples.
    """
    counts = hist.counts.reshape(-1, *hist.counts.shape[-2:]).astype(float)
    n = hist.total
    if n < 2:
        return math.inf
    ns = counts.sum(axis=(1, 2), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pxy = counts / ns
        px = pxy.sum(axis=2, keepdims=True)
        py = pxy.sum(axis=1, keepdims=True)
        info = np.where(counts > 0, np.log2(pxy / (px * py)), 0.0)
    mean = np.sum(counts * info) / n
    var = np.sum(counts * info ** 2) / n - mean ** 2
    return math.sqrt(max(var, 0.0) / n)


def ks_band(n, level=0.99):
    """Critical value of the one-sample Kolmogorov-Smirnov statistic."""
    return float(stats.kstwo.ppf(level, int(n)))


def _circular_law(name, rng, n):
    if callable(name):
        return np.asarray(name(rng, n), dtype=float)
    if name == "point":
        return np.zeros(n)
    if name == "wrapped_gaussian":
        return 0.5 * standard_normal_polar(rng, n)
    if name == "two_point":
        return np.where(rng.random(n) < 0.5, 0.0, math.pi / 3.0)
    raise DomainError(f"unknown circular law {name!r}")


def circular_sum_uniformity(seed, n, law="wrapped_gaussian"):
    """KS distance from uniform of ``(U + T) mod 2 pi`` with ``U`` uniform.

    Parameters
    ----------
    seed : int
    n : int
        Number of samples, at least ``1e5``.
    law : {"point", "wrapped_gaussian", "two_point"} or callable
        Law of ``T``. ``"wrapped_gaussian"`` has standard deviation 0.5 and
        ``"two_point"`` is equiprobable on ``{0, pi/3}``. A callable gets
        ``(rng, n)`` and returns ``n`` angles.

    Returns
    -------
    float
        ``sup |F_n - F|`` with ``F`` the uniform CDF on ``[0, 2 pi)``.
    """
    if n < 100_000:
        raise DomainError("circular_sum_uniformity needs n >= 1e5")
    rng = make_rng(seed)
    u = 2.0 * math.pi * rng.random(n) - math.pi
    t = _circular_law(law, rng, n)
    s = np.sort(np.mod(u + t, 2.0 * math.pi) / (2.0 * math.pi))
    k = np.arange(1, n + 1)
    return float(max(np.max(k / n - s), np.max(s - (k - 1) / n)))


def gaussian_input_rate(snr, config, num_samples, seed, cond_samples=2000, g_los=1.0):
    """Monte Carlo rate of a circular Gaussian input ``CN(0, snr)`` at unit noise.

    ``I(X; Y) = H(Y) - E[w(|g x|^2, angle(g x))]``. ``H(Y)`` is the plug-in
    entropy of ``num_samples`` simulated outputs; the second term is the
    sample mean of ``w`` over the first ``cond_samples`` inputs.

    Returns
    -------
    (rate, stderr)
    """
    config = _as_config(config)
    rng = make_rng(seed)
    n = int(num_samples)
    g = complex(g_los)
    x = complex_normal(rng, n, snr)
    v = g * x + complex_normal(rng, n, 1.0)
    y = quantize_phase(np.arctan2(v.imag, v.real), config)
    py = np.bincount(y, minlength=config.num_sectors) / n
    nz = py > 0
    h_y = float(-np.sum(py[nz] * np.log2(py[nz])))
    info = -np.log2(np.where(nz, py, 1.0))[y]
    var_h = float(np.var(info)) / n

    gx = g * x[:min(int(cond_samples), n)]
    w = np.array([entropy_w(config, abs(z) ** 2, math.atan2(z.imag, z.real)) for z in gx])
    var_w = float(np.var(w, ddof=1)) / w.size if w.size > 1 else math.inf
    return h_y - float(w.mean()), math.sqrt(var_h + var_w)
