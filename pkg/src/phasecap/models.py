"""Input distributions and channel descriptions.

Channels follow ``V = G X + Z`` with ``Z ~ CN(0, noise_power)``; the
receiver only sees the quantized phase of ``V``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DomainError

__all__ = [
    "MassPoint",
    "InputDistribution",
    "ChannelModel",
    "FixedGain",
    "NoncoherentRician",
    "RayleighCSIR",
    "RayleighCSIT",
    "wrap_phase",
]

_PROB_TOL = 1e-12


def wrap_phase(phase):
    """Wrap angles into ``[-pi, pi)``."""
    out = np.mod(np.asarray(phase, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MassPoint:
    """One input symbol ``amplitude * exp(j phase)`` with its probability."""

    amplitude: float
    phase: float
    probability: float

    def __post_init__(self):
        amp, ph, p = float(self.amplitude), float(self.phase), float(self.probability)
        if not (math.isfinite(amp) and math.isfinite(ph) and math.isfinite(p)):
            raise DomainError("mass point fields must be finite")
        if amp < 0.0:
            raise DomainError("amplitude must be >= 0")
        if not 0.0 < p <= 1.0:
            raise DomainError("probability must lie in (0, 1]")
        object.__setattr__(self, "amplitude", amp)
        object.__setattr__(self, "phase", wrap_phase(ph))
        object.__setattr__(self, "probability", p)

    @property
    def power(self) -> float:
        return self.amplitude ** 2

    @property
    def symbol(self) -> complex:
        return self.amplitude * complex(math.cos(self.phase), math.sin(self.phase))


class InputDistribution:
    """Finitely supported input law.

    Parameters
    ----------
    points : iterable of MassPoint
        Probabilities must sum to one within ``1e-12``.
    """

    def __init__(self, points: Iterable[MassPoint]):
        pts = tuple(points)
        if not pts:
            raise DomainError("an input distribution needs at least one mass point")
        if not all(isinstance(p, MassPoint) for p in pts):
            raise TypeError("points must be MassPoint instances")
        total = math.fsum(p.probability for p in pts)
        if abs(total - 1.0) > _PROB_TOL:
            raise DomainError(f"probabilities sum to {total!r}, not 1")
        self._points = pts

    @classmethod
    def from_arrays(cls, amplitudes, phases, probabilities) -> "InputDistribution":
        a, ph, p = np.broadcast_arrays(np.asarray(amplitudes, dtype=float),
                                       np.asarray(phases, dtype=float),
                                       np.asarray(probabilities, dtype=float))
        return cls(MassPoint(x, y, z) for x, y, z in zip(a.ravel(), ph.ravel(), p.ravel()))

    @classmethod
    def psk(cls, order: int, power: float, offset: float = 0.0) -> "InputDistribution":
        """Equiprobable ``order``-PSK at phases ``offset + 2 pi k / order``."""
        if int(order) != order or order < 1:
            raise DomainError("PSK order must be a positive integer")
        if not power >= 0.0:
            raise DomainError("power must be >= 0")
        k = np.arange(int(order))
        return cls.from_arrays(math.sqrt(power), offset + 2.0 * math.pi * k / order, 1.0 / order)

    @property
    def points(self) -> tuple[MassPoint, ...]:
        return self._points

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([p.amplitude for p in self._points])

    @property
    def phases(self) -> np.ndarray:
        return np.array([p.phase for p in self._points])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([p.probability for p in self._points])

    @property
    def avg_power(self) -> float:
        return float(np.sum(self.probabilities * self.amplitudes ** 2))

    def symbols(self) -> np.ndarray:
        return self.amplitudes * np.exp(1j * self.phases)

    def __len__(self):
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def __repr__(self):
        return f"InputDistribution({len(self)} points, avg_power={self.avg_power:.6g})"


@dataclass(frozen=True)
class ChannelModel:
    """Common part of every channel: the noise variance ``sigma^2``."""

    noise_power: float = 1.0

    def __post_init__(self):
        s = float(self.noise_power)
        if not (math.isfinite(s) and s > 0.0):
            raise DomainError("noise_power must be > 0")
        object.__setattr__(self, "noise_power", s)


def _check_gamma(gamma_sq, strict):
    g = float(gamma_sq)
    if not math.isfinite(g) or g < 0.0 or (strict and g == 0.0):
        raise DomainError(f"gamma_sq must be {'>' if strict else '>='} 0")
    return g


@dataclass(frozen=True)
class FixedGain(ChannelModel):
    """Deterministic gain ``g_los`` known at both ends."""

    g_los: complex = 1.0 + 0.0j

    def __post_init__(self):
        super().__post_init__()
        g = complex(self.g_los)
        if not (math.isfinite(g.real) and math.isfinite(g.imag)):
            raise DomainError("g_los must be finite")
        object.__setattr__(self, "g_los", g)


@dataclass(frozen=True)
class NoncoherentRician(FixedGain):
    """``G ~ CN(g_los, gamma_sq)`` redrawn every symbol, unknown at both ends."""

    gamma_sq: float = 0.0

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "gamma_sq", _check_gamma(self.gamma_sq, strict=False))

    @property
    def kappa(self) -> float:
        """Rician factor ``|g_los|^2 / gamma_sq`` (``inf`` without scattering)."""
        return abs(self.g_los) ** 2 / self.gamma_sq if self.gamma_sq > 0 else math.inf


@dataclass(frozen=True)
class RayleighCSIR(ChannelModel):
    """``G ~ CN(0, gamma_sq)``, known to the receiver only."""

    gamma_sq: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "gamma_sq", _check_gamma(self.gamma_sq, strict=True))


@dataclass(frozen=True)
class RayleighCSIT(RayleighCSIR):
    """``G ~ CN(0, gamma_sq)``, known to transmitter and receiver."""
