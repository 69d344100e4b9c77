import math

import numpy as np
import pytest

from phasecap.exceptions import DomainError
from phasecap.models import (
    FixedGain,
    InputDistribution,
    MassPoint,
    NoncoherentRician,
    RayleighCSIR,
    RayleighCSIT,
    wrap_phase,
)

PI = math.pi


class TestWrapPhase:
    @pytest.mark.parametrize("x,expected", [(0.0, 0.0), (PI, -PI), (-PI, -PI), (3 * PI, -PI),
                                            (2 * PI + 0.5, 0.5), (-2.5 * PI, -0.5 * PI)])
    def test_values(self, x, expected):
        assert wrap_phase(x) == pytest.approx(expected, abs=1e-12)

    def test_array(self):
        x = np.linspace(-20, 20, 1001)
        w = wrap_phase(x)
        assert np.all((w >= -PI) & (w < PI))
        assert np.allclose(np.exp(1j * w), np.exp(1j * x), atol=1e-12)


class TestMassPoint:
    def test_fields(self):
        p = MassPoint(2.0, 3 * PI / 2, 0.5)
        assert p.phase == pytest.approx(-PI / 2)
        assert p.power == 4.0
        assert p.symbol == pytest.approx(-2j, abs=1e-15)

    @pytest.mark.parametrize("args", [(-1.0, 0.0, 0.5), (1.0, 0.0, 0.0), (1.0, 0.0, 1.5),
                                      (math.inf, 0.0, 0.5), (1.0, math.nan, 0.5)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            MassPoint(*args)

    def test_frozen(self):
        with pytest.raises(AttributeError):
            MassPoint(1.0, 0.0, 1.0).amplitude = 2.0


class TestInputDistribution:
    def test_psk(self):
        d = InputDistribution.psk(4, 2.0, offset=PI / 4)
        assert len(d) == 4
        assert d.avg_power == pytest.approx(2.0)
        assert d.probabilities == pytest.approx([0.25] * 4)
        assert np.sort(d.phases) == pytest.approx([-3 * PI / 4, -PI / 4, PI / 4, 3 * PI / 4])
        assert np.abs(d.symbols()) == pytest.approx([math.sqrt(2.0)] * 4)

    def test_avg_power_is_weighted_sum(self):
        d = InputDistribution.from_arrays([1.0, 2.0, 0.0], [0.0, 1.0, 2.0], [0.2, 0.3, 0.5])
        assert d.avg_power == 0.2 * 1.0 + 0.3 * 4.0

    def test_iteration(self):
        d = InputDistribution.psk(3, 1.0)
        assert [p.probability for p in d] == pytest.approx([1 / 3] * 3)

    def test_empty(self):
        with pytest.raises(DomainError):
            InputDistribution([])

    def test_bad_sum(self):
        with pytest.raises(DomainError):
            InputDistribution.from_arrays([1.0, 1.0], [0.0, 1.0], [0.5, 0.4])

    def test_wrong_type(self):
        with pytest.raises(TypeError):
            InputDistribution([(1.0, 0.0, 1.0)])

    @pytest.mark.parametrize("order,power", [(0, 1.0), (2.5, 1.0), (4, -1.0)])
    def test_psk_invalid(self, order, power):
        with pytest.raises(DomainError):
            InputDistribution.psk(order, power)


class TestChannelModels:
    def test_fixed_gain_defaults(self):
        m = FixedGain()
        assert m.noise_power == 1.0 and m.g_los == 1 + 0j

    def test_rician_without_scattering_is_fixed_gain(self):
        r = NoncoherentRician(1.0, 0.5j, 0.0)
        assert isinstance(r, FixedGain)
        assert r.kappa == math.inf

    def test_kappa(self):
        assert NoncoherentRician(1.0, 2.0, 0.5).kappa == pytest.approx(8.0)

    def test_csit_is_rayleigh(self):
        assert isinstance(RayleighCSIT(1.0, 2.0), RayleighCSIR)

    @pytest.mark.parametrize("factory", [
        lambda: FixedGain(0.0), lambda: FixedGain(-1.0), lambda: FixedGain(1.0, complex(math.inf, 0)),
        lambda: NoncoherentRician(1.0, 1.0, -0.1), lambda: RayleighCSIR(1.0, 0.0),
        lambda: RayleighCSIT(1.0, -2.0),
    ])
    def test_invalid(self, factory):
        with pytest.raises(DomainError):
            factory()

    def test_hashable(self):
        assert hash(FixedGain(1.0, 1j)) == hash(FixedGain(1.0, 1j))
