import numpy as np
import pytest

from xdwell import MediumSpec, PulseSpec

TAU_SP = 26.5e-9
GAMMA = 1.0 / TAU_SP


@pytest.fixture
def medium_od4():
    return MediumSpec.from_lifetime(4.0, TAU_SP)


@pytest.fixture
def pulse_10ns():
    return PulseSpec(intensity_rms=10e-9)


@pytest.fixture
def pulse_50ns():
    return PulseSpec(intensity_rms=50e-9)


def dense_transmission_oracle(pulse, medium, n=200001, span=12.0):
    """Independent trapezoid quadrature of the spectrally averaged
    transmission, used to cross-check the adaptive-quadrature path."""
    sw = 1.0 / (2.0 * pulse.intensity_rms)
    x = np.linspace(-span, span, n)
    d = pulse.carrier_detuning + sw * x
    a = medium.peak_od / (1.0 + (2.0 * d / medium.gamma) ** 2)
    rho = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return float(np.trapezoid(rho * np.exp(-a), x))
