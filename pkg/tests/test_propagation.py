import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qreset.errors import InputDomainError
from qreset.propagation import (
    LatticeConfig,
    jstar_support,
    occupation_probability,
    peak_offset,
    phase,
    transition_amplitude,
)
from _lattice import FiniteChain

# argmax_n J_n(2 r tau)^2 at tau = 0.25
PEAK_TABLE = {2: 0, 3: 1, 5: 1, 6: 2, 7: 2, 8: 3, 9: 3, 10: 4, 11: 4, 12: 5, 14: 5, 15: 6, 16: 6, 23: 10, 24: 10, 44: 20, 45: 20}


def test_defaults():
    cfg = LatticeConfig()
    assert (cfg.tau, cfg.delta, cfg.x0) == (0.25, 10, 0)
    assert cfg.distance == 10


@pytest.mark.parametrize("kw", [{"tau": 0.0}, {"tau": -1.0}, {"tau": math.inf}, {"n_max": 0}])
def test_config_validation(kw):
    with pytest.raises(InputDomainError):
        LatticeConfig(**kw)


def test_phase_cycle():
    assert [phase(d) for d in range(5)] == [1, 1j, -1, -1j, 1]


def test_amplitude_matches_finite_chain():
    chain = FiniteChain(60, 3.0)
    psi = chain.evolve(chain.ket(0))
    for j in range(-12, 13):
        assert abs(transition_amplitude(j, 0, 3.0) - psi[chain.index(j)]) < 1e-12


@pytest.mark.parametrize("t", [0.0, 1.0, 3.0, 10.0])
def test_unitarity(t):
    span = int(2 * t) + 80
    total = sum(occupation_probability(j, 0, t) for j in range(-span, span + 1))
    assert total == pytest.approx(1.0, abs=1e-12)


@given(st.integers(-30, 30), st.integers(-30, 30), st.floats(0.0, 20.0))
def test_mirror_symmetry(j, x0, t):
    assert occupation_probability(j, x0, t) == occupation_probability(2 * x0 - j, x0, t)


@pytest.mark.parametrize("r,offset", sorted(PEAK_TABLE.items()))
def test_peak_table(r, offset):
    assert peak_offset(r * 0.25).delta_offset == offset


def test_peak_is_argmax():
    for t in np.linspace(0.3, 15, 40):
        d = peak_offset(t).delta_offset
        probs = [occupation_probability(j, 0, t) for j in range(0, int(2 * t) + 40)]
        assert probs[d] >= max(probs) - 1e-12


@pytest.mark.parametrize("t", [0.0, -1.0, math.nan])
def test_peak_rejects_bad_time(t):
    with pytest.raises(InputDomainError):
        peak_offset(t)


def test_jstar_support():
    assert jstar_support(3, 2, 1) == [7, 3, -1, -5]
    assert jstar_support(5, 0, 4) == [4]
    assert jstar_support(0, 3) == [0]
