"""Fiber invariants on the builtin examples and on random periodic graphs."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from guided_bands.cylinder import CylinderWindow, assemble_truncated_fiber
from guided_bands.floquet import assemble_full_fiber

from helpers import property_cases, property_failures, random_guide, random_host

CASES = property_cases()


@pytest.mark.parametrize("k", range(len(CASES)))
def test_fiber_invariants(k):
    spec, guide = CASES[k]
    assert property_failures(spec, guide, np.random.default_rng(k)) == []


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_random_hosts_hypothesis(seed):
    rng = np.random.default_rng(seed)
    spec = random_host(rng)
    guide = random_guide(rng, spec)
    assert property_failures(spec, guide, rng, W=3, n_theta=2) == []


@pytest.mark.parametrize("k", range(0, len(CASES), 7))
def test_full_fiber_hermitian_and_conjugate(k):
    spec, _ = CASES[k]
    rng = np.random.default_rng(k)
    for th in rng.uniform(-np.pi, np.pi, size=(3, 2)):
        H = assemble_full_fiber(spec, th[:1], th[1:])
        assert np.allclose(H, H.conj().T)
        assert np.allclose(assemble_full_fiber(spec, -th[:1], -th[1:]), H.conj())


@pytest.mark.parametrize("W", [3, 5])
def test_window_boundaries_bracket(W):
    # the dirichlet window keeps full degrees, so it dominates a periodic ring of the same size
    spec, guide = CASES[1]
    per = np.linalg.eigvalsh(assemble_truncated_fiber(spec, guide, [0.5], CylinderWindow.build(spec, guide, W)))
    dir_ = np.linalg.eigvalsh(assemble_truncated_fiber(spec, guide, [0.5],
                                                       CylinderWindow.build(spec, guide, W, "dirichlet")))
    assert dir_[0] >= per[0] - 1e-12
