"""Certified flat bands against numerical theta-independence on random guides."""
import numpy as np
import pytest

from guided_bands.cylinder import guide_laplacian
from guided_bands.graph_model import builtin_example
from guided_bands.guided import flat_bands, theta_independent_eigenvalues

from helpers import flat_cases, flat_mismatch

CASES = flat_cases()


@pytest.mark.parametrize("k", range(len(CASES)))
def test_flat_bands_match_theta_independence(k):
    assert flat_mismatch(*CASES[k]) is None


def test_suite_exercises_flat_bands():
    assert sum(1 for _, g in CASES if flat_bands(guide_laplacian(g))) >= 5


@pytest.mark.parametrize("k", range(len(CASES)))
def test_flat_eigenvectors_vanish_on_contacts(k):
    _, guide = CASES[k]
    lap = guide_laplacian(guide)
    idx = [lap.vertices.index(c) for c in lap.contacts]
    for fb in flat_bands(lap):
        assert np.allclose(fb.eigenvectors[idx], 0, atol=1e-9)
        assert np.allclose(lap.matrix @ fb.eigenvectors, fb.value * fb.eigenvectors, atol=1e-9)
        assert fb.eigenvectors.shape[1] == fb.multiplicity


@pytest.mark.parametrize("p", [2, 3, 4])
def test_star_flat_multiplicity(p):
    spec, guide = builtin_example("square_star", {"p": p})
    assert theta_independent_eigenvalues(spec, guide) == [(pytest.approx(1.0), p - 1)]
