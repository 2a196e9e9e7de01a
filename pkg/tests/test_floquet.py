import numpy as np
import pytest

from guided_bands.floquet import (Band, BandSet, assemble_full_fiber, assemble_full_fiber_batch,
                                  essential_spectrum_at, merge_intervals, torus_axis, unperturbed_bands)
from guided_bands.graph_model import (IndexedEdge, PeriodicGraphSpec, QuotientVertex, builtin_example,
                                      square_lattice)


def test_square_fiber_closed_form():
    spec = square_lattice()
    for th, ph in [(0.3, -1.1), (np.pi, 0.0), (-2.0, 2.5)]:
        H = assemble_full_fiber(spec, [th], [ph])
        assert H.shape == (1, 1)
        assert H[0, 0] == pytest.approx(4 - 2 * np.cos(th) - 2 * np.cos(ph), abs=1e-14)


def test_square_bands():
    bands, rho = unperturbed_bands(square_lattice())
    assert len(bands) == 1
    assert bands[0].lo == pytest.approx(0.0, abs=1e-9)
    assert bands[0].hi == pytest.approx(8.0, abs=1e-9)
    assert rho == pytest.approx(8.0, abs=1e-9)


@pytest.mark.parametrize("theta", [0.0, 0.7, np.pi / 2, 2.9, np.pi])
def test_square_essential_interval(theta):
    ess, lo, hi = essential_spectrum_at(square_lattice(), 1, [theta])
    assert len(ess) == 1
    assert lo == pytest.approx(2 - 2 * np.cos(theta), abs=1e-9)
    assert hi == pytest.approx(6 - 2 * np.cos(theta), abs=1e-9)


def _cycle3():
    # Z^2 lattice with a triangle per cell; edges inside the cell only plus two bridges
    ids = ("a", "b", "c")
    edges = (IndexedEdge("a", "b", (0, 0)), IndexedEdge("b", "c", (0, 0)), IndexedEdge("c", "a", (0, 0)),
             IndexedEdge("a", "a", (1, 0)), IndexedEdge("a", "a", (0, 1)))
    return PeriodicGraphSpec(2, tuple(QuotientVertex(i) for i in ids), edges)


def test_cycle_oracle():
    # at k = 0 only the triangle matters: spectrum {0, 3, 3}
    w = np.linalg.eigvalsh(assemble_full_fiber(_cycle3(), [0.0], [0.0]))
    assert np.allclose(w, [0, 3, 3])
    # at k = (pi, pi) each loop at a adds 2 - 2cos(pi) = 4: triangle + diag(8, 0, 0)
    w = np.linalg.eigvalsh(assemble_full_fiber(_cycle3(), [np.pi], [np.pi]))
    M = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], float) + np.diag([8, 0, 0])
    assert np.allclose(w, np.linalg.eigvalsh(M))


def test_batch_matches_single():
    spec, _ = builtin_example("square_pendant", {"t": 1})
    ks = np.array([[0.1, 0.2], [1.0, -3.0], [np.pi, np.pi]])
    batch = assemble_full_fiber_batch(spec, ks)
    for k, H in zip(ks, batch):
        assert np.allclose(H, assemble_full_fiber(spec, k[:1], k[1:]))


def test_fiber_dimension_check():
    with pytest.raises(ValueError):
        assemble_full_fiber(square_lattice(), [0.1, 0.2], [0.3])


def test_decorated_lattice_bands():
    spec, _ = builtin_example("square_pendant", {"t": 1})
    bands, rho = unperturbed_bands(spec)
    # fiber [[5 - c, -1], [-1, 1]] with c = 2cos(th) + 2cos(ph) in [-4, 4]
    c = np.linspace(-4, 4, 2001)
    tr, det = 6 - c, (5 - c) - 1
    top = (tr + np.sqrt(tr ** 2 - 4 * det)) / 2
    bot = (tr - np.sqrt(tr ** 2 - 4 * det)) / 2
    assert bands[0].lo == pytest.approx(bot.min(), abs=1e-8)
    assert bands[0].hi == pytest.approx(bot.max(), abs=1e-8)
    assert rho == pytest.approx(top.max(), abs=1e-8)


def test_torus_axis_contains_zero_and_pi():
    for n in (5, 8, 201, 256):
        ax = torus_axis(n)
        assert np.min(np.abs(ax)) < 1e-15
        assert np.min(np.abs(np.abs(ax) - np.pi)) < 1e-12
    with pytest.raises(ValueError):
        torus_axis(1)


def test_merge_intervals():
    merged = merge_intervals([Band(0, 1), Band(0.5, 2), Band(3, 4)])
    assert [(b.lo, b.hi) for b in merged] == [(0, 2), (3, 4)]
    assert merged.measure() == pytest.approx(3)
    bs = BandSet.from_intervals([(1.0, 1.0), (2, 3)])
    assert bs[0].flat and not bs[1].flat
    assert bs.contains(2.5) and not bs.contains(1.5)
