import numpy as np
import pytest

from guided_bands.cylinder import (CylinderWindow, WindowError, assemble_bridge_deleted,
                                   assemble_truncated_fiber, bridge_deleted_host, bridge_operator,
                                   default_half_width, guide_block, guide_laplacian, host_fiber, mu_values,
                                   sup_ess_bridge_deleted)
from guided_bands.graph_model import builtin_example

from helpers import naive_fiber


def test_default_widths():
    assert [default_half_width(k) for k in (1, 2, 3)] == [50, 12, 4]


def test_window_layout():
    spec, guide = builtin_example("square_star", {"p": 2})
    win = CylinderWindow.build(spec, guide, 5)
    assert win.n_host == 11
    assert win.n == 13
    assert win.guide_rows["c"] == win.host_row(0, (0,))
    assert sorted(win.guide_rows[v] for v in ("x1", "x2")) == [11, 12]


def test_window_errors():
    spec, guide = builtin_example("square_multi_mandarin", {"p": 3})
    with pytest.raises(WindowError):
        CylinderWindow.build(spec, guide, 1)  # contact at offset 2
    with pytest.raises(WindowError):
        CylinderWindow.build(spec, guide, 5, "open")


@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
def test_chain_spectrum(boundary):
    # unperturbed square lattice: the window is a ring (or a path) shifted by 2 - 2cos(theta)
    spec, guide = builtin_example("square_star", {"p": 1})
    win = CylinderWindow.build(spec, guide, 6, boundary)
    th = 0.9
    H = host_fiber(spec, guide, [th], win)[: win.n_host, : win.n_host]
    L = 13
    if boundary == "periodic":
        ref = 2 - 2 * np.cos(th) + 2 - 2 * np.cos(2 * np.pi * np.arange(L) / L)
    else:
        # path with full degree kept on the end vertices: 2 - 2cos(pi k / (L+1))
        ref = 2 - 2 * np.cos(th) + 2 - 2 * np.cos(np.pi * np.arange(1, L + 1) / (L + 1))
    assert np.allclose(np.sort(np.linalg.eigvalsh(H)), np.sort(ref))


@pytest.mark.parametrize("name, params", [("square_star", {"p": 2}), ("square_path", {"t": 3}),
                                          ("square_multi_mandarin", {"p": 3}), ("square_pendant", {"t": 2})])
@pytest.mark.parametrize("boundary", ["periodic", "dirichlet"])
def test_truncated_fiber_matches_edge_list(name, params, boundary):
    spec, guide = builtin_example(name, params)
    win = CylinderWindow.build(spec, guide, 4, boundary)
    for th in (0.0, 1.3, -2.2):
        A = assemble_truncated_fiber(spec, guide, [th], win)
        assert np.allclose(A, naive_fiber(spec, guide, th, 4, boundary))


def test_guide_laplacian_star():
    _, guide = builtin_example("square_star", {"p": 3})
    lap = guide_laplacian(guide)
    assert np.allclose(lap.eigenvalues, [0, 1, 1, 4])
    assert np.allclose(lap.zetas, [4, 1, 1])
    assert lap.p == 3 and lap.contacts == ("c",)
    assert np.allclose(lap.dirichlet, np.eye(3))


def test_guide_laplacian_mandarin_and_path():
    _, guide = builtin_example("square_double_mandarin", {"s": 3})
    assert np.allclose(guide_laplacian(guide).zetas, [9, 3])
    _, guide = builtin_example("square_path", {"t": 2})
    assert np.allclose(guide_laplacian(guide).zetas, [6, 2])


def test_bridge_split_identity():
    spec, guide = builtin_example("square_pendant", {"t": 1})
    win = CylinderWindow.build(spec, guide, 4)
    G = assemble_bridge_deleted(spec, guide, win)
    assert np.isrealobj(G)
    for th in (0.4, 2.0):
        A = assemble_truncated_fiber(spec, guide, [th], win)
        assert np.allclose(A, G + bridge_operator(spec, guide, [th], win))
        assert np.allclose(A, host_fiber(spec, guide, [th], win) + guide_block(guide, win))


def test_bridge_deleted_host_and_mu():
    spec, guide = builtin_example("square_star", {"p": 1})
    reduced = bridge_deleted_host(spec, 1)
    assert reduced.dim_total == 1
    assert sup_ess_bridge_deleted(spec, 1) == pytest.approx(4.0, abs=1e-9)
    win = CylinderWindow.build(spec, guide)
    mus = mu_values(spec, guide, win, 2)
    # bridge-deleted cylinder: a path (spectrum [0, 4]) with a pendant at the contact
    assert mus[0] > 4 and mus[1] == pytest.approx(4.0, abs=1e-9)
