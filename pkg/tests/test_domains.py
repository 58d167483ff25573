"""Domain-family generators: geometry oracles and parameter validation."""

from __future__ import annotations

import numpy as np
import pytest
from scipy import ndimage

from divjohn import DomainSpec, generate, rasterize
from divjohn.domains import slit_cells
from divjohn.errors import Unsupported


def test_square_is_exact():
    dom = generate(DomainSpec("square", {}, h=1 / 128))
    assert dom.cell_count == 128 * 128
    assert dom.area == pytest.approx(1.0)


def test_disk_area_converges():
    err = []
    for h in (1 / 32, 1 / 64, 1 / 128):
        dom = generate(DomainSpec("disk", {}, h=h))
        err.append(abs(dom.area - np.pi))
        assert err[-1] <= 10 * h
    assert err[2] < err[0]


def test_annulus_geometry():
    dom = generate(DomainSpec("annulus", {"r_inner": 0.5, "r_outer": 1.0}, h=1 / 64))
    true_area = np.pi * (1.0 - 0.25)
    assert abs(dom.area - true_area) <= 10 * dom.h


def test_cusp_area_and_connectivity():
    # area of {0<x<1, |y|<x^a} is 2/(a+1); the even center lattice makes
    # column sums telescope, so the raster area is nearly exact
    for alpha in (1, 2, 3):
        dom = generate(DomainSpec("power_cusp", {"alpha": alpha}, h=1 / 256))
        assert abs(dom.area - 2 / (alpha + 1)) <= 6 * dom.h
        _, ncomp = ndimage.label(dom.mask)
        assert ncomp == 1


def test_punctured_disk_area():
    h = 1 / 64
    disk = generate(DomainSpec("disk", {}, h=h))
    punct = generate(DomainSpec("punctured_disk", {}, h=h))
    assert punct.cell_count == disk.cell_count - 1
    assert punct.area == pytest.approx(disk.area - h * h)
    # the missing cell is the one at (h/2, h/2)
    i, j = punct.nearest_cell((h / 2, h / 2))
    assert not punct.mask[i, j] and disk.mask[i, j]


def test_rooms_geometry():
    dom = generate(DomainSpec("rooms_corridors", {"width": 0.125}, h=1 / 64))
    expected = 2 * 1.0 + 0.125 * 0.4  # two rooms plus corridor between them
    assert abs(dom.area - expected) <= 10 * dom.h


def test_cantor_slit_counts():
    # dimension-0 set: removed-cell count grows far slower than 1/h
    n64 = int(slit_cells(generate(DomainSpec("cantor_slit", {"p": 2.0}, h=1 / 64))).sum())
    n256 = int(slit_cells(generate(DomainSpec("cantor_slit", {"p": 2.0}, h=1 / 256))).sum())
    assert 0 < n64 <= 40 and 0 < n256 <= 60
    assert n256 <= 3 * n64
    # dimension-1/2 set (p = 1.5): count scales like h^-1/2, not 1/h
    m64 = int(slit_cells(generate(DomainSpec("cantor_slit", {"p": 1.5}, h=1 / 64))).sum())
    m256 = int(slit_cells(generate(DomainSpec("cantor_slit", {"p": 1.5}, h=1 / 256))).sum())
    assert 1.2 <= m256 / m64 <= 3.2  # ideal 4^0.5 = 2


def test_cantor_slit_cells_match_removed():
    dom = generate(DomainSpec("cantor_slit", {"p": 1.5}, h=1 / 64))
    removed = slit_cells(dom)
    assert removed.any()
    assert not (removed & dom.mask).any()
    # slit sits on the row of centers just above y = 0
    j = np.unique(np.argwhere(removed)[:, 1])
    assert len(j) == 1
    y = dom.origin[1] + (j[0] + 0.5) * dom.h
    assert y == pytest.approx(dom.h / 2)


def test_param_validation():
    with pytest.raises(Unsupported):
        DomainSpec("heptagon", {}, h=1 / 32)
    with pytest.raises(Unsupported):
        DomainSpec("disk", {"radius": 1.0, "sides": 7}, h=1 / 32)
    with pytest.raises(Unsupported):
        generate(DomainSpec("power_cusp", {"alpha": 0.5}, h=1 / 32))
    with pytest.raises(Unsupported):
        generate(DomainSpec("rooms_corridors", {"width": 0.01}, h=1 / 32))
    with pytest.raises(Unsupported):
        generate(DomainSpec("cantor_slit", {"p": 2.5}, h=1 / 32))
    with pytest.raises(Unsupported):
        generate(DomainSpec("cantor_slit", {"p": 1.0}, h=1 / 32))
    with pytest.raises(Unsupported):
        DomainSpec("disk", {}, h=-0.1)


def test_spec_json_roundtrip():
    spec = DomainSpec("power_cusp", {"alpha": 3.0}, h=1 / 128)
    back = DomainSpec.from_json(spec.to_json())
    assert back == spec


def test_rasterize_override_spacing():
    spec = DomainSpec("square", {}, h=1 / 16)
    dom = rasterize(spec, h=1 / 32)
    assert dom.h == 1 / 32
    assert dom.cell_count == 32 * 32


def test_refinement_nests_lattice():
    # the coarse center lattice is not a sublattice of the fine one, but
    # both sample the same analytic set: refined masks agree on geometry
    coarse = generate(DomainSpec("disk", {}, h=1 / 32))
    fine = generate(DomainSpec("disk", {}, h=1 / 64))
    assert abs(coarse.area - fine.area) <= 12 / 64
