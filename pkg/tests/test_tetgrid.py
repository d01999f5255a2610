import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tetmotion import io
from tetmotion.errors import InvalidArgument, NumericError
from tetmotion.geometry import enclosed_volume
from tetmotion.march import marching_tetrahedra
from tetmotion.tetgrid import (OFFSET_BETA, apply_offsets, boundary_face_count, box_field,
                               build_uniform_grid, inverted_tet_count, set_sdf_from_field,
                               signed_volumes, sphere_field)


@pytest.mark.parametrize("res, nv, nt", [(1, 8, 6), (2, 27, 48)])
def test_small_grid_counts(res, nv, nt):
    g = build_uniform_grid(res)
    assert (g.num_vertices, g.num_tets) == (nv, nt)


def test_resolution_128_counts():
    g = build_uniform_grid(128)
    assert g.num_vertices == 2_146_689
    assert g.num_tets == 12_582_912


@pytest.mark.parametrize("bad", [0, -3, 2.5, "4"])
def test_invalid_resolution(bad):
    with pytest.raises(InvalidArgument):
        build_uniform_grid(bad)


def test_initial_state():
    g = build_uniform_grid(3)
    assert np.all(g.sdf == 1.0)
    assert np.all(g.offsets == 0.0)
    assert g.rest_positions.min() == -1.0 and g.rest_positions.max() == 1.0
    assert g.tets.max() == g.num_vertices - 1


@pytest.mark.parametrize("res", range(1, 17))
def test_conformity_and_orientation(res):
    g = build_uniform_grid(res)
    boundary, counts = boundary_face_count(g.tets)
    assert counts.max() == 2
    # each domain face holds R^2 squares split into two triangles
    assert boundary == 12 * res * res
    assert np.all(signed_volumes(g.rest_positions, g.tets) > 0)


def test_zero_offsets_identity():
    g = build_uniform_grid(4)
    moved = apply_offsets(g, np.zeros_like(g.rest_positions))
    assert np.array_equal(moved.vertices, g.rest_positions)


def test_offset_clamp_example():
    g = build_uniform_grid(4)
    off = np.zeros_like(g.rest_positions)
    off[5] = (10.0, 0.0, 0.0)
    moved = apply_offsets(g, off)
    assert np.array_equal(moved.offsets[5], [0.25, 0.0, 0.0])
    assert moved.clamped[5, 0] and not moved.clamped[5, 1:].any()
    assert moved.clamped.sum() == 1


def test_offset_length_mismatch():
    g = build_uniform_grid(2)
    with pytest.raises(InvalidArgument):
        apply_offsets(g, np.zeros((3, 3)))


def test_non_finite_offset():
    g = build_uniform_grid(2)
    off = np.zeros_like(g.rest_positions)
    off[7, 1] = np.nan
    with pytest.raises(NumericError) as err:
        apply_offsets(g, off)
    assert err.value.index == 7


def _det_volumes(pos, tets):
    # independent oracle: 3x3 determinants via numpy.linalg
    p = pos[tets]
    return np.linalg.det(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], 1)) / 6


def test_small_random_offsets_shift_exactly_and_keep_orientation(rng):
    g = build_uniform_grid(4)
    off = rng.uniform(-1, 1, g.rest_positions.shape) * 0.2 * g.cell_edge
    moved = apply_offsets(g, off)
    assert np.array_equal(moved.vertices, g.rest_positions + off)
    assert np.all(_det_volumes(moved.vertices, g.tets) > 0)
    assert inverted_tet_count(moved) == 0


def test_full_clamp_offsets_can_invert_and_are_reported(rng):
    g = build_uniform_grid(4)
    off = rng.uniform(-1, 1, g.rest_positions.shape) * OFFSET_BETA * g.cell_edge
    moved = apply_offsets(g, off)
    oracle = int((_det_volumes(moved.vertices, g.tets) <= 0).sum())
    assert inverted_tet_count(moved) == oracle
    assert oracle > 0  # half-cell offsets are not orientation safe on this split


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.floats(-10, 10), st.integers(0, 2**32 - 1))
def test_clamp_bound_holds(res, scale, seed):
    g = build_uniform_grid(res)
    off = np.random.default_rng(seed).normal(size=g.rest_positions.shape) * scale
    moved = apply_offsets(g, off)
    assert np.abs(moved.offsets).max() <= OFFSET_BETA * g.cell_edge
    assert np.array_equal(moved.clamped, np.abs(off) > OFFSET_BETA * g.cell_edge)


def test_sphere_field_at_origin():
    g = set_sdf_from_field(build_uniform_grid(4), sphere_field(0.5))
    origin = np.flatnonzero(np.all(g.vertices == 0.0, axis=1))
    assert len(origin) == 1
    assert g.sdf[origin[0]] == -0.5


def test_constant_field_gives_empty_surface():
    g = set_sdf_from_field(build_uniform_grid(4), lambda p: np.ones(len(p)))
    assert marching_tetrahedra(g).is_empty


def test_non_finite_field_reports_vertex():
    def field(p):
        out = np.ones(len(p))
        out[11] = np.inf
        return out

    with pytest.raises(NumericError) as err:
        set_sdf_from_field(build_uniform_grid(2), field)
    assert err.value.index == 11


def test_box_field_volume():
    g = set_sdf_from_field(build_uniform_grid(32), box_field(0.4))
    vol = enclosed_volume(marching_tetrahedra(g))
    assert abs(vol - 0.8 ** 3) / 0.8 ** 3 < 0.03


def test_build_is_deterministic_bytes(tmp_path):
    a = build_uniform_grid(5)
    b = build_uniform_grid(5)
    io.save_grid(tmp_path / "a.tmcf", a)
    io.save_grid(tmp_path / "b.tmcf", b)
    assert (tmp_path / "a.tmcf").read_bytes() == (tmp_path / "b.tmcf").read_bytes()
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_grid_roundtrip(tmp_path, rng):
    g = set_sdf_from_field(build_uniform_grid(3), sphere_field(0.4))
    g = apply_offsets(g, rng.normal(size=g.rest_positions.shape) * 0.1)
    io.save_grid(tmp_path / "g.tmcf", g)
    back = io.load_grid(tmp_path / "g.tmcf")
    for name in ("rest_positions", "offsets", "sdf", "tets"):
        assert np.array_equal(getattr(back, name), getattr(g, name))
    assert back.resolution == 3
    meta = (tmp_path / "g.json").read_text()
    assert '"format_version": 1' in meta
