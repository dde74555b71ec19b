"""Box arithmetic: IoU against the grid-counting oracle, union box laws."""

import numpy as np
import pytest

from sgground.boxes import Box, box_deltas, iou, union_box

from oracles import pixel_grid_iou

RNG = np.random.default_rng(42)


def random_box(rng):
    """Random box fully inside the unit square (the grid oracle's domain)."""
    w = float(rng.uniform(0.05, 0.5))
    h = float(rng.uniform(0.05, 0.5))
    return Box(cx=float(rng.uniform(w / 2, 1 - w / 2)),
               cy=float(rng.uniform(h / 2, 1 - h / 2)), w=w, h=h)


def test_iou_self_is_one():
    b = random_box(RNG)
    assert iou(b, b) == 1.0


def test_iou_disjoint_is_zero():
    assert iou(Box(0.2, 0.2, 0.1, 0.1), Box(0.8, 0.8, 0.1, 0.1)) == 0.0


def test_iou_half_overlap_case():
    # unit square vs unit square shifted by half its width: 0.5 / 1.5
    assert abs(iou(Box(0.5, 0.5, 1.0, 1.0), Box(1.0, 0.5, 1.0, 1.0)) - 1 / 3) < 1e-12
    # same configuration scaled into the grid oracle's domain
    a = Box(0.25, 0.5, 0.5, 1.0)
    b = Box(0.5, 0.5, 0.5, 1.0)
    assert abs(iou(a, b) - 1.0 / 3.0) < 1e-12
    assert abs(pixel_grid_iou(a, b) - 1.0 / 3.0) < 2e-3


def test_iou_symmetric():
    for _ in range(100):
        a, b = random_box(RNG), random_box(RNG)
        assert iou(a, b) == iou(b, a)


def test_iou_matches_pixel_grid_oracle():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        a, b = random_box(rng), random_box(rng)
        assert abs(iou(a, b) - pixel_grid_iou(a, b)) < 2e-3


def test_union_box_idempotent():
    b = random_box(RNG)
    u = union_box(b, b)
    assert np.allclose([u.cx, u.cy, u.w, u.h], [b.cx, b.cy, b.w, b.h], atol=1e-15)


def test_union_box_example():
    u = union_box(Box(0.25, 0.25, 0.5, 0.5), Box(0.75, 0.75, 0.5, 0.5))
    assert np.allclose([u.cx, u.cy, u.w, u.h], [0.5, 0.5, 1.0, 1.0], atol=1e-12)


def test_union_box_commutative():
    for _ in range(1000):
        a, b = random_box(RNG), random_box(RNG)
        u1, u2 = union_box(a, b), union_box(b, a)
        assert (u1.cx, u1.cy, u1.w, u1.h) == (u2.cx, u2.cy, u2.w, u2.h)


def test_union_contains_both():
    for _ in range(200):
        a, b = random_box(RNG), random_box(RNG)
        u = union_box(a, b)
        for box in (a, b):
            x1, y1, x2, y2 = box.corners()
            ux1, uy1, ux2, uy2 = u.corners()
            assert ux1 <= x1 + 1e-12 and uy1 <= y1 + 1e-12
            assert ux2 >= x2 - 1e-12 and uy2 >= y2 - 1e-12


def test_box_deltas_zero_for_identical():
    b = random_box(RNG)
    assert np.allclose(box_deltas(b, b), np.zeros(4), atol=1e-15)


def test_box_validate():
    with pytest.raises(ValueError):
        Box(0.5, 0.5, 0.0, 0.1).validate()
    with pytest.raises(ValueError):
        Box(5.0, 5.0, 0.1, 0.1).validate()
    Box(0.5, 0.5, 0.2, 0.2).validate()
