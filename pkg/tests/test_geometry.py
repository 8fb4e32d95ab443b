import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecvlab.geometry import BoundingBox, area, intersection_area, iou, iou_arrays


def cell_iou(a: BoundingBox, b: BoundingBox, grid: int) -> float:
    """Rasterize both boxes on the grid and count cells."""
    ma = np.zeros((grid, grid), dtype=bool)
    mb = np.zeros((grid, grid), dtype=bool)
    ma[a.x1:a.x2, a.y1:a.y2] = True
    mb[b.x1:b.x2, b.y1:b.y2] = True
    return (ma & mb).sum() / (ma | mb).sum()


@st.composite
def boxes(draw, grid=32):
    x1 = draw(st.integers(0, grid - 1))
    y1 = draw(st.integers(0, grid - 1))
    x2 = draw(st.integers(x1 + 1, grid))
    y2 = draw(st.integers(y1 + 1, grid))
    return BoundingBox(x1, y1, x2, y2)


@pytest.mark.parametrize("coords,expected", [
    ((0, 0, 10, 10), 100),
    ((0, 0, 1, 1), 1),
    ((2, 3, 5, 9), 18),
])
def test_area_examples(coords, expected):
    assert area(BoundingBox(*coords)) == expected


def test_iou_examples():
    assert iou(BoundingBox(0, 0, 10, 10), BoundingBox(0, 0, 10, 10)) == 1.0
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(4, 4, 6, 6)) == 0.0
    assert iou(BoundingBox(0, 0, 2, 2), BoundingBox(1, 1, 3, 3)) == 1 / 7


def test_touching_edges_do_not_intersect():
    assert intersection_area(BoundingBox(0, 0, 2, 2), BoundingBox(2, 0, 4, 2)) == 0


@pytest.mark.parametrize("coords", [(1, 0, 1, 2), (0, 3, 2, 1), (3, 0, 2, 2)])
def test_degenerate_box_rejected(coords):
    with pytest.raises(ValueError):
        BoundingBox(*coords)
    assert BoundingBox.maybe(*coords) is None


def test_maybe_respects_grid():
    assert BoundingBox.maybe(0, 0, 17, 4, grid=16) is None
    assert BoundingBox.maybe(-1, 0, 3, 4, grid=16) is None
    assert BoundingBox.maybe(0, 0, 16, 16, grid=16) == BoundingBox(0, 0, 16, 16)


@settings(max_examples=300, deadline=None)
@given(boxes(), boxes())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert (v == 0.0) == (intersection_area(a, b) == 0)
    assert iou(a, a) == 1.0


@settings(max_examples=200, deadline=None)
@given(boxes(), boxes())
def test_iou_matches_cell_count(a, b):
    assert iou(a, b) == pytest.approx(cell_iou(a, b, 32), abs=1e-15)


def test_iou_arrays_matches_scalar():
    rng = np.random.default_rng(3)
    pairs = []
    for _ in range(200):
        x1, y1 = rng.integers(0, 15, size=2)
        x2, y2 = x1 + rng.integers(1, 16 - x1), y1 + rng.integers(1, 16 - y1)
        pairs.append((int(x1), int(y1), int(x2), int(y2)))
    arr = np.array(pairs)
    gt = BoundingBox(3, 4, 11, 9)
    got = iou_arrays(arr, np.array(gt.as_tuple())[None, :])
    want = [iou(BoundingBox(*p), gt) for p in pairs]
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)
