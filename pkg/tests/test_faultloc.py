import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tarl.errors import DegenerateError, ShapeError
from tarl.faultloc import (
    LocalizationReport, Region, default_window, diff_map, locate_culprit, localize,
    max_diff_region, utility_slice,
)
from tarl.sarsa import UtilityTable


def _table(values: np.ndarray, lines) -> UtilityTable:
    t = UtilityTable(values.shape[1], list(lines))
    t.q = [float(x) for x in values.ravel()]
    return t


def test_region_example():
    D = np.zeros((2, 5))
    D[1] = [0, 1, 5, 4, 0]
    region = max_diff_region(D, 2)
    assert region == Region(1, 2, 3)
    assert D[region.terrain, region.p_lo:region.p_hi + 1].sum() == 9


def test_all_zero_map_picks_first_window():
    assert max_diff_region(np.zeros((2, 20)), 5) == Region(0, 0, 4)


def test_window_is_clamped():
    D = np.ones((2, 3))
    assert max_diff_region(D, 10) == Region(0, 0, 2)
    assert max_diff_region(D, 0) == Region(0, 0, 0)
    assert default_window(20) == 5


def test_slice_example():
    q = np.zeros((2, 6, 1))
    q[1, 2, 0], q[1, 3, 0] = 2.0, 3.0
    table = _table(q, [5])
    assert utility_slice(table, Region(1, 2, 3)) == {5: 5.0}


def test_culprit_ties_go_to_larger_line():
    line, margin = locate_culprit({3: 1.0, 7: 1.0}, {3: 0.0, 7: 2.0})
    assert line == 7 and margin == 0.0
    line, margin = locate_culprit({3: 4.0, 7: 1.0}, {3: 0.0, 7: 2.0})
    assert line == 3 and margin == pytest.approx(3.0)


def test_identical_tables_are_degenerate():
    q = np.random.default_rng(0).normal(size=(2, 4, 3))
    with pytest.raises(DegenerateError):
        localize(_table(q, [1, 2, 3]), _table(q.copy(), [1, 2, 3]), width=2)


def test_shape_mismatch():
    a = _table(np.zeros((2, 4, 3)), [1, 2, 3])
    b = _table(np.zeros((2, 4, 3)), [1, 2, 4])
    c = _table(np.zeros((2, 5, 3)), [1, 2, 3])
    for other in (b, c):
        with pytest.raises(ShapeError):
            diff_map(a, other)
    with pytest.raises(ShapeError):
        locate_culprit({1: 0.0}, {2: 0.0})


def test_localize_finds_planted_fault():
    rng = np.random.default_rng(5)
    off = rng.normal(0, 0.01, size=(2, 20, 4))
    on = off.copy()
    on[1, 8:12, 2] -= 50.0
    on[1, 8:12, 0] -= 10.0
    report = localize(_table(off, [10, 11, 12, 13]), _table(on, [10, 11, 12, 13]),
                      texts={12: "vel = 5 * delta"})
    assert report.region.terrain == 1
    assert report.region.p_lo <= 8 and report.region.p_hi >= 11
    assert report.culprit_line == 12 and report.culprit_text == "vel = 5 * delta"
    assert report.margin > 100


def test_json_round_trip():
    report = LocalizationReport(Region(1, 7, 11), {30: 1.5, 31: -2.0}, {30: -3.25, 31: 0.0},
                                30, "vel = 5 * delta", 2.75)
    assert LocalizationReport.from_json(report.to_json()) == report


_maps = arrays(np.float64, (2, 8, 3), elements=st.floats(-1e3, 1e3, allow_nan=False))


@settings(max_examples=1000, deadline=None)
@given(off=_maps, on=_maps, c=st.floats(0.01, 100.0), w=st.integers(1, 8))
def test_scale_invariance(off, on, c, w):
    """Scaling both tables by c > 0 moves neither region nor culprit."""
    lines = [4, 5, 6]
    a, b = _table(off, lines), _table(on, lines)
    sa, sb = _table(off * c, lines), _table(on * c, lines)
    D, Dc = diff_map(a, b), diff_map(sa, sb)
    assert np.allclose(Dc, c * D, rtol=1e-9, atol=1e-9)
    # compare regions only when the argmax is not a near tie
    r = max_diff_region(D, w)
    sums = sorted((D[m, lo:lo + w].sum() for m in range(2) for lo in range(8 - w + 1)), reverse=True)
    if len(sums) == 1 or sums[0] - sums[1] > 1e-6 * max(1.0, sums[0]):
        assert max_diff_region(Dc, w) == r


@settings(max_examples=1000, deadline=None)
@given(q=_maps, p_lo=st.integers(0, 7), span=st.integers(0, 7), m=st.integers(0, 1))
def test_slice_is_linear_sum(q, p_lo, span, m):
    p_hi = min(7, p_lo + span)
    lines = [4, 5, 6]
    got = utility_slice(_table(q, lines), Region(m, p_lo, p_hi))
    for n, line in enumerate(lines):
        expected = sum(q[m, p, n] for p in range(p_lo, p_hi + 1))
        assert got[line] == pytest.approx(expected, abs=1e-9)
    doubled = utility_slice(_table(2 * q, lines), Region(m, p_lo, p_hi))
    assert all(doubled[k] == pytest.approx(2 * got[k], abs=1e-9) for k in lines)
