import re

import numpy as np
import pytest
from hypothesis import given, strategies as st

from forestshrink.forest import LEFT, PLOT_WIDTH, TICKS, axis_domain, forest_svg, x_position


def _ticks(svg):
    return {float(v): float(x) for v, x in re.findall(r'class="tick" data-value="([^"]+)" x="([^"]+)"', svg)}


def test_ticks_are_log_proportional():
    labels = ["a", "b", "c"]
    series = {"naive": (np.log([0.6, 0.9, 1.4]), np.log([[0.3, 1.2], [0.5, 1.6], [0.8, 2.4]])),
              "lasso": (np.log([0.7, 0.8, 0.9]), None)}
    svg = forest_svg(labels, series, reference=0.75, title="t")
    ticks = _ticks(svg)
    assert sorted(ticks) == list(TICKS)
    # equal ratios map to equal distances
    gaps = np.diff([ticks[t] for t in TICKS])
    np.testing.assert_allclose(gaps, gaps[0], atol=0.011)
    assert ticks[0.25] >= LEFT and ticks[2.0] <= LEFT + PLOT_WIDTH
    ref = re.search(r'class="reference" data-value="([^"]+)" x1="([^"]+)"', svg)
    assert float(ref.group(1)) == 0.75
    x_ref = float(ref.group(2))
    expected = ticks[0.5] + (np.log(0.75) - np.log(0.5)) / np.log(2) * (ticks[1.0] - ticks[0.5])
    assert x_ref == pytest.approx(expected, abs=0.02)
    assert svg.count('class="point"') == 6
    assert svg.count('class="label"') == 3


def test_missing_points_are_skipped():
    svg = forest_svg(["a", "b"], {"naive": (np.array([np.nan, 0.0]), None)})
    assert svg.count('class="point"') == 1


@given(st.lists(st.floats(-4, 4), min_size=1, max_size=10))
def test_domain_covers_values_and_ticks(logs):
    vals = np.exp(logs)
    lo, hi = axis_domain(vals)
    assert lo < min(vals.min(), TICKS[0]) and hi > max(vals.max(), TICKS[-1])
    for v in vals:
        assert LEFT <= x_position(v, (lo, hi)) <= LEFT + PLOT_WIDTH


def test_labels_are_escaped():
    svg = forest_svg(["x<1 & y"], {"naive": (np.zeros(1), None)})
    assert "x&lt;1 &amp; y" in svg
