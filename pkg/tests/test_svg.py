from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from nldetect.svg import detection_figure, heatmap, line_plot, nice_ticks

NS = "{http://www.w3.org/2000/svg}"


def test_line_plot_is_valid_and_deterministic():
    curves = [("a", [0, 1, 2], [0.0, 1.0, 0.5]), ("b <&>", [0, 1, 2], [1.0, 0.2, float("nan")])]
    doc = line_plot(curves, "t", "x", "y")
    root = ET.fromstring(doc)
    assert root.tag == NS + "svg"
    assert len(root.findall(f".//{NS}polyline")) == 2
    assert doc == line_plot(curves, "t", "x", "y")


def test_detection_figure():
    doc = detection_figure([0.0, 0.1], [(0.0, 0.2), (0.1, 0.3)], [0.2, 0.3], [0.0, 0.5], "ae",
                           per_dof={0: [0.1, 0.2], 1: [0.3, 0.4]})
    root = ET.fromstring(doc)
    assert len(root.findall(f".//{NS}circle")) == 4


def test_heatmap_pools_columns():
    grid = np.random.default_rng(0).random((3, 1000))
    root = ET.fromstring(heatmap(grid, np.arange(1000) * 0.004, [1.0, 2.0, 3.0], max_cols=100))
    cells = [r for r in root.findall(f"{NS}rect") if r.get("fill", "").startswith("#") and r.get("fill") != "#333"]
    assert len(cells) == 3 * 100


@given(st.floats(-1e6, 1e6), st.floats(1e-3, 1e6))
def test_ticks_cover_range(lo, span):
    t = nice_ticks(lo, lo + span)
    assert t[0] <= lo + 1e-9 * span and t[-1] >= lo + span - 1e-9 * span
    assert 2 <= len(t) <= 12
