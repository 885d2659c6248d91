import xml.dom.minidom

import pytest

from scsm.svg import _nice_step, _ticks, render_line_chart, series_from_rows

SERIES = {"alpha": [(1, 0.5), (2, 0.7), (5, 0.9)],
          "beta": [(1, 0.4), (2, 0.4), (5, 0.6)]}


def test_series_from_rows_groups_and_sorts():
    rows = [{"v": "a", "k": "5", "acc": "0.9"},
            {"v": "b", "k": "1", "acc": "0.2"},
            {"v": "a", "k": "1", "acc": "0.5"}]
    out = series_from_rows(rows, "v", "k", "acc")
    assert out == {"a": [(1.0, 0.5), (5.0, 0.9)], "b": [(1.0, 0.2)]}


def test_nice_step_is_1_2_5_family():
    for span in (0.013, 0.7, 3.0, 42.0, 998.0):
        step = _nice_step(span)
        mantissa = step / 10 ** __import__("math").floor(__import__("math").log10(step))
        assert round(mantissa, 6) in (1.0, 2.0, 5.0)


def test_ticks_cover_range():
    ticks = _ticks(0.0, 1.0)
    assert ticks[0] >= 0.0 and ticks[-1] <= 1.0 + 1e-9
    assert len(ticks) >= 3


def test_render_is_valid_xml_and_contains_series():
    svg = render_line_chart(SERIES, title="t", x_label="x", y_label="y")
    xml.dom.minidom.parseString(svg)
    assert "alpha" in svg and "beta" in svg and "<polyline" in svg


def test_render_is_deterministic():
    a = render_line_chart(SERIES, title="t")
    b = render_line_chart(SERIES, title="t")
    assert a == b


def test_render_escapes_markup_in_labels():
    svg = render_line_chart({"a<b&c": [(0, 0), (1, 1)]}, title="x<y")
    xml.dom.minidom.parseString(svg)
    assert "a<b" not in svg.split("</text>")[0] or "&lt;" in svg


def test_render_writes_file(tmp_path):
    path = tmp_path / "plot.svg"
    svg = render_line_chart(SERIES, path=str(path))
    assert path.read_text() == svg


def test_render_rejects_empty():
    with pytest.raises(ValueError):
        render_line_chart({})
    with pytest.raises(ValueError):
        render_line_chart({"a": []})


def test_degenerate_spans_still_render():
    # single point and constant-y series must not divide by zero
    svg = render_line_chart({"p": [(2.0, 0.5)], "q": [(1, 0.3), (3, 0.3)]})
    xml.dom.minidom.parseString(svg)
