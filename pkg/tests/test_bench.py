"""Memory scaling of the filter-head assembly."""

from parefine import bench


def test_peak_volume_grows_quadratically_in_d():
    rows = bench.memory_report(hw=(32, 32), ds=(3, 5, 7, 9))
    by_d = {r.d_filter: r.peak_volume_bytes for r in rows}
    assert by_d[3] == 9 * 32 * 32 * 4
    ratio = by_d[9] / by_d[3]
    assert 7.0 <= ratio <= 11.0


def test_traced_peak_increases_with_d():
    rows = bench.memory_report(hw=(32, 32), ds=(3, 9))
    assert rows[1].traced_peak_bytes > rows[0].traced_peak_bytes


def test_report_text_is_delimited():
    rows = bench.memory_report(hw=(16, 16), ds=(3, 5))
    text = bench.report_text(rows, (16, 16))
    lines = text.strip().splitlines()
    assert lines[0].split("\t") == ["d", "peak_volume_bytes", "total_volume_bytes",
                                    "traced_peak_bytes"]
    assert len(lines) == 4  # header + 2 rows + ratio comment
    assert lines[-1].startswith("#")
