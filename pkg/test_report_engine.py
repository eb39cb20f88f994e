import math
import zipfile
import xml.etree.ElementTree as ET

import openpyxl
import pytest
from PIL import Image

from field_grid import GridSpec, make_field, gaussian
from report_engine import (
    table_to_csv, read_csv, table_to_svg, tables_to_xlsx, render_mode_png,
    build_outputs, emit_outputs,
)
from shared import OutputError
from sweep_engine import COLUMNS, SweepTable


def _table(rows=10, series=False):
    data = []
    for k in range(rows):
        row = {c: 0.1 * k + i for i, c in enumerate(COLUMNS)}
        row["status"] = "converged"
        row["sweep_value"] = k * 0.25e-3
        if series:
            row = {"series_value": 0.3 if k < rows // 2 else 0.7, **row}
        data.append(row)
    columns = (["series_value"] if series else []) + COLUMNS
    return SweepTable(columns=columns, rows=data, variable="d", series_variable="z_o" if series else None,
                      name="depth sweep", y_columns=["P_oc", "eta_direct"], x_label="d (m)")


# ── CSV ──────────────────────────────────────────────────────────

def test_csv_has_header_and_one_line_per_row():
    text = table_to_csv(_table()).getvalue().decode("utf-8")
    lines = text.split("\n")
    assert lines[-1] == ""
    assert len(lines) - 1 == 11
    assert lines[0].split(",") == COLUMNS
    assert "\r" not in text


def test_csv_values_survive_a_read_back():
    table = _table()
    rows = read_csv(table_to_csv(table))
    for original, parsed in zip(table.rows, rows):
        for column in COLUMNS:
            if column == "status":
                assert parsed[column] == "converged"
            else:
                assert parsed[column] == pytest.approx(original[column], rel=1e-12)


def test_csv_writes_non_finite_values():
    table = _table(rows=2)
    table.rows[0]["eta_irs"] = float("nan")
    table.rows[1]["SNR_dB"] = -math.inf
    rows = read_csv(table_to_csv(table))
    assert math.isnan(rows[0]["eta_irs"])
    assert rows[1]["SNR_dB"] == -math.inf


# ── SVG ──────────────────────────────────────────────────────────

def test_svg_is_well_formed_xml():
    root = ET.fromstring(table_to_svg(_table(), "P_oc").getvalue())
    assert root.tag.endswith("svg")


def test_svg_is_reproducible():
    a = table_to_svg(_table(series=True), "P_oc").getvalue()
    b = table_to_svg(_table(series=True), "P_oc").getvalue()
    assert a == b


# ── XLSX ─────────────────────────────────────────────────────────

def test_xlsx_header_is_bold_centred_and_columns_sized():
    wb = openpyxl.load_workbook(tables_to_xlsx([_table()]))
    ws = wb.active
    assert ws.title == "depth_sweep"
    header = [c for c in ws[1]]
    assert [c.value for c in header] == COLUMNS
    assert all(c.font.bold for c in header)
    assert all(c.alignment.horizontal == "center" for c in header)
    for letter, dim in ws.column_dimensions.items():
        assert dim.width <= 40
    assert ws.max_row == 11


# ── Mode image ───────────────────────────────────────────────────

def test_mode_png_matches_grid():
    field = make_field(GridSpec(64, 10e-3), 1064e-9, gaussian(2e-3))
    img = Image.open(render_mode_png(field))
    assert img.size == (64, 64)
    assert img.mode == "RGB"


# ── Bundling ─────────────────────────────────────────────────────

def test_build_outputs_per_format():
    names = [n for n, _ in build_outputs(_table(), "both")]
    assert names == ["depth_sweep.csv", "depth_sweep_P_oc.svg", "depth_sweep_eta_direct.svg"]
    assert [n for n, _ in build_outputs(_table(), "xlsx")] == ["depth_sweep.xlsx"]
    assert [n for n, _ in build_outputs(_table(), "plot")] == names[1:]


def test_bad_format_and_empty_table_are_rejected():
    with pytest.raises(OutputError):
        build_outputs(_table(), "pdf")
    with pytest.raises(OutputError):
        build_outputs(_table(rows=0), "csv")


def test_emit_outputs_writes_files(tmp_path):
    paths = emit_outputs(_table(), "both", tmp_path / "out")
    assert len(paths) == 3
    assert (tmp_path / "out" / "depth_sweep.csv").exists()


def test_emit_outputs_can_bundle(tmp_path):
    [path] = emit_outputs(_table(), "both", tmp_path, bundle=True)
    with zipfile.ZipFile(path) as zf:
        assert sorted(zf.namelist()) == sorted(
            ["depth_sweep.csv", "depth_sweep_P_oc.svg", "depth_sweep_eta_direct.svg"]
        )


def test_unwritable_output_folder(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OutputError):
        emit_outputs(_table(), "csv", blocker)


def test_run_folders_are_numbered(tmp_path):
    from shared import next_run_dir, sanitize_filename
    assert next_run_dir(tmp_path).endswith("Sample 1")
    (tmp_path / "Sample 7").mkdir()
    (tmp_path / "Sample x").mkdir()
    assert next_run_dir(tmp_path).endswith("Sample 8")
    assert sanitize_filename("η sweep/2") == "η_sweep_2"
