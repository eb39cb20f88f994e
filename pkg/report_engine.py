"""
RBC channel simulator – report engine module

Turns sweep tables and solved modes into output files. Every builder returns
(filename, BytesIO) tuples; emit_outputs writes them to a folder or bundles
them into one zip.

Formats:
  csv    header row, LF endings, UTF-8, floats at 17 significant digits
  plot   one SVG line chart per y-column, one line per series value
  both   csv + plot
  xlsx   one sheet per table, bold centred header, auto-width columns
"""

import csv
import io
import logging
import math
from io import BytesIO

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import openpyxl
from openpyxl.styles import Font, Alignment
from PIL import Image

from shared import OutputError, sanitize_filename, write_outputs, zip_outputs

_log = logging.getLogger(__name__)


FORMATS = ("csv", "plot", "both", "xlsx")
FLOAT_FORMAT = ".17g"
SVG_METADATA = {"Date": None, "Creator": None}
PLOT_SIZE = (6.4, 4.0)
MODE_COLORMAP = "inferno"

plt.rcParams["svg.hashsalt"] = "rbc-channel"


# ── Helpers ──────────────────────────────────────────────────────

def format_value(v):
    if isinstance(v, float):
        return format(v, FLOAT_FORMAT)
    return str(v)


def _series_groups(table):
    """[(series value or None, rows)] in first-appearance order."""
    if not table.series_variable:
        return [(None, table.rows)]
    groups = {}
    for row in table.rows:
        groups.setdefault(row["series_value"], []).append(row)
    return list(groups.items())


# ── CSV ──────────────────────────────────────────────────────────

def table_to_csv(table):
    text = io.StringIO()
    writer = csv.writer(text, lineterminator="\n")
    writer.writerow(table.columns)
    for row in table.rows:
        writer.writerow([format_value(row[c]) for c in table.columns])
    buf = BytesIO(text.getvalue().encode("utf-8"))
    buf.seek(0)
    return buf


def read_csv(buf):
    """Parse a CSV produced by table_to_csv back into float/str rows."""
    buf.seek(0)
    reader = csv.DictReader(io.StringIO(buf.read().decode("utf-8")))
    rows = []
    for raw in reader:
        row = {}
        for k, v in raw.items():
            try:
                row[k] = float(v)
            except ValueError:
                row[k] = v
        rows.append(row)
    return rows


# ── Plots ────────────────────────────────────────────────────────

def table_to_svg(table, column):
    fig, ax = plt.subplots(figsize=PLOT_SIZE)
    for series, rows in _series_groups(table):
        x = [r["sweep_value"] for r in rows]
        y = [r[column] for r in rows]
        label = None if series is None else f"{table.series_variable} = {series:g}"
        ax.plot(x, y, marker="o", markersize=3, linewidth=1.2, label=label)
    ax.set_xlabel(table.x_label or table.variable)
    ax.set_ylabel(column)
    ax.set_title(f"{table.name}: {column}")
    ax.grid(True, alpha=0.3)
    if table.series_variable:
        ax.legend()
    fig.tight_layout()

    buf = BytesIO()
    fig.savefig(buf, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    buf.seek(0)
    return buf


# ── XLSX ─────────────────────────────────────────────────────────

def tables_to_xlsx(tables):
    wb = openpyxl.Workbook()
    # Remove default sheet
    wb.remove(wb.active)

    for table in tables:
        ws = wb.create_sheet(title=sanitize_filename(table.name)[:31] or "sweep")
        header_font = Font(bold=True)
        for col_idx, header in enumerate(table.columns, start=1):
            cell = ws.cell(row=1, column=col_idx, value=header)
            cell.font = header_font
            cell.alignment = Alignment(horizontal="center")

        for r, row in enumerate(table.rows, start=2):
            for col_idx, name in enumerate(table.columns, start=1):
                value = row[name]
                if isinstance(value, float) and not math.isfinite(value):
                    value = format_value(value)
                ws.cell(row=r, column=col_idx, value=value)

        # Auto-size columns
        for col in ws.columns:
            max_len = 0
            col_letter = col[0].column_letter
            for cell in col:
                if cell.value is not None:
                    max_len = max(max_len, len(str(cell.value)))
            ws.column_dimensions[col_letter].width = min(max_len + 4, 40)

    excel_buf = BytesIO()
    wb.save(excel_buf)
    excel_buf.seek(0)
    return excel_buf


# ── Mode image ───────────────────────────────────────────────────

def render_mode_png(field, colormap=MODE_COLORMAP):
    """False-colour intensity of a field, normalised to its peak."""
    I = field.intensity
    peak = I.max()
    norm = I / peak if peak > 0 else I
    rgba = matplotlib.colormaps[colormap](norm)
    img = Image.fromarray((rgba[:, :, :3] * 255).astype(np.uint8), "RGB")
    buf = BytesIO()
    img.save(buf, "PNG")
    buf.seek(0)
    return buf


# ── Bundling ─────────────────────────────────────────────────────

def build_outputs(table, fmt="csv"):
    """(filename, BytesIO) list for one table."""
    if fmt not in FORMATS:
        raise OutputError(f"format must be one of {', '.join(FORMATS)}, got {fmt!r}")
    if not table.rows:
        raise OutputError("nothing to write: the table has no rows")
    base = sanitize_filename(table.name) or "sweep"
    results = []
    if fmt in ("csv", "both"):
        results.append((f"{base}.csv", table_to_csv(table)))
    if fmt in ("plot", "both"):
        for column in table.y_columns:
            results.append((f"{base}_{sanitize_filename(column)}.svg", table_to_svg(table, column)))
    if fmt == "xlsx":
        results.append((f"{base}.xlsx", tables_to_xlsx([table])))
    return results


def emit_outputs(table, fmt, out_dir, bundle=False):
    """Write the table's outputs under out_dir; returns the written paths."""
    results = build_outputs(table, fmt)
    if bundle:
        base = sanitize_filename(table.name) or "sweep"
        results = [(f"{base}.zip", zip_outputs(results))]
    paths = write_outputs(results, out_dir)
    for p in paths:
        _log.info("wrote %s", p)
    return paths
