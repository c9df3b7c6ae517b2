"""
Artifact writers

CSV and Markdown convergence tables, verification tables, per-unknown field
dumps, legacy VTK cell data and Matrix Market blocks. Every file is written
to a temporary sibling first and moved into place.
"""

import csv
import io
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np
import scipy.io
from jinja2 import Template

from src.assembly import SaddleSystem
from src.convergence import StudyResult
from src.failures import OutputError
from src.fem_spaces import DisplacementField, StressField, field_records
from src.verify import CheckResult

logger = logging.getLogger(__name__)

STUDY_COLUMNS = ["level", "err_u", "ord_u", "err_sigma", "ord_sigma", "err_div", "ord_div", "true_u", "true_sigma"]

STUDY_MARKDOWN = Template("""\
## {{ title }}

| level | {{ u_label }} | h^n | {{ sigma_label }} | h^n | {{ div_label }} | h^n |
|------:|------:|----:|------:|----:|------:|----:|
{% for row in rows -%}
| {{ row.level }} | {{ row.err_u }} | {{ row.ord_u }} | {{ row.err_sigma }} | {{ row.ord_sigma }} | {{ row.err_div }} | {{ row.ord_div }} |
{% endfor %}
Load rule: {{ load_rule }}; normal stresses interpolated at face {{ interp }}s.
""")

VTK_RECTILINEAR = Template("""\
# vtk DataFile Version 3.0
{{ title }}
ASCII
DATASET RECTILINEAR_GRID
DIMENSIONS {{ dims[0] }} {{ dims[1] }} {{ dims[2] }}
{% for axis, coords in axes -%}
{{ axis }}_COORDINATES {{ coords|length }} double
{{ coords|join(' ') }}
{% endfor -%}
CELL_DATA {{ num_cells }}
{% for name, values in scalars -%}
SCALARS {{ name }} double 1
LOOKUP_TABLE default
{{ values }}
{% endfor -%}
{% if vectors -%}
VECTORS displacement double
{{ vectors }}
{% endif %}""")


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """Write text through a temporary file in the destination directory."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as e:
        raise OutputError(f"Could not write {path}: {e}") from e
    logger.debug(f"Wrote {path}")
    return path


def _error(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.12e}"


def _order(value: Optional[float]) -> str:
    return "" if value is None else f"{value:.4f}"


def _csv_text(header: List[str], rows: Iterable[List[str]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def study_csv(result: StudyResult) -> str:
    rows = []
    for r in result.records:
        rows.append([
            str(r.level), _error(r.err_u), _order(r.ord_u), _error(r.err_sigma), _order(r.ord_sigma),
            _error(r.err_div), _order(r.ord_div), _error(r.true_u), _error(r.true_sigma),
        ])
    return _csv_text(STUDY_COLUMNS, rows)


def study_markdown(result: StudyResult) -> str:
    """Table laid out like the published ones: 5 decimals for u and sigma, 8 for div, orders to 1 decimal."""
    def fixed(value: Optional[float], digits: int) -> str:
        return "" if value is None else f"{value:.{digits}f}"

    rows = [{
        "level": r.level,
        "err_u": fixed(r.err_u, 5), "ord_u": fixed(r.ord_u, 1),
        "err_sigma": fixed(r.err_sigma, 5), "ord_sigma": fixed(r.ord_sigma, 1),
        "err_div": fixed(r.err_div, 8), "ord_div": fixed(r.ord_div, 1),
    } for r in result.records]
    return STUDY_MARKDOWN.render(
        title=f"Study {result.tag}",
        u_label="‖I_h u - u_h‖",
        sigma_label="‖I_h σ - σ_h‖",
        div_label="‖div(I_h σ - σ_h)‖",
        rows=rows,
        load_rule=result.load_rule,
        interp=result.interp,
    )


def write_study(result: StudyResult, out_dir: Union[str, Path], formats: Iterable[str] = ("csv", "md")) -> List[Path]:
    out_dir = Path(out_dir)
    written = []
    formats = set(formats)
    if "csv" in formats:
        written.append(atomic_write_text(out_dir / f"table_{result.tag}.csv", study_csv(result)))
    if "md" in formats:
        written.append(atomic_write_text(out_dir / f"table_{result.tag}.md", study_markdown(result)))
    logger.info(f"Study {result.tag}: wrote {[p.name for p in written]}")
    return written


def verify_csv(results: List[CheckResult]) -> str:
    rows = [[r.name, "pass" if r.passed else "FAIL", f"{r.max_error:.6e}", r.detail] for r in results]
    return _csv_text(["check", "status", "value", "detail"], rows)


def verify_text(results: List[CheckResult]) -> str:
    width = max((len(r.name) for r in results), default=5)
    lines = [f"{'check':<{width}}  status  value"]
    for r in results:
        status = "pass" if r.passed else "FAIL"
        line = f"{r.name:<{width}}  {status:<6}  {r.max_error:.3e}"
        if r.detail:
            line += f"  ({r.detail})"
        lines.append(line)
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"


def write_verification(results: List[CheckResult], out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        atomic_write_text(out_dir / "verify.csv", verify_csv(results)),
        atomic_write_text(out_dir / "verify.txt", verify_text(results)),
    ]


def field_csv(field: Union[StressField, DisplacementField]) -> str:
    rows = [
        [block, kind, " ".join(str(c) for c in index), f"{value:.12e}"]
        for block, kind, index, value in field_records(field)
    ]
    return _csv_text(["block", "kind", "index", "value"], rows)


def write_fields(sigma: StressField, u: DisplacementField, out_dir: Union[str, Path], stem: str) -> List[Path]:
    out_dir = Path(out_dir)
    return [
        atomic_write_text(out_dir / f"{stem}_sigma.csv", field_csv(sigma)),
        atomic_write_text(out_dir / f"{stem}_u.csv", field_csv(u)),
    ]


def vtk_text(sigma: StressField, u: DisplacementField, title: str = "minmix solution") -> str:
    """Legacy VTK rectilinear grid with cell-center stresses and cell displacements."""
    layout = sigma.layout
    grid = layout.grid
    if grid.dim > 3:
        raise OutputError(f"VTK output supports up to 3D, got {grid.dim}D")

    # VTK orders cells with x fastest
    order = np.arange(grid.num_cells).reshape(grid.cells_per_axis).transpose().reshape(-1)
    center = sigma.evaluate_cells(np.zeros((1, grid.dim)))[:, 0][order]

    names = "xyz"
    axes = []
    dims = [1, 1, 1]
    for a in range(3):
        n = grid.cells_per_axis[a] if a < grid.dim else 0
        coords = np.linspace(0.0, 1.0, n + 1) if a < grid.dim else np.zeros(1)
        dims[a] = len(coords)
        axes.append((names[a].upper(), [f"{c:.12g}" for c in coords]))

    scalars = []
    for i in range(grid.dim):
        for j in range(i, grid.dim):
            scalars.append((f"sigma_{names[i]}{names[j]}", "\n".join(f"{v:.12e}" for v in center[:, i, j])))

    displacement = u.values[order]
    vectors = []
    for row in displacement:
        padded = list(row) + [0.0] * (3 - grid.dim)
        vectors.append(" ".join(f"{v:.12e}" for v in padded))

    return VTK_RECTILINEAR.render(
        title=title, dims=dims, axes=axes, num_cells=grid.num_cells, scalars=scalars, vectors="\n".join(vectors),
    )


def write_vtk(sigma: StressField, u: DisplacementField, path: Union[str, Path], title: str = "minmix solution") -> Path:
    return atomic_write_text(path, vtk_text(sigma, u, title))


def write_matrix_market(system: SaddleSystem, out_dir: Union[str, Path], stem: str) -> List[Path]:
    """M, B and (when present) C of a system in Matrix Market format."""
    out_dir = Path(out_dir)
    written = []
    blocks = {"M": system.M, "B": system.B}
    if system.num_constraints:
        blocks["C"] = system.C
    for name, matrix in blocks.items():
        buffer = io.BytesIO()
        try:
            scipy.io.mmwrite(buffer, matrix.tocoo(), comment=f"{stem} block {name}", precision=17)
        except (ValueError, TypeError) as e:
            raise OutputError(f"Could not encode block {name}: {e}") from e
        written.append(atomic_write_text(out_dir / f"{stem}_{name}.mtx", buffer.getvalue().decode("ascii")))
    return written
