import numpy as np
import pytest
import scipy.io

from src.assembly import assemble
from src.convergence import ErrorRecord, StudyResult
from src.exports import (
    STUDY_COLUMNS,
    atomic_write_text,
    study_csv,
    study_markdown,
    verify_text,
    vtk_text,
    write_fields,
    write_matrix_market,
    write_study,
    write_verification,
)
from src.failures import OutputError
from src.fem_spaces import DisplacementField, DofLayout, StressField
from src.verify import CheckResult


@pytest.fixture
def study():
    return StudyResult(
        tag="e1",
        records=[
            ErrorRecord(level=1, cells=1, err_u=0.0589255651, err_sigma=0.7288689868, err_div=1.4142135624),
            ErrorRecord(level=2, cells=4, err_u=0.0244700000, err_sigma=0.2458500000, err_div=0.3535533906,
                        ord_u=1.2679, ord_sigma=1.5679, ord_div=2.0),
        ],
    )


class TestAtomicWrite:
    """Temporary-file writes."""

    def test_creates_directories(self, tmp_path):
        """Missing parents are created and no temporary file is left."""
        path = atomic_write_text(tmp_path / "a" / "b.txt", "hello\n")
        assert path.read_text() == "hello\n"
        assert [p.name for p in path.parent.iterdir()] == ["b.txt"]

    def test_unwritable_destination(self, tmp_path):
        """OS errors become OutputError."""
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OutputError):
            atomic_write_text(blocker / "inside.txt", "data")


class TestStudyTables:
    """Convergence table formats."""

    def test_csv(self, study):
        """Header, empty first-level orders and full-precision errors."""
        lines = study_csv(study).splitlines()
        assert lines[0] == ",".join(STUDY_COLUMNS)
        first = lines[1].split(",")
        assert first[0] == "1"
        assert first[2] == ""
        assert float(first[1]) == pytest.approx(0.0589255651)
        assert lines[2].split(",")[6] == "2.0000"

    def test_markdown(self, study):
        """Five decimals for u and sigma, eight for div, orders to one decimal."""
        text = study_markdown(study)
        assert "## Study e1" in text
        assert "| 1 | 0.05893 |  | 0.72887 |  | 1.41421356 |  |" in text
        assert "| 2 | 0.02447 | 1.3 | 0.24585 | 1.6 | 0.35355339 | 2.0 |" in text
        assert "Load rule: midpoint" in text

    def test_write_study(self, study, tmp_path):
        """One file per requested format."""
        written = write_study(study, tmp_path, ["csv"])
        assert [p.name for p in written] == ["table_e1.csv"]
        written = write_study(study, tmp_path)
        assert {p.name for p in written} == {"table_e1.csv", "table_e1.md"}


class TestVerificationTables:
    """verify.csv and verify.txt."""

    def test_text_summary(self, tmp_path):
        """Failures are marked and counted."""
        results = [CheckResult("a check", True, 1e-15), CheckResult("b", False, 0.5, "too large")]
        text = verify_text(results)
        assert "FAIL" in text
        assert "(too large)" in text
        assert text.rstrip().endswith("1/2 checks passed")
        paths = write_verification(results, tmp_path)
        assert (tmp_path / "verify.csv").read_text().splitlines()[2].startswith("b,FAIL,")
        assert len(paths) == 2


class TestFieldOutput:
    """Field dumps, VTK and Matrix Market."""

    def test_field_csv(self, grid2, tmp_path):
        """One row per unknown plus a header."""
        layout = DofLayout(grid2)
        paths = write_fields(StressField.zeros(layout), DisplacementField.zeros(layout), tmp_path, "e1_2x2")
        assert [p.name for p in paths] == ["e1_2x2_sigma.csv", "e1_2x2_u.csv"]
        sigma_lines = paths[0].read_text().splitlines()
        assert sigma_lines[0] == "block,kind,index,value"
        assert len(sigma_lines) == 1 + layout.stress_size
        assert sigma_lines[1] == "sigma00,face0,0 0,0.000000000000e+00"

    def test_vtk(self, grid2):
        """Rectilinear header, cell data and displacement vectors in x-fastest order."""
        layout = DofLayout(grid2)
        u = DisplacementField(layout, np.arange(8.0))
        text = vtk_text(StressField.zeros(layout), u, title="demo")
        lines = text.splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[1] == "demo"
        assert "DIMENSIONS 3 3 1" in text
        assert "CELL_DATA 4" in text
        assert "SCALARS sigma_xy double 1" in text
        start = lines.index("VECTORS displacement double")
        first, second = lines[start + 1], lines[start + 2]
        assert first.split()[:2] == ["0.000000000000e+00", "1.000000000000e+00"]
        # cell (1, 0) comes second in x-fastest order
        assert float(second.split()[0]) == float(layout.displacement_dof((1, 0), 0))

    def test_matrix_market(self, grid2, material, tmp_path):
        """Blocks read back with the same entries."""
        system = assemble(grid2, material, "traction")
        paths = write_matrix_market(system, tmp_path, "t")
        assert sorted(p.name for p in paths) == ["t_B.mtx", "t_C.mtx", "t_M.mtx"]
        M = scipy.io.mmread(str(tmp_path / "t_M.mtx"))
        assert abs(M - system.M).max() < 1e-15
