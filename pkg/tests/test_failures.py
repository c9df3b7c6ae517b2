import pytest

from src.failures import (
    DenseSizeError,
    FailureMonitor,
    FailureSeverity,
    GridError,
    OutputError,
    SolverError,
    Stage,
    VerificationError,
    ensure_dense_fits,
    exit_code_for,
    failure_context,
)


class TestFailureMonitor:
    """Failure recording."""

    def test_register_and_summary(self):
        """Events are counted per stage and severity."""
        monitor = FailureMonitor()
        monitor.register(Stage.SOLVER, SolverError("stalled"), {"level": 5})
        monitor.register(Stage.GRID, GridError("bad cell"))
        summary = monitor.summary()
        assert summary["failures"] == 2
        assert summary["by_stage"] == {"solver": 1, "grid": 1}
        assert summary["by_severity"] == {"high": 1, "low": 1}
        assert summary["last"] == "bad cell"
        assert monitor.history[0].context == {"level": 5}

    def test_history_is_bounded(self):
        """Only the most recent events are kept."""
        monitor = FailureMonitor(max_history=3)
        for k in range(5):
            monitor.register(Stage.OUTPUT, OutputError(f"write {k}"))
        assert [e.message for e in monitor.history] == ["write 2", "write 3", "write 4"]
        assert monitor.history[-1].severity == FailureSeverity.CRITICAL

    def test_context_records_and_reraises(self):
        """failure_context registers the error and lets it propagate."""
        monitor = FailureMonitor()
        with pytest.raises(DenseSizeError):
            with failure_context(Stage.VERIFY, monitor, grid=(4, 4)):
                raise DenseSizeError("too big")
        event = monitor.history[0]
        assert event.stage == Stage.VERIFY
        assert event.severity == FailureSeverity.MEDIUM
        assert event.context == {"grid": (4, 4)}
        assert "DenseSizeError: too big" in event.stack_trace

    def test_unraised_error_has_no_trace(self):
        """Registering an error that was never raised stores no stack trace."""
        monitor = FailureMonitor()
        event = monitor.register(Stage.VERIFY, VerificationError("1 check failed", ["broken"]))
        assert event.stack_trace is None
        assert event.severity == FailureSeverity.HIGH

    def test_context_without_monitor(self, caplog):
        """Without a monitor the failure is only logged."""
        with pytest.raises(ValueError):
            with failure_context(Stage.CONFIG):
                raise ValueError("bad")
        assert "config failed: bad" in caplog.text


class TestExitCodes:
    """Process exit statuses."""

    def test_codes(self):
        """Usage 1, solver 2, verification 3, output 4."""
        assert exit_code_for(GridError("x")) == 1
        assert exit_code_for(SolverError("x")) == 2
        assert exit_code_for(VerificationError("x")) == 3
        assert exit_code_for(OutputError("x")) == 4
        assert exit_code_for(PermissionError("x")) == 4
        assert exit_code_for(RuntimeError("x")) == 1

    def test_solver_error_payload(self):
        """SolverError carries the report, best iterate and partial result."""
        error = SolverError("stalled", report="r", best=("s", "u"))
        assert error.report == "r"
        assert error.best == ("s", "u")
        assert error.partial is None


class TestDenseGuard:
    """Dense work limits."""

    def test_row_limit(self):
        """Row counts above the limit are refused."""
        ensure_dense_fits(100, 100)
        with pytest.raises(DenseSizeError):
            ensure_dense_fits(101, 100)

    def test_memory_limit(self, mocker):
        """Dense matrices larger than half the free memory are refused."""
        mocker.patch("src.failures.check_system_resources",
                     return_value={"available_memory_mb": 1.0, "memory_percent": 99.0, "cpu_count": 1.0})
        with pytest.raises(DenseSizeError, match="MB"):
            ensure_dense_fits(1000, 5000)
