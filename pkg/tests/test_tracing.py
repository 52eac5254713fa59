import pytest
from unittest.mock import MagicMock, patch
from opentelemetry import trace

from stratah.config import settings
from stratah.exceptions import ZeroEvents
from stratah.tracing import traced


@pytest.fixture
def mock_tracer():
    """Mock the tracer to capture span creation"""
    with patch('stratah.tracing.tracer') as mock_tracer, patch.object(settings, "enable_tracing", True):
        mock_span = MagicMock()
        mock_tracer.start_as_current_span.return_value.__enter__.return_value = mock_span
        mock_tracer.start_as_current_span.return_value.__exit__.return_value = None
        yield mock_tracer, mock_span


def test_traced_success(mock_tracer):
    """Test that a traced command runs inside a span with OK status"""
    mock_tracer_obj, mock_span = mock_tracer

    @traced("analyze", **{"stratah.kind": "test"})
    def command(x):
        return x * 2

    assert command(21) == 42
    mock_tracer_obj.start_as_current_span.assert_called_once_with(
        "stratah.analyze",
        attributes={"stratah.operation": "analyze", "stratah.kind": "test"},
    )
    status_call = mock_span.set_status.call_args[0][0]
    assert status_call.status_code == trace.StatusCode.OK


def test_traced_error(mock_tracer):
    """Test that failures mark the span as ERROR and record the exception"""
    _, mock_span = mock_tracer
    error = ZeroEvents("no events by tau")

    @traced("run_simulation")
    def command():
        raise error

    with pytest.raises(ZeroEvents):
        command()

    status_call = mock_span.set_status.call_args[0][0]
    assert status_call.status_code == trace.StatusCode.ERROR
    assert status_call.description == str(error)
    mock_span.record_exception.assert_called_once_with(error)


def test_tracing_disabled_skips_span():
    with patch('stratah.tracing.tracer') as mock_tracer, patch.object(settings, "enable_tracing", False):
        assert traced("analyze")(lambda: "done")() == "done"
    mock_tracer.start_as_current_span.assert_not_called()
