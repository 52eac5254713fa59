import json
import logging

from stratah.logging_config import (
    JSONFormatter,
    PlainFormatter,
    get_logger,
    operation_context,
    setup_logging,
)


def _record(msg="hello", **extra_fields):
    record = logging.LogRecord("stratah.test", logging.INFO, __file__, 10, msg, (), None, func="fn")
    record.extra_fields = extra_fields
    return record


class TestJSONFormatter:

    def test_standard_fields(self):
        entry = json.loads(JSONFormatter().format(_record(tau=48.0)))
        assert entry["msg"] == "hello"
        assert entry["level"] == "info"
        assert entry["application"] == "stratah"
        assert entry["location"] == "stratah.test:fn:10"
        assert entry["tau"] == 48.0
        assert "operation" not in entry

    def test_operation_context(self):
        with operation_context("simulate:tiny"):
            entry = json.loads(JSONFormatter().format(_record()))
        assert entry["operation"] == "simulate:tiny"
        assert "operation" not in json.loads(JSONFormatter().format(_record()))


class TestPlainFormatter:

    def test_key_value_pairs(self):
        with operation_context("analyze:tau=10"):
            line = PlainFormatter().format(_record(n=12))
        assert line.startswith("info")
        assert "operation=analyze:tau=10 n=12" in line


class TestSetupLogging:

    def test_handler_is_replaced_on_repeat_calls(self):
        setup_logging("DEBUG")
        setup_logging("WARNING", json_output=False)
        ours = [h for h in logging.getLogger().handlers if getattr(h, "_stratah_handler", False)]
        assert len(ours) == 1
        assert isinstance(ours[0].formatter, PlainFormatter)
        assert logging.getLogger().level == logging.WARNING

    def test_structured_logger_passes_extra_fields(self, caplog):
        logger = get_logger("stratah.tests")
        with caplog.at_level(logging.INFO):
            logger.info("Simulation started", replications=5)
        assert caplog.records[-1].extra_fields == {"replications": 5}
