import json
import logging

from fmselect.utils.logger import JsonFormatter, LogType, RunLogger, setup_logging


def test_file_log_is_json_lines(tmp_path):
    setup_logging("DEBUG", tmp_path)
    run_logger = RunLogger("fit")
    run_logger.log_fit_event("finished", {"lambda0": 50.0, "selected_fixed": [0, 3]})
    logging.getLogger("fmselect.ecm").warning("Log posterior decreased")
    for handler in logging.getLogger("fmselect").handlers:
        handler.flush()

    lines = (tmp_path / "fmselect.log").read_text(encoding="utf-8").splitlines()
    records = [json.loads(line) for line in lines]
    assert records[0]["command"] == "fit"
    assert records[0]["log_type"] == "fit"
    assert records[0]["extra_data"]["selected_fixed"] == [0, 3]
    assert records[1]["logger"] == "fmselect.ecm"
    assert records[1]["level"] == "WARNING"


def test_error_records_carry_traceback(caplog):
    run_logger = RunLogger("tune")
    try:
        raise ValueError("grid exhausted")
    except ValueError as error:
        with caplog.at_level(logging.ERROR, logger="fmselect.run.error"):
            run_logger.log_error(error, context="tune")
    payload = caplog.records[0].payload
    assert payload["extra_data"]["error_type"] == "ValueError"
    assert "grid exhausted" in payload["extra_data"]["traceback"]


def test_plain_records_format_without_payload():
    record = logging.LogRecord("fmselect.tuning", logging.INFO, __file__, 10, "chain %d done", (3,), None)
    data = json.loads(JsonFormatter().format(record))
    assert data["message"] == "chain 3 done"
    assert data["level"] == "INFO"


def test_every_channel_has_a_logger():
    run_logger = RunLogger("benchmark")
    assert set(run_logger.loggers) == set(LogType)
    assert run_logger.loggers[LogType.TUNING].name == "fmselect.run.tuning"
