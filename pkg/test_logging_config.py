import logging
import os

from errors import NoBracket, SingularMatrix
from logging_config import ContextLogger, ErrorTracker, build_logging_config, setup_logging


def test_console_only_schema_drops_file_handlers():
    cfg = build_logging_config(level="warning", console_only=True)
    assert set(cfg["handlers"]) == {"console"}
    assert cfg["handlers"]["console"]["level"] == "WARNING"
    assert all(logger["handlers"] == ["console"] for logger in cfg["loggers"].values())


def test_file_handlers_follow_the_log_directory(tmp_path):
    cfg = build_logging_config(str(tmp_path / "logs"))
    assert cfg["handlers"]["file"]["filename"] == os.path.join(str(tmp_path / "logs"), "gelsim.log")
    assert cfg["handlers"]["error_file"]["filename"] == os.path.join(str(tmp_path / "logs"), "errors.log")


def test_setup_creates_the_log_directory(tmp_path):
    log_dir = tmp_path / "logs"
    setup_logging(str(log_dir), "INFO")
    logging.getLogger("gelsim.test").error("written to disk")
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert (log_dir / "errors.log").read_text(encoding="utf8").count("written to disk") == 1
    setup_logging(console_only=True)


def test_error_tracker_counts_by_type():
    tracker = ErrorTracker()
    tracker.log_error(SingularMatrix("zero pivot", pivot=3), "run")
    tracker.log_error(SingularMatrix("zero pivot", pivot=3), "run")
    tracker.log_error(NoBracket("no sign change"), "equilibrium")
    summary = tracker.get_error_summary()
    assert summary["total_error_types"] == 2
    assert summary["total_errors"] == 3
    assert summary["most_common_errors"][0][1] == 2
    assert summary["last_error_at"] is not None
    tracker.reset()
    assert tracker.get_error_summary()["total_errors"] == 0


def test_context_logger_appends_scenario(caplog):
    log = ContextLogger("gelsim.test", {"variant": "viscous-permeable", "level": 3})
    with caplog.at_level(logging.INFO, logger="gelsim.test"):
        log.info("assembled")
    assert "assembled | Context: variant:viscous-permeable | level:3" in caplog.text
    assert ContextLogger("gelsim.test")._with_context("plain") == "plain"
