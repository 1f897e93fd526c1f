"""Package logger for ewtreg runs.

Console output goes to stdout as bare messages. Each CLI run can also keep a full DEBUG trace in
``<output_dir>/<YYYY-MM-DD-HH_MM>-<run_name>.log``.
"""

import logging
import sys
from datetime import datetime
from pathlib import Path

LOGGER_NAME = "ewtreg"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_TIMESTAMP = "%Y-%m-%d-%H_%M"


def log_file_path(output_dir: Path, run_name: str, now: datetime | None = None) -> Path:
    stamp = (now or datetime.now()).strftime(LOG_TIMESTAMP)
    return output_dir / f"{stamp}-{run_name}.log"


def _reset(logger: logging.Logger) -> None:
    # close log files of earlier runs in this process
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def setup_logging(
    verbose: bool = False,
    quiet: bool = False,
    log_to_file: bool = False,
    output_dir: Path | None = None,
    run_name: str | None = None,
) -> Path | None:
    """Configure the ``ewtreg`` logger for one run.

    The console shows warnings (everything with ``verbose``, nothing with ``quiet``). Returns the
    log file path when a file handler was attached.
    """
    logger = logging.getLogger(LOGGER_NAME)
    _reset(logger)
    logger.setLevel(logging.DEBUG if verbose or log_to_file else logging.INFO)

    if not quiet:
        console = logging.StreamHandler(sys.stdout)
        console.setFormatter(logging.Formatter("%(message)s"))
        console.setLevel(logging.DEBUG if verbose else logging.WARNING)
        logger.addHandler(console)

    if not (log_to_file and output_dir and run_name):
        return None
    output_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_file_path(output_dir, run_name)
    file_handler = logging.FileHandler(log_path, encoding="utf-8")
    file_handler.setFormatter(logging.Formatter(FILE_FORMAT))
    file_handler.setLevel(logging.DEBUG)
    logger.addHandler(file_handler)
    logger.debug(f"Logging to file: {log_path}")
    return log_path


def get_logger() -> logging.Logger:
    return logging.getLogger(LOGGER_NAME)
