# utils/logger.py

"""
Central logging setup for ventriq.
Configures the project logger once: console output plus a rotating log file.
Library modules log through child loggers named "ventriq.<module>".
"""

import logging
import os
from logging.handlers import RotatingFileHandler
from typing import Optional

PROJECT_LOGGER = "ventriq"
LOG_FILE_NAME = "ventriq.log"


def setup_logger(name: str = PROJECT_LOGGER, log_file: Optional[str] = None, console_level: int = logging.INFO) -> logging.Logger:
    """
    Sets up and configures a logger.

    Args:
        name (str): The logger name; "ventriq" covers every pipeline module.
        log_file (str, optional): Path of the rotating log file. No file handler when omitted.
        console_level (int): Threshold of the console handler.

    Returns:
        logging.Logger: The configured logger instance.
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # Repeated calls (one per CLI invocation) reuse the handlers already attached.
    file_handlers = [h for h in logger.handlers if isinstance(h, RotatingFileHandler)]
    console_handlers = [h for h in logger.handlers if type(h) is logging.StreamHandler]

    if log_file and not any(h.baseFilename == os.path.abspath(log_file) for h in file_handlers):
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        # 5 MiB per file, 3 backups
        file_handler = RotatingFileHandler(log_file, maxBytes=5 * 1024 * 1024, backupCount=3, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter("%(asctime)s | %(name)s | %(levelname)s | %(message)s"))
        logger.addHandler(file_handler)

    if console_handlers:
        for handler in console_handlers:
            handler.setLevel(console_level)
    else:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(console_level)
        console_handler.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] -> %(message)s"))
        logger.addHandler(console_handler)

    return logger
