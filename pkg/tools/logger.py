import os
import logging
import threading
from typing import Dict, Literal, Optional


LOG_DIR_ENV = "BLINDCHAN_LOG_DIR"


def resolve_log_dir() -> str:
    """
    Directory holding the .log files.

    Defaults to 'logs/' at the repository root; the BLINDCHAN_LOG_DIR
    environment variable (also loadable from config/.env) overrides it.
    """
    override = os.getenv(LOG_DIR_ENV)
    if override:
        return os.path.abspath(override)
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "logs")


class AppLogger:
    """
    A class to log application events to a .log file.
    Supports different logging levels: DEBUG, INFO, WARNING, ERROR, CRITICAL.

    One file per component (e.g. 'blind_ideal.log'). Entries are written
    through the standard logging module so that Monte-Carlo workers running
    in threads can share a logger.
    """

    # Define allowed logging levels
    LogLevel = Literal['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL']

    _handlers: Dict[str, logging.Handler] = {}
    _lock = threading.Lock()

    def __init__(self, log_file: str, log_dir: Optional[str] = None) -> None:
        """
        Initialize the logger with the given file name.
        If the file or folder does not exist, it will be created automatically.

        :param log_file: Name of the log file (e.g., 'experiment.log')
        :param log_dir: Optional directory; defaults to resolve_log_dir()
        """
        base_dir = log_dir or resolve_log_dir()
        os.makedirs(base_dir, exist_ok=True)
        self.log_file = os.path.join(base_dir, log_file)

        name = f"blindchan.{os.path.splitext(log_file)[0]}"
        self._logger = logging.getLogger(name)
        self._logger.setLevel(logging.DEBUG)
        self._logger.propagate = False

        with AppLogger._lock:
            handler = AppLogger._handlers.get(self.log_file)
            if handler is None:
                try:
                    handler = logging.FileHandler(self.log_file, mode="a", encoding="utf-8")
                except OSError as e:
                    print(f"Failed to create log file '{self.log_file}': {e}")
                    raise
                handler.setFormatter(
                    logging.Formatter("[%(asctime)s] [%(levelname)s] %(message)s", "%Y-%m-%d %H:%M:%S")
                )
                AppLogger._handlers[self.log_file] = handler
            # A logger name may have been bound to another directory earlier (tests).
            for old in list(self._logger.handlers):
                if old is not handler:
                    self._logger.removeHandler(old)
            if handler not in self._logger.handlers:
                self._logger.addHandler(handler)

    def log(self, message: str, level: LogLevel, exc_info: bool = False) -> None:
        """
        Log an event to the file with a timestamp and the specified level.

        :param message: The message to log
        :param level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        :param exc_info: Attach the active exception traceback
        """
        self._logger.log(getattr(logging, level), message, exc_info=exc_info)

    # Convenience methods for each log level
    def debug(self, message: str) -> None:
        self.log(message, 'DEBUG')

    def info(self, message: str) -> None:
        self.log(message, 'INFO')

    def warning(self, message: str) -> None:
        self.log(message, 'WARNING')

    def error(self, message: str, exc_info: bool = False) -> None:
        self.log(message, 'ERROR', exc_info=exc_info)

    def critical(self, message: str) -> None:
        self.log(message, 'CRITICAL')
