import logging
import os
import sys
import time
from typing import Optional, Dict, Any
import json
from pathlib import Path


class AppLogger:
    """Structured logging: a message plus an optional JSON context block"""

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(os.getenv("LOG_LEVEL", "INFO").upper())

        # Only set up handlers once
        if not self.logger.handlers:
            self._setup_handlers()
        self.logger.propagate = False

    def _setup_handlers(self):
        """Console output always, log files only when LOG_TO_FILE is set"""
        console = logging.StreamHandler(sys.stdout)
        console_format = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )
        console.setFormatter(console_format)
        self.logger.addHandler(console)

        if os.getenv("LOG_TO_FILE", "false").lower() not in ("1", "true", "yes"):
            return

        log_dir = Path(os.getenv("LOG_DIR", "logs"))
        log_dir.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_dir / 'app.log')
        error_handler = logging.FileHandler(log_dir / 'errors.log')
        error_handler.setLevel(logging.ERROR)

        file_format = logging.Formatter(
            '%(asctime)s - %(name)s - %(funcName)s:%(lineno)d - %(levelname)s - %(message)s'
        )
        file_handler.setFormatter(file_format)
        error_handler.setFormatter(file_format)

        self.logger.addHandler(file_handler)
        self.logger.addHandler(error_handler)

    @staticmethod
    def _format(message: str, extra: Optional[Dict[str, Any]]) -> str:
        if extra:
            return f"{message} | {json.dumps(extra, default=str, sort_keys=True)}"
        return message

    def info(self, message: str, extra: Optional[Dict[str, Any]] = None):
        """Log info message with optional context"""
        self.logger.info(self._format(message, extra))

    def warning(self, message: str, extra: Optional[Dict[str, Any]] = None):
        self.logger.warning(self._format(message, extra))

    def error(self, message: str, extra: Optional[Dict[str, Any]] = None, exc_info: bool = False):
        self.logger.error(self._format(message, extra), exc_info=exc_info)

    def debug(self, message: str, extra: Optional[Dict[str, Any]] = None):
        if self.logger.isEnabledFor(logging.DEBUG):
            self.logger.debug(self._format(message, extra))


class Timer:
    """Wall-clock timing of named operations with running statistics"""

    def __init__(self):
        self.start_times = {}
        self.performance_metrics = {}

    def start(self, operation: str):
        """Start timing an operation"""
        self.start_times[operation] = time.perf_counter()

    def end(self, operation: str, extra: Optional[Dict[str, Any]] = None) -> Optional[float]:
        """End timing and log the duration with metrics"""
        logger = get_logger("timer")
        if operation not in self.start_times:
            logger.warning(f"No timer found for: {operation}")
            return None

        duration = time.perf_counter() - self.start_times.pop(operation)
        metrics = self.performance_metrics.setdefault(operation, [])
        metrics.append(duration)

        context = {
            "duration": f"{duration:.3f}s",
            "avg_duration": f"{sum(metrics) / len(metrics):.3f}s",
            "min_duration": f"{min(metrics):.3f}s",
            "max_duration": f"{max(metrics):.3f}s",
            "total_calls": len(metrics)
        }
        if extra:
            context.update(extra)

        logger.info(f"Completed: {operation}", context)
        return duration

    def get_performance_summary(self) -> Dict[str, Any]:
        """Get performance summary for run reports"""
        summary = {}
        for operation, metrics in self.performance_metrics.items():
            if metrics:
                summary[operation] = {
                    "total_calls": len(metrics),
                    "avg_duration": sum(metrics) / len(metrics),
                    "min_duration": min(metrics),
                    "max_duration": max(metrics),
                    "total_time": sum(metrics)
                }
        return summary


_loggers: Dict[str, AppLogger] = {}


def get_logger(name: str) -> AppLogger:
    """Get a logger for a specific module"""
    if name not in _loggers:
        _loggers[name] = AppLogger(name)
    return _loggers[name]


timer = Timer()
