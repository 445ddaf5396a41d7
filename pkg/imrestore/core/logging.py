import logging
from logging.config import dictConfig

_RESERVED = set(vars(logging.makeLogRecord({}))) | {"message", "asctime"}


class KeyValueFormatter(logging.Formatter):
    """Standard formatter that appends the ``extra`` payload as key=value pairs."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        extras = {key: value for key, value in vars(record).items() if key not in _RESERVED}
        if not extras:
            return line
        pairs = " ".join(f"{key}={_render(value)}" for key, value in sorted(extras.items()))
        return f"{line} {pairs}"


def _render(value: object) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def configure_logging(log_level: str = "INFO", log_format: str = "keyvalue") -> None:
    """Configure structured logging for the command-line tools."""
    formatter = "keyvalue" if log_format == "keyvalue" else "standard"
    dictConfig(
        {
            "version": 1,
            "disable_existing_loggers": False,
            "formatters": {
                "standard": {
                    "format": "%(asctime)s %(levelname)s [%(name)s] %(message)s",
                    "datefmt": "%Y-%m-%dT%H:%M:%S%z",
                },
                "keyvalue": {
                    "()": KeyValueFormatter,
                    "fmt": "%(asctime)s %(levelname)s [%(name)s] %(message)s",
                    "datefmt": "%Y-%m-%dT%H:%M:%S%z",
                },
            },
            "handlers": {
                "default": {
                    "level": log_level,
                    "formatter": formatter,
                    "class": "logging.StreamHandler",
                    "stream": "ext://sys.stderr",
                },
            },
            "loggers": {
                "": {
                    "handlers": ["default"],
                    "level": "WARNING",
                },
                "imrestore": {
                    "handlers": ["default"],
                    "level": log_level,
                    "propagate": False,
                },
            },
        }
    )

    logging.getLogger("imrestore").debug("Logging configured.", extra={"level": log_level})
