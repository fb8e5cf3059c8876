"""Per-file process log: ordered (timestamp, level, message) entries.

Every absent metric in a result row must have a matching WARN or ERROR entry,
so operations that can downgrade a failure accept an optional ProcessLog.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

LEVELS = ("INFO", "WARN", "ERROR")


@dataclass
class LogEntry:
    timestamp: str
    level: str
    message: str

    def format(self) -> str:
        return f"{self.timestamp} [{self.level}] {self.message}"


@dataclass
class ProcessLog:
    entries: list[LogEntry] = field(default_factory=list)

    def _add(self, level: str, message: str) -> None:
        stamp = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        self.entries.append(LogEntry(stamp, level, message))

    def info(self, message: str) -> None:
        self._add("INFO", message)

    def warn(self, message: str) -> None:
        self._add("WARN", message)

    def error(self, message: str) -> None:
        self._add("ERROR", message)

    def messages(self, level: str | None = None) -> list[str]:
        if level is None:
            return [e.message for e in self.entries]
        return [e.message for e in self.entries if e.level == level]

    def has_level(self, level: str) -> bool:
        return any(e.level == level for e in self.entries)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(entry.format() + "\n")


def ensure_log(log: ProcessLog | None) -> ProcessLog:
    """Return the given log, or a throwaway one so callers can stay terse."""
    return log if log is not None else ProcessLog()
