"""Process-wide cap on worker threads (set by ``--threads``)."""
import os

_threads = 1


def set_threads(n: int | None) -> None:
    global _threads
    _threads = max(1, int(n)) if n else max(1, os.cpu_count() or 1)


def get_threads() -> int:
    return _threads
