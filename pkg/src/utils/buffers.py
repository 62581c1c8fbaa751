"""
Run Log Buffers

This module provides classes for managing the text buffers that make up the
run log of a smoothing job. Different components write to separate sections,
which can be consumed in various ways:
- Echoed to standard error (echo_progress=True)
- Observed by other components via callbacks (the API server, tests)
- Dumped as a whole after the run

Standard output is reserved for data, so nothing here ever prints to it.
"""
import sys
from collections import defaultdict
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, TextIO

from src.utils.buffer_config import get_buffer_names, is_buffer_echoed


def _timestamp() -> str:
    return datetime.now(timezone.utc).strftime("%H:%M:%S")


class TextBuffer:
    """A single text buffer that accumulates timestamped entries."""
    def __init__(self) -> None:
        self.entries: List[Dict[str, Any]] = []

    def write(self, content: str, timestamp: str) -> None:
        """Add a timestamped entry to the buffer."""
        self.entries.append({"content": content, "timestamp": timestamp})

    def dump(self) -> str:
        """Get the entire buffer contents as a string."""
        return "\n".join(f"[{entry['timestamp']}] {entry['content']}" for entry in self.entries)


class BufferManager:
    """
    Manages the named sections of a run log.

    Key features:
    - Maintains separate buffers for progress, diagnostics and results
    - Echoes the progress section to standard error in real time
    - Notifies observers when buffer content changes
    """
    def __init__(self, buffer_names: Optional[List[str]] = None, echo_progress: bool = True,
                 stream: Optional[TextIO] = None) -> None:
        """
        Initialize a new BufferManager.

        Args:
            buffer_names: Names of buffers to initialize (default: all from config)
            echo_progress: Whether echoed sections are copied to the stream
            stream: Where echoed lines go (default: sys.stderr at write time)
        """
        self._bufs: Dict[str, TextBuffer] = defaultdict(TextBuffer)
        self.echo_progress = echo_progress
        self.stream = stream
        self.observers: List[Callable[[str, str, str], None]] = []

        if buffer_names is None:
            buffer_names = get_buffer_names()
        for name in buffer_names:
            self._bufs[name] = TextBuffer()

    def register_observer(self, callback: Callable[[str, str, str], None]) -> None:
        """
        Register a function to be called when buffer content changes.

        The callback receives the section name, the message and its timestamp.
        """
        self.observers.append(callback)

    def write(self, section: str, content: Any) -> None:
        """Write a line (anything with a str form) to a named buffer section."""
        message = content if isinstance(content, str) else str(content)
        ts = _timestamp()
        self._bufs[section].write(message, ts)

        if self.echo_progress and is_buffer_echoed(section):
            stream = self.stream if self.stream is not None else sys.stderr
            print(message, file=stream, flush=True)

        for observer in self.observers:
            observer(section, message, ts)

    def dump(self, section: str) -> str:
        """Get the entire contents of a buffer section."""
        return self._bufs[section].dump()

    def dump_all(self) -> Dict[str, str]:
        """Contents of every section, keyed by name."""
        return {section: self.dump(section) for section in self.sections}

    @property
    def sections(self):
        """Get all active buffer section names."""
        return self._bufs.keys()
