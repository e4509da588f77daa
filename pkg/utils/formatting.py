"""
Text helpers shared by the file formats and the CLI:
- float formatting with 17 significant digits (bitwise round trips)
- flat key=value parsing
- atomic file writes
- CSV result tables with fixed headers
"""

import logging
import os
import tempfile
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

PathLike = Union[str, os.PathLike]


def format_float(value: float) -> str:
    # 17 significant digits reproduce every float64 exactly
    return f"{value:.17g}"


def format_floats(values: Iterable[float], sep: str = ",") -> str:
    return sep.join(format_float(v) for v in values)


def parse_key_values(text: str, source: str = "<string>") -> Dict[str, str]:
    """
    Parse flat `key=value` lines. Blank lines and `#` comments are skipped.

    Raises:
        ValueError naming the line number for lines without '=' or duplicate keys
    """
    result: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"{source}:{line_no}: empty key")
        if key in result:
            raise ValueError(f"{source}:{line_no}: duplicate key {key!r}")
        result[key] = value.strip()
    return result


class LineDecodeError(ValueError):
    """A line of a text file is not valid UTF-8."""

    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(message)


def read_text(path: PathLike) -> str:
    """
    Read a UTF-8 text file, decoding line by line so a bad byte is reported with its line.

    Raises:
        LineDecodeError naming the 1-based line number
    """
    data = Path(path).read_bytes()
    lines = []
    for line_no, raw in enumerate(data.split(b"\n"), start=1):
        try:
            lines.append(raw.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise LineDecodeError(line_no, f"{path}:{line_no}: invalid UTF-8 byte at column {e.start + 1}") from e
    return "\n".join(lines)


def read_key_values(path: PathLike) -> Dict[str, str]:
    return parse_key_values(read_text(path), source=str(path))


def atomic_write_text(path: PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename over the target."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_table(path: PathLike, rows: Sequence[Mapping], columns: List[str]) -> pd.DataFrame:
    """Write rows as CSV with exactly `columns` as header; floats at 17 significant digits."""
    frame = pd.DataFrame(list(rows), columns=columns)
    for col in columns:
        if frame[col].dtype.kind == "f":
            frame[col] = frame[col].map(format_float)
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return frame


def array_to_lines(arr: np.ndarray) -> List[str]:
    """One comma-separated line per row (1-D arrays give a single line)."""
    arr = np.atleast_2d(np.asarray(arr, dtype=np.float64))
    return [format_floats(row) for row in arr]
