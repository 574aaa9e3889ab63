"""Atomic file output helpers."""
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Union

import pandas as pd

CSV_FLOAT_FORMAT = "%.10g"


@contextmanager
def atomic_output(path: Union[str, Path]) -> Iterator[Path]:
    """
    Yield a temporary sibling path; move it over ``path`` only on success.

    Args:
        path: Final destination

    Yields:
        Temporary path to write to
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a DataFrame as CSV with a fixed float format, atomically."""
    path = Path(path)
    with atomic_output(path) as tmp:
        frame.to_csv(tmp, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: Union[str, Path], required_columns=()) -> pd.DataFrame:
    """Read a CSV, checking it exists, is non-empty and has the required columns."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ValueError(f"{path} is empty") from None
    missing = [c for c in required_columns if c not in frame.columns]
    if missing:
        raise ValueError(f"{path} is missing columns: {', '.join(missing)}")
    if frame.empty:
        raise ValueError(f"{path} has no rows")
    return frame
