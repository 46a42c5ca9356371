import json
import logging
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd

from cf_parity.errors import RowError, SchemaError

logger = logging.getLogger(__name__)


def get_version():
    try:
        return version("cf_parity")
    except PackageNotFoundError:
        return "unknown"


def read_checked_csv(path, required: Iterable[str], numeric: Iterable[str] = ()) -> pd.DataFrame:
    """
    Read a comma-separated file and check its schema cell by cell.

    Parameters
    ----------
    path : str or Path
        UTF-8 CSV with a header row.
    required : iterable of str
        Columns that must be present; only these are returned, as strings
        unless listed in ``numeric``.
    numeric : iterable of str
        Columns parsed as floats.

    Raises
    ------
    SchemaError
        A required column is missing from the header.
    RowError
        A required cell is empty or a numeric cell does not parse. ``line`` is
        the 1-based line in the file (the header is line 1).
    """
    required, numeric = list(required), set(numeric)
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    df.columns = [c.strip() for c in df.columns]
    for column in required:
        if column not in df.columns:
            raise SchemaError(f"Missing required column {column!r} in {path}", column)

    df = df[required].copy()
    for column in required:
        values = df[column].str.strip()
        empty = values == ""
        if empty.any():
            line = int(np.flatnonzero(empty.to_numpy())[0]) + 2
            raise RowError(f"Line {line}: missing value in column {column!r}", line)
        if column in numeric:
            parsed = pd.to_numeric(values, errors="coerce")
            bad = parsed.isna() | ~np.isfinite(parsed.astype(float))
            if bad.any():
                row = int(np.flatnonzero(bad.to_numpy())[0])
                line = row + 2
                raise RowError(f"Line {line}: cannot parse {values.iloc[row]!r} in column {column!r}", line)
            df[column] = parsed.astype(float)
        else:
            df[column] = values
    logger.info("Read %d rows from %s", len(df), path)
    return df


def write_csv(df: pd.DataFrame, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")
    logger.info("Table saved to %s", path)


def write_json(record: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record, f, indent=4)
        f.write("\n")
    logger.info("Report saved to %s", path)
