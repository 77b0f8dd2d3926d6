"""CSV output with a trailing metadata block, and training-data ingestion."""

import csv
import io
import json
import os

import numpy as np

from .exceptions import GPABCError

METADATA_PREFIX = "# "


class DataFormatError(GPABCError, ValueError):
    """Malformed input file; the message carries the offending line number."""


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render_csv(header, rows, metadata=None):
    """CSV text: header row, data rows, then ``# key: value`` metadata lines.

    Floats use ``repr`` so output is exact and reproducible.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    for key, value in (metadata or {}).items():
        text = value if isinstance(value, str) else json.dumps(value, sort_keys=True, default=str)
        buf.write(f"{METADATA_PREFIX}{key}: {text}\n")
    return buf.getvalue()


def write_csv(path, header, rows, metadata=None):
    text = render_csv(header, rows, metadata)
    if hasattr(path, "write"):
        path.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_csv_rows(path):
    """Header and data rows of a CSV written by :func:`write_csv` (metadata skipped)."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def read_training_csv(path):
    """Read ``theta_1..theta_p,delta`` rows of raw discrepancies.

    Returns
    -------
    params : ndarray, shape (t, p)
    deltas : ndarray, shape (t,)

    Raises
    ------
    DataFormatError
        On a bad header, wrong field count, non-numeric or negative values,
        reporting the 1-based line number.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    params, deltas = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for row in reader:
            lineno = reader.line_num
            if not row or row[0].startswith("#"):
                continue
            cells = [c.strip() for c in row]
            if header is None:
                header = cells
                p = len(header) - 1
                expected = [f"theta_{i + 1}" for i in range(p)] + ["delta"]
                if p < 1 or header != expected:
                    raise DataFormatError(
                        f"line {lineno}: header must be {','.join(expected) if p >= 1 else 'theta_1,...,delta'}"
                    )
                continue
            if len(cells) != len(header):
                raise DataFormatError(
                    f"line {lineno}: expected {len(header)} fields, found {len(cells)}"
                )
            try:
                values = [float(c) for c in cells]
            except ValueError:
                raise DataFormatError(f"line {lineno}: non-numeric value") from None
            if not all(np.isfinite(values)):
                raise DataFormatError(f"line {lineno}: non-finite value")
            if values[-1] < 0:
                raise DataFormatError(f"line {lineno}: delta must be >= 0")
            params.append(values[:-1])
            deltas.append(values[-1])
    if header is None:
        raise DataFormatError("line 1: file is empty")
    if not deltas:
        raise DataFormatError(f"line {reader.line_num}: no data rows")
    return np.array(params), np.array(deltas)
