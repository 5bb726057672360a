"""CSV writers.

Every file is written to a temporary sibling and renamed into place, so a
failure never leaves a partial CSV behind.  Floats use ``repr`` (shortest
round-trip form) unless a fixed format is stated, which keeps output
byte-identical across runs.
"""

from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise
    return path


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    if hasattr(v, "item"):  # numpy scalar
        return _fmt(v.item())
    return str(v)


def write_trace_csv(path, trace) -> Path:
    # fixed decimals: t to 1e-6, idle fraction to 1e-9
    rows = (
        (f"{t:.6f}", f"{f:.9f}", int(s), int(a))
        for t, f, s, a in zip(trace.t, trace.idle_fraction, trace.servers, trace.asleep)
    )
    return write_rows(path, ("t", "idle_fraction", "servers", "asleep"), rows)


def write_occupancy_csv(path, occ) -> Path:
    rows = ((i + 1, int(c)) for i, c in enumerate(occ.eta))
    return write_rows(path, ("urn_index", "count"), rows)


def write_realization_csv(path, realization) -> Path:
    P = realization.P
    rows = ((n, float(realization.T[n]), float(P[n - 1]) if n else "")
            for n in range(len(realization.T)))
    return write_rows(path, ("n", "T_n", "P_n"), rows)


def write_table_csv(path, xs, values, value_name: str = "value") -> Path:
    rows = ((float(x), float(v)) for x, v in zip(xs, values))
    return write_rows(path, ("x", value_name), rows)
