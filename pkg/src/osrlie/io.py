"""Reading and writing point clouds.

Pipeline I/O uses a comma-separated text format with a mandatory header::

    x,y,z[,intensity][,truth][,ground][,v][,class]

Columns always appear in that order.  ``truth`` and ``class`` hold label
tokens (``ground``, ``tree``, ``human``, ``human_1``, ``human_2``), ``ground``
is 1 for ground points and 0 otherwise, and an empty ``v`` cell means the
point has no LIE feature.  Reals are written with 17 significant digits so a
write/read cycle reproduces every float64 exactly.

A minimal LAS 1.2-1.4 reader covers point formats 0, 1 and 6 (coordinates
and intensity only).
"""

from __future__ import annotations

import csv
import logging
import math
import os
import struct
import tempfile

import numpy as np

from .cloud import Label, PointCloud
from .errors import FormatError, ParseError, SchemaError, UnsupportedFormat

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("x", "y", "z")
OPTIONAL_COLUMNS = ("intensity", "truth", "ground", "v", "class")
COLUMN_ORDER = REQUIRED_COLUMNS + OPTIONAL_COLUMNS

# column name -> PointCloud attribute
_ATTR = {"intensity": "intensity", "truth": "truth", "ground": "ground", "v": "v", "class": "predicted"}


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def available_columns(cloud: PointCloud) -> set[str]:
    return {c for c, attr in _ATTR.items() if getattr(cloud, attr) is not None}


def write_csv(cloud: PointCloud, path, include=None) -> None:
    """Write ``cloud`` to ``path``.

    ``include`` is the set of optional columns to emit; ``None`` means every
    column the cloud carries.  The file is written atomically (temporary file
    plus rename) so a failed write leaves no partial output.
    """
    have = available_columns(cloud)
    include = set(have if include is None else include)
    unknown = include - set(OPTIONAL_COLUMNS)
    if unknown:
        raise SchemaError(f"unknown column(s): {sorted(unknown)}")
    missing = include - have
    if missing:
        raise SchemaError(f"cloud has no column(s): {sorted(missing)}")
    columns = [c for c in COLUMN_ORDER if c in REQUIRED_COLUMNS or c in include]

    rows_out = []
    xyz = cloud.xyz
    for i in range(cloud.n):
        row = [_fmt(xyz[i, 0]), _fmt(xyz[i, 1]), _fmt(xyz[i, 2])]
        for c in columns[3:]:
            if c == "intensity":
                row.append(_fmt(cloud.intensity[i]))
            elif c == "truth":
                row.append(Label(int(cloud.truth[i])).token)
            elif c == "ground":
                row.append("1" if cloud.ground[i] else "0")
            elif c == "v":
                val = cloud.v[i]
                row.append("" if math.isnan(val) else _fmt(val))
            elif c == "class":
                row.append(Label(int(cloud.predicted[i])).token)
        rows_out.append(row)

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            writer.writerows(rows_out)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _real(cell: str, column: str, row: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"cannot parse {column}={cell!r} as a number", row) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite {column}={cell!r}", row)
    return value


def _label(cell: str, column: str, row: int, allowed) -> int:
    try:
        label = Label.from_token(cell)
    except ValueError:
        raise ParseError(f"unknown {column} label {cell!r}", row) from None
    if label not in allowed:
        raise ParseError(f"label {cell!r} not allowed in {column}", row)
    return int(label)


def read_csv(path) -> PointCloud:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing required column {col!r}")
        extra = [h for h in header if h not in COLUMN_ORDER]
        if extra:
            log.warning("%s: ignoring unknown column(s) %s", path, extra)
        pos = {h: header.index(h) for h in COLUMN_ORDER if h in header}

        xyz, cols = [], {c: [] for c in OPTIONAL_COLUMNS if c in pos}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, found {len(row)}", line_no)
            xyz.append([_real(row[pos[c]], c, line_no) for c in REQUIRED_COLUMNS])
            for c, out in cols.items():
                cell = row[pos[c]].strip()
                if c == "intensity":
                    value = _real(cell, c, line_no)
                    if value < 0:
                        raise ParseError(f"negative intensity {cell!r}", line_no)
                    out.append(value)
                elif c == "truth":
                    out.append(_label(cell, c, line_no, (Label.GROUND, Label.TREE, Label.HUMAN_MADE)))
                elif c == "class":
                    out.append(_label(cell, c, line_no, tuple(Label)))
                elif c == "ground":
                    if cell not in ("0", "1"):
                        raise ParseError(f"ground must be 0 or 1, got {cell!r}", line_no)
                    out.append(cell == "1")
                elif c == "v":
                    out.append(math.nan if cell == "" else _real(cell, c, line_no))

    kwargs = {_ATTR[c]: np.asarray(vals) for c, vals in cols.items()}
    return PointCloud(np.asarray(xyz, dtype=np.float64).reshape(-1, 3), **kwargs)


# LAS ---------------------------------------------------------------------

POINT_RECORD_LENGTHS = {0: 20, 1: 28, 6: 30}

_HEADER_FMT = "<4sHH16sBB32s32sHHHIIBHI5I6d6d"
_HEADER_12_SIZE = struct.calcsize(_HEADER_FMT)  # 227


def read_las_header(data: bytes) -> dict:
    if len(data) < 4 or data[:4] != b"LASF":
        raise FormatError(f"bad LAS signature {data[:4]!r}")
    if len(data) < _HEADER_12_SIZE:
        raise FormatError("truncated LAS header")
    fields = struct.unpack_from(_HEADER_FMT, data, 0)
    (_, _, _, _, major, minor, _, _, _, _, header_size, point_offset, _,
     fmt_id, record_len, legacy_count) = fields[:16]
    scale = fields[21:24]
    offset = fields[24:27]
    if major != 1 or not 2 <= minor <= 4:
        raise UnsupportedFormat(f"LAS version {major}.{minor} not supported")
    if fmt_id & 0xC0:
        raise UnsupportedFormat("compressed (LAZ) point data is not supported")
    if fmt_id not in POINT_RECORD_LENGTHS:
        raise UnsupportedFormat(f"point data format {fmt_id} not supported")
    if record_len != POINT_RECORD_LENGTHS[fmt_id]:
        raise FormatError(
            f"record length {record_len} does not match format {fmt_id} "
            f"({POINT_RECORD_LENGTHS[fmt_id]} bytes)")
    if not all(s > 0 for s in scale):
        raise FormatError(f"scale factors must be positive, got {scale}")
    count = legacy_count
    if minor >= 4:
        if len(data) < 255:
            raise FormatError("truncated LAS 1.4 header")
        (count64,) = struct.unpack_from("<Q", data, 247)
        if count64:
            count = count64
    return {
        "version": (major, minor),
        "header_size": header_size,
        "point_offset": point_offset,
        "format": fmt_id,
        "record_length": record_len,
        "count": count,
        "scale": scale,
        "offset": offset,
    }


def read_las(path) -> PointCloud:
    """Read coordinates and intensity from a LAS file.

    Classification bytes are ignored on purpose; they are often missing or
    wrong in public tiles.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    hdr = read_las_header(data)
    n, start, rec = hdr["count"], hdr["point_offset"], hdr["record_length"]
    if n == 0:
        raise FormatError("LAS file declares zero points")
    if start + n * rec > len(data):
        available = max(len(data) - start, 0) // rec
        raise FormatError(f"header declares {n} points but only {available} records present")
    dtype = np.dtype({"names": ["X", "Y", "Z", "intensity"],
                      "formats": ["<i4", "<i4", "<i4", "<u2"],
                      "offsets": [0, 4, 8, 12],
                      "itemsize": rec})
    raw = np.frombuffer(data, dtype=dtype, count=n, offset=start)
    sx, sy, sz = hdr["scale"]
    ox, oy, oz = hdr["offset"]
    xyz = np.column_stack([
        raw["X"].astype(np.float64) * sx + ox,
        raw["Y"].astype(np.float64) * sy + oy,
        raw["Z"].astype(np.float64) * sz + oz,
    ])
    return PointCloud(xyz, intensity=raw["intensity"].astype(np.float64))


def read_cloud(path) -> PointCloud:
    """Dispatch on extension: ``.las`` goes to :func:`read_las`, else CSV."""
    if os.fspath(path).lower().endswith(".las"):
        return read_las(path)
    return read_csv(path)
