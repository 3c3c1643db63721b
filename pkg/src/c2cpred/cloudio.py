"""Point-cloud and tabular I/O in bit-stable formats.

Formats
-------
XYZ text
    Whitespace-separated ``x y z [extra scalars]`` per line, ``#`` starts a
    comment. An optional ``# columns: name1 name2 ...`` comment names the
    extra columns (beyond x y z); unnamed extras become ``c0, c1, ...``.

PLY 1.0
    ``ascii`` or ``binary_little_endian``. The vertex element must carry
    float or double ``x, y, z``; every additional scalar vertex property is
    exposed as a named per-point field. Binary doubles round-trip bit-exact;
    ascii is written at 17 significant digits (lossless for float64).

CSV
    RFC-4180-style, ``.`` decimal separator, values at 17 significant digits
    so every 64-bit real survives a write/read cycle.

All coordinates are meters. Clouds are immutable after construction and safe
to share across threads for reading.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np


class CloudFormatError(ValueError):
    """Malformed or unsupported point-cloud / table file content."""


class Point3(NamedTuple):
    """A 3D point in meters."""

    x: float
    y: float
    z: float


@dataclass(frozen=True)
class PointCloud:
    """Ordered points plus named per-point scalar fields.

    ``xyz`` is an (n, 3) float64 array; ``scalars`` maps field name to an
    (n,) float64 array. Every scalar field has exactly one value per point.
    """

    xyz: np.ndarray
    scalars: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        xyz = np.ascontiguousarray(np.asarray(self.xyz, dtype=np.float64))
        if xyz.ndim != 2 or xyz.shape[1] != 3:
            raise ValueError(f"xyz must be (n, 3), got {xyz.shape}")
        object.__setattr__(self, "xyz", xyz)
        clean = {}
        for name, values in self.scalars.items():
            if not name or not name.isascii():
                raise ValueError(f"scalar field name must be nonempty ASCII, got {name!r}")
            arr = np.asarray(values, dtype=np.float64)
            if arr.shape != (len(xyz),):
                raise ValueError(
                    f"scalar field {name!r} has length {arr.shape}, cloud has {len(xyz)} points"
                )
            clean[name] = arr
        object.__setattr__(self, "scalars", clean)

    def __len__(self) -> int:
        return self.xyz.shape[0]

    def point(self, index: int) -> Point3:
        x, y, z = self.xyz[index]
        return Point3(float(x), float(y), float(z))

    def with_scalars(self, **fields: np.ndarray) -> "PointCloud":
        """New cloud sharing coordinates, with extra scalar fields appended."""
        merged = dict(self.scalars)
        merged.update(fields)
        return PointCloud(self.xyz, merged)


def _check_finite_coords(xyz: np.ndarray, source: str) -> None:
    bad = ~np.isfinite(xyz)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise CloudFormatError(f"{source}: non-finite coordinate at point {row}")


# ---------------------------------------------------------------------------
# XYZ text
# ---------------------------------------------------------------------------

def read_xyz(path) -> PointCloud:
    """Read a whitespace-separated XYZ text file."""
    path = Path(path)
    column_names: list[str] | None = None
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped[1:].strip()
                if body.lower().startswith("columns:"):
                    column_names = body[len("columns:"):].split()
                continue
            tokens = stripped.split()
            if len(tokens) < 3:
                raise CloudFormatError(f"{path}: line {lineno}: expected at least 3 columns")
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: malformed numeric token") from None
            if width is None:
                width = len(values)
            elif len(values) != width:
                raise CloudFormatError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(values)}"
                )
            if not all(np.isfinite(values[:3])):
                raise CloudFormatError(f"{path}: line {lineno}: non-finite coordinate")
            rows.append(values)

    if not rows:
        return PointCloud(np.empty((0, 3)), {})
    data = np.asarray(rows, dtype=np.float64)
    n_extra = data.shape[1] - 3
    if column_names is not None and len(column_names) != n_extra:
        raise CloudFormatError(
            f"{path}: '# columns:' names {len(column_names)} fields, data has {n_extra}"
        )
    names = column_names if column_names is not None else [f"c{i}" for i in range(n_extra)]
    scalars = {name: data[:, 3 + i].copy() for i, name in enumerate(names)}
    return PointCloud(data[:, :3], scalars)


def write_xyz(cloud: PointCloud, path) -> None:
    """Write a cloud as XYZ text with a ``# columns:`` header for extras."""
    path = Path(path)
    names = list(cloud.scalars)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if names:
            fh.write("# columns: " + " ".join(names) + "\n")
        cols = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
        cols += [cloud.scalars[n] for n in names]
        for row in zip(*cols):
            fh.write(" ".join("%.17g" % v for v in row) + "\n")


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh, path):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise CloudFormatError(f"{path}: not a PLY file")
    fmt = None
    elements = []  # list of (name, count, [(dtype, propname) or ('list',...)])
    current = None
    while True:
        raw = fh.readline()
        if not raw:
            raise CloudFormatError(f"{path}: truncated PLY header")
        line = raw.decode("ascii", errors="replace").strip()
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        if line == "end_header":
            break
        parts = line.split()
        if parts[0] == "format":
            if len(parts) < 3 or parts[2] != "1.0":
                raise CloudFormatError(f"{path}: unsupported PLY version in {line!r}")
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise CloudFormatError(f"{path}: unsupported PLY format {parts[1]!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise CloudFormatError(f"{path}: malformed element line {line!r}")
            current = (parts[1], int(parts[2]), [])
            elements.append(current)
        elif parts[0] == "property":
            if current is None:
                raise CloudFormatError(f"{path}: property before element")
            if parts[1] == "list":
                current[2].append(("list", parts[-1]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise CloudFormatError(f"{path}: unsupported property type {parts[1]!r}")
                current[2].append((_PLY_TYPES[parts[1]], parts[2]))
    if fmt is None:
        raise CloudFormatError(f"{path}: PLY header missing format line")
    return fmt, elements


def read_ply(path) -> PointCloud:
    """Read a PLY file (ascii or binary_little_endian 1.0)."""
    path = Path(path)
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh, path)

        vertex = None
        for name, count, props in elements:
            if name == "vertex":
                vertex = (count, props)
                break
            # Skip a preceding element; only possible when its size is fixed.
            if any(p[0] == "list" for p in props):
                raise CloudFormatError(
                    f"{path}: cannot skip element {name!r} with list property before vertex"
                )
            if fmt == "ascii":
                for _ in range(count):
                    fh.readline()
            else:
                rowsize = sum(np.dtype("<" + t).itemsize for t, _ in props)
                fh.seek(count * rowsize, 1)
        if vertex is None:
            raise CloudFormatError(f"{path}: no vertex element")
        count, props = vertex
        if any(p[0] == "list" for p in props):
            raise CloudFormatError(f"{path}: list property in vertex element is unsupported")
        names = [p[1] for p in props]
        for axis in ("x", "y", "z"):
            if axis not in names:
                raise CloudFormatError(f"{path}: vertex element missing property {axis!r}")

        if fmt == "ascii":
            values = np.empty((count, len(props)), dtype=np.float64)
            for i in range(count):
                line = fh.readline()
                if not line:
                    raise CloudFormatError(f"{path}: truncated vertex data at row {i}")
                tokens = line.split()
                if len(tokens) != len(props):
                    raise CloudFormatError(f"{path}: vertex row {i} has {len(tokens)} values")
                try:
                    values[i] = [float(tok) for tok in tokens]
                except ValueError:
                    raise CloudFormatError(f"{path}: vertex row {i}: malformed number") from None
        else:
            dtype = np.dtype([(f"f{j}", "<" + t) for j, (t, _) in enumerate(props)])
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise CloudFormatError(f"{path}: truncated vertex data")
            rec = np.frombuffer(buf, dtype=dtype)
            values = np.empty((count, len(props)), dtype=np.float64)
            for j in range(len(props)):
                values[:, j] = rec[f"f{j}"]

    xyz = np.column_stack([values[:, names.index(a)] for a in ("x", "y", "z")]) \
        if count else np.empty((0, 3))
    _check_finite_coords(xyz, str(path))
    scalars = {
        name: values[:, j].copy()
        for j, name in enumerate(names)
        if name not in ("x", "y", "z")
    }
    return PointCloud(xyz, scalars)


def write_ply(cloud: PointCloud, path, format: str = "binary") -> None:
    """Write a cloud as PLY; scalar fields become double properties in order."""
    if format not in ("ascii", "binary"):
        raise ValueError(f"format must be 'ascii' or 'binary', got {format!r}")
    path = Path(path)
    names = list(cloud.scalars)
    fmt_line = "ascii 1.0" if format == "ascii" else "binary_little_endian 1.0"
    header = ["ply", f"format {fmt_line}", f"element vertex {len(cloud)}"]
    header += ["property double x", "property double y", "property double z"]
    header += [f"property double {n}" for n in names]
    header.append("end_header")

    columns = [cloud.xyz[:, 0], cloud.xyz[:, 1], cloud.xyz[:, 2]]
    columns += [cloud.scalars[n] for n in names]
    table = np.column_stack(columns) if len(cloud) else np.empty((0, 3 + len(names)))

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if format == "ascii":
            for row in table:
                fh.write((" ".join("%.17g" % v for v in row) + "\n").encode("ascii"))
        else:
            fh.write(np.ascontiguousarray(table, dtype="<f8").tobytes())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_csv(headers, rows, path) -> None:
    """Write a numeric table as CSV at 17 significant digits."""
    headers = list(headers)
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(headers) + "\n")
        for i, row in enumerate(rows):
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (len(headers),):
                raise CloudFormatError(
                    f"{path}: row {i} has {row.shape[0] if row.ndim == 1 else 'bad'} values, "
                    f"expected {len(headers)}"
                )
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Read a numeric CSV written by :func:`write_csv`."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline().strip()
        if not header_line:
            raise CloudFormatError(f"{path}: empty CSV")
        headers = header_line.split(",")
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(headers):
                raise CloudFormatError(
                    f"{path}: line {lineno}: expected {len(headers)} values, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise CloudFormatError(f"{path}: line {lineno}: malformed number") from None
    data = np.asarray(rows, dtype=np.float64) if rows else np.empty((0, len(headers)))
    return headers, data
