"""Georeferenced value grids backed by the ESRI ASCII (.asc) container."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .geo import BBox, GeoPoint


@dataclass
class RasterGrid:
    """Row-major grid; row 0 is the northernmost row, matching the .asc layout."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float
    values: list
    kind: str = "continuous"  # "categorical" | "continuous"

    def __post_init__(self):
        if self.cellsize <= 0:
            raise ValueError("cellsize must be positive")
        if self.ncols * self.nrows != len(self.values):
            raise ValueError(
                f"value count {len(self.values)} != ncols*nrows {self.ncols * self.nrows}")
        if self.kind not in ("categorical", "continuous"):
            raise ValueError(f"unknown raster kind: {self.kind!r}")

    def bbox(self) -> BBox:
        return BBox(self.yll, self.xll,
                    self.yll + self.nrows * self.cellsize,
                    self.xll + self.ncols * self.cellsize)

    def cell_value(self, row: int, col: int):
        return self.values[row * self.ncols + col]

    def cell_center(self, row: int, col: int) -> GeoPoint:
        lat = self.yll + (self.nrows - row - 0.5) * self.cellsize
        lon = self.xll + (col + 0.5) * self.cellsize
        return GeoPoint(lat, lon)


def raster_sample(g: RasterGrid, p: GeoPoint) -> Optional[float]:
    """Nearest-cell lookup; None outside the extent or on a nodata cell.

    Cells own the half-open interval [edge, edge + cellsize) on both axes.
    """
    col = math.floor((p.lon - g.xll) / g.cellsize)
    row_from_bottom = math.floor((p.lat - g.yll) / g.cellsize)
    if not (0 <= col < g.ncols and 0 <= row_from_bottom < g.nrows):
        return None
    v = g.cell_value(g.nrows - 1 - row_from_bottom, col)
    if v == g.nodata:
        return None
    return v


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(path, kind: str = "continuous") -> RasterGrid:
    """Parse an ESRI ASCII grid; numbers are decimal with optional exponent."""
    text = Path(path).read_text(encoding="utf-8")
    header: dict[str, float] = {}
    tokens: list[str] = []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if not tokens and len(parts) == 2 and parts[0].lower() in _HEADER_KEYS:
            try:
                header[parts[0].lower()] = float(parts[1])
            except ValueError as exc:
                raise ValueError(f"bad header value in {path}: {line!r}") from exc
        else:
            tokens.extend(parts)
    for key in ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize"):
        if key not in header:
            raise ValueError(f"missing header key {key!r} in {path}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    try:
        values = [float(t) for t in tokens]
    except ValueError as exc:
        raise ValueError(f"non-numeric cell value in {path}") from exc
    if len(values) != ncols * nrows:
        raise ValueError(
            f"{path}: expected {ncols * nrows} values, found {len(values)}")
    return RasterGrid(
        ncols=ncols,
        nrows=nrows,
        xll=header["xllcorner"],
        yll=header["yllcorner"],
        cellsize=header["cellsize"],
        nodata=header.get("nodata_value", -9999.0),
        values=values,
        kind=kind,
    )


def write_ascii_grid(g: RasterGrid, path) -> None:
    lines = [
        f"NCOLS {g.ncols}",
        f"NROWS {g.nrows}",
        f"XLLCORNER {g.xll!r}",
        f"YLLCORNER {g.yll!r}",
        f"CELLSIZE {g.cellsize!r}",
        f"NODATA_VALUE {g.nodata!r}",
    ]
    for r in range(g.nrows):
        row = g.values[r * g.ncols:(r + 1) * g.ncols]
        lines.append(" ".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def grid_from_rows(rows: Sequence[Sequence[float]], xll: float, yll: float,
                   cellsize: float, nodata: float = -9999.0,
                   kind: str = "continuous") -> RasterGrid:
    """Convenience constructor from top-down row lists."""
    nrows = len(rows)
    ncols = len(rows[0]) if nrows else 0
    flat: list = []
    for row in rows:
        if len(row) != ncols:
            raise ValueError("ragged rows")
        flat.extend(row)
    return RasterGrid(ncols=ncols, nrows=nrows, xll=xll, yll=yll,
                      cellsize=cellsize, nodata=nodata, values=flat, kind=kind)
