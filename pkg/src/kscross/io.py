"""Field snapshot export: legacy VTK structured points and flat CSV."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Mapping

import numpy as np

from .grid import Grid


def write_vtk(path, grid: Grid, fields: Mapping[str, np.ndarray], title: str = "kscross") -> Path:
    """Write cell fields as POINT_DATA on the lattice of cell centres.

    Inactive cells are written as 0.  Axes are padded to three with a
    single point so 1-D and 2-D grids load in any VTK reader.
    """
    path = Path(path)
    dims = list(grid.cells_per_axis) + [1] * (3 - grid.dim)
    origin = list(grid.origin + 0.5 * grid.spacing) + [0.0] * (3 - grid.dim)
    spacing = list(grid.spacing) + [1.0] * (3 - grid.dim)
    npts = int(np.prod(dims))
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        "DIMENSIONS {} {} {}".format(*dims),
        "ORIGIN {!r} {!r} {!r}".format(*map(float, origin)),
        "SPACING {!r} {!r} {!r}".format(*map(float, spacing)),
        f"POINT_DATA {npts}",
    ]
    for name, values in fields.items():
        full = grid.to_array(values, fill=0.0)
        # VTK wants x varying fastest
        flat = full.ravel(order="F")
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(" ".join(f"{v:.17g}" for v in flat[i:i + 6]) for i in range(0, flat.size, 6))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_scalars(path) -> tuple[tuple[int, ...], dict[str, np.ndarray]]:
    """Minimal reader for files produced by :func:`write_vtk` (used by tests)."""
    tokens = Path(path).read_text().split("\n")
    dims = None
    fields: dict[str, np.ndarray] = {}
    i = 0
    while i < len(tokens):
        line = tokens[i].strip()
        if line.startswith("DIMENSIONS"):
            dims = tuple(int(v) for v in line.split()[1:])
        elif line.startswith("SCALARS"):
            name = line.split()[1]
            i += 2  # skip LOOKUP_TABLE
            npts = int(np.prod(dims))
            values: list[float] = []
            while len(values) < npts:
                values.extend(float(v) for v in tokens[i].split())
                i += 1
            fields[name] = np.array(values).reshape(dims, order="F")
            continue
        i += 1
    return dims, fields


def write_field_csv(path, grid: Grid, fields: Mapping[str, np.ndarray]) -> Path:
    """One row per active cell: integer index per axis, centre coordinates, values."""
    path = Path(path)
    axes = "ijk"[: grid.dim]
    coords = "xyz"[: grid.dim]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*axes, *coords, *fields.keys()])
        columns = [np.asarray(v) for v in fields.values()]
        for row in range(grid.n_active):
            writer.writerow(
                [*grid.multi_index[row].tolist(),
                 *(f"{x:.17g}" for x in grid.centers[row]),
                 *(f"{col[row]:.17g}" for col in columns)]
            )
    return path
