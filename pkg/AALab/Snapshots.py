"""Binary field snapshots.

Format: one ASCII header line ``AALAB1 dims n1 [n2 [n3]] t`` followed by the
interior values of u, v and w, each as little-endian float64 in row-major
order.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from AALab.Constants import SNAPSHOT_MAGIC
from AALab.Errors import SnapshotFormatError
from AALab.Fields import FieldState, Grid, ScalarField, fill_ghosts

logger = logging.getLogger(__name__)

_DTYPE = np.dtype("<f8")


def snapshot_name(index: int) -> str:
    return f"snapshot_{index:05d}.aalab"


def write_snapshot(path: Union[str, Path], state: FieldState) -> Path:
    path = Path(path)
    grid = state.grid
    header = " ".join([SNAPSHOT_MAGIC, str(grid.dims), *(str(n) for n in grid.cells), repr(float(state.t))])
    with path.open("wb") as handle:
        handle.write((header + "\n").encode("ascii"))
        for field in state.fields():
            handle.write(np.ascontiguousarray(field.interior, dtype=_DTYPE).tobytes(order="C"))
    logger.debug("Wrote snapshot %s at t=%g", path, state.t)
    return path


def read_snapshot(path: Union[str, Path], grid: Grid) -> FieldState:
    """Read a snapshot whose cell counts must match ``grid``.

    Raises:
        SnapshotFormatError: Bad magic, malformed header, grid mismatch or short payload.
    """
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise SnapshotFormatError(f"{path}: missing header line")
    tokens = raw[:newline].decode("ascii", errors="replace").split()
    if not tokens or tokens[0] != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"{path}: expected magic {SNAPSHOT_MAGIC}")
    try:
        dims = int(tokens[1])
        if len(tokens) != dims + 3:
            raise SnapshotFormatError(f"{path}: header needs {dims} cell counts and a time")
        cells = [int(token) for token in tokens[2:2 + dims]]
        t = float(tokens[-1])
    except (IndexError, ValueError) as e:
        raise SnapshotFormatError(f"{path}: malformed header: {e}") from e
    if dims != grid.dims or cells != list(grid.cells):
        raise SnapshotFormatError(f"{path}: snapshot grid {cells} does not match configured grid {grid.cells}")

    body = raw[newline + 1:]
    expected = 3 * grid.total_cells
    if len(body) != expected * _DTYPE.itemsize:
        raise SnapshotFormatError(f"{path}: expected {expected} values, found {len(body) / _DTYPE.itemsize:g}")
    payload = np.frombuffer(body, dtype=_DTYPE)
    blocks = payload.astype(np.float64).reshape((3, *grid.shape))
    u, v, w = (fill_ghosts(ScalarField(grid, block)) for block in blocks)
    return FieldState(u=u, v=v, w=w, t=t)
