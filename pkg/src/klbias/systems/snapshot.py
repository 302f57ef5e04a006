"""Plain-text configuration snapshots.

Format: a header ``n_atoms dim box`` (``box`` is a float or ``none``), then one
atom per line with its Cartesian coordinates at 17 significant digits.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..exceptions import ContractError


def write_snapshot(path, positions, box=None):
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2:
        raise ContractError("positions must be (n_atoms, dim)")
    n, dim = positions.shape
    lines = [f"{n} {dim} {'none' if box is None else format(float(box), '.17g')}"]
    lines += [" ".join(format(x, ".17g") for x in row) for row in positions]
    Path(path).write_text("\n".join(lines) + "\n")


def read_snapshot(path):
    """Return ``(positions, box)``; ``box`` is None for free clusters."""
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not rows or len(rows[0]) != 3:
        raise ContractError(f"{path}: missing 'n_atoms dim box' header")
    n, dim = int(rows[0][0]), int(rows[0][1])
    box = None if rows[0][2].lower() == "none" else float(rows[0][2])
    pos = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float)
    if pos.shape != (n, dim):
        raise ContractError(f"{path}: expected {n} rows of {dim} coordinates, got {pos.shape}")
    return pos, box
