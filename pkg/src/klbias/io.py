"""On-disk artifacts: free-energy grids, delimited traces and checkpoints.

Every text artifact starts with ``#`` header lines carrying the config hash
and master seed.  Floats are written with ``repr`` so files round-trip
exactly and two identical runs produce identical bytes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .exceptions import ConfigError, ContractError

MAGIC_GRID = "# klbias free-energy grid"


def fmt(x):
    """Shortest round-trip text for a scalar."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return "nan"
    return repr(float(x))


def provenance_lines(config_hash, seed, extra=None):
    lines = [f"# config_hash: {config_hash}", f"# seed: {seed}"]
    for k, v in (extra or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def atomic_write_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# -- free-energy grids ---------------------------------------------------------


@dataclass
class FreeEnergyGrid:
    """Free energy on a tensor grid; ``values[i, j, ...]`` pairs with ``axes[0][i], axes[1][j]``."""

    axes: list
    values: np.ndarray
    beta: float
    anchor: np.ndarray
    names: list = field(default_factory=list)
    config_hash: str = ""
    seed: int = 0

    def __post_init__(self):
        self.axes = [np.asarray(a, dtype=float) for a in self.axes]
        self.values = np.asarray(self.values, dtype=float)
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(-1)
        if not self.names:
            self.names = [f"z{i}" for i in range(len(self.axes))]
        shape = tuple(a.shape[0] for a in self.axes)
        if self.values.shape != shape:
            raise ContractError(f"values shape {self.values.shape} does not match axes {shape}")
        if self.anchor.shape[0] != len(self.axes) or len(self.names) != len(self.axes):
            raise ContractError("anchor and names must have one entry per axis")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("grid values must be finite")

    @property
    def dim(self):
        return len(self.axes)

    def points(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def anchor_index(self):
        return tuple(int(np.argmin(np.abs(a - c))) for a, c in zip(self.axes, self.anchor))

    def to_text(self, created=None):
        head = [MAGIC_GRID]
        head += provenance_lines(self.config_hash, self.seed)
        head.append(f"# beta: {fmt(self.beta)}")
        head.append("# units: free energy in energy units, coordinates in CV units")
        head.append("# axes: " + " ".join(self.names))
        head.append("# shape: " + " ".join(str(a.shape[0]) for a in self.axes))
        head.append("# anchor: " + " ".join(fmt(v) for v in self.anchor))
        if created is not None:
            head.append(f"# created: {created}")
        head.append("\t".join(self.names + ["free_energy"]))
        pts = self.points()
        vals = self.values.reshape(-1)
        body = ["\t".join([fmt(v) for v in p] + [fmt(a)]) for p, a in zip(pts, vals)]
        return "\n".join(head + body) + "\n"

    def write(self, path, created=None):
        atomic_write_text(path, self.to_text(created))

    @classmethod
    def read(cls, path):
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != MAGIC_GRID:
            raise ConfigError(str(path), "not a free-energy grid file")
        meta = {}
        i = 1
        while i < len(lines) and lines[i].startswith("#"):
            key, _, val = lines[i][2:].partition(": ")
            meta[key] = val
            i += 1
        names = meta["axes"].split()
        shape = tuple(int(s) for s in meta["shape"].split())
        data = np.loadtxt(lines[i + 1 :], ndmin=2)
        if data.shape != (int(np.prod(shape)), len(names) + 1):
            raise ConfigError(str(path), "grid body does not match its header")
        values = data[:, -1].reshape(shape)
        axes = []
        for l in range(len(names)):
            col = data[:, l].reshape(shape)
            idx = [0] * len(names)
            idx[l] = slice(None)
            axes.append(col[tuple(idx)])
        anchor = np.array([float(v) for v in meta["anchor"].split()])
        return cls(axes, values, float(meta["beta"]), anchor, names, meta.get("config_hash", ""),
                   int(meta.get("seed", 0)))


def evaluate_grid(model, domain, points_per_axis, names=None, config_hash="", seed=0):
    axes = domain.grid(points_per_axis)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    values = model.evaluate(pts).reshape(mesh[0].shape)
    return FreeEnergyGrid(axes, values, model.beta, model.anchor, list(names or []), config_hash, seed)


def _trapezoid_log_weights(x):
    h = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += h / 2
    w[1:] += h / 2
    return np.log(w)


def integrate_grid(grid: FreeEnergyGrid, axis: int) -> FreeEnergyGrid:
    """Marginal free energy after integrating ``exp(-beta A)`` over ``axis``.

    The trapezoid rule is applied in log space, and the result is shifted to
    vanish at the grid point closest to the anchor.
    """
    if grid.dim < 2:
        raise ContractError("need at least two axes to marginalize")
    if not 0 <= axis < grid.dim:
        raise ContractError(f"axis {axis} out of range for a {grid.dim}-axis grid")
    x = grid.axes[axis]
    if x.shape[0] < 2:
        raise ContractError("the integrated axis needs at least two points")
    logw = _trapezoid_log_weights(x)
    shape = [1] * grid.dim
    shape[axis] = -1
    log_int = logsumexp(-grid.beta * grid.values + logw.reshape(shape), axis=axis)
    marginal = -log_int / grid.beta
    keep = [l for l in range(grid.dim) if l != axis]
    anchor = grid.anchor[keep]
    ref = tuple(int(np.argmin(np.abs(grid.axes[l] - grid.anchor[l]))) for l in keep)
    marginal = marginal - marginal[ref]
    return FreeEnergyGrid([grid.axes[l] for l in keep], marginal, grid.beta, anchor,
                          [grid.names[l] for l in keep], grid.config_hash, grid.seed)


# -- delimited traces ------------------------------------------------------------


class TraceFile:
    """Append-only delimited table that can be cut back to a checkpointed size.

    An interrupted run resumes by truncating to the recorded byte count, so
    the finished file is the same as that of an uninterrupted run.
    """

    def __init__(self, path, columns, header_lines=()):
        self.path = Path(path)
        self.columns = list(columns)
        self.header_lines = list(header_lines)
        self._fh = None

    def start(self):
        self.close()
        text = "\n".join(self.header_lines + ["\t".join(self.columns)]) + "\n"
        self.path.write_text(text)
        self._fh = open(self.path, "a")

    def resume(self, size):
        self.close()
        with open(self.path, "r+b") as fh:
            fh.truncate(size)
        self._fh = open(self.path, "a")

    def write(self, *values):
        if len(values) != len(self.columns):
            raise ContractError(f"{self.path.name}: expected {len(self.columns)} values")
        self._fh.write("\t".join(fmt(v) for v in values) + "\n")

    def size(self):
        self._fh.flush()
        return self.path.stat().st_size

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def read_table(path):
    """``(columns, rows)`` of a trace file, skipping ``#`` lines; values as floats."""
    lines = [l for l in Path(path).read_text().splitlines() if l and not l.startswith("#")]
    cols = lines[0].split("\t")
    rows = [[float(v) for v in l.split("\t")] for l in lines[1:]]
    return cols, np.array(rows).reshape(-1, len(cols))


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path_stem, arrays, meta):
    """``<stem>.npz`` with the arrays and ``<stem>.json`` with everything else.

    Both are replaced atomically; the JSON is written last and names the
    array file it belongs with.
    """
    stem = Path(path_stem)
    npz = stem.with_suffix(".npz")
    tmp = stem.with_name(stem.name + ".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, npz)
    atomic_write_text(stem.with_suffix(".json"), json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path_stem):
    stem = Path(path_stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    with np.load(stem.with_suffix(".npz")) as data:
        arrays = {k: data[k] for k in data.files}
    return arrays, meta


def checkpoint_exists(path_stem):
    stem = Path(path_stem)
    return stem.with_suffix(".json").exists() and stem.with_suffix(".npz").exists()
