"""Field serialization, norm-log CSV and trajectory checkpoints.

Field files carry a short text header (``n_dims``, ``resolution``,
``extents``) followed by node values in lexicographic order, either as one
``%.17g`` number per line (text) or raw little-endian float64 (binary).
A checkpoint directory holds ``states.bin`` (a binary stack of all recorded
states), ``norms.csv`` and ``manifest.json``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid import Field, Grid, NormLog

__all__ = [
    "FormatError",
    "write_field",
    "read_field",
    "write_field_stack",
    "read_field_stack",
    "write_norm_log",
    "read_norm_log",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]

TEXT_MAGIC = "# anisodecay field v1"
BINARY_MAGIC = b"ANISODECAY-FIELD-BIN v1\n"
CHECKPOINT_FORMAT = "anisodecay-checkpoint/1"


class FormatError(ValueError):
    pass


def _header(grid: Grid, count: int | None = None) -> str:
    lines = [
        f"n_dims {grid.n_dims}",
        "resolution " + " ".join(str(n) for n in grid.resolution),
        "extents " + " ".join(repr(e) for e in grid.extents),
    ]
    if count is not None:
        lines.append(f"count {count}")
    lines.append("values")
    return "\n".join(lines) + "\n"


def _parse_header(lines: Sequence[str]) -> tuple[Grid, int | None]:
    meta = {}
    for line in lines:
        key, _, rest = line.strip().partition(" ")
        meta[key] = rest.split()
    try:
        n_dims = int(meta["n_dims"][0])
        resolution = tuple(int(v) for v in meta["resolution"])
        extents = tuple(float(v) for v in meta["extents"])
    except (KeyError, IndexError, ValueError) as exc:
        raise FormatError(f"malformed field header: {exc}") from exc
    if len(resolution) != n_dims or len(extents) != n_dims:
        raise FormatError("header dimensions disagree with n_dims")
    count = int(meta["count"][0]) if "count" in meta else None
    return Grid(extents, resolution), count


def write_field(field: Field, path, binary: bool = False) -> Path:
    path = Path(path)
    if binary:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            fh.write(_header(field.grid).encode("ascii"))
            fh.write(field.values.astype("<f8").tobytes())
    else:
        body = "\n".join(format(v, ".17g") for v in field.values)
        path.write_text(TEXT_MAGIC + "\n" + _header(field.grid) + body + "\n", encoding="utf-8")
    return path


def _read_binary(data: bytes):
    pos = len(BINARY_MAGIC)
    header = []
    while True:
        end = data.index(b"\n", pos)
        line = data[pos:end].decode("ascii")
        pos = end + 1
        if line == "values":
            break
        header.append(line)
    grid, count = _parse_header(header)
    values = np.frombuffer(data[pos:], dtype="<f8")
    return grid, count, values


def read_field(path) -> Field:
    path = Path(path)
    data = path.read_bytes()
    if data.startswith(BINARY_MAGIC):
        grid, _, values = _read_binary(data)
        return Field(grid, values.astype(float))
    lines = data.decode("utf-8").splitlines()
    if not lines or lines[0].strip() != TEXT_MAGIC:
        raise FormatError(f"{path}: not a field file")
    try:
        split = lines.index("values")
    except ValueError as exc:
        raise FormatError(f"{path}: missing 'values' marker") from exc
    grid, _ = _parse_header(lines[1:split])
    values = np.array([float(v) for v in lines[split + 1 :] if v.strip()])
    if values.size != grid.size:
        raise FormatError(f"{path}: expected {grid.size} values, found {values.size}")
    return Field(grid, values)


def write_field_stack(fields: Sequence[Field], path) -> Path:
    path = Path(path)
    grid = fields[0].grid
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(_header(grid, len(fields)).encode("ascii"))
        for f in fields:
            if f.grid != grid:
                raise FormatError("all fields in a stack must share a grid")
            fh.write(f.values.astype("<f8").tobytes())
    return path


def read_field_stack(path) -> list[Field]:
    data = Path(path).read_bytes()
    if not data.startswith(BINARY_MAGIC):
        raise FormatError(f"{path}: not a binary field stack")
    grid, count, values = _read_binary(data)
    count = 1 if count is None else count
    if values.size != count * grid.size:
        raise FormatError(f"{path}: truncated stack")
    return [Field(grid, v) for v in values.reshape(count, grid.size)]


def write_norm_log(log: NormLog, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(NormLog.COLUMNS)
        for row in log.rows():
            writer.writerow([format(float(v), ".17g") for v in row])
    return path


def read_norm_log(path) -> NormLog:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != NormLog.COLUMNS:
        raise FormatError(f"{path}: unexpected norm-log header {rows[:1]}")
    cols = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, 5).T
    return NormLog(*cols)


@dataclass(frozen=True)
class Checkpoint:
    problem_hash: str
    last_time: float
    step_count: int
    times: np.ndarray
    states: list[Field]


def save_checkpoint(traj, directory, problem_hash: str) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_field_stack(traj.states, directory / "states.bin")
    write_norm_log(traj.norm_log, directory / "norms.csv")
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "problem_hash": problem_hash,
        "last_time": float(traj.times[-1]),
        "step_count": int(traj.step_count),
        "times": [float(t) for t in traj.times],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return directory


def load_checkpoint(directory) -> Checkpoint:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{directory}: unknown checkpoint format {manifest.get('format')!r}")
    states = read_field_stack(directory / "states.bin")
    times = np.array(manifest["times"], dtype=float)
    if len(times) != len(states):
        raise FormatError(f"{directory}: {len(times)} times but {len(states)} states")
    return Checkpoint(
        problem_hash=manifest["problem_hash"],
        last_time=float(manifest["last_time"]),
        step_count=int(manifest["step_count"]),
        times=times,
        states=states,
    )
