"""Binary snapshots, trajectory checkpoints, and report serialization.

Both binary formats are little-endian with a fixed-size header followed
by raw float64 payloads, so a write/read round trip reproduces arrays
bit-exactly.  Corruption errors name the byte offset at which the file
stopped making sense.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .fields import VelocityField
from .functional import Trajectory, WideParams
from .grid import GridSpec

FIELD_MAGIC = b"WNSF"
TRAJ_MAGIC = b"WNST"
FORMAT_VERSION = 1

_FIELD_HEADER = struct.Struct("<4sIIId")
_TRAJ_HEADER = struct.Struct("<4sIIIIddddd")


class CorruptCheckpointError(ValueError):
    """Raised when a snapshot or checkpoint file fails structural checks.

    The offending byte offset is stored on the exception and included in
    the message."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def fmt_float(x: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


def _check_header(blob: bytes, magic: bytes, header) -> tuple:
    if len(blob) < len(magic):
        raise CorruptCheckpointError("file shorter than magic", 0)
    if blob[: len(magic)] != magic:
        raise CorruptCheckpointError(
            f"bad magic {blob[:len(magic)]!r}, expected {magic!r}", 0
        )
    if len(blob) < header.size:
        raise CorruptCheckpointError("truncated header", len(blob))
    fields = header.unpack_from(blob, 0)
    version = fields[1]
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}", 4)
    return fields


def _check_payload(blob: bytes, start: int, count: int) -> np.ndarray:
    need = start + 8 * count
    if len(blob) < need:
        raise CorruptCheckpointError(
            f"payload needs {need} bytes, file has {len(blob)}", len(blob)
        )
    if len(blob) > need:
        raise CorruptCheckpointError("trailing bytes after payload", need)
    flat = np.frombuffer(blob, dtype="<f8", count=count, offset=start)
    return flat.astype(np.float64, copy=True)


def write_field(path, field: VelocityField) -> None:
    grid = field.grid
    header = _FIELD_HEADER.pack(
        FIELD_MAGIC, FORMAT_VERSION, grid.dim, grid.n, grid.domain_length
    )
    payload = np.ascontiguousarray(field.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_field(path) -> VelocityField:
    with open(path, "rb") as fh:
        blob = fh.read()
    _, _, dim, n, length = _check_header(blob, FIELD_MAGIC, _FIELD_HEADER)
    if dim not in (2, 3) or n < 8 or n % 2:
        raise CorruptCheckpointError(f"implausible dim={dim} n={n}", 8)
    grid = GridSpec(dim=dim, n=n, domain_length=length)
    flat = _check_payload(blob, _FIELD_HEADER.size, dim * n**dim)
    return VelocityField(grid, flat.reshape((dim,) + (n,) * dim))


def write_trajectory(path, traj: Trajectory, params: WideParams) -> None:
    """Checkpoint a trajectory together with the run parameters.

    The header records (epsilon, sigma, nu, horizon) so a checkpoint can
    be re-diagnosed without the original config; the convection flag is
    not part of the format and must come from the config."""
    grid = traj.grid
    header = _TRAJ_HEADER.pack(
        TRAJ_MAGIC,
        FORMAT_VERSION,
        grid.dim,
        grid.n,
        traj.n_steps,
        traj.tau,
        params.epsilon,
        params.sigma,
        params.nu,
        params.horizon_T,
    )
    payload = np.ascontiguousarray(traj.data, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_trajectory(path) -> tuple[Trajectory, dict]:
    with open(path, "rb") as fh:
        blob = fh.read()
    _, _, dim, n, n_steps, tau, eps, sigma, nu, horizon = _check_header(
        blob, TRAJ_MAGIC, _TRAJ_HEADER
    )
    if dim not in (2, 3) or n < 8 or n % 2 or n_steps < 1:
        raise CorruptCheckpointError(
            f"implausible dim={dim} n={n} N={n_steps}", 8
        )
    grid = GridSpec(dim=dim, n=n)
    count = (n_steps + 1) * dim * n**dim
    flat = _check_payload(blob, _TRAJ_HEADER.size, count)
    traj = Trajectory(
        grid, tau, flat.reshape((n_steps + 1, dim) + (n,) * dim)
    )
    header_params = {
        "epsilon": eps,
        "sigma": sigma,
        "nu": nu,
        "horizon_T": horizon,
    }
    return traj, header_params


def field_to_csv(field: VelocityField) -> str:
    """One row per grid point: coordinates then velocity components."""
    grid = field.grid
    axes = ["x", "y", "z"][: grid.dim]
    header = ",".join(axes + [f"u_{a}" for a in axes])
    coords = np.meshgrid(*([grid.axes_points()] * grid.dim), indexing="ij")
    cols = [c.ravel() for c in coords] + [
        field.data[i].ravel() for i in range(grid.dim)
    ]
    lines = [header]
    for row in zip(*cols):
        lines.append(",".join(fmt_float(v) for v in row))
    return "\n".join(lines) + "\n"


def _encode_json(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f'{pad}  {json.dumps(str(k))}: {_encode_json(v, indent + 1)}'
            for k, v in obj.items()
        ]
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not len(obj):
            return "[]"
        items = [f"{pad}  {_encode_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj)
    if isinstance(obj, np.ndarray):
        return _encode_json(obj.tolist(), indent)
    return json.dumps(obj)


def dump_json(obj, path) -> None:
    """Write a report dict as JSON, floats at 17 significant digits."""
    with open(path, "w") as fh:
        fh.write(_encode_json(obj) + "\n")


def rows_to_csv(header: list[str], rows: list[list]) -> str:
    out = [",".join(header)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (float, np.floating)):
                cells.append(fmt_float(v))
            else:
                cells.append(str(v))
        out.append(",".join(cells))
    return "\n".join(out) + "\n"
