"""Raw little-endian arrays with JSON sidecars.

An array ``foo.f32`` is accompanied by ``foo.f32.json`` holding at least
``{"shape": [...], "dtype": "f32le", "order": "C"}`` plus any metadata.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .geometry import SinogramGrid
from .pipeline import RedundancyWeights

DTYPES = {"f32le": "<f4", "f64le": "<f8"}


class DataFormatError(ValueError):
    """A file or its sidecar is missing, malformed, or inconsistent."""

    def __init__(self, path, message, field=None):
        self.path = str(path)
        self.field = field
        where = f" (field {field!r})" if field else ""
        super().__init__(f"{path}: {message}{where}")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def array_hash(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def write_array(path, arr: np.ndarray, dtype: str = "f32le", **meta) -> dict:
    """Write ``arr`` and its sidecar; returns the sidecar dict."""
    path = Path(path)
    if dtype not in DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    data = np.ascontiguousarray(arr, dtype=DTYPES[dtype])
    side = {"shape": list(data.shape), "dtype": dtype, "order": "C", **meta}
    side["sha256"] = array_hash(data)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data.tobytes())
        sidecar_path(path).write_text(json.dumps(side, indent=1, sort_keys=True))
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc
    return side


def read_sidecar(path) -> dict:
    side_path = sidecar_path(path)
    if not side_path.exists():
        raise DataFormatError(path, f"missing sidecar {side_path.name}")
    try:
        side = json.loads(side_path.read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(side_path, f"sidecar is not valid JSON ({exc.msg})") from exc
    if not isinstance(side, dict):
        raise DataFormatError(side_path, "sidecar must be a JSON object")
    shape = side.get("shape")
    if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise DataFormatError(side_path, "shape must be a list of non-negative integers", "shape")
    if side.get("dtype") not in DTYPES:
        raise DataFormatError(side_path, f"unsupported dtype {side.get('dtype')!r}", "dtype")
    if side.get("order", "C") != "C":
        raise DataFormatError(side_path, "only C order is supported", "order")
    return side


def read_array(path, allow_nonfinite: bool = False) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    side = read_sidecar(path)
    raw = path.read_bytes()
    dt = np.dtype(DTYPES[side["dtype"]])
    expected = int(np.prod(side["shape"])) * dt.itemsize
    if len(raw) != expected:
        raise DataFormatError(path, f"file has {len(raw)} bytes, sidecar shape needs {expected}", "shape")
    arr = np.frombuffer(raw, dtype=dt).reshape(side["shape"]).copy()
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise DataFormatError(path, "array contains non-finite values")
    return arr, side


def save_weights(path, weights: RedundancyWeights, dtype: str = "f32le") -> dict:
    g = weights.grid
    return write_array(
        path, weights.data, dtype=dtype,
        kind="redundancy-weights",
        num_projections=int(weights.data.shape[0]),
        num_angles=g.num_angles,
        num_s=g.num_s,
        grid=g.to_dict(),
        trajectory_hash=weights.trajectory_hash,
        meta=weights.meta,
    )


def load_weights(path) -> RedundancyWeights:
    arr, side = read_array(path)
    for key in ("grid", "trajectory_hash", "num_projections", "num_angles", "num_s"):
        if key not in side:
            raise DataFormatError(sidecar_path(path), "missing weight metadata", key)
    try:
        grid = SinogramGrid.from_dict(side["grid"])
    except (TypeError, ValueError) as exc:
        raise DataFormatError(sidecar_path(path), f"bad grid ({exc})", "grid") from exc
    if tuple(arr.shape) != (side["num_projections"], side["num_angles"], side["num_s"]):
        raise DataFormatError(path, "array shape disagrees with num_projections/num_angles/num_s", "shape")
    return RedundancyWeights(data=arr, grid=grid, trajectory_hash=side["trajectory_hash"],
                             meta=side.get("meta", {}))
