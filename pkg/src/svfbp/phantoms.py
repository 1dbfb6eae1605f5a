"""Synthetic phantoms, projection datasets and external volume loading."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .geometry import ConeBeamGeometry, Trajectory
from .io import DataFormatError, array_hash, read_array, write_array
from .operators import cone_forward

log = logging.getLogger(__name__)

OBJECT_TYPES = ("ellipsoid", "cuboid", "cylinder")


@dataclass
class Volume:
    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    support_radius: float | None = None
    meta: dict = field(default_factory=dict)

    def save(self, path) -> dict:
        return write_array(path, self.data, spacing=list(self.spacing),
                           support_radius=self.support_radius, **self.meta)


@dataclass
class PhantomConfig:
    volume_shape: tuple[int, int, int] = (64, 64, 64)
    volume_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    fov_radius: float = 32.0
    num_objects_range: tuple[int, int] = (3, 8)
    object_types: tuple[str, ...] = OBJECT_TYPES
    axial_cylinders: tuple[int, int] = (0, 2)
    size_range: tuple[float, float] = (0.08, 0.35)
    intensity_range: tuple[float, float] = (0.2, 1.0)
    smooth_sigma: float = 1.5
    seed: int = 0
    oversample: int = 1

    def __post_init__(self):
        for name in ("volume_shape", "volume_spacing", "num_objects_range", "object_types",
                     "axial_cylinders", "size_range", "intensity_range"):
            setattr(self, name, tuple(getattr(self, name)))
        lo, hi = self.num_objects_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad num_objects_range {self.num_objects_range}")
        lo, hi = self.axial_cylinders
        if not 0 <= lo <= hi:
            raise ValueError(f"bad axial_cylinders {self.axial_cylinders}")
        if not self.object_types or set(self.object_types) - set(OBJECT_TYPES):
            raise ValueError(f"object_types must be a non-empty subset of {OBJECT_TYPES}")
        if not 0 < self.size_range[0] <= self.size_range[1]:
            raise ValueError(f"bad size_range {self.size_range}")
        if not self.intensity_range[0] <= self.intensity_range[1]:
            raise ValueError(f"bad intensity_range {self.intensity_range}")
        if self.smooth_sigma < 0:
            raise ValueError("smooth_sigma must be >= 0")
        if int(self.oversample) != self.oversample or self.oversample < 1:
            raise ValueError("oversample must be a positive integer")

    @classmethod
    def for_geometry(cls, geom: ConeBeamGeometry, **kw) -> "PhantomConfig":
        return cls(volume_shape=geom.volume_shape, volume_spacing=geom.volume_spacing,
                   fov_radius=geom.fov_radius, **kw)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def _grid(shape, spacing):
    axes = [(np.arange(n) - (n - 1) / 2) * d for n, d in zip(shape, spacing)]
    z, y, x = np.meshgrid(*axes, indexing="ij")
    # object frames use (x, y, z) order
    return np.stack([x, y, z], axis=-1)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Rotation matrix from a uniformly sampled unit quaternion."""
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def render_objects(objects: list[dict], shape, spacing) -> np.ndarray:
    """Sum of indicator functions times intensity.

    Each object is ``{"type", "center" (x, y, z) mm, "axes" (3,) mm,
    "rotation" (3x3), "intensity"}``; type ``"axial-cylinder"`` ignores z.
    """
    pts = _grid(shape, spacing)
    vol = np.zeros(shape)
    for obj in objects:
        rel = pts - np.asarray(obj["center"], dtype=np.float64)
        rot = np.asarray(obj.get("rotation", np.eye(3)), dtype=np.float64)
        local = rel @ rot  # coordinates in the object frame
        a = np.asarray(obj["axes"], dtype=np.float64)
        u = local / a
        kind = obj["type"]
        if kind == "ellipsoid":
            inside = np.sum(u * u, axis=-1) <= 1
        elif kind == "cuboid":
            inside = np.max(np.abs(u), axis=-1) <= 1
        elif kind == "cylinder":
            inside = (u[..., 0] ** 2 + u[..., 1] ** 2 <= 1) & (np.abs(u[..., 2]) <= 1)
        elif kind == "axial-cylinder":
            inside = u[..., 0] ** 2 + u[..., 1] ** 2 <= 1
        else:
            raise ValueError(f"unknown object type {kind!r}")
        vol[inside] += obj["intensity"]
    return vol


def _support(shape, spacing, radius):
    pts = _grid(shape, spacing)
    return np.sum(pts * pts, axis=-1) <= radius * radius


def draw_objects(cfg: PhantomConfig, rng: np.random.Generator) -> list[dict]:
    B = cfg.fov_radius
    objects = []
    for _ in range(rng.integers(cfg.num_objects_range[0], cfg.num_objects_range[1] + 1)):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        center = direction * 0.8 * B * rng.uniform() ** (1 / 3)
        objects.append({
            "type": str(rng.choice(cfg.object_types)),
            "center": center.tolist(),
            "axes": (rng.uniform(*cfg.size_range, size=3) * B).tolist(),
            "rotation": random_rotation(rng).tolist(),
            "intensity": float(rng.uniform(*cfg.intensity_range)),
        })
    for _ in range(rng.integers(cfg.axial_cylinders[0], cfg.axial_cylinders[1] + 1)):
        r = 0.8 * B * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        radius = rng.uniform(0.05, 0.2) * B
        objects.append({
            "type": "axial-cylinder",
            "center": [r * np.cos(ang), r * np.sin(ang), 0.0],
            "axes": [radius, radius, 1.0],
            "intensity": float(rng.uniform(*cfg.intensity_range)),
        })
    return objects


def generate_phantom(cfg: PhantomConfig, rng: np.random.Generator | None = None, fine: bool = False) -> Volume:
    """Random geometric objects plus axial cylinders, smoothed and clipped to the support ball.

    With ``fine=True`` the phantom is returned on the ``cfg.oversample``
    times finer grid used for projecting (see :func:`build_dataset`).
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    objects = draw_objects(cfg, rng)
    f = int(cfg.oversample)
    shape = tuple(n * f for n in cfg.volume_shape)
    spacing = tuple(d / f for d in cfg.volume_spacing)
    vol = render_objects(objects, shape, spacing)
    if cfg.smooth_sigma > 0:
        vol = gaussian_filter(vol, cfg.smooth_sigma * f)
    vol = np.maximum(vol, 0.0)
    vol *= _support(shape, spacing, cfg.fov_radius)
    meta = {"num_objects": len(objects)}
    if fine or f == 1:
        return Volume(vol, spacing, cfg.fov_radius, meta=meta)
    return Volume(block_mean(vol, f), cfg.volume_spacing, cfg.fov_radius, meta=meta)


def block_mean(vol: np.ndarray, f: int) -> np.ndarray:
    """Average non-overlapping ``f``-cubed blocks."""
    if f == 1:
        return vol
    nz, ny, nx = (n // f for n in vol.shape)
    return vol[: nz * f, : ny * f, : nx * f].reshape(nz, f, ny, f, nx, f).mean(axis=(1, 3, 5))


def sphere_cluster_phantom(geom: ConeBeamGeometry, n_spheres: int = 6, seed: int = 0,
                           smooth_sigma: float = 1.0) -> Volume:
    """A few overlapping balls inside ``0.5 * B``, lightly smoothed."""
    rng = np.random.default_rng(seed)
    B = geom.fov_radius
    objects = [{
        "type": "ellipsoid",
        "center": rng.uniform(-0.45 * B, 0.45 * B, 3).tolist(),
        "axes": [r, r, r],
        "intensity": float(rng.uniform(0.3, 1.0)),
    } for r in rng.uniform(0.12 * B, 0.3 * B, n_spheres)]
    vol = render_objects(objects, geom.volume_shape, geom.volume_spacing)
    if smooth_sigma > 0:
        vol = gaussian_filter(vol, smooth_sigma)
    vol *= geom.support_mask()
    return Volume(vol, geom.volume_spacing, B)


# --- datasets -------------------------------------------------------------------


@dataclass
class Dataset:
    volumes: np.ndarray          # (K, nz, ny, nx)
    projections: np.ndarray      # (K, N, rows, cols)
    trajectory_hash: str
    split: dict                  # name -> list of sample indices
    manifest: dict = field(default_factory=dict)

    def subset(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.split.get(name, [])
        return self.projections[idx], self.volumes[idx]

    def __len__(self) -> int:
        return len(self.volumes)


def split_indices(n: int, train_frac: float = 0.8, val_frac: float = 0.2) -> dict:
    n_train = int(round(train_frac * n))
    n_val = min(int(round(val_frac * n)), n - n_train)
    return {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n)),
    }


def build_dataset(n: int, pcfg: PhantomConfig, traj: Trajectory, geom: ConeBeamGeometry | None = None,
                  out_dir=None, split=(0.8, 0.2), progress=None) -> Dataset:
    """Generate ``n`` phantoms, forward-project each along ``traj`` and optionally write them."""
    if n < 1:
        raise ValueError("need at least one sample")
    geom = geom or traj.geom
    if tuple(pcfg.volume_shape) != geom.volume_shape:
        raise ValueError("phantom volume shape does not match the geometry")
    f = int(pcfg.oversample)
    # projecting a finer rendering keeps the data off the reconstruction grid
    fine_geom = geom if f == 1 else geom.replace(
        volume_shape=tuple(m * f for m in geom.volume_shape),
        volume_spacing=tuple(d / f for d in geom.volume_spacing))
    fine_traj = traj if f == 1 else replace(traj, geom=fine_geom)
    seeds = np.random.SeedSequence(pcfg.seed).spawn(n)
    vols = np.empty((n,) + geom.volume_shape)
    projs = np.empty((n, len(traj)) + geom.detector_shape)
    for i, ss in enumerate(seeds):
        fine = generate_phantom(pcfg, np.random.default_rng(ss), fine=True).data
        vols[i] = block_mean(fine, f)
        projs[i] = cone_forward(fine, fine_traj, fine_geom)
        if progress is not None:
            progress(i, n)
    ds = Dataset(vols, projs, traj.content_hash(), split_indices(n, *split))
    ds.manifest = {
        "version": 1,
        "num_samples": n,
        "phantom_config": pcfg.to_dict(),
        "trajectory_hash": ds.trajectory_hash,
        "split": ds.split,
    }
    if out_dir is not None:
        write_dataset(ds, traj, out_dir)
    return ds


def write_dataset(ds: Dataset, traj: Trajectory, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj.save(out / "trajectory.json")
    geom = traj.geom
    samples = []
    for i in range(len(ds)):
        gt_side = write_array(out / f"gt_{i:04d}.f32", ds.volumes[i], spacing=list(geom.volume_spacing),
                              support_radius=geom.fov_radius)
        pr_side = write_array(out / f"proj_{i:04d}.f32", ds.projections[i],
                              spacing=list(geom.detector_spacing), trajectory_hash=ds.trajectory_hash)
        samples.append({"gt": f"gt_{i:04d}.f32", "gt_sha256": gt_side["sha256"],
                        "proj": f"proj_{i:04d}.f32", "proj_sha256": pr_side["sha256"]})
    ds.manifest["samples"] = samples
    (out / "manifest.json").write_text(json.dumps(ds.manifest, indent=1, sort_keys=True))
    return ds.manifest


def load_dataset(path) -> tuple[Dataset, Trajectory]:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath}: no dataset manifest")
    manifest = json.loads(mpath.read_text())
    traj = Trajectory.load(root / "trajectory.json")
    if traj.content_hash() != manifest["trajectory_hash"]:
        raise DataFormatError(root / "trajectory.json",
                              f"trajectory hash {traj.content_hash()} != manifest {manifest['trajectory_hash']}",
                              "trajectory_hash")
    vols, projs = [], []
    for s in manifest["samples"]:
        v, _ = read_array(root / s["gt"])
        p, side = read_array(root / s["proj"])
        for arr, key in ((v, "gt_sha256"), (p, "proj_sha256")):
            if array_hash(arr) != s[key]:
                raise DataFormatError(root, f"content hash mismatch for sample {s}", key)
        if side.get("trajectory_hash") != manifest["trajectory_hash"]:
            raise DataFormatError(root / s["proj"], "projection trajectory hash differs from manifest",
                                  "trajectory_hash")
        vols.append(v.astype(np.float64))
        projs.append(p.astype(np.float64))
    ds = Dataset(np.array(vols), np.array(projs), manifest["trajectory_hash"], manifest["split"], manifest)
    return ds, traj


def load_volume(path, rescale: bool = True) -> Volume:
    """Load an external raw volume; optionally map it affinely onto [0, 1].

    The applied map ``out = scale * in + offset`` is stored in ``meta``.
    """
    arr, side = read_array(path)
    if arr.ndim != 3:
        raise DataFormatError(path, f"expected a 3D volume, got shape {arr.shape}", "shape")
    spacing = side.get("spacing", [1.0, 1.0, 1.0])
    if not (isinstance(spacing, list) and len(spacing) == 3 and all(
            isinstance(s, (int, float)) and s > 0 for s in spacing)):
        raise DataFormatError(path, "spacing must be three positive numbers", "spacing")
    data = arr.astype(np.float64)
    meta = {"source": str(path)}
    if rescale:
        lo, hi = float(data.min()), float(data.max())
        scale = 1.0 / (hi - lo) if hi > lo else 1.0
        data = (data - lo) * scale
        meta["affine_map"] = {"scale": scale, "offset": -lo * scale}
    return Volume(data, tuple(float(s) for s in spacing), side.get("support_radius"), meta)


def fit_to_geometry(volume: Volume, geom: ConeBeamGeometry) -> Volume:
    """Resample to the geometry's grid (linear) and clip to its support ball."""
    factors = [n / m for n, m in zip(geom.volume_shape, volume.data.shape)]
    data = zoom(volume.data, factors, order=1) if any(f != 1 for f in factors) else volume.data.copy()
    data = np.maximum(data[tuple(slice(0, n) for n in geom.volume_shape)], 0.0) * geom.support_mask()
    return Volume(data, geom.volume_spacing, geom.fov_radius, dict(volume.meta))
