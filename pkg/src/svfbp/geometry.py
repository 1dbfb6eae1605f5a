"""Scan geometry, source trajectories and per-projection detector frames.

World coordinates are in millimetres with the isocentre at the origin and
the rotation axis along +z.  Volumes are indexed ``(z, y, x)`` and detector
images ``(row, col)`` where rows run along the detector's ``axis_y`` and
columns along ``axis_x``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

TRAJECTORY_FILE_VERSION = 1


@dataclass(frozen=True)
class ConeBeamGeometry:
    """Scalar cone-beam scan geometry. Lengths in mm."""

    source_isocenter_distance: float = 750.0
    source_detector_distance: float = 1200.0
    detector_shape: tuple[int, int] = (96, 96)
    detector_spacing: tuple[float, float] = (2.0, 2.0)
    volume_shape: tuple[int, int, int] = (64, 64, 64)
    volume_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    num_projections: int = 100
    fov_radius: float = 32.0

    def __post_init__(self):
        object.__setattr__(self, "detector_shape", tuple(int(v) for v in self.detector_shape))
        object.__setattr__(self, "detector_spacing", tuple(float(v) for v in self.detector_spacing))
        object.__setattr__(self, "volume_shape", tuple(int(v) for v in self.volume_shape))
        object.__setattr__(self, "volume_spacing", tuple(float(v) for v in self.volume_spacing))
        if len(self.detector_shape) != 2 or len(self.detector_spacing) != 2:
            raise ValueError("detector_shape and detector_spacing must have 2 entries")
        if len(self.volume_shape) != 3 or len(self.volume_spacing) != 3:
            raise ValueError("volume_shape and volume_spacing must have 3 entries")
        if not self.source_detector_distance > self.source_isocenter_distance > 0:
            raise ValueError(
                "need source_detector_distance > source_isocenter_distance > 0, got "
                f"{self.source_detector_distance} and {self.source_isocenter_distance}"
            )
        if not 0 < self.fov_radius <= self.source_isocenter_distance:
            raise ValueError(f"fov_radius must lie in (0, SID], got {self.fov_radius}")
        if min(self.detector_shape + self.volume_shape) < 2:
            raise ValueError("all detector and volume dimensions must be >= 2")
        if min(self.detector_spacing + self.volume_spacing) <= 0:
            raise ValueError("all spacings must be > 0")
        if self.num_projections < 1:
            raise ValueError("num_projections must be >= 1")

    @property
    def sid(self) -> float:
        return self.source_isocenter_distance

    @property
    def sdd(self) -> float:
        return self.source_detector_distance

    def detector_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Pixel-centre coordinates ``(x along cols, y along rows)`` in mm."""
        rows, cols = self.detector_shape
        dy, dx = self.detector_spacing
        x = (np.arange(cols) - (cols - 1) / 2) * dx
        y = (np.arange(rows) - (rows - 1) / 2) * dy
        return x, y

    def voxel_coords(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Voxel-centre coordinates ``(z, y, x)`` in mm."""
        return tuple(
            (np.arange(n) - (n - 1) / 2) * d for n, d in zip(self.volume_shape, self.volume_spacing)
        )

    def support_mask(self) -> np.ndarray:
        """Boolean mask of voxels with ``|x| <= fov_radius``."""
        z, y, x = self.voxel_coords()
        r2 = z[:, None, None] ** 2 + y[None, :, None] ** 2 + x[None, None, :] ** 2
        return r2 <= self.fov_radius**2

    def replace(self, **changes) -> "ConeBeamGeometry":
        d = self.to_dict()
        d.update(changes)
        return ConeBeamGeometry.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ConeBeamGeometry":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown geometry fields: {sorted(unknown)}")
        return cls(**d)


def desk_geometry(**changes) -> ConeBeamGeometry:
    """Laptop-sized default: 64^3 volume, 96x96 detector, 100 views."""
    return ConeBeamGeometry().replace(**changes) if changes else ConeBeamGeometry()


def small_geometry(**changes) -> ConeBeamGeometry:
    """32^3 volume, 48x48 detector, 36 views. Used by the test suites."""
    g = ConeBeamGeometry(
        detector_shape=(48, 48),
        detector_spacing=(1.25, 1.25),
        volume_shape=(32, 32, 32),
        num_projections=36,
        fov_radius=16.0,
    )
    return g.replace(**changes) if changes else g


def clinical_geometry() -> ConeBeamGeometry:
    """Full-size C-arm configuration (620x480 detector, 400 views)."""
    return ConeBeamGeometry(
        source_isocenter_distance=750.0,
        source_detector_distance=1200.0,
        detector_shape=(480, 620),
        detector_spacing=(0.616, 0.616),
        volume_shape=(128, 512, 512),
        volume_spacing=(0.25, 0.25, 0.25),
        num_projections=400,
        fov_radius=16.0,
    )


@dataclass(frozen=True)
class SinogramGrid:
    """Parallel-beam (mu, s) sampling of a detector image.

    ``mu`` spans ``[0, angular_range)`` endpoint-exclusive; ``s`` is centred on
    zero. ``clip_radius`` bounds the line integration to ``|v| <= e``.
    """

    num_angles: int
    num_s: int
    s_spacing: float
    clip_radius: float
    angular_range: float = math.pi

    def __post_init__(self):
        if self.num_angles < 1 or self.num_s < 3:
            raise ValueError("need num_angles >= 1 and num_s >= 3")
        if self.s_spacing <= 0 or self.clip_radius <= 0:
            raise ValueError("s_spacing and clip_radius must be > 0")
        if self.clip_radius > self.s_max + 1e-9:
            raise ValueError(f"clip_radius {self.clip_radius} exceeds max |s| {self.s_max}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_angles, self.num_s)

    @property
    def s_max(self) -> float:
        return (self.num_s - 1) / 2 * self.s_spacing

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.num_angles) * (self.angular_range / self.num_angles)

    @property
    def s(self) -> np.ndarray:
        return (np.arange(self.num_s) - (self.num_s - 1) / 2) * self.s_spacing

    @classmethod
    def for_detector(cls, geom: ConeBeamGeometry, num_angles: int | None = None,
                     s_oversample: int = 1) -> "SinogramGrid":
        """Grid that fully samples the detector.

        ``num_s`` covers the detector diagonal at the finest pixel pitch (620x480
        at 0.616 mm gives 785 bins). ``clip_radius`` is the inscribed-circle
        radius of the detector. By default ``num_angles`` equals the number of
        detector columns/rows, whichever is larger. ``s_oversample`` divides the
        s pitch by an integer factor over the same extent.
        """
        if int(s_oversample) != s_oversample or s_oversample < 1:
            raise ValueError(f"s_oversample must be a positive integer, got {s_oversample}")
        rows, cols = geom.detector_shape
        dy, dx = geom.detector_spacing
        ds = min(dx, dy)
        diag = math.hypot(rows * dy, cols * dx)
        num_s = int(math.ceil(diag / ds - 1e-9))
        if s_oversample > 1:
            num_s = (num_s - 1) * int(s_oversample) + 1
            ds /= int(s_oversample)
        if num_angles is None:
            num_angles = max(rows, cols)
        clip = min(rows * dy, cols * dx) / 2
        return cls(num_angles=int(num_angles), num_s=num_s, s_spacing=ds, clip_radius=clip)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SinogramGrid":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class DetectorFrame:
    origin: np.ndarray
    axis_x: np.ndarray
    axis_y: np.ndarray
    axis_z: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("origin", "axis_x", "axis_y", "axis_z")}


def detector_frame_for(source, geom: ConeBeamGeometry) -> DetectorFrame:
    """Detector frame for a source position, detector facing the isocentre.

    The detector centre lies on the ray from the source through the
    isocentre at distance D from the source. ``axis_y`` is world +z projected
    into the detector plane (world +x when the view is along z), and
    ``axis_x = axis_y x axis_z`` completes a right-handed frame.
    """
    source = np.asarray(source, dtype=np.float64)
    norm = np.linalg.norm(source)
    if norm == 0:
        raise ValueError("source at the isocentre has no detector frame")
    axis_z = source / norm
    origin = source - geom.sdd * axis_z
    up = np.array([0.0, 0.0, 1.0])
    axis_y = up - (up @ axis_z) * axis_z
    if np.linalg.norm(axis_y) < 1e-12:
        up = np.array([1.0, 0.0, 0.0])
        axis_y = up - (up @ axis_z) * axis_z
    axis_y /= np.linalg.norm(axis_y)
    axis_x = np.cross(axis_y, axis_z)
    axis_x /= np.linalg.norm(axis_x)
    return DetectorFrame(origin=origin, axis_x=axis_x, axis_y=axis_y, axis_z=axis_z)


def tangents_of(sources, closed: bool) -> np.ndarray:
    """Central-difference trajectory tangents, in mm per projection step."""
    a = np.asarray(sources, dtype=np.float64)
    n = len(a)
    if n < 3:
        raise ValueError("need at least 3 sources to estimate tangents")
    t = np.empty_like(a)
    t[1:-1] = (a[2:] - a[:-2]) / 2
    if closed:
        t[0] = (a[1] - a[-1]) / 2
        t[-1] = (a[0] - a[-2]) / 2
    else:
        t[0] = a[1] - a[0]
        t[-1] = a[-1] - a[-2]
    return t


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered source positions with detector frames and tangents.

    Frames are stored as stacked ``(N, 3)`` arrays; :attr:`frames` gives the
    per-projection :class:`DetectorFrame` view.
    """

    geom: ConeBeamGeometry
    sources: np.ndarray
    origins: np.ndarray
    axes_x: np.ndarray
    axes_y: np.ndarray
    axes_z: np.ndarray
    tangents: np.ndarray
    closed: bool
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.sources)
        for name in ("origins", "axes_x", "axes_y", "axes_z", "tangents"):
            arr = getattr(self, name)
            if arr.shape != (n, 3):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n}, 3)")
        if n != self.geom.num_projections:
            raise ValueError(f"{n} sources but geometry declares {self.geom.num_projections} projections")

    def __len__(self) -> int:
        return len(self.sources)

    @property
    def frames(self) -> list[DetectorFrame]:
        return [
            DetectorFrame(self.origins[i], self.axes_x[i], self.axes_y[i], self.axes_z[i])
            for i in range(len(self))
        ]

    @property
    def quadrature_weights(self) -> np.ndarray:
        """Per-projection lambda quadrature weights (trapezoidal for open orbits)."""
        w = np.ones(len(self))
        if not self.closed:
            w[0] = w[-1] = 0.5
        return w

    @property
    def tilt(self) -> np.ndarray:
        """Source elevation above the equatorial plane, radians."""
        r = np.linalg.norm(self.sources, axis=1)
        return np.arcsin(np.clip(self.sources[:, 2] / r, -1, 1))

    @property
    def azimuth(self) -> np.ndarray:
        return np.arctan2(self.sources[:, 1], self.sources[:, 0])

    def is_circular(self, rtol: float = 1e-6) -> bool:
        """True for an equatorial closed orbit whose tangents are orthogonal to sources."""
        if not self.closed:
            return False
        scale = self.geom.sid
        if np.max(np.abs(self.sources[:, 2])) > rtol * scale:
            return False
        dots = np.abs(np.einsum("ij,ij->i", self.sources, self.tangents))
        tnorm = np.linalg.norm(self.tangents, axis=1)
        return bool(np.all(dots <= rtol * scale * tnorm))

    def content_hash(self) -> str:
        """SHA-256 over the geometry and the float64 bytes of every array."""
        h = hashlib.sha256()
        h.update(json.dumps(self.geom.to_dict(), sort_keys=True).encode())
        h.update(b"closed" if self.closed else b"open")
        for arr in (self.sources, self.origins, self.axes_x, self.axes_y, self.axes_z, self.tangents):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "version": TRAJECTORY_FILE_VERSION,
            "kind": self.kind,
            "params": self.params,
            "geometry": self.geom.to_dict(),
            "sources": self.sources.tolist(),
            "frames": [f.to_dict() for f in self.frames],
            "tangents": self.tangents.tolist(),
            "closed": bool(self.closed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        if d.get("version") != TRAJECTORY_FILE_VERSION:
            raise ValueError(f"unsupported trajectory file version {d.get('version')!r}")
        geom = ConeBeamGeometry.from_dict(d["geometry"])
        frames = d["frames"]

        def stack(key):
            return np.array([f[key] for f in frames], dtype=np.float64).reshape(-1, 3)

        return cls(
            geom=geom,
            sources=np.array(d["sources"], dtype=np.float64).reshape(-1, 3),
            origins=stack("origin"),
            axes_x=stack("axis_x"),
            axes_y=stack("axis_y"),
            axes_z=stack("axis_z"),
            tangents=np.array(d["tangents"], dtype=np.float64).reshape(-1, 3),
            closed=bool(d["closed"]),
            kind=d.get("kind", "custom"),
            params=d.get("params", {}),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "Trajectory":
        return cls.from_dict(json.loads(Path(path).read_text()))


def trajectory_from_sources(geom, sources, closed, kind="custom", params=None) -> Trajectory:
    sources = np.asarray(sources, dtype=np.float64)
    frames = [detector_frame_for(s, geom) for s in sources]
    return Trajectory(
        geom=geom,
        sources=sources,
        origins=np.array([f.origin for f in frames]),
        axes_x=np.array([f.axis_x for f in frames]),
        axes_y=np.array([f.axis_y for f in frames]),
        axes_z=np.array([f.axis_z for f in frames]),
        tangents=tangents_of(sources, closed),
        closed=closed,
        kind=kind,
        params=dict(params or {}),
    )


def _spherical(r, theta, phi) -> np.ndarray:
    return r * np.stack(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=-1
    )


def circular_trajectory(geom: ConeBeamGeometry) -> Trajectory:
    n = geom.num_projections
    theta = 2 * np.pi * np.arange(n) / n
    sources = _spherical(geom.sid, theta, np.zeros(n))
    return trajectory_from_sources(geom, sources, closed=True, kind="circular")


def sinusoidal_trajectory(geom: ConeBeamGeometry, phi_max: float, freq: int) -> Trajectory:
    """Sinusoidal orbit: tilt ``phi_max * cos(freq * theta)`` for theta in [-pi, pi)."""
    if not 0 < phi_max < np.pi / 2:
        raise ValueError(f"phi_max must lie in (0, pi/2), got {phi_max}")
    if int(freq) != freq or freq < 1:
        raise ValueError(f"freq must be a positive integer, got {freq}")
    n = geom.num_projections
    theta = -np.pi + 2 * np.pi * np.arange(n) / n
    phi = phi_max * np.cos(freq * theta)
    sources = _spherical(geom.sid, theta, phi)
    return trajectory_from_sources(
        geom, sources, closed=True, kind="sinusoidal",
        params={"phi_max": float(phi_max), "freq": int(freq)},
    )


def circle_plus_arc_trajectory(
    geom: ConeBeamGeometry, arc_fraction: float = 0.125, arc_span: float = np.deg2rad(40.0)
) -> Trajectory:
    """Orthogonal arc followed by the equatorial circle.

    The first ``ceil(arc_fraction * N)`` views sweep elevation from
    ``-arc_span/2`` to ``+arc_span/2`` in the x-z plane (rotation about the
    world y axis); the rest trace the full circle starting at azimuth 0.
    """
    if not 0 < arc_fraction < 1:
        raise ValueError(f"arc_fraction must lie in (0, 1), got {arc_fraction}")
    if not 0 < arc_span <= np.pi / 2:
        raise ValueError(f"arc_span must lie in (0, pi/2], got {arc_span}")
    n = geom.num_projections
    n_arc = int(math.ceil(arc_fraction * n - 1e-9))
    n_circle = n - n_arc
    if n_arc < 2 or n_circle < 2:
        raise ValueError(f"split gives {n_arc} arc and {n_circle} circle views; need >= 2 each")
    alpha = np.linspace(-arc_span / 2, arc_span / 2, n_arc)
    arc = _spherical(geom.sid, np.zeros(n_arc), alpha)
    theta = 2 * np.pi * np.arange(n_circle) / n_circle
    circle = _spherical(geom.sid, theta, np.zeros(n_circle))
    return trajectory_from_sources(
        geom, np.concatenate([arc, circle]), closed=False, kind="circle-plus-arc",
        params={"arc_fraction": float(arc_fraction), "arc_span": float(arc_span), "num_arc": n_arc},
    )


def nearest_neighbor_order(points: np.ndarray, start: int = 0) -> np.ndarray:
    """Greedy nearest-neighbour chain through ``points`` beginning at ``start``."""
    n = len(points)
    order = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)
    cur = start
    for k in range(n):
        order[k] = cur
        visited[cur] = True
        if k == n - 1:
            break
        d = np.linalg.norm(points - points[cur], axis=1)
        d[visited] = np.inf
        cur = int(np.argmin(d))
    return order


def chain_length(points: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(points, axis=0), axis=1)))


def random_nn_trajectory(geom: ConeBeamGeometry, tilt_range: float = np.deg2rad(10.0), seed: int = 0) -> Trajectory:
    """Random points on a spherical band, chained by greedy nearest neighbour.

    Azimuth is uniform on [0, 2pi) and tilt uniform on [-tilt_range, tilt_range].
    The chain starts at the first draw.
    """
    if tilt_range <= 0:
        raise ValueError(f"tilt_range must be > 0, got {tilt_range}")
    raw = random_nn_raw_points(geom, tilt_range, seed)
    order = nearest_neighbor_order(raw)
    return trajectory_from_sources(
        geom, raw[order], closed=False, kind="random-nn",
        params={"tilt_range": float(tilt_range), "seed": int(seed), "order": order.tolist()},
    )


def random_nn_raw_points(geom: ConeBeamGeometry, tilt_range: float, seed: int) -> np.ndarray:
    """The unordered draw that :func:`random_nn_trajectory` chains."""
    rng = np.random.default_rng(seed)
    n = geom.num_projections
    theta = rng.uniform(0.0, 2 * np.pi, n)
    phi = rng.uniform(-tilt_range, tilt_range, n)
    return _spherical(geom.sid, theta, phi)


def make_trajectory(kind: str, geom: ConeBeamGeometry, **params) -> Trajectory:
    """Dispatch by orbit name: circular, sinusoidal, circle-plus-arc, random-nn."""
    if kind == "circular":
        return circular_trajectory(geom)
    if kind == "sinusoidal":
        return sinusoidal_trajectory(geom, params.get("phi_max", np.deg2rad(20.0)), params.get("freq", 5))
    if kind == "circle-plus-arc":
        return circle_plus_arc_trajectory(
            geom, params.get("arc_fraction", 0.125), params.get("arc_span", np.deg2rad(40.0))
        )
    if kind == "random-nn":
        return random_nn_trajectory(geom, params.get("tilt_range", np.deg2rad(10.0)), params.get("seed", 0))
    raise ValueError(f"unknown trajectory kind {kind!r}")
