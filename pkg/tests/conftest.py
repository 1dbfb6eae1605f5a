import numpy as np
import pytest

from svfbp.geometry import circular_trajectory, small_geometry
from svfbp.phantoms import PhantomConfig, build_dataset
from svfbp.pipeline import PipelineConfig


@pytest.fixture(scope="session")
def geom():
    return small_geometry()


@pytest.fixture(scope="session")
def circ(geom):
    return circular_trajectory(geom)


@pytest.fixture(scope="session")
def pcfg(geom):
    return PipelineConfig.for_geometry(geom)


@pytest.fixture(scope="session")
def circ_data(geom, circ):
    """Ten small phantoms on the circular orbit (8 train / 2 val)."""
    return build_dataset(10, PhantomConfig.for_geometry(geom, seed=1), circ)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def ball(geom, radius, center=(0.0, 0.0, 0.0), value=1.0, sub=1):
    """Uniform ball; ``sub > 1`` gives partial-volume edges by supersampling."""
    z, y, x = geom.voxel_coords()
    dz, dy, dx = geom.volume_spacing
    off = (np.arange(sub) + 0.5) / sub - 0.5
    cz, cy, cx = center
    out = np.zeros(geom.volume_shape)
    for oz in off:
        for oy in off:
            for ox in off:
                r2 = ((z[:, None, None] + oz * dz - cz) ** 2 + (y[None, :, None] + oy * dy - cy) ** 2
                      + (x[None, None, :] + ox * dx - cx) ** 2)
                out += r2 <= radius**2
    return value * out / sub**3


# circular-orbit preset: constant lr 0.001, near-zero init, one weight slice shared by all views
CIRCULAR_TRAIN = dict(epochs=100, lr_min=0.0, lr_max=0.001, schedule="constant", init_range=(-0.001, 0.0),
                      share_across_views=True)


@pytest.fixture(scope="session")
def circ_run(circ, pcfg, circ_data):
    from svfbp.training import TrainConfig, train

    cfg = TrainConfig(**CIRCULAR_TRAIN)
    state = train(circ_data.subset("train"), circ, cfg, pcfg, val_set=circ_data.subset("val"))
    return cfg, state


@pytest.fixture(scope="session")
def air_sphere_run(geom, circ):
    """AIR(300) on a sphere cluster with per-iteration error history and wall time."""
    from svfbp.baseline import AirConfig, air_reconstruct, timed
    from svfbp.operators import cone_forward
    from svfbp.phantoms import sphere_cluster_phantom

    gt = sphere_cluster_phantom(geom, seed=0).data
    p = cone_forward(gt, circ)
    errors, residuals = [], []

    def track(k, v, rnorm):
        errors.append(np.linalg.norm(v - gt) / np.linalg.norm(gt))
        residuals.append(rnorm)

    vol, seconds = timed(air_reconstruct, p, circ, cfg=AirConfig(300), callback=track)
    return {"gt": gt, "projections": p, "volume": vol, "seconds": seconds,
            "errors": np.array(errors), "residuals": np.array(residuals)}
