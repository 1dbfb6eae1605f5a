import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import ball, rel_err
from svfbp.geometry import SinogramGrid, circular_trajectory, sinusoidal_trajectory, small_geometry
from svfbp.metrics import evaluate
from svfbp.operators import cone_forward, cosine_weight_map
from svfbp.pipeline import (
    PipelineConfig,
    RedundancyWeights,
    ShiftVariantFBP,
    analytic_circular_weights,
    grangeat_intermediate,
    reconstruct,
    shift_variant_filter,
)


def tiny_setup(target="weights"):
    g = small_geometry(volume_shape=(12, 12, 12), detector_shape=(16, 16), detector_spacing=(2.5, 2.5),
                       num_projections=6, fov_radius=6.0)
    t = circular_trajectory(g)
    cfg = PipelineConfig.for_geometry(g, num_angles=10, smoothing=(1.5, 5), smooth_target=target)
    return g, t, cfg


class TestConfig:
    def test_round_trip(self, pcfg):
        assert PipelineConfig.from_dict(pcfg.to_dict()) == pcfg

    def test_default_smooths_weights(self, pcfg):
        assert pcfg.smooth_target == "weights" and pcfg.smoothing_active

    def test_rejects_bad_values(self, geom):
        grid = SinogramGrid.for_detector(geom)
        with pytest.raises(ValueError):
            PipelineConfig(geom, grid, smooth_target="both")
        with pytest.raises(ValueError):
            PipelineConfig(geom, grid, smoothing=(1.0, 4))

    def test_weights_validation(self, pcfg):
        with pytest.raises(ValueError):
            RedundancyWeights(np.zeros((3, 5, 5)), pcfg.grid)
        bad = np.zeros((3,) + pcfg.grid.shape)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            RedundancyWeights(bad, pcfg.grid)


class TestIntermediate:
    def test_zero(self, geom, pcfg):
        assert not np.any(grangeat_intermediate(np.zeros(geom.detector_shape), pcfg))

    def test_symmetric_projection_gives_mu_invariant_rows(self):
        g = small_geometry(detector_shape=(161, 161), detector_spacing=(0.5, 0.5))
        cfg = PipelineConfig(g, SinogramGrid(num_angles=12, num_s=155, s_spacing=0.5, clip_radius=38.0))
        x, y = g.detector_coords()
        img = np.exp(-(x[None, :] ** 2 + y[:, None] ** 2) / (2 * 8.0**2))
        S = grangeat_intermediate(img / cosine_weight_map(g), cfg)
        assert np.max(np.abs(S - S[0])) < 5e-3 * np.abs(S).max()

    def test_batched_matches_single(self, geom, circ, pcfg, rng):
        p = rng.random((len(circ),) + geom.detector_shape)
        model = ShiftVariantFBP(circ, pcfg)
        S = model.intermediate(p)
        np.testing.assert_allclose(S[5], grangeat_intermediate(p[5], pcfg), rtol=1e-12, atol=1e-14)


class TestFilter:
    def test_zero_weights(self, geom, pcfg, rng):
        S = rng.normal(size=pcfg.grid.shape)
        assert not np.any(shift_variant_filter(S, np.zeros(pcfg.grid.shape), pcfg))

    def test_zero_intermediate(self, pcfg, rng):
        w = rng.normal(size=pcfg.grid.shape)
        assert not np.any(shift_variant_filter(np.zeros(pcfg.grid.shape), w, pcfg))

    @pytest.mark.parametrize("target", ["weights", "data", "none"])
    def test_linear_in_weights(self, pcfg, rng, target):
        cfg = PipelineConfig(pcfg.geom, pcfg.grid, pcfg.smoothing, target)
        S = rng.normal(size=cfg.grid.shape)
        w = rng.normal(size=cfg.grid.shape)
        a = shift_variant_filter(S, 2.5 * w, cfg)
        assert rel_err(a, 2.5 * shift_variant_filter(S, w, cfg)) < 1e-6

    def test_batched_matches_single(self, geom, circ, pcfg, rng):
        S = rng.normal(size=(len(circ),) + pcfg.grid.shape)
        w = rng.normal(size=S.shape)
        model = ShiftVariantFBP(circ, pcfg)
        np.testing.assert_allclose(model.filter(S, w)[7], shift_variant_filter(S[7], w[7], pcfg),
                                   rtol=1e-10, atol=1e-12)

    def test_smoothing_targets_differ(self, pcfg, rng):
        S = rng.normal(size=pcfg.grid.shape)
        w = rng.normal(size=pcfg.grid.shape)
        outs = [shift_variant_filter(S, w, PipelineConfig(pcfg.geom, pcfg.grid, pcfg.smoothing, t))
                for t in ("weights", "data", "none")]
        assert rel_err(outs[0], outs[1]) > 1e-3 and rel_err(outs[0], outs[2]) > 1e-3


class TestReconstruct:
    def test_zero_projections(self, geom, circ, pcfg):
        w = analytic_circular_weights(circ, pcfg)
        out = reconstruct(np.zeros((len(circ),) + geom.detector_shape), w, circ, pcfg)
        assert out.shape == geom.volume_shape and not np.any(out)

    def test_homogeneous_without_relu(self, geom, circ, pcfg, rng):
        cfg = PipelineConfig(pcfg.geom, pcfg.grid, pcfg.smoothing, pcfg.smooth_target, nonneg=False)
        p = rng.random((len(circ),) + geom.detector_shape)
        w = rng.normal(size=(len(circ),) + cfg.grid.shape)
        a = reconstruct(3.0 * p, w, circ, cfg)
        assert rel_err(a, 3.0 * reconstruct(p, w, circ, cfg)) < 1e-10

    def test_relu(self, geom, circ, pcfg, rng):
        p = rng.random((len(circ),) + geom.detector_shape)
        w = rng.normal(size=(len(circ),) + pcfg.grid.shape)
        assert np.min(reconstruct(p, w, circ, pcfg)) >= 0.0

    def test_length_mismatch(self, geom, circ, pcfg):
        with pytest.raises(ValueError):
            reconstruct(np.zeros((3,) + geom.detector_shape), np.zeros((3,) + pcfg.grid.shape), circ, pcfg)

    def test_shared_weight_slice_broadcasts(self, geom, circ, pcfg, rng):
        p = rng.random((len(circ),) + geom.detector_shape)
        w = analytic_circular_weights(circ, pcfg)
        a = reconstruct(p, w, circ, pcfg)
        b = reconstruct(p, w.data[:1], circ, pcfg)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)

    def test_analytic_sphere_oracle(self, geom, circ, pcfg):
        gt = ball(geom, 8.0, value=1.0, sub=2) + ball(geom, 3.0, center=(0, 4, -3), value=0.5, sub=2)
        p = cone_forward(gt, circ)
        rec = reconstruct(p, analytic_circular_weights(circ, pcfg), circ, pcfg)
        assert evaluate(rec, gt).ssim > 0.90


class TestAnalyticWeights:
    def grid_cfg(self, geom):
        # odd num_s places a bin at s = 0; even num_angles places one at mu = pi/2
        return PipelineConfig(geom, SinogramGrid(num_angles=8, num_s=49, s_spacing=1.25, clip_radius=30.0))

    def test_zero_at_right_angle(self, geom, circ):
        cfg = self.grid_cfg(geom)
        w = analytic_circular_weights(circ, cfg).data
        assert cfg.grid.angles[4] == pytest.approx(math.pi / 2)
        assert np.all(w[:, 4, :] == 0.0)

    def test_value_at_origin(self, geom, circ):
        cfg = self.grid_cfg(geom)
        w = analytic_circular_weights(circ, cfg).data
        assert w[0, 0, 24] == pytest.approx(-1 / (8 * math.pi**2), rel=1e-14)

    def test_identical_slices(self, circ, pcfg):
        w = analytic_circular_weights(circ, pcfg).data
        assert all(np.array_equal(w[0], w[i]) for i in range(len(w)))
        assert np.all(w <= 0)

    def test_noncircular_rejected(self, geom, pcfg):
        with pytest.raises(ValueError):
            analytic_circular_weights(sinusoidal_trajectory(geom, 0.3, 2), pcfg)

    def test_records_trajectory(self, circ, pcfg):
        assert analytic_circular_weights(circ, pcfg).trajectory_hash == circ.content_hash()


@pytest.mark.parametrize("target", ["weights", "data", "none"])
@settings(max_examples=4, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_weight_vjp_is_adjoint_of_linear_recon(target, seed):
    g, t, cfg = tiny_setup(target)
    model = ShiftVariantFBP(t, cfg)
    r = np.random.default_rng(seed)
    S = r.normal(size=(2, len(t)) + cfg.grid.shape)
    w = r.normal(size=(len(t),) + cfg.grid.shape)
    y = r.normal(size=(2,) + g.volume_shape)
    lhs = np.vdot(model.linear_recon(S, w), y)
    rhs = np.vdot(w, model.weight_vjp(S, y))
    assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-9
