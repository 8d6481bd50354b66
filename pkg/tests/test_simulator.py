import numpy as np
import pytest

from dualrs import (
    CoverageError,
    Direction,
    FrameStack,
    RsConfig,
    ambiguity_scene,
    scan_instant,
    scenes,
    synthesize_dual,
    synthesize_gt,
    synthesize_rs,
)
from dualrs.geometry import target_times
from dualrs.scenes import SineTexture, render_bar, translating_bar, translating_texture

TR = 1e-4


def _cfg(rows=32, **kw):
    return RsConfig(rows=rows, row_readout=kw.pop("row_readout", TR), **kw)


def test_scan_instant_examples():
    cfg = _cfg(midpoint=0.5)
    assert scan_instant(16, cfg) == 0.5
    assert scan_instant(16, cfg.replace(direction=Direction.B2T)) == 0.5
    assert scan_instant(0, cfg) == pytest.approx(cfg.t_start)
    for i in range(cfg.rows):
        s = scan_instant(i, cfg) + scan_instant(i, cfg.replace(direction="b2t"))
        assert s == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(IndexError):
        scan_instant(32, cfg)
    with pytest.raises(IndexError):
        scan_instant(-1, cfg)


def test_framestack_validation():
    with pytest.raises(ValueError):
        FrameStack(np.zeros((1, 4, 4, 1), np.float32), 0.0, 1.0)
    with pytest.raises(ValueError):
        FrameStack(np.zeros((2, 4, 4, 1), np.float32), 0.0, 0.0)


def test_static_stack_is_fixpoint(rng):
    img = rng.random((32, 20)).astype(np.float32)
    stack = scenes.static_stack(img, -0.01, 0.01, 3.3e-4)
    for tr in (TR, 2.7e-4):
        cfg = _cfg(row_readout=tr)
        out = synthesize_rs(stack, cfg)
        np.testing.assert_array_equal(out.pixels[..., 0], img)
        pair = synthesize_dual(stack, cfg)
        np.testing.assert_array_equal(pair.t2b.pixels, pair.b2t.pixels)


def _bar_centroids(img):
    px = img.pixels[..., 0].astype(np.float64) - 0.2
    x = np.arange(px.shape[1])
    return (px * x).sum(1) / px.sum(1)


@pytest.mark.parametrize("v", [0.5, 1.0, 2.0])
def test_translating_line_matches_per_row_render(v):
    """Row i of a T2B render is the analytic scene at that row's scan instant."""
    M, W = 64, 200
    cfg = _cfg(rows=M)
    u = v / TR
    stack = translating_bar((M, W), u, cfg.t_start - TR, cfg.t_end + TR, TR / 4, x_ref=100.0)
    out = synthesize_rs(stack, cfg)
    centers = 100.0 + u * np.array([scan_instant(i, cfg) for i in range(M)])
    ref = render_bar((M, W), centers)
    np.testing.assert_allclose(out.pixels, ref, atol=1e-6)
    c = _bar_centroids(out)
    np.testing.assert_allclose(np.diff(c), v, atol=1e-4)


def test_doubling_readout_doubles_slant():
    M, W = 64, 200
    u = 1.0 / TR
    slopes = []
    for tr in (TR, 2 * TR):
        cfg = _cfg(rows=M, row_readout=tr)
        stack = translating_bar((M, W), u, cfg.t_start - tr, cfg.t_end + tr, TR / 4, x_ref=100.0)
        c = _bar_centroids(synthesize_rs(stack, cfg))
        slopes.append(np.polyfit(np.arange(M), c, 1)[0])
    assert slopes[1] == pytest.approx(2 * slopes[0], rel=1e-6)


def test_dual_middle_row_identical(small_scene):
    _, cfg, pair, _ = small_scene
    m = cfg.rows // 2
    np.testing.assert_array_equal(pair.t2b.pixels[m], pair.b2t.pixels[m])
    assert not np.array_equal(pair.t2b.pixels[0], pair.b2t.pixels[0])


def test_misaligned_b2t_is_delayed_render(small_scene):
    stack, cfg, _, _ = small_scene
    pair = synthesize_dual(stack, cfg, 2)
    ref = synthesize_rs(stack, cfg.replace(direction="b2t", midpoint=cfg.midpoint + 2 * cfg.row_readout))
    assert pair.b2t == ref
    assert pair.row_misalignment == 2
    with pytest.raises(ValueError):
        synthesize_dual(stack, cfg, cfg.rows)


def test_reversal_is_flip_conjugation(small_scene):
    # with 0-based rows the two scan windows are offset by one row-time
    stack, cfg, pair, _ = small_scene
    flipped = FrameStack(stack.frames[:, ::-1].copy(), stack.t0, stack.dt)
    t2b = synthesize_rs(flipped, cfg.replace(midpoint=cfg.midpoint + cfg.row_readout))
    np.testing.assert_array_equal(pair.b2t.pixels, t2b.pixels[::-1])


def test_formation_locality(small_scene):
    stack, cfg, pair, _ = small_scene
    i = 10
    t = scan_instant(i, cfg)
    k = (t - stack.t0) / stack.dt
    keep = {int(np.floor(k)), int(np.ceil(k))}
    frames = stack.frames.copy()
    for j in range(stack.count):
        if j not in keep:
            frames[j] = 1.0 - frames[j]
    out = synthesize_rs(FrameStack(frames, stack.t0, stack.dt), cfg)
    np.testing.assert_array_equal(out.pixels[i], pair.t2b.pixels[i])


def test_coverage_error_names_interval():
    stack = scenes.static_stack(np.zeros((32, 8)), 0.0, 1e-3, 1e-4)
    with pytest.raises(CoverageError, match=r"covers \[0, 0\.001\] s"):
        synthesize_rs(stack, _cfg(midpoint=0.0))


def test_gt_static_and_single():
    img = np.linspace(0, 1, 32 * 8, dtype=np.float32).reshape(32, 8)
    stack = scenes.static_stack(img, -0.01, 0.01, 1e-3)
    seq = synthesize_gt(stack, _cfg(), 9)
    assert len(seq) == 9 and all(f == seq.frames[0] for f in seq.frames)
    one = synthesize_gt(stack, _cfg(midpoint=0.002), 1)
    assert one.instants == [0.002]


def test_gt_matches_analytic_translation():
    M, W = 48, 48
    cfg = _cfg(rows=M)
    tex = SineTexture.random(5)
    u = 3.0 / cfg.frame_readout
    stack = translating_texture((M, W), (u, 0.0), cfg.t_start, cfg.t_end, cfg.frame_readout / 16, texture=tex)
    seq = synthesize_gt(stack, cfg, 5)
    xx, yy = np.meshgrid(np.arange(W, dtype=float), np.arange(M, dtype=float))
    for f, t in zip(seq.frames, target_times(cfg, 5)):
        np.testing.assert_allclose(f.pixels, tex.evaluate(xx - u * t, yy), atol=2e-3)


def test_ambiguity_scene():
    a, b = ambiguity_scene()
    assert b.tilt == pytest.approx(5000 * 50e-6)
    ra = synthesize_dual(a.stack, a.config)
    rb = synthesize_dual(b.stack, b.config)
    assert np.mean((ra.t2b.pixels - rb.t2b.pixels) ** 2) < 1e-6
    region = (ra.b2t.pixels != 0.2) | (rb.b2t.pixels != 0.2)
    assert np.mean((ra.b2t.pixels - rb.b2t.pixels)[region] ** 2) > 1e-3


def test_ambiguity_without_motion():
    a, b = ambiguity_scene(velocity=0.0)
    assert b.tilt == 0.0
    ra = synthesize_dual(a.stack, a.config)
    rb = synthesize_dual(b.stack, b.config)
    assert ra.t2b == rb.t2b and ra.b2t == rb.b2t
