"""Acceptance suite: one printed PASS/FAIL line per criterion at its stated tolerance.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the lines inline;
they are repeated in the terminal summary of any pytest run.
"""

import contextlib
import hashlib
import math
import time

import numpy as np
import pytest

from conftest import record
from dualrs import (
    Direction,
    RsConfig,
    SolverParams,
    VelocityCube,
    _backend,
    ambiguity_scene,
    build_time_cube,
    cli,
    dual_objective,
    psnr,
    scenes,
    ssim,
    synthesize_dual,
    synthesize_gt,
    synthesize_rs,
)
from dualrs.io import read_cube, write_cube
from dualrs.metrics import center_crop, rank_correlation, row_profile
from dualrs.solver import dual_objective_and_gradient, run_extraction

SIZE = (256, 256)
V_TRUE = (2.0, 0.0)
N = 5
FLOAT_SLACK = 4 * np.finfo(np.float64).eps


@contextlib.contextmanager
def single_thread():
    if not _backend.USE_NUMBA:
        yield
        return
    import numba
    prev = numba.get_num_threads()
    numba.set_num_threads(1)
    try:
        yield
    finally:
        numba.set_num_threads(prev)


@pytest.fixture(scope="module")
def scene():
    t = time.perf_counter()
    stack, cfg = scenes.constant_velocity_scene(SIZE, V_TRUE, seed=0)
    pair = synthesize_dual(stack, cfg)
    gt = synthesize_gt(stack, cfg, N)
    return dict(stack=stack, cfg=cfg, pair=pair, gt=gt, seconds=time.perf_counter() - t)


def _interior_psnr(seq, gt, cfg):
    region = center_crop(cfg.rows, gt.frames[0].width)
    return [psnr(o, g, region) for o, g in zip(seq.frames, gt.frames)]


@pytest.fixture(scope="module")
def oracle_run(scene):
    t = time.perf_counter()
    ex = run_extraction(scene["pair"], SolverParams(n_frames=N), VelocityCube.const(*V_TRUE))
    return dict(ex=ex, psnr=_interior_psnr(ex.sequence, scene["gt"], scene["cfg"]),
                seconds=time.perf_counter() - t + scene["seconds"])


@pytest.fixture(scope="module")
def estimated_run(scene):
    t = time.perf_counter()
    with single_thread():
        ex = run_extraction(scene["pair"], SolverParams(n_frames=N))
    return dict(ex=ex, psnr=_interior_psnr(ex.sequence, scene["gt"], scene["cfg"]),
                seconds=time.perf_counter() - t + scene["seconds"])


def test_criterion_1_time_cube_identities():
    t = time.perf_counter()
    worst_sum = 0.0
    ok = True
    for M in (2, 5, 480, 540):
        for n_t in (1, 3, 5, 9):
            p1 = build_time_cube(M, n_t, Direction.T2B).values
            p2 = build_time_cube(M, n_t, Direction.B2T).values
            if n_t == 1:
                ok &= p1[0, 0] == -0.5 and p1[0, -1] == 0.5 and p2[0, 0] == 0.5
            else:
                ok &= p1[0, 0] == 0.0 and p1[0, -1] == 1.0 and p1[-1, -1] == 0.0 and p2[0, 0] == 1.0
            ok &= bool(np.array_equal(p2, p1[:, ::-1]))
            frac = np.array([0.5]) if n_t == 1 else np.arange(n_t) / (n_t - 1)
            err = np.max(np.abs(p1 + p2 - (1 - 2 * frac)[:, None]))
            worst_sum = max(worst_sum, float(err))
    elapsed = time.perf_counter() - t
    ok = bool(ok) and worst_sum <= FLOAT_SLACK and elapsed < 1.0
    assert record(1, ok, f"corners and flip exact; row-sum max error {worst_sum:.1e} "
                         f"(<= {FLOAT_SLACK:.1e}); {elapsed:.3f} s (< 1 s)")


def _slant(v, readout, M=256, W=256):
    cfg = RsConfig(rows=M, row_readout=readout)
    u = v / 87e-6
    dt = readout
    stack = scenes.translating_bar((M, W), u, cfg.t_start - dt, cfg.t_end + dt, dt, x_ref=(W - 1) / 2)
    img = synthesize_rs(stack, cfg).pixels[..., 0].astype(np.float64) - 0.2
    rows = np.arange(M)
    predicted = (W - 1) / 2 + u * (rows - M / 2) * readout
    visible = (predicted > 2) & (predicted < W - 3)
    x = np.arange(W)
    centroid = (img[visible] * x).sum(1) / img[visible].sum(1)
    err = np.max(np.abs(centroid - predicted[visible]))
    slope = np.polyfit(rows[visible], centroid, 1)[0]
    return err, slope, int(visible.sum())


def test_criterion_2_formation_slant():
    t = time.perf_counter()
    worst, ratios = 0.0, []
    for v in (0.5, 1.0, 2.0):
        e1, s1, n1 = _slant(v, 87e-6)
        e2, s2, n2 = _slant(v, 2 * 87e-6)
        worst = max(worst, e1, e2)
        ratios.append(s2 / s1)
        assert s1 == pytest.approx(v, abs=0.51 / max(n1, 1))
    elapsed = time.perf_counter() - t
    ratio_err = max(abs(r - 2.0) for r in ratios)
    ok = worst <= 0.51 and ratio_err < 1e-3 and elapsed < 10.0
    assert record(2, ok, f"max per-row centroid error {worst:.2e} px (<= 0.51); doubled readout slant "
                         f"ratio error {ratio_err:.1e}; {elapsed:.2f} s (< 10 s)")


def test_criterion_3_ambiguity():
    t = time.perf_counter()
    a, b = ambiguity_scene()
    ra = synthesize_dual(a.stack, a.config)
    rb = synthesize_dual(b.stack, b.config)
    single = float(np.mean((ra.t2b.pixels.astype(np.float64) - rb.t2b.pixels) ** 2))
    background = 0.2
    region = (ra.b2t.pixels != background) | (rb.b2t.pixels != background)
    dual = float(np.mean((ra.b2t.pixels.astype(np.float64) - rb.b2t.pixels)[region] ** 2))
    elapsed = time.perf_counter() - t
    ok = single < 1e-6 and dual > 1e-3 and elapsed < 10.0
    assert record(3, ok, f"single-view MSE {single:.1e} (< 1e-6); dual-view object MSE {dual:.3g} "
                         f"(> 1e-3); {elapsed:.2f} s (< 10 s)")


def test_criterion_4_oracle_round_trip(oracle_run):
    lo = min(oracle_run["psnr"])
    ok = lo >= 35.0 and oracle_run["seconds"] < 30.0
    assert record(4, ok, f"min interior PSNR {lo:.2f} dB over {N} frames (>= 35); "
                         f"{oracle_run['seconds']:.2f} s (< 30 s)")


def test_criterion_5_solver_recovery(estimated_run):
    ex = estimated_run["ex"]
    v = ex.velocity.params
    err = np.abs(v - np.array(V_TRUE))
    lo = min(estimated_run["psnr"])
    monotone = True
    for s in {r["scale"] for r in ex.trace}:
        totals = [r["total"] for r in ex.trace if r["scale"] == s]
        monotone &= all(b <= a for a, b in zip(totals, totals[1:]))
    ok = bool(np.all(err <= 0.25)) and lo >= 30.0 and monotone and estimated_run["seconds"] < 300
    assert record(5, ok, f"V = ({v[0]:.4f}, {v[1]:.4f}), max error {err.max():.4f} (<= 0.25); "
                         f"min interior PSNR {lo:.2f} dB (>= 30); log monotone per scale: {monotone}; "
                         f"{estimated_run['seconds']:.1f} s single-threaded (< 300 s)")


def test_criterion_6_gradient_check(scene):
    t = time.perf_counter()
    rng = np.random.default_rng(6)
    params = SolverParams(n_frames=N)
    pair = scene["pair"]
    worst = 0.0
    h = 1e-6
    for _ in range(10):
        base = np.array([rng.uniform(-1.0, 4.0), rng.uniform(-1.5, 1.5)])
        _, g = dual_objective_and_gradient(pair, VelocityCube.const(*base), params)
        fd = np.empty(2)
        for i in range(2):
            up, dn = base.copy(), base.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (dual_objective(pair, VelocityCube.const(*up), params).total
                     - dual_objective(pair, VelocityCube.const(*dn), params).total) / (2 * h)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-3 and elapsed < 60.0
    assert record(6, ok, f"max relative gradient error {worst:.1e} at 10 random states (<= 1e-3); "
                         f"{elapsed:.2f} s (< 60 s)")


def test_criterion_7_row_profile(scene, estimated_run):
    t = time.perf_counter()
    cfg = scene["cfg"]
    profiles = row_profile(estimated_run["ex"].sequence, scene["gt"])
    p1 = build_time_cube(cfg.rows, N, Direction.T2B).values
    p2 = build_time_cube(cfg.rows, N, Direction.B2T).values
    closeness = np.minimum(np.abs(p1), np.abs(p2))
    rho = {n + 1: rank_correlation(profiles[n].mse, closeness[n]) for n in (0, N - 1)}
    elapsed = time.perf_counter() - t
    ok = all(r > 0.5 for r in rho.values()) and elapsed < 60.0
    shown = ", ".join(f"n={k}: {r:.3f}" for k, r in rho.items())
    assert record(7, ok, f"Spearman(row MSE, min |P|) {shown} (> 0.5); {elapsed:.2f} s beyond criterion 5")


def test_criterion_8_misalignment(scene, oracle_run):
    t = time.perf_counter()
    pair = synthesize_dual(scene["stack"], scene["cfg"], misalign_rows=2)
    ex = run_extraction(pair, SolverParams(n_frames=N), VelocityCube.const(*V_TRUE))
    shifted = _interior_psnr(ex.sequence, scene["gt"], scene["cfg"])
    drop = max(a - b for a, b in zip(oracle_run["psnr"], shifted))
    elapsed = time.perf_counter() - t
    ok = drop <= 1.0 and elapsed < 60.0
    assert record(8, ok, f"worst per-frame PSNR drop {drop:.3f} dB with 2-row misalignment (<= 1); "
                         f"min {min(shifted):.2f} dB; {elapsed:.2f} s beyond criterion 4")


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_9_metrics_and_determinism(tmp_path, capsys):
    t = time.perf_counter()
    a = np.full((32, 32), 0.5)
    p20 = psnr(a, a + 0.1)
    rng = np.random.default_rng(9)
    img = rng.random((48, 48))
    s_same = ssim(img, img)
    same_inf = math.isinf(psnr(img, img))

    arr = rng.random((2, 5, 7, 3)).astype(np.float32)
    write_cube(tmp_path / "a.cube", arr)
    write_cube(tmp_path / "b.cube", read_cube(tmp_path / "a.cube"))
    cube_ok = (tmp_path / "a.cube").read_bytes() == (tmp_path / "b.cube").read_bytes()

    manifest = tmp_path / "m.json"
    manifest.write_text('{"scene_id": "det", "row_readout": 87e-6, "n_frames": 3, "out_dir": "syn",'
                        ' "scene": {"kind": "translating_texture", "size": [48, 48], "velocity": [2, 0]}}')
    hashes = []
    for run in range(2):
        out = tmp_path / f"run{run}"
        codes = [cli.main(["synth", "--manifest", str(manifest), "--out-dir", str(out / "syn")]),
                 cli.main(["extract", "--t2b", str(out / "syn" / "t2b.png"), "--b2t", str(out / "syn" / "b2t.png"),
                           "--meta", str(out / "syn" / "meta.json"), "--iters", "40",
                           "--out-dir", str(out / "ex")]),
                 cli.main(["eval", "--outputs", str(out / "ex" / "frames.cube"), "--gt", str(out / "syn" / "gt.cube"),
                           "--out-dir", str(out / "ev")])]
        assert codes == [0, 0, 0]
        hashes.append(_tree_hash(out))
    capsys.readouterr()
    elapsed = time.perf_counter() - t
    ok = (abs(p20 - 20.0) <= 1e-9 and s_same == pytest.approx(1.0, abs=1e-12) and same_inf
          and cube_ok and hashes[0] == hashes[1] and elapsed < 10.0)
    assert record(9, ok, f"PSNR(uniform 0.1) = {p20:.12f} dB; SSIM(a,a) = {s_same:.12f}; "
                         f"cube re-write identical: {cube_ok}; CLI re-run identical: {hashes[0] == hashes[1]}; "
                         f"{elapsed:.2f} s (< 10 s)")


def test_supplementary_row_profile_at_higher_speed():
    """Not an acceptance criterion and does not change criterion 7's result.

    At 2 px per readout the largest flow is 1 px, so row error is dominated by
    bilinear interpolation error that is periodic in the flow fraction. At 8 px
    per readout the error grows with the warp distance and the ranking shows up.
    """
    stack, cfg = scenes.constant_velocity_scene(SIZE, (8.0, 0.0), seed=0)
    pair = synthesize_dual(stack, cfg)
    gt = synthesize_gt(stack, cfg, N)
    ex = run_extraction(pair, SolverParams(n_frames=N), VelocityCube.const(8.0, 0.0))
    profiles = row_profile(ex.sequence, gt)
    p1 = build_time_cube(cfg.rows, N, Direction.T2B).values
    p2 = build_time_cube(cfg.rows, N, Direction.B2T).values
    closeness = np.minimum(np.abs(p1), np.abs(p2))
    for n in (0, N - 1):
        assert rank_correlation(profiles[n].mse, closeness[n]) > 0.5
