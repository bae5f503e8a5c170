"""Smoke test for the permpi_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/permpi_py-*.whl
"""

import math
import tempfile
from pathlib import Path

import permpi_py as pm


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok  {what}")


def main():
    # Geometry: the plane-induced warp agrees with explicit reprojection.
    k = pm.Intrinsics(100.0, 100.0, 32.0, 32.0, 64, 64)
    a = pm.Pose.look_at([0.0, 0.0, 0.0], [0.0, 0.0, 5.0])
    b = pm.Pose.look_at([0.4, 0.1, 0.0], [0.0, 0.0, 5.0])
    rel = pm.relative_extrinsics(b, a)
    u, v = pm.homography_warp([20.0, 40.0], k, k, rel, 5.0)
    ray = [(20.0 - 32.0) / 100.0, (40.0 - 32.0) / 100.0, 1.0]
    world = b.transform_point([0.0, 0.0, 0.0])
    rb = b.rotation
    d = [sum(rb[i][j] * ray[j] for j in range(3)) for i in range(3)]
    inv = a.inverse()
    o_in = inv.transform_point(world)
    far_in = inv.transform_point([world[i] + d[i] for i in range(3)])
    d_in = [far_in[i] - o_in[i] for i in range(3)]
    s = (5.0 - o_in[2]) / d_in[2]
    p = [o_in[i] + s * d_in[i] for i in range(3)]
    check(abs(u - (100 * p[0] / p[2] + 32)) < 1e-9 and abs(v - (100 * p[1] / p[2] + 32)) < 1e-9, "homography warp")

    # Compositing.
    w, t = pm.compositing_weights([0.5, 0.5, 1.0])
    check(abs(sum(w) + t - 1.0) < 1e-15 and w == [0.5, 0.25, 0.25], "compositing weights")
    check(pm.composite_depth([2.0, 3.0], [1.0, 1.0]) == 2.0, "composite depth")
    check(len(pm.make_plane_depths(2.0, 8.0, 16)) == 16, "plane depths")

    # Metrics.
    img = pm.Image(16, 16, [[0.2, 0.5, 0.7]] * 256)
    off = pm.Image(16, 16, [[0.3, 0.6, 0.8]] * 256)
    check(abs(pm.psnr(img, off) - 20.0) < 1e-9, "psnr of a 0.1 offset is 20 dB")
    check(pm.ssim(img, img) == 1.0, "ssim(a, a) == 1")

    # Sparse oracle and overlap.
    sol = pm.sparse_solution_oracle([0.5, 0.25, 1.0], 4)
    check(sol["closed_form"], "sparse oracle returns the closed form")
    ov = pm.cross_view_overlap(trials=300)
    check(ov["plane_on_plane_fraction"] == 1.0 and ov["stratified_match_fraction"] < 0.05, "overlap contrast")

    # Errors surface as PermpiError.
    try:
        pm.gen_synthetic("no-such-preset")
        raise AssertionError("expected PermpiError")
    except pm.PermpiError as e:
        check("Config" in str(e), "unknown preset raises PermpiError")

    # Scene, training, checkpoint, render and evaluation.
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        syn = pm.gen_synthetic("two-plane", seed=0, out=str(tmp / "scene"), width=16, height=16)
        scene = pm.Scene.load(str(tmp / "scene"))
        check(scene.num_inputs == 3 and scene.num_heldout == 2 and scene.width == 16, "scene round trip")
        check(len(syn.heldout_depth(0)) == 256, "exact depth")

        cfg = pm.TrainConfig(epochs=2, planes=4, width=16, hidden_layers=2, rays_per_batch=64,
                             unseen_rays=32, position_freqs=4, schedule_epoch=1, seed=3)
        check(cfg.to_dict()["planes"] == 4, "config overrides")
        model = pm.train(scene, cfg, out=str(tmp / "run"))
        check(model.epoch == 2 and len(model.log) == 2 * math.ceil(3 * 256 / 64), "training log")
        check(all(math.isfinite(r["total"]) for r in model.log), "finite losses")

        again = pm.Model.load(str(tmp / "run"))
        name, cam, truth = scene.heldout_view(0)
        image, depth = again.render(cam)
        image2, _ = model.render(cam)
        check(image.data == image2.data, "checkpoint reproduces renders")
        check(len(depth) == 256 and all(math.isfinite(z) for z in depth), "depth map")
        report = again.evaluate(scene)
        check(len(report["rows"]) == 2 and report["mean_psnr"] > 5.0, f"eval {report['mean_psnr']:.2f} dB")
        image.save_png(str(tmp / "view.png"))
        check(pm.Image.load_png(str(tmp / "view.png")).width == 16, "png round trip")

    print("smoke test passed")


if __name__ == "__main__":
    main()
