"""Acceptance criteria, one test per criterion.

Each test records a one-line PASS/FAIL verdict (printed immediately and again
in the terminal summary) before asserting.
"""

import math
import time

import numpy as np

from conftest import plane_cloud
from osrlie import cluster as cl
from osrlie import lie, osr, pipeline, synth
from osrlie.cli import main
from osrlie.cloud import Label
from osrlie.io import read_csv, read_las, write_csv
from test_io import make_las
from test_lie import char_poly_roots, fd_gradient, fd_hessian

RESULTS = {}


def record(k, ok, detail):
    line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS[k] = line
    print(line)
    assert ok, line


def test_1_osr_beats_two_sided(scenes):
    t0 = time.perf_counter()
    spec = scenes["inclined"]
    cloud = synth.generate(spec)
    beta = np.array(spec.plane)
    err_osr = float(np.max(np.abs(osr.run_osr(cloud).plane.as_array() - beta)))
    err_ols = float(np.max(np.abs(osr.run_two_sided(cloud).as_array() - beta)))
    dt = time.perf_counter() - t0
    ok = cloud.n == 20_000 and err_osr < err_ols and err_osr <= 0.05 and dt <= 5
    record(1, ok, f"n={cloud.n} |dB|inf OSR={err_osr:.4g} two-sided={err_ols:.4g} (<= 0.05), {dt:.2f}s (<= 5s)")


def test_2_ground_accuracy_and_noise_flagging(scenes):
    t0 = time.perf_counter()
    acc = {}
    for name, spec in scenes.items():
        cloud = synth.generate(spec)
        fit = osr.run_osr(cloud)
        acc[name] = float(np.mean(fit.nonground.mask(cloud.n) == (cloud.truth != Label.GROUND)))
    fractions = [len(osr.run_osr(plane_cloud(10_000, (100, 0.03, -0.02), 1.0, seed)).nonground) / 10_000
                 for seed in range(20)]
    dt = time.perf_counter() - t0
    ok = min(acc.values()) >= 0.95 and max(fractions) <= 0.02 and dt <= 30
    accs = " ".join(f"{k}={v:.4f}" for k, v in acc.items())
    record(2, ok, f"ground accuracy {accs} (>= 0.95); max flagged fraction on noise "
                  f"{max(fractions):.4f} (<= 0.02); {dt:.2f}s (<= 30s)")


def test_3_kernel_derivatives_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    xyz = rng.uniform(0, 20, (500, 3))
    h = lie.Bandwidth(3, 3, 4)
    field = lie.KernelField(xyz, h, "exact")
    # The O(step^2) truncation error of a central difference at 1e-3*h reaches
    # ~1.2e-6 of |grad| near stationary points of the field, which would mask
    # the comparison; 1e-4*h puts the oracle's own error near 1e-8.
    g_step = 1e-4 * h.as_array()
    h_step = 1e-3 * h.as_array()
    g_err, h_err = 0.0, 0.0
    for p in rng.uniform(2, 18, (100, 3)):
        g = field.gradient(p)[0]
        H = lie.upper_to_matrix(field.hessian(p))[0]
        g_err = max(g_err, np.linalg.norm(g - fd_gradient(field, p, g_step)) / np.linalg.norm(g))
        h_err = max(h_err, np.linalg.norm(H - fd_hessian(field, p, h_step)) / np.linalg.norm(H))
    dt = time.perf_counter() - t0
    ok = g_err <= 1e-6 and h_err <= 1e-5 and dt <= 5
    record(3, ok, f"max relative error gradient {g_err:.2e} (<= 1e-6), Hessian {h_err:.2e} (<= 1e-5); "
                  f"{dt:.2f}s (<= 5s)")


def test_4_eigen_solver_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    upper = rng.normal(size=(10_000, 6)) * 10.0 ** rng.uniform(-3, 3, size=(10_000, 1))
    mats = lie.upper_to_matrix(upper)
    eigs = lie.eigvals_sym3_batch(upper)
    scale = np.linalg.norm(mats, axis=(1, 2))
    trace_err = np.max(np.abs(eigs.sum(axis=1) - np.trace(mats, axis1=1, axis2=2)) / scale)
    det_err = np.max(np.abs(np.prod(eigs, axis=1) - np.linalg.det(mats)) / scale ** 3)
    oracle = np.array([char_poly_roots(m) for m in mats])
    root_err = np.max(np.max(np.abs(np.sort(eigs, axis=1) - oracle), axis=1) / scale)
    dt = time.perf_counter() - t0
    ok = trace_err <= 1e-9 and det_err <= 1e-9 and root_err <= 1e-10 and dt <= 5
    record(4, ok, f"trace {trace_err:.1e}, det {det_err:.1e} (<= 1e-9 rel); char-poly oracle "
                  f"{root_err:.1e} (<= 1e-10 scaled); {dt:.2f}s (<= 5s)")


def test_5_feature_separation(inclined):
    t0 = time.perf_counter()
    fit = osr.run_osr(inclined)
    feats = lie.compute_features(inclined, fit.nonground, lie.Bandwidth(5, 5, 8), mode="grid")
    truth = inclined.truth[feats.indices]
    v = feats.v
    gap = float(np.nanmedian(v[truth == Label.HUMAN_MADE]) - np.nanmedian(v[truth == Label.TREE]))
    floor_gap = float(np.min(v[feats.valid]) - math.log(3))
    dt = time.perf_counter() - t0
    ok = gap >= 1.0 and floor_gap >= -1e-12 and dt <= 60
    record(5, ok, f"median v gap human-tree {gap:.3f} nats (>= 1.0); min valid v - log 3 = "
                  f"{floor_gap:.3g} (>= -1e-12); {dt:.2f}s (<= 60s)")


def test_6_grid_matches_exact_and_is_faster():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    n = 50_000
    xyz = np.column_stack([rng.uniform(0, 1000, (n, 2)), rng.uniform(0, 30, n)])
    h = lie.Bandwidth(5, 5, 8)
    exact = lie.KernelField(xyz, h, "exact")
    grid = lie.KernelField(xyz, h, "grid", truncation=5)

    probes = xyz[rng.choice(n, 50, replace=False)]
    le, _, he = exact.evaluate(probes)
    lg, _, hg = grid.evaluate(probes)
    lam_err = float(np.max(np.abs(lg - le) / le))
    hess_err = float(np.max(np.linalg.norm(hg - he, axis=1) / np.linalg.norm(he, axis=1)))

    timing_probes = xyz[rng.choice(n, 1000, replace=False)]
    s = time.perf_counter()
    exact.evaluate(timing_probes)
    t_exact = time.perf_counter() - s
    s = time.perf_counter()
    grid.evaluate(timing_probes)
    t_grid = time.perf_counter() - s
    speedup = t_exact / t_grid
    dt = time.perf_counter() - t0
    ok = lam_err <= 1e-4 and hess_err <= 1e-4 and speedup >= 5 and dt <= 60
    record(6, ok, f"grid vs exact rel. error intensity {lam_err:.1e}, Hessian {hess_err:.1e} (<= 1e-4); "
                  f"speedup {speedup:.1f}x at n={n} (>= 5x); {dt:.2f}s (<= 60s)")


def test_7_gmm(inclined, scenes):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 0.5, 500), rng.normal(10, 0.5, 500)])[:, None]
    fm = cl.FeatureMatrix(x, np.arange(1000))
    worst_drop = 0.0
    for seed in range(50):
        ll = np.array(cl.fit_gmm(fm, 2, seed, cl.GmmConfig(restarts=1)).loglik)
        worst_drop = max(worst_drop, float(np.max(-np.diff(ll), initial=0.0)))
    model = cl.fit_gmm(fm, 2, seed=3)
    mean_err = float(np.max(np.abs(np.sort(model.means[:, 0]) - [0, 10])))

    cfg = pipeline.PipelineConfig(scene=scenes["inclined"])
    labelled, report = pipeline.run_stages(inclined, cfg)
    acc = report["metrics"]["accuracy"]
    dt = time.perf_counter() - t0
    ok = worst_drop <= 1e-9 and mean_err <= 0.1 and acc >= 0.90 and dt <= 30
    record(7, ok, f"largest EM loglik decrease {worst_drop:.1e} (<= 1e-9, 50 seeds); two-blob mean error "
                  f"{mean_err:.3f} (<= 0.1); inclined 3-class accuracy K=2 {acc:.4f} (>= 0.90); "
                  f"{dt:.2f}s (<= 30s)")


def test_8_composition_round_trip_las(tmp_path):
    t0 = time.perf_counter()
    spec = synth.random_scene(13, (0, 120, 0, 120), 0.25, (40, 0.02, 0.01), 0.5, 6, 2,
                              layout_seed=2, roof_size=(30.0, 25.0), roof_points=300)
    scene = tmp_path / "scene.csv"
    write_csv(synth.generate(spec), scene)
    d = str(tmp_path)
    codes = [
        main(["run", "--input", str(scene), "--output", f"{d}/run.csv", "--report", f"{d}/run.json"]),
        main(["filter", "--input", str(scene), "--output", f"{d}/f.csv"]),
        main(["lie", "--input", f"{d}/f.csv", "--output", f"{d}/l.csv"]),
        main(["cluster", "--input", f"{d}/l.csv", "--output", f"{d}/c.csv"]),
    ]
    identical = all(c == 0 for c in codes) and (tmp_path / "run.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    labelled = read_csv(tmp_path / "run.csv")
    write_csv(labelled, tmp_path / "again.csv")
    back = read_csv(tmp_path / "again.csv")
    lossless = (back.xyz.tobytes() == labelled.xyz.tobytes()
                and back.intensity.tobytes() == labelled.intensity.tobytes()
                and np.array_equal(back.v, labelled.v, equal_nan=True)
                and np.array_equal(back.predicted, labelled.predicted)
                and (tmp_path / "again.csv").read_bytes() == (tmp_path / "run.csv").read_bytes())

    raw = np.array([[12345, -200, 7], [0, 1, 2], [-99999, 500000, -3]])
    scale, offset = (0.01, 0.001, 0.25), (100.0, -2000.0, 35.5)
    (tmp_path / "three.las").write_bytes(make_las(raw, scale, offset))
    las = read_las(tmp_path / "three.las")
    expect = raw * np.array(scale) + np.array(offset)
    las_exact = np.array_equal(las.xyz, expect) and las.x[0] == 12345 * 0.01 + 100.0
    dt = time.perf_counter() - t0
    ok = identical and lossless and las_exact and dt <= 5
    record(8, ok, f"stage-wise == run: {identical}; CSV round-trip lossless: {lossless}; "
                  f"LAS scale/offset exact: {las_exact}; {dt:.2f}s (<= 5s)")
