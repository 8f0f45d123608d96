"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""
import json
import time
import warnings

import numpy as np
import pytest

from gradflow_tensor import diagnostics as diag
from gradflow_tensor.algorithms import (
    GlrlConfig,
    PowerConfig,
    SaddleLibrary,
    glrl_run,
    power_iterate,
    saddle_distance,
    tensor_deflation,
)
from gradflow_tensor.flow_dynamics import (
    LossSpec,
    StepperConfig,
    component_gradient,
    loss,
    run_gradient_descent,
)
from gradflow_tensor.harness import (
    claim1_fd_rate,
    make_orthogonal_truth,
    preset,
    run_experiment,
)
from gradflow_tensor.tensor_core import (
    ComponentModel,
    GroundTruth,
    contract4,
    contract31,
    residual_frobenius,
    sample_sphere,
    to_dense,
)

from conftest import ACCEPTANCE, fd_gradient

FIG1 = make_orthogonal_truth(10, 5, 1.2, "frobenius_one")


def report(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    print(f"AC{n} {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def preset_runs(tmp_path_factory):
    """Run every gradient-based preset once; AC1, AC2, AC8, AC10, AC11 read the outputs."""
    out = {}
    for name in ("fig1", "modified", "nonortho-glrl", "nonortho-glrl-large"):
        path = tmp_path_factory.mktemp(name)
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            status, summary = run_experiment(preset(name), path)
        out[name] = (status, summary, path, time.perf_counter() - t0)
    return out


def csv_columns(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [l.split(",") for l in lines[1:]]
    return {h: [r[i] for r in rows] for i, h in enumerate(header)}


def test_ac1_fig1_staircase(preset_runs):
    status, summary, _, secs = preset_runs["fig1"]
    seeds = summary["seeds"]
    losses = [s["final_loss"] for s in seeds]
    ordered = [s["fit_order_ok"] for s in seeds]
    ok = status == 0 and len(seeds) == 5 and max(losses) <= 1e-4 and all(ordered)
    report(1, ok, f"fig1: max final loss {max(losses):.2e}, fit times "
                  f"{[s['fit_times'] for s in seeds]}, {secs:.1f}s")


def test_ac2_modified_flow(preset_runs):
    status, summary, _, secs = preset_runs["modified"]
    seeds = summary["seeds"]
    ok = (status == 0 and len(seeds) == 5
          and all(s["converged"] and s["final_residual"] <= 0.05 and s["epochs_used"] <= 40
                  and s["all_fitted_within_2lam"] for s in seeds))
    worst = max(max(s["fit_gaps"]) for s in seeds)
    report(2, ok, f"modified: residuals {[round(s['final_residual'], 4) for s in seeds]}, "
                  f"epochs {[s['epochs_used'] for s in seeds]}, max gap {worst:.2e}, {secs:.1f}s")


def test_ac3_gradient_finite_differences():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 9))
        m = int(rng.integers(1, 7))
        r = int(rng.integers(1, d + 1))
        truth = GroundTruth(rng.uniform(0.2, 1.5, r), sample_sphere(rng, r, d))
        W = sample_sphere(rng, m, d) * rng.uniform(0.1, 10.0, m)[:, None]
        spec = LossSpec(truth, float(rng.uniform(0, 0.1)))
        model = ComponentModel.from_vectors(W)
        j = int(rng.integers(m))
        g = component_gradient(spec, model, j).to_raw(model.directions[j], model.sq_norms[j])
        fd = fd_gradient(spec, W, j)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    report(3, worst <= 1e-6,
           f"gradient vs five-point central differences: worst relative error {worst:.2e}")


def test_ac4_dense_oracle():
    rng = np.random.default_rng(77)
    worst = 0.0

    def rel(a, b):
        return float(np.max(np.abs(np.asarray(a) - b)) / max(np.max(np.abs(b)), 1e-300))

    for _ in range(100):
        d = int(rng.integers(2, 9))
        r = int(rng.integers(1, d + 1))
        truth = GroundTruth(rng.uniform(0.2, 1.5, r), sample_sphere(rng, r, d))
        model = ComponentModel(sample_sphere(rng, 5, d), rng.uniform(0.01, 1, 5))
        lib = SaddleLibrary([ComponentModel.empty(d)] + [
            ComponentModel(sample_sphere(rng, k, d), rng.uniform(0.01, 1, k)) for k in (1, 3)])
        v = sample_sphere(rng, 1, d)[0]
        Dt, Dm = to_dense(truth), to_dense(model)
        idx, dist = saddle_distance(model, lib)
        dense_d = [(Dm - to_dense(s)).frobenius() for s in lib.saddles]
        errs = [rel(contract4(truth, v), Dt.contract4(v)),
                rel(contract4(model, v), Dm.contract4(v)),
                rel(contract31(truth, v), Dt.contract31(v)),
                rel(contract31(model, v), Dm.contract31(v)),
                rel(residual_frobenius(truth, model), (Dm - Dt).frobenius()),
                rel(dist, min(dense_d)), 0.0 if idx == int(np.argmin(dense_d)) else np.inf]
        worst = max(worst, max(errs))
    report(4, worst <= 1e-10, f"Gram vs dense oracle: worst relative error {worst:.2e}")


def test_ac5_rotation_invariance():
    rng = np.random.default_rng(5)
    truth = GroundTruth(rng.uniform(0.3, 1.0, 3), sample_sphere(rng, 3, 6))
    model = ComponentModel(sample_sphere(rng, 8, 6), np.full(8, 1e-2))
    cfg = StepperConfig(0.05, 200)
    base = run_gradient_descent(LossSpec(truth), model, cfg)
    W = base.directions * np.sqrt(base.sq_norms)[:, None]
    worst = 0.0
    for _ in range(20):
        Q, R = np.linalg.qr(rng.standard_normal((6, 6)))
        Q = Q * np.sign(np.diag(R))
        rot = ComponentModel(model.directions @ Q.T, model.sq_norms)
        out = run_gradient_descent(LossSpec(truth.rotated(Q)), rot, cfg)
        Wr = (out.directions * np.sqrt(out.sq_norms)[:, None]) @ Q
        worst = max(worst, float(np.max(np.abs(Wr - W))))
    report(5, worst <= 1e-8, f"20 rotations x 200 steps: worst coordinate gap {worst:.2e}")


def test_ac6_power_method():
    rng = np.random.default_rng(6)
    cfg = PowerConfig(max_iters=200, tol=1e-15)
    worst = 0.0
    n = 0
    while n < 100:
        w0 = sample_sphere(rng, 1, 10)[0]
        score = FIG1.weights * w0[:5] ** 2
        if np.sum(score == score.max()) > 1:
            continue
        k = int(np.argmax(score))
        w = power_iterate(FIG1, w0, cfg)
        worst = max(worst, 1.0 - w[k] ** 2)
        n += 1
    report(6, worst <= 1e-10, f"100 starts: worst 1-<w,e_k>^2 = {worst:.2e}")


def test_ac7_claim1():
    grid = [1e-4, 1e-3, 1e-2]
    rates, errs = [], []
    for alpha in grid:
        for v_sq in grid:
            rate = diag.claim1_check(alpha, v_sq, 0.8, 10)
            fd = claim1_fd_rate(alpha, v_sq, 0.8, 10, 1e-7)
            rates.append(rate)
            errs.append(abs(rate - fd) / abs(rate))
    ok = max(rates) < 0 and max(errs) <= 1e-5
    report(7, ok, f"claim1 grid: max rate {max(rates):.3e}, worst fd error {max(errs):.2e}")


def test_ac8_norm_bound(preset_runs):
    worst = np.inf
    checked = 0
    for name, (_, summary, path, _) in preset_runs.items():
        for s in summary["seeds"]:
            cols = csv_columns(path / f"seed{s['seed']}.csv")
            margins = np.array(cols["norm_bound_margin"], dtype=float)
            worst = min(worst, margins.min())
            checked += len(margins)
        if (path / "glrl.csv").exists():
            margins = np.array(csv_columns(path / "glrl.csv")["norm_bound_margin"], dtype=float)
            worst = min(worst, margins.min())
            checked += len(margins)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = tensor_deflation(FIG1, 1e-8, PowerConfig(max_iters=2000, tol=1e-14), rng=0)
    for k in range(1, model.m + 1):
        part = ComponentModel(model.directions[:k], model.sq_norms[:k])
        worst = min(worst, diag.norm_bound_check(part))
        checked += 1
    report(8, worst >= -1e-9, f"{checked} recorded steps: min margin {worst:.3e}")


def test_ac9_deflation_and_glrl():
    model = tensor_deflation(FIG1, 1e-8, PowerConfig(max_iters=2000, tol=1e-14), rng=0)
    dir_err = max(float(np.max(np.abs(model.directions[i] - FIG1.directions[i])))
                  for i in range(min(model.m, 5)))
    w_err = float(np.max(np.abs(model.sq_norms[:5] - FIG1.weights))) if model.m >= 5 else np.inf
    _, lib, _ = glrl_run(FIG1, GlrlConfig(epochs=5), rng=0, record_every=1000)
    expect = np.array([0.5 * np.sum(FIG1.weights[s:] ** 2) for s in range(6)])
    g_err = float(np.max(np.abs(lib.losses(FIG1) - expect)))
    ok = model.m == 5 and max(dir_err, w_err) <= 1e-6 and g_err <= 5e-3
    report(9, ok, f"deflation error {max(dir_err, w_err):.2e}; GLRL saddle-loss error {g_err:.2e}")


def test_ac10_nonorthogonal_divergence(preset_runs):
    status, summary, _, secs = preset_runs["nonortho-glrl"]
    s = summary["seeds"][0]
    window = s["divergence_steps"]
    splits = s["component_splits"]
    ok = status == 0 and len(window) > 0 and len(splits) > 0
    first = splits[0] if splits else {}
    report(10, ok, f"truth seed {summary['config']['truth']['seed']}: {len(window)} divergent "
                   f"samples from step {window[0] if window else None}; first split "
                   f"{json.dumps(first)}; {secs:.1f}s")


def test_ac11_extreme_scale(preset_runs):
    status, summary, path, secs = preset_runs["nonortho-glrl-large"]
    s = summary["seeds"][0]
    cols = csv_columns(path / "seed0.csv")
    steps = np.array(cols["step"], dtype=int)
    numeric = [k for k in cols if k != "phase"]
    data = np.array([cols[k] for k in numeric], dtype=float)
    upto = steps <= 100
    sq = np.array([cols[f"sq_norm_{j}"] for j in range(1000)], dtype=float)
    finite = bool(np.all(np.isfinite(data[:, upto])))
    min_sq = float(sq[:, upto].min())
    ok = (status == 0 and steps.max() >= 100 and finite and min_sq > np.finfo(float).tiny
          and s["all_finite"] and s["min_sq_norm"] > np.finfo(float).tiny)
    report(11, ok, f"m=1000, delta0=1e-100: finite={finite}, min sq_norm through step 100 "
                   f"{min_sq:.2e}, final min {s['min_sq_norm']:.2e}; {secs:.1f}s")
