"""Experiment configs, presets, seeded ground truths and output writing."""
from __future__ import annotations

import copy
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import diagnostics as diag
from .algorithms import (
    GlrlConfig,
    PowerConfig,
    SaddleLibrary,
    glrl_run,
    power_iterate,
    saddle_distance,
    tensor_deflation,
)
from .flow_dynamics import LossSpec, StepperConfig, apply_velocity, euler_step, velocities
from .modified_flow import AlgoParams, discovery_epochs, run_full
from .tensor_core import (
    ComponentModel,
    GroundTruth,
    frobenius_distance,
    per_direction_residuals,
    residual_frobenius,
    sample_sphere,
)
from .trajectory import TrajectoryRecord, snapshot, standard_columns

log = logging.getLogger(__name__)

MODES = ("plain_gd", "modified_flow", "glrl", "power", "deflation", "claim1")
FIT_FRACTION = 0.1
TIE_STEPS = 50


# -- ground truths -----------------------------------------------------------

def make_orthogonal_truth(d: int, r: int, ratio: float = 1.2,
                          normalization: str = "frobenius_one") -> GroundTruth:
    """Standard-basis truth with ``a_i / a_{i+1} = ratio``."""
    if not 1 <= r <= d:
        raise ValueError("need 1 <= r <= d")
    if ratio < 1:
        raise ValueError("ratio must be at least 1")
    a = float(ratio) ** np.arange(r - 1, -1, -1, dtype=float)
    return GroundTruth.normalized(a, np.eye(d)[:r], normalization, orthonormal=True)


def make_random_truth(d: int, r: int, seed: int, max_corr: float = 0.9) -> GroundTruth:
    """Seeded non-orthogonal truth with Frobenius norm one."""
    if not 1 <= r <= d:
        raise ValueError("need 1 <= r <= d")
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        U = sample_sphere(rng, r, d)
        off = np.abs(U @ U.T - np.eye(r))
        if off.max() <= max_corr:
            break
    else:
        raise RuntimeError("could not draw well-separated directions in 1000 tries")
    a = rng.uniform(0.5, 1.5, r)
    return GroundTruth.normalized(a, U, "frobenius_one", orthonormal=False)


def load_truth_file(path: str | Path) -> GroundTruth:
    doc = json.loads(Path(path).read_text())
    return GroundTruth(doc["weights"], doc["directions"], None,
                       doc.get("normalization", "none"))


def build_truth(spec: dict) -> GroundTruth:
    kind = spec.get("kind", "orthogonal")
    if kind == "orthogonal":
        return make_orthogonal_truth(spec["d"], spec["r"], spec.get("ratio", 1.2),
                                     spec.get("normalization", "frobenius_one"))
    if kind == "random_nonorthogonal":
        return make_random_truth(spec["d"], spec["r"], spec["seed"])
    if kind == "file":
        return load_truth_file(spec["path"])
    raise ValueError(f"unknown truth kind {kind!r}")


# -- configs -----------------------------------------------------------------

def load_schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


@dataclass
class GDConfig:
    m: int = 50
    delta0: float = 1e-15
    eta: float = 0.1
    steps: int = 2000
    lam: float = 0.0
    with_saddles: bool = False
    glrl_seed: int = 0


@dataclass
class Claim1Config:
    alphas: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    v_sq_norms: list = field(default_factory=lambda: [1e-4, 1e-3, 1e-2])
    total_sq_norm: float = 0.8
    d: int = 10
    fd_step: float = 1e-6


def _build(cls, doc: dict | None):
    doc = doc or {}
    names = {f.name for f in fields(cls)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**doc)


@dataclass
class ExperimentConfig:
    mode: str
    truth: dict
    seeds: list[int]
    name: str = "experiment"
    record_every: int = 10
    gd: GDConfig = field(default_factory=GDConfig)
    algo: AlgoParams = field(default_factory=AlgoParams)
    glrl: GlrlConfig = field(default_factory=GlrlConfig)
    power: PowerConfig = field(default_factory=PowerConfig)
    claim1: Claim1Config = field(default_factory=Claim1Config)
    deflation_stop: float = 1e-8
    out: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if not self.seeds:
            raise ValueError("seeds must be nonempty")
        if self.record_every <= 0:
            raise ValueError("record_every must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        jsonschema.validate(doc, load_schema())
        doc = copy.deepcopy(doc)
        return cls(
            mode=doc["mode"],
            truth=doc.get("truth", {"kind": "none"}),
            seeds=list(doc["seeds"]),
            name=doc.get("name", "experiment"),
            record_every=doc.get("record_every", 10),
            gd=_build(GDConfig, doc.get("gd")),
            algo=_build(AlgoParams, doc.get("algo")),
            glrl=_build(GlrlConfig, doc.get("glrl")),
            power=_build(PowerConfig, doc.get("power")),
            claim1=_build(Claim1Config, doc.get("claim1")),
            deflation_stop=doc.get("deflation_stop", 1e-8),
            out=doc.get("out"),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name, "mode": self.mode, "truth": self.truth, "seeds": self.seeds,
            "record_every": self.record_every, "gd": asdict(self.gd), "algo": asdict(self.algo),
            "glrl": asdict(self.glrl), "power": asdict(self.power),
            "claim1": asdict(self.claim1), "deflation_stop": self.deflation_stop,
            "out": self.out,
        }


ORTHO_FIG1 = {"kind": "orthogonal", "d": 10, "r": 5, "ratio": 1.2, "normalization": "frobenius_one"}
NONORTHO = {"kind": "random_nonorthogonal", "d": 10, "r": 5, "seed": 1}

PRESETS: dict[str, dict] = {
    "fig1": {
        "name": "fig1", "mode": "plain_gd", "truth": ORTHO_FIG1, "seeds": [0, 1, 2, 3, 4],
        "record_every": 10,
        "gd": {"m": 50, "delta0": 1e-15, "eta": 0.1, "steps": 2000},
    },
    "modified": {
        "name": "modified", "mode": "modified_flow", "truth": ORTHO_FIG1,
        "seeds": [0, 1, 2, 3, 4], "record_every": 20, "algo": {},
    },
    "nonortho-glrl": {
        "name": "nonortho-glrl", "mode": "plain_gd", "truth": NONORTHO, "seeds": [0],
        "record_every": 5,
        "gd": {"m": 50, "delta0": 1e-60, "eta": 0.3, "steps": 1000, "with_saddles": True},
        "glrl": {"epochs": 5, "seed_norm": 1e-60, "rank1_restarts": 50, "step_size": 0.3,
                 "iters_per_epoch": 2000},
    },
    "nonortho-glrl-large": {
        "name": "nonortho-glrl-large", "mode": "plain_gd", "truth": NONORTHO, "seeds": [0],
        "record_every": 10,
        "gd": {"m": 1000, "delta0": 1e-100, "eta": 0.3, "steps": 1000, "with_saddles": True},
        "glrl": {"epochs": 5, "seed_norm": 1e-60, "rank1_restarts": 50, "step_size": 0.3,
                 "iters_per_epoch": 2000},
    },
    "claim1": {"name": "claim1", "mode": "claim1", "truth": {"kind": "none"}, "seeds": [0]},
    "power-demo": {
        "name": "power-demo", "mode": "power", "truth": ORTHO_FIG1, "seeds": [0, 1, 2, 3, 4],
        "record_every": 1, "power": {"max_iters": 200, "tol": 1e-13, "restarts": 1},
    },
    "deflation-demo": {
        "name": "deflation-demo", "mode": "deflation", "truth": ORTHO_FIG1, "seeds": [0],
        "record_every": 1, "power": {"max_iters": 2000, "tol": 1e-14, "restarts": 50},
        "deflation_stop": 1e-8,
    },
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    doc = copy.deepcopy(PRESETS[name])
    doc.update(overrides)
    return ExperimentConfig.from_dict(doc)


# -- runners -----------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    trajectory: TrajectoryRecord
    summary: dict[str, Any]
    model: ComponentModel | None = None


def fit_times_ordered(fit_times: list, tie: int = TIE_STEPS) -> bool:
    if any(t is None for t in fit_times):
        return False
    return all(fit_times[i] >= fit_times[i - 1] - tie for i in range(1, len(fit_times)))


def find_splits(snapshots: list[tuple[int, ComponentModel]], hi: float = 0.99,
                lo: float = 0.9, min_sq_norm: float = 0.01) -> list[dict]:
    """Pairs of large components whose |correlation| falls from >= hi to <= lo.

    Both components must have squared norm at least ``min_sq_norm`` at both
    times, so tiny components drifting apart do not count.
    """
    found = []
    seen = set()
    for a, (step0, m0) in enumerate(snapshots):
        big0 = m0.sq_norms >= min_sq_norm
        if big0.sum() < 2:
            continue
        C0 = np.abs(m0.directions @ m0.directions.T)
        for step1, m1 in snapshots[a + 1:]:
            big = big0 & (m1.sq_norms >= min_sq_norm)
            C1 = np.abs(m1.directions @ m1.directions.T)
            hit = np.triu(np.outer(big, big) & (C0 >= hi) & (C1 <= lo), k=1)
            for i, j in zip(*np.nonzero(hit)):
                if (i, j) not in seen:
                    seen.add((int(i), int(j)))
                    found.append({"pair": [int(i), int(j)], "step_high": step0,
                                  "corr_high": float(C0[i, j]), "step_low": step1,
                                  "corr_low": float(C1[i, j])})
    return found


def build_saddles(cfg: ExperimentConfig, truth: GroundTruth):
    _, library, glrl_traj = glrl_run(truth, cfg.glrl, rng=cfg.gd.glrl_seed,
                                     record_every=max(cfg.record_every, 100))
    return library, glrl_traj


def run_plain_gd(cfg: ExperimentConfig, truth: GroundTruth, seed: int,
                 library: SaddleLibrary | None = None) -> SeedResult:
    g = cfg.gd
    rng = np.random.default_rng(seed)
    model = ComponentModel(sample_sphere(rng, g.m, truth.dim), np.full(g.m, g.delta0 ** 2),
                           truth.dim)
    spec = LossSpec(truth, g.lam)
    step_cfg = StepperConfig(g.eta)
    extra = ["saddle_index", "saddle_distance"] if library is not None else []
    traj = TrajectoryRecord(standard_columns(truth.r, g.m, extra))
    fit = [None] * truth.r
    snaps: list[tuple[int, ComponentModel]] = []

    def record(step):
        row = snapshot(truth, model, g.lam)
        row.update(step=step, continuous_time=step * g.eta, epoch=0, phase="gd")
        if library is not None:
            idx, dist = saddle_distance(model, library)
            row.update(saddle_index=idx, saddle_distance=dist)
            snaps.append((step, model))
        traj.append(row)

    record(0)
    for step in range(1, g.steps + 1):
        model = euler_step(spec, model, step_cfg)
        res = per_direction_residuals(truth, model)
        for i in range(truth.r):
            if fit[i] is None and res[i] <= FIT_FRACTION * truth.weights[i]:
                fit[i] = step
        if step % cfg.record_every == 0 or step == g.steps:
            record(step)
    order = sorted(range(truth.r), key=lambda i: (np.inf if fit[i] is None else fit[i], i))
    final = traj.rows[-1]
    summary = {
        "seed": seed,
        "final_loss": final[traj.columns.index("loss")],
        "final_residual": final[traj.columns.index("residual_frobenius")],
        "fit_times": fit,
        "discovery_order": order,
        "fit_order_ok": fit_times_ordered(fit),
        "min_norm_bound_margin": float(traj.column("norm_bound_margin").min()),
        "all_finite": bool(np.all(np.isfinite(model.sq_norms))
                           and np.all(np.isfinite(model.directions))),
        "min_sq_norm": float(model.sq_norms.min()),
    }
    if library is not None:
        loss_col = traj.column("loss")
        dist_col = traj.column("saddle_distance")
        steps = traj.column("step")
        away = (np.diff(loss_col) < 0) & (dist_col[1:] > 0.1)
        summary["saddle_losses"] = library.losses(truth).tolist()
        summary["divergence_steps"] = [int(s) for s in steps[1:][away]]
        summary["component_splits"] = find_splits(snaps)
    return SeedResult(seed, traj, summary, model)


def run_modified(cfg: ExperimentConfig, truth: GroundTruth, seed: int) -> SeedResult:
    res = run_full(cfg.algo, truth, rng=seed, record_every=cfg.record_every)
    a_hat = diag.fitted_mass(res.state.discovery, res.model).a_hat
    gaps = truth.weights - a_hat
    d = truth.dim
    need = truth.weights >= cfg.algo.epsilon / np.sqrt(d)
    summary = {
        "seed": seed,
        "converged": res.converged,
        "epochs_used": res.epochs_used,
        "final_residual": residual_frobenius(truth, res.model),
        "final_loss": float(res.trajectory.column("loss")[-1]),
        "betas": res.betas,
        "a_hat": a_hat.tolist(),
        "fit_gaps": gaps.tolist(),
        "all_fitted_within_2lam": bool(np.all(gaps[need] <= 2 * cfg.algo.lam)),
        "discovery_epochs": {str(k): v for k, v in sorted(discovery_epochs(res.state).items())},
        "discovery_order": [k for k, _ in sorted(discovery_epochs(res.state).items(),
                                                 key=lambda kv: (kv[1], kv[0]))],
        "monitor_warnings": res.state.warnings,
        "min_norm_bound_margin": float(res.trajectory.column("norm_bound_margin").min()),
        "min_margin_a": float(res.trajectory.column("margin_a").min()),
        "min_margin_d": float(res.trajectory.column("margin_d").min()),
    }
    return SeedResult(seed, res.trajectory, summary, res.model)


def run_glrl_mode(cfg: ExperimentConfig, truth: GroundTruth, seed: int) -> SeedResult:
    model, library, traj = glrl_run(truth, cfg.glrl, rng=seed, record_every=cfg.record_every)
    losses = library.losses(truth)
    summary = {
        "seed": seed,
        "saddle_losses": losses.tolist(),
        "final_loss": float(losses[-1]),
        "min_norm_bound_margin": float(traj.column("norm_bound_margin").min()),
    }
    return SeedResult(seed, traj, summary, model)


def run_power_mode(cfg: ExperimentConfig, truth: GroundTruth, seed: int) -> SeedResult:
    rng = np.random.default_rng(seed)
    w0 = sample_sphere(rng, 1, truth.dim)[0]
    hist: list = []
    w = power_iterate(truth, w0, cfg.power, history=hist)
    cols = ["step"] + [f"corr_{i}" for i in range(truth.r)] + ["dominant_index"]
    traj = TrajectoryRecord(cols)
    for it, v in enumerate(hist):
        c = (truth.directions @ v) ** 2
        traj.append({"step": it, **{f"corr_{i}": c[i] for i in range(truth.r)},
                     "dominant_index": int(np.argmax(truth.weights * c))})
    c0 = (truth.directions @ w0) ** 2
    k = int(np.argmax(truth.weights * c0))
    summary = {
        "seed": seed,
        "predicted_index": k,
        "final_index": int(np.argmax((truth.directions @ w) ** 2)),
        "misalignment": float(1.0 - (truth.directions[k] @ w) ** 2),
        "iterations": len(hist) - 1,
    }
    return SeedResult(seed, traj, summary)


def run_deflation_mode(cfg: ExperimentConfig, truth: GroundTruth, seed: int) -> SeedResult:
    model = tensor_deflation(truth, cfg.deflation_stop, cfg.power, rng=seed)
    traj = TrajectoryRecord(["step", "coefficient", "top_index", "top_corr",
                             "residual_frobenius"])
    for j in range(model.m):
        partial = ComponentModel(model.directions[:j + 1], model.sq_norms[:j + 1], model.dim)
        c = (truth.directions @ model.directions[j]) ** 2
        traj.append({"step": j + 1, "coefficient": model.sq_norms[j],
                     "top_index": int(np.argmax(c)), "top_corr": float(c.max()),
                     "residual_frobenius": frobenius_distance(truth, partial)})
    summary = {
        "seed": seed,
        "components": model.m,
        "coefficients": model.sq_norms.tolist(),
        "final_residual": frobenius_distance(truth, model),
    }
    return SeedResult(seed, traj, summary, model)


def claim1_fd_rate(alpha: float, v_sq: float, total: float, d: int, h: float) -> float:
    """Central difference of ``<v, e_k>^2`` along the exact gradient-flow velocity."""
    truth, model = diag.claim1_configuration(alpha, v_sq, total, d)
    g = velocities(LossSpec(truth, 0.0), model)
    plus = apply_velocity(model, g, h).directions[0, 0] ** 2
    minus = apply_velocity(model, g, -h).directions[0, 0] ** 2
    return (plus - minus) / (2 * h)


def run_claim1_mode(cfg: ExperimentConfig, truth, seed: int) -> SeedResult:
    c = cfg.claim1
    traj = TrajectoryRecord(["step", "alpha", "v_sq_norm", "total_sq_norm", "rate", "fd_rate"])
    rates = []
    step = 0
    for alpha in c.alphas:
        for v_sq in c.v_sq_norms:
            rate = diag.claim1_check(alpha, v_sq, c.total_sq_norm, c.d)
            fd = claim1_fd_rate(alpha, v_sq, c.total_sq_norm, c.d, c.fd_step)
            rates.append(rate)
            traj.append({"step": step, "alpha": alpha, "v_sq_norm": v_sq,
                         "total_sq_norm": c.total_sq_norm, "rate": rate, "fd_rate": fd})
            step += 1
    summary = {"seed": seed, "rates": rates, "all_negative": bool(all(x < 0 for x in rates))}
    return SeedResult(seed, traj, summary)


def run_seed(cfg: ExperimentConfig, seed: int, library: SaddleLibrary | None = None) -> SeedResult:
    truth = None if cfg.mode == "claim1" else build_truth(cfg.truth)
    if cfg.mode == "plain_gd":
        return run_plain_gd(cfg, truth, seed, library)
    if cfg.mode == "modified_flow":
        return run_modified(cfg, truth, seed)
    if cfg.mode == "glrl":
        return run_glrl_mode(cfg, truth, seed)
    if cfg.mode == "power":
        return run_power_mode(cfg, truth, seed)
    if cfg.mode == "deflation":
        return run_deflation_mode(cfg, truth, seed)
    return run_claim1_mode(cfg, truth, seed)


def _seed_job(args):
    cfg_doc, seed, library = args
    return run_seed(ExperimentConfig.from_dict(cfg_doc), seed, library)


def run_experiment(cfg: ExperimentConfig, out: str | Path | None = None,
                   jobs: int = 1) -> tuple[int, dict]:
    """Run every seed, write ``seed<k>.csv``/``seed<k>.json`` and ``summary.json``.

    Returns the exit status (0 on success) and the summary document.
    """
    out = Path(out or cfg.out or f"runs/{cfg.name}")
    out.mkdir(parents=True, exist_ok=True)
    library = None
    extra: dict[str, Any] = {}
    if cfg.mode == "plain_gd" and cfg.gd.with_saddles:
        truth = build_truth(cfg.truth)
        library, glrl_traj = build_saddles(cfg, truth)
        (out / "glrl.csv").write_text(glrl_traj.to_csv())
        extra["glrl_saddle_losses"] = library.losses(truth).tolist()
    doc = cfg.to_dict()
    status = 0
    results: list[SeedResult] = []
    try:
        if jobs > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_seed_job, [(doc, s, library) for s in cfg.seeds]))
        else:
            results = [run_seed(cfg, s, library) for s in cfg.seeds]
    except Exception as exc:  # surfaced through the exit status and summary
        log.exception("run failed")
        status = 1
        extra["error"] = repr(exc)
    for res in results:
        (out / f"seed{res.seed}.csv").write_text(res.trajectory.to_csv())
        (out / f"seed{res.seed}.json").write_text(res.trajectory.to_json())
        if cfg.mode == "modified_flow" and not res.summary["converged"]:
            status = 1
    summary = {"config": doc, "seeds": [r.summary for r in results], **extra}
    (out / "summary.json").write_text(json.dumps(summary, indent=1, default=_json_default))
    return status, summary


def _json_default(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))
