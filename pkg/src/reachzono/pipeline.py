"""Pipeline stages: artifact I/O between the library modules.

Each stage reads its config plus upstream artifacts from a working directory,
computes, and writes its artifact together with a run manifest (config hash,
seed, package version, input/output checksums -- no timestamps, so a rerun
with the same config and seed is byte-identical).  File formats:

    train/history/calibration/test .jsonl   newline-delimited trajectories
    model_set.json                          matrix zonotope + metadata
    dd_sets.json                            per-step output zonotopes (array)
    context.json                            fitted context zonotopes
    tightened.json                          contracted sets + lambda audit
    labels.jsonl                            per-run tightened label sequences
    weights/manifest.json, weights/weights.bin
    quantiles.json, scores.csv              conformal calibration results
    predictions.json, coverage.json, report.csv, sets_step_*.svg
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__, conformal, ddreach, fitcert, setalg, surrogate, sysim
from .config import ExperimentConfig
from .setalg import Zonotope, interval_hull
from .sysim import Trajectory

__all__ = ["MissingArtifactError", "StageError", "run_stage", "STAGES"]


class MissingArtifactError(FileNotFoundError):
    """An upstream artifact is absent; the message names the missing path."""


class StageError(RuntimeError):
    """Numerical failure inside a stage; carries stage and step context."""


# ---------------------------------------------------------------------------
# canonical JSON + manifests


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingArtifactError(str(path))
    return path


def _write_manifest(out: Path, stage: str, cfg: ExperimentConfig, inputs, outputs) -> None:
    mdir = out / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "stage": stage,
        "config_hash": hashlib.sha256(dumps_canonical(cfg.to_dict()).encode()).hexdigest(),
        "seed": cfg.seed,
        "version": __version__,
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    (mdir / f"{stage}.json").write_text(dumps_canonical(manifest))


def _write_trajs(path: Path, trajs) -> None:
    with path.open("w") as fh:
        for t in trajs:
            fh.write(json.dumps(t.to_json_dict(), sort_keys=True) + "\n")


def _read_trajs(path: Path) -> list[Trajectory]:
    _require(path)
    return [Trajectory.from_json_dict(json.loads(line)) for line in path.read_text().splitlines() if line]


def _write_sets(path: Path, keyed_sets: dict, extra=None) -> None:
    rows = [{"step": k, "set": z.to_json_dict()} for k, z in sorted(keyed_sets.items())]
    if extra:
        for row in rows:
            for key, mapping in extra.items():
                if row["step"] in mapping:
                    row[key] = mapping[row["step"]]
    path.write_text(dumps_canonical(rows))


def _read_sets(path: Path) -> dict:
    _require(path)
    return {int(r["step"]): Zonotope.from_json_dict(r["set"]) for r in json.loads(path.read_text())}


# ---------------------------------------------------------------------------
# stages


def stage_simulate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    sys = cfg.build_system()
    noise = cfg.noise()
    span = cfg.horizon + 1
    jobs = {
        "train.jsonl": (1, cfg.n_o + cfg.T + 1, 0),
        "history.jsonl": (cfg.n_history, span, 1),
        "calibration.jsonl": (cfg.n_cal_candidates, span, 2),
        "test.jsonl": (cfg.n_test, span, 3),
    }
    written = []
    for name, (count, length, stream) in jobs.items():
        trajs = sysim.gen_dataset(sys, cfg.x0_set, cfg.input_set, noise, count, length, cfg.seed, stream)
        _write_trajs(out / name, trajs)
        written.append(out / name)
    return written


def stage_build_model(cfg: ExperimentConfig, out: Path) -> list[Path]:
    trajs = _read_trajs(out / "train.jsonl")
    lr = ddreach.build_lifted(trajs, cfg.n_o)
    meps = ddreach.build_noise_matzono(cfg.eps_bound, lr.T, lr.p)
    ms = ddreach.build_model_set(lr, meps)
    path = out / "model_set.json"
    path.write_text(dumps_canonical(ms.to_json_dict()))
    return [path]


def _fitted_context(cfg: ExperimentConfig, out: Path) -> dict:
    history = _read_trajs(out / "history.jsonl")
    sets = {}
    for j in range(cfg.n_o):
        pts = np.array([t.outputs[j] for t in history])
        sets[j] = fitcert.pca_fit(pts)
    return sets


def stage_propagate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    ms = ddreach.ModelSet.from_json_dict(json.loads(_require(out / "model_set.json").read_text()))
    fitted = _fitted_context(cfg, out)
    z0 = ddreach.initial_lifted_set([fitted[j] for j in range(cfg.n_o)], cfg.input_set)
    try:
        rr = ddreach.run_reachability(
            ms, z0, cfg.input_set, cfg.eps_bound, cfg.n_o, cfg.horizon, cfg.rho_max
        )
    except ddreach.PropagationError as exc:
        raise StageError(f"propagate: {exc}") from exc
    keyed = dict(fitted)
    keyed.update(rr.output_sets)
    path = out / "dd_sets.json"
    _write_sets(path, keyed)
    return [path]


def stage_fit_context(cfg: ExperimentConfig, out: Path) -> list[Path]:
    fitted = _fitted_context(cfg, out)
    path = out / "context.json"
    _write_sets(path, fitted)
    return [path]


def stage_tighten(cfg: ExperimentConfig, out: Path) -> list[Path]:
    dd = _read_sets(out / "dd_sets.json")
    history = _read_trajs(out / "history.jsonl")
    cert = fitcert.strip_cert_from_history(history, cfg.strip_inflation)
    tightened, lambdas = {}, {}
    for k in range(cfg.n_o, cfg.horizon + 1):
        rep = fitcert.directional_contract(dd[k], cert, k)
        tightened[k] = rep.tightened
        lambdas[k] = rep.lambdas.tolist()
    path = out / "tightened.json"
    _write_sets(path, tightened, extra={"lambdas": lambdas})
    return [path]


def stage_gen_labels(cfg: ExperimentConfig, out: Path) -> list[Path]:
    """Tightened label sequences under initial-condition augmentation.

    Each run resamples the initial set's center from x0_set, simulates a
    fresh fitting batch, propagates the shared model set, and contracts with
    strips estimated from that run's own history.  Sets are reduced to the
    tokenizer's generator budget so the trainer can consume them directly.
    """
    sys = cfg.build_system()
    noise = cfg.noise()
    ms = ddreach.ModelSet.from_json_dict(json.loads(_require(out / "model_set.json").read_text()))
    tok = cfg.tokenizer()
    path = out / "labels.jsonl"
    with path.open("w") as fh:
        for r in range(cfg.n_label_runs):
            seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(4, r)).generate_state(1, np.uint64)[0])
            rng = np.random.default_rng(seed)
            x0_center = setalg.sample_member(cfg.x0_set, rng)
            x0_run = Zonotope(x0_center, cfg.x0_set.generators)
            history = sysim.gen_dataset(
                sys, x0_run, cfg.input_set, noise, cfg.label_history, cfg.horizon + 1, seed, stream=5
            )
            fitted = [fitcert.pca_fit(np.array([t.outputs[j] for t in history])) for j in range(cfg.n_o)]
            z0 = ddreach.initial_lifted_set(fitted, cfg.input_set)
            rr = ddreach.run_reachability(ms, z0, cfg.input_set, cfg.eps_bound, cfg.n_o, cfg.horizon, cfg.rho_max)
            cert = fitcert.strip_cert_from_history(history, cfg.strip_inflation)
            sets = {j: fitted[j] for j in range(cfg.n_o)}
            lambdas = {}
            for k in range(cfg.n_o, cfg.horizon + 1):
                rep = fitcert.directional_contract(rr.output_sets[k], cert, k)
                sets[k] = setalg.reduce(rep.tightened, tok.token_order)
                lambdas[str(k)] = rep.lambdas.tolist()
            record = {
                "run": r,
                "steps": sorted(sets),
                "sets": [sets[k].to_json_dict() for k in sorted(sets)],
                "lambdas": lambdas,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    return [path]


SURROGATE_ARCH = {"d_model": 128, "n_heads": 8, "n_layers": 4, "d_ff": 512}


def random_bundle(cfg: ExperimentConfig, seed: int) -> surrogate.WeightBundle:
    """Fixed-seed random weight bundle: pipeline plumbing for runs without a trainer."""
    tok = cfg.tokenizer()
    arch = {
        **SURROGATE_ARCH,
        "k_g": tok.k_g,
        "n_y": tok.n_y,
        "n_o": tok.n_o,
        "pos_len": (tok.n_o + 1) * (1 + tok.k_g),
        "norm_placement": "pre",
        "activation": "gelu_tanh",
        "layer_norm_eps": 1e-5,
        "version": __version__,
    }
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(6,)))
    tensors = {}
    for name, shape in surrogate.tensor_table(arch):
        if name.endswith(".gain"):
            t = np.ones(shape)
        elif name.endswith((".bias", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            t = np.zeros(shape)
        else:
            t = rng.normal(0.0, 0.02, shape)
        tensors[name] = t.astype(np.float32)
    return surrogate.WeightBundle(arch=arch, tensors=tensors)


def stage_init_weights(cfg: ExperimentConfig, out: Path) -> list[Path]:
    wb = random_bundle(cfg, cfg.seed)
    surrogate.save_bundle(wb, out / "weights")
    return [out / "weights" / "manifest.json", out / "weights" / "weights.bin"]


def _load_context_sets(cfg: ExperimentConfig, out: Path) -> tuple[list[Zonotope], list[Zonotope]]:
    """Fitted context sets plus the transformer's initial context.

    The membership filter always uses the fitted sets; 'centers' mode only
    degrades what the transformer sees (a point context would filter out
    every noisy trajectory).
    """
    ctx = _read_sets(out / "context.json")
    fitted = [ctx[j] for j in range(cfg.n_o)]
    model_ctx = fitted
    if cfg.context_init == "centers":
        model_ctx = [Zonotope.point(z.center) for z in fitted]
    return fitted, model_ctx


def _filtered_outputs(cfg, trajs, context_sets, limit=None):
    kept = conformal.filter_indices(trajs, context_sets)
    if limit is not None:
        kept = kept[:limit]
    realized = {
        k: np.array([trajs[i].outputs[k] for i in kept])
        for k in range(cfg.n_o, cfg.horizon + 1)
    }
    return kept, realized


def stage_calibrate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    wb = surrogate.load_bundle(_require(out / "weights"))
    tok = cfg.tokenizer()
    fitted, context = _load_context_sets(cfg, out)
    trajs = _read_trajs(out / "calibration.jsonl")
    kept, realized = _filtered_outputs(cfg, trajs, fitted, limit=cfg.n_cal)
    if len(kept) < cfg.n_cal:
        raise StageError(
            f"calibrate: only {len(kept)} of {len(trajs)} candidates pass the context filter; "
            f"need n_cal={cfg.n_cal} (raise n_cal_candidates)"
        )
    steps = list(range(cfg.n_o, cfg.horizon + 1))
    if cfg.feedback == "raw":
        roll = surrogate.autoregress(wb, context, cfg.horizon, tok, "raw")
        preds = dict(zip(roll.steps, roll.raw_sets))
        table, sm = conformal.calibrate(preds, realized, cfg.delta)
    else:
        # sequential per-step calibration: the quantile fed back at step k is
        # fixed from step-k scores before the context moves on
        ctx, ctx_steps = list(context), list(range(cfg.n_o))
        per_step, rows = {}, []
        for k in steps:
            pred = surrogate.predict_next(wb, ctx, ctx_steps, tok)
            s_k = np.array([conformal.score(pred, y) for y in realized[k]])
            per_step[k] = conformal.quantile(s_k, cfg.delta)
            rows.append(s_k)
            fed = setalg.reduce(conformal.inflate(pred, per_step[k]), tok.token_order)
            ctx, ctx_steps = ctx[1:] + [fed], ctx_steps[1:] + [k]
        scores = np.stack(rows, axis=1)
        sm = conformal.ScoreMatrix(steps=tuple(steps), scores=scores)
        table = conformal.QuantileTable(
            delta=cfg.delta, n_cal=scores.shape[0], per_step=per_step,
            joint=conformal.quantile(sm.trajectory_maxima, cfg.delta),
        )
    qpath = out / "quantiles.json"
    qpath.write_text(dumps_canonical(table.to_json_dict()))
    spath = out / "scores.csv"
    spath.write_text(sm.to_csv())
    return [qpath, spath]


def stage_predict(cfg: ExperimentConfig, out: Path) -> list[Path]:
    wb = surrogate.load_bundle(_require(out / "weights"))
    tok = cfg.tokenizer()
    _, context = _load_context_sets(cfg, out)
    table = conformal.QuantileTable.from_json_dict(json.loads(_require(out / "quantiles.json").read_text()))
    roll = surrogate.autoregress(
        wb, context, cfg.horizon, tok, cfg.feedback,
        quantiles=table if cfg.feedback == "inflated" else None,
    )
    payload = {
        "feedback": cfg.feedback,
        "steps": list(roll.steps),
        "raw": [z.to_json_dict() for z in roll.raw_sets],
        "inflated_per_step": [
            conformal.inflate(z, table.per_step[k]).to_json_dict()
            for k, z in zip(roll.steps, roll.raw_sets)
        ],
        "inflated_joint": [
            conformal.inflate(z, table.joint).to_json_dict() for z in roll.raw_sets
        ],
    }
    path = out / "predictions.json"
    path.write_text(dumps_canonical(payload))
    return [path]


def stage_evaluate(cfg: ExperimentConfig, out: Path) -> list[Path]:
    pred = json.loads(_require(out / "predictions.json").read_text())
    table = conformal.QuantileTable.from_json_dict(json.loads(_require(out / "quantiles.json").read_text()))
    fitted, _ = _load_context_sets(cfg, out)
    trajs = _read_trajs(out / "test.jsonl")
    kept, realized = _filtered_outputs(cfg, trajs, fitted)
    raw = {k: Zonotope.from_json_dict(z) for k, z in zip(pred["steps"], pred["raw"])}
    report = conformal.coverage_eval(raw, realized, table)
    payload = report.to_json_dict()
    payload.update({"n_candidates": len(trajs), "n_retained": len(kept)})
    path = out / "coverage.json"
    path.write_text(dumps_canonical(payload))
    return [path]


def _mean_width(Z: Zonotope) -> float:
    return float(interval_hull(Z).width.mean())


def _polygon(Z: Zonotope, n_dirs: int = 64) -> np.ndarray:
    """Boundary vertices via support directions (2-D only)."""
    angles = np.linspace(0.0, 2.0 * np.pi, n_dirs, endpoint=False)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    signs = np.sign(dirs @ Z.generators)
    signs[signs == 0] = 1.0
    return Z.center + signs @ Z.generators.T


def _svg_overlay(layers, path: Path) -> None:
    pts = np.vstack([p for _, _, p in layers])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    size, margin = 420.0, 30.0

    def sx(p):
        return margin + (p[:, 0] - lo[0]) / span[0] * (size - 2 * margin)

    def sy(p):
        return size - margin - (p[:, 1] - lo[1]) / span[1] * (size - 2 * margin)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size:.0f}" height="{size:.0f}">']
    for name, color, p in layers:
        xs, ys = sx(p), sy(p)
        d = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polygon points="{d}" fill="none" stroke="{color}" stroke-width="1.5"><title>{name}</title></polygon>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def stage_report(cfg: ExperimentConfig, out: Path) -> list[Path]:
    sys = cfg.build_system()
    dd = _read_sets(out / "dd_sets.json")
    pred = json.loads(_require(out / "predictions.json").read_text())
    coverage = json.loads(_require(out / "coverage.json").read_text())
    test = _read_trajs(out / "test.jsonl")
    model_sets = sysim.model_based_reach(sys, cfg.x0_set, cfg.input_set, cfg.w_box, cfg.v_box, cfg.horizon)
    inflated = {k: Zonotope.from_json_dict(z) for k, z in zip(pred["steps"], pred["inflated_per_step"])}
    raw = {k: Zonotope.from_json_dict(z) for k, z in zip(pred["steps"], pred["raw"])}
    lines = ["step,mc_width,model_width,tf_qhat_width,dd_width,coverage"]
    written = []
    for k in range(cfg.n_o, cfg.horizon + 1):
        mc = sysim.mc_hull(test, k)
        row = [
            str(k),
            repr(float(mc.width.mean())),
            repr(_mean_width(model_sets[k])),
            repr(_mean_width(inflated[k])),
            repr(_mean_width(dd[k])),
            repr(float(coverage["per_step"][str(k)])),
        ]
        lines.append(",".join(row))
        if sys.n_y == 2:
            mc_box = Zonotope.box((mc.lower + mc.upper) / 2, (mc.upper - mc.lower) / 2)
            layers = [
                ("DD", "#1f77b4", _polygon(dd[k])),
                ("TF raw", "#2ca02c", _polygon(raw[k])),
                ("TF+qhat", "#ff7f0e", _polygon(inflated[k])),
                ("model", "#7f7f7f", _polygon(model_sets[k])),
                ("MC hull", "#d62728", _polygon(mc_box)),
            ]
            svg = out / f"sets_step_{k}.svg"
            _svg_overlay(layers, svg)
            written.append(svg)
    path = out / "report.csv"
    path.write_text("\n".join(lines) + "\n")
    return [path] + written


STAGES = {
    "simulate": (stage_simulate, []),
    "build-model": (stage_build_model, ["train.jsonl"]),
    "propagate": (stage_propagate, ["model_set.json", "history.jsonl"]),
    "fit-context": (stage_fit_context, ["history.jsonl"]),
    "tighten": (stage_tighten, ["dd_sets.json", "history.jsonl"]),
    "gen-labels": (stage_gen_labels, ["model_set.json"]),
    "init-weights": (stage_init_weights, []),
    "calibrate": (stage_calibrate, ["weights/manifest.json", "context.json", "calibration.jsonl"]),
    "predict": (stage_predict, ["weights/manifest.json", "context.json", "quantiles.json"]),
    "evaluate": (stage_evaluate, ["predictions.json", "quantiles.json", "test.jsonl", "context.json"]),
    "report": (stage_report, ["dd_sets.json", "predictions.json", "coverage.json", "test.jsonl"]),
}


def run_stage(stage: str, cfg: ExperimentConfig, out: Path) -> list[Path]:
    """Execute one stage: check upstream artifacts, compute, write manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fn, deps = STAGES[stage]
    inputs = [_require(out / dep) for dep in deps]
    outputs = fn(cfg, out)
    _write_manifest(out, stage, cfg, inputs, outputs)
    return outputs
