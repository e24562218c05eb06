"""Stage runner: every stage reads earlier artifacts from the output directory,
writes its own, and records a manifest of content hashes.

Artifacts (relative to the output directory)::

    generate   data.epde
    scramble   scrambled.epde            (answer key in the sidecar)
    organize   embeddings.json
    coords     coords.json, chart.epde   (corridors in the sidecar)
    learn      f.mlp, g.mlp, loss_f.csv, loss_g.csv
    integrate  prediction.epde
    eval       report.json
    plot       plots/*.svg (+ .csv with --csv)

Each stage also writes ``manifest_<stage>.json`` (config hash, seed, input
and output SHA-256).  Wall-clock times go to ``timings.json`` only, so
manifests are identical across reruns.  A stage stages its files in a
scratch directory and moves them into place only after it succeeds.
"""
import hashlib
import json
import shutil
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plotting, tensor
from .diffmaps import DiffusionConfig, EmbeddingError
from .emergent import EmergentChart, build_chart, extract_arclength
from .generators import ChafeeInfanteConfig, SimulationError, generate_ensemble, sample_parameters, solve_chafee_infante
from .learner import (IntegrateConfig, IntegrationError, MlpModel, SourceModel, TrainConfig, TrainingError,
                      fd_features, integrate, train_rhs, train_source)
from .metrics import EvalReport, UndefinedMetric, local_linear_r2, relative_l2, safe, spearman
from .questionnaire import QuestConfig, organize_2d, organize_3d

STAGES = ("generate", "scramble", "organize", "coords", "learn", "integrate", "eval", "plot")

INPUTS = {
    "generate": [],
    "scramble": ["data.epde"],
    "organize": ["scrambled.epde"],
    "coords": ["scrambled.epde", "embeddings.json"],
    "learn": ["chart.epde"],
    "integrate": ["chart.epde", "f.mlp"],
    "eval": ["scrambled.epde", "embeddings.json", "coords.json", "chart.epde", "prediction.epde"],
    "plot": ["data.epde", "scrambled.epde", "embeddings.json", "chart.epde"],
}

NUMERICAL = (SimulationError, EmbeddingError, TrainingError, IntegrationError, UndefinedMetric,
             np.linalg.LinAlgError, FloatingPointError)


class MissingInput(FileNotFoundError):
    pass


class NumericalFailure(RuntimeError):
    pass


def sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(cfg):
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _sidecar_files(name):
    return [name, name + ".meta.json"] if name.endswith(".epde") else [name]


# ---------------------------------------------------------------------------
# stage bodies: (cfg, out dir, scratch dir, options) -> list of written names


def _generate(cfg, out, tmp, opts):
    if cfg["dataset"] == "chafee_infante":
        c = cfg["generate"]["chafee_infante"]
        t = solve_chafee_infante(ChafeeInfanteConfig(nu=c["nu"], n_x=c["n_x"], t_end=c["t_end"],
                                                     u0=c["u0"], n_out=c["n_out"]))
    else:
        c = cfg["generate"]["signal"]
        t = generate_ensemble(sample_parameters(c["n_samples"], seed=cfg["seed"]), n_out_times=c["n_out_times"])
    tensor.save(t, tmp / "data.epde", extra={"dataset": cfg["dataset"]})
    return ["data.epde"]


def _scramble(cfg, out, tmp, opts):
    t = tensor.load(out / "data.epde")
    s = cfg["scramble"]
    axes = s["axes"] if t.dims[0] > 1 else s["axes"].replace("p", "")
    sc, rec = tensor.scramble(t, axes, drop=s["drop"], seed=cfg["seed"] + s["seed_offset"])
    tensor.save(sc, tmp / "scrambled.epde", record=rec, extra={"dataset": cfg["dataset"]})
    return ["scrambled.epde"]


def _dcfg(d):
    return DiffusionConfig(**{k: v for k, v in d.items()})


def quest_config(cfg, two_d=False):
    o = cfg["organize"]
    base = _dcfg(o["diffusion"])
    rename = {"t": "rows", "s": "cols"} if two_d else {}
    per_axis = {rename.get(ax, ax): replace(base, **sub) for ax, sub in o["axis_diffusion"].items()}
    return QuestConfig(threshold_growth=o["threshold_growth"], quantile=o["quantile"],
                       level_weight=o["level_weight"], max_sweeps=o["max_sweeps"], tol=o["tol"],
                       diffusion=base, axis_diffusion=per_axis, unique_limit=o["unique_limit"])


def _embedding_json(e):
    if e is None:
        return None
    return {
        "coords": e.coords.tolist(),
        "eigenvectors": e.eigenvectors.tolist(),
        "eigenvalues": e.eigenvalues.tolist(),
        "epsilon": e.epsilon_used,
        "unique_flags": [bool(f) for f in e.unique_flags],
        "residuals": e.residuals.tolist(),
    }


def _organize(cfg, out, tmp, opts):
    t = tensor.load(out / "scrambled.epde")
    if t.dims[0] == 1:
        org = organize_2d(t.matrix(), quest_config(cfg, two_d=True))
        names = {"rows": "t", "cols": "s"}
    else:
        org = organize_3d(t, quest_config(cfg))
        names = {ax: ax for ax in tensor.AXES}
    doc = {
        "axes": {names[k]: _embedding_json(e) for k, e in org.embeddings.items()},
        "errors": {names[k]: v for k, v in org.errors.items()},
        "sweeps": org.state.iterations,
        "history": {names[k]: v for k, v in org.state.history.items()},
    }
    (tmp / "embeddings.json").write_text(_dump(doc))
    if opts.get("debug_dump"):
        org.state.dump(out / "debug" / "organize")
    return ["embeddings.json"]


def _unique(ax_doc, limit):
    flags = np.asarray(ax_doc["unique_flags"][:limit], bool)
    idx = np.flatnonzero(flags)
    return np.asarray(ax_doc["coords"])[:, idx], np.asarray(ax_doc["eigenvectors"])[:, idx], idx


def _time_anchor(field_by_time, rule):
    mass = np.abs(field_by_time).reshape(field_by_time.shape[0], -1).sum(axis=1)
    return int(np.argmin(mass) if rule == "min_mass" else np.argmax(mass))


def _coords(cfg, out, tmp, opts):
    t = tensor.load(out / "scrambled.epde")
    emb = json.loads((out / "embeddings.json").read_text())
    c = cfg["coords"]
    limit = cfg["organize"]["unique_limit"]
    res = {}
    for ax in ("t", "s"):
        doc = emb["axes"].get(ax)
        if doc is None:
            raise NumericalFailure(f"axis {ax} has no embedding: {emb['errors'].get(ax)}")
        pick = c["columns"].get(ax, "unique")
        if pick == "unique":
            pts, _, idx = _unique(doc, limit)
        else:
            idx = np.arange(min(pick, len(doc["eigenvalues"])))
            pts = np.asarray(doc["coords"])[:, idx]
        if ax == "s":
            anchor = int(np.argmin(np.asarray(doc["coords"])[:, 0]))
        else:
            anchor = _time_anchor(np.moveaxis(t.values, 1, 0), c["time_anchor"])
        ec = extract_arclength(pts, anchor=anchor, columns=[int(i) for i in idx], knn=c["knn"])
        res[ax] = {"values": ec.values.tolist(), "columns": list(ec.source_coords),
                   "anchor": ec.orientation_anchor, "closed": ec.closed}
    sample = c["sample"] if t.dims[0] > 1 else 0
    if not 0 <= sample < t.dims[0]:
        raise ValueError(f"coords.sample={sample} outside 0..{t.dims[0] - 1}")
    field = t.values[sample]
    chart = build_chart(field, np.asarray(res["t"]["values"]), np.asarray(res["s"]["values"]),
                        n_phi=c["n_phi"], n_psi=c["n_psi"], corridor_fraction=c["corridor_fraction"],
                        corridor_dilate=c["corridor_dilate"], boundary_width=c["boundary_width"],
                        with_source=cfg["learn"]["source"])
    res["sample"] = sample
    (tmp / "coords.json").write_text(_dump(res))
    tensor.save(chart.to_tensor(), tmp / "chart.epde", extra=chart.extras())
    return ["coords.json", "chart.epde"]


def load_chart(path):
    t, _, extra = tensor.load(path, with_sidecar=True)
    return EmergentChart.from_tensor(t, extra)


def train_config(cfg):
    l = cfg["learn"]
    return TrainConfig(lr0=l["lr0"], plateau_patience=l["plateau_patience"], lr_factor=l["lr_factor"],
                       epochs=l["epochs"], batch=l["batch"], seed=cfg["seed"],
                       n_val_snapshots=l["n_val_snapshots"], samples_per_epoch=l["samples_per_epoch"])


def _learn(cfg, out, tmp, opts):
    chart = load_chart(out / "chart.epde")
    fs = fd_features(chart)
    tc = train_config(cfg)
    log = opts.get("log")
    rf = train_rhs(fs, tc, log=log)
    rf.model.save(tmp / "f.mlp")
    (tmp / "loss_f.csv").write_text(rf.loss_csv())
    names = ["f.mlp", "loss_f.csv"]
    if cfg["learn"]["source"]:
        g, rg = train_source(rf.model, fs, chart, tc, log=log)
        g.net.extra = {"interval": list(map(float, g.interval))}
        g.net.save(tmp / "g.mlp")
        (tmp / "loss_g.csv").write_text(rg.loss_csv())
        names += ["g.mlp", "loss_g.csv"]
    return names


def integrate_config(cfg):
    i = cfg["integrate"]
    return IntegrateConfig(substeps=i["substeps"], scheme=i["scheme"], svd_energy=i["svd_energy"],
                           blowup_factor=i["blowup_factor"])


def _integrate(cfg, out, tmp, opts):
    chart = load_chart(out / "chart.epde")
    f = MlpModel.load(out / "f.mlp")
    g = None
    if cfg["learn"]["source"]:
        if not (out / "g.mlp").exists():
            raise MissingInput(f"missing input {out / 'g.mlp'} (run the learn stage)")
        net = MlpModel.load(out / "g.mlp")
        g = SourceModel(net, tuple(net.extra["interval"]))
    pred = integrate(f, chart, source=g, cfg=integrate_config(cfg))
    p = replace(chart, field=pred).to_tensor()
    tensor.save(p, tmp / "prediction.epde")
    return ["prediction.epde"]


def evaluate(scr, emb, coords, chart_field, pred_field, limit=5):
    """EvalReport against the ground truth carried in the scrambled tensor's metadata."""
    rep = EvalReport()
    meta = scr.axis_meta
    truth = {"t": ("time",), "s": ("arclength", "x")}
    for ax, cols in truth.items():
        col = next((meta.get(ax, {}).get(k) for k in cols if k in meta.get(ax, {})), None)
        if col is not None and ax in coords:
            rep.spearman[ax] = safe(spearman, coords[ax]["values"], col, notes=rep.notes, label=f"spearman[{ax}]")
    pdoc = emb["axes"].get("p")
    if pdoc is not None and "p" in meta:
        flags = np.asarray(pdoc["unique_flags"][:limit], bool)
        rep.unique_param_coords = int(flags.sum())
        V = np.asarray(pdoc["eigenvectors"])[:, np.flatnonzero(flags)[:2]]
        for name in ("D_e", "d"):
            if name in meta["p"]:
                rep.param_r2[name] = safe(local_linear_r2, V, meta["p"][name], notes=rep.notes, label=f"R2[{name}]")
    if pred_field is not None:
        rep.field_rel_l2 = safe(relative_l2, pred_field, chart_field, notes=rep.notes, label="field")
    return rep


def _eval(cfg, out, tmp, opts):
    scr = tensor.load(out / "scrambled.epde")
    emb = json.loads((out / "embeddings.json").read_text())
    coords = json.loads((out / "coords.json").read_text())
    chart = load_chart(out / "chart.epde")
    pred = tensor.load(out / "prediction.epde").matrix()
    rep = evaluate(scr, emb, coords, chart.field, pred, cfg["organize"]["unique_limit"])
    (tmp / "report.json").write_text(rep.to_json() + "\n")
    return ["report.json"]


DEFAULT_COLOR = {"p": "d", "t": "time", "s": "arclength"}


def _plot(cfg, out, tmp, opts):
    (tmp / "plots").mkdir()
    written = []

    def emit(name, kind, svg, data):
        (tmp / "plots" / f"{name}.svg").write_text(svg)
        written.append(f"plots/{name}.svg")
        if opts.get("csv"):
            (tmp / "plots" / f"{name}.csv").write_text(plotting.to_csv(kind, data))
            written.append(f"plots/{name}.csv")

    data = tensor.load(out / "data.epde")
    scr = tensor.load(out / "scrambled.epde")
    chart = load_chart(out / "chart.epde")
    sample = 0
    if (out / "coords.json").exists():
        sample = json.loads((out / "coords.json").read_text())["sample"]
    rec = tensor.load(out / "scrambled.epde", with_sidecar=True)[1]
    true_sample = int(rec.perm["p"][sample]) if rec is not None else sample
    emit("data", "spacetime", plotting.spacetime(data.values[true_sample], "data (time down, space across)"),
         data.values[true_sample])
    emit("scrambled", "spacetime", plotting.spacetime(scr.values[sample], "scrambled"), scr.values[sample])
    emit("chart", "spacetime", plotting.spacetime(chart.field, "emergent chart"), chart.field)
    if (out / "prediction.epde").exists():
        pred = tensor.load(out / "prediction.epde").matrix()
        emit("prediction", "spacetime", plotting.spacetime(pred, "learned model"), pred)
    emb = json.loads((out / "embeddings.json").read_text())
    color_by = {**DEFAULT_COLOR, **cfg["plot"]["color_by"]}
    for ax, doc in sorted(emb["axes"].items()):
        if doc is None:
            continue
        X, _, _ = _unique(doc, cfg["organize"]["unique_limit"])
        if X.shape[1] < 2:
            X = np.asarray(doc["coords"])[:, :2]
        col = scr.axis_meta.get(ax, {}).get(color_by.get(ax))
        if col is None and ax == "s":
            col = scr.axis_meta.get("s", {}).get("x")
        c = None if col is None else np.asarray(col, dtype=np.float64)
        emit(f"embedding_{ax}", "embedding", plotting.embedding(X, c, f"axis {ax}"), (X, c))
    curves = {}
    for name in ("f", "g"):
        p = out / f"loss_{name}.csv"
        if p.exists():
            arr = np.genfromtxt(p, delimiter=",", skip_header=1)
            arr = arr.reshape(-1, 4)
            curves[f"{name} train"] = arr[:, 1]
            curves[f"{name} validation"] = arr[:, 2]
    if curves:
        emit("loss", "loss", plotting.loss(curves, "training loss"), curves)
    if (out / "report.json").exists():
        rep = EvalReport(**json.loads((out / "report.json").read_text()))
        rows = rep.rows()
        emit("report", "report", plotting.report(rows), rows)
    return written


BODIES = {
    "generate": _generate, "scramble": _scramble, "organize": _organize, "coords": _coords,
    "learn": _learn, "integrate": _integrate, "eval": _eval, "plot": _plot,
}


def run_stage(name, cfg, out, **opts):
    """Run one stage; returns the manifest dict.

    Raises MissingInput before doing any work when an input artifact is
    absent, NumericalFailure for solver/training breakdowns.  Nothing is
    written to ``out`` unless the stage succeeds.
    """
    if name not in BODIES:
        raise ValueError(f"unknown stage {name!r}")
    out = Path(out)
    needed = INPUTS[name]
    missing = [n for n in needed if not (out / n).exists()]
    if missing:
        raise MissingInput(f"stage {name}: missing input(s) {', '.join(str(out / m) for m in missing)}")
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / f".{name}.partial"
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir()
    t0 = time.perf_counter()
    try:
        try:
            names = BODIES[name](cfg, out, tmp, opts)
        except NUMERICAL as e:
            raise NumericalFailure(f"stage {name}: {e}") from e
        files = [f for n in names for f in _sidecar_files(n)]
        for f in files:
            dest = out / f
            dest.parent.mkdir(parents=True, exist_ok=True)
            (tmp / f).replace(dest)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
    manifest = {
        "stage": name,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "inputs": {f: sha256(out / f) for n in needed for f in _sidecar_files(n) if (out / f).exists()},
        "outputs": {f: sha256(out / f) for f in files},
    }
    (out / f"manifest_{name}.json").write_text(_dump(manifest))
    _record_time(out, name, time.perf_counter() - t0)
    return manifest


def _record_time(out, name, seconds):
    p = out / "timings.json"
    doc = json.loads(p.read_text()) if p.exists() else {}
    doc[name] = round(seconds, 3)
    p.write_text(_dump(doc))


def run_all(cfg, out, **opts):
    return [run_stage(s, cfg, out, **opts) for s in STAGES]
