"""Command-line interface.

Subcommands: gen-trajectory, gen-dataset, train, reconstruct, evaluate and
export-weights. Values resolve as built-in default < config file < flag.
The config file is TOML with top-level ``seed``/``threads``/``out`` and one
table per subcommand, e.g. ``[train]`` with ``epochs = 50``.

Exit codes: 0 success, 2 usage or validation error, 3 data-consistency
error (hash mismatch, malformed file), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import AirConfig, AirDiverged, air_reconstruct, timed
from .geometry import (
    ConeBeamGeometry,
    Trajectory,
    clinical_geometry,
    desk_geometry,
    make_trajectory,
    small_geometry,
)
from .io import DataFormatError, array_hash, load_weights, read_array, save_weights, write_array
from .metrics import aggregate, evaluate, format_table
from .operators import desk_smoothing
from .phantoms import PhantomConfig, build_dataset, load_dataset
from .pipeline import PipelineConfig, RedundancyWeights, analytic_circular_weights, reconstruct
from .training import TrainConfig, TrainingDiverged, TrainState, train

log = logging.getLogger("svfbp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

GEOMETRY_PRESETS = {"desk": desk_geometry, "small": small_geometry, "clinical": clinical_geometry}


class UsageError(Exception):
    pass


# --- small helpers ------------------------------------------------------------


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        import tomllib  # Python >= 3.11
    except ModuleNotFoundError:
        import tomli as tomllib
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} not found")
    try:
        return tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config file {p}: {exc}") from exc


def _resolve(args, section: dict, defaults: dict) -> dict:
    """Flags (non-None) override the config section, which overrides defaults."""
    out = dict(defaults)
    for key, val in section.items():
        key = key.replace("-", "_")
        if key not in defaults:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = val
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _require(params: dict, *keys):
    missing = [k for k in keys if params.get(k) is None]
    if missing:
        raise UsageError("missing required parameter(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Path, tuple)):
        return str(o) if isinstance(o, Path) else list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _geometry(params: dict) -> ConeBeamGeometry:
    preset = params.get("geometry") or "desk"
    if preset not in GEOMETRY_PRESETS:
        raise UsageError(f"unknown geometry preset {preset!r}; choose from {sorted(GEOMETRY_PRESETS)}")
    geom = GEOMETRY_PRESETS[preset]()
    if params.get("num_projections") is not None:
        geom = geom.replace(num_projections=int(params["num_projections"]))
    return geom


def _pipeline_config(geom, params) -> PipelineConfig:
    kw = {}
    if params.get("smooth_target") is not None:
        kw["smooth_target"] = params["smooth_target"]
    return PipelineConfig.for_geometry(geom, num_angles=params.get("num_angles"),
                                       s_oversample=int(params.get("s_oversample") or 1), **kw)


def _save_png(path: Path, img: np.ndarray, window=None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    img = np.asarray(img, dtype=np.float64)
    if window is None:
        lo, hi = float(img.min()), float(img.max())
    else:
        lo, hi = window
    scaled = np.clip((img - lo) / (hi - lo), 0, 1) if hi > lo else np.zeros_like(img)
    plt.imsave(path, scaled, cmap="gray", vmin=0.0, vmax=1.0, origin="upper", metadata={"Software": None})


def central_slices(vol: np.ndarray) -> dict:
    nz, ny, nx = vol.shape
    return {"axial": vol[nz // 2], "coronal": vol[:, ny // 2, :], "sagittal": vol[:, :, nx // 2]}


# --- commands -----------------------------------------------------------------


TRAJ_DEFAULTS = {
    "kind": None, "geometry": "desk", "num_projections": None, "phi_max": None, "freq": None,
    "arc_fraction": 0.125, "arc_span": 40.0, "tilt_range": 10.0, "output": "trajectory.json",
}


def cmd_gen_trajectory(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("gen-trajectory", {}), TRAJ_DEFAULTS)
    _require(p, "kind")
    kind = p["kind"]
    params = {}
    if kind == "sinusoidal":
        _require(p, "phi_max", "freq")
        params = {"phi_max": math.radians(p["phi_max"]), "freq": int(p["freq"])}
    elif kind == "circle-plus-arc":
        params = {"arc_fraction": float(p["arc_fraction"]), "arc_span": math.radians(p["arc_span"])}
    elif kind == "random-nn":
        params = {"tilt_range": math.radians(p["tilt_range"]), "seed": int(args.seed)}
    elif kind != "circular":
        raise UsageError(f"unknown trajectory kind {kind!r}")
    traj = make_trajectory(kind, _geometry(p), **params)
    path = out / p["output"]
    path.parent.mkdir(parents=True, exist_ok=True)
    traj.save(path)
    tilt = np.degrees(traj.tilt)
    print(f"{kind}: {len(traj)} sources, {'closed' if traj.closed else 'open'}, "
          f"tilt {tilt.min():.3f}..{tilt.max():.3f} deg, hash {traj.content_hash()[:12]}")
    _write_json(out / "run-gen-trajectory.json", {
        "command": "gen-trajectory", "version": __version__, "params": p, "seed": args.seed,
        "trajectory_hash": traj.content_hash()})
    return EXIT_OK


DATASET_DEFAULTS = {
    "trajectory": None, "n": None, "smooth_sigma": 1.5, "oversample": 1,
    "train_fraction": 0.8, "val_fraction": 0.2,
}


def cmd_gen_dataset(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("gen-dataset", {}), DATASET_DEFAULTS)
    _require(p, "trajectory", "n")
    traj = Trajectory.load(p["trajectory"])
    pcfg = PhantomConfig.for_geometry(traj.geom, seed=int(args.seed), smooth_sigma=float(p["smooth_sigma"]),
                                      oversample=int(p["oversample"]))
    ds = build_dataset(int(p["n"]), pcfg, traj, out_dir=out,
                       split=(float(p["train_fraction"]), float(p["val_fraction"])),
                       progress=lambda i, n: print(f"sample {i + 1}/{n}", flush=True))
    print("split: " + ", ".join(f"{k} {len(v)}" for k, v in ds.split.items()))
    _write_json(out / "run-gen-dataset.json", {
        "command": "gen-dataset", "version": __version__, "params": p, "seed": args.seed,
        "trajectory_hash": ds.trajectory_hash,
        "samples": ds.manifest["samples"]})
    return EXIT_OK


TRAIN_DEFAULTS = {
    "dataset": None, "epochs": 100, "lr_min": 0.1, "lr_max": 1.0, "schedule": "onecycle", "gamma": 0.1,
    "weight_decay": 0.01, "init_low": -1.0, "init_high": 0.0, "share_across_views": False,
    "nonneg_in_training": True, "num_angles": None, "s_oversample": None, "smooth_target": None,
    "checkpoint_every": 10, "patience": None, "resume": False,
}


def _save_checkpoint(ckpt_dir: Path, epoch: int, state: TrainState, grid) -> None:
    d = ckpt_dir / f"epoch_{epoch:05d}"
    d.mkdir(parents=True, exist_ok=True)
    # f64 so that resuming is bitwise-equal to an uninterrupted run
    write_array(d / "weights.f64", state.weights, dtype="f64le", grid=grid.to_dict())
    write_array(d / "first_moment.f64", state.first_moment, dtype="f64le")
    write_array(d / "second_moment.f64", state.second_moment, dtype="f64le")
    _write_json(d / "state.json", {"epoch": epoch, "step": state.step, "history": state.history})


def _latest_checkpoint(ckpt_dir: Path):
    dirs = sorted(ckpt_dir.glob("epoch_*")) if ckpt_dir.exists() else []
    dirs = [d for d in dirs if (d / "state.json").exists()]
    if not dirs:
        return None, 0
    d = dirs[-1]
    meta = json.loads((d / "state.json").read_text())
    state = TrainState(read_array(d / "weights.f64")[0], read_array(d / "first_moment.f64")[0],
                       read_array(d / "second_moment.f64")[0], meta["step"], meta["history"])
    return state, meta["epoch"] + 1


def _write_loss_curves(out: Path, history: list) -> None:
    keys = ["epoch", "lr", "train_loss", "val_loss"]
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for rec in history:
            w.writerow([repr(rec.get(k, "")) if k != "epoch" else rec[k] for k in keys])
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ep = [r["epoch"] for r in history]
    ax.plot(ep, [r["train_loss"] for r in history], label="train")
    if any("val_loss" in r for r in history):
        ax.plot(ep, [r.get("val_loss", np.nan) for r in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "loss.png", metadata={"Software": None})
    plt.close(fig)


def cmd_train(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("train", {}), TRAIN_DEFAULTS)
    _require(p, "dataset")
    ds, traj = load_dataset(p["dataset"])
    pcfg = _pipeline_config(traj.geom, p)
    tcfg = TrainConfig(
        gamma=float(p["gamma"]), epochs=int(p["epochs"]), lr_min=float(p["lr_min"]), lr_max=float(p["lr_max"]),
        schedule=p["schedule"], weight_decay=float(p["weight_decay"]),
        init_range=(float(p["init_low"]), float(p["init_high"])), seed=int(args.seed),
        nonneg_in_training=bool(p["nonneg_in_training"]), share_across_views=bool(p["share_across_views"]),
        patience=None if p["patience"] is None else int(p["patience"]),
    )
    train_set = ds.subset("train")
    if not len(train_set[0]):
        raise UsageError("dataset has no training samples")
    val_set = ds.subset("val")
    ckpt_dir = out / "checkpoints"
    state, start = (None, 0)
    if p["resume"]:
        state, start = _latest_checkpoint(ckpt_dir)
        if state is None:
            raise UsageError(f"--resume given but no checkpoint found in {ckpt_dir}")
        print(f"resuming at epoch {start}")
    every = int(p["checkpoint_every"])

    def on_epoch(epoch, st):
        if every > 0 and ((epoch + 1) % every == 0 or epoch + 1 == tcfg.epochs):
            _save_checkpoint(ckpt_dir, epoch, st, pcfg.grid)

    state = train(train_set, traj, tcfg, pcfg, val_set=val_set, state=state, start_epoch=start, callback=on_epoch)
    weights = RedundancyWeights(state.full_weights(len(traj)), pcfg.grid, traj.content_hash(),
                                meta={"pipeline": pcfg.to_dict(), "train": tcfg.to_dict()})
    side = save_weights(out / "weights.f32", weights)
    _write_loss_curves(out, state.history)
    last = state.history[-1]
    print(f"trained {len(state.history)} epochs; final train loss {last['train_loss']:.6g}"
          + (f", val loss {last['val_loss']:.6g}" if "val_loss" in last else ""))
    _write_json(out / "run-train.json", {
        "command": "train", "version": __version__, "params": p, "seed": args.seed,
        "train_config": tcfg.to_dict(), "pipeline": pcfg.to_dict(),
        "assumptions": {"gamma": tcfg.gamma, "ssim_window": tcfg.ssim_window,
                        "normalization": "min-max per volume"},
        "dataset_manifest_samples": ds.manifest.get("samples"),
        "trajectory_hash": traj.content_hash(), "weights_sha256": side["sha256"],
        "history": state.history})
    return EXIT_OK


RECON_DEFAULTS = {
    "projections": None, "trajectory": None, "weights": None, "analytic_circular": False, "method": "fbp",
    "iterations": 300, "num_angles": None, "s_oversample": None, "smooth_target": None, "window": None,
    "output": "recon.f32",
}


def cmd_reconstruct(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("reconstruct", {}), RECON_DEFAULTS)
    _require(p, "projections", "trajectory")
    traj = Trajectory.load(p["trajectory"])
    thash = traj.content_hash()
    projs, side = read_array(p["projections"])
    proj_hash = array_hash(projs)
    if "trajectory_hash" in side and side["trajectory_hash"] != thash:
        raise DataFormatError(p["projections"], f"projection trajectory hash {side['trajectory_hash']} "
                              f"!= trajectory file hash {thash}", "trajectory_hash")
    projs = projs.astype(np.float64)
    method = p["method"]
    if method == "fbp":
        if bool(p["analytic_circular"]) == (p["weights"] is not None):
            raise UsageError("give exactly one of --weights or --analytic-circular")
        if p["weights"] is not None:
            w = load_weights(p["weights"])
            if w.trajectory_hash != thash:
                raise DataFormatError(p["weights"], f"weights trajectory hash {w.trajectory_hash} "
                                      f"!= trajectory file hash {thash}", "trajectory_hash")
            if "pipeline" in w.meta:
                pcfg = PipelineConfig.from_dict(w.meta["pipeline"])
            else:
                pcfg = PipelineConfig(traj.geom, w.grid, desk_smoothing(w.grid.num_s))
        else:
            pcfg = _pipeline_config(traj.geom, p)
            if not traj.is_circular():
                raise UsageError("--analytic-circular requires a circular trajectory")
            w = analytic_circular_weights(traj, pcfg)
        vol, secs = timed(reconstruct, projs, w, traj, pcfg)
        extra = {"pipeline": pcfg.to_dict()}
    elif method == "air":
        acfg = AirConfig(iterations=int(p["iterations"]))
        vol, secs = timed(air_reconstruct, projs, traj, traj.geom, acfg)
        extra = {"air": acfg.to_dict()}
    else:
        raise UsageError(f"unknown method {method!r}")
    out.mkdir(parents=True, exist_ok=True)
    path = out / p["output"]
    side_out = write_array(path, vol, spacing=list(traj.geom.volume_spacing),
                           support_radius=traj.geom.fov_radius, method=method, trajectory_hash=thash)
    window = tuple(p["window"]) if p["window"] is not None else None
    stem = path.name.split(".")[0]
    for name, img in central_slices(vol).items():
        _save_png(out / f"{stem}_{name}.png", img, window)
    print(f"{method} reconstruction {vol.shape} in {secs:.3f} s -> {path}")
    _write_json(out / f"run-reconstruct-{stem}.json", {
        "command": "reconstruct", "version": __version__, "params": p, "seed": args.seed,
        "trajectory_hash": thash, "projections_sha256": proj_hash,
        "volume_sha256": side_out["sha256"], "time_s": secs, **extra})
    return EXIT_OK


EVAL_DEFAULTS = {"gt": None, "recon": None, "time": False, "win": 7, "output": "report"}


def _parse_recon_groups(groups, n_gt):
    methods = {}
    for g in groups:
        name, sep, paths = g.partition("=")
        if not sep:
            name, paths = Path(g).stem, g
        files = [s for s in paths.split(",") if s]
        if len(files) != n_gt:
            raise UsageError(f"method {name!r}: {len(files)} reconstructions for {n_gt} ground-truth volumes")
        methods[name] = files
    return methods


def _run_time(recon_path: Path):
    """Wall time recorded by the reconstruct command for this volume, if any."""
    stem = recon_path.name.split(".")[0]
    run = recon_path.parent / f"run-reconstruct-{stem}.json"
    if run.exists():
        return json.loads(run.read_text()).get("time_s")
    return None


def cmd_evaluate(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("evaluate", {}), EVAL_DEFAULTS)
    _require(p, "gt", "recon")
    gts = []
    for g in p["gt"]:
        if not Path(g).exists():
            raise UsageError(f"ground-truth file {g} not found")
        gts.append(read_array(g)[0].astype(np.float64))
    methods = _parse_recon_groups(p["recon"], len(gts))
    rows, full = {}, {}
    for name, files in methods.items():
        reports = []
        for f, gt in zip(files, gts):
            if not Path(f).exists():
                raise UsageError(f"reconstruction file {f} not found")
            vol = read_array(f)[0].astype(np.float64)
            if vol.shape != gt.shape:
                raise UsageError(f"{f}: shape {vol.shape} does not match ground truth {gt.shape}")
            rep = evaluate(vol, gt, win=int(p["win"]))
            if p["time"]:
                rep.time_s = _run_time(Path(f))
            reports.append(rep)
        rows[name] = aggregate(reports)
        full[name] = {"aggregate": rows[name], "samples": [r.to_dict() for r in reports], "files": files}
    table = format_table(rows)
    print(table)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{p['output']}.txt").write_text(table + "\n")
    _write_json(out / f"{p['output']}.json", {
        "command": "evaluate", "version": __version__, "params": p,
        "gt_sha256": [array_hash(g.astype("<f4")) for g in gts], "methods": full})
    return EXIT_OK


EXPORT_DEFAULTS = {"weights": None, "trajectory": None, "analytic_circular": False, "lambdas": None,
                   "theta_deg": None, "num_angles": None, "s_oversample": None}


def _lambda_for_theta(traj: Trajectory, theta_deg) -> int:
    az = np.degrees(traj.azimuth)
    return int(np.argmin(np.abs((az - theta_deg + 180) % 360 - 180)))


def cmd_export_weights(args, cfg, out: Path) -> int:
    p = _resolve(args, cfg.get("export-weights", {}), EXPORT_DEFAULTS)
    if p["analytic_circular"]:
        _require(p, "trajectory")
        traj = Trajectory.load(p["trajectory"])
        if not traj.is_circular():
            raise UsageError("--analytic-circular requires a circular trajectory")
        w = analytic_circular_weights(traj, _pipeline_config(traj.geom, p))
    else:
        _require(p, "weights")
        w = load_weights(p["weights"])
        traj = Trajectory.load(p["trajectory"]) if p["trajectory"] else None
    n = w.num_projections
    lambdas = list(p["lambdas"] or [])
    if p["theta_deg"]:
        if traj is None:
            raise UsageError("--theta-deg needs --trajectory")
        lambdas += [_lambda_for_theta(traj, t) for t in p["theta_deg"]]
    lambdas = list(dict.fromkeys(lambdas))
    if not lambdas:
        raise UsageError("no projection indices requested (use --lambdas or --theta-deg)")
    bad = [lam for lam in lambdas if not 0 <= lam < n]
    if bad:
        raise UsageError(f"projection indices {bad} outside [0, {n})")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    sel = w.data[lambdas]
    vmin, vmax = float(sel.min()), float(sel.max())
    if vmin == vmax:
        vmin, vmax = vmin - 0.5, vmax + 0.5
    g = w.grid
    extent = [-g.s_max, g.s_max, math.degrees(g.angles[-1]), math.degrees(g.angles[0])]
    out.mkdir(parents=True, exist_ok=True)
    for lam in lambdas:
        fig, ax = plt.subplots(figsize=(5, 4))
        im = ax.imshow(w.data[lam], aspect="auto", extent=extent, vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_xlabel("s (mm)")
        ax.set_ylabel("mu (deg)")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(out / f"weights_lambda_{lam:04d}.png", metadata={"Software": None})
        plt.close(fig)
    print(f"wrote {len(lambdas)} heatmaps to {out}")
    _write_json(out / "run-export-weights.json", {
        "command": "export-weights", "version": __version__, "params": p, "lambdas": lambdas,
        "color_range": [vmin, vmax]})
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svfbp", description="Learned shift-variant FBP for cone-beam CT.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="TOML config file; flags override its values")
    ap.add_argument("--seed", type=int, default=None, help="random seed (default 0)")
    ap.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    ap.add_argument("--out", default=None, help="output directory (default .)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-trajectory", help="write a source trajectory")
    s.add_argument("--kind", choices=["circular", "sinusoidal", "circle-plus-arc", "random-nn"])
    s.add_argument("--geometry", choices=sorted(GEOMETRY_PRESETS))
    s.add_argument("--num-projections", "--n", dest="num_projections", type=int)
    s.add_argument("--phi-max", type=float, help="maximum tilt in degrees (sinusoidal)")
    s.add_argument("--freq", type=int, help="sinusoid frequency (sinusoidal)")
    s.add_argument("--arc-fraction", type=float, help="share of views on the arc (circle-plus-arc)")
    s.add_argument("--arc-span", type=float, help="arc span in degrees (circle-plus-arc)")
    s.add_argument("--tilt-range", type=float, help="tilt half-range in degrees (random-nn)")
    s.add_argument("--output", help="file name under --out (default trajectory.json)")
    s.set_defaults(func=cmd_gen_trajectory)

    s = sub.add_parser("gen-dataset", help="generate phantoms and projections")
    s.add_argument("--trajectory")
    s.add_argument("--n", type=int, help="number of samples")
    s.add_argument("--smooth-sigma", type=float)
    s.add_argument("--oversample", type=int, help="render and project on a finer grid by this factor")
    s.add_argument("--train-fraction", type=float)
    s.add_argument("--val-fraction", type=float)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("train", help="learn redundancy weights")
    s.add_argument("--dataset")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr-min", type=float)
    s.add_argument("--lr-max", type=float)
    s.add_argument("--schedule", choices=["onecycle", "constant"])
    s.add_argument("--gamma", type=float)
    s.add_argument("--weight-decay", type=float)
    s.add_argument("--init-low", type=float)
    s.add_argument("--init-high", type=float)
    s.add_argument("--share-across-views", action="store_true", default=None)
    s.add_argument("--no-nonneg-in-training", dest="nonneg_in_training", action="store_false", default=None)
    s.add_argument("--num-angles", type=int)
    s.add_argument("--s-oversample", type=int)
    s.add_argument("--smooth-target", choices=["weights", "data", "none"])
    s.add_argument("--checkpoint-every", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--resume", action="store_true", default=None)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="reconstruct a projection stack")
    s.add_argument("--projections")
    s.add_argument("--trajectory")
    s.add_argument("--weights")
    s.add_argument("--analytic-circular", action="store_true", default=None)
    s.add_argument("--method", choices=["fbp", "air"])
    s.add_argument("--iterations", type=int, help="AIR iterations (default 300)")
    s.add_argument("--num-angles", type=int)
    s.add_argument("--s-oversample", type=int)
    s.add_argument("--smooth-target", choices=["weights", "data", "none"])
    s.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    s.add_argument("--output", help="volume file name under --out (default recon.f32)")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", help="score reconstructions against ground truth")
    s.add_argument("--gt", nargs="+")
    s.add_argument("--recon", action="append",
                   help="NAME=file1,file2,... aligned with --gt; repeat once per method")
    s.add_argument("--time", action="store_true", default=None)
    s.add_argument("--win", type=int)
    s.add_argument("--output", help="report base name (default report)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export-weights", help="render weight heatmaps")
    s.add_argument("--weights")
    s.add_argument("--trajectory")
    s.add_argument("--analytic-circular", action="store_true", default=None)
    s.add_argument("--lambdas", type=int, nargs="+")
    s.add_argument("--theta-deg", type=float, nargs="+", help="pick the views nearest these azimuths")
    s.add_argument("--num-angles", type=int)
    s.add_argument("--s-oversample", type=int)
    s.set_defaults(func=cmd_export_weights)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        args.seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        threads = args.threads if args.threads is not None else cfg.get("threads")
        if threads is not None:
            import numba

            numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))
        out = Path(args.out if args.out is not None else cfg.get("out", "."))
        return args.func(args, cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, AirDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
