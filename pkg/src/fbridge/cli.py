"""Command-line entry point: coefficient inspection, bridge simulation,
training, sampling, evaluation and SVG plot emission.

One TOML file configures a run; command-line flags override individual
fields. Every output embeds the resolved config hash, the seed and the
package version so identical runs produce byte-identical files. Exit codes:
0 ok, 2 config error, 3 write failure, 4 training divergence, 5
config/checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .bridge import (sample_pinned_path, simulate_pinned_em,
                     write_trajectories_csv)
from .datasets import (CROSS_SOURCE_MODES, CROSS_TARGET_MODES, ToySpec,
                       make_dataset, mode_accuracy, read_pairs_csv,
                       wasserstein1)
from .errors import DivergenceDetected, FBridgeError, InvalidConfig
from .mafbm import BridgeKernel, ProcessConfig, mc_l2_error
from .nn import (MlpModel, load_model, model_from_dict, model_to_dict,
                 save_model)
from .paired import (PairedTrainConfig, sample_abm, sample_paired, train_abm,
                     train_paired)
from .rng import RngStream
from .unpaired import (MarginalPools, UnpairedConfig, UnpairedModels,
                       coupling_correlation, finetune_alpha_imf, pretrain,
                       simulate_endpoints)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_WRITE = 3
EXIT_DIVERGED = 4
EXIT_MISMATCH = 5

DEFAULT_CONFIG = {
    "process": {"hurst": 0.5, "n_ou": 5, "grid_ratio": 2.0, "epsilon": 1.0},
    "model": {"hidden": [128, 128, 128]},
    "train": {"method": "paired", "steps": 4000, "batch_size": 128,
              "lr": 1e-3, "delta": 1e-3, "ema_decay": 0.999, "trials": 1,
              "alpha": 0.5, "pretrain_steps": 3000, "finetune_steps": 1000,
              "lam": 0.0},
    "dataset": {"name": "moons", "n": 5000, "noise": None, "seed": 1000},
    "eval": {"n_samples": 10000, "em_steps": 100, "sampling_trials": 1},
    "seed": 0,
}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _deep_update(base: dict, extra: dict) -> dict:
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))
    if path:
        with open(path, "rb") as fh:
            _deep_update(cfg, tomllib.load(fh))
    _deep_update(cfg, overrides)
    return cfg


def _process_config(cfg: dict) -> ProcessConfig:
    p = cfg["process"]
    return ProcessConfig(hurst=float(p["hurst"]), n_ou=int(p["n_ou"]),
                         grid_ratio=float(p["grid_ratio"]),
                         epsilon=float(p["epsilon"]))


def _parse_overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    mapping = {
        "H": ("process", "hurst"), "K": ("process", "n_ou"),
        "r": ("process", "grid_ratio"), "eps": ("process", "epsilon"),
        "steps": ("train", "steps"), "batch_size": ("train", "batch_size"),
        "lr": ("train", "lr"), "trials": ("train", "trials"),
        "alpha": ("train", "alpha"), "lam": ("train", "lam"),
        "pretrain_steps": ("train", "pretrain_steps"),
        "finetune_steps": ("train", "finetune_steps"),
        "dataset": ("dataset", "name"), "n": ("dataset", "n"),
        "noise": ("dataset", "noise"), "dataset_seed": ("dataset", "seed"),
        "n_samples": ("eval", "n_samples"), "em_steps": ("eval", "em_steps"),
        "sampling_trials": ("eval", "sampling_trials"),
    }
    for attr, (sec, key) in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            o.setdefault(sec, {})[key] = val
    if getattr(args, "seed", None) is not None:
        o["seed"] = args.seed
    if getattr(args, "hidden", None) is not None:
        o.setdefault("model", {})["hidden"] = [int(h) for h in
                                               args.hidden.split(",")]
    return o


def _write_json(path: str, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1, default=float)
            fh.write("\n")
    except OSError as exc:
        raise _WriteFailure(str(exc)) from exc


class _WriteFailure(Exception):
    pass


# -- SVG -----------------------------------------------------------------------

_SVG_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
               "#8c564b", "#e377c2", "#17becf"]


def write_svg(path: str, polylines: list[np.ndarray], stamp: str,
              size: int = 640, margin: int = 40) -> None:
    """Minimal SVG 1.1 plot: axes plus one polyline per trajectory."""
    allpts = np.concatenate(polylines, axis=0)
    lo = allpts.min(axis=0)
    hi = allpts.max(axis=0)
    span = np.maximum(hi - lo, 1e-12)

    def to_px(p):
        u = (p - lo) / span
        x = margin + u[:, 0] * (size - 2 * margin)
        y = size - margin - u[:, 1] * (size - 2 * margin)
        return x, y

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{size}" height="{size}">',
             f"<!-- {stamp} -->",
             f'<rect width="{size}" height="{size}" fill="white"/>',
             f'<line x1="{margin}" y1="{size - margin}" x2="{size - margin}" '
             f'y2="{size - margin}" stroke="black"/>',
             f'<line x1="{margin}" y1="{margin}" x2="{margin}" '
             f'y2="{size - margin}" stroke="black"/>']
    for i, poly in enumerate(polylines):
        x, y = to_px(poly)
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        color = _SVG_COLORS[i % len(_SVG_COLORS)]
        parts.append(f'<polyline points="{pts}" fill="none" '
                     f'stroke="{color}" stroke-width="1"/>')
    parts.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(parts) + "\n")
    except OSError as exc:
        raise _WriteFailure(str(exc)) from exc


# -- commands --------------------------------------------------------------------


def cmd_coeffs(cfg: dict, args: argparse.Namespace) -> int:
    proc = _process_config(cfg)
    kernel = BridgeKernel.build(proc)
    gamma = kernel.gamma
    A_res = _coeff_residual(kernel)
    seed = int(cfg["seed"])
    mc = mc_l2_error(proc, kernel.omega, RngStream(seed, stream_id=900),
                     n_paths=int(args.mc_paths), n_fine=500, n_eval=100)
    payload = {
        "H": proc.hurst, "K": proc.n_ou, "r": proc.grid_ratio,
        "epsilon": proc.epsilon,
        "gamma": [float(g) for g in gamma],
        "omega": [float(w) for w in kernel.omega],
        "residual": A_res,
        "mc_l2_error": mc,
        "config_hash": config_hash(cfg), "seed": seed, "version": __version__,
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=1))
    return EXIT_OK


def _coeff_residual(kernel: BridgeKernel) -> float:
    from .mafbm import cross_vector, gram_matrix
    A = gram_matrix(kernel.gamma, kernel.config.horizon)
    b = cross_vector(kernel.gamma, kernel.config.hurst, kernel.config.horizon)
    return float(np.abs(A @ kernel.omega - b).max())


def cmd_simulate(cfg: dict, args: argparse.Namespace) -> int:
    proc = _process_config(cfg)
    kernel = BridgeKernel.build(proc)
    x0 = np.array([float(v) for v in args.x0.split(",")])
    x1 = np.array([float(v) for v in args.x1.split(",")])
    if x0.shape != x1.shape:
        raise InvalidConfig("x0/x1", "endpoint dimensions differ")
    seed = int(cfg["seed"])
    stamp = (f"fbridge config_hash={config_hash(cfg)} seed={seed} "
             f"version={__version__}")
    meta = {"config_hash": config_hash(cfg), "seed": seed}
    trajs = []
    for i in range(args.n_traj):
        rng = RngStream(seed, stream_id=1 + i)
        if args.exact_marginals:
            times = np.array([float(v) for v in args.times.split(",")])
            trajs.append(sample_pinned_path(kernel, x0, x1, times, rng, meta))
        else:
            trajs.append(simulate_pinned_em(kernel, x0, x1, args.steps, rng,
                                            meta=meta))
    write_trajectories_csv(args.out, trajs, comment=stamp)
    if args.svg:
        if x0.shape[0] < 2:
            polys = [np.column_stack([t.times, t.xs[:, 0]]) for t in trajs]
        else:
            polys = [t.xs[:, :2] for t in trajs]
        write_svg(args.svg, polys, stamp)
    return EXIT_OK


def _toy_spec(cfg: dict, seed_shift: int = 0) -> ToySpec:
    ds = cfg["dataset"]
    return ToySpec(name=ds["name"], n=int(ds["n"]),
                   noise=None if ds.get("noise") is None else float(ds["noise"]),
                   seed=int(ds["seed"]) + seed_shift)


def _load_pairs(cfg: dict, seed_shift: int = 0):
    name = cfg["dataset"]["name"]
    if name.endswith(".csv"):
        return read_pairs_csv(name)
    return make_dataset(_toy_spec(cfg, seed_shift))


def evaluate_endpoints(cfg: dict, generated: np.ndarray, sources: np.ndarray
                       ) -> dict:
    """WSD against a fresh target sample; mode accuracy on the cross toy."""
    name = cfg["dataset"]["name"]
    spec = _toy_spec(cfg, seed_shift=7919)
    ref = make_dataset(spec) if not name.endswith(".csv") else read_pairs_csv(name)
    n = min(len(generated), len(ref.x1))
    out = {"wsd": wasserstein1(generated[:n], ref.x1[:n])}
    if name == "gaussian_cross":
        out["mode_accuracy"] = mode_accuracy(
            generated, sources, CROSS_SOURCE_MODES, CROSS_TARGET_MODES,
            np.array([0, 1]))
    return out


def _paired_train_config(cfg: dict, seed: int) -> PairedTrainConfig:
    return PairedTrainConfig(
        process=_process_config(cfg), hidden=tuple(cfg["model"]["hidden"]),
        batch_size=int(cfg["train"]["batch_size"]),
        steps=int(cfg["train"]["steps"]), lr=float(cfg["train"]["lr"]),
        delta=float(cfg["train"]["delta"]),
        ema_decay=float(cfg["train"]["ema_decay"]), seed=seed)


def _run_paired_trial(payload: dict) -> dict:
    """One train+eval trial; top level so process pools can pickle it."""
    cfg = payload["cfg"]
    seed = payload["seed"]
    method = cfg["train"]["method"]
    proc = _process_config(cfg)
    tcfg = _paired_train_config(cfg, seed)
    data = _load_pairs(cfg)
    trainer = train_paired if method == "paired" else train_abm
    result = trainer(data, tcfg, resume=payload.get("resume"))
    ev = cfg["eval"]
    rng_eval = RngStream(seed, stream_id=500)
    spec_src = _toy_spec(cfg, seed_shift=104729 + seed)
    src = (make_dataset(spec_src).x0
           if not cfg["dataset"]["name"].endswith(".csv")
           else _load_pairs(cfg).x0)
    src = src[:int(ev["n_samples"])]
    if method == "paired":
        endpoints = sample_paired(result.kernel, result.ema, src,
                                  int(ev["em_steps"]), rng_eval)
    else:
        endpoints = sample_abm(proc.epsilon, result.ema, src,
                               int(ev["em_steps"]), rng_eval)
    metrics = evaluate_endpoints(cfg, endpoints, src)
    metrics.update({"seed": seed, "final_loss": result.log[-1]["loss"]})
    return {"metrics": metrics, "result": result if payload.get("keep") else None}


def cmd_train(cfg: dict, args: argparse.Namespace) -> int:
    method = cfg["train"]["method"]
    seed = int(cfg["seed"])
    chash = config_hash(cfg)
    os.makedirs(args.out_dir, exist_ok=True)

    if method in ("paired", "abm"):
        trials = int(cfg["train"]["trials"])
        payloads = [{"cfg": cfg, "seed": seed + i, "keep": trials == 1}
                    for i in range(trials)]
        if args.parallel_trials and trials > 1:
            workers = int(os.environ.get("FBRIDGE_THREADS", os.cpu_count() or 1))
            with concurrent.futures.ProcessPoolExecutor(
                    max_workers=min(workers, trials)) as pool:
                outs = list(pool.map(_run_paired_trial, payloads))
        else:
            outs = []
            for p in payloads:
                if trials == 1 and (args.resume or args.checkpoint_every):
                    outs.append(_run_paired_trial_checkpointed(p, args, chash))
                else:
                    outs.append(_run_paired_trial(p))
        per_trial = [o["metrics"] for o in outs]
        wsds = [m["wsd"] for m in per_trial]
        metrics = {
            "method": method, "trials": per_trial,
            "wsd_mean": float(np.mean(wsds)), "wsd_std": float(np.std(wsds)),
            "config_hash": chash, "seed": seed, "version": __version__,
        }
        if trials == 1 and outs[0]["result"] is not None:
            ck = os.path.join(args.out_dir, f"{method}_model.json")
            save_model(outs[0]["result"].ema, ck, extra={
                "method": method, "config": cfg, "config_hash": chash})
        _write_json(os.path.join(args.out_dir, f"{method}_metrics.json"), metrics)
        return EXIT_OK

    if method in ("unpaired-pretrain", "unpaired-finetune"):
        proc = _process_config(cfg)
        ucfg = UnpairedConfig(
            process=proc, alpha=float(cfg["train"]["alpha"]),
            pretrain_steps=int(cfg["train"]["pretrain_steps"]),
            finetune_steps=int(cfg["train"]["finetune_steps"]),
            lam=float(cfg["train"]["lam"]),
            ema_decay=float(cfg["train"]["ema_decay"]), seed=seed,
            batch_size=int(cfg["train"]["batch_size"]),
            lr=float(cfg["train"]["lr"]), hidden=tuple(cfg["model"]["hidden"]),
            delta=float(cfg["train"]["delta"]),
            em_steps=int(cfg["eval"]["em_steps"]))
        pools = _load_pools(cfg)
        if method == "unpaired-pretrain":
            models = pretrain(pools, ucfg)
        else:
            if not args.checkpoint:
                raise InvalidConfig("checkpoint",
                                    "finetune needs --checkpoint from pretrain")
            models = _load_unpaired(args.checkpoint, chash)
            models = finetune_alpha_imf(models, pools, ucfg)
        ck = os.path.join(args.out_dir, "unpaired_models.json")
        _save_unpaired(models, ck, cfg, chash)
        metrics = _unpaired_metrics(cfg, models, pools, ucfg)
        metrics.update({"phase": method, "config_hash": chash, "seed": seed,
                        "version": __version__})
        _write_json(os.path.join(args.out_dir, f"{method}_metrics.json"), metrics)
        return EXIT_OK

    raise InvalidConfig("train.method", f"unknown method '{method}'")


def _run_paired_trial_checkpointed(payload: dict, args, chash: str) -> dict:
    """Single-trial path with optional bit-exact stop/resume."""
    cfg = payload["cfg"]
    method = cfg["train"]["method"]
    trainer = train_paired if method == "paired" else train_abm
    resume = None
    if args.resume:
        stored = load_train_state(args.resume)
        if stored["config_hash"] != chash:
            raise _Mismatch(f"resume state hash {stored['config_hash']} != "
                            f"config hash {chash}")
        resume = stored["state"]
    elif args.checkpoint_every:
        tcfg = _paired_train_config(cfg, payload["seed"])
        partial = PairedTrainConfig(
            **{**{f: getattr(tcfg, f) for f in tcfg.__dataclass_fields__},
               "steps": min(int(args.checkpoint_every), tcfg.steps)})
        mid = trainer(_load_pairs(cfg), partial)
        save_train_state(os.path.join(args.out_dir, "train_state.json"),
                         mid.state, chash)
        resume = mid.state
    return _run_paired_trial({**payload, "resume": resume})


class _Mismatch(Exception):
    pass


def save_train_state(path: str, state: dict, chash: str) -> None:
    payload = {
        "config_hash": chash,
        "step": state["step"],
        "rng_state": state["rng_state"],
        "shadow": [s.tolist() for s in state["shadow"]],
        "model": model_to_dict(state["model"]),
    }
    _write_json(path, payload)


def load_train_state(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    return {"config_hash": payload["config_hash"],
            "state": {"model": model_from_dict(payload["model"]),
                      "shadow": [np.array(s) for s in payload["shadow"]],
                      "rng_state": payload["rng_state"],
                      "step": payload["step"]}}


def _load_pools(cfg: dict) -> MarginalPools:
    data = _load_pairs(cfg)
    if isinstance(data, MarginalPools):
        return data
    return MarginalPools(data.x0, data.x1)


def _save_unpaired(models: UnpairedModels, path: str, cfg: dict,
                   chash: str) -> None:
    blobs = {"forward": model_to_dict(models.forward_ema),
             "backward": model_to_dict(models.backward_ema),
             "forward_raw": model_to_dict(models.forward_model),
             "backward_raw": model_to_dict(models.backward_model)}
    _write_json(path, {"models": blobs, "config": cfg, "config_hash": chash,
                       "log": models.log, "version": __version__})


def _load_unpaired(path: str, chash: str | None = None) -> UnpairedModels:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    blobs = payload["models"]
    return UnpairedModels(model_from_dict(blobs["forward_raw"]),
                          model_from_dict(blobs["backward_raw"]),
                          model_from_dict(blobs["forward"]),
                          model_from_dict(blobs["backward"]),
                          payload.get("log", []))


def _unpaired_metrics(cfg: dict, models: UnpairedModels, pools: MarginalPools,
                      ucfg: UnpairedConfig) -> dict:
    kernel = BridgeKernel.build(ucfg.process)
    rng = RngStream(ucfg.seed, stream_id=700)
    n = min(int(cfg["eval"]["n_samples"]), len(pools.pool0), len(pools.pool1))
    x0 = pools.pool0[:n]
    x1_hat = simulate_endpoints(kernel, models.forward_ema, x0,
                                ucfg.em_steps, rng)
    x1 = pools.pool1[:n]
    x0_hat = simulate_endpoints(kernel, models.backward_ema, x1,
                                ucfg.em_steps, rng)
    return {
        "w1_forward": wasserstein1(x1_hat, pools.pool1[:n]),
        "w1_backward": wasserstein1(x0_hat, pools.pool0[:n]),
        "coupling_correlation": coupling_correlation(x0, x1_hat),
        "loss": models.log[-1].get("loss",
                                   models.log[-1].get("loss_forward", 0.0))
        if models.log else None,
        "step": models.log[-1]["step"] if models.log else 0,
    }


def cmd_eval(cfg: dict, args: argparse.Namespace) -> int:
    with open(args.checkpoint, "r", encoding="utf-8") as fh:
        stored = json.load(fh)
    extra = stored.get("extra", stored)
    stored_cfg = extra.get("config")
    if stored_cfg is None:
        raise _Mismatch("checkpoint carries no config")
    for key in ("hurst", "n_ou", "grid_ratio", "epsilon"):
        want = cfg["process"][key]
        have = stored_cfg["process"][key]
        if args.strict_process and float(want) != float(have):
            raise _Mismatch(f"process.{key} mismatch: checkpoint {have}, "
                            f"requested {want}")
    run_cfg = json.loads(json.dumps(stored_cfg))
    _deep_update(run_cfg, {"eval": cfg["eval"], "seed": cfg["seed"]})
    method = extra.get("method", "paired")
    model, _ = load_model(args.checkpoint)
    proc = _process_config(run_cfg)
    seed = int(run_cfg["seed"])
    ev = run_cfg["eval"]
    wsds, accs = [], []
    for trial in range(int(ev["sampling_trials"])):
        rng_eval = RngStream(seed + trial, stream_id=500)
        spec_src = _toy_spec(run_cfg, seed_shift=104729 + seed + trial)
        src = make_dataset(spec_src).x0[:int(ev["n_samples"])]
        if method == "paired":
            kernel = BridgeKernel.build(proc)
            endpoints = sample_paired(kernel, model, src, int(ev["em_steps"]),
                                      rng_eval)
        else:
            endpoints = sample_abm(proc.epsilon, model, src,
                                   int(ev["em_steps"]), rng_eval)
        m = evaluate_endpoints(run_cfg, endpoints, src)
        wsds.append(m["wsd"])
        if "mode_accuracy" in m:
            accs.append(m["mode_accuracy"])
    payload = {
        "wsd_mean": float(np.mean(wsds)), "wsd_std": float(np.std(wsds)),
        "mode_accuracy": float(np.mean(accs)) if accs else None,
        "config_hash": config_hash(run_cfg), "seed": seed,
        "version": __version__,
    }
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=1))
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fbridge")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="TOML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--H", type=float, default=None, help="Hurst index")
        p.add_argument("--K", type=int, default=None, help="number of OU processes")
        p.add_argument("--r", type=float, default=None, help="grid ratio")
        p.add_argument("--eps", type=float, default=None, help="diffusion scale")

    p = sub.add_parser("coeffs", help="grid, weights, residual, MC error")
    add_common(p)
    p.add_argument("--mc-paths", type=int, default=4000)
    p.add_argument("--out", default=None)

    p = sub.add_parser("simulate", help="bridge trajectories to CSV/SVG")
    add_common(p)
    p.add_argument("--x0", default="0,0")
    p.add_argument("--x1", default="1,1")
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--n-traj", type=int, default=1)
    p.add_argument("--exact-marginals", action="store_true")
    p.add_argument("--times", default="0.25,0.5,0.75")
    p.add_argument("--out", default="trajectories.csv")
    p.add_argument("--svg", default=None)

    p = sub.add_parser("train", help="train a bridge model")
    add_common(p)
    p.add_argument("method", choices=["paired", "abm", "unpaired-pretrain",
                                      "unpaired-finetune"])
    p.add_argument("--dataset", default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--dataset-seed", dest="dataset_seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--hidden", default=None, help="comma list, e.g. 128,128")
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--parallel-trials", action="store_true")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--pretrain-steps", dest="pretrain_steps", type=int,
                   default=None)
    p.add_argument("--finetune-steps", dest="finetune_steps", type=int,
                   default=None)
    p.add_argument("--em-steps", dest="em_steps", type=int, default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", default=None)
    p.add_argument("--out-dir", default="runs")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=None)
    p.add_argument("--em-steps", dest="em_steps", type=int, default=None)
    p.add_argument("--sampling-trials", dest="sampling_trials", type=int,
                   default=None)
    p.add_argument("--strict-process", action="store_true")
    p.add_argument("--out", default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_overrides(args)
        if args.command == "train":
            overrides.setdefault("train", {})["method"] = args.method
        cfg = load_config(args.config, overrides)
        # validate the process block before any heavy computation
        _process_config(cfg)
        if args.command == "coeffs":
            return cmd_coeffs(cfg, args)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        raise InvalidConfig("command", f"unknown command {args.command}")
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _WriteFailure as exc:
        print(f"write failure: {exc}", file=sys.stderr)
        return EXIT_WRITE
    except DivergenceDetected as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except _Mismatch as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except FBridgeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
