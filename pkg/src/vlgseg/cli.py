"""Command-line entry point: one subcommand per pipeline stage.

Every command accepts ``--config file.json`` plus flat overrides such as
``--adapter.alpha 0.3``, writes its artifacts under ``paths.output_dir``,
records a run manifest in ``<output_dir>/manifests/<command>.json`` and prints
a JSON footer listing the artifact paths as its last stdout line.

Exit codes: 0 success, 2 configuration or input error, 3 missing upstream
artifact, 4 numerical failure (divergence or failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import gradcheck, pipeline, store, synth
from .adapter import CheckpointError, load_adapter, save_adapter, train_adapter
from .config import (ABLATION_ROWS, MODES, ConfigError, PipelineConfig, apply_override, benchmark_config,
                     load_config)
from .distill import build_supervision, load_encoder, prepare, save_encoder, train_3d
from .evalkit import ablation_markdown, evaluate, infer
from .fusion import fuse, fuse_stats
from .labeling import label_report, label_scene
from .optim import NumericalError
from .scene import SceneError, load_bank, load_scene
from .tensorio import TensorFormatError, save_array

logger = logging.getLogger("vlgseg")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC = 0, 2, 3, 4
GRADCHECK_TOL = 1e-4


def versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(cfg: PipelineConfig, command: str, extra: dict | None = None) -> Path:
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "versions": versions(),
    }
    doc.update(extra or {})
    return store.write_json(Path(cfg.paths.output_dir) / "manifests" / f"{command}.json", doc)


def footer(artifacts: dict) -> None:
    print(json.dumps({"artifacts": {k: str(v) for k, v in artifacts.items()}}, sort_keys=True))


# ---------------------------------------------------------------------------
# scene helpers


def _scene_paths(cfg: PipelineConfig, test: bool = False) -> list:
    paths = cfg.paths.test_scenes if test and cfg.paths.test_scenes else cfg.paths.scenes
    if not paths:
        raise ConfigError("no scenes configured; set paths.scenes (or pass --suite suite.json)")
    return list(paths)


def _load_scenes(cfg: PipelineConfig, test: bool = False) -> list:
    return _pmap(load_scene, _scene_paths(cfg, test), cfg.workers)


def _bank(cfg: PipelineConfig):
    if not cfg.paths.bank:
        raise ConfigError("no text bank configured; set paths.bank (or pass --suite suite.json)")
    if not Path(cfg.paths.bank).exists():
        raise store.MissingArtifactError("text embedding bank", cfg.paths.bank, "synth-gen")
    return load_bank(cfg.paths.bank)


def _pmap(fn, items, workers: int) -> list:
    """Order-preserving map; results never depend on ``workers``."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _apply_suite(cfg: PipelineConfig, suite_path: str) -> None:
    p = Path(suite_path)
    if not p.exists():
        raise store.MissingArtifactError("synthetic suite", p, "synth-gen")
    doc = json.loads(p.read_text())
    cfg.paths.scenes = [str(p.parent / s) for s in doc["train"]]
    cfg.paths.test_scenes = [str(p.parent / s) for s in doc["test"]]
    cfg.paths.bank = str(p.parent / doc["bank"])


# ---------------------------------------------------------------------------
# commands


def cmd_synth_gen(cfg: PipelineConfig, args) -> dict:
    data = json.loads(Path(args.spec).read_text()) if args.spec else {}
    data.setdefault("seed", cfg.seed)
    spec = synth.default_suite(**data) if args.default_suite else synth.SynthSpec.from_dict(data)
    out = Path(args.out) if args.out else Path(cfg.paths.output_dir) / "synth"
    suite_json = synth.generate(spec, out)
    manifest = write_manifest(cfg, "synth-gen", {"synth_spec": spec.to_dict()})
    return {"suite": suite_json, "bank": out / "bank.tnsr", "manifest": manifest}


def cmd_fuse(cfg: PipelineConfig, args) -> dict:
    out = cfg.paths.output_dir
    paths = _scene_paths(cfg) + [p for p in cfg.paths.test_scenes if p not in cfg.paths.scenes]

    def run(path):
        scene = load_scene(path)
        fused = fuse(scene.cloud, scene.views, cfg.geometry.tau)
        d = store.save_fused(out, scene.name, fused)
        store.write_json(d / "stats.json", fuse_stats(fused))
        return scene.name, d

    arts = dict(_pmap(run, paths, cfg.workers))
    arts["manifest"] = write_manifest(cfg, "fuse")
    return arts


def cmd_pseudo(cfg: PipelineConfig, args) -> dict:
    out = cfg.paths.output_dir
    bank = _bank(cfg)

    def run(path):
        scene = load_scene(path)
        fused = store.load_fused(out, scene.name)
        filtered = label_scene(fused, bank, scene.scene_mask())
        unfiltered = label_scene(fused, bank, None)
        d = store.save_pseudo(out, scene.name, filtered.labels, unfiltered.labels)
        store.write_json(d / "report.json", label_report(filtered, bank.class_names))
        return scene.name, d

    arts = dict(_pmap(run, _scene_paths(cfg), cfg.workers))
    arts["manifest"] = write_manifest(cfg, "pseudo")
    return arts


def _training_samples(cfg: PipelineConfig):
    out = cfg.paths.output_dir
    scenes = _load_scenes(cfg)
    fused = [store.load_fused(out, s.name) for s in scenes]
    labels = [store.load_pseudo(out, s.name) for s in scenes]
    return scenes, fused, labels


def cmd_train_adapter(cfg: PipelineConfig, args) -> dict:
    bank = _bank(cfg)
    _, fused, labels = _training_samples(cfg)
    res = train_adapter([(f.embeddings, lab[0]) for f, lab in zip(fused, labels)], bank, cfg.adapter,
                        cfg.labeling.temperature, seed=cfg.seed)
    d = save_adapter(store.adapter_dir(cfg.paths.output_dir), res.params, {"config_hash": cfg.hash()})
    store.write_json(d / "losses.json", {"epoch_loss": res.losses, "lr": res.lrs})
    return {"adapter": d, "manifest": write_manifest(cfg, "train-adapter")}


def _load_adapter_or_explain(cfg: PipelineConfig):
    d = store.adapter_dir(cfg.paths.output_dir)
    try:
        return load_adapter(d)
    except CheckpointError:
        raise store.MissingArtifactError("adapter checkpoint", d, "train-adapter") from None


def cmd_train_3d(cfg: PipelineConfig, args) -> dict:
    bank = _bank(cfg)
    mode = cfg.distill.mode
    adapter = _load_adapter_or_explain(cfg) if mode == "soft_guidance_adapter" else None
    scenes, fused, labels = _training_samples(cfg)
    sups = [build_supervision(mode, prepare(s.cloud, cfg.distill.k), f.embeddings, f.valid, lab[0], lab[1], adapter)
            for s, f, lab in zip(scenes, fused, labels)]
    res = train_3d(sups, bank, cfg.distill, cfg.labeling.temperature, seed=cfg.seed)
    d = save_encoder(store.encoder_dir(cfg.paths.output_dir, mode), res.params,
                     {"mode": mode, "config_hash": cfg.hash()})
    store.write_json(d / "losses.json", {"loss": res.losses, "lr": res.lrs})
    return {"encoder": d, "manifest": write_manifest(cfg, "train-3d")}


def _load_encoder_or_explain(cfg: PipelineConfig):
    d = store.encoder_dir(cfg.paths.output_dir, cfg.distill.mode)
    try:
        return load_encoder(d)
    except CheckpointError:
        raise store.MissingArtifactError(f"encoder checkpoint (mode {cfg.distill.mode})", d, "train-3d") from None


def cmd_infer(cfg: PipelineConfig, args) -> dict:
    bank = _bank(cfg)
    encoder = _load_encoder_or_explain(cfg)
    mode = cfg.distill.mode

    def run(path):
        scene = load_scene(path)
        res = infer(scene.cloud, encoder, bank)
        d = store.infer_dir(cfg.paths.output_dir, mode, scene.name)
        d.mkdir(parents=True, exist_ok=True)
        save_array(d / "labels.tnsr", res.labels)
        return scene.name, d

    arts = dict(_pmap(run, _scene_paths(cfg, test=True), cfg.workers))
    arts["manifest"] = write_manifest(cfg, "infer")
    return arts


def cmd_eval(cfg: PipelineConfig, args) -> dict:
    bank = _bank(cfg)
    mode = cfg.distill.mode
    pairs = []
    for scene in _load_scenes(cfg, test=True):
        if scene.cloud.gt is None:
            raise SceneError(f"scene {scene.name} has no GT labels to evaluate against")
        pairs.append((store.load_predictions(cfg.paths.output_dir, mode, scene.name), scene.cloud.gt))
    report = evaluate(pairs, bank.K, bank.class_names)
    d = Path(cfg.paths.output_dir) / "eval" / mode
    js = store.write_json(d / "metrics.json", report.to_dict())
    md = d / "metrics.md"
    md.write_text(report.to_markdown())
    print(report.to_markdown(), end="")
    return {"metrics": js, "markdown": md, "manifest": write_manifest(cfg, "eval")}


def _parse_seeds(text: str) -> list:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}") from None


def cmd_ablate(cfg: PipelineConfig, args) -> dict:
    seeds = _parse_seeds(args.seeds) if args.seeds else [cfg.seed]
    rows = [r for r in args.rows.split(",") if r] if args.rows else list(ABLATION_ROWS)
    bad = [r for r in rows if r not in ABLATION_ROWS]
    if bad:
        raise ConfigError(f"unknown ablation rows {bad}; choose from {list(ABLATION_ROWS)}")
    out = Path(cfg.paths.output_dir) / "ablate"

    if args.synth:
        overrides = json.loads(Path(args.spec).read_text()) if args.spec else {}

        def factory(seed):
            suite = synth.build(synth.default_suite(**{**overrides, "seed": seed}))
            return [s.scene for s in suite.train], [s.scene for s in suite.test], suite.bank
    else:
        bank = _bank(cfg)
        train, test = _load_scenes(cfg), _load_scenes(cfg, test=True)

        def factory(seed):
            return train, test, bank

    arts = {}

    def save_run(run: pipeline.SeedRun):
        base = out / f"seed{run.seed}"
        if run.adapter is not None:
            arts[f"seed{run.seed}/adapter"] = save_adapter(base / "adapter", run.adapter)
        for row, m in run.modes.items():
            arts[f"seed{run.seed}/{row}"] = save_encoder(base / row, m.encoder, {"mode": m.mode})
            store.write_json(base / row / "metrics.json", m.metrics.to_dict())

    table = pipeline.run_ablation(factory, seeds, cfg, rows, on_seed=save_run)
    arts["table"] = store.write_json(out / "table.json", table)
    md = out / "table.md"
    md.write_text(ablation_markdown(table))
    arts["markdown"] = md
    print(md.read_text(), end="")
    arts["manifest"] = write_manifest(cfg, "ablate", {"seeds": seeds, "rows": rows, "synth": bool(args.synth)})
    return arts


def cmd_gradcheck(cfg: PipelineConfig, args) -> dict:
    results = gradcheck.run_suite()
    worst = max(r["max_rel_error"] for r in results)
    path = store.write_json(Path(cfg.paths.output_dir) / "gradcheck.json",
                            {"tolerance": GRADCHECK_TOL, "worst": worst, "cases": results})
    manifest = write_manifest(cfg, "gradcheck")
    failed = [r for r in results if not r["max_rel_error"] < GRADCHECK_TOL]
    print(f"gradcheck: {len(results) - len(failed)}/{len(results)} cases below {GRADCHECK_TOL:g} (worst {worst:.2e})")
    if failed:
        footer({"report": path, "manifest": manifest})
        raise NumericalError(f"{len(failed)} gradient checks exceed {GRADCHECK_TOL:g}")
    return {"report": path, "manifest": manifest}


COMMANDS = {
    "synth-gen": (cmd_synth_gen, "generate a synthetic suite (scenes, bank, layouts)"),
    "fuse": (cmd_fuse, "back-project view embeddings onto points"),
    "pseudo": (cmd_pseudo, "scene-mask-filtered pseudo labels from fused embeddings"),
    "train-adapter": (cmd_train_adapter, "fit the residual adapter on pseudo labels"),
    "train-3d": (cmd_train_3d, "train the 3D point encoder in the configured distill.mode"),
    "infer": (cmd_infer, "open-vocabulary prediction with a trained encoder"),
    "eval": (cmd_eval, "mIoU / mAcc of stored predictions against GT"),
    "ablate": (cmd_ablate, "train and evaluate modes (a)-(d) for several seeds"),
    "gradcheck": (cmd_gradcheck, "finite-difference checks of every hand-written gradient"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlgseg", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=["default", "benchmark"], default="default",
                       help="base configuration before --config and overrides")
        p.add_argument("--suite", help="suite.json from synth-gen; fills paths.scenes/test_scenes/bank")
        p.add_argument("--output-dir", help="shorthand for --paths.output_dir")
        p.add_argument("--seed", type=int, help="shorthand for --seed override")
        p.add_argument("--workers", type=int, help="scene-level parallelism")
        p.add_argument("--mode", choices=MODES, help="shorthand for --distill.mode")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "synth-gen":
            p.add_argument("--spec", help="JSON file of SynthSpec fields")
            p.add_argument("--out", help="suite directory (default <output_dir>/synth)")
            p.add_argument("--default-suite", action="store_true",
                           help="start from the benchmark suite (confusion pairs) instead of bare SynthSpec defaults")
        if name == "ablate":
            p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
            p.add_argument("--rows", help="subset of rows, e.g. c,d")
            p.add_argument("--synth", action="store_true", help="build the default synthetic suite for each seed")
            p.add_argument("--spec", help="JSON file of SynthSpec overrides used with --synth")
    return parser


def _split_overrides(extra: list) -> list:
    pairs, i = [], 0
    while i < len(extra):
        flag = extra[i]
        if not flag.startswith("--") or len(flag) <= 2:
            raise ConfigError(f"unexpected argument {flag!r}")
        key = flag[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {flag} needs a value")
            value = extra[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def make_config(args, extra: list) -> PipelineConfig:
    overrides = _split_overrides(extra)
    if args.preset == "benchmark":
        cfg = benchmark_config()
        if args.config:
            file_cfg = json.loads(Path(args.config).read_text())
            cfg = PipelineConfig.from_dict({**_nested_merge(cfg.to_dict(), file_cfg)})
        for key, value in overrides:
            apply_override(cfg, key, value)
    else:
        cfg = load_config(args.config, overrides)
    if args.suite:
        _apply_suite(cfg, args.suite)
    if args.output_dir:
        cfg.paths.output_dir = args.output_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.mode:
        cfg.distill.mode = args.mode
    return cfg.validate()


def _nested_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _nested_merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = make_config(args, extra)
        arts = COMMANDS[args.command][0](cfg, args)
    except (ConfigError, SceneError, synth.SynthError, TensorFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (store.MissingArtifactError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    footer(arts)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
