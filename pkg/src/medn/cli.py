"""Command-line entry points.

Commands: synth, preprocess, train, eval, ablate, export.  Every command
reads an optional JSON run config (--config) with dot-path overrides
(--set key=value, value parsed as JSON).  Exit codes: 0 success, 2 config
validation error, 1 any other failure; failures print a JSON error object to
stderr.  MEDN_DATA_DIR provides the default dataset location.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_mod
from .config import RunConfig, apply_overrides, run_config_from_dict
from .data_model import (
    DatasetManifest,
    SynthConfig,
    generate_synthetic,
    load_manifest,
    read_tensor,
    validate_flow,
    write_tensor,
)
from .errors import ConfigError, MednError, ShapeMismatch
from .evaluation import export_features, run_loso
from .preprocess import flow_vs_first, uniform_sample, variational_flow
from .training import ablation_csv, ablate, lambda_grid, table_iv_grid


def _load_config(args) -> RunConfig:
    raw: dict = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
    raw = apply_overrides(raw, args.set or [])
    cfg = run_config_from_dict(raw)
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    return cfg


def _data_path(args) -> Path:
    data = args.data or os.environ.get("MEDN_DATA_DIR")
    if not data:
        raise ConfigError("no dataset given: pass --data or set MEDN_DATA_DIR")
    path = Path(data)
    return path / "manifest.json" if path.is_dir() else path


def _prepare_out(path: Path, overwrite: bool) -> Path:
    if path.exists() and any(path.iterdir()) and not overwrite:
        raise MednError(f"output {path} exists; pass --overwrite to replace it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        subjects=args.subjects,
        samples_per_subject=args.samples_per_subject,
        task_scheme=args.scheme,
        hard_proportion=args.hard_proportion,
        t=args.t,
        height=args.height,
        width=args.width,
        noise_sigma=args.noise_sigma,
    )
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.overwrite:
        raise MednError(f"output {out} exists; pass --overwrite to replace it")
    manifest = generate_synthetic(cfg, args.seed, out)
    print(json.dumps({"out": str(out), "samples": len(manifest.records), "meta": manifest.meta}))
    return 0


def cmd_preprocess(args) -> int:
    manifest = load_manifest(_data_path(args))
    out = _prepare_out(Path(args.out), args.overwrite)
    t = manifest.dims["t"]
    records = []
    for rec in manifest.records:
        src = read_tensor(manifest.root / rec.path)
        if args.precomputed_flow:
            validate_flow(src, manifest.dims)
            flow = src
        else:
            if src.ndim != 4 or src.shape[1] != 3:
                raise ShapeMismatch(f"{rec.sample_id}: expected frames [L, 3, H, W], got {src.shape}")
            indices = uniform_sample(src.shape[0], t)
            frames = src[indices]
            flow = flow_vs_first(frames, estimator=variational_flow)
        write_tensor(out / rec.path, flow)
        records.append(rec)
    processed = DatasetManifest(
        task_scheme=manifest.task_scheme,
        dims={"t": t, "c": 2, "h": manifest.dims["h"], "w": manifest.dims["w"]},
        au_vocabulary=manifest.au_vocabulary,
        records=records,
        root=out,
        meta={"source": str(_data_path(args))},
    )
    processed.save(out / "manifest.json")
    print(json.dumps({"out": str(out), "samples": len(records)}))
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(_data_path(args))
    out = _prepare_out(Path(args.out), args.overwrite)
    report = run_loso(manifest, cfg, cfg.seed, jobs=cfg.jobs, checkpoint_dir=out, reuse=False)
    print(json.dumps({"out": str(out), "folds": len(report.folds), "uf1": report.uf1, "uar": report.uar}))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(_data_path(args))
    ckpt_dir = Path(args.checkpoints)
    missing = [s for s in manifest.subjects() if not (ckpt_dir / f"fold_{s}.npz").exists()]
    if missing:
        raise MednError(f"missing fold checkpoints for subjects: {', '.join(missing)}")
    out = _prepare_out(Path(args.out), args.overwrite)
    report = run_loso(manifest, cfg, cfg.seed, jobs=cfg.jobs, checkpoint_dir=ckpt_dir, reuse=True)
    report.save(out)
    print(json.dumps({"out": str(out), "uf1": report.uf1, "uar": report.uar}))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    manifest = load_manifest(_data_path(args))
    if args.grid == "table_iv":
        grid = table_iv_grid(cfg)
    else:
        grid = lambda_grid(cfg, args.grid)
    rows = ablate(manifest, grid, cfg.seed, jobs=cfg.jobs)
    csv_text = ablation_csv(rows)
    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise MednError(f"output {out} exists; pass --overwrite to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(json.dumps({"out": str(out), "rows": len(rows)}))
    return 0


def cmd_export(args) -> int:
    manifest = load_manifest(_data_path(args))
    checkpoint = ckpt_mod.load(args.checkpoint)
    csv_text = export_features(checkpoint, manifest)
    out = Path(args.out)
    if out.exists() and not args.overwrite:
        raise MednError(f"output {out} exists; pass --overwrite to replace it")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(json.dumps({"out": str(out), "rows": len(manifest.records)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, data=True):
        p.add_argument("--config", help="run config JSON file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dot-path config override")
        p.add_argument("--jobs", type=int, default=None, help="parallel fold workers")
        p.add_argument("--overwrite", action="store_true")
        if data:
            p.add_argument("--data", help="dataset dir or manifest.json (default: MEDN_DATA_DIR)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=6)
    p.add_argument("--samples-per-subject", type=int, default=50)
    p.add_argument("--scheme", default="3-class", choices=["3-class", "4-class", "7-class"])
    p.add_argument("--hard-proportion", type=float, default=0.85)
    p.add_argument("--t", type=int, default=8)
    p.add_argument("--height", type=int, default=144)
    p.add_argument("--width", type=int, default=144)
    p.add_argument("--noise-sigma", type=float, default=0.05)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="frames -> flow tensors (or validate precomputed flow)")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--precomputed-flow", action="store_true", help="inputs are already flow; validate and copy")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model per LOSO fold")
    add_common(p)
    p.add_argument("--out", required=True, help="directory for fold checkpoints and logs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score existing fold checkpoints under LOSO")
    add_common(p)
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid and emit CSV")
    add_common(p)
    p.add_argument("--grid", required=True, choices=["table_iv", "lambda_au", "lambda_orth"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export", help="dump decoupled/fused features to CSV")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    np.seterr(all="ignore")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
