"""Command-line surface.

    hqrec <command> --config PATH [--seed N] [--out DIR] [--strict] [--threads N]

Commands: synth-data, preprocess, pretrain, finetune, evaluate, ablate,
sweep-tokens, gradcheck. Every emitted table and CSV carries the resolved
config hash so a run can be reproduced exactly. Exit codes: 1 config
errors, 2 data/file errors, 3 numeric failures.
"""

import argparse
import copy
import hashlib
import json
import os
import sys

from .checkpoint import read_checkpoint, restore_model, save_checkpoint
from .data import (
    Dataset,
    SchemaRegistry,
    SyntheticSpec,
    five_core_filter,
    generate_synthetic,
    load_dataset,
    load_sidecar,
    save_dataset,
    save_sidecar,
    split_windows,
)
from .embedders import EmbedderRegistry
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .evaluation import EvalConfig, evaluate
from .model import ModelConfig, RecModel
from .numeric import NumericEncoderConfig, NumericEncoderState, fit_numeric_encoder
from .training import (
    TrainConfig,
    run_finetune,
    run_pretrain,
    whole_model_gradcheck,
)

EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_TOP_KEYS = {
    "seed", "dataset", "synthetic", "model", "train", "eval", "window",
    "numeric_fit", "embedder", "pretrain_epochs", "finetune_epochs",
    "cold_start",
}


def resolve_config(raw, config_dir=".", seed_override=None):
    """Fill defaults, propagate the top-level seed, resolve relative paths."""
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = copy.deepcopy(raw)
    seed = int(seed_override if seed_override is not None else cfg.get("seed", 0))
    cfg["seed"] = seed
    cfg.setdefault("dataset", {})
    cfg.setdefault("synthetic", {})
    cfg.setdefault("model", {})
    cfg.setdefault("train", {})
    cfg.setdefault("eval", {})
    cfg.setdefault("numeric_fit", {})
    cfg.setdefault("embedder", {})
    cfg.setdefault("window", 20)
    cfg.setdefault("pretrain_epochs", None)
    cfg.setdefault("finetune_epochs", None)
    cfg.setdefault("cold_start", False)
    cfg["model"].setdefault("seed", seed)
    cfg["model"].setdefault("t_max", cfg["window"])
    cfg["train"].setdefault("seed", seed)
    cfg["eval"].setdefault("seed", seed)
    cfg["synthetic"].setdefault("seed", seed)
    cfg["numeric_fit"].setdefault("seed", seed + 1_000)
    cfg["numeric_fit"].setdefault("steps", 500)
    cfg["embedder"].setdefault("seed", seed + 2_000)
    cfg["embedder"].setdefault("native_width", 256)
    for key in ("path", "registry", "sidecar"):
        val = cfg["dataset"].get(key)
        if val and not os.path.isabs(val):
            cfg["dataset"][key] = os.path.normpath(os.path.join(config_dir, val))
    return cfg


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]


def load_run_config(path, seed_override=None):
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read config {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from e
    return resolve_config(raw, os.path.dirname(os.path.abspath(path)), seed_override)


# ---------------------------------------------------------------------------
# Pipeline helpers
# ---------------------------------------------------------------------------

def load_and_window(cfg, strict=False):
    ds_cfg = cfg["dataset"]
    if not ds_cfg.get("path") or not ds_cfg.get("registry"):
        raise ConfigError("config.dataset.path and config.dataset.registry are required")
    registry = SchemaRegistry.load(ds_cfg["registry"])
    dataset = load_dataset(ds_cfg["path"], registry, strict=strict)
    filtered = five_core_filter(dataset.interactions)
    kept_items = {r.item_id for r in filtered}
    items = {iid: rec for iid, rec in dataset.items.items() if iid in kept_items}
    ds = Dataset(items, filtered, registry)
    ds.skipped = dataset.skipped
    windows = split_windows(ds.histories(), window=cfg["window"])
    return ds, windows


def build_stack(cfg, registry, sidecar=None, model_overrides=None):
    model_cfg_dict = dict(cfg["model"])
    if model_overrides:
        model_cfg_dict.update(model_overrides)
    model_cfg = ModelConfig.from_dict(model_cfg_dict)
    numeric = NumericEncoderState(
        NumericEncoderConfig(d_out=model_cfg.d), seed=cfg["numeric_fit"]["seed"]
    )
    embedders = EmbedderRegistry(
        model_cfg.d, numeric, seed=cfg["embedder"]["seed"],
        native_width=cfg["embedder"]["native_width"], sidecar=sidecar,
    )
    model = RecModel(model_cfg, registry, numeric, embedders)
    return model, numeric, embedders


def prepare_numeric(numeric, dataset, windows, cfg):
    """Training-split stats for normalization, then the seeded encoder fit.

    The encoder itself is fitted on seeded uniform scalars covering the
    post-normalization range; per-field affine normalization maps dataset
    values into that range.
    """
    registry = dataset.registry
    train_ts = [r.timestamp for s in windows["train"] for r in s.history] or [
        r.timestamp for s in windows["test"] for r in s.history
    ]
    numeric.fit_time_span(train_ts)

    values_by_field = {}
    for attr in registry.item_attributes():
        if attr.modality != "number":
            continue
        vals = [
            rec.attributes[attr.name] for rec in dataset.items.values()
            if attr.name in rec.attributes
        ]
        if vals:
            values_by_field[attr.name] = vals
    ratings = [
        s.history[i].review.rating
        for s in windows["train"] for i in range(len(s.history))
        if s.history[i].review and s.history[i].review.rating is not None
    ]
    if ratings:
        values_by_field["rating"] = ratings
    numeric.fit_field_norms(values_by_field)
    fit_numeric_encoder(
        numeric, seed=cfg["numeric_fit"]["seed"], steps=cfg["numeric_fit"]["steps"]
    )


def load_sidecar_if_any(cfg):
    path = cfg["dataset"].get("sidecar")
    return load_sidecar(path) if path else None


def _metric_table(rows, columns, title, chash):
    """Fixed-width text table with the config hash in the banner."""
    widths = [max(len(str(r[i])) for r in rows + [columns]) for i in range(len(columns))]
    lines = [f"# {title}  config_hash={chash}"]
    lines.append("  ".join(str(c).ljust(w) for c, w in zip(columns, widths)))
    for r in rows:
        lines.append("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


def _write_csv(path, header_cols, rows, chash):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# config_hash={chash}\n")
        f.write(",".join(header_cols) + "\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")


def _fmt(x):
    return f"{x:.4f}"


def _train_and_eval(cfg, dataset, windows, sidecar, model_overrides, log_path=None):
    """One full pretrain + finetune + evaluate cell (used by ablate/sweep)."""
    model, numeric, _ = build_stack(cfg, dataset.registry, sidecar, model_overrides)
    model.bind_items(dataset.items)
    prepare_numeric(numeric, dataset, windows, cfg)
    tcfg = TrainConfig.from_dict(cfg["train"])
    log_f = open(log_path, "a", encoding="utf-8") if log_path else None

    def log_cb(rec):
        if log_f:
            log_f.write(json.dumps(rec, sort_keys=True) + "\n")

    try:
        pep = cfg["pretrain_epochs"]
        if pep is None or pep > 0:
            run_pretrain(model, windows["train"], tcfg, log_cb=log_cb, epochs=pep)
        fep = cfg["finetune_epochs"]
        run_finetune(model, windows["train"], tcfg, log_cb=log_cb, epochs=fep)
    finally:
        if log_f:
            log_f.close()
    ecfg = EvalConfig(**cfg["eval"])
    report = evaluate(model, windows["test"], dataset.items, ecfg)
    return model, report


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth_data(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    spec = SyntheticSpec(**cfg["synthetic"])
    items, interactions, registry, sidecar = generate_synthetic(spec)
    data_path = os.path.join(args.out, "data.jsonl")
    save_dataset(items, interactions, data_path)
    registry.save(os.path.join(args.out, "registry.json"))
    save_sidecar(sidecar, os.path.join(args.out, "sidecar.jsonl"))
    print(f"wrote {len(items)} items, {len(interactions)} interactions to {args.out}")
    return 0


def cmd_preprocess(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    filtered_path = os.path.join(args.out, "filtered.jsonl")
    save_dataset(
        [dataset.items[i] for i in dataset.item_ids()], dataset.interactions,
        filtered_path,
    )
    splits = {
        split: [
            {"user_id": s.user_id, "target_item": s.target_item,
             "history_items": [r.item_id for r in s.history]}
            for s in samples
        ]
        for split, samples in windows.items()
    }
    chash = config_hash(cfg)
    with open(os.path.join(args.out, "splits.json"), "w", encoding="utf-8") as f:
        json.dump({"config_hash": chash, "splits": splits}, f, indent=1, sort_keys=True)
    print(f"5-core kept {len(dataset.interactions)} interactions, "
          f"{len(dataset.items)} items; windows: "
          + ", ".join(f"{k}={len(v)}" for k, v in windows.items())
          + (f"; skipped {len(dataset.skipped)} malformed lines"
             if dataset.skipped else ""))
    return 0


def cmd_pretrain(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    sidecar = load_sidecar_if_any(cfg)
    model, numeric, _ = build_stack(cfg, dataset.registry, sidecar)
    model.bind_items(dataset.items)
    prepare_numeric(numeric, dataset, windows, cfg)
    tcfg = TrainConfig.from_dict(cfg["train"])
    log_path = os.path.join(args.out, "pretrain_log.jsonl")
    ckpt_path = os.path.join(args.out, "pretrain.ckpt")
    with open(log_path, "w", encoding="utf-8") as log_f:
        result = run_pretrain(
            model, windows["train"], tcfg,
            log_cb=lambda rec: log_f.write(json.dumps(rec, sort_keys=True) + "\n"),
            epochs=cfg["pretrain_epochs"],
        )
    save_checkpoint(ckpt_path, model, optimizer_moments=result["moments"],
                    extra_meta={"stage": "pretrain", "config_hash": config_hash(cfg)})
    print(f"pretrain finished: {result['steps']} steps; checkpoint {ckpt_path}")
    return 0


def cmd_finetune(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    sidecar = load_sidecar_if_any(cfg)
    model, numeric, _ = build_stack(cfg, dataset.registry, sidecar)
    model.bind_items(dataset.items)
    if args.checkpoint:
        header, arrays = read_checkpoint(args.checkpoint)
        restore_model(header, arrays, model)
    elif cfg["cold_start"]:
        prepare_numeric(numeric, dataset, windows, cfg)
    else:
        raise ConfigError(
            "finetune requires --checkpoint or config.cold_start=true"
        )
    tcfg = TrainConfig.from_dict(cfg["train"])
    log_path = os.path.join(args.out, "finetune_log.jsonl")
    ckpt_path = os.path.join(args.out, "finetune.ckpt")
    with open(log_path, "w", encoding="utf-8") as log_f:
        result = run_finetune(
            model, windows["train"], tcfg,
            log_cb=lambda rec: log_f.write(json.dumps(rec, sort_keys=True) + "\n"),
            epochs=cfg["finetune_epochs"],
        )
    save_checkpoint(ckpt_path, model, optimizer_moments=result["moments"],
                    extra_meta={"stage": "finetune", "config_hash": config_hash(cfg)})
    print(f"finetune finished: {result['steps']} steps; checkpoint {ckpt_path}")
    return 0


def cmd_evaluate(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    sidecar = load_sidecar_if_any(cfg)
    model, numeric, _ = build_stack(cfg, dataset.registry, sidecar)
    model.bind_items(dataset.items)
    if not args.checkpoint:
        raise ConfigError("evaluate requires --checkpoint")
    header, arrays = read_checkpoint(args.checkpoint)
    restore_model(header, arrays, model)
    ecfg = EvalConfig(**cfg["eval"])
    split = args.split
    if split not in windows or not windows[split]:
        raise DataError(f"split {split!r} is empty")
    report = evaluate(model, windows[split], dataset.items, ecfg,
                      threads=args.threads)
    chash = config_hash(cfg)
    names = list(report["metrics"])
    rows = [["model"] + [_fmt(report["metrics"][n]) for n in names],
            ["random"] + [_fmt(report["random_baseline"][n]) for n in names]]
    table = _metric_table(rows, ["scorer"] + names,
                          f"{split} metrics over {report['n_users']} users", chash)
    with open(os.path.join(args.out, f"metrics_{split}.txt"), "w") as f:
        f.write(table)
    _write_csv(os.path.join(args.out, f"metrics_{split}.csv"),
               ["scorer"] + names, rows, chash)
    print(table, end="")
    return 0


_FIG2_CELLS = [
    ("full", {"schema_mode": "triplet", "user_mode": "user_qformer"}),
    ("wo_triplet", {"schema_mode": "value_only", "user_mode": "user_qformer"}),
    ("wo_user_token", {"schema_mode": "triplet", "user_mode": "mean_items"}),
    ("wo_both", {"schema_mode": "value_only", "user_mode": "mean_items"}),
]

_FUSION_ROWS = [
    ("pure_text", {"fusion_mode": "pure_text"}),
    ("mlp", {"fusion_mode": "mlp"}),
    ("self_attention", {"fusion_mode": "self_attention"}),
    ("qformer", {"fusion_mode": "qformer"}),
]


def cmd_ablate(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    sidecar = load_sidecar_if_any(cfg)
    chash = config_hash(cfg)
    rows = []
    for name, overrides in _FIG2_CELLS + [
        (f"fusion_{n}", o) for n, o in _FUSION_ROWS
    ]:
        _, report = _train_and_eval(cfg, dataset, windows, sidecar, overrides)
        m = report["metrics"]
        rows.append([name, _fmt(m["MRR"]), _fmt(m["Hit@10"]), _fmt(m["NDCG@10"])])
        print(f"{name}: MRR={m['MRR']:.4f} Hit@10={m['Hit@10']:.4f}")
    cols = ["variant", "MRR", "Hit@10", "NDCG@10"]
    table = _metric_table(rows, cols, "component and fusion ablations", chash)
    with open(os.path.join(args.out, "ablation.txt"), "w") as f:
        f.write(table)
    _write_csv(os.path.join(args.out, "ablation.csv"), cols, rows, chash)
    print(table, end="")
    return 0


def cmd_sweep_tokens(cfg, args):
    os.makedirs(args.out, exist_ok=True)
    dataset, windows = load_and_window(cfg, strict=args.strict)
    sidecar = load_sidecar_if_any(cfg)
    chash = config_hash(cfg)
    rows = []
    for level, key in (("item", "k_item"), ("user", "k_user")):
        for k in (1, 2, 4, 8, 16):
            _, report = _train_and_eval(cfg, dataset, windows, sidecar, {key: k})
            m = report["metrics"]
            rows.append([level, k, _fmt(m["MRR"]), _fmt(m["Hit@10"]),
                         _fmt(m["NDCG@10"])])
            print(f"{level} K={k}: MRR={m['MRR']:.4f}")
    cols = ["level", "k", "MRR", "Hit@10", "NDCG@10"]
    _write_csv(os.path.join(args.out, "token_sweep.csv"), cols, rows, chash)
    with open(os.path.join(args.out, "token_sweep.txt"), "w") as f:
        f.write(_metric_table(rows, cols, "token count sweep", chash))
    return 0


def cmd_gradcheck(cfg, args):
    spec = SyntheticSpec(n_users=6, n_items=12, n_clusters=3,
                         interactions_per_user=5, seed=cfg["seed"])
    items, interactions, registry, sidecar = generate_synthetic(spec)
    dataset = Dataset({i.item_id: i for i in items}, interactions, registry)
    windows = split_windows(dataset.histories(), window=2)
    model_cfg = {
        "d": 8, "k_item": 2, "k_user": 2, "n_layers": 1, "n_heads": 2,
        "n_reader_layers": 1, "t_max": 2, "dtype": "float64",
        "seed": cfg["seed"],
    }
    local = copy.deepcopy(cfg)
    local["model"].update(model_cfg)
    model, numeric, _ = build_stack(local, registry, sidecar)
    model.bind_items(dataset.items)
    samples = [s for s in windows["train"] if len(s.history) >= 2][:2]
    for s in samples:
        s.history[:] = s.history[-2:]
    tcfg = TrainConfig.from_dict(local["train"])
    worst, report = whole_model_gradcheck(model, samples, tcfg)
    for name in sorted(report, key=report.get, reverse=True)[:5]:
        print(f"  {name}: rel err {report[name]:.3e}")
    print(f"whole-model gradient check: max rel err {worst:.3e} "
          f"over {len(report)} tensors")
    if worst >= 1e-4:
        print("FAIL: tolerance 1e-4 exceeded")
        return EXIT_NUMERIC
    print("PASS")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

_COMMANDS = {
    "synth-data": cmd_synth_data,
    "preprocess": cmd_preprocess,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep-tokens": cmd_sweep_tokens,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="hqrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--strict", action="store_true", help="abort on malformed data")
        if name == "evaluate":
            p.add_argument("--threads", type=int, default=1)
            p.add_argument("--split", default="test", choices=("test", "val"))
        if name in ("finetune", "evaluate"):
            p.add_argument("--checkpoint", default=None)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.config, seed_override=args.seed)
        return _COMMANDS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
