"""Command-line pipeline: synthesize data, train, evaluate, sweep, select,
and aggregate results.

Every subcommand resolves its configuration from (highest precedence
first) explicit flags, a ``--from-manifest`` file, ``SUBPOP_*``
environment variables, then built-in defaults; writes a ``manifest.txt``
recording the resolved values; and embeds the config hash in every text
output so results are traceable and reruns byte-reproducible.
"""
from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import adapter as adapter_mod
from . import dro as dro_mod
from . import ldro as ldro_mod
from . import report as report_mod
from . import store, synth, zeroshot
from .errors import SubpopError, ValidationError
from .losses import LdroConfig

DRO_METHODS = list(dro_mod.METHODS)
METHODS = ["ldro"] + DRO_METHODS + [f"ldro+{m}" for m in DRO_METHODS]

# flag name -> (type, default); defaults mirror the owning modules
COMMON_TRAIN_FLAGS: dict[str, tuple] = {
    "method": (str, "ldro"),
    "eta": (float, 0.2),
    "logit_scale": (float, 100.0),
    "debias_scale": (float, 30.0),
    "alpha": (float, 0.2),
    "rho": (float, 1.0),
    "lambda_up": (float, 4.0),
    "t1": (int, 1),
    "lr": (float, 1e-3),
    "epochs": (int, 50),
    "batch": (int, 256),
    "depth": (int, 2),
    "hidden": (int, -1),  # -1 means "match the embedding dim"
    "blend": (float, 1.0),
    "seed": (int, 0),
    "repeats": (int, 10),
}

SYNTH_FLAGS: dict[str, tuple] = {
    "dim": (int, 32),
    "n": (int, 4000),
    "p_spur": (float, 0.95),
    "a_cls": (float, 1.0),
    "a_grp": (float, 1.0),
    "sigma": (float, 2.0),
    "beta": (float, 0.8),
    "seed": (int, 7),
}


def _read_manifest(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and "=" in line and not line.startswith("#"):
            k, v = line.split("=", 1)
            out[k] = v
    return out


def _resolve(args: argparse.Namespace, flags: dict[str, tuple]) -> dict:
    """Merge CLI > manifest > environment > defaults into a flat config."""
    manifest = _read_manifest(args.from_manifest) if args.from_manifest else {}
    cfg = {}
    for name, (typ, default) in flags.items():
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            cfg[name] = cli_val
        elif name in manifest:
            cfg[name] = typ(manifest[name])
        elif (env := os.environ.get(f"SUBPOP_{name.upper()}")) is not None:
            cfg[name] = typ(env)
        else:
            cfg[name] = default
    return cfg


def _config_hash(cfg: dict) -> str:
    blob = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_manifest(out_dir: Path, subcommand: str, cfg: dict, extra: dict | None = None) -> str:
    chash = _config_hash(cfg)
    lines = [f"subcommand={subcommand}"]
    lines += [f"{k}={cfg[k]}" for k in sorted(cfg)]
    lines.append(f"config_hash={chash}")
    for k, v in (extra or {}).items():
        lines.append(f"{k}={v}")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")
    return chash


def _fingerprint(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _load_data(data_dir: str) -> tuple[dict, store.PromptSet, str]:
    root = Path(data_dir)
    prompts = store.load_prompt_set(root / "prompts.csv")
    splits = {}
    counts = {"class": prompts.class_count, "group": 0}
    loaded = {}
    for split in ("train", "val", "test"):
        if (root / f"{split}.ldeb").exists():
            emb = store.read_embeddings(root / f"{split}.ldeb")
            labels, groups = store.read_metadata(root / f"{split}.csv", emb.count)
            loaded[split] = (emb, labels, groups)
            if groups is not None and groups.size:
                counts["group"] = max(counts["group"], int(groups.max()) + 1)
    if "train" not in loaded:
        raise ValidationError(f"{data_dir}: no train.ldeb found")
    for split, (emb, labels, groups) in loaded.items():
        splits[split] = store.GroupedDataset(
            emb, labels, groups, counts["class"], counts["group"]
        )
    return splits, prompts, _fingerprint(root / "train.ldeb")


def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_FLAGS)
    out = Path(args.out)
    result = synth.generate(
        synth.SynthConfig(
            e=cfg["dim"], n=cfg["n"], p_spur=cfg["p_spur"], a_cls=cfg["a_cls"],
            a_grp=cfg["a_grp"], sigma=cfg["sigma"], beta=cfg["beta"], seed=cfg["seed"],
        )
    )
    out.mkdir(parents=True, exist_ok=True)
    for split, ds in result.splits().items():
        store.save_split(ds, out, split)
    store.save_prompt_set(result.prompts, out)
    _write_manifest(out, "synth", cfg, {"data_fingerprint": _fingerprint(out / "train.ldeb")})
    print(f"wrote synthetic dataset to {out}")
    return 0


def _train_once(cfg: dict, splits: dict, prompts: store.PromptSet, seed: int):
    """Dispatch one training run; returns (adapter chain, TrainReport)."""
    hidden = None if cfg["hidden"] == -1 else cfg["hidden"]
    val, test = splits.get("val"), splits.get("test")
    method = cfg["method"]
    ldro_run = ldro_mod.LdroRun(
        cfg=LdroConfig(
            eta=cfg["eta"], logit_scale=cfg["logit_scale"], debias_scale=cfg["debias_scale"]
        ),
        epochs=cfg["epochs"], batch_size=cfg["batch"], seed=seed,
        depth=cfg["depth"], hidden=hidden, blend=cfg["blend"], lr=cfg["lr"],
    )
    dro_cfg = dro_mod.DroConfig(
        method=method.removeprefix("ldro+") if method != "ldro" else "erm",
        alpha=cfg["alpha"], rho=cfg["rho"], phase1_epochs=cfg["t1"],
        lambda_up=cfg["lambda_up"], epochs=cfg["epochs"], batch_size=cfg["batch"],
        seed=seed, depth=cfg["depth"], hidden=hidden, blend=cfg["blend"],
        logit_scale=cfg["logit_scale"], lr=cfg["lr"],
    )
    if method == "ldro":
        a, rep = ldro_mod.train_ldro(splits["train"], prompts, ldro_run, val, test)
        return (a,), rep
    if method.startswith("ldro+"):
        chain, rep = ldro_mod.train_stacked(
            splits["train"], prompts, ldro_run, dro_cfg, val, test
        )
        return chain, rep
    a, rep = dro_mod.train_dro(splits["train"], prompts, dro_cfg, val, test)
    return (a,), rep


def _selected_chain(chain: tuple, rep: report_mod.TrainReport) -> tuple:
    """Chain with the last adapter swapped for its validation-selected epoch."""
    if not rep.ring or not (0 <= rep.selected_epoch < len(rep.ring)):
        return chain
    return tuple(chain[:-1]) + rep.ring[rep.selected_epoch]


def cmd_train(args) -> int:
    flags = {"data": (str, None), **COMMON_TRAIN_FLAGS}
    cfg = _resolve(args, flags)
    if cfg["method"] not in METHODS:
        raise ValidationError(f"unknown method {cfg['method']!r}; choose from {METHODS}")
    if cfg["repeats"] < 1:
        raise ValidationError("repeats must be >= 1")
    if cfg["data"] is None:
        raise ValidationError("--data is required")
    splits, prompts, fingerprint = _load_data(cfg["data"])
    out = Path(args.out)
    chash = _write_manifest(
        out, "train", cfg, {"data_fingerprint": fingerprint}
    )
    for rep_idx in range(cfg["repeats"]):
        seed = cfg["seed"] + rep_idx
        rep_dir = out / f"rep{rep_idx:02d}"
        rep_dir.mkdir(parents=True, exist_ok=True)
        chain, train_report = _train_once(cfg, splits, prompts, seed)
        report_mod.write_metric_log(train_report, rep_dir / "metrics.tsv", chash)
        adapter_mod.save_checkpoint(list(chain), rep_dir / "ckpt_final.ldck")
        sel_chain = _selected_chain(chain, train_report)
        adapter_mod.save_checkpoint(list(sel_chain), rep_dir / "ckpt_selected.ldck")
        sel_row = next(
            (r for r in train_report.rows if r.epoch == train_report.selected_epoch), None
        )
        extra = {
            "config_hash": chash,
            "method": cfg["method"],
            "seed": str(seed),
            "selected_epoch": str(train_report.selected_epoch),
        }
        for split in ("val", "test"):
            if sel_row is not None and split in sel_row.reports:
                zeroshot.write_report(
                    sel_row.reports[split], rep_dir / f"report_{split}_selected.txt", extra
                )
        last = train_report.rows[-1]
        if "test" in last.reports:
            zeroshot.write_report(last.reports["test"], rep_dir / "report_test_final.txt", extra)
        print(
            f"rep {rep_idx}: method={cfg['method']} seed={seed} "
            f"selected_epoch={train_report.selected_epoch}"
        )
    return 0


def cmd_eval(args) -> int:
    flags = {"data": (str, None), "split": (str, "test"), "checkpoint": (str, ""), "logit_scale": (float, 100.0)}
    cfg = _resolve(args, flags)
    if cfg["data"] is None:
        raise ValidationError("--data is required")
    splits, prompts, fingerprint = _load_data(cfg["data"])
    if cfg["split"] not in splits:
        raise ValidationError(f"split {cfg['split']!r} not present in {cfg['data']}")
    data = splits[cfg["split"]]
    if data.groups is None or data.labels is None:
        raise ValidationError(
            f"groups required for evaluation: {cfg['data']}/{cfg['split']}.csv has no group ids"
        )
    chain = tuple(adapter_mod.load_checkpoint(cfg["checkpoint"])) if cfg["checkpoint"] else ()
    clf = zeroshot.Classifier(prompts.classification.data, chain)
    rep = zeroshot.evaluate(clf, data)
    chash = _config_hash(cfg)
    lines = [f"config_hash={chash}", f"split={cfg['split']}"] + rep.lines()
    text = "\n".join(lines) + "\n"
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
        manifest = [f"subcommand=eval"] + [f"{k}={cfg[k]}" for k in sorted(cfg)]
        manifest += [f"config_hash={chash}", f"data_fingerprint={fingerprint}"]
        out_path.with_suffix(out_path.suffix + ".manifest.txt").write_text("\n".join(manifest) + "\n")
    else:
        sys.stdout.write(text)
    return 0


def cmd_sweep(args) -> int:
    flags = {"data": (str, None), "etas": (str, ""), "train_sizes": (str, ""), **COMMON_TRAIN_FLAGS}
    cfg = _resolve(args, flags)
    if cfg["data"] is None:
        raise ValidationError("--data is required")
    if bool(cfg["etas"]) == bool(cfg["train_sizes"]):
        raise ValidationError("sweep needs exactly one of --etas or --train-sizes")
    splits, prompts, fingerprint = _load_data(cfg["data"])
    out = Path(args.out)
    chash = _write_manifest(out, "sweep", cfg, {"data_fingerprint": fingerprint})
    hidden = None if cfg["hidden"] == -1 else cfg["hidden"]
    run = ldro_mod.LdroRun(
        cfg=LdroConfig(
            eta=cfg["eta"], logit_scale=cfg["logit_scale"], debias_scale=cfg["debias_scale"]
        ),
        epochs=cfg["epochs"], batch_size=cfg["batch"], seed=cfg["seed"],
        depth=cfg["depth"], hidden=hidden, blend=cfg["blend"], lr=cfg["lr"],
    )
    lines = [f"# config_hash={chash}"]
    if cfg["etas"]:
        etas = [float(v) for v in cfg["etas"].split(",")]
        rows = ldro_mod.eta_sweep(
            splits["train"], prompts, run, etas, splits.get("val"), splits.get("test")
        )
        lines.append("eta\tavg_acc\tworst_acc\tselected_epoch")
        for r in rows:
            lines.append(f"{r['eta']!r}\t{r['avg_acc']!r}\t{r['worst_acc']!r}\t{r['selected_epoch']}")
    else:
        sizes = [int(v) for v in cfg["train_sizes"].split(",")]
        lines.append("train_size\tavg_acc\tworst_acc\tselected_epoch")
        rng = np.random.default_rng(cfg["seed"])
        train = splits["train"]
        for size in sizes:
            if size > train.count:
                raise ValidationError(f"train size {size} exceeds {train.count}")
            idx = np.sort(rng.choice(train.count, size=size, replace=False))
            sub = store.GroupedDataset(
                store.EmbeddingMatrix(train.embeddings.data[idx]),
                None if train.labels is None else train.labels[idx],
                None if train.groups is None else train.groups[idx],
                train.class_count, train.group_count,
            )
            _, rep = ldro_mod.train_ldro(sub, prompts, run, splits.get("val"), splits.get("test"))
            picked = next((r for r in rep.rows if r.epoch == rep.selected_epoch), None)
            source = picked.reports.get("test") or picked.reports.get("val") if picked else None
            avg = source.average_acc if source else float("nan")
            worst = source.worst_group_acc if source else float("nan")
            lines.append(f"{size}\t{avg!r}\t{worst!r}\t{rep.selected_epoch}")
    (out / "sweep.tsv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'sweep.tsv'}")
    return 0


def cmd_select(args) -> int:
    candidates = []
    for run_dir in args.runs:
        for metrics in sorted(Path(run_dir).glob("rep*/metrics.tsv")):
            for row in report_mod.read_metric_log(metrics):
                if row["split"] != "val":
                    continue
                candidates.append(
                    zeroshot.ModelCandidate(
                        checkpoint=f"{metrics.parent}:epoch{row['epoch']}",
                        val_report=zeroshot.EvalReport(
                            float(row["avg_acc"]), (), float(row["worst_acc"]), ()
                        ),
                        epoch=int(row["epoch"]),
                    )
                )
    if not candidates:
        raise ValidationError("no validation rows found under the given run dirs")
    best = zeroshot.select_model(candidates)
    line = (
        f"selected={best.checkpoint}\tworst_acc={best.val_report.worst_group_acc!r}"
        f"\tavg_acc={best.val_report.average_acc!r}"
    )
    if args.out:
        Path(args.out).write_text(line + "\n")
    print(line)
    return 0


def _fmt_pm(values: list[float]) -> str:
    mean = float(np.mean(values)) * 100
    std = float(np.std(values)) * 100
    return f"{mean:.1f}±{std:.1f}"


def cmd_report(args) -> int:
    rows = []
    fingerprints = set()
    stability_lines = []
    for run_dir in args.runs:
        run = Path(run_dir)
        manifest = _read_manifest(run / "manifest.txt")
        method = manifest.get("method", run.name)
        fingerprints.add(manifest.get("data_fingerprint", ""))
        if len(fingerprints) > 1:
            raise ValidationError("refusing to aggregate runs over different datasets")
        avgs, worsts = [], []
        for rep_file in sorted(run.glob("rep*/report_test_selected.txt")):
            rep = zeroshot.read_report(rep_file)
            avgs.append(float(rep["average_acc"]))
            worsts.append(float(rep["worst_group_acc"]))
        if not avgs:
            raise ValidationError(f"{run_dir}: no selected test reports found")
        rows.append((method, avgs, worsts))
        # per-epoch stability series across repeats
        series: dict[tuple[str, str], dict[str, list[float]]] = {}
        for metrics in sorted(run.glob("rep*/metrics.tsv")):
            for row in report_mod.read_metric_log(metrics):
                if row["avg_acc"] == "nan":
                    continue
                key = (row["epoch"], row["split"])
                series.setdefault(key, {"avg": [], "worst": []})
                series[key]["avg"].append(float(row["avg_acc"]))
                series[key]["worst"].append(float(row["worst_acc"]))
        for (epoch, split), vals in sorted(series.items(), key=lambda kv: (int(kv[0][0]), kv[0][1])):
            stability_lines.append(
                f"{method}\t{epoch}\t{split}\t"
                f"{float(np.mean(vals['avg']))!r}\t{float(np.std(vals['avg']))!r}\t"
                f"{float(np.mean(vals['worst']))!r}\t{float(np.std(vals['worst']))!r}"
            )
    rows.sort(key=lambda r: -float(np.mean(r[2])))
    cfg = {"runs": ",".join(str(r) for r in args.runs)}
    chash = _config_hash(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = [f"# config_hash={chash}", "method\tavg_acc\tworst_acc\trepeats"]
    for method, avgs, worsts in rows:
        table.append(f"{method}\t{_fmt_pm(avgs)}\t{_fmt_pm(worsts)}\t{len(avgs)}")
    (out / "table.tsv").write_text("\n".join(table) + "\n")
    stability = [f"# config_hash={chash}", "method\tepoch\tsplit\tavg_mean\tavg_std\tworst_mean\tworst_std"]
    (out / "stability.tsv").write_text("\n".join(stability + stability_lines) + "\n")
    _write_manifest(out, "report", cfg, {"data_fingerprint": next(iter(fingerprints))})
    sys.stdout.write("\n".join(table) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subpop",
        description="Group-robustness toolkit for embedding-space classifiers",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--from-manifest", default=None, help="resolve flags from a recorded manifest")

    p_synth = sub.add_parser("synth", help="generate a synthetic planted-bias dataset")
    p_synth.add_argument("--out", required=True)
    for name, (typ, _) in SYNTH_FLAGS.items():
        p_synth.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    add_common(p_synth)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train an adapter with any method")
    p_train.add_argument("--data", default=None)
    p_train.add_argument("--out", required=True)
    for name, (typ, _) in COMMON_TRAIN_FLAGS.items():
        p_train.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate zero-shot or a checkpoint on a split")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--split", default=None)
    p_eval.add_argument("--checkpoint", default=None)
    p_eval.add_argument("--logit-scale", dest="logit_scale", type=float, default=None)
    p_eval.add_argument("--out", default=None)
    add_common(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="eta or training-set-size sensitivity sweep")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--etas", default=None, help="comma-separated eta values")
    p_sweep.add_argument("--train-sizes", dest="train_sizes", default=None, help="comma-separated sizes")
    for name, (typ, _) in COMMON_TRAIN_FLAGS.items():
        p_sweep.add_argument(f"--{name.replace('_', '-')}", dest=name, type=typ, default=None)
    add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_select = sub.add_parser("select", help="pick the best checkpoint across runs by validation worst-group accuracy")
    p_select.add_argument("--runs", nargs="+", required=True)
    p_select.add_argument("--out", default=None)
    add_common(p_select)
    p_select.set_defaults(func=cmd_select)

    p_report = sub.add_parser("report", help="aggregate repeats into a comparison table")
    p_report.add_argument("--runs", nargs="+", required=True)
    p_report.add_argument("--out", required=True)
    add_common(p_report)
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SubpopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
