"""Command-line pipeline: generate, split, pretrain, finetune, probe, eval.

Every command reads a JSON config (plus ``--set key=value`` dotted
overrides), rejects unknown keys, writes its fully resolved config next to
its outputs, and prints one machine-readable JSON object to stdout.
Diagnostics go to stderr. Exit codes: 0 success, 1 runtime failure, 2
configuration error.
"""

import argparse
import json
import os
import sys
from typing import Dict, Optional

import numpy as np

from crispkit import gradcheck as gradcheck_mod
from crispkit import io, pipeline, train
from crispkit.errors import CrispkitError, InvalidConfigError
from crispkit.geo import (
    assign_blocks,
    attach_lambda_subsets,
    block_of,
    build_split,
    format_lambda,
    load_manifest,
    read_observations,
    save_manifest,
)
from crispkit.kmeans import KMeansConfig, kmeans_pp
from crispkit.metrics import (
    ClusteringPair,
    PredictionSet,
    binned_macro_accuracy,
    clustering_agreement,
    eco_accuracy,
    emit_report,
    topk_accuracy,
    topk_macro_accuracy,
)
from crispkit.geo import bin_by_frequency
from crispkit.synth import SynthConfig, corpus_stats, generate, load_corpus, save_corpus
from crispkit.train import FitConfig, PretrainConfig

DEFAULT_LAMBDAS = [0.0025, 0.01, 0.025, 0.05, 0.20]

_SYNTH_KEYS = {f: None for f in SynthConfig.__dataclass_fields__}
_PRETRAIN_KEYS = {f: None for f in PretrainConfig.__dataclass_fields__}
_FIT_KEYS = {f: None for f in FitConfig.__dataclass_fields__}

SCHEMAS = {
    "gen-data": {"out_dir": None, "synth": _SYNTH_KEYS},
    "split": {
        "out_dir": None,
        "corpus_dir": None,
        "cell_deg": None,
        "test_fraction": None,
        "val_fraction": None,
        "proximity_m": None,
        "lambdas": None,
        "seed": None,
    },
    "pretrain": {
        "out_dir": None,
        "corpus_dir": None,
        "manifest": None,
        "objective": None,
        "train": _PRETRAIN_KEYS,
    },
    "finetune": {
        "out_dir": None,
        "corpus_dir": None,
        "manifest": None,
        "checkpoint": None,
        "view": None,
        "lambda": None,
        "encoder": {"hidden_dim": None, "embed_dim": None, "seed": None},
        "fit": _FIT_KEYS,
    },
    "probe": {
        "out_dir": None,
        "corpus_dir": None,
        "manifest": None,
        "checkpoint_gl": None,
        "checkpoint_a": None,
        "head": None,
        "view": None,
        "lambda": None,
        "fit": _FIT_KEYS,
    },
    "eval": {
        "out_dir": None,
        "predictions": None,
        "corpus_dir": None,
        "manifest": None,
        "classifier": None,
        "view": None,
        "split": None,
        "k_list": None,
        "format": None,
        "rare_below": None,
        "frequent_above": None,
    },
    "gradcheck": {
        "out_dir": None,
        "objectives": None,
        "instances": None,
        "seed": None,
        "step": None,
        "tolerance": None,
        "corrupt_gradient": None,
    },
    "cluster-eval": {
        "out_dir": None,
        "corpus_dir": None,
        "checkpoint_gl": None,
        "noise": None,
        "min_views": None,
        "k": None,
        "seed": None,
        "max_iters": None,
    },
}


def _validate_keys(cfg: dict, schema: dict, path: str = "") -> None:
    for key, value in cfg.items():
        if key not in schema:
            raise InvalidConfigError(f"unknown config key: {path}{key}")
        sub = schema[key]
        if isinstance(sub, dict) and value is not None:
            if not isinstance(value, dict):
                raise InvalidConfigError(f"config key {path}{key} must be an object")
            _validate_keys(value, sub, path + key + ".")


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise InvalidConfigError(f"--set needs key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise InvalidConfigError(f"cannot descend into non-object at {part!r}")
    node[parts[-1]] = value


def _load_config(command: str, args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise InvalidConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"config file is not valid JSON: {exc}")
    for assignment in args.set or []:
        _apply_override(cfg, assignment)
    _validate_keys(cfg, SCHEMAS[command])
    return cfg


def _require(cfg: dict, key: str):
    if key not in cfg or cfg[key] is None:
        raise InvalidConfigError(f"missing required config key: {key}")
    return cfg[key]


def _write_resolved(out_dir: str, command: str, resolved: dict) -> None:
    io.ensure_dir(out_dir)
    path = os.path.join(out_dir, f"{command.replace('-', '_')}_config.json")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(resolved, sort_keys=True, separators=(",", ":")))
        fh.write("\n")


def _build_dataclass(cls, overrides: Optional[dict], what: str):
    overrides = dict(overrides or {})
    try:
        return cls(**overrides)
    except TypeError as exc:
        raise InvalidConfigError(f"bad {what} config: {exc}")


def cmd_gen_data(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    synth_cfg = _build_dataclass(SynthConfig, cfg.get("synth"), "synth")
    synth_cfg.validate()
    _write_resolved(out_dir, "gen-data", {"out_dir": out_dir, "synth": synth_cfg.__dict__})
    corpus = generate(synth_cfg)
    save_corpus(corpus, out_dir)
    stats = corpus_stats(corpus)
    stats["out_dir"] = out_dir
    return stats


def cmd_split(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    corpus_dir = _require(cfg, "corpus_dir")
    cell_deg = float(cfg.get("cell_deg", 0.1))
    test_fraction = float(cfg.get("test_fraction", 0.125))
    val_fraction = float(cfg.get("val_fraction", 0.125))
    proximity_m = float(cfg.get("proximity_m", 256.0))
    lambdas = cfg.get("lambdas", DEFAULT_LAMBDAS)
    seed = int(cfg.get("seed", 0))
    resolved = {
        "out_dir": out_dir,
        "corpus_dir": corpus_dir,
        "cell_deg": cell_deg,
        "test_fraction": test_fraction,
        "val_fraction": val_fraction,
        "proximity_m": proximity_m,
        "lambdas": lambdas,
        "seed": seed,
    }
    _write_resolved(out_dir, "split", resolved)

    records = read_observations(os.path.join(corpus_dir, "observations.jsonl"))
    blocks = {block_of(r.lat, r.lon, cell_deg) for r in records}
    rng = np.random.default_rng(seed)
    assignment = assign_blocks(blocks, rng, test_fraction, val_fraction)
    manifest = build_split(records, assignment, proximity_m, cell_deg)
    attach_lambda_subsets(manifest, lambdas, rng)
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return {
        "manifest": os.path.join(out_dir, "manifest.json"),
        "n_blocks": len(assignment),
        "block_fractions": manifest.block_fractions(),
        "observation_fractions": manifest.observation_fractions(),
        "n_labeled_train": len(manifest.labeled_train),
        "n_classes": len(manifest.class_universe),
        "lambda_sizes": {k: len(v) for k, v in manifest.lambda_subsets.items()},
    }


def _load_split_inputs(cfg):
    corpus = load_corpus(_require(cfg, "corpus_dir"))
    manifest = load_manifest(_require(cfg, "manifest"))
    return corpus, manifest


def cmd_pretrain(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    corpus_dir = _require(cfg, "corpus_dir")
    objective = cfg.get("objective", "standard")
    train_cfg = _build_dataclass(PretrainConfig, cfg.get("train"), "train")
    resolved = {
        "out_dir": out_dir,
        "corpus_dir": corpus_dir,
        "manifest": cfg.get("manifest"),
        "objective": objective,
        "train": train_cfg.__dict__,
    }
    _write_resolved(out_dir, "pretrain", resolved)

    corpus = load_corpus(corpus_dir)
    obs_ids = None
    if cfg.get("manifest"):
        manifest = load_manifest(cfg["manifest"])
        obs_ids = pipeline.train_pool_ids(manifest)
    result = train.pretrain(corpus, objective, train_cfg, obs_ids=obs_ids)

    meta = {
        "objective": objective,
        "tau": result.tau,
        "step": result.total_steps,
        "gate_w": result.loss_weight.w,
        "rng_state": result.rng_state,
    }
    train.save_encoder(os.path.join(out_dir, "encoder_gl"), result.encoder_gl, meta)
    train.save_encoder(os.path.join(out_dir, "encoder_a"), result.encoder_a, meta)
    log_path = os.path.join(out_dir, "train_log.jsonl")
    with open(log_path, "w", encoding="utf-8") as fh:
        for entry in result.history:
            fh.write(json.dumps(entry, sort_keys=True))
            fh.write("\n")
    return {
        "objective": objective,
        "epochs": len(result.history),
        "first_loss": result.history[0]["loss"],
        "final_loss": result.history[-1]["loss"],
        "gate": result.loss_weight.mix(),
        "encoder_gl": os.path.join(out_dir, "encoder_gl"),
        "encoder_a": os.path.join(out_dir, "encoder_a"),
        "log": log_path,
    }


def _subset_ids(manifest, cfg):
    lam = cfg.get("lambda")
    if lam is None:
        return manifest.labeled_train
    key = format_lambda(float(lam))
    if key not in manifest.lambda_subsets:
        raise InvalidConfigError(
            f"lambda {key} not in manifest (has {sorted(manifest.lambda_subsets)})"
        )
    return manifest.lambda_subsets[key]


def cmd_finetune(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    corpus, manifest = _load_split_inputs(cfg)
    view = cfg.get("view", "gl")
    fit_cfg = _build_dataclass(FitConfig, cfg.get("fit"), "fit")
    resolved = {
        "out_dir": out_dir,
        "corpus_dir": cfg.get("corpus_dir"),
        "manifest": cfg.get("manifest"),
        "checkpoint": cfg.get("checkpoint"),
        "view": view,
        "lambda": cfg.get("lambda"),
        "encoder": cfg.get("encoder") or {},
        "fit": fit_cfg.__dict__,
    }
    _write_resolved(out_dir, "finetune", resolved)

    subset = _subset_ids(manifest, cfg)
    class_list = pipeline.evaluation_class_list(corpus, manifest, subset)
    if not class_list:
        raise CrispkitError("no classes shared by the subset and both eval splits")
    train_set = pipeline.assemble_examples(corpus, manifest, "train", view, subset, class_list)
    val_set = pipeline.assemble_examples(corpus, manifest, "val", view, None, class_list)

    if cfg.get("checkpoint"):
        encoder, _ = train.load_encoder(cfg["checkpoint"])
    else:
        enc_cfg = cfg.get("encoder") or {}
        input_dim = train_set.x.shape[1]
        encoder = train.ToyEncoder.init(
            input_dim,
            int(enc_cfg.get("hidden_dim", 64)),
            int(enc_cfg.get("embed_dim", 32)),
            np.random.default_rng(int(enc_cfg.get("seed", 0))),
        )
    result = train.finetune(
        encoder, train_set.x, train_set.y, val_set.x, val_set.y,
        n_classes=len(class_list), config=fit_cfg,
    )
    result.classifier.classes = class_list
    ckpt = os.path.join(out_dir, "classifier")
    train.save_classifier(ckpt, result.classifier, meta={"view": view})
    return {
        "classifier": ckpt,
        "n_train_examples": int(train_set.x.shape[0]),
        "n_classes": len(class_list),
        "best_epoch": result.best_epoch,
        "best_val_top1": result.best_val_top1,
    }


def cmd_probe(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    corpus, manifest = _load_split_inputs(cfg)
    head = cfg.get("head", "linear")
    view = cfg.get("view", "gl")
    probe_defaults = {"batch_size": None, "epochs": 200, "base_lr": 0.5}
    fit_cfg = _build_dataclass(
        FitConfig, {**probe_defaults, **(cfg.get("fit") or {})}, "fit"
    )
    resolved = {
        "out_dir": out_dir,
        "corpus_dir": cfg.get("corpus_dir"),
        "manifest": cfg.get("manifest"),
        "checkpoint_gl": cfg.get("checkpoint_gl"),
        "checkpoint_a": cfg.get("checkpoint_a"),
        "head": head,
        "view": view,
        "lambda": cfg.get("lambda"),
        "fit": fit_cfg.__dict__,
    }
    _write_resolved(out_dir, "probe", resolved)

    subset = _subset_ids(manifest, cfg)
    class_list = pipeline.evaluation_class_list(corpus, manifest, subset)
    if not class_list:
        raise CrispkitError("no classes shared by the subset and both eval splits")

    if head == "linear":
        key = "checkpoint_gl" if view == "gl" else "checkpoint_a"
        encoder, _ = train.load_encoder(_require(cfg, key))
        outcome = pipeline.probe_encoder(
            corpus, manifest, encoder, subset, view=view, config=fit_cfg
        )
        return {
            "head": "linear",
            "view": view,
            "top1": outcome.top1,
            "macro_top1": outcome.macro_top1,
            "n_train_examples": outcome.n_train,
            "n_eval_examples": outcome.n_eval,
            "n_classes": outcome.n_classes,
        }
    if head == "moe":
        enc_gl, _ = train.load_encoder(_require(cfg, "checkpoint_gl"))
        enc_a, _ = train.load_encoder(_require(cfg, "checkpoint_a"))
        sets = {}
        for split, subset_ids in (("train", subset), ("test", None)):
            gl = pipeline.assemble_examples(corpus, manifest, split, "gl", subset_ids, class_list)
            aerial = pipeline.assemble_examples(corpus, manifest, split, "a", subset_ids, class_list)
            aerial_by_obs = {o: aerial.x[i] for i, o in enumerate(aerial.obs_ids)}
            x_a = np.stack([aerial_by_obs[o] for o in gl.obs_ids])
            sets[split] = (gl.x, x_a, gl.y)
        feat_gl = enc_gl.forward(sets["train"][0])
        feat_a = enc_a.forward(sets["train"][1])
        moe = train.fit_moe_head(feat_gl, feat_a, sets["train"][2], len(class_list), fit_cfg)
        logits = train.moe_forward(
            moe, enc_gl.forward(sets["test"][0]), enc_a.forward(sets["test"][1])
        )
        preds = PredictionSet(logits, sets["test"][2])
        io.write_arrays(
            os.path.join(out_dir, "moe_head"),
            {
                "proj_gl_w": moe.proj_gl_w,
                "proj_gl_b": moe.proj_gl_b,
                "proj_a_w": moe.proj_a_w,
                "proj_a_b": moe.proj_a_b,
                "gate": np.array([moe.gate]),
            },
            meta={"classes": list(class_list)},
        )
        return {
            "head": "moe",
            "top1": topk_accuracy(preds, 1),
            "macro_top1": topk_macro_accuracy(preds, 1),
            "gate": moe.mix(),
            "n_classes": len(class_list),
        }
    raise InvalidConfigError(f"unknown probe head {head!r}")


def _metric_grid(preds: PredictionSet, k_list, bins) -> dict:
    metrics: Dict[str, object] = {}
    for k in k_list:
        metrics[f"top{k}_accuracy"] = topk_accuracy(preds, k)
        metrics[f"top{k}_macro_accuracy"] = topk_macro_accuracy(preds, k)
    if preds.group_id is not None:
        metrics["eco_accuracy"] = eco_accuracy(preds, 1)
    if bins is not None:
        binned = binned_macro_accuracy(
            PredictionSet(preds.scores, preds.true_class, preds.group_id, bins), 1
        )
        for name, value in binned.items():
            metrics[f"top1_macro_{name}"] = value
    return metrics


def cmd_eval(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    k_list = cfg.get("k_list", [1, 5])
    fmt = cfg.get("format", "both")
    if fmt not in ("json", "csv", "both"):
        raise InvalidConfigError(f"unknown report format {fmt!r}")
    resolved = {
        "out_dir": out_dir,
        "predictions": cfg.get("predictions"),
        "corpus_dir": cfg.get("corpus_dir"),
        "manifest": cfg.get("manifest"),
        "classifier": cfg.get("classifier"),
        "view": cfg.get("view", "gl"),
        "split": cfg.get("split", "test"),
        "k_list": k_list,
        "format": fmt,
        "rare_below": cfg.get("rare_below", 200),
        "frequent_above": cfg.get("frequent_above", 700),
    }
    _write_resolved(out_dir, "eval", resolved)

    bins = None
    if cfg.get("predictions"):
        with open(cfg["predictions"], "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        preds = PredictionSet(
            np.asarray(doc["scores"], dtype=np.float64),
            np.asarray(doc["true_class"], dtype=np.int64),
            group_id=np.asarray(doc["group_id"], dtype=np.int64) if "group_id" in doc else None,
        )
        if "class_counts" in doc:
            bins = bin_by_frequency(
                {int(k): int(v) for k, v in doc["class_counts"].items()},
                resolved["rare_below"],
                resolved["frequent_above"],
            )
    else:
        corpus, manifest = _load_split_inputs(cfg)
        classifier, meta = train.load_classifier(_require(cfg, "classifier"))
        view = resolved["view"]
        split = resolved["split"]
        class_list = classifier.classes
        if not class_list:
            raise CrispkitError("classifier checkpoint carries no class list")
        sample_set = pipeline.assemble_examples(corpus, manifest, split, view, None, class_list)
        scores = classifier.scores(sample_set.x)
        preds = PredictionSet(scores, sample_set.y, group_id=sample_set.group_id)
        counts: Dict[int, int] = {}
        for split_name, subset in (("train", manifest.labeled_train), ("val", None), ("test", None)):
            part = pipeline.assemble_examples(corpus, manifest, split_name, view, subset, class_list)
            for dense in part.y:
                counts[int(dense)] = counts.get(int(dense), 0) + 1
        if counts:
            bins = bin_by_frequency(counts, resolved["rare_below"], resolved["frequent_above"])
            preds = PredictionSet(preds.scores, preds.true_class, preds.group_id, bins)

    metrics = _metric_grid(preds, k_list, bins)
    outputs = {}
    if fmt in ("json", "both"):
        path = os.path.join(out_dir, "report.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(emit_report(metrics, "json"))
            fh.write("\n")
        outputs["report_json"] = path
    if fmt in ("csv", "both"):
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(emit_report(metrics, "csv"))
        outputs["report_csv"] = path
    metrics.update(outputs)
    return metrics


def cmd_gradcheck(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    objectives = cfg.get("objectives", list(gradcheck_mod.CHECKED_OBJECTIVES))
    instances = int(cfg.get("instances", 50))
    seed = int(cfg.get("seed", 0))
    step = float(cfg.get("step", 1e-5))
    tolerance = float(cfg.get("tolerance", 1e-5))
    corrupt = bool(cfg.get("corrupt_gradient", False))
    resolved = {
        "out_dir": out_dir,
        "objectives": objectives,
        "instances": instances,
        "seed": seed,
        "step": step,
        "tolerance": tolerance,
        "corrupt_gradient": corrupt,
    }
    _write_resolved(out_dir, "gradcheck", resolved)

    reports = gradcheck_mod.check_all(
        objectives, n_instances=instances, seed=seed, step=step,
        tolerance=tolerance, corrupt_gradient=corrupt,
    )
    doc = {
        "objectives": {
            r.objective: {
                "instances": r.instances,
                "max_rel_err": r.max_rel_err,
                "max_w_err": r.max_w_err,
                "pass": r.passed,
            }
            for r in reports
        },
        "overall_pass": all(r.passed for r in reports),
    }
    with open(os.path.join(out_dir, "gradcheck.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")))
        fh.write("\n")
    if not doc["overall_pass"]:
        raise CrispkitError(
            "gradient check failed: "
            + ", ".join(f"{r.objective}={r.max_rel_err:.3e}" for r in reports if not r.passed)
        )
    return doc


def cmd_cluster_eval(cfg: dict) -> dict:
    out_dir = _require(cfg, "out_dir")
    corpus = load_corpus(_require(cfg, "corpus_dir"))
    min_views = int(cfg.get("min_views", 9))
    seed = int(cfg.get("seed", 0))
    use_noise = bool(cfg.get("noise", False))
    resolved = {
        "out_dir": out_dir,
        "corpus_dir": cfg.get("corpus_dir"),
        "checkpoint_gl": cfg.get("checkpoint_gl"),
        "noise": use_noise,
        "min_views": min_views,
        "k": cfg.get("k"),
        "seed": seed,
        "max_iters": int(cfg.get("max_iters", 300)),
    }
    _write_resolved(out_dir, "cluster-eval", resolved)

    encoder = None
    if not use_noise:
        encoder, _ = train.load_encoder(_require(cfg, "checkpoint_gl"))
    emb, labels, n_obs = pipeline.multiview_ground_embeddings(
        corpus, encoder, min_views, rng=np.random.default_rng(seed)
    )
    if n_obs < 2:
        raise CrispkitError(
            f"only {n_obs} observations have >= {min_views} ground views; nothing to cluster"
        )
    k = int(cfg.get("k") or n_obs)
    assignments, _, inertia = kmeans_pp(
        emb, KMeansConfig(k=k, seed=seed, max_iters=resolved["max_iters"])
    )
    agreement = clustering_agreement(ClusteringPair(assignments, labels))
    doc = dict(agreement)
    doc.update(
        {"n_points": int(emb.shape[0]), "n_observations": n_obs, "k": k, "inertia": inertia}
    )
    with open(os.path.join(out_dir, "cluster_report.json"), "w", encoding="utf-8") as fh:
        fh.write(emit_report(doc, "json"))
        fh.write("\n")
    return doc


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split": cmd_split,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "probe": cmd_probe,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "cluster-eval": cmd_cluster_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crispkit",
        description="Desk-scale contrastive ground/aerial pre-training pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", help="JSON config file")
        cmd.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="override a (dotted) config key; value parsed as JSON when possible",
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.command, args)
        result = COMMANDS[args.command](cfg)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CrispkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
