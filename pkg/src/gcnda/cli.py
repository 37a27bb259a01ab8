"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import harness as H
from . import model as M
from .config import MODEL_NAMES, ConfigError, ExperimentConfig, build_config
from .gradcheck import TOLERANCE, run_suite
from .text import Vocabulary, encode_batch, load_dataset, load_presplit, tokenize, write_jsonl
from .training import evaluate

log = logging.getLogger("gcnda")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("experiment config (CLI > --config file > defaults)")
    g.add_argument("--config", help="JSON object or key = value file")
    g.add_argument("--gate", choices=["glu", "gtu", "gtru", "none"])
    g.add_argument("--kernel-sizes", help="comma separated, e.g. 3,4,5")
    for flag, typ in [
        ("--filters", int),
        ("--embed-dim", int),
        ("--max-len", int),
        ("--vocab-size", int),
        ("--dropout-embed", float),
        ("--dropout-dense", float),
        ("--batch-size", int),
        ("--epochs", int),
        ("--patience", int),
        ("--rho", float),
        ("--eps", float),
        ("--seed", int),
        ("--min-freq", int),
        ("--n-seeds", int),
    ]:
        g.add_argument(flag, type=typ)
    g.add_argument("--train-embeddings", action="store_true", default=None)
    g.add_argument("--embeddings", help="GloVe-style text file; random vectors when omitted")
    g.add_argument("--out", dest="out_dir", help="output directory (default: $GCN_OUT_DIR or ./runs)")


_CONFIG_KEYS = [
    "gate", "kernel_sizes", "filters", "embed_dim", "max_len", "vocab_size", "dropout_embed", "dropout_dense",
    "batch_size", "epochs", "patience", "rho", "eps", "seed", "min_freq", "n_seeds", "train_embeddings",
    "embeddings", "out_dir",
]


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {k: getattr(args, k) for k in _CONFIG_KEYS if getattr(args, k, None) is not None}
    cfg = build_config(overrides, args.config)
    if cfg.out_dir is None:
        cfg.out_dir = os.environ.get("GCN_OUT_DIR", "runs")
    return cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_domain(path: str, cfg: ExperimentConfig):
    return load_dataset(path, Path(path).stem, seed=cfg.seed)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_train(args, cfg: ExperimentConfig) -> int:
    if args.val or args.test:
        if not (args.val and args.test):
            raise UsageError("--val and --test must be given together")
        source = load_presplit(args.source, args.val, args.test, Path(args.source).stem)
    else:
        source = _load_domain(args.source, cfg)
    result = H.train_source(source, cfg.gate, cfg, cfg.seed)
    out = _out_dir(cfg)
    M.save_checkpoint(result.params, out / "model.gcnc")
    (out / "vocab.json").write_text(result.vocab.to_json(), encoding="utf-8")
    (out / "train_report.json").write_text(result.report.to_json(), encoding="utf-8")
    (out / "train_report.csv").write_text(result.report.to_csv(), encoding="utf-8")
    inputs = [args.source] + [p for p in (args.val, args.test) if p]
    H.write_manifest(out / "manifest.json", "train", cfg, inputs, {"argv": sys.argv[1:], "seeds": [cfg.seed]})
    rep = result.report
    best = rep.epochs[rep.best_epoch - 1]
    print(f"trained {cfg.gate} on {source.domain}: best epoch {rep.best_epoch}/{rep.stopped_epoch}, "
          f"val loss {best.val_loss:.4f}, val acc {100 * best.val_accuracy:.2f}%")
    print(f"checkpoint: {out / 'model.gcnc'}")
    return EXIT_OK


def _load_checkpoint_and_vocab(args) -> tuple[M.GcnParams, Vocabulary]:
    params = M.load_checkpoint(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).with_name("vocab.json")
    vocab = Vocabulary.from_json(vocab_path.read_text(encoding="utf-8"))
    expected = params.meta.get("vocab_hash")
    if expected and expected != vocab.digest():
        raise ValueError(f"{vocab_path} does not match the vocabulary the checkpoint was trained with")
    return params, vocab


def cmd_eval(args, cfg: ExperimentConfig) -> int:
    params, vocab = _load_checkpoint_and_vocab(args)
    target = _load_domain(args.target, cfg)
    max_len = int(params.meta.get("max_len", cfg.max_len))
    examples = target.split(args.split)
    split = H.Split(encode_batch([ex.tokens for ex in examples], vocab, max_len), [ex.label for ex in examples])
    acc, loss = evaluate(params, split)
    out = _out_dir(cfg)
    result = {"target": target.domain, "split": args.split, "accuracy": round(100 * acc, 2), "loss": loss}
    (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    print(f"{target.domain} ({args.split}): accuracy {100 * acc:.2f}%, loss {loss:.4f}")
    return EXIT_OK


def cmd_matrix(args, cfg: ExperimentConfig) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    bad = [m for m in models if m not in MODEL_NAMES]
    if bad or not models:
        raise UsageError(f"unknown model(s) {bad}; choose from {', '.join(MODEL_NAMES)}")
    if len(args.domains) < 2:
        raise UsageError("--domains needs at least two corpora")
    datasets = [_load_domain(p, cfg) for p in args.domains]
    if len({d.domain for d in datasets}) != len(datasets):
        raise UsageError("domain files must have distinct names")
    seeds = list(range(cfg.seed, cfg.seed + cfg.n_seeds))
    matrix = H.run_matrix(datasets, models, cfg, seeds)
    out = _out_dir(cfg)
    (out / "matrix.csv").write_text(matrix.to_csv(), encoding="utf-8")
    timing = H.timing_report(matrix.epoch_seconds)
    (out / "timing.csv").write_text(H.timing_csv(timing), encoding="utf-8")
    H.write_manifest(out / "manifest.json", "matrix", cfg, args.domains, {"argv": sys.argv[1:], "models": models, "seeds": seeds})
    print(matrix.table(models))
    if timing:
        print()
        print(H.timing_table(timing))
    if matrix.failed:
        for r in matrix.rows:
            if r.accuracy is None:
                print(f"failed: {r.model} {r.source}->{r.target}: {r.error}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_synth_gen(args, cfg: ExperimentConfig) -> int:
    spec = H.SyntheticCorpusSpec(domains=args.domains, mix_ratio=args.mix_ratio, size=args.size, seed=cfg.seed)
    out = _out_dir(cfg)
    for name, ds in H.generate_synthetic(spec).items():
        write_jsonl(ds, out / f"{name}.jsonl")
        print(out / f"{name}.jsonl")
    (out / "lexicons.json").write_text(json.dumps(spec.lexicons(), indent=2) + "\n", encoding="utf-8")
    H.write_manifest(out / "manifest.json", "synth-gen", cfg, [], {"argv": sys.argv[1:], "seeds": [cfg.seed]})
    return EXIT_OK


def cmd_inspect_gates(args, cfg: ExperimentConfig) -> int:
    params, vocab = _load_checkpoint_and_vocab(args)
    if not params.gate.gated:
        raise UsageError("inspect-gates needs a gated checkpoint (glu, gtu or gtru)")
    tokens = tokenize(args.text)
    max_len = int(params.meta.get("max_len", cfg.max_len))
    out = _out_dir(cfg)
    paths = H.export_gate_heatmap(params, tokens, vocab, max_len, out / "gates")
    maps = M.gate_activations(params, encode_batch([tokens], vocab, max_len), tokens)
    for gm in maps:
        print(f"h={gm.h}")
        for gram, mean in list(zip(gm.ngrams, gm.mean))[: max(len(tokens), 1)]:
            print(f"  {gram:<40} {mean:.4f}")
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_grad_check(args, cfg: ExperimentConfig) -> int:
    results = run_suite(seeds=tuple(range(args.seeds)))
    for name, err in results.items():
        print(f"{name:<32} {err:.3e}  {'ok' if err <= TOLERANCE else 'FAIL'}")
    worst = max(results.values())
    print(f"max relative error: {worst:.3e} (tolerance {TOLERANCE:g})")
    return EXIT_OK if worst <= TOLERANCE else EXIT_FAILURE


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gcnda", description="Gated CNNs for cross-domain sentiment classification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on one source domain")
    p.add_argument("--source", required=True, help="JSON-lines corpus (split 64/16/20 unless --val/--test given)")
    p.add_argument("--val")
    p.add_argument("--test")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a target corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--vocab", help="vocab.json (default: next to the checkpoint)")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="every source->target pair for every model")
    p.add_argument("--domains", nargs="+", required=True)
    p.add_argument("--models", default="glu,gtu,gtru,none,bow,tfidf")
    _add_config_flags(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("synth-gen", help="write a synthetic domain-shift corpus")
    p.add_argument("--domains", nargs="+", default=["books", "electronics"])
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--mix-ratio", type=float, default=0.5)
    _add_config_flags(p)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("inspect-gates", help="export gate activations for one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--vocab")
    _add_config_flags(p)
    p.set_defaults(func=cmd_inspect_gates)

    p = sub.add_parser("grad-check", help="finite-difference check of every backward pass")
    p.add_argument("--seeds", type=int, default=3)
    _add_config_flags(p)
    p.set_defaults(func=cmd_grad_check)
    return parser


def _error(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return args.func(args, cfg)
    except (ConfigError, UsageError) as exc:
        _error("usage", exc)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        log.debug("failure", exc_info=True)
        _error("runtime", exc)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
