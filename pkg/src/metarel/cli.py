"""Command-line entry point: ``metarel simulate|train|evaluate|dump-scores``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .artifacts import (append_jsonl, check_schema_fit, load_model, save_model, sha256_file,
                        write_json, write_jsonl)
from .data import SimConfig, load_corpus, load_embeddings, simulate_ds, write_corpus
from .elite import score_sp
from .errors import InputError, MetarelError
from .metrics import micro_prf
from .trainer import MODES, Trainer, TrainConfig

log = logging.getLogger("metarel")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _read_config(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc.msg}", line=exc.lineno) from None
    if not isinstance(obj, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return obj


def _hashes(paths) -> dict:
    return {str(p): sha256_file(p) for p in paths if Path(p).is_file()}


def _corpus_files(path: Path) -> list:
    return sorted(p for p in path.iterdir() if p.suffix in (".json", ".jsonl"))


def cmd_simulate(args) -> int:
    raw = _read_config(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SimConfig.from_dict(raw)
    out = Path(args.out)
    started = _now()
    corpus = simulate_ds(cfg)
    written = write_corpus(out, corpus)
    write_json(out / "manifest.json", {
        "command": "simulate",
        "version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "outputs": _hashes(written),
        "counts": {name: len(corpus.split(name)) for name in ("train", "ref", "validation", "test")},
        "started": started,
        "finished": _now(),
    })
    print(f"wrote corpus to {out}")
    return 0


def cmd_train(args) -> int:
    raw = _read_config(args.config)
    cfg = TrainConfig.from_dict(raw).with_overrides(mode=args.mode, seed=args.seed)
    corpus_dir = Path(args.corpus)
    corpus = load_corpus(corpus_dir)
    emb = None
    if args.embeddings:
        emb = load_embeddings(args.embeddings, cfg.word_dim, cfg.position_dim, cfg.max_rel_distance,
                              rng=np.random.default_rng(cfg.seed))
    out = Path(args.out)
    score_fh = weight_fh = None

    def on_scores(epoch, states):
        for i in sorted(states):
            append_jsonl(score_fh, dict(states[i].to_json(), epoch=epoch))

    def on_step(epoch, rep):
        append_jsonl(weight_fh, dict(rep.to_json(), epoch=epoch))

    # constructing the trainer validates config and reference coverage
    trainer = Trainer(cfg, corpus, emb,
                      on_step=on_step if args.dump_weights and cfg.mode != "uniform" else None,
                      on_scores=on_scores if args.dump_scores and cfg.mode != "uniform" else None)
    out.mkdir(parents=True, exist_ok=True)
    inputs = _corpus_files(corpus_dir) + ([Path(args.embeddings)] if args.embeddings else [])
    manifest = {
        "command": "train",
        "version": __version__,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "corpus": str(corpus_dir),
        "inputs": _hashes(inputs),
        "started": _now(),
        "finished": None,
    }
    write_json(out / "manifest.json", manifest)
    try:
        if trainer.on_scores:
            score_fh = open(out / "scores.jsonl", "w", encoding="utf-8", newline="\n")
        if trainer.on_step:
            weight_fh = open(out / "weights.jsonl", "w", encoding="utf-8", newline="\n")
        trainer.pretrain()
        with open(out / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as mfh:
            for epoch in range(1, cfg.max_epochs + 1):
                append_jsonl(mfh, trainer.run_epoch(epoch).to_json())
    finally:
        for fh in (score_fh, weight_fh):
            if fh is not None:
                fh.close()
    save_model(out / "params.bin", trainer.model, trainer.params)
    manifest["finished"] = _now()
    manifest["outputs"] = _hashes(sorted(out.glob("*.jsonl")) + [out / "params.bin"])
    write_json(out / "manifest.json", manifest)
    last = trainer.history[-1].validation
    print(f"trained {cfg.max_epochs} epochs ({cfg.mode}); "
          f"validation F1 {last.f1:.4f}" if last else f"trained {cfg.max_epochs} epochs ({cfg.mode})")
    return 0


def _read_predictions(path, schema) -> dict:
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                preds[rec["id"]] = schema.id_of(rec["relation"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputError(f"bad prediction record ({exc})", line=n) from None
    return preds


def cmd_evaluate(args) -> int:
    corpus = load_corpus(args.corpus)
    instances = corpus.split(args.split)
    schema = corpus.schema
    if args.predictions:
        preds = _read_predictions(args.predictions, schema)
        missing = [x.id for x in instances if x.id not in preds]
        if missing:
            raise InputError("no prediction", instance_id=missing[0])
        pred = [preds[x.id] for x in instances]
    elif args.model:
        model, params = load_model(args.model)
        check_schema_fit(model, len(schema))
        pred = model.predict_batch(params, model.prepare(instances))[0] if instances else []
    else:
        raise MetarelError("evaluate needs --model or --predictions")
    metrics = micro_prf(pred, [x.label for x in instances], schema.none_id)
    text = json.dumps(metrics.to_json(), sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    return 0


def cmd_dump_scores(args) -> int:
    corpus = load_corpus(args.corpus)
    model, params = load_model(args.model)
    check_schema_fit(model, len(corpus.schema))
    instances = corpus.split(args.split)
    sp = score_sp(model, params, instances)
    rows = [{"id": x.id, "relation": corpus.schema.names[x.label], "sp": sp[x.id]} for x in instances]
    if args.out:
        write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="metarel", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a synthetic distantly-labelled corpus")
    s.add_argument("--config", help="JSON simulator config")
    s.add_argument("--out", required=True, help="corpus directory to write")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a classifier on a corpus directory")
    t.add_argument("--config", help="JSON training config")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--seed", type=int)
    t.add_argument("--embeddings", help="whitespace-separated word vector file")
    t.add_argument("--dump-scores", action="store_true", help="write per-epoch confidence states")
    t.add_argument("--dump-weights", action="store_true", help="write per-step instance weights")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="micro P/R/F1 of a model or prediction file on a split")
    e.add_argument("--corpus", required=True)
    e.add_argument("--model", help="parameter file written by train")
    e.add_argument("--predictions", help="JSON-lines file of {id, relation}")
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="also write the metrics JSON here")
    e.set_defaults(func=cmd_evaluate)

    d = sub.add_parser("dump-scores", help="write sp confidence scores of a trained model")
    d.add_argument("--corpus", required=True)
    d.add_argument("--model", required=True)
    d.add_argument("--split", default="train")
    d.add_argument("--out")
    d.set_defaults(func=cmd_dump_scores)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MetarelError, ValueError, OSError) as exc:
        print(f"metarel {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
