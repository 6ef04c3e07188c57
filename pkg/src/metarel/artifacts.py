"""Run artifacts: parameter files, manifests and JSON-lines logs."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import StructuralError
from .nn_core import Layout, ParamVec
from .pcnn import PCNN, EmbeddingTable, PcnnConfig

PARAM_FORMAT = "metarel-params/1"
_DTYPE = np.dtype("<f8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_jsonl(path, rows: Iterable[dict]):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def append_jsonl(fh, row: dict):
    fh.write(json.dumps(row, sort_keys=True) + "\n")
    fh.flush()


def save_model(path, model: PCNN, params: ParamVec):
    """One JSON header line, then little-endian float64 data.

    The data holds the parameter vector followed by any frozen arrays listed
    under ``frozen`` in the header (the word table when embeddings are fixed).
    """
    if params.layout != model.layout:
        raise StructuralError("parameter layout does not belong to this model")
    emb = model.emb
    vocab = [None] * len(emb.vocab)
    for tok, i in emb.vocab.items():
        vocab[i] = tok
    frozen = [] if "word" in model.layout else [("word", emb.vectors)]
    header = {
        "format": PARAM_FORMAT,
        "layout": model.layout.to_json(),
        "pcnn": {
            "n_relations": model.cfg.n_relations,
            "n_filters": model.cfg.n_filters,
            "window": model.cfg.window,
            "word_dim": model.cfg.word_dim,
            "position_dim": model.cfg.position_dim,
            "train_embeddings": model.cfg.train_embeddings,
        },
        "max_rel_distance": emb.max_rel_distance,
        "vocab": vocab,
        "frozen": [{"name": n, "shape": list(a.shape)} for n, a in frozen],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.data.astype(_DTYPE).tobytes())
        for _, arr in frozen:
            fh.write(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())


def load_model(path) -> tuple[PCNN, ParamVec]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise StructuralError(f"{path}: unreadable parameter header ({exc.msg})") from None
    if header.get("format") != PARAM_FORMAT:
        raise StructuralError(f"{path}: not a {PARAM_FORMAT} file")
    layout = Layout.from_json(header["layout"])
    frozen_sizes = [int(np.prod(f["shape"])) for f in header["frozen"]]
    expected = (layout.size + sum(frozen_sizes)) * _DTYPE.itemsize
    if len(body) != expected:
        raise StructuralError(f"{path}: expected {expected} data bytes, found {len(body)}")
    flat = np.frombuffer(body, dtype=_DTYPE).astype(np.float64)
    params = ParamVec(flat[:layout.size].copy(), layout)
    arrays, off = {}, layout.size
    for f, n in zip(header["frozen"], frozen_sizes):
        arrays[f["name"]] = flat[off:off + n].reshape(f["shape"]).copy()
        off += n
    vectors = params.view("word").copy() if "word" in layout else arrays["word"]
    vocab = {tok: i for i, tok in enumerate(header["vocab"])}
    emb = EmbeddingTable(vocab, vectors, params.view("head_pos").copy(),
                         params.view("tail_pos").copy(), header["max_rel_distance"])
    model = PCNN(PcnnConfig(**header["pcnn"]), emb)
    if model.layout != layout:
        raise StructuralError(f"{path}: header layout does not match its model configuration")
    return model, params


def check_schema_fit(model: PCNN, n_relations: int):
    if model.cfg.n_relations != n_relations:
        raise StructuralError(
            f"model predicts {model.cfg.n_relations} relations but the schema has {n_relations}")
