"""Piecewise convolutional relation classifier with hand-written backprop.

The network is: word embedding ++ two relative-position embeddings, a single
convolution over the token axis (zero padded so every token gets an output),
max pooling inside the three segments delimited by the two entities, tanh,
then a linear softmax layer.

Everything is computed on padded batches so that per-example gradients of a
whole mini-batch come out of one pass as a ``(batch, n_params)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError, StructuralError
from .nn_core import GradVec, Layout, ParamVec

PAD = "<pad>"
UNK = "<unk>"
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Instance:
    id: str
    tokens: tuple
    head: tuple  # inclusive (start, end)
    tail: tuple
    label: int
    gold_label: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "head", tuple(int(v) for v in self.head))
        object.__setattr__(self, "tail", tuple(int(v) for v in self.tail))

    @property
    def is_noisy(self) -> bool:
        return self.gold_label is not None and self.gold_label != self.label


@dataclass(frozen=True)
class RelationSchema:
    names: tuple
    none_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"relation names are not unique: {self.names}")
        if not 0 <= self.none_id < len(self.names):
            raise ConfigError(f"none_id {self.none_id} out of range")

    def __len__(self):
        return len(self.names)

    @property
    def positive_ids(self) -> list[int]:
        return [r for r in range(len(self.names)) if r != self.none_id]

    def id_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InputError(f"unknown relation {name!r}") from None


@dataclass
class EmbeddingTable:
    """Word vectors plus one relative-position table per entity.

    Rows 0 and 1 of ``vectors`` are the reserved padding and unknown tokens.
    """

    vocab: dict
    vectors: np.ndarray
    head_positions: np.ndarray
    tail_positions: np.ndarray
    max_rel_distance: int = 30
    duplicates: int = 0

    @property
    def word_dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def position_dim(self) -> int:
        return self.head_positions.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.word_dim + 2 * self.position_dim

    def token_id(self, token: str) -> int:
        return self.vocab.get(token, 1)

    @classmethod
    def random(cls, tokens: Sequence[str], word_dim: int, position_dim: int,
               max_rel_distance: int = 30, rng=None, scale: float = 0.1) -> "EmbeddingTable":
        rng = np.random.default_rng(rng)
        vocab = {PAD: 0, UNK: 1}
        for tok in tokens:
            if tok not in vocab:
                vocab[tok] = len(vocab)
        vectors = rng.uniform(-scale, scale, size=(len(vocab), word_dim))
        return cls.with_positions(vocab, vectors, position_dim, max_rel_distance, rng, scale)

    @classmethod
    def with_positions(cls, vocab, vectors, position_dim, max_rel_distance=30, rng=None,
                       scale: float = 0.1) -> "EmbeddingTable":
        rng = np.random.default_rng(rng)
        n_pos = 2 * max_rel_distance + 1
        head = rng.uniform(-scale, scale, size=(n_pos, position_dim))
        tail = rng.uniform(-scale, scale, size=(n_pos, position_dim))
        return cls(dict(vocab), np.asarray(vectors, dtype=np.float64), head, tail, max_rel_distance)


@dataclass(frozen=True)
class PcnnConfig:
    n_relations: int
    n_filters: int = 230
    window: int = 3
    word_dim: int = 50
    position_dim: int = 5
    train_embeddings: bool = True

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be a positive odd number, got {self.window}")
        if self.n_filters < 1:
            raise ConfigError("n_filters must be >= 1")
        if self.n_relations < 2:
            raise ConfigError("need at least two relations")


def relative_distance(position: int, span: tuple) -> int:
    """Signed distance from a token to an entity span; 0 inside the span."""
    start, end = span
    if position < start:
        return position - start
    if position > end:
        return position - end
    return 0


def segment_bounds(head: tuple, tail: tuple) -> tuple[int, int]:
    """End tokens of the left-most and the right-most entity."""
    left, right = sorted([head, tail])
    return left[1], right[1]


def check_instance(inst: Instance, n_relations: Optional[int] = None):
    n = len(inst.tokens)
    if n == 0:
        raise InputError("empty token list", instance_id=inst.id)
    for name, (s, e) in (("head", inst.head), ("tail", inst.tail)):
        if not 0 <= s <= e < n:
            raise InputError(f"{name} span [{s},{e}] outside {n} tokens", instance_id=inst.id)
    (hs, he), (ts, te) = inst.head, inst.tail
    if not (he < ts or te < hs):
        raise InputError("head and tail spans overlap", instance_id=inst.id)
    if n_relations is not None:
        for lab in (inst.label, inst.gold_label):
            if lab is not None and not 0 <= lab < n_relations:
                raise InputError(f"relation id {lab} outside schema", instance_id=inst.id)


def encode(inst: Instance, emb: EmbeddingTable) -> np.ndarray:
    """Feature matrix with one row per token: word ++ head-position ++ tail-position."""
    check_instance(inst)
    m = emb.max_rel_distance
    rows = []
    for i, tok in enumerate(inst.tokens):
        dh = np.clip(relative_distance(i, inst.head), -m, m) + m
        dt = np.clip(relative_distance(i, inst.tail), -m, m) + m
        rows.append(np.concatenate([emb.vectors[emb.token_id(tok)],
                                    emb.head_positions[dh], emb.tail_positions[dt]]))
    return np.vstack(rows)


@dataclass
class Encoded:
    """Index arrays for a padded batch of instances."""

    tokens: np.ndarray      # (N, T) word rows
    head_pos: np.ndarray    # (N, T) rows of the head position table
    tail_pos: np.ndarray    # (N, T)
    segments: np.ndarray    # (N, T) in {0, 1, 2}; -1 past the sentence end
    lengths: np.ndarray     # (N,)
    labels: np.ndarray      # (N,)
    ids: list = field(default_factory=list)

    def __len__(self):
        return self.tokens.shape[0]

    def take(self, idx) -> "Encoded":
        idx = np.asarray(idx, dtype=np.int64)
        t = int(self.lengths[idx].max()) if idx.size else 1
        return Encoded(self.tokens[idx, :t], self.head_pos[idx, :t], self.tail_pos[idx, :t],
                       self.segments[idx, :t], self.lengths[idx], self.labels[idx],
                       [self.ids[i] for i in idx])

    def with_labels(self, labels) -> "Encoded":
        return Encoded(self.tokens, self.head_pos, self.tail_pos, self.segments, self.lengths,
                       np.asarray(labels, dtype=np.int64), list(self.ids))

    @staticmethod
    def concat(parts: Sequence["Encoded"]) -> "Encoded":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise StructuralError("cannot concatenate an empty list of batches")
        t = max(p.tokens.shape[1] for p in parts)

        def pad(a, fill):
            return np.pad(a, ((0, 0), (0, t - a.shape[1])), constant_values=fill)

        return Encoded(np.vstack([pad(p.tokens, 0) for p in parts]),
                       np.vstack([pad(p.head_pos, 0) for p in parts]),
                       np.vstack([pad(p.tail_pos, 0) for p in parts]),
                       np.vstack([pad(p.segments, -1) for p in parts]),
                       np.concatenate([p.lengths for p in parts]),
                       np.concatenate([p.labels for p in parts]),
                       [i for p in parts for i in p.ids])


class PCNN:
    """Parameter layout plus forward/backward passes for the classifier.

    With ``train_embeddings`` the word table is part of the parameter vector;
    otherwise it is read from ``emb`` and receives no gradient.  The position
    tables are always trained.
    """

    def __init__(self, cfg: PcnnConfig, emb: EmbeddingTable):
        if emb.word_dim != cfg.word_dim or emb.position_dim != cfg.position_dim:
            raise StructuralError(
                f"embedding dims ({emb.word_dim}, {emb.position_dim}) do not match config "
                f"({cfg.word_dim}, {cfg.position_dim})")
        self.cfg = cfg
        self.emb = emb
        d = emb.feature_dim
        spec = []
        if cfg.train_embeddings:
            spec.append(("word", emb.vectors.shape))
        spec += [
            ("head_pos", emb.head_positions.shape),
            ("tail_pos", emb.tail_positions.shape),
            ("conv_w", (cfg.window * d, cfg.n_filters)),
            ("conv_b", (cfg.n_filters,)),
            ("out_w", (3 * cfg.n_filters, cfg.n_relations)),
            ("out_b", (cfg.n_relations,)),
        ]
        self.layout = Layout(spec)

    # -- parameters ---------------------------------------------------------

    def init_params(self, rng=None, scale: float = 0.1) -> ParamVec:
        """Uniform(-scale, scale) weights; embedding slots copied from the table."""
        rng = np.random.default_rng(rng)
        p = ParamVec.zeros(self.layout)
        for slot in self.layout.slots:
            p.view(slot.name)[...] = rng.uniform(-scale, scale, size=slot.shape)
        if "word" in self.layout:
            p.view("word")[...] = self.emb.vectors
        p.view("head_pos")[...] = self.emb.head_positions
        p.view("tail_pos")[...] = self.emb.tail_positions
        return p

    def zero_params(self) -> ParamVec:
        return ParamVec.zeros(self.layout)

    def _word_table(self, params: ParamVec) -> np.ndarray:
        return params.view("word") if "word" in self.layout else self.emb.vectors

    # -- encoding -----------------------------------------------------------

    def prepare(self, instances: Sequence[Instance]) -> Encoded:
        """Turn instances into padded index arrays (validates every instance)."""
        n = len(instances)
        t = max((len(x.tokens) for x in instances), default=1)
        m = self.emb.max_rel_distance
        tokens = np.zeros((n, t), dtype=np.int64)
        head = np.zeros((n, t), dtype=np.int64)
        tail = np.zeros((n, t), dtype=np.int64)
        seg = np.full((n, t), -1, dtype=np.int64)
        lengths = np.zeros(n, dtype=np.int64)
        labels = np.zeros(n, dtype=np.int64)
        for b, inst in enumerate(instances):
            check_instance(inst, self.cfg.n_relations)
            L = len(inst.tokens)
            pos = np.arange(L)
            tokens[b, :L] = [self.emb.token_id(tok) for tok in inst.tokens]
            for out, (s, e) in ((head, inst.head), (tail, inst.tail)):
                d = np.where(pos < s, pos - s, np.where(pos > e, pos - e, 0))
                out[b, :L] = np.clip(d, -m, m) + m
            e1, e2 = segment_bounds(inst.head, inst.tail)
            seg[b, :L] = np.where(pos <= e1, 0, np.where(pos <= e2, 1, 2))
            lengths[b] = L
            labels[b] = inst.label
        return Encoded(tokens, head, tail, seg, lengths, labels, [x.id for x in instances])

    def features(self, params: ParamVec, enc: Encoded) -> np.ndarray:
        """(N, T, D) inputs; rows past a sentence's end are zero."""
        x = np.concatenate([self._word_table(params)[enc.tokens],
                            params.view("head_pos")[enc.head_pos],
                            params.view("tail_pos")[enc.tail_pos]], axis=-1)
        x[enc.segments < 0] = 0.0
        return x

    # -- forward / backward -------------------------------------------------

    def _windows(self, x: np.ndarray) -> np.ndarray:
        n, t, d = x.shape
        w = self.cfg.window
        p = (w - 1) // 2
        xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
        return np.concatenate([xp[:, k:k + t] for k in range(w)], axis=-1)

    def _forward(self, params: ParamVec, x: np.ndarray, segments: np.ndarray):
        z = self._windows(x)                                    # (N, T, wD)
        conv = z @ params.view("conv_w") + params.view("conv_b")  # (N, T, F)
        n, t, f = conv.shape
        pooled = np.empty((n, 3, f))
        arg = np.empty((n, 3, f), dtype=np.int64)
        empty = np.zeros((n, 3), dtype=bool)
        for s in range(3):
            mask = segments == s
            masked = np.where(mask[:, :, None], conv, -np.inf)
            arg[:, s] = masked.argmax(axis=1)
            pooled[:, s] = np.take_along_axis(conv, arg[:, s][:, None, :], axis=1)[:, 0]
            empty[:, s] = ~mask.any(axis=1)
        # an empty segment pools a single all-zero row, whose activation is the bias
        if empty.any():
            pooled[empty] = params.view("conv_b")
        h = np.tanh(pooled).reshape(n, 3 * f)
        logits = h @ params.view("out_w") + params.view("out_b")
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        cache = (z, arg, empty, h)
        return probs, cache

    def probs(self, params: ParamVec, enc: Encoded) -> np.ndarray:
        return self._forward(params, self.features(params, enc), enc.segments)[0]

    def forward(self, params: ParamVec, features: np.ndarray, head_span, tail_span):
        """Single-sentence forward on a precomputed (T, D) feature matrix."""
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] == 0:
            raise InputError("features must be a non-empty matrix")
        t = features.shape[0]
        e1, e2 = segment_bounds(tuple(head_span), tuple(tail_span))
        pos = np.arange(t)
        seg = np.where(pos <= e1, 0, np.where(pos <= e2, 1, 2))[None]
        probs, cache = self._forward(params, features[None], seg)
        return probs[0], cache

    def losses(self, params: ParamVec, enc: Encoded) -> np.ndarray:
        p = self.probs(params, enc)
        return -np.log(np.maximum(p[np.arange(len(enc)), enc.labels], PROB_FLOOR))

    def per_example_grads(self, params: ParamVec, enc: Encoded):
        """Losses (N,) and per-example gradients (N, n_params) in layout order."""
        cfg = self.cfg
        w = cfg.window
        x = self.features(params, enc)
        n, t, d = x.shape
        f = cfg.n_filters
        probs, (z, arg, empty, h) = self._forward(params, x, enc.segments)
        rows = np.arange(n)
        p_label = probs[rows, enc.labels]
        losses = -np.log(np.maximum(p_label, PROB_FLOOR))

        dlogits = probs.copy()
        dlogits[rows, enc.labels] -= 1.0
        dlogits[p_label < PROB_FLOOR] = 0.0                      # clamped: constant loss

        grads = np.zeros((n, self.layout.size))

        def put(name, value):
            slot = self.layout[name]
            grads[:, slot.offset:slot.offset + slot.size] = value.reshape(n, -1)

        put("out_w", h[:, :, None] * dlogits[:, None, :])
        put("out_b", dlogits)
        dh = dlogits @ params.view("out_w").T
        dpooled = (dh * (1.0 - h * h)).reshape(n, 3, f)

        dconv = np.zeros((n, t, f))
        filt = np.broadcast_to(np.arange(f), (n, f))
        for s in range(3):
            live = (~empty[:, s])[:, None] & np.ones((1, f), dtype=bool)
            b_idx = np.broadcast_to(rows[:, None], (n, f))[live]
            np.add.at(dconv, (b_idx, arg[:, s][live], filt[live]), dpooled[:, s][live])
        dbias = dconv.sum(axis=1) + (dpooled * empty[:, :, None]).sum(axis=1)
        put("conv_w", np.einsum("ntk,ntf->nkf", z, dconv))
        put("conv_b", dbias)

        dz = dconv @ params.view("conv_w").T                   # (N, T, wD)
        pad = (w - 1) // 2
        dxp = np.zeros((n, t + w - 1, d))
        for k in range(w):
            dxp[:, k:k + t] += dz[:, :, k * d:(k + 1) * d]
        dx = dxp[:, pad:pad + t]
        dx = dx * (enc.segments >= 0)[:, :, None]

        wd, pd = self.emb.word_dim, self.emb.position_dim
        b_idx = np.broadcast_to(rows[:, None], (n, t))
        for name, idx, lo, hi in (("word", enc.tokens, 0, wd),
                                  ("head_pos", enc.head_pos, wd, wd + pd),
                                  ("tail_pos", enc.tail_pos, wd + pd, wd + 2 * pd)):
            if name not in self.layout:
                continue
            slot = self.layout[name]
            table = np.zeros((n,) + slot.shape)
            np.add.at(table, (b_idx, idx), dx[:, :, lo:hi])
            put(name, table)
        return losses, grads

    def pooling_margin(self, params: ParamVec, enc: Encoded) -> np.ndarray:
        """Per example, the smallest gap between a pooled maximum and its runner-up.

        Max pooling is not differentiable where this gap is zero; finite
        differences are only meaningful when the probe step cannot close it.
        """
        x = self.features(params, enc)
        conv = self._windows(x) @ params.view("conv_w") + params.view("conv_b")
        out = np.full(len(enc), np.inf)
        for s in range(3):
            mask = (enc.segments == s)[:, :, None]
            vals = np.sort(np.where(mask, conv, -np.inf), axis=1)
            with np.errstate(invalid="ignore"):
                gap = vals[:, -1] - vals[:, -2]                 # (N, F)
            gap = np.where(np.isfinite(gap), gap, np.inf)
            out = np.minimum(out, gap.min(axis=1))
        return out

    # -- single-instance API --------------------------------------------------

    def loss_and_grad(self, params: ParamVec, inst: Instance) -> tuple[float, GradVec]:
        losses, grads = self.per_example_grads(params, self.prepare([inst]))
        return float(losses[0]), GradVec(grads[0], self.layout)

    def loss(self, params: ParamVec, inst: Instance) -> float:
        return float(self.losses(params, self.prepare([inst]))[0])

    def predict(self, params: ParamVec, inst: Instance) -> tuple[int, float]:
        p = self.probs(params, self.prepare([inst]))[0]
        r = int(np.argmax(p))                                   # first maximum wins ties
        return r, float(p[r])

    def predict_batch(self, params: ParamVec, enc: Encoded, chunk: int = 512):
        out = []
        for lo in range(0, len(enc), chunk):
            out.append(self.probs(params, enc.take(np.arange(lo, min(lo + chunk, len(enc))))))
        p = np.vstack(out) if out else np.zeros((0, self.cfg.n_relations))
        return p.argmax(axis=1), p
