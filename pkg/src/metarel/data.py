"""Corpus files, embeddings, reference sampling and a distant-supervision simulator."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError
from .pcnn import PAD, UNK, EmbeddingTable, Instance, RelationSchema, check_instance

log = logging.getLogger(__name__)

SPLITS = ("train", "ref", "validation", "test")


@dataclass
class Corpus:
    schema: RelationSchema
    train: list = field(default_factory=list)
    ref: list = field(default_factory=list)
    validation: list = field(default_factory=list)
    test: list = field(default_factory=list)
    patterns: Optional[dict] = None    # relation name -> list of trigger token tuples (synthetic only)

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}; expected one of {SPLITS}")
        return getattr(self, name)

    def vocabulary(self) -> list:
        seen = {}
        for name in SPLITS:
            for x in self.split(name):
                for tok in x.tokens:
                    seen.setdefault(tok, None)
        return list(seen)

    def validate(self):
        n = len(self.schema)
        for name in SPLITS:
            ids = set()
            for x in self.split(name):
                check_instance(x, n)
                if x.id in ids:
                    raise InputError(f"duplicate id in {name}", instance_id=x.id)
                ids.add(x.id)
        overlap = {x.id for x in self.ref} & {x.id for x in self.test}
        if overlap:
            raise InputError(f"reference and test share ids: {sorted(overlap)[:5]}")


# -- JSON-lines ---------------------------------------------------------------

def instance_to_json(x: Instance, schema: RelationSchema) -> dict:
    rec = {"id": x.id, "tokens": list(x.tokens), "head": list(x.head), "tail": list(x.tail),
           "relation": schema.names[x.label]}
    if x.gold_label is not None:
        rec["gold_relation"] = schema.names[x.gold_label]
    return rec


def instance_from_json(rec: dict, schema: RelationSchema, line: int | None = None) -> Instance:
    try:
        inst = Instance(
            id=str(rec["id"]),
            tokens=[str(t) for t in rec["tokens"]],
            head=tuple(rec["head"]),
            tail=tuple(rec["tail"]),
            label=schema.id_of(rec["relation"]),
            gold_label=schema.id_of(rec["gold_relation"]) if rec.get("gold_relation") is not None else None,
        )
    except InputError as exc:
        raise InputError(str(exc), line=line) from None
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad instance record ({exc!r})", line=line) from None
    if len(inst.head) != 2 or len(inst.tail) != 2:
        raise InputError("spans must be [start, end]", line=line, instance_id=inst.id)
    check_instance(inst, len(schema))
    return inst


def read_instances(path, schema: RelationSchema) -> list:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise InputError(f"invalid JSON ({exc.msg})", line=lineno) from None
            out.append(instance_from_json(rec, schema, lineno))
    return out


def write_instances(path, instances: Sequence[Instance], schema: RelationSchema):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x in instances:
            fh.write(json.dumps(instance_to_json(x, schema), sort_keys=True) + "\n")


def read_schema(path) -> RelationSchema:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        names = list(obj["relations"])
        return RelationSchema(names, names.index(obj["none"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"bad schema file {path} ({exc!r})") from None


def write_schema(path, schema: RelationSchema):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump({"relations": list(schema.names), "none": schema.names[schema.none_id]}, fh, indent=2)
        fh.write("\n")


def load_corpus(path) -> Corpus:
    """Read ``schema.json`` and the four split files from a corpus directory.

    Missing split files are treated as empty.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {path}")
    schema = read_schema(path / "schema.json")
    splits = {}
    for name in SPLITS:
        f = path / f"{name}.jsonl"
        splits[name] = read_instances(f, schema) if f.exists() else []
    patterns = None
    if (path / "patterns.json").exists():
        with open(path / "patterns.json", encoding="utf-8") as fh:
            patterns = {k: [tuple(p) for p in v] for k, v in json.load(fh).items()}
    corpus = Corpus(schema, patterns=patterns, **splits)
    corpus.validate()
    return corpus


def write_corpus(path, corpus: Corpus) -> list:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    written = [path / "schema.json"]
    write_schema(written[0], corpus.schema)
    for name in SPLITS:
        f = path / f"{name}.jsonl"
        write_instances(f, corpus.split(name), corpus.schema)
        written.append(f)
    if corpus.patterns is not None:
        f = path / "patterns.json"
        with open(f, "w", encoding="utf-8", newline="\n") as fh:
            json.dump({k: [list(p) for p in v] for k, v in corpus.patterns.items()}, fh, indent=2)
            fh.write("\n")
        written.append(f)
    return written


# -- embeddings ----------------------------------------------------------------

def load_embeddings(path, expected_dim: int, position_dim: int = 5, max_rel_distance: int = 30,
                    rng=None) -> EmbeddingTable:
    """Read a whitespace-separated ``token v1 .. vd`` file.

    The padding and unknown rows are prepended (zeros); the position tables
    are freshly initialised.  Repeated tokens keep their last vector and are
    counted in ``table.duplicates``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"embedding file not found: {path}")
    vocab = {PAD: 0, UNK: 1}
    rows = [np.zeros(expected_dim), np.zeros(expected_dim)]
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) != expected_dim + 1:
                raise InputError(f"expected {expected_dim} values, found {len(parts) - 1}", line=lineno)
            try:
                vec = np.array([float(v) for v in parts[1:]])
            except ValueError:
                raise InputError("non-numeric embedding value", line=lineno) from None
            tok = parts[0]
            if tok in vocab:
                duplicates += 1
                rows[vocab[tok]] = vec
            else:
                vocab[tok] = len(rows)
                rows.append(vec)
    if duplicates:
        log.warning("%s: %d duplicate tokens, last occurrence kept", path, duplicates)
    table = EmbeddingTable.with_positions(vocab, np.vstack(rows), position_dim, max_rel_distance, rng)
    table.duplicates = duplicates
    return table


# -- reference sampling ------------------------------------------------------------

def sample_reference(validation: Sequence[Instance], size: int, schema: RelationSchema, seed=0,
                     include_none: bool = True, max_tries: int = 100_000):
    """Uniform sample of ``size`` instances covering every required relation.

    Required relations are all positive ones, plus the none type when
    ``include_none``.  Returns ``(ref, remaining)`` in input order.
    """
    required = set(schema.positive_ids)
    if include_none:
        required.add(schema.none_id)
    labels = np.array([x.label for x in validation])
    if size < len(required) or size > len(validation) or not required <= set(labels.tolist()):
        raise ConfigError(f"cannot cover relations {sorted(required)} with {size} of "
                          f"{len(validation)} instances")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        idx = rng.choice(len(validation), size=size, replace=False)
        if required <= set(labels[idx].tolist()):
            chosen = set(idx.tolist())
            ref = [x for i, x in enumerate(validation) if i in chosen]
            rest = [x for i, x in enumerate(validation) if i not in chosen]
            return ref, rest
    raise ConfigError(f"no covering reference sample found in {max_tries} draws")


# -- simulator ------------------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    n_relations: int = 4              # positive relations; the none type comes on top
    patterns_per_relation: int = 4
    pattern_length: int = 2
    confusable_patterns: int = 1      # patterns per relation that host wrong-relation noise
    pattern_free_share: float = 0.5   # share of noisy labels on sentences without any pattern
    trigger_groups: int = 0           # >0: patterns j with equal j % groups share their first token
    vocab_size: int = 200             # filler words
    min_length: int = 8
    max_length: int = 16
    entity_pool: int = 40
    n_train: int = 2000
    n_ref: int = 8
    n_validation: int = 200           # pool the reference is drawn from (reference removed)
    n_test: int = 400
    noise_rate: float = 0.4
    negative_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.noise_rate < 1:
            raise ConfigError("noise_rate must lie in [0, 1)")
        if not 0 <= self.pattern_free_share <= 1:
            raise ConfigError("pattern_free_share must lie in [0, 1]")
        if not 0 <= self.negative_fraction < 1:
            raise ConfigError("negative_fraction must lie in [0, 1)")
        if self.trigger_groups < 0:
            raise ConfigError("trigger_groups must be non-negative")
        if self.n_relations < 1 or self.patterns_per_relation < 1:
            raise ConfigError("need at least one relation and one pattern")
        if not 0 <= self.confusable_patterns <= self.patterns_per_relation:
            raise ConfigError("confusable_patterns must be between 0 and patterns_per_relation")
        if self.n_ref < self.n_relations:
            raise ConfigError("n_ref must be at least n_relations")
        if self.min_length < self.pattern_length + 2 or self.max_length < self.min_length:
            raise ConfigError("sentence length range too short for entities and a pattern")

    @classmethod
    def from_dict(cls, obj: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown simulator config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


class _Generator:
    def __init__(self, cfg: SimConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.filler = [f"w{i:03d}" for i in range(cfg.vocab_size)]
        self.entities = [f"E{i:02d}" for i in range(cfg.entity_pool)]
        self.patterns = [[self._pattern(r, j) for j in range(cfg.patterns_per_relation)]
                         for r in range(cfg.n_relations)]

    def _pattern(self, r, j):
        toks = [f"r{r}p{j}t{k}" for k in range(self.cfg.pattern_length)]
        if self.cfg.trigger_groups:
            toks[0] = f"r{r}g{j % self.cfg.trigger_groups}"
        return tuple(toks)

    def _fill(self, n):
        return [self.filler[i] for i in self.rng.integers(0, len(self.filler), size=n)]

    def sentence(self, middle: Sequence[str]):
        cfg = self.cfg
        length = int(self.rng.integers(cfg.min_length, cfg.max_length + 1))
        outside = length - len(middle) - 2
        prefix = int(self.rng.integers(0, outside + 1))
        e1, e2 = self.rng.choice(len(self.entities), size=2, replace=False)
        tokens = (self._fill(prefix) + [self.entities[e1]] + list(middle)
                  + [self.entities[e2]] + self._fill(outside - prefix))
        head = (prefix, prefix)
        tail = (prefix + len(middle) + 1,) * 2
        return tokens, head, tail

    def positive(self, rel: int, pattern: Optional[int] = None):
        if pattern is None:
            pattern = int(self.rng.integers(0, self.cfg.patterns_per_relation))
        return self.sentence(self.patterns[rel][pattern])

    def negative(self):
        return self.sentence(self._fill(self.cfg.pattern_length))


def _balanced_labels(n: int, n_rel: int, rng) -> np.ndarray:
    labels = np.arange(n) % n_rel
    rng.shuffle(labels)
    return labels


def simulate_ds(cfg: SimConfig) -> Corpus:
    """Generate a distantly-labelled corpus with hidden gold relations.

    Relation ids: 0 is the none type, positive relation ``r`` is ``r + 1``.
    Clean splits (validation, reference, test) are noise-free.  In the
    training split ``floor(noise_rate * positives)`` positive labels are
    wrong: half carry the content of the preceding relation expressed with one
    of its confusable patterns, the rest are pattern-free sentences.
    """
    rng = np.random.default_rng(cfg.seed)
    gen = _Generator(cfg, rng)
    names = ["NA"] + [f"rel{r}" for r in range(cfg.n_relations)]
    schema = RelationSchema(names, 0)
    nrel = cfg.n_relations

    def clean_split(prefix: str, n: int) -> list:
        n_neg = int(round(cfg.negative_fraction * n))
        kinds = np.concatenate([np.zeros(n_neg, dtype=int), 1 + _balanced_labels(n - n_neg, nrel, rng)])
        rng.shuffle(kinds)
        out = []
        for i, lab in enumerate(kinds):
            lab = int(lab)
            toks, h, t = gen.negative() if lab == 0 else gen.positive(lab - 1)
            out.append(Instance(f"{prefix}-{i:05d}", toks, h, t, lab, lab))
        return out

    # training split
    n_neg = int(round(cfg.negative_fraction * cfg.n_train))
    n_pos = cfg.n_train - n_neg
    labels = 1 + _balanced_labels(n_pos, nrel, rng)
    n_noisy = int(np.floor(cfg.noise_rate * n_pos))
    n_wrong = n_noisy - int(round(cfg.pattern_free_share * n_noisy))
    noisy = rng.permutation(n_pos)[:n_noisy]
    kind = np.zeros(n_pos, dtype=int)            # 0 clean, 1 wrong relation, 2 pattern-free
    kind[noisy[:n_wrong]] = 1
    kind[noisy[n_wrong:]] = 2
    records = []
    for lab, k in zip(labels, kind):
        lab = int(lab)
        if k == 0:
            records.append((gen.positive(lab - 1), lab, lab))
        elif k == 1 and nrel > 1:
            src = (lab - 2) % nrel                 # positive index of the preceding relation
            n_conf = cfg.confusable_patterns or cfg.patterns_per_relation
            pat = int(rng.integers(0, n_conf))
            records.append((gen.positive(src, pat), lab, src + 1))
        else:
            records.append((gen.negative(), lab, 0))
    records += [(gen.negative(), 0, 0) for _ in range(n_neg)]
    order = rng.permutation(len(records))
    train = [Instance(f"train-{i:05d}", *records[j][0], records[j][1], records[j][2])
             for i, j in enumerate(order)]

    pool = clean_split("val", cfg.n_validation + cfg.n_ref)
    include_none = cfg.n_ref > nrel
    ref, validation = sample_reference(pool, cfg.n_ref, schema, seed=int(rng.integers(2**31)),
                                       include_none=include_none)
    test = clean_split("test", cfg.n_test)
    patterns = {names[r + 1]: list(gen.patterns[r]) for r in range(nrel)}
    return Corpus(schema, train, ref, validation, test, patterns)


def pattern_oracle(corpus_or_patterns, schema: RelationSchema):
    """Brute-force classifier: the relation whose trigger pattern sits between the entities."""
    patterns = corpus_or_patterns.patterns if isinstance(corpus_or_patterns, Corpus) else corpus_or_patterns
    table = [(schema.id_of(name), tuple(p)) for name, pats in patterns.items() for p in pats]

    def classify(x: Instance) -> int:
        left, right = sorted([x.head, x.tail])
        middle = tuple(x.tokens[left[1] + 1:right[0]])
        for rel, pat in table:
            n = len(pat)
            if any(middle[i:i + n] == pat for i in range(len(middle) - n + 1)):
                return rel
        return schema.none_id

    return classify
