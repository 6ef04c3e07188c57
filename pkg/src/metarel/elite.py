"""Confidence scoring and elite-instance selection.

Each epoch every training instance gets a confidence score: the classifier's
probability of its distant label (``sp``) or the weight it last received in a
reweighting step (``sw``), normalised within the pool of instances sharing
its label.  Per-relation ranks feed a logistic ranking score whose decayed
running sum (``sa``) is used for selection once exploitation starts.  The
top-scored instances of every positive relation, in proportion to that
relation's share of the reference data, form the expanded reference set.
"""
from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .pcnn import Instance, RelationSchema

log = logging.getLogger(__name__)

EXPLORATION = "exploration"
EXPLOITATION = "exploitation"
STRATEGIES = ("sp", "sw")


@dataclass
class ConfidenceState:
    id: str
    sp: float = 0.0
    sw: float = 0.0
    idx: int = 1
    sr: float = 0.0
    sa: float = 0.0
    epoch: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EliteQuota:
    counts: dict       # relation id -> n_r
    k: float

    @classmethod
    def from_reference(cls, ref: Sequence[Instance], schema: RelationSchema, k: float) -> "EliteQuota":
        per_rel = Counter(x.label for x in ref)
        counts = {r: int(k * per_rel.get(r, 0)) for r in schema.positive_ids}
        return cls(counts, k)

    def __getitem__(self, r: int) -> int:
        return self.counts.get(r, 0)


@dataclass
class ExpandedSet:
    pairs: list        # (instance, relation id)
    thresholds: dict   # relation id -> score of the last selected instance

    def __len__(self):
        return len(self.pairs)

    @property
    def instances(self) -> list:
        return [inst for inst, _ in self.pairs]


def pool_normalize(values: Mapping[str, float], labels: Mapping[str, int]) -> dict:
    """Divide each value by the sum over instances with the same label; all-zero pools stay zero."""
    totals = defaultdict(float)
    for i, v in values.items():
        totals[labels[i]] += v
    return {i: (v / totals[labels[i]] if totals[labels[i]] > 0 else 0.0) for i, v in values.items()}


def score_sp(model, params, train: Sequence[Instance], enc=None) -> dict:
    if not train:
        return {}
    if enc is None:
        enc = model.prepare(train)
    _, probs = model.predict_batch(params, enc)
    p_label = probs[np.arange(len(train)), [x.label for x in train]]
    return pool_normalize({x.id: float(p) for x, p in zip(train, p_label)},
                          {x.id: x.label for x in train})


def score_sw(weight_log: Mapping[str, float], train: Sequence[Instance]) -> tuple[dict, int]:
    """Pool-normalised last-seen weights; returns scores and the count of unseen instances."""
    missing = 0
    values = {}
    for x in train:
        if x.id in weight_log:
            values[x.id] = float(weight_log[x.id])
        else:
            values[x.id] = 0.0
            missing += 1
    if missing:
        log.warning("%d instances have no logged weight; scored 0", missing)
    return pool_normalize(values, {x.id: x.label for x in train}), missing


def rank_score(idx: int, n_r: float) -> float:
    if idx < 1:
        raise ValueError("ranks are 1-based")
    z = idx - n_r
    if z > 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def accumulate(sa_prev: float, sr_now: float, gamma: float, t: int) -> float:
    if t == 0:
        return 0.0
    return gamma * sa_prev + sr_now


def rank_within_relation(scores: Mapping[str, float], train: Sequence[Instance]) -> dict:
    """1-based rank of every instance among those sharing its label; ties by id."""
    by_rel = defaultdict(list)
    for x in train:
        by_rel[x.label].append(x.id)
    ranks = {}
    for ids in by_rel.values():
        ids.sort(key=lambda i: (-scores[i], i))
        for pos, i in enumerate(ids, start=1):
            ranks[i] = pos
    return ranks


def select_elite(scores: Mapping[str, float], train: Sequence[Instance], schema: RelationSchema,
                 quotas: EliteQuota) -> ExpandedSet:
    by_rel = defaultdict(list)
    for x in train:
        if x.label != schema.none_id:
            by_rel[x.label].append(x)
    pairs, thresholds = [], {}
    for r in schema.positive_ids:
        n_r = quotas[r]
        if n_r <= 0 or not by_rel[r]:
            continue
        chosen = sorted(by_rel[r], key=lambda x: (-scores[x.id], x.id))[:n_r]
        pairs.extend((x, r) for x in chosen)
        thresholds[r] = scores[chosen[-1].id]
    return ExpandedSet(pairs, thresholds)


def final_score(state: ConfidenceState, phase: str, strategy: str) -> float:
    if phase == EXPLOITATION:
        return state.sa
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    return state.sp if strategy == "sp" else state.sw


def update_states(states: dict, train: Sequence[Instance], sp: Mapping[str, float] | None,
                  sw: Mapping[str, float] | None, strategy: str, quotas: EliteQuota,
                  gamma: float, epoch: int) -> dict:
    """Refresh every instance's record for ``epoch``: scores, rank, ranking and accumulated score."""
    active = sp if strategy == "sp" else sw
    ranks = rank_within_relation(active, train)
    for x in train:
        st = states.get(x.id)
        if st is None:
            st = states[x.id] = ConfidenceState(x.id)
        if sp is not None:
            st.sp = sp[x.id]
        if sw is not None:
            st.sw = sw[x.id]
        st.idx = ranks[x.id]
        st.sr = rank_score(st.idx, quotas[x.label])
        st.sa = accumulate(st.sa, st.sr, gamma, epoch)
        st.epoch = epoch
    return states
