"""Micro-averaged P/R/F1 over positive relations and synthetic-run diagnostics."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import InputError, StructuralError


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    predicted_positive: int
    gold_positive: int
    correct_positive: int

    def to_json(self) -> dict:
        return asdict(self)


def micro_prf(predictions: Sequence[int], golds: Sequence[int], none_id: int) -> Metrics:
    pred = np.asarray(predictions)
    gold = np.asarray(golds)
    if pred.shape != gold.shape:
        raise StructuralError(f"{pred.size} predictions for {gold.size} gold labels")
    n_pred = int((pred != none_id).sum())
    n_gold = int((gold != none_id).sum())
    n_correct = int(((pred == gold) & (gold != none_id)).sum())
    p = n_correct / n_pred if n_pred else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Metrics(p, r, f1, n_pred, n_gold, n_correct)


def weight_noise_auc(weights: Mapping[str, float], noise_flags: Mapping[str, bool]) -> float:
    """P(random clean weight > random noisy weight), ties counting one half."""
    ids = [i for i in weights if i in noise_flags]
    w = np.array([weights[i] for i in ids], dtype=np.float64)
    noisy = np.array([bool(noise_flags[i]) for i in ids])
    n_noisy = int(noisy.sum())
    n_clean = len(ids) - n_noisy
    if n_noisy == 0 or n_clean == 0:
        raise ValueError("weight/noise AUC needs both clean and noisy instances")
    ranks = rankdata(w)
    u = ranks[~noisy].sum() - n_clean * (n_clean + 1) / 2.0
    return float(u / (n_clean * n_noisy))


def elite_precision(pairs, gold: Mapping[str, int]) -> tuple[float, bool]:
    """Fraction of (instance, relation) selections whose hidden gold relation agrees.

    Returns ``(precision, vacuous)``; an empty selection is precision 1.0 with
    ``vacuous`` set.
    """
    pairs = list(pairs)
    if not pairs:
        return 1.0, True
    hits = 0
    for inst, r in pairs:
        g = gold.get(inst.id) if isinstance(gold, Mapping) else None
        if g is None:
            raise InputError("no gold relation", instance_id=inst.id)
        hits += int(g == r)
    return hits / len(pairs), False
