"""Training loop: pretraining, per-epoch elite expansion, reweighted mini-batch updates."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from . import elite
from .data import Corpus
from .elite import EXPLOITATION, EXPLORATION, EliteQuota
from .errors import ConfigError
from .meta_reweight import MetaStepReport, meta_step
from .metrics import Metrics, elite_precision, micro_prf
from .nn_core import ParamVec
from .pcnn import PCNN, EmbeddingTable, PcnnConfig

log = logging.getLogger(__name__)

MODES = ("uniform", "l2rw", "full")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 25
    batch_size: int = 160
    lr_max: float = 0.1
    lr_min: float = 0.001
    warmup_epochs: int = 2
    tail_epochs: int = 5
    pretrain_epochs: int = 2
    k: float = 2
    beta: float = 1.0
    beta_sw_exploit: float = 0.1
    gamma: float = 0.97
    strategy: str = "sp"
    exploit_start: Optional[int] = None
    seed: int = 0
    perturb_epsilon: float = 0.0
    mode: str = "full"
    # classifier
    n_filters: int = 230
    window: int = 3
    word_dim: int = 50
    position_dim: int = 5
    max_rel_distance: int = 30
    train_embeddings: bool = True
    init_scale: float = 0.1
    embedding_scale: float = 0.1

    def __post_init__(self):
        if self.exploit_start is None:
            object.__setattr__(self, "exploit_start", self.max_epochs // 2)
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.warmup_epochs + self.tail_epochs >= self.max_epochs:
            raise ConfigError("warmup_epochs + tail_epochs must be below max_epochs")
        if self.warmup_epochs < 1:
            raise ConfigError("warmup_epochs must be >= 1")
        if not 0 <= self.exploit_start < self.max_epochs:
            raise ConfigError("exploit_start must lie in [0, max_epochs)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("need 0 < lr_min <= lr_max")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.strategy not in elite.STRATEGIES:
            raise ConfigError(f"strategy must be one of {elite.STRATEGIES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.k < 0 or self.beta < 0 or self.beta_sw_exploit < 0 or self.perturb_epsilon < 0:
            raise ConfigError("k, beta, beta_sw_exploit and perturb_epsilon must be non-negative")

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    @property
    def effective_k(self) -> float:
        return 0 if self.mode != "full" else self.k


@dataclass
class EpochReport:
    epoch: int
    phase: str
    lr: float
    beta: float
    expanded_size: int
    mean_weight: float
    max_weight: float
    train_loss: float
    skipped_steps: int
    validation: Optional[Metrics] = None
    elite_precision: Optional[float] = None

    def to_json(self) -> dict:
        out = asdict(self)
        out["validation"] = self.validation.to_json() if self.validation else None
        return out


@dataclass
class TrainResult:
    params: ParamVec
    history: list
    model: PCNN
    weight_history: list = field(default_factory=list)   # per epoch: id -> weight
    elite_history: list = field(default_factory=list)    # per epoch: ExpandedSet
    states: dict = field(default_factory=dict)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up from lr_min, linear decay to lr_min at ``L - tail_epochs``, then flat."""
    L = cfg.max_epochs
    if not 1 <= epoch <= L:
        raise ValueError(f"epoch {epoch} outside 1..{L}")
    w = cfg.warmup_epochs
    floor_at = L - cfg.tail_epochs
    if epoch <= w:
        if w == 1:
            return cfg.lr_max
        return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (epoch - 1) / (w - 1)
    if epoch >= floor_at:
        return cfg.lr_min
    return cfg.lr_max + (cfg.lr_min - cfg.lr_max) * (epoch - w) / (floor_at - w)


def phase_of(epoch: int, cfg: TrainConfig) -> str:
    return EXPLOITATION if epoch > cfg.exploit_start else EXPLORATION


def beta_for(phase: str, cfg: TrainConfig) -> float:
    if cfg.strategy == "sw" and phase == EXPLOITATION:
        return cfg.beta_sw_exploit
    return cfg.beta


def check_reference_coverage(corpus: Corpus):
    have = {x.label for x in corpus.ref}
    missing = [corpus.schema.names[r] for r in corpus.schema.positive_ids if r not in have]
    if missing:
        raise ConfigError(f"reference set has no instance of: {missing}")


def build_model(cfg: TrainConfig, corpus: Corpus, emb: Optional[EmbeddingTable] = None):
    """Classifier and initial parameters, all randomness drawn from the run seed."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    if emb is None:
        emb = EmbeddingTable.random(corpus.vocabulary(), cfg.word_dim, cfg.position_dim,
                                    cfg.max_rel_distance, rng=np.random.default_rng(seeds[0]),
                                    scale=cfg.embedding_scale)
    pcfg = PcnnConfig(n_relations=len(corpus.schema), n_filters=cfg.n_filters, window=cfg.window,
                      word_dim=emb.word_dim, position_dim=emb.position_dim,
                      train_embeddings=cfg.train_embeddings)
    model = PCNN(pcfg, emb)
    params = model.init_params(np.random.default_rng(seeds[1]), scale=cfg.init_scale)
    return model, params


def _batches(n: int, size: int, rng):
    order = rng.permutation(n)
    return [order[i:i + size] for i in range(0, n, size)]


def sgd_epoch(model: PCNN, params: ParamVec, enc, lr: float, batch_size: int, rng):
    """One epoch of plain SGD on uniformly weighted mini-batches."""
    losses = []
    for idx in _batches(len(enc), batch_size, rng):
        batch = enc.take(idx)
        loss, grads = model.per_example_grads(params, batch)
        w = np.full(len(idx), 1.0 / len(idx))
        params = ParamVec(params.data - lr * (w @ grads), params.layout)
        losses.append(loss)
    return params, np.concatenate(losses) if losses else np.zeros(0)


def pretrain(model: PCNN, params: ParamVec, enc, cfg: TrainConfig, rng) -> ParamVec:
    for _ in range(cfg.pretrain_epochs):
        params, _ = sgd_epoch(model, params, enc, cfg.lr_min, cfg.batch_size, rng)
    return params


class Trainer:
    """Holds the mutable state of one run; ``run_epoch`` advances it by one epoch."""

    def __init__(self, cfg: TrainConfig, corpus: Corpus, emb: Optional[EmbeddingTable] = None,
                 on_step: Optional[Callable[[int, MetaStepReport], None]] = None,
                 on_scores: Optional[Callable[[int, dict], None]] = None):
        if not corpus.train:
            raise ConfigError("empty training set")
        if cfg.mode != "uniform":
            if not corpus.ref:
                raise ConfigError("reweighting modes need a reference set")
            check_reference_coverage(corpus)
        self.cfg = cfg
        self.corpus = corpus
        self.schema = corpus.schema
        self.model, self.params = build_model(cfg, corpus, emb)
        self.train_set = list(corpus.train)
        self.train_enc = self.model.prepare(self.train_set)
        self.ref_enc = self.model.prepare(corpus.ref) if corpus.ref else None
        self.val_enc = self.model.prepare(corpus.validation) if corpus.validation else None
        self.quotas = EliteQuota.from_reference(corpus.ref, self.schema, cfg.effective_k)
        self.gold = {x.id: x.gold_label for x in self.train_set}
        self.has_gold = all(g is not None for g in self.gold.values())
        self.pos_of = {x.id: i for i, x in enumerate(self.train_set)}
        self.rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
        self.states: dict = {}
        self.weight_log: dict = {}
        self.expanded = elite.ExpandedSet([], {})
        self.on_step = on_step
        self.on_scores = on_scores
        self.history: list = []
        self.weight_history: list = []
        self.elite_history: list = []

    # -- stages ------------------------------------------------------------

    def pretrain(self):
        self.params = pretrain(self.model, self.params, self.train_enc, self.cfg, self.rng)
        if self.cfg.mode != "uniform" and self.cfg.strategy == "sw":
            self._initial_weight_log()

    def _initial_weight_log(self):
        """Weights from a non-updating pass, so the first epoch has something to rank by."""
        lr = lr_schedule(1, self.cfg)
        for idx in _batches(len(self.train_enc), self.cfg.batch_size, np.random.default_rng(0)):
            batch = self.train_enc.take(idx)
            _, rep = meta_step(self.model, self.params, batch, self.ref_enc, (), self.cfg.beta, lr,
                               update=False)
            self.weight_log.update(zip(rep.ids, rep.weights.tolist()))

    def score(self, epoch: int, phase: str):
        cfg = self.cfg
        sp = elite.score_sp(self.model, self.params, self.train_set, self.train_enc)
        sw = None
        if cfg.strategy == "sw":
            sw, _ = elite.score_sw(self.weight_log, self.train_set)
        elite.update_states(self.states, self.train_set, sp, sw, cfg.strategy, self.quotas,
                            cfg.gamma, epoch)
        final = {i: elite.final_score(st, phase, cfg.strategy) for i, st in self.states.items()}
        self.expanded = elite.select_elite(final, self.train_set, self.schema, self.quotas)
        if self.on_scores:
            self.on_scores(epoch, self.states)

    def _expanded_encoded(self):
        if not len(self.expanded):
            return ()
        idx = [self.pos_of[x.id] for x, _ in self.expanded.pairs]
        return self.train_enc.take(idx).with_labels([r for _, r in self.expanded.pairs])

    def run_epoch(self, epoch: int) -> EpochReport:
        cfg = self.cfg
        phase = phase_of(epoch, cfg)
        lr = lr_schedule(epoch, cfg)
        beta = beta_for(phase, cfg)
        if cfg.mode == "uniform":
            self.expanded = elite.ExpandedSet([], {})
            self.params, losses = sgd_epoch(self.model, self.params, self.train_enc, lr,
                                            cfg.batch_size, self.rng)
            weights = np.full(len(self.train_enc), 1.0 / min(cfg.batch_size, len(self.train_enc)))
            epoch_weights = dict(zip(self.train_enc.ids, weights.tolist()))
            skipped = 0
        else:
            self.score(epoch, phase)
            exp = self._expanded_encoded()
            losses, epoch_weights, skipped = [], {}, 0
            for idx in _batches(len(self.train_enc), cfg.batch_size, self.rng):
                batch = self.train_enc.take(idx)
                w0 = None
                if cfg.perturb_epsilon > 0:
                    w0 = self.rng.uniform(0.0, cfg.perturb_epsilon, size=len(idx))
                self.params, rep = meta_step(self.model, self.params, batch, self.ref_enc, exp,
                                             beta, lr, w0=w0)
                skipped += int(not rep.weights.any())
                losses.append(rep.losses)
                epoch_weights.update(zip(rep.ids, rep.weights.tolist()))
                if self.on_step:
                    self.on_step(epoch, rep)
            losses = np.concatenate(losses)
            self.weight_log.update(epoch_weights)
            weights = np.array(list(epoch_weights.values()))
        val = None
        if self.val_enc is not None:
            pred, _ = self.model.predict_batch(self.params, self.val_enc)
            val = micro_prf(pred, [x.label for x in self.corpus.validation], self.schema.none_id)
        ep = None
        if self.has_gold and cfg.mode == "full":
            ep, _ = elite_precision(self.expanded.pairs, self.gold)
        report = EpochReport(epoch, phase, lr, beta, len(self.expanded), float(weights.mean()),
                             float(weights.max()), float(np.mean(losses)), skipped, val, ep)
        self.history.append(report)
        self.weight_history.append(epoch_weights)
        self.elite_history.append(self.expanded)
        log.info("epoch %d %s lr=%.4f |exp|=%d loss=%.4f val_f1=%s", epoch, phase, lr,
                 len(self.expanded), report.train_loss, f"{val.f1:.4f}" if val else "-")
        return report

    def result(self) -> TrainResult:
        return TrainResult(self.params, self.history, self.model, self.weight_history,
                           self.elite_history, self.states)


def train(cfg: TrainConfig, corpus: Corpus, emb: Optional[EmbeddingTable] = None, **hooks) -> TrainResult:
    trainer = Trainer(cfg, corpus, emb, **hooks)
    trainer.pretrain()
    for epoch in range(1, cfg.max_epochs + 1):
        trainer.run_epoch(epoch)
    return trainer.result()


def evaluate(model: PCNN, params: ParamVec, instances, schema) -> Metrics:
    if not instances:
        return micro_prf([], [], schema.none_id)
    pred, _ = model.predict_batch(params, model.prepare(instances))
    return micro_prf(pred, [x.label for x in instances], schema.none_id)
