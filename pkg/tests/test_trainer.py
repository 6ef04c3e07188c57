import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metarel.data import Corpus, SimConfig, simulate_ds
from metarel.elite import EXPLOITATION, EXPLORATION
from metarel.errors import ConfigError
from metarel.trainer import (TrainConfig, Trainer, beta_for, lr_schedule, phase_of, pretrain,
                             train)

TINY = dict(max_epochs=6, warmup_epochs=2, tail_epochs=2, batch_size=25, n_filters=6, word_dim=6,
            position_dim=2, max_rel_distance=10, init_scale=0.3, embedding_scale=1.0)


@pytest.fixture(scope="module")
def corpus():
    return simulate_ds(SimConfig(n_train=150, n_validation=30, n_test=40, seed=11))


# -- schedule and phases ---------------------------------------------------------

def test_lr_schedule_reference_points():
    cfg = TrainConfig()
    assert lr_schedule(1, cfg) == 0.001
    assert lr_schedule(2, cfg) == 0.1
    for e in range(21, 26):
        assert lr_schedule(e, cfg) == pytest.approx(0.001, abs=1e-15)
    assert lr_schedule(20, cfg) == pytest.approx(0.001)
    with pytest.raises(ValueError):
        lr_schedule(0, cfg)
    with pytest.raises(ValueError):
        lr_schedule(26, cfg)


@given(st.integers(3, 60), st.data())
def test_lr_schedule_piecewise_linear(L, data):
    w = data.draw(st.integers(1, L - 2))
    tail = data.draw(st.integers(0, L - w - 1))
    cfg = TrainConfig(max_epochs=L, warmup_epochs=w, tail_epochs=tail)
    lrs = [lr_schedule(e, cfg) for e in range(1, L + 1)]
    assert max(lrs) == pytest.approx(cfg.lr_max) and min(lrs) == pytest.approx(cfg.lr_min)
    assert lrs[w - 1] == pytest.approx(cfg.lr_max)
    assert all(a <= b + 1e-15 for a, b in zip(lrs[:w - 1], lrs[1:w]))
    assert all(a + 1e-15 >= b for a, b in zip(lrs[w - 1:], lrs[w:]))
    assert lrs[L - tail - 1] == pytest.approx(cfg.lr_min)


def test_phase_switch_default():
    cfg = TrainConfig()
    phases = [phase_of(e, cfg) for e in range(1, 26)]
    assert phases.index(EXPLOITATION) == 12          # epoch 13
    assert phases.count(EXPLORATION) == 12
    assert beta_for(EXPLOITATION, cfg) == 1.0
    sw = TrainConfig(strategy="sw")
    assert beta_for(EXPLORATION, sw) == 1.0 and beta_for(EXPLOITATION, sw) == 0.1


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(max_epochs=5, warmup_epochs=3, tail_epochs=2)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(exploit_start=25)
    with pytest.raises(ConfigError):
        TrainConfig(mode="ours")
    with pytest.raises(ConfigError, match="unknown"):
        TrainConfig.from_dict({"epochs": 3})
    cfg = TrainConfig.from_dict({"max_epochs": 10, "strategy": "sw"})
    assert cfg.exploit_start == 5
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.with_overrides(seed=3, mode=None).seed == 3


def test_effective_k_by_mode():
    assert TrainConfig(mode="full", k=2).effective_k == 2
    assert TrainConfig(mode="l2rw", k=2).effective_k == 0
    assert TrainConfig(mode="uniform", k=2).effective_k == 0


# -- training -----------------------------------------------------------------------

def test_reference_coverage_checked_before_training(corpus):
    partial = Corpus(corpus.schema, corpus.train, [x for x in corpus.ref if x.label != 2],
                     corpus.validation, corpus.test)
    with pytest.raises(ConfigError, match="rel1"):
        Trainer(TrainConfig(**TINY), partial)
    Trainer(TrainConfig(mode="uniform", **TINY), partial)   # baseline needs no reference


def test_pretrain_zero_epochs_is_noop(corpus):
    t = Trainer(TrainConfig(pretrain_epochs=0, **TINY), corpus)
    before = t.params.data.copy()
    out = pretrain(t.model, t.params, t.train_enc, t.cfg, np.random.default_rng(0))
    assert np.array_equal(out.data, before)


def test_pretrain_reduces_train_loss(corpus):
    t = Trainer(TrainConfig(pretrain_epochs=3, **dict(TINY, lr_min=0.05)), corpus)
    before = t.model.losses(t.params, t.train_enc).mean()
    t.pretrain()
    assert t.model.losses(t.params, t.train_enc).mean() <= before


@pytest.mark.parametrize("mode", ["uniform", "l2rw", "full"])
def test_modes_history_contract(corpus, mode):
    seen_scores = []
    res = train(TrainConfig(mode=mode, **TINY), corpus,
                on_scores=lambda epoch, states: seen_scores.append((epoch, len(states))))
    assert [r.epoch for r in res.history] == list(range(1, 7))
    assert len(res.weight_history) == 6
    if mode == "uniform":
        assert seen_scores == []
        assert all(r.expanded_size == 0 for r in res.history)
    else:
        assert seen_scores == [(e, len(corpus.train)) for e in range(1, 7)]
        expected = 0
        if mode == "full":
            counts = {r: sum(x.label == r for x in corpus.train) for r in corpus.schema.positive_ids}
            ref = {r: sum(x.label == r for x in corpus.ref) for r in corpus.schema.positive_ids}
            expected = sum(min(int(2 * ref[r]), counts[r]) for r in counts)
        assert all(r.expanded_size == expected for r in res.history)
        for wh in res.weight_history:
            assert set(wh) == {x.id for x in corpus.train}
            assert all(w >= 0 for w in wh.values())
    if mode == "full":
        assert all(r.elite_precision is not None for r in res.history)
    assert [r.phase for r in res.history].count(EXPLOITATION) == 3


def test_sw_strategy_switches_beta(corpus):
    res = train(TrainConfig(strategy="sw", **TINY), corpus)
    assert [r.beta for r in res.history] == [1.0] * 3 + [0.1] * 3


def test_training_is_deterministic(corpus):
    a = train(TrainConfig(seed=5, **TINY), corpus)
    b = train(TrainConfig(seed=5, **TINY), corpus)
    c = train(TrainConfig(seed=6, **TINY), corpus)
    assert np.array_equal(a.params.data, b.params.data)
    assert [r.to_json() for r in a.history] == [r.to_json() for r in b.history]
    assert not np.array_equal(a.params.data, c.params.data)


def test_states_accumulate_over_all_epochs(corpus):
    cfg = TrainConfig(**TINY)
    res = train(cfg, corpus)
    st = next(iter(res.states.values()))
    assert st.epoch == cfg.max_epochs
    assert 0 < st.sa < 1 / (1 - cfg.gamma)


def test_weight_perturbation_runs(corpus):
    res = train(TrainConfig(perturb_epsilon=1e-3, **TINY), corpus)
    assert np.all(np.isfinite(res.params.data))
