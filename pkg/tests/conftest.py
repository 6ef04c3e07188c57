import numpy as np
import pytest

from metarel.nn_core import Layout, ParamVec
from metarel.pcnn import PCNN, EmbeddingTable, Instance, PcnnConfig

TOKENS = [f"t{i}" for i in range(12)]


class QuadModel:
    """One scalar parameter; an "instance" is a target y with loss (theta - y)^2."""

    def __init__(self):
        self.layout = Layout([("theta", (1,))])

    def params(self, theta):
        return ParamVec(np.array([float(theta)]), self.layout)

    def prepare(self, targets):
        return np.asarray(targets, dtype=np.float64)

    def losses(self, params, ys):
        return (params.data[0] - ys) ** 2

    def per_example_grads(self, params, ys):
        return self.losses(params, ys), (2.0 * (params.data[0] - ys))[:, None]


@pytest.fixture
def quad():
    return QuadModel()


def small_model(rng, n_relations=4, n_filters=8, word_dim=6, position_dim=2, max_rel=5,
                train_embeddings=True, scale=1.0):
    emb = EmbeddingTable.random(TOKENS, word_dim, position_dim, max_rel, rng=rng, scale=scale)
    cfg = PcnnConfig(n_relations=n_relations, n_filters=n_filters, window=3, word_dim=word_dim,
                     position_dim=position_dim, train_embeddings=train_embeddings)
    return PCNN(cfg, emb)


def random_instance(rng, n_relations=4, min_len=3, max_len=9, name="x"):
    n = int(rng.integers(min_len, max_len + 1))
    a, b = sorted(rng.choice(n, size=2, replace=False).tolist())
    head, tail = ((a, a), (b, b)) if rng.random() < 0.5 else ((b, b), (a, a))
    toks = [TOKENS[i] for i in rng.integers(0, len(TOKENS), size=n)]
    return Instance(name, toks, head, tail, int(rng.integers(0, n_relations)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criterion -> (passed, detail); filled by test_acceptance, printed at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
