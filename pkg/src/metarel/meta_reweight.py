"""One online reweighting step guided by reference data.

A step looks ahead with a temporary SGD update whose per-example weights start
at zero, measures the reference loss there, and turns the gradient of that
loss with respect to each weight into a clipped, normalised weight vector.
The classifier is then updated with those weights at the original parameters.

Because the look-ahead parameters are affine in the weights, the weight
gradient ``-lr * <grad_ref(theta_hat), grad_i(theta)>`` is exact.

``model`` is anything with ``prepare(instances)``, ``losses(params, batch)``
and ``per_example_grads(params, batch)``; batches may be passed as instance
lists or already prepared.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, NumericError, StructuralError
from .nn_core import GradVec, ParamVec


def _as_encoded(model, batch):
    if isinstance(batch, (list, tuple)):
        return model.prepare(list(batch))
    return batch


def _check_weights(w, n):
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise StructuralError(f"{w.shape[0] if w.ndim else 0} weights for a batch of {n}")
    return w


def weighted_loss(model, params: ParamVec, batch, w) -> float:
    enc = _as_encoded(model, batch)
    w = _check_weights(w, len(enc))
    return float(np.dot(w, model.losses(params, enc)))


def temp_update(model, params: ParamVec, batch, w0, lr: float, grads=None):
    """Look-ahead parameters ``params - lr * sum_i w0_i grad_i`` and the per-example gradients."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    enc = _as_encoded(model, batch)
    w0 = _check_weights(w0, len(enc))
    if grads is None:
        _, grads = model.per_example_grads(params, enc)
    if not w0.any():
        return params.copy(), grads
    return ParamVec(params.data - lr * (w0 @ grads), params.layout), grads


def meta_objective(model, params_hat: ParamVec, ref, exp=(), beta: float = 1.0):
    """Reference loss plus ``beta`` times the expanded-set loss, and its gradient."""
    if not len(ref):
        raise ConfigError("the reference set is empty")
    if beta < 0:
        raise ConfigError("beta must be non-negative")
    losses, grads = model.per_example_grads(params_hat, _as_encoded(model, ref))
    value, grad = float(losses.sum()), grads.sum(axis=0)
    if beta > 0 and len(exp):
        losses, grads = model.per_example_grads(params_hat, _as_encoded(model, exp))
        value += beta * float(losses.sum())
        grad += beta * grads.sum(axis=0)
    return value, GradVec(grad, params_hat.layout)


def weight_gradient(per_example_grads, ref_grad: GradVec, lr: float) -> np.ndarray:
    """d MetaObjective / d w_i for every batch instance."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    g = np.asarray(per_example_grads, dtype=np.float64)
    if g.ndim != 2 or g.shape[1] != ref_grad.layout.size:
        raise StructuralError("per-example gradients do not match the reference gradient layout")
    return -lr * (g @ ref_grad.data)


def normalize_weights(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite weight gradient")
    w = np.maximum(0.0, -g)
    total = w.sum()
    if total > 0:
        return w / total
    return np.zeros_like(w)


def reweighted_step(model, params: ParamVec, batch, w_star, lr: float, grads=None) -> ParamVec:
    """SGD step on the weighted batch loss, gradients taken at ``params``."""
    if not lr > 0:
        raise ConfigError("learning rate must be positive")
    enc = _as_encoded(model, batch)
    w_star = _check_weights(w_star, len(enc))
    if not w_star.any():
        return params.copy()
    if grads is None:
        _, grads = model.per_example_grads(params, enc)
    return ParamVec(params.data - lr * (w_star @ grads), params.layout)


@dataclass
class MetaStepReport:
    ids: list
    weight_grad: np.ndarray
    weights: np.ndarray
    weighted_loss: float
    ref_loss_before: float
    ref_loss_after: float
    losses: np.ndarray = field(repr=False, default=None)

    def to_json(self) -> dict:
        return {
            "ids": list(self.ids),
            "weight_grad": [float(v) for v in self.weight_grad],
            "weights": [float(v) for v in self.weights],
            "weighted_loss": float(self.weighted_loss),
            "ref_loss_before": float(self.ref_loss_before),
            "ref_loss_after": float(self.ref_loss_after),
        }


def meta_step(model, params: ParamVec, batch, ref, exp=(), beta: float = 1.0,
              lr: float = 0.1, w0: Optional[np.ndarray] = None,
              update: bool = True) -> tuple[ParamVec, MetaStepReport]:
    """Full reweighting step; ``update=False`` computes the weights only."""
    enc = _as_encoded(model, batch)
    if w0 is None:
        w0 = np.zeros(len(enc))
    losses, grads = model.per_example_grads(params, enc)
    params_hat, _ = temp_update(model, params, enc, w0, lr, grads=grads)
    ref_before, ref_grad = meta_objective(model, params_hat, ref, exp, beta)
    g = weight_gradient(grads, ref_grad, lr)
    w = normalize_weights(g)
    if update:
        new_params = reweighted_step(model, params, enc, w, lr, grads=grads)
        ref_after = meta_objective_value(model, new_params, ref, exp, beta) if w.any() else ref_before
    else:
        new_params, ref_after = params, ref_before
    ids = list(getattr(enc, "ids", range(len(enc))))
    report = MetaStepReport(ids, g, w, float(w @ losses), ref_before, ref_after, losses)
    return new_params, report


def meta_objective_value(model, params: ParamVec, ref, exp=(), beta: float = 1.0) -> float:
    value = float(model.losses(params, _as_encoded(model, ref)).sum())
    if beta > 0 and len(exp):
        value += beta * float(model.losses(params, _as_encoded(model, exp)).sum())
    return value
