"""Small dense-network engine with hand-written backpropagation.

A subnet is ``W2 . BN(swish(W1 . BN(x) + b1)) + b2`` applied row-wise to a
batch ``x`` of shape (B, in).  Weights are stored as (fan_out, fan_in), so a
layer computes ``x @ W.T + b``.

Training uses Adam with an L2 penalty ``(lambda / 2) * ||W||^2`` on the two
weight matrices only.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

TRAIN = "train"
INFER = "infer"


def swish(x):
    """``x * sigmoid(x)``; finite for any finite input."""
    return x * expit(x)


def swish_grad(x):
    s = expit(x)
    return s + x * s * (1.0 - s)


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def fresh(cls, features: int, momentum: float = 0.99, eps: float = 1e-5) -> "BatchNormState":
        return cls(gamma=np.ones(features), beta=np.zeros(features),
                   running_mean=np.zeros(features), running_var=np.ones(features),
                   momentum=momentum, eps=eps)


def bn_forward(x, state: BatchNormState, mode: str = TRAIN, update_running: bool = True):
    """Batch normalisation over axis 0.

    In train mode the batch mean and biased batch variance are used and, if
    ``update_running``, the running statistics move towards them:
    ``running = momentum * running + (1 - momentum) * batch``.  In infer mode
    the running statistics are used.  ``eps`` floors the variance, so a
    feature is divided by ``sqrt(max(var, eps))``.

    Returns ``(y, cache)``; ``cache`` is None in infer mode.
    """
    x = np.asarray(x, dtype=float)
    if mode == TRAIN:
        if x.shape[0] < 2:
            raise ValueError("batch norm in train mode needs at least 2 rows")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if update_running:
            k = state.momentum
            state.running_mean = k * state.running_mean + (1.0 - k) * mu
            state.running_var = k * state.running_var + (1.0 - k) * var
    elif mode == INFER:
        mu, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    floored = var < state.eps
    inv_std = 1.0 / np.sqrt(np.where(floored, state.eps, var))
    xhat = (x - mu) * inv_std
    y = state.gamma * xhat + state.beta
    cache = (xhat, inv_std, floored) if mode == TRAIN else None
    return y, cache


def bn_backward(dy, cache, state: BatchNormState):
    """Gradients ``(dx, dgamma, dbeta)`` of a train-mode batch norm."""
    xhat, inv_std, floored = cache
    b = dy.shape[0]
    dgamma = np.sum(dy * xhat, axis=0)
    dbeta = np.sum(dy, axis=0)
    dxhat = dy * state.gamma
    mean_dxhat = dxhat.mean(axis=0)
    # floored features have a constant divisor, so only the mean path remains
    proj = np.where(floored, 0.0, np.sum(dxhat * xhat, axis=0) / b)
    dx = inv_std * (dxhat - mean_dxhat - xhat * proj)
    return dx, dgamma, dbeta


@dataclass
class SubnetParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    bn_in: BatchNormState
    bn_hidden: BatchNormState

    @property
    def dims(self) -> tuple[int, int, int]:
        hidden, n_in = self.w1.shape
        return n_in, hidden, self.w2.shape[0]

    def trainable(self) -> dict[str, np.ndarray]:
        """Named views of every trainable tensor (mutating them updates the subnet)."""
        return {
            "w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2,
            "bn_in.gamma": self.bn_in.gamma, "bn_in.beta": self.bn_in.beta,
            "bn_hidden.gamma": self.bn_hidden.gamma, "bn_hidden.beta": self.bn_hidden.beta,
        }

    def copy(self) -> "SubnetParams":
        return copy.deepcopy(self)


WEIGHT_KEYS = ("w1", "w2")


def init_subnet(n_in: int, hidden: int, n_out: int, size: int,
                rng: np.random.Generator) -> SubnetParams:
    """Fresh subnet with the scaled-Gaussian initialisation.

    ``size`` is N for CSI subnets and M for DET subnets; ``W1`` entries have
    variance ``1/(8 size)`` and ``W2`` entries ``1/size``.  Biases start at
    zero and both batch norms start as the identity.
    """
    w1 = rng.standard_normal((hidden, n_in)) * np.sqrt(1.0 / (8 * size))
    w2 = rng.standard_normal((n_out, hidden)) * np.sqrt(1.0 / size)
    return SubnetParams(w1=w1, b1=np.zeros(hidden), w2=w2, b2=np.zeros(n_out),
                        bn_in=BatchNormState.fresh(n_in),
                        bn_hidden=BatchNormState.fresh(hidden))


def init_csi_subnet(n: int, rng: np.random.Generator) -> SubnetParams:
    return init_subnet(2 * n, 16 * n, 2 * n, n, rng)


def init_det_subnet(m: int, rng: np.random.Generator) -> SubnetParams:
    return init_subnet(2 * m, 16 * m, 2 * m, m, rng)


@dataclass
class ForwardCache:
    bn_in: tuple
    z1: np.ndarray
    bn_hidden: tuple
    a1: np.ndarray
    a0: np.ndarray


def subnet_forward(x, params: SubnetParams, mode: str = INFER, update_running: bool = True):
    """Evaluate a subnet on a batch; returns ``(out, cache)``.

    ``cache`` is only populated in train mode and feeds :func:`subnet_backward`.
    """
    x = np.asarray(x, dtype=float)
    n_in, _, _ = params.dims
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ValueError(f"expected input of shape (B, {n_in}), got {x.shape}")
    a0, c_in = bn_forward(x, params.bn_in, mode, update_running)
    z1 = a0 @ params.w1.T + params.b1
    s1 = swish(z1)
    a1, c_hid = bn_forward(s1, params.bn_hidden, mode, update_running)
    out = a1 @ params.w2.T + params.b2
    if mode != TRAIN:
        return out, None
    return out, ForwardCache(bn_in=c_in, z1=z1, bn_hidden=c_hid, a1=a1, a0=a0)


def subnet_backward(cache: ForwardCache | None, upstream, params: SubnetParams,
                    l2_lambda: float = 0.0) -> dict[str, np.ndarray]:
    """Gradients of ``sum(upstream * out) + (l2_lambda/2) (||W1||^2 + ||W2||^2)``."""
    if cache is None:
        raise ValueError("subnet_backward needs a train-mode forward cache")
    dout = np.asarray(upstream, dtype=float)
    grads = {
        "w2": dout.T @ cache.a1 + l2_lambda * params.w2,
        "b2": dout.sum(axis=0),
    }
    da1 = dout @ params.w2
    ds1, grads["bn_hidden.gamma"], grads["bn_hidden.beta"] = bn_backward(
        da1, cache.bn_hidden, params.bn_hidden)
    dz1 = ds1 * swish_grad(cache.z1)
    grads["w1"] = dz1.T @ cache.a0 + l2_lambda * params.w1
    grads["b1"] = dz1.sum(axis=0)
    da0 = dz1 @ params.w1
    _, grads["bn_in.gamma"], grads["bn_in.beta"] = bn_backward(da0, cache.bn_in, params.bn_in)
    return grads


def mse_loss(pred, label) -> float:
    """``(1/B) sum_t ||label_t - pred_t||^2``."""
    pred = np.asarray(pred, dtype=float)
    label = np.asarray(label, dtype=float)
    if pred.shape != label.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {label.shape}")
    return float(np.sum((label - pred) ** 2) / pred.shape[0])


def mse_loss_grad(pred, label) -> np.ndarray:
    return 2.0 * (np.asarray(pred) - np.asarray(label)) / pred.shape[0]


def l2_penalty(params: SubnetParams, l2_lambda: float) -> float:
    return 0.5 * l2_lambda * float(np.sum(params.w1 ** 2) + np.sum(params.w2 ** 2))


@dataclass
class TrainHyper:
    """Optimiser settings; defaults are the full-scale training values."""

    lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 1e-4
    batch_size: int = 200
    max_iters: int = 15000

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam decay rates must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()}, t=0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, hyper: TrainHyper):
    """One bias-corrected Adam update, applied in place to ``params``."""
    state.t += 1
    b1, b2 = hyper.beta1, hyper.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = grads[key]
        if state.m[key].shape != p.shape:
            raise ValueError(f"Adam state for {key} has shape {state.m[key].shape}, expected {p.shape}")
        m = state.m[key] = b1 * state.m[key] + (1.0 - b1) * g
        v = state.v[key] = b2 * state.v[key] + (1.0 - b2) * g * g
        p -= hyper.lr * (m / corr1) / (np.sqrt(v / corr2) + hyper.adam_eps)
    return params, state
