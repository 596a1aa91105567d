"""Unfolded multi-task receiver: CSI and DET subnets chained by fixed cancellation steps.

The forward pass on a real-valued coarse estimate ``x`` (B x 2M) is::

    h_in = P~^T x                                  despread
    for each unfolded iteration:
        h_hat = CSI-NET(h_in)
        d_in  = x - sqrt(rho E / N) P~ h_hat       remove the CSI
        d_hat = DET-NET(d_in)
        h_in  = P~^T (x - sqrt((1 - rho) E) d_hat)  remove the payload, despread

Two iterations (four subnets) is the default depth.  The cancellation steps
have no trainable state.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .datagen import Dataset, walsh_matrix
from .link import LinkConfig
from .nn import (INFER, TRAIN, AdamState, SubnetParams, TrainHyper, adam_step,
                 init_csi_subnet, init_det_subnet, mse_loss, mse_loss_grad,
                 subnet_backward, subnet_forward)

log = logging.getLogger(__name__)

STAGE_NAMES = ("csi_net1", "det_net1", "csi_net2", "det_net2")


@dataclass
class UnfoldedModel:
    """Subnets in cascade order (CSI, DET, CSI, DET, ...) plus the link they serve."""

    subnets: list[SubnetParams]
    link: LinkConfig
    p_lifted: np.ndarray
    train_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.subnets) % 2 or not self.subnets:
            raise ValueError("need an even, non-zero number of subnets")
        n, m = self.link.n_bs, self.link.m_frame
        for j, net in enumerate(self.subnets):
            want = (2 * n, 16 * n, 2 * n) if j % 2 == 0 else (2 * m, 16 * m, 2 * m)
            if net.dims != want:
                raise ValueError(f"subnet {j} has dims {net.dims}, expected {want}")
        if self.p_lifted.shape != (2 * m, 2 * n):
            raise ValueError(f"p_lifted has shape {self.p_lifted.shape}, expected {(2 * m, 2 * n)}")

    @property
    def iterations(self) -> int:
        return len(self.subnets) // 2

    @property
    def csi_net1(self) -> SubnetParams:
        return self.subnets[0]

    @property
    def det_net1(self) -> SubnetParams:
        return self.subnets[1]

    @property
    def csi_net2(self) -> SubnetParams:
        return self.subnets[2]

    @property
    def det_net2(self) -> SubnetParams:
        return self.subnets[3]

    def stage_name(self, j: int) -> str:
        kind = "csi" if j % 2 == 0 else "det"
        return f"{kind}_net{j // 2 + 1}"

    def copy(self) -> "UnfoldedModel":
        return copy.deepcopy(self)


def init_model(link: LinkConfig, rng: np.random.Generator, iterations: int = 2) -> UnfoldedModel:
    subnets = []
    for _ in range(iterations):
        subnets.append(init_csi_subnet(link.n_bs, rng))
        subnets.append(init_det_subnet(link.m_frame, rng))
    p = walsh_matrix(link.m_frame, link.n_bs)
    return UnfoldedModel(subnets=subnets, link=link, p_lifted=p.p_lifted)


def despread_real(x_tilde, p_lifted) -> np.ndarray:
    """``P~^T x`` for each row of ``x_tilde``; no 1/M scaling."""
    return np.asarray(x_tilde, dtype=float) @ p_lifted


def reduce_csi_interference(x_tilde, h_hat, p_lifted, cfg: LinkConfig) -> np.ndarray:
    """``x - sqrt(rho E / N) P~ h_hat`` row-wise."""
    return np.asarray(x_tilde, dtype=float) - cfg.csi_gain * (np.asarray(h_hat) @ p_lifted.T)


def reduce_ulus_interference(x_tilde, d_hat, p_lifted, cfg: LinkConfig) -> np.ndarray:
    """``P~^T (x - sqrt((1 - rho) E) d_hat)`` row-wise, sized for the next CSI subnet."""
    return despread_real(np.asarray(x_tilde, dtype=float) - cfg.data_gain * np.asarray(d_hat),
                         p_lifted)


def _expert_link(model: UnfoldedModel, rho: float | None) -> LinkConfig:
    return model.link if rho is None else model.link.with_(rho=rho)


def model_forward(x_tilde, model: UnfoldedModel, mode: str = INFER, rho: float | None = None):
    """Run the cascade; returns ``(h_hat, d_hat, intermediates)``.

    ``intermediates`` maps ``"h_hat1"``, ``"d_hat1"``, ... and the subnet
    inputs ``"h_in1"``, ``"d_in1"``, ... to their batch values.  ``rho``
    overrides the coefficient used by the cancellation steps, for testing at
    a power split other than the training one.  ``mode="train"`` runs every
    batch norm on batch statistics without touching the running averages.
    """
    x = np.asarray(x_tilde, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2 * model.link.m_frame:
        raise ValueError(f"expected input (B, {2 * model.link.m_frame}), got {x.shape}")
    cfg = _expert_link(model, rho)
    inter = {}
    h_in = despread_real(x, model.p_lifted)
    h_hat = d_hat = None
    for i in range(model.iterations):
        k = i + 1
        inter[f"h_in{k}"] = h_in
        h_hat, _ = subnet_forward(h_in, model.subnets[2 * i], mode, update_running=False)
        inter[f"h_hat{k}"] = h_hat
        d_in = reduce_csi_interference(x, h_hat, model.p_lifted, cfg)
        inter[f"d_in{k}"] = d_in
        d_hat, _ = subnet_forward(d_in, model.subnets[2 * i + 1], mode, update_running=False)
        inter[f"d_hat{k}"] = d_hat
        h_in = reduce_ulus_interference(x, d_hat, model.p_lifted, cfg)
    return h_hat, d_hat, inter


def stage_input(x_tilde, model: UnfoldedModel, j: int, rho: float | None = None) -> np.ndarray:
    """Input that subnet ``j`` receives when subnets ``0..j-1`` run in infer mode."""
    x = np.asarray(x_tilde, dtype=float)
    cfg = _expert_link(model, rho)
    cur = despread_real(x, model.p_lifted)
    for i in range(j):
        out, _ = subnet_forward(cur, model.subnets[i], INFER)
        if i % 2 == 0:
            cur = reduce_csi_interference(x, out, model.p_lifted, cfg)
        else:
            cur = reduce_ulus_interference(x, out, model.p_lifted, cfg)
    return cur


StepCallback = Callable[[int, int, float], None]


def train_stage(net: SubnetParams, inputs: np.ndarray, labels: np.ndarray,
                hyper: TrainHyper, rng: np.random.Generator,
                on_step: StepCallback | None = None, stage: int = 0) -> list[float]:
    """Minibatch Adam on one subnet; returns the per-iteration MSE (without L2).

    Batches are drawn by walking a fresh permutation of the samples each
    epoch; a trailing remainder shorter than the batch size is skipped.
    """
    count = inputs.shape[0]
    bs = min(hyper.batch_size, count)
    if bs < 2:
        raise ValueError("training needs at least 2 samples per batch")
    params = net.trainable()
    opt = AdamState.zeros_like(params)
    losses = []
    order = rng.permutation(count)
    pos = 0
    for it in range(hyper.max_iters):
        if pos + bs > count:
            order = rng.permutation(count)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        xb, yb = inputs[idx], labels[idx]
        out, cache = subnet_forward(xb, net, TRAIN)
        loss = mse_loss(out, yb)
        grads = subnet_backward(cache, mse_loss_grad(out, yb), net, hyper.l2_lambda)
        adam_step(params, grads, opt, hyper)
        losses.append(loss)
        if on_step is not None:
            on_step(stage, it, loss)
    return losses


def train_subnet_by_subnet(dataset: Dataset | Sequence[Dataset], model_init: UnfoldedModel,
                           hyper: TrainHyper, rng: np.random.Generator,
                           on_step: StepCallback | None = None) -> UnfoldedModel:
    """Train the subnets one at a time, each with all earlier ones frozen.

    ``dataset`` is either one dataset shared by every stage or a sequence
    with one dataset per stage.  The subnet under training uses batch
    statistics; the frozen subnets feeding it run in infer mode on their
    stored running statistics.  ``model_init`` is not modified.
    """
    model = model_init.copy()
    n_stages = len(model.subnets)
    if isinstance(dataset, Dataset):
        per_stage = [dataset] * n_stages
    else:
        per_stage = list(dataset)
        if len(per_stage) != n_stages:
            raise ValueError(f"need {n_stages} stage datasets, got {len(per_stage)}")
    for ds in per_stage:
        if ds.count == 0:
            raise ValueError("empty dataset")
        if ds.x_tilde.shape[1] != 2 * model.link.m_frame or ds.h_label.shape[1] != 2 * model.link.n_bs:
            raise ValueError("dataset dimensions do not match the model")

    summary = []
    for j in range(n_stages):
        ds = per_stage[j]
        inputs = stage_input(ds.x_tilde, model, j)
        labels = ds.h_label if j % 2 == 0 else ds.d_label
        losses = train_stage(model.subnets[j], inputs, labels, hyper, rng, on_step, j)
        name = model.stage_name(j)
        if losses:
            log.info("%s: loss %.4g -> %.4g over %d iterations", name, losses[0], losses[-1], len(losses))
        summary.append({"stage": name, "iters": len(losses),
                        "first_loss": losses[0] if losses else None,
                        "final_loss": losses[-1] if losses else None})
    first = per_stage[0]
    model.train_meta = {
        "train_snr_db": first.snr_db,
        "seed": first.seed,
        "dataset_size": first.count,
        "hyper": dict(vars(hyper)),
        "stages": summary,
    }
    return model
