"""Experiment configuration: JSON document <-> dataclasses.

The document has three sections; every key is optional and falls back to
the desk-scale profile::

    {"link":  {"n": 8, "m": 64, "rho": 0.2, "e_u": 1.0},
     "train": {"snr_db": 5, "samples": 20000, "batch": 200, "iters": 3000,
               "lr": 0.003, "beta1": 0.99, "beta2": 0.999, "l2_lambda": 1e-4,
               "seed": 1},
     "eval":  {"snr_db_list": [0, 2, ..., 14], "rho_list": [0.2],
               "max_samples": 10000, "min_bit_errors": 1000,
               "high_snr_threshold_db": 10}}
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ..link import LinkConfig
from ..nn import TrainHyper


@dataclass
class TrainConfig:
    snr_db: float = 5.0
    samples: int = 20_000
    batch: int = 200
    iters: int = 3000
    lr: float = 3e-3
    beta1: float = 0.99
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 1e-4
    seed: int = 1
    fresh_data_per_stage: bool = False

    def hyper(self) -> TrainHyper:
        return TrainHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
                          l2_lambda=self.l2_lambda, batch_size=self.batch, max_iters=self.iters)


@dataclass
class EvalConfig:
    snr_db_list: list[float] = field(default_factory=lambda: [float(s) for s in range(0, 15, 2)])
    rho_list: list[float] = field(default_factory=lambda: [0.2])
    max_samples: int = 10_000
    min_bit_errors: int = 1000
    high_snr_threshold_db: float = 10.0
    # cap for the error-counting regime so a near-error-free point terminates
    max_samples_high_snr: int = 200_000
    chunk_size: int = 1000
    baseline_iters: int = 3

    def __post_init__(self):
        if not self.snr_db_list:
            raise ValueError("eval.snr_db_list must not be empty")
        if not self.rho_list:
            raise ValueError("eval.rho_list must not be empty")
        if self.min_bit_errors < 1:
            raise ValueError("eval.min_bit_errors must be >= 1")
        if self.max_samples < 1 or self.max_samples_high_snr < 1 or self.chunk_size < 1:
            raise ValueError("sample budgets and chunk size must be >= 1")
        if self.baseline_iters < 1:
            raise ValueError("eval.baseline_iters must be >= 1")
        for rho in self.rho_list:
            if not 0.0 <= rho <= 1.0:
                raise ValueError(f"rho {rho} outside [0, 1]")


@dataclass
class ExperimentConfig:
    link: LinkConfig = field(default_factory=lambda: LinkConfig(8, 64, 0.2, 1.0))
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output: dict = field(default_factory=dict)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy with a new seed; training and evaluation draw disjoint streams from it."""
        d = self.to_dict()
        d["train"]["seed"] = seed
        return from_dict(d)

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_dict(self) -> dict:
        link = {"n": self.link.n_bs, "m": self.link.m_frame, "rho": self.link.rho, "e_u": self.link.e_u}
        return {"link": link, "train": asdict(self.train), "eval": asdict(self.eval),
                "output": dict(self.output)}


_LINK_KEYS = {"n": "n_bs", "m": "m_frame", "rho": "rho", "e_u": "e_u"}


def _pick(cls, section: dict, name: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ValueError(f"unknown keys in '{name}': {sorted(unknown)}")
    return cls(**section)


def from_dict(doc: dict) -> ExperimentConfig:
    unknown = set(doc) - {"link", "train", "eval", "output"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    link_doc = dict(doc.get("link", {}))
    bad = set(link_doc) - set(_LINK_KEYS)
    if bad:
        raise ValueError(f"unknown keys in 'link': {sorted(bad)}")
    base = {"n": 8, "m": 64, "rho": 0.2, "e_u": 1.0}
    base.update(link_doc)
    link = LinkConfig(**{_LINK_KEYS[k]: v for k, v in base.items()})
    ev = dict(doc.get("eval", {}))
    for key in ("snr_db_list", "rho_list"):
        if key in ev:
            ev[key] = [float(v) for v in ev[key]]
    return ExperimentConfig(link=link, train=_pick(TrainConfig, doc.get("train", {}), "train"),
                            eval=_pick(EvalConfig, ev, "eval"), output=dict(doc.get("output", {})))


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: top level must be an object")
    return from_dict(doc)
