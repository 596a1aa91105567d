"""Training runs, Monte-Carlo sweeps and metrics CSV.

Evaluation frames come in chunks of ``eval.chunk_size``; chunk ``k`` is drawn
from ``SeedSequence(seed, spawn_key=(1, k))`` (training data uses spawn key
0, so test frames never repeat training frames).  The chunk stream does not
depend on the SNR, the test power split or the receiver: every sweep point
sees the same bits, channels and unit-variance noise draws, scaled to its
own noise level.  Comparisons across points are therefore paired.

Stopping rule per point: at or below ``high_snr_threshold_db`` exactly
``max_samples`` frames are used; above it, chunks are consumed until
``min_bit_errors`` bit errors are seen or ``max_samples_high_snr`` frames
are used.
"""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import astuple, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from ..baseline import run_baseline
from ..datagen import EVAL_STREAM, gen_batch, gen_dataset, stream_rng, walsh_matrix
from ..link import (LinkConfig, bit_errors, nmse_per_sample, qpsk_demodulate, real_to_complex,
                    snr_to_sigma2)
from ..unfolded import UnfoldedModel, init_model, model_forward, train_subnet_by_subnet
from .config import EvalConfig, ExperimentConfig

log = logging.getLogger(__name__)

CSV_HEADER = ("snr_db", "rho", "method", "nmse", "ber", "samples_used", "bit_errors",
              "wall_time_s", "seed")


@dataclass
class MetricsRow:
    snr_db: float
    rho: float
    method: str
    nmse: float
    ber: float
    samples_used: int
    bit_errors: int
    wall_time_s: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError(f"ber {self.ber} outside [0, 1]")
        if self.nmse < 0:
            raise ValueError(f"negative nmse {self.nmse}")
        if self.samples_used < 1:
            raise ValueError("samples_used must be >= 1")

    def key(self) -> tuple:
        """All fields except the wall-clock time."""
        return tuple(v for f, v in zip(fields(self), astuple(self)) if f.name != "wall_time_s")


class BaselineReceiver:
    """Iterative MMSE receiver; needs the true uplink channel and noise variance."""

    tag = "baseline"

    def __init__(self, iters: int = 3):
        self.iters = iters

    def __call__(self, frame, sample, link: LinkConfig):
        res = run_baseline(frame.r, frame.g, walsh_matrix(link.m_frame, link.n_bs), link, self.iters)
        return res.h_est, res.d_est


class UnfoldedReceiver:
    """Trained cascade on the coarse estimate; uses the test power split in its cancellation steps."""

    tag = "unfolded"

    def __init__(self, model: UnfoldedModel):
        self.model = model

    def __call__(self, frame, sample, link: LinkConfig):
        h_hat, d_hat, _ = model_forward(sample.x_tilde, self.model, rho=link.rho)
        return real_to_complex(h_hat), real_to_complex(d_hat)


def evaluate_point(receiver, link: LinkConfig, snr_db: float, rho: float,
                   ev: EvalConfig, seed: int) -> MetricsRow:
    """Monte-Carlo NMSE and BER of one receiver at one (SNR, power split) point."""
    t0 = time.perf_counter()
    test_link = link.with_(rho=rho, sigma2=snr_to_sigma2(snr_db, link.e_u))
    p = walsh_matrix(test_link.m_frame, test_link.n_bs)
    high = snr_db > ev.high_snr_threshold_db
    budget = ev.max_samples_high_snr if high else ev.max_samples
    nmse_sum = 0.0
    errors = used = 0
    chunk = 0
    while used < budget:
        size = min(ev.chunk_size, budget - used)
        frame, sample = gen_batch(size, test_link, p, stream_rng(seed, EVAL_STREAM, chunk))
        h_est, d_est = receiver(frame, sample, test_link)
        nmse_sum += float(np.sum(nmse_per_sample(frame.h, h_est)))
        errors += bit_errors(qpsk_demodulate(d_est), frame.bits)
        used += size
        chunk += 1
        if high and errors >= ev.min_bit_errors:
            break
    bits_total = used * 2 * test_link.m_frame
    return MetricsRow(snr_db=float(snr_db), rho=float(rho), method=receiver.tag,
                      nmse=nmse_sum / used, ber=errors / bits_total, samples_used=used,
                      bit_errors=errors, wall_time_s=time.perf_counter() - t0, seed=int(seed))


def _point(args):
    return evaluate_point(*args)


def sweep(receivers, cfg: ExperimentConfig, workers: int = 1) -> list[MetricsRow]:
    """Evaluate every receiver at every (SNR, rho) pair of ``cfg.eval``.

    Rows come out ordered by SNR, then rho, then receiver, whatever the
    number of workers.
    """
    if not isinstance(receivers, (list, tuple)):
        receivers = [receivers]
    ev = cfg.eval
    if not ev.snr_db_list:
        raise ValueError("empty SNR list")
    for rx in receivers:
        model = getattr(rx, "model", None)
        if model is not None and (model.link.n_bs, model.link.m_frame) != (cfg.link.n_bs, cfg.link.m_frame):
            raise ValueError(f"model dimensions (N={model.link.n_bs}, M={model.link.m_frame}) do not "
                             f"match config (N={cfg.link.n_bs}, M={cfg.link.m_frame})")
    jobs = [(rx, cfg.link, snr, rho, ev, cfg.seed)
            for snr in ev.snr_db_list for rho in ev.rho_list for rx in receivers]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_point, jobs))
    else:
        rows = [_point(job) for job in jobs]
    for row in rows:
        log.info("%-8s snr=%5.1f rho=%.2f nmse=%.4g ber=%.4g (%d frames)", row.method,
                 row.snr_db, row.rho, row.nmse, row.ber, row.samples_used)
    return rows


def train_model(cfg: ExperimentConfig, on_step=None) -> UnfoldedModel:
    """Generate the training set(s) and run subnet-by-subnet training.

    The model initialisation and the minibatch order draw from
    ``SeedSequence(seed, spawn_key=(2,))`` and ``(3,)``, disjoint from the
    dataset (0) and evaluation (1) streams.  With
    ``fresh_data_per_stage`` stage ``j`` gets its own dataset, seeded
    ``seed + j``.
    """
    tr = cfg.train
    if tr.fresh_data_per_stage:
        data = [gen_dataset(tr.samples, cfg.link, tr.snr_db, tr.seed + j) for j in range(4)]
    else:
        data = gen_dataset(tr.samples, cfg.link, tr.snr_db, tr.seed)
    model0 = init_model(cfg.link, stream_rng(tr.seed, 2))
    model = train_subnet_by_subnet(data, model0, tr.hyper(), stream_rng(tr.seed, 3), on_step)
    model.link = cfg.link.with_(sigma2=snr_to_sigma2(tr.snr_db, cfg.link.e_u))
    model.train_meta["config"] = cfg.to_dict()
    return model


def write_csv(rows: Sequence[MetricsRow], path) -> Path:
    """Append rows, writing the header first if the file is new or empty."""
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    if not fresh:
        with open(path, newline="") as f:
            head = next(csv.reader(f), None)
        if tuple(head or ()) != CSV_HEADER:
            raise ValueError(f"{path} has header {head}, expected {list(CSV_HEADER)}")
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in astuple(row)])
    return path


def read_csv(path) -> list[MetricsRow]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRow(snr_db=float(r["snr_db"]), rho=float(r["rho"]), method=r["method"],
                           nmse=float(r["nmse"]), ber=float(r["ber"]),
                           samples_used=int(r["samples_used"]), bit_errors=int(r["bit_errors"]),
                           wall_time_s=float(r["wall_time_s"]), seed=int(r["seed"]))
                for r in reader]
