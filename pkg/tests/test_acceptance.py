"""Acceptance criteria, one test per criterion.

Each test prints ``criterion k: PASS|FAIL`` with the measured numbers; the
lines are collected again in the ``acceptance criteria`` section of the
terminal summary.  Criteria 6 to 9 share one trained desk-scale model.
"""
import time
from dataclasses import replace

import numpy as np
import pytest
from gradcheck import max_rel_error, random_case
from scipy.stats import spearmanr

from sccsi.baseline import cancel_csi, csi_coefficient, data_coefficient, despread, run_baseline
from sccsi.datagen import gen_bits, gen_channel, stream_rng, walsh_matrix
from sccsi.harness.config import EvalConfig
from sccsi.harness.experiment import (BaselineReceiver, UnfoldedReceiver, evaluate_point,
                                      read_csv, sweep, write_csv)
from sccsi.link import (LinkConfig, qpsk_modulate, snr_to_sigma2,
                        spread_superimpose, uplink_transmit)
from sccsi.nn import TRAIN, AdamState, BatchNormState, TrainHyper, adam_step, bn_forward


def noiseless_batch(rho, count=200, n=8, m=64, seed=0):
    cfg = LinkConfig(n, m, rho=rho, sigma2=0.0)
    p = walsh_matrix(m, n)
    rng = np.random.default_rng(seed)
    d = qpsk_modulate(gen_bits(2 * m, rng, count))
    h = gen_channel(n, rng, count)
    g = gen_channel(n, rng, count)
    r = uplink_transmit(spread_superimpose(h, d, p, cfg), g, 0.0)
    return cfg, p, h, g, d, r


def test_criterion_1_algebraic_exactness(report):
    t0 = time.perf_counter()
    cfg, p, h, g, _, r = noiseless_batch(1.0)
    res = run_baseline(r, g, p, cfg, iters=1)
    err_h = float(np.max(np.linalg.norm(res.h_est - h, axis=-1) / np.linalg.norm(h, axis=-1)))
    cfg, p, _, g, d, r = noiseless_batch(0.0, seed=1)
    res = run_baseline(r, g, p, cfg, iters=1)
    err_d = float(np.max(np.linalg.norm(res.d_est - d, axis=-1) / np.linalg.norm(d, axis=-1)))
    dt = time.perf_counter() - t0
    ok = err_h <= 1e-10 and err_d <= 1e-10 and dt < 1.0
    report(1, ok, f"rel err H {err_h:.2e}, D {err_d:.2e} (limit 1e-10), {dt:.2f} s")
    assert ok


def test_criterion_2_walsh_exactness(report):
    t0 = time.perf_counter()
    worst = 0
    orders = [1 << k for k in range(11)]
    for m in orders:
        full = walsh_matrix(m, m).p
        assert full.dtype == np.int64
        # +-1 products summed in float64 are exact integers for m <= 2**53;
        # the Gram matrix of the first n columns is its leading n x n block
        gram = (full.T.astype(np.float64) @ full.astype(np.float64)).astype(np.int64)
        worst = max(worst, int(np.max(np.abs(gram - m * np.eye(m, dtype=np.int64)))))
        for n in (range(1, m + 1) if m <= 64 else (1, 3, m // 2, m - 1, m)):
            if not np.array_equal(walsh_matrix(m, n).p, full[:, :n]):
                worst = max(worst, 1)
    dt = time.perf_counter() - t0
    ok = worst == 0 and dt < 1.0
    report(2, ok, f"max |P^T P - M I| = {worst} over M in 1..1024 and all N <= M, {dt:.2f} s")
    assert worst == 0



def test_criterion_3_mmse_coefficients(report):
    n, m, frames = 4, 16, 200_000
    cfg = LinkConfig(n, m, rho=0.2, sigma2=snr_to_sigma2(5.0))
    p = walsh_matrix(m, n)
    rng = stream_rng(3, 7)
    # one fixed unit-norm uplink channel so that both coefficients are single scalars
    g = gen_channel(n, rng)
    g = g / np.linalg.norm(g)
    num_h = den_h = num_d = den_d = 0.0
    for _ in range(frames // 10_000):
        d = qpsk_modulate(gen_bits(2 * m, rng, 10_000))
        h = gen_channel(n, rng, 10_000)
        r = uplink_transmit(spread_superimpose(h, d, p, cfg), g, cfg.sigma2, rng)
        u = np.einsum("n,bnk->bk", np.conj(g), despread(r, p))
        num_h += np.vdot(u, h)
        den_h += np.vdot(u, u).real
        # payload step with the CSI term removed exactly
        v = np.einsum("n,bnk->bk", np.conj(g), cancel_csi(r, g, h, p, cfg))
        num_d += np.vdot(v, d)
        den_d += np.vdot(v, v).real
    a_h, a_d = num_h / den_h, num_d / den_d
    c_h, c_d = csi_coefficient(1.0, cfg), data_coefficient(1.0, cfg)
    dev_h = abs(a_h - c_h) / c_h
    dev_d = abs(a_d - c_d) / c_d
    ok = dev_h <= 0.02 and dev_d <= 0.02
    report(3, ok, f"CSI scalar: empirical {a_h.real:.4f}{a_h.imag:+.4f}j vs formula {c_h:.4f} "
                  f"(dev {dev_h:.1%}); payload scalar: empirical {a_d.real:.4f}{a_d.imag:+.4f}j "
                  f"vs formula {c_d:.4f} (dev {dev_d:.2%}); limit 2%")
    assert dev_d <= 0.02, "payload coefficient"
    assert dev_h <= 0.02, "CSI coefficient"


def test_criterion_4_gradient_fidelity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(44)
    errors = []
    for _ in range(10):
        n_in, hidden, n_out = (int(v) for v in rng.integers(2, 7, 3))
        hidden *= 2
        batch = int(rng.integers(3, 9))
        net, x, upstream = random_case(rng, n_in, hidden, n_out, batch)
        errors.append(max_rel_error(net, x, upstream, float(rng.choice([0.0, 1e-4, 0.1]))))
    worst = max(errors)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-4
    report(4, ok, f"max relative gradient error {worst:.2e} over 10 subnets (limit 1e-4), {dt:.1f} s")
    assert ok


def test_criterion_5_adam_and_bn(report):
    hyper = TrainHyper(lr=1e-4, beta1=0.99, beta2=0.999, adam_eps=1e-8)
    p = {"w": np.array([0.5])}
    state = AdamState.zeros_like(p)
    adam_step(p, {"w": np.array([0.3])}, state, hyper)
    adam_step(p, {"w": np.array([-0.2])}, state, hyper)
    # hand trace: m1 = 0.003, v1 = 9e-5; m2 = 0.00097, v2 = 0.00012991
    theta1 = 0.5 - 1e-4 * (0.003 / 0.01) / (np.sqrt(0.00009 / 0.001) + 1e-8)
    theta2 = theta1 - 1e-4 * (0.00097 / 0.0199) / (np.sqrt(0.00012991 / 0.001999) + 1e-8)
    adam_err = abs(p["w"][0] - theta2)

    rng = np.random.default_rng(5)
    x = rng.standard_normal((200, 32)) * rng.uniform(0.01, 100, 32) + rng.uniform(-50, 50, 32)
    y, _ = bn_forward(x, BatchNormState.fresh(32), TRAIN)
    mean_err = float(np.max(np.abs(y.mean(axis=0))))
    var_err = float(np.max(np.abs(y.var(axis=0) - 1.0)))
    ok = adam_err <= 1e-12 and mean_err <= 1e-9 and var_err <= 1e-9
    report(5, ok, f"Adam two-step error {adam_err:.1e} (limit 1e-12); BN |mean| {mean_err:.1e}, "
                  f"|var-1| {var_err:.1e} (limit 1e-9)")
    assert ok


@pytest.fixture(scope="module")
def eval_5db(desk_model, desk_config):
    cfg = desk_config
    ev = EvalConfig(snr_db_list=[5.0], rho_list=[0.2], max_samples=10_000)
    nn = evaluate_point(UnfoldedReceiver(desk_model), cfg.link, 5.0, 0.2, ev, cfg.seed)
    base = evaluate_point(BaselineReceiver(3), cfg.link, 5.0, 0.2, ev, cfg.seed)
    return nn, base


@pytest.mark.slow
def test_criterion_6_desk_training(report, desk_training, eval_5db):
    _, seconds = desk_training
    nn, base = eval_5db
    nmse_ratio = nn.nmse / base.nmse
    ber_ratio = nn.ber / base.ber
    ok = nmse_ratio <= 1.1 and ber_ratio <= 1.5 and seconds <= 20 * 60
    report(6, ok, f"5 dB NMSE unfolded {nn.nmse:.4f} vs baseline {base.nmse:.4f} "
                  f"(ratio {nmse_ratio:.3f}, limit 1.1); BER {nn.ber:.4f} vs {base.ber:.4f} "
                  f"(ratio {ber_ratio:.3f}, limit 1.5); training {seconds / 60:.1f} min "
                  f"({nn.samples_used} test frames)")
    assert nmse_ratio <= 1.1
    assert ber_ratio <= 1.5
    assert seconds <= 20 * 60


@pytest.fixture(scope="module")
def ppc_sweep(desk_model, desk_config, tmp_path_factory):
    cfg = replace(desk_config, eval=EvalConfig(rho_list=[0.05, 0.10, 0.15, 0.20]))
    t0 = time.perf_counter()
    rows = sweep([UnfoldedReceiver(desk_model), BaselineReceiver(3)], cfg)
    path = write_csv(rows, tmp_path_factory.mktemp("acceptance") / "metrics.csv")
    return cfg, path, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_snr_generalisation(report, ppc_sweep):
    _, path, _ = ppc_sweep
    rows = sorted((r for r in read_csv(path) if r.method == "unfolded" and r.rho == 0.2),
                  key=lambda r: r.snr_db)
    snr = [r.snr_db for r in rows]
    nmse = [r.nmse for r in rows]
    score = -np.log(nmse)
    increasing = bool(np.all(np.diff(score) > 0))
    rho_s = spearmanr(snr, nmse).statistic
    ok = increasing and rho_s <= -0.9
    curve = ", ".join(f"{s:g}:{v:.3f}" for s, v in zip(snr, nmse))
    report(7, ok, f"NMSE by SNR [{curve}]; strictly decreasing={increasing}, "
                  f"Spearman {rho_s:.3f} (limit -0.9)")
    assert increasing
    assert rho_s <= -0.9


@pytest.mark.slow
def test_criterion_8_ppc_protocol(report, ppc_sweep):
    cfg, path, seconds = ppc_sweep
    rows = read_csv(path)
    expected = {(s, p, m) for s in cfg.eval.snr_db_list for p in cfg.eval.rho_list
                for m in ("unfolded", "baseline")}
    complete = {(r.snr_db, r.rho, r.method) for r in rows} == expected and len(rows) == len(expected)
    at10 = {r.rho: r for r in rows if r.method == "baseline" and r.snr_db == 10.0}
    ber = [at10[p].ber for p in (0.15, 0.10, 0.05)]
    frames = min(at10[p].samples_used for p in (0.15, 0.10, 0.05))
    monotone = ber[0] >= ber[1] >= ber[2]
    ok = complete and monotone and frames >= 10_000
    report(8, ok, f"{len(rows)}/{len(expected)} rows; baseline BER at 10 dB for rho 0.15/0.10/0.05 = "
                  f"{ber[0]:.5f}/{ber[1]:.5f}/{ber[2]:.5f} ({frames} frames each); "
                  f"sweep {seconds / 60:.1f} min")
    assert complete
    assert frames >= 10_000
    assert monotone


@pytest.mark.slow
def test_criterion_9_reproducibility(report, ppc_sweep, desk_model):
    cfg, path, _ = ppc_sweep
    rows = read_csv(path)
    # re-run a spread of recorded rows from their seed and config alone
    picks = [rows[i] for i in np.linspace(0, len(rows) - 1, 6).astype(int)]
    receivers = {"unfolded": UnfoldedReceiver(desk_model), "baseline": BaselineReceiver(3)}
    mismatches = []
    for row in picks:
        again = evaluate_point(receivers[row.method], cfg.link, row.snr_db, row.rho, cfg.eval, row.seed)
        if again.key() != row.key():
            mismatches.append((row, again))
    ok = not mismatches
    report(9, ok, f"{len(picks) - len(mismatches)}/{len(picks)} re-run rows bit-identical "
                  f"(all columns except wall_time_s)")
    assert ok, mismatches
