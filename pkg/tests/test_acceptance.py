"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line (collected again in the terminal summary).
Criteria 7, 8 and 10 train full-size policies and take several minutes each.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from pisampler import cli
from pisampler.baselines import HmcConfig, SmcConfig, hmc_sample, smc_annealed
from pisampler.config import RunConfig
from pisampler.estimators import (ess_fraction, log_z_elbo, log_z_is, read_samples_csv,
                                  sample_weighted)
from pisampler.metrics import w2_1d
from pisampler.policy import NeuralPolicy, ZeroPolicy, gaussian_oracle, pi_control_mc
from pisampler.rng import stream_key
from pisampler.sde import SdeConfig, simulate_batch
from pisampler.targets import gaussian_target
from pisampler.trainer import loss_batch

from conftest import central_diff, record_criterion, rel_err

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
KL = np.log(0.5) + 2.0 / 0.5 - 0.5


def _config_copy(tmp_path, name, **overrides):
    """Copy a shipped config with its output directory moved under tmp_path."""
    cfg = RunConfig.load(CONFIGS / name).to_dict()
    cfg["output"]["dir"] = str(tmp_path / name.split(".")[0])
    for dotted, value in overrides.items():
        section, key = dotted.split(".")
        cfg[section][key] = value
    path = tmp_path / (name + ".json")
    path.write_text(json.dumps(cfg))
    return path, Path(cfg["output"]["dir"])


def _seeded_log_z(config, out, seeds, n):
    ckpt = str(out / "checkpoints" / "policy.txt")
    records = []
    for s in seeds:
        rc = cli.main(["logz", "--config", str(config), "--seed", str(s), "--n", str(n),
                       "--checkpoint", ckpt, "--out", str(out / f"eval_{s}")])
        assert rc == 0
        records.append(json.loads((out / f"eval_{s}" / "metrics.json").read_text()))
    return records


def test_criterion_01_bptt_gradient():
    start = time.perf_counter()
    target = gaussian_target([1.0], [0.25])
    cfg = SdeConfig(1, 1.0, 3)
    pol = NeuralPolicy("grad", 1, 1.0, hidden=1, num_freq=1, target=target)
    pol.params.flat[:] = np.random.default_rng(0).normal(size=pol.params.size)
    noises = np.random.default_rng(1).normal(size=(2, 3, 1)) * np.sqrt(cfg.dt)
    grads = loss_batch(pol, target, cfg, 2, noises=noises).param_grads

    def loss(flat):
        store = pol.params.copy()
        store.flat[:] = flat
        return loss_batch(pol.with_params(store), target, cfg, 2, noises=noises, grad=False).loss

    err = rel_err(grads, central_diff(loss, pol.params.flat))
    wall = time.perf_counter() - start
    ok = err <= 1e-4 and wall < 1.0
    assert record_criterion(1, ok, f"{pol.params.size} params, rel err {err:.2e}, {wall:.2f}s")


def test_criterion_02_oracle_hits_target():
    start = time.perf_counter()
    target = gaussian_target([1.0], [0.25])
    cfg = SdeConfig(1, 1.0, 400, seed=0)
    ws = sample_weighted(gaussian_oracle([1.0], [0.25], cfg), target, cfg, 10000)
    x = ws.points[:, 0]
    mean_ok = abs(x.mean() - 1.0) <= 3 * x.std(ddof=1) / np.sqrt(x.size)
    var_ok = abs(x.var(ddof=1) - 0.25) <= 0.05 * 0.25
    lw_var = np.var(ws.log_w, ddof=1)
    wall = time.perf_counter() - start
    ok = mean_ok and var_ok and lw_var <= 1e-2 and wall < 30
    assert record_criterion(2, ok, f"mean {x.mean():.4f}, var {x.var(ddof=1):.4f}, "
                                   f"log-w var {lw_var:.2e}, {wall:.1f}s")


def test_criterion_03_path_integral_control():
    start = time.perf_counter()
    target = gaussian_target([1.0], [0.25])
    cfg = SdeConfig(1, 1.0, 100, seed=0)
    oracle = gaussian_oracle([1.0], [0.25], cfg)
    worst, fails = 0.0, 0
    for t in (0.0, 0.2, 0.4, 0.6, 0.8):
        for x in (-1.0, -0.5, 0.0, 0.5, 1.0):
            est, err = pi_control_mc(target, cfg, t, [x], 10 ** 6, seed=int(stream_key(0, "c3")))
            z = abs(est[0] - oracle.control(t, np.array([x]))[0]) / err[0]
            worst = max(worst, z)
            fails += z > 3
    wall = time.perf_counter() - start
    ok = fails == 0 and wall < 120
    assert record_criterion(3, ok, f"25 points, worst |z| {worst:.2f}, {wall:.1f}s")


def test_criterion_04_log_z_estimators():
    start = time.perf_counter()
    target = gaussian_target([1.0], [0.25], np.log(3))
    cfg = SdeConfig(1, 1.0, 100, seed=0)
    ws = sample_weighted(ZeroPolicy(1, 1.0), target, cfg, 10 ** 5)
    lz, lz_err = log_z_is(ws)
    elbo, elbo_err = log_z_elbo(ws)
    is_ok = abs(lz - np.log(3)) <= 3 * lz_err
    gap_ok = np.log(3) - elbo >= KL - 3 * elbo_err
    wall = time.perf_counter() - start
    ok = is_ok and gap_ok and wall < 60
    assert record_criterion(4, ok, f"is {lz:.4f}+-{lz_err:.4f} (log 3 = {np.log(3):.4f}), "
                                   f"gap {np.log(3) - elbo:.4f} vs KL {KL:.4f}, {wall:.1f}s")


def test_criterion_05_ess_bound():
    start = time.perf_counter()
    target = gaussian_target([1.0], [0.25])
    cfg = SdeConfig(1, 1.0, 400, seed=0)
    details, ok = [], True
    for eps in (0.1, 0.3):
        pol = gaussian_oracle([1.0], [0.25], cfg, offset=np.sqrt(eps / cfg.horizon))
        ess = ess_fraction(sample_weighted(pol, target, cfg, 10000))
        ok &= ess >= 1 - eps - 0.05
        details.append(f"eps {eps}: ess {ess:.4f}")
    wall = time.perf_counter() - start
    ok &= wall < 60
    assert record_criterion(5, ok, ", ".join(details) + f", {wall:.1f}s")


def test_criterion_06_w2_scaling():
    start = time.perf_counter()
    reps, n = 5, 20000
    exact = 1.0 + 0.5 * np.random.default_rng(6).standard_normal((reps, n))
    means, errs = [], []
    for steps in (25, 50, 100, 200, 400):
        cfg = SdeConfig(1, 1.0, steps, seed=0)
        pol = gaussian_oracle([1.0], [0.25], cfg)
        x = simulate_batch(pol, None, cfg, reps * n, key=stream_key(0, "w2")).terminal
        vals = [w2_1d(x[r * n:(r + 1) * n, 0], exact[r]) for r in range(reps)]
        means.append(np.mean(vals))
        errs.append(np.std(vals, ddof=1) / np.sqrt(reps))
    ok = all(means[k + 1] <= means[k] + 2 * np.hypot(errs[k], errs[k + 1])
             for k in range(len(means) - 1))
    wall = time.perf_counter() - start
    ok &= wall < 300
    assert record_criterion(6, ok, "w2 " + " ".join(f"{m:.4f}" for m in means) + f", {wall:.1f}s")


@pytest.mark.slow
def test_criterion_07_funnel(tmp_path):
    config, out = _config_copy(tmp_path, "funnel.ini")
    start = time.perf_counter()
    assert cli.main(["train", "--config", str(config)]) == 0
    train_wall = time.perf_counter() - start
    start = time.perf_counter()
    recs = _seeded_log_z(config, out, range(1, 11), 6000)
    eval_wall = (time.perf_counter() - start) / len(recs)
    bias = float(np.mean([r["log_z_is"] for r in recs]))
    elbo = float(np.mean([r["log_z_elbo"] for r in recs]))
    ok = abs(bias) <= 0.1 and train_wall <= 1200 and eval_wall <= 60
    assert record_criterion(7, ok, f"is bias {bias:.4f}, elbo {elbo:.4f}, train {train_wall:.0f}s,"
                                   f" eval {eval_wall:.1f}s/seed")


@pytest.mark.slow
def test_criterion_08_mog(tmp_path):
    config, out = _config_copy(tmp_path, "mog.ini")
    start = time.perf_counter()
    assert cli.main(["train", "--config", str(config)]) == 0
    train_wall = time.perf_counter() - start
    recs = _seeded_log_z(config, out, range(1, 11), 2000)
    bias = float(np.mean([r["log_z_is"] for r in recs]))
    ckpt = str(out / "checkpoints" / "policy.txt")
    assert cli.main(["sample", "--config", str(config), "--checkpoint", ckpt]) == 0
    assert cli.main(["plotdata", str(out / "samples.csv"), "--bbox", "-8", "8", "-8", "8"]) == 0
    modes = json.loads((out / "plotdata.json").read_text())["modes"]
    ok = abs(bias) <= 0.15 and modes == 9 and train_wall <= 1200
    assert record_criterion(8, ok, f"is bias {bias:.4f}, modes {modes}, train {train_wall:.0f}s")


def test_criterion_09_baselines():
    start = time.perf_counter()
    target = gaussian_target([1.0, -1.0], [0.5, 2.0], np.log(2))
    cfg = SmcConfig(2000, 10, HmcConfig(10, 10, 0.1))
    lz = np.array([smc_annealed(target, cfg, seed=s).log_z for s in range(10)])
    se = lz.std(ddof=1) / np.sqrt(lz.size)
    smc_ok = abs(lz.mean() - np.log(2)) <= 3 * se
    x, acc = hmc_sample(gaussian_target([0.0, 0.0], [1.0, 1.0]), HmcConfig(), None, 10000, 0)
    mean_ok = np.all(np.abs(x.mean(axis=0)) <= 3 * x.std(axis=0, ddof=1) / np.sqrt(len(x)))
    var_ok = np.all(np.abs(x.var(axis=0, ddof=1) - 1.0) <= 0.05)
    wall = time.perf_counter() - start
    ok = smc_ok and mean_ok and var_ok and wall < 120
    assert record_criterion(9, ok, f"smc log Z {lz.mean():.4f}+-{se:.4f} (log 2 = {np.log(2):.4f})"
                                   f", hmc var {np.round(x.var(axis=0, ddof=1), 3)}, {wall:.1f}s")


@pytest.mark.slow
def test_criterion_10_lgcp(tmp_path):
    config, out = _config_copy(tmp_path, "lgcp.ini")
    start = time.perf_counter()
    rc = cli.main(["train", "--config", str(config)])
    train_wall = time.perf_counter() - start
    if rc != 0:
        assert record_criterion(10, False, f"training exited with code {rc}")
    losses = np.loadtxt(out / "losses.csv", delimiter=",", skiprows=1)
    finite = bool(np.all(np.isfinite(losses)))
    trained = _seeded_log_z(config, out, [0], 2000)[0]
    zero_cfg, zero_out = _config_copy(tmp_path, "lgcp.ini", **{"train.policy": "zero"})
    assert cli.main(["logz", "--config", str(zero_cfg), "--out", str(zero_out / "zero")]) == 0
    zero = json.loads((zero_out / "zero" / "metrics.json").read_text())
    bound_ok = trained["log_z_elbo"] <= trained["log_z_is"] + 3 * np.hypot(
        trained["log_z_elbo_stderr"], trained["log_z_is_stderr"])
    ess_ok = trained["ess"] >= 2 * zero["ess"]
    ok = finite and bound_ok and ess_ok and train_wall <= 1800
    assert record_criterion(10, ok, f"elbo {trained['log_z_elbo']:.2f}, is {trained['log_z_is']:.2f},"
                                    f" ess {trained['ess']:.4f} vs zero {zero['ess']:.4f},"
                                    f" train {train_wall:.0f}s")


def test_criterion_11_determinism(tmp_path):
    config, out = _config_copy(tmp_path, "gaussian.ini", **{"train.epochs": 1,
                                                            "train.batches_per_epoch": 5})
    blobs = []
    for run in ("a", "b"):
        run_out = str(tmp_path / run)
        assert cli.main(["train", "--config", str(config), "--out", run_out]) == 0
        assert cli.main(["sample", "--config", str(config), "--out", run_out]) == 0
        blobs.append(((tmp_path / run / "samples.csv").read_bytes(),
                      (tmp_path / run / "checkpoints" / "policy.txt").read_bytes()))
    ok = blobs[0] == blobs[1]
    assert record_criterion(11, ok, f"samples.csv {len(blobs[0][0])} bytes, identical: {ok}")
