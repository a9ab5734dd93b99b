"""Command-line interface: ``pisampler <command> --config FILE [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 incompatible data,
4 numerical failure.
"""
import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import estimators as est_mod
from .baselines import hmc_sample, smc_annealed
from .config import RunConfig
from .errors import (ConfigurationError, EstimationError, IncompatibleDataError,
                     SimulationError, TrainingError, UsageError)
from .metrics import moment_report
from .plotdata import density_grid, local_maxima, weighted_histograms
from .policy import load_policy, make_policy, pi_control_mc, oracle_for_target, save_policy
from .rng import stream_key
from .targets import GaussianTarget
from .trainer import train

logger = logging.getLogger("pisampler")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CHECKPOINT = "policy.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(f"{self.prog}: {message}")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _update_json(path, obj):
    data = {}
    if os.path.exists(path):
        with open(path) as fh:
            data = json.load(fh)
    data.update(obj)
    _write_json(path, data)


def _prepare(args):
    cfg = RunConfig.load(args.config).with_overrides(args.seed, args.out)
    out = cfg["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.json"), cfg.to_dict())
    return cfg, out


def _policy_from(cfg, out, target, checkpoint=None):
    kind = cfg["train"]["policy"]
    if kind in ("zero", "oracle") and checkpoint is None:
        return make_policy(kind, target.dim, cfg["sde"]["horizon"], target=target)
    path = checkpoint or os.path.join(out, "checkpoints", CHECKPOINT)
    if not os.path.exists(path):
        raise IncompatibleDataError(f"checkpoint {path} not found; run 'train' first")
    policy, header = load_policy(path, target)
    if header["horizon"] != cfg["sde"]["horizon"]:
        raise IncompatibleDataError(
            f"checkpoint horizon {header['horizon']} != config horizon {cfg['sde']['horizon']}")
    return policy


def _train_policy(cfg, target, out=None):
    tcfg = cfg.train_config()
    ckpt_dir = None if out is None else os.path.join(out, "checkpoints")
    if ckpt_dir:
        os.makedirs(ckpt_dir, exist_ok=True)

    def on_epoch(epoch, state, policy):
        if ckpt_dir:
            save_policy(os.path.join(ckpt_dir, f"epoch_{epoch + 1:03d}.txt"), policy,
                        {"step": state.step})

    return train(target, tcfg, cfg["train"]["policy"], callback=on_epoch, **cfg.policy_kwargs())


# commands -------------------------------------------------------------------
def cmd_train(args):
    cfg, out = _prepare(args)
    kind = cfg["train"]["policy"]
    if kind not in ("nn", "grad"):
        raise ConfigurationError(f"policy {kind!r} has nothing to train")
    target = cfg.target()
    start = time.perf_counter()
    state, policy = _train_policy(cfg, target, out)
    wall = time.perf_counter() - start
    save_policy(os.path.join(out, "checkpoints", CHECKPOINT), policy, {"step": state.step})
    with open(os.path.join(out, "losses.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "terminal_cost", "energy"])
        for step, loss, term, energy in state.loss_history:
            writer.writerow([step, f"{loss:.17g}", f"{term:.17g}", f"{energy:.17g}"])
    summary = {"final_loss": state.loss_history[-1][1], "steps": state.step,
               "wall_time_s": wall, "config_hash": est_mod.config_hash(cfg.to_dict()),
               "config": cfg.to_dict()}
    _update_json(os.path.join(out, "metrics.json"), {"train": summary})
    print(f"trained {kind} policy: {state.step} steps, final loss {summary['final_loss']:.6g}")
    return EXIT_OK


def _weighted_samples(args, cfg, out):
    target = cfg.target()
    n = cfg["sample"]["n"] if args.n is None else args.n
    if n < 1:
        raise ConfigurationError(f"n must be a positive integer, got {n}")
    policy = _policy_from(cfg, out, target, args.checkpoint)
    sde = cfg.sde_config()
    ws = est_mod.sample_weighted(policy, target, sde, n, key=stream_key(sde.seed, "sample"),
                                 workers=args.threads)
    record = est_mod.metrics_record(ws, cfg.to_dict())
    record["true_log_z"] = target.true_log_z
    return ws, record


def cmd_sample(args):
    cfg, out = _prepare(args)
    ws, record = _weighted_samples(args, cfg, out)
    est_mod.write_samples_csv(os.path.join(out, "samples.csv"), ws)
    _update_json(os.path.join(out, "metrics.json"), record)
    print(f"wrote {len(ws)} samples; ess {record['ess']:.4f}, "
          f"log_z_is {record['log_z_is']:.5f} +- {record['log_z_is_stderr']:.5f}")
    return EXIT_OK


def cmd_logz(args):
    cfg, out = _prepare(args)
    _, record = _weighted_samples(args, cfg, out)
    _update_json(os.path.join(out, "metrics.json"), record)
    print(json.dumps({k: record[k] for k in ("log_z_elbo", "log_z_elbo_stderr", "log_z_is",
                                             "log_z_is_stderr", "ess", "n")}, sort_keys=True))
    return EXIT_OK


def _bench_rep(method, cfg, target, policy, rep):
    seed = cfg.seed
    n = cfg["benchmark"]["n"]
    if method in ("zero", "pis-nn", "pis-grad"):
        sde = cfg.sde_config()
        ws = est_mod.sample_weighted(policy, target, sde, n,
                                     key=stream_key(seed, "benchmark-rep", method, rep))
        return est_mod.log_z_is(ws)[0], est_mod.log_z_elbo(ws)[0], est_mod.ess_fraction(ws)
    rep_seed = int(stream_key(seed, "benchmark-rep", method, rep))
    if method == "smc":
        res = smc_annealed(target, cfg.smc_config(), rep_seed)
        return res.log_z, np.nan, float(res.ess_history[-1])
    if method == "hmc":
        x, acc = hmc_sample(target, cfg.hmc_config(), None, n, rep_seed)
        return np.nan, np.nan, acc
    raise ConfigurationError(f"unknown benchmark method {method!r}")


def _summarize(values, truth):
    values = np.asarray(values, dtype=float)
    if truth is None or not np.all(np.isfinite(values)):
        return {"B": "n/a", "S": "n/a", "A": "n/a"}
    b = float(np.mean(values) - truth)
    s = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return {"B": b, "S": s, "A": float(np.hypot(b, s))}


def cmd_benchmark(args):
    cfg, out = _prepare(args)
    target = cfg.target()
    bench = cfg["benchmark"]
    reps = bench["repetitions"]
    rows, details = [], {}
    for method in bench["methods"]:
        policy = None
        if method in ("pis-nn", "pis-grad"):
            sub = cfg.to_dict()
            sub["train"]["policy"] = method.split("-")[1]
            _, policy = _train_policy(RunConfig.from_dict(sub), target)
        elif method == "zero":
            policy = make_policy("zero", target.dim, cfg["sde"]["horizon"])
        with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
            results = list(pool.map(lambda r: _bench_rep(method, cfg, target, policy, r),
                                    range(reps)))
        lz = [r[0] for r in results]
        row = {"method": method, **_summarize(lz, target.true_log_z),
               "mean_log_z": float(np.mean(lz)),
               # ESS for PIS and SMC, the acceptance rate for HMC
               "ess_or_acceptance": float(np.mean([r[2] for r in results])),
               "repetitions": reps}
        if method == "hmc":
            row["mean_log_z"] = "n/a"
            x, acc = hmc_sample(target, cfg.hmc_config(), None, bench["n"],
                                int(stream_key(cfg.seed, "benchmark-hmc-moments")))
            m = moment_report(x)
            details[method] = {"acceptance": acc, "mean": m["mean"].tolist(),
                               "variance": m["variance"].tolist()}
        rows.append(row)
        logger.info("benchmark %s: %s", method, row)
    fields = ["method", "B", "S", "A", "mean_log_z", "ess_or_acceptance", "repetitions"]
    with open(os.path.join(out, "benchmark.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v)
                             for k, v in row.items()})
    _write_json(os.path.join(out, "benchmark.json"),
                {"true_log_z": target.true_log_z, "rows": rows, "hmc": details.get("hmc"),
                 "settings": {k: cfg[k] for k in ("benchmark", "hmc", "smc")}})
    for row in rows:
        print(" ".join(f"{k}={row[k]}" for k in fields))
    return EXIT_OK


def cmd_oracle_check(args):
    cfg, out = _prepare(args)
    target = cfg.target()
    if not isinstance(target, GaussianTarget):
        raise ConfigurationError("oracle-check needs a Gaussian target")
    sde = cfg.sde_config()
    oracle = oracle_for_target(target, sde)
    oc = cfg["oracle"]
    trained = None
    if oc["checkpoint"]:
        trained, _ = load_policy(oc["checkpoint"], target)
    rows, n_fail = [], 0
    for t in oc["times"]:
        for p in oc["points"]:
            x = np.full(target.dim, p)
            u_star = oracle.control(t, x[None, :])[0]
            u_mc, err = pi_control_mc(target, sde, t, x, oc["rollouts"],
                                      seed=int(stream_key(sde.seed, "oracle-check")))
            fail = bool(np.any(np.abs(u_mc - u_star) > 3 * err))
            n_fail += fail
            row = {"t": t, "x": p, "oracle": u_star[0], "mc": u_mc[0], "mc_stderr": err[0],
                   "mc_fail": int(fail)}
            if trained is not None:
                row["trained"] = float(trained.control(t, x[None, :])[0, 0])
            rows.append(row)
    with open(os.path.join(out, "oracle_check.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v)
                             for k, v in row.items()})
    report = {"grid_points": len(rows), "mc_failures": n_fail,
              "max_abs_oracle_vs_mc": max(abs(r["oracle"] - r["mc"]) for r in rows)}
    if trained is not None:
        report["max_abs_oracle_vs_trained"] = max(abs(r["oracle"] - r["trained"]) for r in rows)
    _write_json(os.path.join(out, "oracle_check.json"), report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_NUMERIC if n_fail > 0.05 * len(rows) else EXIT_OK


def cmd_plotdata(args):
    try:
        ws = est_mod.read_samples_csv(args.samples)
    except IncompatibleDataError as exc:
        raise ConfigurationError(str(exc)) from exc
    out = args.out or os.path.dirname(os.path.abspath(args.samples))
    os.makedirs(out, exist_ok=True)
    w = ws.normalized_weights()
    with open(os.path.join(out, "histograms.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["coordinate", "bin_left", "bin_right", "weight"])
        for j, (edges, counts) in enumerate(weighted_histograms(ws.points, w, args.bins)):
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                writer.writerow([j + 1, f"{lo:.17g}", f"{hi:.17g}", f"{c:.17g}"])
    report = {"n": len(ws), "bins": args.bins}
    if ws.dim == 2:
        if args.bbox is None:
            lo, hi = ws.points.min(axis=0), ws.points.max(axis=0)
            bbox = (lo[0], hi[0], lo[1], hi[1])
        else:
            bbox = tuple(args.bbox)
        xs, ys, dens = density_grid(ws.points, w, bbox, args.resolution)
        with open(os.path.join(out, "density_grid.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "density"])
            for i, xv in enumerate(xs):
                for j, yv in enumerate(ys):
                    writer.writerow([f"{xv:.17g}", f"{yv:.17g}", f"{dens[i, j]:.17g}"])
        peaks = local_maxima(dens, args.mode_threshold)
        report["modes"] = len(peaks)
        report["mode_locations"] = [[float(xs[i]), float(ys[j])] for i, j in peaks]
    _write_json(os.path.join(out, "plotdata.json"), report)
    print(json.dumps({k: report[k] for k in report if k != "mode_locations"}, sort_keys=True))
    return EXIT_OK


# entry point ----------------------------------------------------------------
def build_parser():
    parser = _Parser(prog="pisampler", description="Path-integral sampler toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, metavar="PATH")
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, metavar="DIR")
        p.add_argument("--threads", type=int, default=1)
        return p

    common(sub.add_parser("train", help="train a policy")).set_defaults(func=cmd_train)
    for name, func in (("sample", cmd_sample), ("logz", cmd_logz)):
        p = common(sub.add_parser(name, help=f"{name} with a trained or fixed policy"))
        p.add_argument("--checkpoint", default=None, metavar="PATH")
        p.add_argument("--n", type=int, default=None)
        p.set_defaults(func=func)
    common(sub.add_parser("benchmark", help="compare methods over repetitions")) \
        .set_defaults(func=cmd_benchmark)
    common(sub.add_parser("oracle-check", help="oracle vs Monte-Carlo control")) \
        .set_defaults(func=cmd_oracle_check)
    p = common(sub.add_parser("plotdata", help="histograms and density grid"), config=False)
    p.add_argument("samples", metavar="SAMPLES_CSV")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--bbox", type=float, nargs=4, default=None,
                   metavar=("XMIN", "XMAX", "YMIN", "YMAX"))
    p.add_argument("--resolution", type=int, default=80)
    p.add_argument("--mode-threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        if getattr(args, "bins", 1) < 1:
            raise ConfigurationError("--bins must be >= 1")
        return args.func(args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IncompatibleDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SimulationError, TrainingError, EstimationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
