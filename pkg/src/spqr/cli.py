"""Command-line entry point: ``spqr {rmt-demo,detect,train,analyze,gradcheck}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 gradient-check failure.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import io
from .config import (AnalyzeConfig, ConfigError, DetectConfig, RmtConfig, WorldConfig, from_dict,
                     load_json, train_run_from_dict)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _read_doc(path) -> dict:
    if path is None:
        return {}
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _seeded(doc: dict, seed, key: str = "seed") -> dict:
    doc = dict(doc)
    if seed is not None:
        doc[key] = seed
    return doc


# ---------------------------------------------------------------- commands

def cmd_rmt_demo(doc: dict, out: str) -> int:
    from .spectral import ks_distance, sample_goe, semicircle_pdf
    from .eigen import eigvalsh

    cfg = from_dict(RmtConfig, doc)
    x = sample_goe(cfg.dim, cfg.sigma, seed=cfg.seed)
    lam = np.sort(eigvalsh(x.entries / np.sqrt(cfg.dim)))
    mass = 1.0 / cfg.dim
    io.write_csv(os.path.join(out, "esd.csv"), ["eigenvalue", "mass"], [(v, mass) for v in lam])
    grid = np.linspace(-2 * cfg.sigma, 2 * cfg.sigma, 512)
    dens = semicircle_pdf(grid, cfg.sigma)
    io.write_csv(os.path.join(out, "semicircle.csv"), ["lambda", "density"], zip(grid, dens))
    ks = ks_distance(lam, cfg.sigma)
    io.write_json(os.path.join(out, "ks_distance.json"), {"dim": cfg.dim, "ks_distance": ks})
    lo = min(float(lam.min()), -2 * cfg.sigma)
    hi = max(float(lam.max()), 2 * cfg.sigma)
    heights, edges = np.histogram(lam, bins=cfg.bins, range=(lo, hi), density=True)
    io.atomic_write(os.path.join(out, "rmt.svg"),
                    io.svg_histogram(edges, heights, (grid, dens), f"ESD vs semicircle, D={cfg.dim}"))
    print(f"ks_distance {ks:.6f}")
    return EXIT_OK


def cmd_detect(doc: dict, out: str) -> int:
    from .diagnostics import detection_experiment

    cfg = from_dict(DetectConfig, doc)
    if any(not 0.0 <= p < 1.0 for p in cfg.psi_grid):
        raise ConfigError("psi values must lie in [0, 1)")
    if cfg.n_dim < 64 or cfg.trials < 1:
        raise ConfigError("n_dim must be >= 64 and trials >= 1")
    curve = detection_experiment(cfg.psi_grid, cfg.n_dim, cfg.trials, cfg.kl_threshold, cfg.seed,
                                 cfg.calibration_draws)
    io.write_csv(os.path.join(out, "detection.csv"), ["psi", "empirical_error", "erfc_reference"],
                 curve.rows())
    se = curve.std_error()
    io.write_csv(os.path.join(out, "detection_detail.csv"),
                 ["psi", "type1", "type2", "std_error"],
                 zip(curve.psi_grid, curve.type1, curve.type2, se))
    io.write_json(os.path.join(out, "summary.json"),
                  {"kl_threshold": curve.kl_threshold, "trials": curve.trials, "n_dim": cfg.n_dim})
    io.atomic_write(os.path.join(out, "detection.svg"),
                    io.svg_lines(curve.psi_grid, {"empirical": curve.empirical_error,
                                                  "erfc": curve.erfc_reference}, "detection error"))
    for p, e, r in curve.rows():
        print(f"psi {p:.3f} error {e:.4f} erfc {r:.4f}")
    return EXIT_OK


def _dataset_for(run, world):
    from .worlds import Dataset, generate_dataset

    if run.train.mode != "offline":
        return None
    d = run.dataset
    if d.path:
        try:
            return Dataset.read_jsonl(d.path)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot read dataset {d.path}: {exc}") from exc
    return generate_dataset(world, d.provenance, d.size, d.seed)


def cmd_train(doc: dict, out: str) -> int:
    from .ensemble import METRIC_FIELDS, Trainer, TrainingDiverged

    run = train_run_from_dict(doc)
    try:
        world = run.world.build()
    except ValueError as exc:
        raise ConfigError(f"world: {exc}") from exc
    dataset = _dataset_for(run, world)
    trainer = Trainer(run.train, world, dataset, chi2_bins=run.chi2_bins)
    metrics_path = os.path.join(out, "metrics.csv")
    try:
        metrics = trainer.run()
    except TrainingDiverged as exc:
        io.write_json(os.path.join(out, "diagnostic.json"),
                      {k: (v if isinstance(v, (int, str)) else float(v)) for k, v in exc.record.items()})
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    io.write_csv(metrics_path, METRIC_FIELDS,
                 [[getattr(m, f) for f in METRIC_FIELDS] for m in metrics])
    trainer.save_checkpoint(os.path.join(out, "checkpoint"))
    if metrics:
        last = metrics[-1]
        print(f"step {last.step} avg_return {last.avg_return:.4f} q_mean {last.q_mean:.4f}")
    return EXIT_OK


def cmd_analyze(doc: dict, out: str, checkpoint: str | None = None) -> int:
    from .diagnostics import (bias_stats, independence_accept_ratio, pearson_matrix,
                              spike_histogram, uniform_accept_ratio)
    from .ensemble import load_checkpoint
    from .worlds import greedy_table, value_iteration

    cfg = from_dict(AnalyzeConfig, doc)
    manifest = checkpoint or cfg.checkpoint
    if not manifest:
        raise ConfigError("analyze needs a checkpoint manifest (--checkpoint or config key)")
    try:
        world = from_dict(WorldConfig, cfg.world, "world").build()
    except ValueError as exc:
        raise ConfigError(f"world: {exc}") from exc
    try:
        ens, policy, _ = load_checkpoint(manifest)
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {manifest}: {exc}") from exc
    if ens.members.layer_sizes[0] != 2 or ens.members.layer_sizes[-1] != world.n_actions:
        raise ConfigError("checkpoint networks do not match the world's features/actions")

    states = np.repeat(world.open_states(), world.n_actions)
    actions = np.tile(np.arange(world.n_actions), world.open_states().size)
    feats = world.features(states)
    q = ens.q_sa(feats, actions).T
    q_star = value_iteration(world)[states, actions]
    errors = q - q_star[:, None]
    corr = pearson_matrix(q)
    io.write_matrix_csv(os.path.join(out, "pearson.csv"), corr.values)
    summary = {
        "n_members": int(q.shape[1]),
        "n_pairs": int(q.shape[0]),
        "uniform_accept_ratio": uniform_accept_ratio(q, cfg.bins, cfg.alpha),
        "independence_accept_ratio": independence_accept_ratio(errors, cfg.bins, cfg.alpha),
        "mean_abs_corr": corr.mean_abs_offdiag(),
        "undefined_corr_entries": int(corr.undefined.sum()),
    }
    if q.shape[1] >= 3:
        hist = spike_histogram(ens, feats, actions, cfg.rho, cfg.eps, cfg.histogram_bins, cfg.seed)
        io.write_csv(os.path.join(out, "spike_histogram.csv"), ["lo", "hi", "count"], hist.rows())
        summary["total_spikes"] = hist.total_spikes
        summary["n_eigenvalues"] = hist.n_eigenvalues
    if policy is not None:
        table = policy.table(world)
    else:
        table = greedy_table(ens.q_all(world.features(np.arange(world.n_states))).min(axis=0))
    mean, std = bias_stats(ens, world, table, zip(states, actions), cfg.n_rollouts, cfg.seed)
    io.write_json(os.path.join(out, "bias.json"), {"bias_mean": mean, "bias_std": std})
    io.write_json(os.path.join(out, "summary.json"), summary)
    print(" ".join(f"{k} {v}" for k, v in summary.items()))
    return EXIT_OK


def cmd_gradcheck(seed: int, out: str) -> int:
    from .gradcheck import run_all

    results = run_all(seed)
    io.write_json(os.path.join(out, "gradcheck.json"), {
        "seed": seed,
        "suites": [{"name": r.name, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance,
                    "cases": r.cases, "passed": r.passed} for r in results],
    })
    for r in results:
        print(f"{r.name:18s} max_rel_error {r.max_rel_error:.3e} {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_GRADCHECK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spqr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("rmt-demo", "detect", "train", "analyze", "gradcheck"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config document")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", default=None, help="output directory (default out/<command>)")
        if name == "analyze":
            p.add_argument("--checkpoint", help="checkpoint manifest.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or os.path.join("out", args.command)
    try:
        doc = _seeded(_read_doc(args.config), args.seed)
        os.makedirs(out, exist_ok=True)
        io.echo_config(out, args.command, doc)
        if args.command == "rmt-demo":
            return cmd_rmt_demo(doc, out)
        if args.command == "detect":
            return cmd_detect(doc, out)
        if args.command == "train":
            return cmd_train(doc, out)
        if args.command == "analyze":
            return cmd_analyze(doc, out, args.checkpoint)
        if set(doc) - {"seed"}:
            raise ConfigError(f"gradcheck: unknown keys {sorted(set(doc) - {'seed'})}")
        return cmd_gradcheck(int(doc.get("seed", 0)), out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
