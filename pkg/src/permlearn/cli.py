"""Command-line entry point: ``permlearn <subcommand> [flags]``.

Exit codes: 0 success, 1 usage or input-format error, 2 numerical failure.
All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck
from .errors import DomainError, FeasibilityError, FormatError, PermlearnError, TrainingError
from .gumbel import gumbel_matching_samples, gumbel_sinkhorn_samples
from .io import load_matrix, matrix_to_csv, matrix_to_json, report_json, rows_to_csv, save_matrix
from .latent_vi import VariationalState, fit_posterior, make_task
from .matching import hungarian
from .sinkhorn import SinkhornConfig, sinkhorn
from .sortnet import METRIC_COLUMNS, SortNetParams, TrainConfig, evaluate_sort, train_sort

log = logging.getLogger("permlearn")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_dists(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        try:
            lo, hi = (float(v) for v in part.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad interval {part!r}; use low:high") from None
        if not lo < hi:
            raise argparse.ArgumentTypeError(f"interval {part!r} needs low < high")
        out.append((lo, hi))
    return out


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _write(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _read_config(path) -> dict:
    if path is None:
        return {}
    cp = configparser.ConfigParser()
    try:
        cp.read_string("[run]\n" + Path(path).read_text())
    except configparser.Error as exc:
        raise FormatError(f"cannot parse config file {path}: {exc}") from None
    return dict(cp["run"])


def _add_common(p: argparse.ArgumentParser, tau=True) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed (u64)")
    if tau:
        p.add_argument("--tau", type=float, default=None, help="Sinkhorn temperature")
        p.add_argument("--iters", type=int, default=None, help="Sinkhorn iterations L")


def _sinkhorn_cfg(args) -> SinkhornConfig:
    return SinkhornConfig(args.tau if args.tau is not None else 1.0, args.iters if args.iters is not None else 20)


def cmd_sinkhorn(args) -> int:
    S = sinkhorn(load_matrix(args.inp), _sinkhorn_cfg(args))
    fmt = args.format or ("json" if args.out and str(args.out).endswith(".json") else "csv")
    if args.out and args.out != "-":
        save_matrix(args.out, S, fmt)
    else:
        _write(None, matrix_to_json(S) if fmt == "json" else matrix_to_csv(S))
    return EXIT_OK


def cmd_match(args) -> int:
    perm = hungarian(load_matrix(args.inp))
    _write(args.out, json.dumps(list(perm.mapping)) + "\n")
    return EXIT_OK


def cmd_sample(args) -> int:
    X = load_matrix(args.inp)
    lines = []
    if args.mode == "matching":
        for p in gumbel_matching_samples(X, args.seed, args.count):
            lines.append(json.dumps(list(p.mapping)))
    else:
        for S in gumbel_sinkhorn_samples(X, _sinkhorn_cfg(args), args.seed, args.count):
            lines.append(json.dumps([[float(v) for v in row] for row in S]))
    _write(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


def cmd_check_grads(args) -> int:
    rows = gradcheck.run_gate(seed=args.seed, instances=args.instances)
    print(gradcheck.format_gate(rows))
    return EXIT_OK if all(r.passed for r in rows) else EXIT_NUMERIC


_TRAIN_FLAGS = ("n", "tau", "iterations", "noise_scale", "samples_per_example", "batch_size",
                "learning_rate", "steps", "n_units", "seed", "train_low", "train_high")


def _train_config(args) -> TrainConfig:
    values = _read_config(getattr(args, "config", None))
    for name in _TRAIN_FLAGS:
        v = getattr(args, name, None)
        if name == "iterations" and getattr(args, "iters", None) is not None:
            v = args.iters
        if v is not None:
            values[name] = v
    try:
        return TrainConfig.from_mapping(values)
    except (KeyError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _file_logger(path: Path) -> logging.Handler:
    h = logging.FileHandler(path, mode="w")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(h)
    log.setLevel(logging.INFO)
    return h


def _config_snapshot(cfg: TrainConfig, extra: dict | None = None) -> str:
    items = {**cfg.as_dict(), **(extra or {})}
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def _train_one(cfg: TrainConfig, run_dir: Path, dists, test_size: int, threads):
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = _file_logger(run_dir / "log.txt")
    try:
        log.info("training N=%d for %d steps", cfg.n, cfg.steps)
        started = time.time()

        def progress(step, loss):
            if step % 1000 == 0 or step == cfg.steps - 1:
                log.info("step %d loss %.6g", step, loss)

        params, history = train_sort(cfg, callback=progress)
        log.info("training done in %.1fs", time.time() - started)
        (run_dir / "params.json").write_text(params.to_json())
        (run_dir / "config.snapshot").write_text(_config_snapshot(cfg, {"test_size": test_size}))
        (run_dir / "loss.csv").write_text(
            rows_to_csv([{"step": k, "loss": float(v)} for k, v in enumerate(history.losses)], ("step", "loss"))
        )
        rows = [evaluate_sort(params, lo, hi, size=test_size, seed=cfg.seed, threads=threads) for lo, hi in dists]
        for r in rows:
            log.info("eval U(%g,%g): prop_any_wrong=%.4f", r["test_dist_low"], r["test_dist_high"], r["prop_any_wrong"])
        (run_dir / "metrics.csv").write_text(rows_to_csv(rows, METRIC_COLUMNS))
        return rows
    finally:
        log.removeHandler(handler)
        handler.close()


def cmd_train_sort(args) -> int:
    cfg = _train_config(args)
    dists = args.test_dists or [(cfg.test_low, cfg.test_high)]
    run_dir = Path(args.out_dir) / (args.name or f"sort_n{cfg.n}")
    rows = _train_one(cfg, run_dir, dists, args.test_size, args.threads)
    sys.stdout.write(rows_to_csv(rows, METRIC_COLUMNS))
    return EXIT_OK


def cmd_eval_sort(args) -> int:
    params = SortNetParams.from_json(Path(args.params).read_text())
    rows = [evaluate_sort(params, lo, hi, size=args.test_size, seed=args.seed, threads=args.threads)
            for lo, hi in args.test_dists]
    _write(args.out, rows_to_csv(rows, METRIC_COLUMNS))
    return EXIT_OK


def cmd_table1(args) -> int:
    all_rows = []
    for n in args.ns:
        args.n = n
        cfg = _train_config(args)
        all_rows += _train_one(cfg, Path(args.out_dir) / f"table1_n{n}", args.test_dists, args.test_size, args.threads)
    all_rows.sort(key=lambda r: (r["test_dist_low"], r["test_dist_high"], r["N"]))
    text = rows_to_csv(all_rows, METRIC_COLUMNS)
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(args.out_dir) / "table1.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_vi_match(args) -> int:
    seeds = args.seeds if len(args.seeds) > 1 else list(range(args.seeds[0]))
    tau = args.tau if args.tau is not None else 1.0
    tau_prior = args.tau_prior if args.tau_prior is not None else tau
    per_seed = []
    for s in seeds:
        task = make_task(args.n, args.d, args.sigma, seed=args.seed + s)
        init = VariationalState.zeros(args.n, tau=tau, tau_prior=tau_prior, mc_samples=args.mc_samples,
                                      iterations=args.iters if args.iters is not None else 20)
        res = fit_posterior(task, init, steps=args.steps, seed=args.seed + s, learning_rate=args.lr, use_kl=not args.no_kl)
        per_seed.append({"seed": args.seed + s, "accuracy": res.accuracy, "elbo_trace": res.elbo_trace})
    doc = {
        "kind": "vi_match_report",
        "config": {"n": args.n, "d": args.d, "sigma": args.sigma, "tau": tau, "tau_prior": tau_prior,
                   "steps": args.steps, "mc_samples": args.mc_samples, "kl": not args.no_kl, "lr": args.lr},
        "per_seed": per_seed,
        "mean_accuracy": float(np.mean([r["accuracy"] for r in per_seed])),
    }
    _write(args.out, report_json(doc))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="permlearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sinkhorn", help="apply the Sinkhorn operator to a matrix file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("csv", "json"), default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sinkhorn)

    p = sub.add_parser("match", help="maximum-weight matching of a matrix file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("sample", help="Gumbel-Matching or Gumbel-Sinkhorn samples as JSON lines")
    p.add_argument("matrix", nargs="?", default=None)
    p.add_argument("--in", dest="inp_flag", default=None)
    p.add_argument("--mode", choices=("matching", "sinkhorn"), default="matching")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("check-grads", help="finite-difference gradient gate")
    p.add_argument("--instances", type=int, default=20)
    _add_common(p, tau=False)
    p.set_defaults(func=cmd_check_grads)

    def add_train_flags(p):
        p.add_argument("--config", default=None, help="key = value file; flags take precedence")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--noise-scale", dest="noise_scale", type=float, default=None)
        p.add_argument("--samples-per-example", dest="samples_per_example", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--n-units", dest="n_units", type=int, default=None)
        p.add_argument("--train-low", dest="train_low", type=float, default=None)
        p.add_argument("--train-high", dest="train_high", type=float, default=None)
        p.add_argument("--test-size", dest="test_size", type=int, default=10_000)
        p.add_argument("--threads", type=int, default=None, help="evaluation threads (default: PERMLEARN_THREADS or 1)")
        p.add_argument("--out-dir", dest="out_dir", default="runs")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--tau", type=float, default=None)
        p.add_argument("--iters", type=int, default=None)

    p = sub.add_parser("train-sort", help="train the number-sorting network")
    add_train_flags(p)
    p.add_argument("--name", default=None)
    p.add_argument("--test-dists", dest="test_dists", type=_parse_dists, default=None)
    p.set_defaults(func=cmd_train_sort)

    p = sub.add_parser("eval-sort", help="evaluate saved sorting-network parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--test-dists", dest="test_dists", type=_parse_dists, default=[(0.0, 1.0)])
    p.add_argument("--test-size", dest="test_size", type=int, default=10_000)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval_sort)

    p = sub.add_parser("table1", help="train and evaluate the sorting network over several N and test intervals")
    add_train_flags(p)
    p.add_argument("--ns", type=_parse_ints, default=[5, 10, 15])
    p.add_argument("--test-dists", dest="test_dists", type=_parse_dists, default=[(0.0, 1.0), (0.0, 10.0)])
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("vi-match", help="variational inference over a synthetic latent matching")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--sigma", type=float, default=0.05)
    p.add_argument("--tau-prior", dest="tau_prior", type=float, default=None)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--seeds", type=_parse_ints, default=[20], help="a count, or a comma-separated list of seed offsets")
    p.add_argument("--mc-samples", dest="mc_samples", type=int, default=4)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--no-kl", dest="no_kl", action="store_true")
    p.add_argument("--out", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_vi_match)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    if args.command == "sample":
        args.inp = args.inp_flag or args.matrix
        if args.inp is None:
            parser.error("sample needs a matrix file")
    try:
        return args.func(args)
    except (UsageError, FormatError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"permlearn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, FeasibilityError, TrainingError, OverflowError, FloatingPointError) as exc:
        print(f"permlearn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PermlearnError as exc:
        print(f"permlearn: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
