"""Command line entry points.

    sparse-advtrain train ...            metrics CSV for one training run
    sparse-advtrain bench-hsr ...        index query cost versus width
    sparse-advtrain bench-iteration ...  whole-iteration cost, both engines
    sparse-advtrain verify --suite S     pass/fail table
    sparse-advtrain gen-data ...         dataset CSV

Exit codes: 0 success, 1 runtime failure, 2 usage error. Any flag may also
come from ``--config PATH``, a file of ``key=value`` lines; flags given on
the command line win.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import checks
from .adversary import KINDS, AdversaryConfig
from .bench import BENCH_COLUMNS, ITER_COLUMNS, bench_hsr, bench_iteration, loglog_slope
from .data import LABEL_MODES, generate_dataset, load_csv, save_csv
from .trainer import ENGINES, TrainConfig, metrics_csv, stream, train

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUITE_CHOICES = (*checks.SUITES, "all")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _m_list(s: str) -> list[int]:
    try:
        ms = [int(v) for v in s.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {s!r}") from None
    if not ms or min(ms) < 1:
        raise argparse.ArgumentTypeError("m-list needs positive integers")
    return ms


def _flag_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sparse-advtrain", description="Sparse adversarial training experiments.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run training and write the metrics CSV")
    t.add_argument("--config", help="key=value file; command-line flags win")
    t.add_argument("--m", type=int, default=4096)
    t.add_argument("--d", type=int, default=8)
    t.add_argument("--n", type=int, default=8)
    t.add_argument("--tau", type=float, default=None, help="default 1/m")
    t.add_argument("--rho", type=float, default=0.05)
    t.add_argument("--eps", type=float, default=0.1)
    t.add_argument("--K", type=float, default=1.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--adversary", choices=KINDS, default="pgd")
    t.add_argument("--steps", type=int, default=5)
    t.add_argument("--step-size", type=float, default=None)
    t.add_argument("--engine", choices=ENGINES, default="hsr")
    t.add_argument("--adversary-uses-index", type=_flag_bool, default=True)
    t.add_argument("--eta", type=float, default=None)
    t.add_argument("--T", type=int, default=None)
    t.add_argument("--workers", type=int, default=1)
    t.add_argument("--leaf-size", type=int, default=32)
    t.add_argument("--data", help="dataset CSV; generated from --seed when absent")
    t.add_argument("--eps-sep", type=float, default=0.5)
    t.add_argument("--label-mode", choices=LABEL_MODES, default="smooth")
    t.add_argument("--out", required=True)

    b = sub.add_parser("bench-hsr", help="index query cost versus m")
    b.add_argument("--config")
    b.add_argument("--d", type=int, default=6)
    b.add_argument("--m-list", type=_m_list, default=[2**k for k in range(12, 18)])
    b.add_argument("--active-frac", type=float, default=0.01)
    b.add_argument("--trials", type=int, default=64)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--leaf-size", type=int, default=32)
    b.add_argument("--out")

    bi = sub.add_parser("bench-iteration", help="per-iteration cost of both engines versus m")
    bi.add_argument("--config")
    bi.add_argument("--d", type=int, default=6)
    bi.add_argument("--m-list", type=_m_list, default=[2**k for k in range(12, 18)])
    bi.add_argument("--n", type=int, default=16)
    bi.add_argument("--active-frac", type=float, default=0.01)
    bi.add_argument("--T", type=int, default=3)
    bi.add_argument("--seed", type=int, default=0)
    bi.add_argument("--adversary", choices=KINDS, default="pgd")
    bi.add_argument("--steps", type=int, default=5)
    bi.add_argument("--rho", type=float, default=0.05)
    bi.add_argument("--workers", type=int, default=1)
    bi.add_argument("--out")

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--config")
    v.add_argument("--suite", choices=SUITE_CHOICES, required=True)
    v.add_argument("--out")

    g = sub.add_parser("gen-data", help="write a separated dataset as CSV")
    g.add_argument("--config")
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--eps-sep", type=float, default=0.5)
    g.add_argument("--rho", type=float, default=0.05)
    g.add_argument("--label-mode", choices=LABEL_MODES, default="smooth")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    return p


def _read_config(path: str) -> list[str]:
    """Turn a key=value file into argv tokens placed before the real flags."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    argv = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        argv += [f"--{key.replace('_', '-')}", value]
    return argv


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        cfg_argv = _read_config(args.config)
        if any(tok == "--config" for tok in cfg_argv):
            raise UsageError("config files cannot include other config files")
        # config tokens first, so later command-line flags override them
        args = parser.parse_args([argv[0], *cfg_argv, *argv[1:]])
    return args


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        m=args.m, d=args.d, n=args.n, tau=args.tau, rho=args.rho, eps=args.eps, K=args.K, seed=args.seed,
        eta=args.eta, T=args.T, engine=args.engine, adversary_uses_index=args.adversary_uses_index,
        adversary=AdversaryConfig(args.adversary, args.rho, args.steps, args.step_size),
        workers=args.workers, leaf_size=args.leaf_size,
    )


def run_train(args) -> int:
    try:
        cfg = _train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.data:
        ds = load_csv(args.data)
    else:
        ds = generate_dataset(cfg.n, cfg.d, args.eps_sep, cfg.rho, args.label_mode,
                              seed=stream(cfg.seed, "data"))
    result = train(cfg, ds)
    Path(args.out).write_text(metrics_csv(result.metrics))
    return EXIT_OK


def _report_slope(rows, out) -> None:
    slope = loglog_slope([r.m for r in rows], [r.mean_visits for r in rows])
    print(f"visits_loglog_slope={_fmt(slope)}", file=sys.stderr if out is None else sys.stdout)


def run_bench_hsr(args) -> int:
    if not 0 < args.active_frac <= 1 or args.trials < 1 or args.d < 2:
        raise UsageError("need 0 < active-frac <= 1, trials >= 1, d >= 2")
    rows = bench_hsr(args.d, args.m_list, args.active_frac, args.trials, args.seed, leaf_size=args.leaf_size)
    _emit(csv_text(BENCH_COLUMNS, [r.values() for r in rows]), args.out)
    _report_slope(rows, args.out)
    return EXIT_OK


def run_bench_iteration(args) -> int:
    if not 0 < args.active_frac <= 1 or args.T < 1 or args.d < 2 or args.n < 1:
        raise UsageError("need 0 < active-frac <= 1, T >= 1, d >= 2, n >= 1")
    rows = bench_iteration(args.d, args.m_list, n=args.n, active_frac=args.active_frac, T=args.T,
                           seed=args.seed, adversary=args.adversary, steps=args.steps, rho=args.rho,
                           workers=args.workers)
    _emit(csv_text(ITER_COLUMNS, [r.values() for r in rows]), args.out)
    _report_slope(rows, args.out)
    return EXIT_OK


def run_verify(args) -> int:
    rows = checks.run_suite(args.suite)
    _emit(csv_text(("suite", "check", "value", "bound", "pass"), [r.values() for r in rows]), args.out)
    return EXIT_OK if all(r.passed for r in rows) else EXIT_FAIL


def run_gen_data(args) -> int:
    try:
        ds = generate_dataset(args.n, args.d, args.eps_sep, args.rho, args.label_mode,
                              seed=stream(args.seed, "data"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_csv(ds, args.out)
    return EXIT_OK


COMMANDS = {
    "train": run_train,
    "bench-hsr": run_bench_hsr,
    "bench-iteration": run_bench_iteration,
    "verify": run_verify,
    "gen-data": run_gen_data,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
