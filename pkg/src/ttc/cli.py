"""``ttc`` command-line entry point.

Exit codes: 0 success, 1 training/runtime failure, 2 bad arguments or
config, 3 unreadable checkpoint.
"""

import argparse
import math
import sys
import time
from dataclasses import replace

import numpy as np

from . import checkpoint
from .config import ConfigError, load_config
from .engine import ExperimentConfig, push_sample, ttc_train
from .harness import (ToyGenerator, ToyWGANConfig, denoising_config, denoising_experiment,
                      misalignment_cosines, misalignment_experiment)
from .tasks import TASK_NAMES, sampler, task_dim
from .verify import SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CHECKPOINT = 0, 1, 2, 3


def fmt(v):
    """CSV cell; floats keep 17 significant digits so they parse back exactly."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def _fail(code, msg):
    print(f"ttc: {msg}", file=sys.stderr)
    return code


def _config(path, seed, base=None):
    cfg = load_config(path, base)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _svg(path, draw):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "ttc"  # stable element ids
    fig, ax = plt.subplots(figsize=(5, 4))
    draw(ax)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# -- commands

def cmd_train(args):
    cfg = _config(args.config, args.seed)
    d = task_dim(cfg.source)
    if task_dim(cfg.target) != d:
        raise ConfigError("task.target", f"dimension {task_dim(cfg.target)} differs from source {d}")
    rows = []
    losses = []
    t0 = time.perf_counter()

    def record(n, i, loss, stack):
        if i == 0:
            losses.clear()
        losses.append(loss)
        tail = losses[-100:]
        wall = 1000.0 * (time.perf_counter() - t0) if args.timing else None
        rows.append([n, i, loss, -math.fsum(tail) / len(tail), None, wall])

    try:
        stack = ttc_train(cfg, sampler(cfg.source, cfg.sigma), sampler(cfg.target, cfg.sigma), d, record)
    except (FloatingPointError, ValueError) as exc:
        return _fail(EXIT_FAIL, f"training failed: {exc}")
    for row in rows:
        row[4] = stack.steps[row[0]]
    checkpoint.save(stack, args.out)
    write_csv(args.metrics or args.out + ".metrics.csv",
              ["n", "iteration", "loss", "w1_trailing", "eta", "wall_ms"], rows)
    if args.plot:
        def draw(ax):
            ax.plot([r[2] for r in rows], lw=0.5)
            ax.set_xlabel("critic iteration (all critics)")
            ax.set_ylabel("penalized critic loss")
        _svg(args.plot, draw)
    return EXIT_OK


def cmd_sample(args):
    try:
        stack = checkpoint.load(args.stack)
    except (OSError, checkpoint.CheckpointError) as exc:
        return _fail(EXIT_CHECKPOINT, f"cannot load checkpoint: {exc}")
    if args.n < 0:
        return _fail(EXIT_USAGE, "n must be non-negative")
    d = task_dim(args.source)
    if len(stack) and d != stack.input_dim:
        return _fail(EXIT_USAGE, f"source {args.source!r} has dimension {d}, stack expects {stack.input_dim}")
    rng = np.random.default_rng(0 if args.seed is None else args.seed)
    x = push_sample(stack, sampler(args.source, args.sigma)(rng, args.n)) if len(stack) else \
        sampler(args.source, args.sigma)(rng, args.n)
    x = np.asarray(x).reshape(args.n, d)
    write_csv(args.out, [f"dim{i}" for i in range(d)], x.tolist())
    if args.plot:
        def draw(ax):
            ax.scatter(x[:, 0], x[:, 1] if d > 1 else np.zeros(len(x)), s=2)
            ax.set_aspect("equal", adjustable="datalim")
        _svg(args.plot, draw)
    return EXIT_OK


def cmd_denoise(args):
    cfg = _config(args.config, args.seed, denoising_config())
    cfg = replace(cfg, source="noisy_signal", target="signal")
    try:
        _, rows = denoising_experiment(cfg, n_test=args.n_test)
    except (FloatingPointError, ValueError) as exc:
        return _fail(EXIT_FAIL, f"denoising failed: {exc}")
    write_csv(args.out, ["index", "psnr_noisy", "psnr_denoised", "improved"],
              [(i, a, b, b > a) for i, a, b in rows])
    return EXIT_OK


def misalign_config(cfg: ExperimentConfig):
    """Map the shared config keys onto the toy WGAN-GP driver.

    ``critic_iters`` counts generator iterations, ``eps_c`` is the critic
    learning rate and ``layers`` the critic hidden widths.
    """
    return ToyWGANConfig(target=cfg.target, critic_hidden=cfg.hidden, gen_iters=cfg.critic_iters,
                         batch_size=cfg.batch_size, lam=cfg.lam, lr_critic=cfg.eps_c,
                         beta1=cfg.beta1, beta2=cfg.beta2, seed=cfg.seed)


class ConstantGradient:
    """Linear critic ``u(x) = <w, x>``."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def grad_x(self, x):
        return np.tile(self.w, (len(np.atleast_2d(x)), 1))


def cmd_misalign(args):
    header = ["stage", "probe", "cosine", "defined", "drift"]
    if args.linear_critic:
        # identity generator against a linear critic: every cosine is 1
        rng = np.random.default_rng(0 if args.seed is None else args.seed)
        gen = ToyGenerator([2, 2], [np.eye(2)], [np.zeros(2)])
        z = rng.standard_normal((args.n_probe, 2))
        res = misalignment_cosines(gen, ConstantGradient([0.6, -0.8]), z, z)
        write_csv(args.out, header, [("linear", i, c, ok, dr)
                                     for i, (c, ok, dr) in enumerate(zip(res.cosines, res.defined, res.drift))])
        return EXIT_OK
    base = ExperimentConfig(target="gauss8ring", critic_iters=2000, batch_size=64, hidden=(64, 64, 64))
    cfg = misalign_config(_config(args.config, args.seed, base))
    if task_dim(cfg.target) != 2:
        raise ConfigError("task.target", "misalignment runs on 2-D tasks")
    try:
        results = misalignment_experiment(cfg, n_probe=args.n_probe, step_rule=args.step_rule)
    except (FloatingPointError, ValueError) as exc:
        return _fail(EXIT_FAIL, f"toy WGAN-GP failed: {exc}")
    rows = []
    for stage, res in results.items():
        rows += [(stage, i, c, ok, dr) for i, (c, ok, dr) in enumerate(zip(res.cosines, res.defined, res.drift))]
    write_csv(args.out, header, rows)
    return EXIT_OK


def cmd_verify(args):
    rows = run_suite(args.suite, 0 if args.seed is None else args.seed)
    write_csv(args.out, ["check", "expected", "actual", "tolerance", "pass"], rows)
    failed = [r[0] for r in rows if not r[4]]
    if failed:
        return _fail(EXIT_FAIL, f"{len(failed)} check(s) failed: {', '.join(failed)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ttc", description="Trained-critic transport: train, sample, verify.")
    p.add_argument("--seed", type=int, default=None, help="override the seed (config seed otherwise, 0 if none)")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a critic stack")
    t.add_argument("config")
    t.add_argument("out", help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV (default: OUT.metrics.csv)")
    t.add_argument("--timing", action="store_true", help="fill the wall_ms column (breaks byte reproducibility)")
    t.add_argument("--plot", help="write an SVG loss curve")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="push source samples through a stack")
    s.add_argument("stack")
    s.add_argument("n", type=int)
    s.add_argument("out")
    s.add_argument("--source", default="square", choices=TASK_NAMES)
    s.add_argument("--sigma", type=float, default=0.0, help="noise level for noisy_signal")
    s.add_argument("--plot", help="write an SVG scatter of the first two coordinates")
    s.set_defaults(func=cmd_sample)

    d = sub.add_parser("denoise", help="train on noisy/clean signals and score PSNR")
    d.add_argument("config")
    d.add_argument("out")
    d.add_argument("--n-test", type=int, default=200)
    d.set_defaults(func=cmd_denoise)

    m = sub.add_parser("misalign", help="misalignment cosines of a toy WGAN-GP")
    m.add_argument("config", nargs="?", help="config file (required unless --linear-critic)")
    m.add_argument("out")
    m.add_argument("--n-probe", type=int, default=256)
    m.add_argument("--step-rule", choices=("sgd", "adam"), default="sgd")
    m.add_argument("--linear-critic", action="store_true", help="constant-gradient sanity probe, no training")
    m.set_defaults(func=cmd_misalign)

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("suite", choices=sorted(SUITES))
    v.add_argument("out")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "misalign" and not args.linear_critic and args.config is None:
        return _fail(EXIT_USAGE, "misalign needs a config file")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_USAGE, f"bad config: {exc}")
    except OSError as exc:
        return _fail(EXIT_USAGE, str(exc))


if __name__ == "__main__":
    sys.exit(main())
