"""Command-line entry point: pretrain, run, sweep, bounds, quality, inspect-prior."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import envs, harness
from .model import load_prior, save_prior
from .posterior import Gaussian
from .pretrain import TrainConfig, generate, train, write_loss_curve

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="diffusion-ts", description="Diffusion-prior Thompson sampling experiments.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("pretrain", help="train a diffusion prior from parameter samples", formatter_class=fmt)
    s.add_argument("--samples", required=True, help="CSV of parameter samples (header dim0,...)")
    s.add_argument("--out", required=True, help="output prior file")
    s.add_argument("--L", type=int, default=40, help="diffusion steps")
    s.add_argument("--epochs", type=int, default=20000)
    s.add_argument("--hidden", type=int, default=64)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch", type=int, default=2048)
    s.add_argument("--beta-min", type=float, default=1e-4)
    s.add_argument("--beta-max", type=float, default=0.2)
    s.add_argument("--loss-curve", default=None, help="loss curve CSV (default: <out>.loss.csv)")
    s.add_argument("--seed", type=int, default=0)

    for name, text in (("run", "run a Bayes-regret experiment"),
                       ("sweep", "LinTS/dTS final-regret ratio over one variable")):
        s = sub.add_parser(name, help=text, formatter_class=fmt)
        s.add_argument("--config", required=True, help="TOML experiment config")
        s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")
        s.add_argument("--seed", type=int, default=None, help="base seed (default: run.seed, itself 0)")
        s.add_argument("--jobs", type=int, default=harness.default_jobs(), help="parallel runs")
        if name == "run":
            s.add_argument("--out", required=True, help="output directory")
        else:
            s.add_argument("--var", required=True, choices=harness.SWEEP_VARS)
            s.add_argument("--values", required=True, type=_ints, help="comma-separated values")
            s.add_argument("--agents", default="lints,dts", help="numerator,denominator agents")
            s.add_argument("--out", default=None, help="CSV output (default: stdout)")

    s = sub.add_parser("bounds", help="evaluate a regret bound", formatter_class=fmt)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--K", type=int, required=True)
    s.add_argument("--L", type=int, required=True)
    s.add_argument("--sigmas", type=_floats, required=True, help="sigma_1,...,sigma_{L+1}")
    s.add_argument("--sigma", type=float, default=1.0, help="reward noise")
    s.add_argument("--delta", type=float, default=None, help="confidence (default 1/n)")
    s.add_argument("--c", type=float, default=1.0, help="constant of the c*n*delta term")
    s.add_argument("--active", type=_ints, default=None, help="sparsity dims d_1,...,d_L")
    s.add_argument("--variant", default="dts", choices=harness.BOUND_VARIANTS + ("all",))

    s = sub.add_parser("quality", help="posterior approximation quality on N(0, I_d)", formatter_class=fmt)
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--n", type=int, default=100, help="observed rounds")
    s.add_argument("--prior", default=None, help="use this prior file instead of training one")
    s.add_argument("--train-samples", type=int, default=1000)
    s.add_argument("--L", type=int, default=40)
    s.add_argument("--epochs", type=int, default=3000)
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("inspect-prior", help="summarize a prior file", formatter_class=fmt)
    s.add_argument("--prior", required=True)
    s.add_argument("--samples", type=int, default=0, help="draw this many parameter samples")
    s.add_argument("--out", default=None, help="CSV for drawn samples (default: stdout)")
    s.add_argument("--seed", type=int, default=0)
    return p


def _require_file(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise harness.ConfigError(f"file not found: {path}")
    return path


def cmd_pretrain(args) -> int:
    samples = envs.read_samples(_require_file(args.samples))
    cfg = TrainConfig(L=args.L, hidden=args.hidden, lr=args.lr, epochs=args.epochs, batch=args.batch,
                      beta_min=args.beta_min, beta_max=args.beta_max, seed=args.seed)
    cfg.validate()
    log = logging.getLogger("diffusion_ts.pretrain")

    def progress(epoch, loss):
        if epoch % 1000 == 0:
            log.info("epoch %d loss %.6f", epoch, loss)

    prior = train(samples, cfg, progress=progress)
    save_prior(prior, args.out)
    write_loss_curve(prior.meta["loss_curve"], args.loss_curve or f"{args.out}.loss.csv")
    print(f"wrote {args.out} (L={prior.L}, d={prior.d})")
    return EXIT_OK


def _experiment_config(args):
    cfg = harness.load_config(_require_file(args.config), args.set)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.jobs < 1:
        raise harness.ConfigError("--jobs must be >= 1")
    cfg.run.jobs = args.jobs
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _experiment_config(args)
    result = harness.run_experiment(cfg)
    harness.write_results(result, args.out)
    for name in cfg.agent.names:
        agg = result.aggregate(name)
        print(f"{name}: final cumulative regret {agg['mean_cum'][-1]:.4f} +- {agg['stderr_cum'][-1]:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    agents = [a.strip() for a in args.agents.split(",") if a.strip()]
    if len(agents) != 2:
        raise harness.ConfigError("--agents needs exactly two names")
    rows = harness.regret_ratio_sweep(cfg, args.var, args.values, tuple(agents))
    if args.out:
        harness.write_sweep(rows, args.out, agents)
    print(f"{args.var},regret_{agents[0]},regret_{agents[1]},ratio")
    for r in rows:
        print(f"{r.value},{r.regret_a:.6g},{r.regret_b:.6g},{r.ratio:.6g}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    p = harness.BoundParams(args.n, args.d, args.K, args.L, args.sigma, args.sigmas, args.delta,
                            args.active, args.c)
    variants = harness.BOUND_VARIANTS if args.variant == "all" else (args.variant,)
    if args.variant == "all" and args.active is None:
        variants = tuple(v for v in variants if v != "dts_sparse")
    for v in variants:
        res = harness.compute_bound(p, v)
        print(f"{v}: {res.value:.10g}")
        for key, val in res.terms.items():
            if isinstance(val, list):
                val = ",".join(f"{x:.10g}" for x in val)
            else:
                val = f"{val:.10g}"
            print(f"  {key} = {val}")
    return EXIT_OK


def cmd_quality(args) -> int:
    if args.prior:
        prior = load_prior(_require_file(args.prior))
        if prior.d != args.d:
            raise harness.ConfigError(f"prior has d={prior.d}, --d is {args.d}")
    else:
        rng = np.random.default_rng(args.seed)
        samples = rng.standard_normal((args.train_samples, args.d))
        prior = train(samples, TrainConfig(L=args.L, epochs=args.epochs, seed=args.seed))
    truth = Gaussian(np.zeros(args.d), np.eye(args.d))
    rep = harness.posterior_quality_report(truth, prior, args.n, seed=args.seed)
    print(f"mean_l2 = {rep.mean_l2:.6g}")
    print(f"cov_fro = {rep.cov_fro:.6g}")
    print(f"moments = {'analytic' if rep.analytic else 'sampled'}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    prior = load_prior(_require_file(args.prior))
    print(f"levels L = {prior.L}, dimension d = {prior.d}")
    for l in range(1, prior.L + 1):
        cov = prior.cov(l)
        print(f"  layer {l}: link {prior.link(l).kind}, mean variance {np.trace(cov) / prior.d:.6g}")
    print(f"  top: mean variance {np.trace(prior.cov(prior.L + 1)) / prior.d:.6g}")
    if args.samples > 0:
        draws = generate(prior, args.samples, np.random.default_rng(args.seed))
        if args.out:
            envs.write_samples(draws, args.out)
        else:
            print("mean = " + ",".join(f"{v:.6g}" for v in draws.mean(0)))
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "run": cmd_run, "sweep": cmd_sweep, "bounds": cmd_bounds,
            "quality": cmd_quality, "inspect-prior": cmd_inspect}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:   # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (harness.ConfigError, envs.EmptyFile, envs.ParseError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
