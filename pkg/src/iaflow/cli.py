"""``iaflow`` command line: train, eval, sample, toy and check."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import checks
from .config import KEYS, RunConfig, config_text, parse_config
from .data import write_metrics_csv, write_pgm, write_samples_csv
from .errors import ConfigError, FormatError, TrainingError
from .experiments import build_model, evaluate_model, load_data, run_training, toy_variant
from .prng import Prng, streams
from .tensor import Tape
from .trainer import load_checkpoint, restore, save_checkpoint

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    keys = common.add_argument_group("config keys (override file values)")
    for key in KEYS:
        keys.add_argument(f"--{key}", dest=f"cfg_{key}", metavar="VALUE", help=KEYS[key][2])

    parser = argparse.ArgumentParser(prog="iaflow", description="Inverse autoregressive flow VAEs with oracle checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model; writes metrics.csv and ckpt.txt")
    ev = sub.add_parser("eval", parents=[common], help="VLB and importance-sampled log p(x) of a checkpoint")
    ev.add_argument("--ckpt", help="checkpoint path (default <out>/ckpt.txt)")
    sp = sub.add_parser("sample", parents=[common], help="decode prior draws to samples.csv and samples.pgm")
    sp.add_argument("--ckpt", help="checkpoint path (default <out>/ckpt.txt)")
    sp.add_argument("--count", type=int, default=64, help="number of prior draws")
    sub.add_parser("toy", parents=[common], help="diagonal vs IAF posteriors on the four-point toy set")
    ck = sub.add_parser("check", parents=[common], help="run the oracle verification suites")
    ck.add_argument("--quick", action="store_true", help="fewer random draws per suite")
    ck.add_argument("--suite", action="append", choices=list(checks.SUITES), help="run only this suite (repeatable)")
    return parser


def _config(args, **forced) -> RunConfig:
    overrides = {key: getattr(args, f"cfg_{key}") for key in KEYS if getattr(args, f"cfg_{key}") is not None}
    overrides.update(forced)
    return parse_config(args.config, overrides)


def _out_dir(cfg: RunConfig, *parts: str) -> Path:
    path = Path(cfg.out, *parts)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_train(args) -> int:
    cfg = _config(args)
    run = run_training(cfg)
    out = _out_dir(cfg)
    write_metrics_csv(out / "metrics.csv", run.result.metrics)
    save_checkpoint(out / "ckpt.txt", run.model.store)
    (out / "config.txt").write_text(config_text(cfg))
    last = run.result.metrics[-1]
    print(f"epochs {cfg.epochs}  steps {run.result.steps}  train elbo {last['elbo']:.4f}")
    if run.evaluation is not None:
        ev = run.evaluation
        print(f"test vlb {ev.vlb:.4f} (se {ev.vlb_se:.4f})  logp_iwae[{cfg.iwae_samples}] {ev.logp_iwae:.4f}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'ckpt.txt'}")
    return EXIT_OK


def _restored(cfg: RunConfig, ckpt):
    data = load_data(cfg)
    model = build_model(cfg, data, streams(cfg.seed)["init"])
    restore(model.store, load_checkpoint(ckpt or Path(cfg.out) / "ckpt.txt"))
    return model, data


def cmd_eval(args) -> int:
    cfg = _config(args)
    model, data = _restored(cfg, args.ckpt)
    ev = evaluate_model(cfg, model, data)
    out = _out_dir(cfg)
    text = "vlb,vlb_se,logp_iwae,samples\n" + ",".join(format(v, ".9g") for v in (ev.vlb, ev.vlb_se, ev.logp_iwae)) + f",{cfg.iwae_samples}\n"
    (out / "eval.csv").write_text(text)
    print(f"vlb {ev.vlb:.6f}  vlb_se {ev.vlb_se:.6f}  logp_iwae[{cfg.iwae_samples}] {ev.logp_iwae:.6f}")
    return EXIT_OK


def cmd_sample(args) -> int:
    cfg = _config(args)
    model, data = _restored(cfg, args.ckpt)
    z = Prng(cfg.seed).normal((args.count, model.latent_dim))
    means = model.decode_mean(Tape().constant(z))
    out = _out_dir(cfg)
    header = "sample_idx," + ",".join(f"x{i + 1}" for i in range(means.shape[1]))
    rows = [f"{k}," + ",".join(format(v, ".9g") for v in row) for k, row in enumerate(means)]
    (out / "samples.csv").write_text("\n".join([header, *rows]) + "\n")
    written = [out / "samples.csv"]
    shape = data.train.image_shape
    if shape is not None and len(shape) == 2:
        write_pgm(out / "samples.pgm", means.reshape(-1, *shape))
        written.append(out / "samples.pgm")
    print("wrote " + " and ".join(str(p) for p in written))
    return EXIT_OK


def cmd_toy(args) -> int:
    cfg = _config(args, experiment="toy4")
    lines = ["variant,final_elbo,w2_to_prior"]
    for variant in ("diagonal", "iaf"):
        result = toy_variant(cfg, variant)
        out = _out_dir(cfg, variant)
        write_samples_csv(out / "posterior_samples.csv", result.draws)
        write_metrics_csv(out / "metrics.csv", result.run.result.metrics)
        save_checkpoint(out / "ckpt.txt", result.run.model.store)
        lines.append(f"{variant},{result.final_elbo:.9g},{result.w2:.9g}")
        print(f"{variant:9s} final elbo {result.final_elbo:.4f}  w2 to prior {result.w2:.4f}")
    (_out_dir(cfg) / "toy_summary.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_check(args) -> int:
    if args.config or any(getattr(args, f"cfg_{k}") is not None for k in KEYS):
        _config(args)  # validate even though the suites take no settings
    results = checks.run_all(scale=0.2 if args.quick else 1.0, only=args.suite)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} suites passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sample": cmd_sample, "toy": cmd_toy, "check": cmd_check}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"iaflow: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingError, FormatError, OSError) as exc:
        print(f"iaflow: {exc}", file=sys.stderr)
        return EXIT_FAIL

