"""``diffnet-lab`` command line interface.

Every subcommand prints its resolved settings first (``# key=value`` lines)
so a run can be repeated from its own log. Failures print one line
``error_code:message`` on stderr; usage errors exit 2, runtime errors exit 1.
"""

import argparse
import contextlib
import os
import sys

import numpy as np

from . import checkpoint, config, pnm, verification
from .checkpoint import CheckpointError
from .data import Dataset, Manifest, add_noise, extract_patches, gen_disks, load_corpus, make_pairs, \
    write_dataset
from .diffusion import DiffusionConfig, DiffusionMode, Scheme, SolverError, evolve
from .inverse import fourier_deconvolve, unsharp_mask
from .model import DiffNet, DiffNetConfig, LinearDiffNet
from .pnm import PNMError
from .train import TrainingDiverged, evaluate, export_filters, smoothing_vs_noise, sweep_training_size, \
    train

CONFIG_SIDECAR = "config.txt"


class UsageError(Exception):
    pass


class CLIError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _float_list(text):
    return [float(t) for t in text.split(",") if t]


def _int_list(text):
    return [int(t) for t in text.split(",") if t]


def _add_config_flags(p):
    p.add_argument("--config", help="key=value run configuration file")
    for key, spec in config.KEYS.items():
        p.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", default=None, metavar="V",
                       help=f"{spec.help} (default {spec.default})")


def _resolved(args, base=None):
    """Defaults < ``base`` (e.g. a checkpoint's sidecar) < --config file < flags."""
    file_values = dict(base or {})
    if args.config:
        if not os.path.isfile(args.config):
            raise UsageError(f"config file not found: {args.config}")
        file_values.update(config.load(args.config))
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")}
    return config.resolve(file_values, overrides)


def _banner(values, out=None):
    out = out or sys.stdout
    for k, v in values.items():
        out.write(f"# {k}={v}\n")
    out.flush()


def _clean_images(values):
    if values["scenario"] == "disks":
        return (gen_disks(values["n_train"], values["size"], values["seed"]),
                gen_disks(values["n_test"], values["size"], values["seed"] + 1))
    if values["scenario"] != "corpus":
        raise CLIError("config_error", f"unknown scenario {values['scenario']!r}")
    if not values["corpus_dir"]:
        raise CLIError("config_error", "corpus scenario needs corpus_dir")
    images = load_corpus(values["corpus_dir"])
    return (extract_patches(images, values["size"], values["n_train"], values["seed"], "train"),
            extract_patches(images, values["size"], values["n_test"], values["seed"], "test"))


def _dataset_from(values, data_dir=None):
    if data_dir:
        path = os.path.join(data_dir, "manifest.txt")
        if not os.path.isfile(path):
            raise CLIError("data_error", f"no manifest.txt in {data_dir}")
        return Manifest.read(path).regenerate(data_dir)
    forward = config.forward_model(values)
    train_imgs, test_imgs = _clean_images(values)
    return Dataset(make_pairs(train_imgs, forward, values["noise_pct"], values["seed"]),
                   make_pairs(test_imgs, forward, values["noise_pct"], values["seed"] + 1))


def _new_network(values):
    cfg = config.model_config(values)
    if isinstance(cfg, DiffNetConfig):
        return DiffNet(cfg, seed=values["init_seed"], dtype=np.float32)
    return LinearDiffNet(cfg, dtype=np.float32)


def _network_from_checkpoint(path):
    side = os.path.join(os.path.dirname(os.path.abspath(path)), CONFIG_SIDECAR)
    if not os.path.isfile(side):
        raise CLIError("checkpoint_error", f"missing {CONFIG_SIDECAR} next to {path}")
    values = config.load(side)
    net = _new_network(config.resolve(values))
    net.load_state_dict(checkpoint.load(path))
    return net, values


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# subcommands --------------------------------------------------------------------

def cmd_gen_data(args):
    values = _resolved(args)
    _banner(dict(values, out=args.out))
    train_imgs, test_imgs = _clean_images(values)
    ds = write_dataset(args.out, train_imgs, test_imgs, config.forward_model(values), values["noise_pct"],
                       values["seed"], {"scenario": values["scenario"], "size": values["size"]})
    print(f"wrote {len(ds.train)} train / {len(ds.test)} test samples to {args.out}")


def cmd_diffuse(args):
    cfg = DiffusionConfig(args.dt, args.steps, args.lam, DiffusionMode(args.mode))
    _banner({"in": args.input, "out": args.out, "mode": cfg.mode.value, "dt": cfg.dt, "steps": cfg.steps,
             "lambda": cfg.lam, "scheme": args.scheme, "noise_pct": args.noise_pct, "seed": args.seed})
    v = evolve(pnm.load_image(args.input), cfg, Scheme(args.scheme))
    if args.noise_pct:
        v = add_noise(v, args.noise_pct, args.seed)
    pnm.save_image(args.out, v)
    print(f"min {v.min():.6f} max {v.max():.6f} mean {v.mean():.6f}")


def cmd_deconvolve(args):
    _banner({"in": args.input, "out": args.out, "method": args.method, "T": args.T,
             "reg_eps": args.reg_eps, "sigma": args.sigma, "eps": args.eps})
    u = pnm.load_image(args.input)
    if args.method == "fourier":
        v = fourier_deconvolve(u, args.T, args.reg_eps)
    else:
        v = unsharp_mask(u, args.sigma, args.eps)
    pnm.save_image(args.out, v)
    print(f"min {v.min():.6f} max {v.max():.6f} mean {v.mean():.6f}")


def cmd_train(args):
    values = _resolved(args)
    _banner(dict(values, data=args.data, out=args.out))
    ds = _dataset_from(values, args.data)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, CONFIG_SIDECAR), config.dump(values))
    net = _new_network(values)
    result = train(net, ds, config.train_config(values), args.out, log=print)
    print(f"final test_psnr {result.final.test_psnr:.4f} dB; best {result.best_psnr:.4f} dB at step {result.best_step}")


def cmd_eval(args):
    net, side = _network_from_checkpoint(args.checkpoint)
    values = _resolved(args, side)
    _banner(dict(values, checkpoint=args.checkpoint, data=args.data, out=args.out))
    ds = _dataset_from(values, args.data)
    ev = evaluate(net, ds.test)
    lines = (f"test_psnr={ev.psnr:.9e}\ntest_rel_l2={ev.rel_l2:.9e}\ntest_mse={ev.mse:.9e}\n"
             f"input_psnr={ev.input_psnr:.9e}\nn_test={len(ds.test)}\n")
    sys.stdout.write(lines)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "eval.txt"), lines)


def cmd_sweep_size(args):
    values = _resolved(args)
    sizes = _int_list(args.sizes)
    _banner(dict(values, sizes=args.sizes, data=args.data, out=args.out))
    values = dict(values, n_train=max(values["n_train"], sizes[-1]))
    ds = _dataset_from(values, args.data)
    os.makedirs(args.out, exist_ok=True)
    for size in sizes:
        os.makedirs(os.path.join(args.out, f"size_{size}"), exist_ok=True)
        _write_text(os.path.join(args.out, f"size_{size}", CONFIG_SIDECAR), config.dump(dict(values, n_train=size)))
    rows = sweep_training_size(lambda: _new_network(values), ds, sizes, config.train_config(values),
                               args.out, log=print)
    for size, score in rows:
        print(f"size {size}: test_psnr {score:.4f} dB")


def cmd_sweep_noise(args):
    values = _resolved(args)
    levels = _float_list(args.noise)
    _banner(dict(values, noise=args.noise, samples=args.samples, out=args.out))
    os.makedirs(args.out, exist_ok=True)
    models = {}
    for level in levels:
        run_values = dict(values, noise_pct=level)
        sub = os.path.join(args.out, f"noise_{level!r}")
        ds = _dataset_from(run_values)
        os.makedirs(sub, exist_ok=True)
        _write_text(os.path.join(sub, CONFIG_SIDECAR), config.dump(run_values))
        result = train(_new_network(run_values), ds, config.train_config(run_values), sub, log=print)
        models[level] = (result.net, ds.test)
    rows = smoothing_vs_noise(models, args.samples, os.path.join(args.out, "alpha_vs_noise.csv"))
    for level, alpha in rows:
        print(f"noise {level}%: alpha {alpha:.6e}")


def cmd_inspect_filters(args):
    _banner({"checkpoint": args.checkpoint, "in": args.input, "out": args.out})
    net, _ = _network_from_checkpoint(args.checkpoint)
    if not isinstance(net, DiffNet):
        raise CLIError("checkpoint_error", "filter export needs a DiffNet checkpoint")
    names = export_filters(net, pnm.load_image(args.input), args.out)
    print(f"wrote {len(names)} filter images to {args.out}")


def cmd_verify(args):
    names = args.suite or list(verification.SUITES)
    _banner({"suites": ",".join(names), "out": args.out})
    results = verification.run_all(names)
    report = "".join(r.line() + "\n" for r in results)
    sys.stdout.write(report)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_text(os.path.join(args.out, "verify.txt"), report)
    if not all(r.passed for r in results):
        raise CLIError("verify_failed", ", ".join(r.name for r in results if not r.passed))


# parser -------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="diffnet-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="cap on BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write clean images and a manifest for a dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("diffuse", help="run forward diffusion on one image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=[m.value for m in DiffusionMode], default="perona-malik")
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.2)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="explicit")
    p.add_argument("--noise-pct", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("deconvolve-analytic", help="Fourier division or unsharp masking")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=["fourier", "unsharp"], default="fourier")
    p.add_argument("--T", type=float, default=1.0, help="blur time for Fourier division")
    p.add_argument("--reg-eps", type=float, default=0.0, help="clamp the multiplier at 1/reg_eps")
    p.add_argument("--sigma", type=float, default=1.0, help="unsharp mask Gaussian width")
    p.add_argument("--eps", type=float, default=1.0, help="unsharp mask strength")
    p.set_defaults(func=cmd_deconvolve)

    p = sub.add_parser("train", help="train a network")
    _add_config_flags(p)
    p.add_argument("--data", help="dataset directory written by gen-data (default: build from config)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-size", help="final test PSNR versus training-set size")
    _add_config_flags(p)
    p.add_argument("--sizes", default="10,100,500,2000")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_size)

    p = sub.add_parser("sweep-noise", help="train per noise level and report the smoothing level alpha")
    _add_config_flags(p)
    p.add_argument("--noise", default="0.1,1,5", help="comma-separated noise percentages")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_noise)

    p = sub.add_parser("inspect-filters", help="export per-layer filter images for one input")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_filters)

    p = sub.add_parser("verify", help="run the built-in self-check suites")
    p.add_argument("--suite", action="append", choices=list(verification.SUITES))
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return parser


def _thread_limit(n):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


_ERROR_CODES = (
    (config.ConfigError, "config_error"),
    (CheckpointError, "checkpoint_error"),
    (PNMError, "image_error"),
    (TrainingDiverged, "training_diverged"),
    (SolverError, "solver_error"),
    (FileNotFoundError, "io_error"),
    (OSError, "io_error"),
    (ValueError, "value_error"),
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        with _thread_limit(args.threads):
            args.func(args)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"usage_error:{exc}", file=sys.stderr)
        return 2
    except CLIError as exc:
        print(f"{exc.code}:{exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        for kind, code in _ERROR_CODES:
            if isinstance(exc, kind):
                print(f"{code}:{exc}", file=sys.stderr)
                return 1
        print(f"runtime_error:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
