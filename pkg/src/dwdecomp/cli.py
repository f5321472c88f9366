"""Command-line entry point ``dwd``.

Exit codes: 0 success, 1 usage error, 2 data/shape/format error, 3 numeric
error. Failures print one line to stderr: ``dwd: error[<code>]: <message>``.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .container import atomic_write_text
from .convcore import SeparableConvLayer, fold_separable
from .decompose import METHODS, MODES, decompose_network, relative_error
from .errors import DwdError, InputError, NumericError
from .netmodel import deserialize_model, flops_and_speedup, forward, serialize_model
from .sampler import DirectoryImages, SamplingConfig, SyntheticImages, stack_images

log = logging.getLogger("dwdecomp")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _image_source(source, count, shape):
    if source.startswith("synthetic:"):
        try:
            seed = int(source.split(":", 1)[1])
        except ValueError:
            raise InputError(f"bad synthetic image source {source!r}; expected synthetic:<seed>")
        return SyntheticImages(seed, count, shape)
    return DirectoryImages(source)


def _default_report(out):
    out = Path(out)
    return out.with_name(out.stem + ".report.csv")


def _write_report(path, text, figure=None):
    atomic_write_text(path, text)
    if figure is not None:
        figure()


# -- subcommands -----------------------------------------------------------------


def cmd_sanity(args):
    cfg = harness.SanityConfig(
        N=args.samples, n=args.n, c=args.c, kh=args.kh, kw=args.kw,
        seed=args.seed, runs=args.runs, speedup=args.speedup, mode=args.compensation,
    )
    table = harness.run_sanity_experiment(cfg)
    plot = None
    if args.plot:
        from .plotting import figure_path, plot_sanity

        plot = lambda: plot_sanity(table, figure_path(args.out))
    _write_report(args.out, harness.sanity_csv(table), plot)
    print(f"channel rank {table.rank} at {cfg.speedup:g}x; {cfg.runs} runs; N={cfg.N} n={cfg.n} c={cfg.c} k={cfg.kh}x{cfg.kw}")
    print(f"{'method':<10}{'mean':>12}{'std':>14}")
    for row in table.rows():
        print(f"{row['method']:<10}{row['mean_relative_error']:>12.6f}{row['std_relative_error']:>14.3e}")
    return 0


def cmd_layerwise(args):
    model = deserialize_model(args.model)
    cfg = SamplingConfig(args.per_image, args.num_images, args.seed)
    images = _image_source(args.images, args.num_images, model.input_shape)
    rows = harness.run_layerwise_experiment(model, images, cfg, args.methods, args.speedup, args.compensation)
    plot = None
    if args.plot:
        from .plotting import figure_path, plot_layerwise

        plot = lambda: plot_layerwise(rows, figure_path(args.out))
    _write_report(args.out, harness.layerwise_csv(rows), plot)
    for r in rows:
        print(f"layer {r.layer_id:<3} {r.method:<8} {r.relative_error:.6f}  {r.speedup:.2f}x")
    return 0


def cmd_decompose(args):
    model = deserialize_model(args.model)
    cfg = SamplingConfig(args.per_image, args.num_images, args.seed)
    images = _image_source(args.images, args.num_images, model.input_shape)
    layers = None if args.layers == "all" else _int_list(args.layers)
    new, reports = decompose_network(
        model, images, cfg, method=args.method, compensate_layers=not args.no_layer_compensation,
        speedup=args.speedup, mode=args.compensation, layers=layers,
    )
    serialize_model(new, args.out)
    rows = [harness.report_row(r) for r in reports]
    report_path = args.report or _default_report(args.out)
    _write_report(report_path, harness.layerwise_csv(rows))
    for r in rows:
        rank = f" rank {r.rank}" if r.rank is not None else ""
        print(f"layer {r.layer_id:<3} {r.method:<8} {r.relative_error:.6f}  {r.speedup:.2f}x{rank}")
    return 0


def cmd_fold(args):
    model = deserialize_model(args.model)
    if not any(isinstance(l, SeparableConvLayer) for l in model.layers):
        print("dwd: notice: model has no separable layers; written unchanged", file=sys.stderr)
    layers = tuple(fold_separable(l) if isinstance(l, SeparableConvLayer) else l for l in model.layers)
    serialize_model(model.replace(layers, model.activations, f"{model.name}+folded"), args.out)
    return 0


def cmd_eval(args):
    model = deserialize_model(args.model)
    ref = deserialize_model(args.ref)
    images = _image_source(args.images, args.num_images, ref.input_shape)
    x = stack_images(images, min(args.num_images, len(images)))
    err = relative_error(forward(model, x), forward(ref, x))
    print(f"relative_error={err!r}")
    return 0


def cmd_flops(args):
    model = deserialize_model(args.model)
    ref = deserialize_model(args.ref) if args.ref else None
    sig = tuple(args.input_sig) if args.input_sig else None
    if ref is not None:
        report = flops_and_speedup(ref, model, sig)
        base, other = report.layers, report.other_layers
    else:
        report = flops_and_speedup(model, None, sig)
        base, other = report.layers, None
    lines = ["# dwd-flops/1", "model,layer,kind,per_position,positions,total"]
    for tag, rows in (("ref", base if ref is not None else None), ("model", other if ref is not None else base)):
        for r in rows or []:
            lines.append(f"{tag},{r.index},{r.kind},{r.per_position},{r.positions},{r.total}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    if ref is not None:
        print(f"speedup={report.speedup!r}")
    return 0


def cmd_synth(args):
    model, _ = harness.gen_synthetic_network(
        args.channels, kernel=args.kernel, input_hw=tuple(args.hw), activation=args.activation,
        seed=args.seed, separable_ground_truth=args.separable, name=args.name,
    )
    serialize_model(model, args.out)
    return 0


# -- parser --------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="dwd", description="Depth-wise decomposition of convolution layers.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("sanity", help="random-data single-layer experiment")
    s.add_argument("--n", type=int, default=128, help="output channels")
    s.add_argument("--c", type=int, default=64, help="input channels")
    s.add_argument("--kh", type=int, default=3)
    s.add_argument("--kw", type=int, default=3)
    s.add_argument("--samples", type=int, default=3000, help="rows N of X and Y")
    s.add_argument("--runs", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--speedup", type=float, default=9.0, help="channel-decomposition target")
    s.add_argument("--compensation", choices=MODES, default="signed")
    s.add_argument("--out", default="sanity.csv")
    s.add_argument("--plot", action="store_true", help="also write a PNG next to --out")
    s.set_defaults(func=cmd_sanity)

    def sampling(q):
        q.add_argument("--images", default="synthetic:0", help="directory of .npy files or synthetic:<seed>")
        q.add_argument("--per-image", type=int, default=10)
        q.add_argument("--num-images", type=int, default=300)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--speedup", type=float, default=9.0)
        q.add_argument("--compensation", choices=MODES, default="signed")

    d = sub.add_parser("decompose", help="decompose a model's conv layers")
    d.add_argument("--model", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--method", choices=METHODS, default="dw-comp")
    d.add_argument("--layers", default="all", help="comma-separated layer ids or 'all'")
    d.add_argument("--report", help="per-layer CSV (default: <out>.report.csv)")
    d.add_argument("--no-layer-compensation", action="store_true", help="do not target the original network's responses")
    sampling(d)
    d.set_defaults(func=cmd_decompose)

    lw = sub.add_parser("layerwise", help="per-layer error of each method, one layer at a time")
    lw.add_argument("--model", required=True)
    lw.add_argument("--out", default="layerwise.csv")
    lw.add_argument("--methods", type=lambda t: t.split(","), default=list(METHODS))
    lw.add_argument("--plot", action="store_true")
    sampling(lw)
    lw.set_defaults(func=cmd_layerwise)

    f = sub.add_parser("fold", help="replace separable pairs by equivalent regular layers")
    f.add_argument("--model", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_fold)

    e = sub.add_parser("eval", help="relative error between two models' outputs")
    e.add_argument("--model", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--images", default="synthetic:0")
    e.add_argument("--num-images", type=int, default=8)
    e.set_defaults(func=cmd_eval)

    fl = sub.add_parser("flops", help="multiply counts and speed-up")
    fl.add_argument("--model", required=True)
    fl.add_argument("--ref")
    fl.add_argument("--input-sig", type=_int_list, help="c,H,W")
    fl.add_argument("--out")
    fl.set_defaults(func=cmd_flops)

    g = sub.add_parser("synth", help="write a synthetic conv chain")
    g.add_argument("--channels", type=_int_list, required=True, help="input channels then each layer's outputs")
    g.add_argument("--kernel", type=int, default=3)
    g.add_argument("--hw", type=_int_list, default=[12, 12])
    g.add_argument("--activation", choices=("identity", "relu"), default="relu")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--separable", action="store_true", help="per-channel rank-1 ground truth")
    g.add_argument("--name", default="synthetic")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_synth)
    return p


def _fail(code, message, status):
    message = " ".join(str(message).split())
    print(f"dwd: error[{code}]: {message}", file=sys.stderr)
    return status


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="dwd: notice: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except NumericError as exc:
        return _fail(exc.code, exc, EXIT_NUMERIC)
    except DwdError as exc:
        return _fail(exc.code, exc, EXIT_DATA)
    except (OSError, ValueError) as exc:
        return _fail("io" if isinstance(exc, OSError) else "input", exc, EXIT_DATA)
    except np.linalg.LinAlgError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
