"""Synthetic networks and the desk-scale experiments.

Seed derivation (one 64-bit seed per experiment):

* sanity run ``r``: ``SeedSequence(seed, spawn_key=(r,))``;
* synthetic network layer ``l``: ``SeedSequence(seed, spawn_key=(1, l))``;
* synthetic image ``j``: see :class:`dwdecomp.sampler.SyntheticImages`.
"""
import csv
import io
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from .convcore import RegularConvLayer, SeparableConvLayer, fold_separable, weights_from_matrix
from .decompose import (
    METHODS,
    channel_decompose,
    decomposable,
    decompose_layer,
    dw_decompose,
    dw_decompose_compensated,
    select_rank_for_speedup,
)
from .errors import InputError
from .netmodel import NetworkModel
from .sampler import PatchSet, SamplingConfig, SyntheticImages, sample_patches

SANITY_SCHEMA = "dwd-sanity/1"
LAYERWISE_SCHEMA = "dwd-layerwise/1"
SANITY_FIELDS = ["method", "mean_relative_error", "std_relative_error", "runs"]
LAYERWISE_FIELDS = ["layer_id", "method", "relative_error", "flops_before", "flops_after", "speedup", "rank"]


@dataclass(frozen=True)
class SanityConfig:
    N: int = 3000
    n: int = 128
    c: int = 64
    kh: int = 3
    kw: int = 3
    seed: int = 0
    runs: int = 10
    speedup: float = 9.0
    mode: str = "signed"

    def __post_init__(self):
        if min(self.N, self.n, self.c, self.kh, self.kw, self.runs) < 1 or self.speedup <= 0:
            raise InputError("sanity configuration values must be positive")


def gen_synthetic_network(
    channels: Sequence[int],
    kernel=3,
    input_hw=(12, 12),
    activation="relu",
    seed=0,
    separable_ground_truth=False,
    stride=1,
    padding=None,
    num_images=300,
    name="synthetic",
):
    """Chain of ``len(channels) - 1`` conv layers with N(0, 1/fan_in) weights.

    ``channels`` lists the input channel count followed by each layer's output
    count. With ``separable_ground_truth`` every layer is the fold of a random
    depthwise/pointwise pair, so each per-channel weight block has rank 1.
    Returns the model and a matching :class:`SyntheticImages` source.
    """
    if len(channels) < 2:
        raise InputError("need an input channel count and at least one layer")
    kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
    if padding is None:
        padding = (kh // 2, kw // 2)
    layers = []
    for l, (c, n) in enumerate(zip(channels[:-1], channels[1:])):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1, l)))
        if separable_ground_truth:
            D = rng.standard_normal((c, kh, kw)) / np.sqrt(kh * kw)
            P = rng.standard_normal((n, c)) / np.sqrt(c)
            layers.append(fold_separable(SeparableConvLayer(D, P, stride, padding)))
        else:
            w = rng.standard_normal((n, c, kh, kw)) / np.sqrt(c * kh * kw)
            layers.append(RegularConvLayer(w, stride, padding))
    acts = [activation] * len(layers)
    model = NetworkModel(tuple(layers), tuple(acts), (channels[0], *input_hw), name)
    return model, SyntheticImages(seed, num_images, model.input_shape)


# -- sanity experiment ---------------------------------------------------------


def _sanity_run(cfg: SanityConfig, run):
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(run,)))
    K = cfg.c * cfg.kh * cfg.kw
    W = rng.standard_normal((K, cfg.n))
    X = rng.standard_normal((cfg.N, K)).astype(np.float32)
    layer = RegularConvLayer(weights_from_matrix(W, cfg.c, cfg.kh, cfg.kw))
    W = W.astype(np.float32).astype(np.float64)
    ps = PatchSet(X=X, Y=(X @ W).astype(np.float32), layer_id=0, seed=cfg.seed, positions=np.zeros((cfg.N, 3), np.int64), kernel=(cfg.kh, cfg.kw))
    rank = min(select_rank_for_speedup(cfg.n, cfg.c, cfg.kh, cfg.kw, cfg.speedup), K, cfg.n, cfg.N)
    _, ch = channel_decompose(W, ps, rank)
    _, dw = dw_decompose(layer, ps)
    _, comp = dw_decompose_compensated(layer, ps, mode=cfg.mode)
    return {"channel": ch.relative_error, "dw": dw.relative_error, "dw-comp": comp.relative_error}


@dataclass
class SanityTable:
    config: SanityConfig
    rank: int
    errors: dict  # method -> per-run relative errors

    def rows(self):
        for method in METHODS:
            vals = np.asarray(self.errors[method])
            yield {
                "method": method,
                "mean_relative_error": float(vals.mean()),
                "std_relative_error": float(vals.std()),
                "runs": len(vals),
            }

    def mean(self, method):
        return float(np.mean(self.errors[method]))


def run_sanity_experiment(cfg: SanityConfig = SanityConfig()) -> SanityTable:
    # runs stay sequential: each already saturates BLAS, and order is fixed anyway
    per_run = [_sanity_run(cfg, r) for r in range(cfg.runs)]
    errors = {m: [run[m] for run in per_run] for m in METHODS}
    rank = select_rank_for_speedup(cfg.n, cfg.c, cfg.kh, cfg.kw, cfg.speedup)
    return SanityTable(cfg, rank, errors)


# -- per-layer experiment ------------------------------------------------------


@dataclass
class LayerRow:
    layer_id: int
    method: str
    relative_error: float
    flops_before: int
    flops_after: int
    rank: Optional[int] = None

    @property
    def speedup(self):
        return self.flops_before / self.flops_after


def report_row(report) -> LayerRow:
    return LayerRow(report.layer_id, report.method, report.relative_error, report.flops_before, report.flops_after, report.rank)


def run_layerwise_experiment(model: NetworkModel, images, cfg: SamplingConfig, methods=METHODS, speedup=9.0, mode="signed") -> List[LayerRow]:
    """Decompose each conv layer on its own (the rest of the network untouched)."""
    rows = []
    for l, layer in enumerate(model.layers):
        if not decomposable(layer):
            continue
        ps = sample_patches(model, images, l, cfg)
        for method in methods:
            _, report = decompose_layer(layer, ps, method, speedup, mode)
            report.layer_id = l
            rows.append(report_row(report))
    return rows


# -- report writers ------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _csv(schema, fields, rows):
    buf = io.StringIO()
    buf.write(f"# {schema}\n")
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in fields})
    return buf.getvalue()


def sanity_csv(table: SanityTable) -> str:
    return _csv(SANITY_SCHEMA, SANITY_FIELDS, table.rows())


def layerwise_csv(rows: Sequence[LayerRow]) -> str:
    def as_dict(r):
        d = asdict(r)
        d["speedup"] = r.speedup
        return d

    return _csv(LAYERWISE_SCHEMA, LAYERWISE_FIELDS, (as_dict(r) for r in rows))


def key_value_text(schema, rows, fields):
    """Structured text: one ``key=value`` record per line, prefixed by the schema tag."""
    lines = [f"schema={schema}"]
    for row in rows:
        lines.append(" ".join(f"{k}={_fmt(row[k])}" for k in fields))
    return "\n".join(lines) + "\n"


def sanity_text(table: SanityTable) -> str:
    return key_value_text(SANITY_SCHEMA, table.rows(), SANITY_FIELDS)
