"""Channel decomposition baseline and depth-wise decomposition variants.

Matrices follow the patch layout of :mod:`dwdecomp.sampler`: ``X`` is
``N x c*kh*kw``, ``W`` is ``c*kh*kw x n`` and ``Y = X W``. Channel ``i`` owns the
column block ``X_i`` (``N x kh*kw``) and row block ``W_i`` (``kh*kw x n``), and
``Y = sum_i X_i W_i``.

A depth-wise pair reproduces ``sum_i (X_i D_i) P_i^T`` where ``D_i`` is a
spatial kernel and ``P_i`` a pointwise column, so each channel contributes a
rank-1 term whose left factor lies in the column space of ``Y_i``.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._parallel import pmap
from .convcore import RegularConvLayer, SeparableConvLayer, weight_matrix, weights_from_matrix
from .errors import DegenerateInputError, InputError, ShapeError, UndefinedMetricError
from .linalg import leading_pencil_vector, leading_right_singular_vector, svd
from .netmodel import NetworkModel
from .sampler import PatchSet, SamplingConfig, draw_positions, gather_patches, responses

log = logging.getLogger(__name__)

METHODS = ("channel", "dw", "dw-comp")
MODES = ("absolute", "signed")


@dataclass(eq=False)
class ChannelDecompResult:
    W1: np.ndarray
    W2: np.ndarray
    rank: int


@dataclass(eq=False)
class CompensationState:
    E: np.ndarray
    mode: str = "signed"


@dataclass(eq=False)
class DecompositionReport:
    method: str
    relative_error: float
    flops_before: int
    flops_after: int
    singular_values: np.ndarray
    residual_norms: np.ndarray
    layer_id: Optional[int] = None
    rank: Optional[int] = None
    # ||E|| / ||Y|| for the compensated method; equals relative_error in signed mode
    compensation_error: Optional[float] = None
    state: Optional[CompensationState] = None

    @property
    def speedup(self):
        return self.flops_before / self.flops_after


def relative_error(Y_hat, Y_ref):
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    Y_ref = np.asarray(Y_ref, dtype=np.float64)
    if Y_hat.shape != Y_ref.shape:
        raise ShapeError(f"shape mismatch {Y_hat.shape} vs {Y_ref.shape}")
    ref = np.linalg.norm(Y_ref)
    if ref == 0.0:
        raise UndefinedMetricError("relative error against an all-zero reference")
    return float(np.linalg.norm(Y_hat - Y_ref) / ref)


def select_rank_for_speedup(n, c, kh, kw, r):
    """Rank of a ``kh x kw`` conv + 1x1 conv pair that is ``r`` times cheaper than the original."""
    if r <= 0:
        raise InputError("target speed-up must be positive")
    return max(1, math.floor(n * c * kh * kw / ((c * kh * kw + n) * r)))


def _check_patches(layer: RegularConvLayer, ps: PatchSet):
    n, c, kh, kw = layer.weights.shape
    if ps.kernel != (kh, kw) or ps.X.shape[1] != c * kh * kw or ps.Y.shape[1] != n:
        raise ShapeError(
            f"patch set (X {ps.X.shape}, Y {ps.Y.shape}, kernel {ps.kernel}) "
            f"does not belong to a layer of shape {layer.weights.shape}"
        )


# -- channel decomposition -------------------------------------------------------


def channel_decompose(W, ps: PatchSet, rank):
    W = np.asarray(W, dtype=np.float64)
    X = ps.X.astype(np.float64)
    if X.shape[1] != W.shape[0]:
        raise ShapeError(f"X has {X.shape[1]} columns, W has {W.shape[0]} rows")
    n = W.shape[1]
    if not 1 <= rank <= min(W.shape[0], n, X.shape[0]):
        raise InputError(f"rank {rank} outside [1, {min(W.shape[0], n, X.shape[0])}]")
    Y = X @ W
    flops_before = W.shape[0] * n
    flops_after = rank * W.shape[0] + n * rank
    if not np.any(Y):
        result = ChannelDecompResult(np.zeros((W.shape[0], rank)), np.zeros((rank, n)), rank)
        report = DecompositionReport("channel", 0.0, flops_before, flops_after, np.zeros(rank), np.zeros(1), ps.layer_id, rank)
        return result, report
    res = svd(Y)
    P = res.V[:, :rank]
    resid = Y - (Y @ P) @ P.T
    result = ChannelDecompResult(W1=W @ P, W2=P.T.copy(), rank=rank)
    report = DecompositionReport(
        method="channel",
        relative_error=float(np.linalg.norm(resid) / np.linalg.norm(Y)),
        flops_before=flops_before,
        flops_after=flops_after,
        singular_values=res.S[:rank].copy(),
        residual_norms=np.array([np.linalg.norm(resid)]),
        layer_id=ps.layer_id,
        rank=rank,
    )
    return result, report


def channel_layers(result: ChannelDecompResult, layer: RegularConvLayer):
    """The ``kh x kw`` conv with ``rank`` outputs and the 1x1 conv that follows it."""
    n, c, kh, kw = layer.weights.shape
    first = RegularConvLayer(weights_from_matrix(result.W1, c, kh, kw), layer.stride, layer.padding)
    second = RegularConvLayer(weights_from_matrix(result.W2, result.rank, 1, 1), bias=layer.bias)
    return first, second


# -- depth-wise decomposition ------------------------------------------------------


def dw_decompose_single(W_i, Y_i):
    """``D_i = W_i v0`` and ``P_i = v0`` for the leading right singular vector ``v0`` of ``Y_i``."""
    W_i = np.asarray(W_i, dtype=np.float64)
    Y_i = np.asarray(Y_i, dtype=np.float64)
    if W_i.shape[1] != Y_i.shape[1]:
        raise ShapeError(f"W_i has {W_i.shape[1]} outputs, Y_i has {Y_i.shape[1]}")
    try:
        v0, _ = leading_right_singular_vector(Y_i)
    except DegenerateInputError:
        return np.zeros(W_i.shape[0]), np.zeros(W_i.shape[1])
    return W_i @ v0, v0


def _assemble(layer, D, P):
    n, c, kh, kw = layer.weights.shape
    return SeparableConvLayer(
        depthwise=np.asarray(D).reshape(c, kh, kw),
        pointwise=np.asarray(P).T,
        stride=layer.stride,
        padding=layer.padding,
        bias=None if layer.bias is None else layer.bias.copy(),
    )


def dw_decompose(layer: RegularConvLayer, ps: PatchSet):
    _check_patches(layer, ps)
    n, c, kh, kw = layer.weights.shape
    W = weight_matrix(layer.weights).astype(np.float64)
    X = ps.X.astype(np.float64)

    def channel(i):
        Xi = X[:, i * kh * kw : (i + 1) * kh * kw]
        Wi = W[i * kh * kw : (i + 1) * kh * kw]
        Yi = Xi @ Wi
        # R Wi has the same Gram matrix as Yi = Q R Wi, hence the same right
        # singular vectors, at kh*kw rows instead of N.
        R = np.linalg.qr(Xi, mode="r")
        D_i, P_i = dw_decompose_single(Wi, R @ Wi)
        z = Xi @ D_i
        resid = np.linalg.norm(Yi - np.outer(z, P_i))
        return D_i, P_i, np.linalg.norm(z), resid, z

    parts = pmap(channel, range(c))
    D = np.stack([p[0] for p in parts])
    P = np.stack([p[1] for p in parts])
    Z = np.stack([p[4] for p in parts], axis=1)
    Y = X @ W
    report = DecompositionReport(
        method="dw",
        relative_error=relative_error(Z @ P, Y) if np.any(Y) else 0.0,
        flops_before=n * c * kh * kw,
        flops_after=c * kh * kw + n * c,
        singular_values=np.array([p[2] for p in parts]),
        residual_norms=np.array([p[3] for p in parts]),
        layer_id=ps.layer_id,
    )
    return _assemble(layer, D, P), report


def dw_decompose_compensated(
    layer: RegularConvLayer,
    ps: PatchSet,
    mode="signed",
    reference_X=None,
    state=None,
    eps_reg=None,
    weak_channel_tol=1e-3,
):
    """Sequential per-channel fit that folds earlier channels' residuals into the target.

    For channel ``i`` (ascending) the target is ``T = Y_i' + E`` and the carrier
    is ``Y_i = X_i W_i``; ``Y_i' = X_i' W_i`` when ``reference_X`` (the
    receptive fields of an unmodified network at the same positions) is given,
    else ``Y_i``. After the fit ``E`` accumulates ``Y_i' - (Y_i u) p^T``, taken
    entry-wise absolute in ``"absolute"`` mode.

    Channels whose carrier energy is at most ``weak_channel_tol`` times the
    mean channel energy get zero kernels and leave ``E`` unchanged, like
    all-zero channels. ``state`` seeds ``E`` with a carried-in error.
    """
    if mode not in MODES:
        raise InputError(f"unknown compensation mode {mode!r}")
    _check_patches(layer, ps)
    n, c, kh, kw = layer.weights.shape
    k = kh * kw
    W = weight_matrix(layer.weights).astype(np.float64)
    X = ps.X.astype(np.float64)
    Xref = X if reference_X is None else np.asarray(reference_X, dtype=np.float64)
    if Xref.shape != X.shape:
        raise ShapeError(f"reference patches {Xref.shape} differ from patches {X.shape}")
    E = np.zeros((X.shape[0], n)) if state is None else np.array(state.E, dtype=np.float64)
    if E.shape != (X.shape[0], n):
        raise ShapeError(f"carried error has shape {E.shape}, expected {(X.shape[0], n)}")

    Xg = [X[:, i * k : (i + 1) * k].T @ X[:, i * k : (i + 1) * k] for i in range(c)]
    grams = [W[i * k : (i + 1) * k].T @ Xg[i] @ W[i * k : (i + 1) * k] for i in range(c)]
    energy = np.array([np.trace(g) for g in grams])
    # Carriers far below the mean channel energy count as degenerate: fitting
    # them to a large target takes a pointwise gain that does not carry over
    # to positions outside the sample.
    weak = energy <= weak_channel_tol * energy.mean()
    D = np.zeros((c, k))
    P = np.zeros((c, n))
    Y_hat = np.zeros((X.shape[0], n))
    sv = np.zeros(c)
    resid = np.zeros(c)
    for i in range(c):
        Xi = X[:, i * k : (i + 1) * k]
        Wi = W[i * k : (i + 1) * k]
        Yi = Xi @ Wi
        Yt = Yi if reference_X is None else Xref[:, i * k : (i + 1) * k] @ Wi
        T = Yt + E
        if weak[i] or not np.any(Yi):
            resid[i] = np.linalg.norm(T)
            continue
        cross = Wi.T @ (Xi.T @ T)
        u = leading_pencil_vector(cross, grams[i], eps_reg)
        z = Yi @ u
        zz = float(z @ z)
        if zz == 0.0:
            resid[i] = np.linalg.norm(T)
            continue
        p = cross.T @ u / zz
        fitted = np.outer(z, p)
        D[i] = Wi @ u
        P[i] = p
        sv[i] = math.sqrt(zz) * np.linalg.norm(p)
        resid[i] = np.linalg.norm(T - fitted)
        Y_hat += fitted
        E_i = Yt - fitted
        E += np.abs(E_i) if mode == "absolute" else E_i

    Y_target = Xref @ W
    ref_norm = np.linalg.norm(Y_target)
    report = DecompositionReport(
        method="dw-comp",
        relative_error=relative_error(Y_hat, Y_target) if ref_norm else 0.0,
        flops_before=n * c * k,
        flops_after=c * k + n * c,
        singular_values=sv,
        residual_norms=resid,
        layer_id=ps.layer_id,
        compensation_error=float(np.linalg.norm(E) / ref_norm) if ref_norm else 0.0,
        state=CompensationState(E=E, mode=mode),
    )
    return _assemble(layer, D, P), report


def decompose_layer(layer, ps, method, speedup=9.0, mode="signed", reference_X=None):
    """Decompose one layer; returns ``(replacement layers, report)``."""
    if method == "channel":
        n, c, kh, kw = layer.weights.shape
        rank = min(select_rank_for_speedup(n, c, kh, kw, speedup), c * kh * kw, n, len(ps))
        result, report = channel_decompose(weight_matrix(layer.weights), ps, rank)
        return list(channel_layers(result, layer)), report
    if method == "dw":
        new, report = dw_decompose(layer, ps)
        return [new], report
    if method == "dw-comp":
        new, report = dw_decompose_compensated(layer, ps, mode=mode, reference_X=reference_X)
        return [new], report
    raise InputError(f"unknown method {method!r}; expected one of {METHODS}")


def decomposable(layer):
    return isinstance(layer, RegularConvLayer) and layer.kernel != (1, 1)


def resolve_layers(model: NetworkModel, layers=None):
    """Original-model layer ids to decompose. Explicit requests must be decomposable."""
    if layers is None:
        chosen = []
        for i, layer in enumerate(model.layers):
            if decomposable(layer):
                chosen.append(i)
            elif isinstance(layer, RegularConvLayer):
                log.warning("layer %d is 1x1; skipped (no spatial kernel to separate)", i)
        return chosen
    chosen = sorted(set(int(i) for i in layers))
    for i in chosen:
        if not 0 <= i < len(model.layers):
            raise ShapeError(f"unknown layer id {i}; model has {len(model.layers)} layers")
        layer = model.layers[i]
        if not isinstance(layer, RegularConvLayer):
            raise ShapeError(f"layer {i} is already separable")
        if layer.kernel == (1, 1):
            raise ShapeError(f"layer {i} is 1x1 and cannot be separated")
    return chosen


def decompose_network(
    model: NetworkModel,
    images,
    cfg: SamplingConfig,
    method="dw-comp",
    compensate_layers=True,
    speedup=9.0,
    mode="signed",
    layers=None,
):
    """Replace conv layers front-to-back, sampling each from the partially decomposed network.

    Patches for layer ``l`` come from the network whose earlier layers are
    already replaced, at positions keyed by ``l`` so they match between
    networks. With ``compensate_layers`` and ``dw-comp``, each channel's target
    is taken from the original network at the same positions, so the error
    left by earlier layers is folded into this layer's fit.
    """
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; expected one of {METHODS}")
    if len(images) < cfg.num_images:
        raise InputError(f"image source has {len(images)} items, {cfg.num_images} required")
    chosen = set(resolve_layers(model, layers))
    new_layers, new_acts, reports = [], [], []
    for l, (layer, act) in enumerate(zip(model.layers, model.activations)):
        if l not in chosen:
            new_layers.append(layer)
            new_acts.append(act)
            continue
        hybrid = model.replace(tuple(new_layers) + (layer,), tuple(new_acts) + (act,))
        hid = len(new_layers)
        positions = draw_positions(hybrid, hid, cfg, layer_key=l)
        X = gather_patches(hybrid, images, hid, positions)
        ps = PatchSet(X=X, Y=responses(X, layer), layer_id=l, seed=cfg.seed, positions=positions, kernel=layer.kernel)
        reference_X = None
        if compensate_layers and method == "dw-comp" and hid > 0:
            reference_X = gather_patches(model, images, l, positions)
        replacement, report = decompose_layer(layer, ps, method, speedup, mode, reference_X)
        report.layer_id = l
        reports.append(report)
        new_layers.extend(replacement)
        new_acts.extend(["identity"] * (len(replacement) - 1) + [act])
    name = f"{model.name}+{method}"
    return model.replace(tuple(new_layers), tuple(new_acts), name), reports
