"""Response-patch sampling for one layer of a network.

Randomness: image ``j`` of the source draws its positions from
``SeedSequence(seed, spawn_key=(layer_key, j))``, so each image has its own
substream and the result does not depend on how images are scheduled.
Synthetic images draw from ``SeedSequence(seed, spawn_key=(j,))``.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

from ._parallel import pmap
from .container import read_container, write_container
from .convcore import RegularConvLayer, im2col, output_hw, weight_matrix
from .errors import FormatError, InputError, ShapeError
from .netmodel import NetworkModel, layer_input

PATCHES_FORMAT = "dwd-patches"


@dataclass(frozen=True)
class SamplingConfig:
    per_image: int = 10
    num_images: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.per_image < 1 or self.num_images < 1:
            raise InputError("per_image and num_images must be >= 1")


@dataclass(eq=False)
class PatchSet:
    """Sampled receptive fields ``X`` (N x c*kh*kw) and responses ``Y`` (N x n).

    ``Y`` is the linear response ``X @ W`` without bias. ``positions`` holds
    ``(image, row, col)`` output coordinates per row.
    """

    X: np.ndarray
    Y: np.ndarray
    layer_id: int
    seed: int
    positions: np.ndarray
    kernel: Tuple[int, int]

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError(f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}")
        kh, kw = self.kernel
        if self.X.shape[1] % (kh * kw):
            raise ShapeError(f"X width {self.X.shape[1]} is not a multiple of kernel area {kh * kw}")
        self.kernel = (int(kh), int(kw))

    @property
    def channels(self):
        kh, kw = self.kernel
        return self.X.shape[1] // (kh * kw)

    def __len__(self):
        return self.X.shape[0]


def channel_slice(ps: PatchSet, i, W=None):
    """Return ``X_i`` (N x kh*kw) and, if ``W`` (c*kh*kw x n) is given, ``W_i``.

    ``i`` is 0-based.
    """
    c = ps.channels
    if not 0 <= i < c:
        raise IndexError(f"channel {i} out of range for {c} channels")
    k = ps.kernel[0] * ps.kernel[1]
    Xi = ps.X[:, i * k : (i + 1) * k]
    if W is None:
        return Xi
    return Xi, W[i * k : (i + 1) * k]


# -- image sources -------------------------------------------------------------


class SyntheticImages:
    """Seeded standard-normal images of a fixed ``(c, H, W)`` shape."""

    def __init__(self, seed, count, shape):
        self.seed = int(seed)
        self.count = int(count)
        self.shape = tuple(int(s) for s in shape)

    def __len__(self):
        return self.count

    def __getitem__(self, j):
        if not 0 <= j < self.count:
            raise IndexError(j)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(j,)))
        return rng.standard_normal(self.shape, dtype=np.float32)


class DirectoryImages:
    """Images stored as ``.npy`` files, each ``(c, H, W)`` or a batch ``(B, c, H, W)``.

    Files are read in sorted name order.
    """

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.is_dir():
            raise InputError(f"image directory {self.path} does not exist")
        self._index = []
        for f in sorted(self.path.glob("*.npy")):
            arr = np.load(f, mmap_mode="r")
            if arr.ndim == 3:
                self._index.append((f, None))
            elif arr.ndim == 4:
                self._index.extend((f, b) for b in range(arr.shape[0]))
            else:
                raise InputError(f"{f}: expected a 3-D or 4-D array, got shape {arr.shape}")

    def __len__(self):
        return len(self._index)

    def __getitem__(self, j):
        f, b = self._index[j]
        arr = np.load(f, mmap_mode="r")
        img = arr if b is None else arr[b]
        return np.ascontiguousarray(img, dtype=np.float32)


def stack_images(images, count=None):
    count = len(images) if count is None else count
    return np.stack([images[j] for j in range(count)])


# -- sampling ------------------------------------------------------------------


def _layer(model, layer_id):
    if not 0 <= layer_id < len(model.layers):
        raise ShapeError(f"layer {layer_id} out of range for a {len(model.layers)}-layer model")
    layer = model.layers[layer_id]
    if not isinstance(layer, RegularConvLayer):
        raise ShapeError(f"layer {layer_id} is not a regular convolution")
    return layer


def sample_positions(cfg: SamplingConfig, layer_key, image_index, out_hw):
    """Flat output-position indices for one image."""
    total = out_hw[0] * out_hw[1]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(layer_key, image_index)))
    replace = total < cfg.per_image
    return np.sort(rng.choice(total, size=cfg.per_image, replace=replace))


def draw_positions(model, layer_id, cfg: SamplingConfig, layer_key=None):
    """``(num_images * per_image) x 3`` array of ``(image, row, col)``."""
    layer = _layer(model, layer_id)
    (_, H, W), _ = model.layer_shapes()[layer_id]
    Ho, Wo = output_hw((H, W), layer.kernel, layer.stride, layer.padding)
    key = layer_id if layer_key is None else layer_key
    rows = []
    for j in range(cfg.num_images):
        flat = sample_positions(cfg, key, j, (Ho, Wo))
        rows.append(np.stack([np.full_like(flat, j), flat // Wo, flat % Wo], axis=1))
    return np.concatenate(rows).astype(np.int64)


def gather_patches(model: NetworkModel, images, layer_id, positions, kernel=None, stride=None, padding=None):
    """Receptive-field rows of the input to ``layer_id`` at ``positions``.

    ``kernel``/``stride``/``padding`` default to the layer's own geometry; they
    are overridable so a reference network can be read with another network's
    geometry.
    """
    layer = model.layers[layer_id] if 0 <= layer_id < len(model.layers) else None
    if layer is None:
        raise ShapeError(f"layer {layer_id} out of range for a {len(model.layers)}-layer model")
    kh, kw = kernel or layer.kernel
    stride = stride or layer.stride
    padding = padding or layer.padding
    image_ids = np.unique(positions[:, 0])

    def one(j):
        x = layer_input(model, images[int(j)][None], layer_id)
        cols = im2col(x, kh, kw, stride, padding)
        Wo = output_hw(x.shape[2:], (kh, kw), stride, padding)[1]
        sel = positions[positions[:, 0] == j]
        return cols[sel[:, 1] * Wo + sel[:, 2]]

    blocks = pmap(one, image_ids)
    # positions are grouped by image in ascending order, so blocks line up with them
    return np.concatenate(blocks).astype(np.float32)


def responses(X, layer: RegularConvLayer):
    return (X.astype(np.float64) @ weight_matrix(layer.weights).astype(np.float64)).astype(np.float32)


def sample_patches(model: NetworkModel, images, layer_id, cfg: SamplingConfig, layer_key=None) -> PatchSet:
    layer = _layer(model, layer_id)
    if len(images) < cfg.num_images:
        raise InputError(f"image source has {len(images)} items, {cfg.num_images} required")
    positions = draw_positions(model, layer_id, cfg, layer_key)
    X = gather_patches(model, images, layer_id, positions)
    return PatchSet(X=X, Y=responses(X, layer), layer_id=layer_id, seed=cfg.seed, positions=positions, kernel=layer.kernel)


def save_patches(ps: PatchSet, path):
    body = {
        "layer_id": ps.layer_id,
        "seed": ps.seed,
        "kernel": list(ps.kernel),
        "positions": ps.positions.tolist(),
    }
    write_container(path, PATCHES_FORMAT, body, {"X": ps.X, "Y": ps.Y})


def load_patches(path) -> PatchSet:
    manifest, arrays = read_container(path, PATCHES_FORMAT)
    try:
        positions = np.asarray(manifest["positions"], dtype=np.int64).reshape(-1, 3)
        return PatchSet(
            X=arrays["X"],
            Y=arrays["Y"],
            layer_id=int(manifest["layer_id"]),
            seed=int(manifest["seed"]),
            positions=positions,
            kernel=tuple(manifest["kernel"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed patch manifest: {exc}") from exc
