"""Synthetic grayscale corpora and PGM input/output.

Images live in [0, 1] as flat row-major float vectors.  Synthesis kinds:

blobs           sums of random Gaussian bumps, clipped to [0, 1]
checker         alternating blocks, block side = grid side / 4
random_phantom  uniform noise smoothed by a small periodic Gaussian,
                then normalized per image

Grid sides must be powers of two, matching the operator contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, PgmParseError, ShapeError
from .linops import (ConvolutionOperator, Shape, build_convolution_operator,
                     build_gaussian_kernel, _is_power_of_two)


@dataclass
class GrayImage:
    """Flat row-major pixel vector with its grid shape."""

    shape: Shape
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 1 or self.pixels.shape[0] != self.shape.n:
            raise ShapeError(
                f"pixel vector must have length {self.shape.n}, "
                f"got shape {np.shape(self.pixels)}")

    def matrix(self):
        return self.pixels.reshape(self.shape.height, self.shape.width)


@dataclass
class DatasetSplit:
    """Disjoint train/test lists of images plus the seed that made them."""

    train: list
    test: list
    seed: int


@dataclass
class DegradationConfig:
    """Blur kernel, noise level and seed for reproducible degradation."""

    kernel: object
    delta: float
    seed: int

    def __post_init__(self):
        if self.delta < 0:
            raise ParameterError("degradation delta must be >= 0")


def _require_pow2(shape):
    if not (_is_power_of_two(shape.height) and _is_power_of_two(shape.width)):
        raise ParameterError(
            f"grid sides must be powers of two, got {shape.height}x{shape.width}")


def synthesize_images(count, shape, kind, seed):
    """Deterministic corpus of `count` images of the given kind."""
    if count < 1:
        raise ParameterError("count must be >= 1")
    _require_pow2(shape)
    rng = np.random.default_rng(seed)
    maker = {"blobs": _make_blobs, "checker": _make_checker,
             "random_phantom": _make_phantom}.get(kind)
    if maker is None:
        raise ParameterError(f"unknown image kind {kind!r}")
    return [maker(shape, rng) for _ in range(count)]


def _make_blobs(shape, rng):
    h, w = shape.height, shape.width
    ii = np.arange(h)[:, None]
    jj = np.arange(w)[None, :]
    img = np.zeros((h, w))
    bumps = rng.integers(2, 6)
    for _ in range(bumps):
        ci = rng.uniform(0, h)
        cj = rng.uniform(0, w)
        width = rng.uniform(min(h, w) / 10.0, min(h, w) / 3.0)
        amp = rng.uniform(0.5, 1.0)
        img += amp * np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2)
                            / (2.0 * width * width))
    img = np.clip(img, 0.0, 1.0)
    return GrayImage(shape=shape, pixels=img.ravel())


def _make_checker(shape, rng):
    h, w = shape.height, shape.width
    block = max(1, min(h, w) // 4)
    ii = np.arange(h)[:, None] // block
    jj = np.arange(w)[None, :] // block
    img = np.where((ii + jj) % 2 == 0, 1.0, 0.0)
    return GrayImage(shape=shape, pixels=img.ravel())


def _make_phantom(shape, rng):
    h, w = shape.height, shape.width
    noise = rng.uniform(0.0, 1.0, size=(h, w))
    radius = 1
    kernel = build_gaussian_kernel(radius, 1.0)
    op = build_convolution_operator(shape, kernel)
    smooth = op.apply(noise.ravel())
    img = GrayImage(shape=shape, pixels=smooth)
    return normalize(img)


def normalize(image):
    """Affine rescale of the pixel range to [0, 1]; constants become zero.

    Idempotent bitwise: a second pass subtracts exact 0.0 and divides by
    exact 1.0.
    """
    px = image.pixels
    lo = px.min()
    hi = px.max()
    if hi == lo:
        return GrayImage(shape=image.shape, pixels=np.zeros_like(px))
    return GrayImage(shape=image.shape, pixels=(px - lo) / (hi - lo))


def patchify(image, patch_side, stride=None):
    """Non-overlapping (or strided) square patches; partial tiles dropped."""
    if patch_side < 1:
        raise ParameterError("patch side must be >= 1")
    if stride is None:
        stride = patch_side
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    mat = image.matrix()
    h, w = mat.shape
    out = []
    for top in range(0, h - patch_side + 1, stride):
        for left in range(0, w - patch_side + 1, stride):
            tile = mat[top:top + patch_side, left:left + patch_side]
            out.append(GrayImage(shape=Shape(patch_side, patch_side),
                                 pixels=tile.ravel().copy()))
    return out


def degrade(image, config, op=None):
    """y = K * x + e with e ~ N(0, delta^2 I) drawn from the config seed.

    Same config, same image -> identical data vector.  An existing
    convolution operator for the image's shape may be passed to avoid
    rebuilding it.
    """
    if op is None:
        op = build_convolution_operator(image.shape, config.kernel)
    elif not isinstance(op, ConvolutionOperator):
        raise ParameterError("degrade needs a convolution operator")
    y = op.apply(image.pixels)
    if config.delta > 0:
        rng = np.random.default_rng(config.seed)
        y = y + config.delta * rng.standard_normal(y.shape[0])
    return y


def split_images(images, test_count, seed):
    """Shuffle deterministically and split off a disjoint test set."""
    if not 0 < test_count < len(images):
        raise ParameterError("test_count must be in (0, len(images))")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images))
    test_idx = set(order[:test_count].tolist())
    train = [images[i] for i in range(len(images)) if i not in test_idx]
    test = [images[i] for i in sorted(test_idx)]
    return DatasetSplit(train=train, test=test, seed=seed)


# ---------------------------------------------------------------------------
# PGM input / output (P2 ascii and P5 binary, maxval up to 65535)

def save_pgm(image, path, maxval=255, binary=True):
    """Quantize [0, 1] pixels to 0..maxval and write P5 (or P2) PGM."""
    if not 0 < maxval <= 65535:
        raise ParameterError("maxval must be in 1..65535")
    mat = np.clip(image.matrix(), 0.0, 1.0)
    levels = np.rint(mat * maxval).astype(np.uint16)
    h, w = mat.shape
    if binary:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
            if maxval < 256:
                fh.write(levels.astype(np.uint8).tobytes())
            else:
                fh.write(levels.astype(">u2").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write(f"P2\n{w} {h}\n{maxval}\n")
            for row in levels:
                fh.write(" ".join(str(int(v)) for v in row) + "\n")


def load_pgm(path):
    """Read a P2/P5 PGM into a GrayImage scaled to [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] not in (b"P2", b"P5"):
        raise PgmParseError(f"{path}: not a PGM file", offset=0)
    binary = blob[:2] == b"P5"

    # header tokens: width, height, maxval; comments run to end of line
    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise PgmParseError(f"{path}: truncated header", offset=pos)
        c = blob[pos:pos + 1]
        if c == b"#":
            while pos < len(blob) and blob[pos:pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(blob) and not blob[pos:pos + 1].isspace() \
                    and blob[pos:pos + 1] != b"#":
                pos += 1
            tok = blob[start:pos]
            if not tok.isdigit():
                raise PgmParseError(
                    f"{path}: bad header token {tok!r}", offset=start)
            tokens.append((int(tok), start))
    (w, _), (h, _), (maxval, mv_off) = tokens
    if w < 1 or h < 1:
        raise PgmParseError(f"{path}: bad dimensions {w}x{h}", offset=tokens[0][1])
    if not 0 < maxval <= 65535:
        raise PgmParseError(f"{path}: bad maxval {maxval}", offset=mv_off)

    if binary:
        if pos >= len(blob) or not blob[pos:pos + 1].isspace():
            raise PgmParseError(f"{path}: missing raster separator", offset=pos)
        pos += 1
        wide = maxval >= 256
        need = w * h * (2 if wide else 1)
        raster = blob[pos:pos + need]
        if len(raster) < need:
            raise PgmParseError(f"{path}: truncated raster",
                                offset=pos + len(raster))
        dtype = ">u2" if wide else np.uint8
        levels = np.frombuffer(raster, dtype=dtype).astype(float)
    else:
        text = blob[pos:]
        vals = []
        cursor = pos
        for raw in text.split():
            if not raw.isdigit():
                raise PgmParseError(f"{path}: bad pixel token {raw!r}",
                                    offset=blob.find(raw, cursor))
            vals.append(int(raw))
        if len(vals) < w * h:
            raise PgmParseError(f"{path}: expected {w * h} pixels, "
                                f"got {len(vals)}", offset=len(blob))
        levels = np.asarray(vals[:w * h], dtype=float)
    if levels.max(initial=0.0) > maxval:
        raise PgmParseError(f"{path}: pixel exceeds maxval", offset=pos)
    return GrayImage(shape=Shape(h, w), pixels=levels / maxval)


# ---------------------------------------------------------------------------
# dataset manifests

def save_manifest(path, entries, split_seed, degradation, shape, kind):
    """Record what gen-data produced: file list, seeds, degradation recipe."""
    kernel = degradation.kernel
    payload = {
        "images": entries,
        "split_seed": split_seed,
        "shape": [shape.height, shape.width],
        "kind": kind,
        "degradation": {
            "delta": degradation.delta,
            "seed": degradation.seed,
            "kernel": {"radius": kernel.radius,
                       "sigma": getattr(kernel, "sigma", None),
                       "normalized": getattr(kernel, "normalized", True)},
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path):
    with open(path) as fh:
        return json.load(fh)
