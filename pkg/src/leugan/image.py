"""Image decoding/encoding, color conversion, augmentation, and unpaired datasets.

Images travel as ``ImageBuffer``: an (H, W, C) float array with values in
[0, 1], C in {1, 3}. PNG files go through Pillow; binary PPM (P6) and PGM (P5)
are parsed directly. 8-bit values map to [0, 1] by division with 255 and back
by round-to-nearest.
"""

from __future__ import annotations

import re
import threading
import queue
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # Rec.601

SUPPORTED_SUFFIXES = (".png", ".ppm", ".pgm")


@dataclass
class ImageBuffer:
    """Decoded raster, row-major, values in [0, 1]."""

    pixels: np.ndarray  # (H, W, C) float64

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"ImageBuffer expects (H, W, 1|3) pixels, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("ImageBuffer must not be empty")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("ImageBuffer values must lie in [0, 1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def load_image(path) -> ImageBuffer:
    """Decode a PNG/PPM/PGM file into an ImageBuffer."""
    path = Path(path)
    if not path.is_file():
        raise IOError(f"cannot read image: {path} does not exist")
    suffix = path.suffix.lower()
    try:
        if suffix in (".ppm", ".pgm"):
            arr = _read_pnm(path)
        elif suffix == ".png":
            with Image.open(path) as im:
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB" if im.mode not in ("1", "I", "F") else "L")
                arr = np.asarray(im, dtype=np.uint8)
        else:
            raise IOError(f"unsupported image format for {path} (expected .png/.ppm/.pgm)")
    except (UnidentifiedImageError, ValueError, OSError) as exc:
        raise IOError(f"cannot decode image {path}: {exc}") from exc
    return ImageBuffer(arr.astype(np.float64) / 255.0)


def save_image(buf: ImageBuffer, path) -> None:
    """Encode the buffer as 8-bit PNG/PPM/PGM, round-to-nearest."""
    path = Path(path)
    quantized = np.clip(np.rint(buf.pixels * 255.0), 0, 255).astype(np.uint8)
    suffix = path.suffix.lower()
    if suffix in (".ppm", ".pgm"):
        _write_pnm(quantized, path)
        return
    if suffix != ".png":
        raise IOError(f"unsupported image format for {path} (expected .png/.ppm/.pgm)")
    arr = quantized[:, :, 0] if quantized.shape[2] == 1 else quantized
    Image.fromarray(arr, mode="L" if quantized.shape[2] == 1 else "RGB").save(path)


def _read_pnm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise ValueError(f"not a binary PGM/PPM file (magic {raw[:2]!r})")
    channels = 3 if raw[:2] == b"P6" else 1
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        m = re.match(rb"(\s+(#[^\n]*\n?)*)*([0-9]+)", raw[pos:])
        if not m:
            raise ValueError("truncated PNM header")
        tokens.append(int(m.group(3)))
        pos += m.end()
    width, height, maxval = tokens
    if maxval != 255:
        raise ValueError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace after maxval
    expected = width * height * channels
    data = raw[pos:pos + expected]
    if len(data) != expected:
        raise ValueError("truncated PNM pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)


def _write_pnm(quantized: np.ndarray, path: Path) -> None:
    h, w, c = quantized.shape
    if path.suffix.lower() == ".ppm":
        if c == 1:
            quantized = np.repeat(quantized, 3, axis=2)
            c = 3
        magic = b"P6"
    else:
        if c == 3:
            raise IOError(f"cannot save RGB buffer as PGM: {path}")
        magic = b"P5"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(quantized.tobytes())


def to_grayscale(buf: ImageBuffer) -> ImageBuffer:
    """Rec.601 luma from an RGB buffer."""
    if buf.channels != 3:
        raise ValueError("to_grayscale expects a 3-channel buffer")
    r, g, b = LUMA_WEIGHTS
    y = r * buf.pixels[:, :, 0] + g * buf.pixels[:, :, 1] + b * buf.pixels[:, :, 2]
    return ImageBuffer(np.clip(y, 0.0, 1.0)[:, :, None])


def resize_bilinear(buf: ImageBuffer, height: int, width: int) -> ImageBuffer:
    """Bilinear resample with half-pixel centers."""
    if height < 1 or width < 1:
        raise ValueError("resize target must be positive")
    src = buf.pixels
    h, w = buf.height, buf.width
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = src[y0][:, x0] * (1 - wx) + src[y0][:, x1] * wx
    bottom = src[y1][:, x0] * (1 - wx) + src[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def augment(buf: ImageBuffer, rng: np.random.Generator, size: int = 256,
            flip_prob: float = 0.5, rot_prob: float = 0.5) -> ImageBuffer:
    """Random crop to ``size`` (resizing up when smaller), then random
    horizontal flip and random 90-degree rotation, each with probability 0.5.

    Deterministic for a fixed generator state.
    """
    if size < 1:
        raise ValueError("augment size must be positive")
    if buf.height < 1 or buf.width < 1:
        raise ValueError("degenerate input image")
    work = buf
    if work.height < size or work.width < size:
        scale = max(size / work.height, size / work.width)
        work = resize_bilinear(work, max(size, int(round(work.height * scale))),
                               max(size, int(round(work.width * scale))))
    dy = int(rng.integers(0, work.height - size + 1))
    dx = int(rng.integers(0, work.width - size + 1))
    px = work.pixels[dy:dy + size, dx:dx + size]
    if rng.random() < flip_prob:
        px = px[:, ::-1]
    if rng.random() < rot_prob:
        px = np.rot90(px, k=int(rng.integers(1, 4)), axes=(0, 1))
    return ImageBuffer(np.ascontiguousarray(px))


def synth_darken(buf: ImageBuffer, gamma: float, noise_sigma: float,
                 rng: np.random.Generator) -> ImageBuffer:
    """Gamma-compress brightness and add Gaussian noise, clamped to [0, 1]."""
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {noise_sigma}")
    out = np.power(buf.pixels, gamma)
    if noise_sigma > 0:
        out = out + rng.normal(0.0, noise_sigma, size=out.shape)
    return ImageBuffer(np.clip(out, 0.0, 1.0))


def list_images(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise IOError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in SUPPORTED_SUFFIXES)
    return files


class UnpairedDataset:
    """Two independent image collections sampled without any pairing.

    Sources may be directories of image files or in-memory lists of
    ImageBuffers/arrays. Sampling and augmentation draw from a caller-supplied
    generator so trainers can derive per-iteration streams.
    """

    def __init__(self, dir_a, dir_b, rng_seed: int = 0, size: int = 256, augment_samples=True):
        self.items_a = self._collect(dir_a)
        self.items_b = self._collect(dir_b)
        if not self.items_a or not self.items_b:
            raise ConfigError("both domains must contain at least one image")
        self.rng_seed = int(rng_seed)
        self.size = int(size)
        self.augment_samples = augment_samples

    @staticmethod
    def _collect(source):
        if isinstance(source, (str, Path)):
            return list_images(source)
        out = []
        for item in source:
            out.append(item if isinstance(item, ImageBuffer) else ImageBuffer(np.asarray(item)))
        return out

    def __len__(self):
        return max(len(self.items_a), len(self.items_b))

    @staticmethod
    def _fetch(item) -> ImageBuffer:
        return item if isinstance(item, ImageBuffer) else load_image(item)

    def sample(self, rng: np.random.Generator):
        """Draw one independent (domain-a, domain-b) pair."""
        a = self._fetch(self.items_a[int(rng.integers(0, len(self.items_a)))])
        b = self._fetch(self.items_b[int(rng.integers(0, len(self.items_b)))])
        if self.augment_samples:
            a = augment(a, rng, self.size)
            b = augment(b, rng, self.size)
        return a, b

    def iter_samples(self, seed: int, iterations: int, prefetch: bool = False):
        """Yield one sample pair per iteration, seeded by (seed, iteration).

        With ``prefetch=True`` a worker thread decodes ahead through a bounded
        queue; the sample stream is identical either way.
        """
        its = range(1, iterations + 1)
        if not prefetch:
            for it in its:
                yield self.sample(np.random.default_rng(np.random.SeedSequence((seed, it))))
            return

        q: queue.Queue = queue.Queue(maxsize=2)

        def worker():
            for it in its:
                q.put(self.sample(np.random.default_rng(np.random.SeedSequence((seed, it)))))
            q.put(None)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        while True:
            item = q.get()
            if item is None:
                break
            yield item
        thread.join()


def buffer_to_tensor(buf: ImageBuffer, dtype=np.float64):
    """(H, W, C) buffer to a (1, C, H, W) tensor."""
    from .tensor import Tensor

    return Tensor(np.moveaxis(buf.pixels, 2, 0)[None], dtype=dtype)


def tensor_to_buffer(t) -> ImageBuffer:
    """(1, C, H, W) tensor (values clipped to [0, 1]) to a buffer."""
    arr = t.data if hasattr(t, "data") else np.asarray(t)
    if arr.ndim != 4 or arr.shape[0] != 1:
        raise ValueError(f"expected a single (1, C, H, W) image tensor, got {arr.shape}")
    return ImageBuffer(np.clip(np.moveaxis(arr[0], 0, 2), 0.0, 1.0))
