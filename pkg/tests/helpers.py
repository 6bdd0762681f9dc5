"""Shared fixture generators: procedurally synthesized photo-like images."""

import numpy as np


def synth_photo(rng: np.random.Generator, size: int = 192) -> np.ndarray:
    """Photo-like test image: 1/f textured field plus sharp geometric shapes.

    Returns (size, size) grayscale values in [0, 1].
    """
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.rfftfreq(size)[None, :]
    freq = np.sqrt(fy ** 2 + fx ** 2)
    freq[0, 0] = 1.0
    spec = (rng.normal(size=freq.shape) + 1j * rng.normal(size=freq.shape)) / freq ** 1.2
    field = np.fft.irfft2(spec, s=(size, size))
    field = (field - field.min()) / (field.max() - field.min() + 1e-12)

    canvas = np.full((size, size), 0.5)
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(10):
        level = rng.uniform(0.05, 0.95)
        if rng.integers(0, 2) == 0:
            y0, x0 = rng.integers(0, max(size - 20, 1), 2)
            h, w = rng.integers(12, max(size // 2, 13), 2)
            canvas[y0:y0 + h, x0:x0 + w] = level
        else:
            cy, cx = rng.integers(20, size - 20, 2)
            r = rng.integers(8, max(size // 4, 9))
            canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = level
    return np.clip(0.6 * canvas + 0.4 * field, 0.0, 1.0)


def synth_photo_rgb(rng: np.random.Generator, size: int = 192) -> np.ndarray:
    """Photo-like RGB image: correlated channels around a gray base."""
    base = synth_photo(rng, size)
    tint = rng.uniform(-0.08, 0.08, size=3)
    img = np.stack([base + t for t in tint], axis=2)
    return np.clip(img, 0.0, 1.0)
