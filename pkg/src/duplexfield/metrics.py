"""Image-quality metrics for evaluation tables (PSNR, SSIM)."""

from dataclasses import dataclass

import numpy as np

PSNR_CAP = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class ImageF:
    """Float RGB image; values are clamped to [0, 1] on construction."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError("expected an H x W x 3 image")
        if not np.all(np.isfinite(d)):
            raise ValueError("image values must be finite")
        object.__setattr__(self, "data", np.clip(d, 0.0, 1.0))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def _as_array(img) -> np.ndarray:
    if isinstance(img, ImageF):
        return img.data
    return ImageF(np.asarray(img)).data


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB with peak 1.0, capped at 99."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window() -> np.ndarray:
    half = (SSIM_WINDOW - 1) / 2.0
    t = np.arange(SSIM_WINDOW) - half
    g = np.exp(-(t**2) / (2.0 * SSIM_SIGMA**2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(ch: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(ch, win.shape)
    return np.einsum("hwij,ij->hw", view, win)


def ssim(a, b) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
    aggregated over the valid (no-padding) region, averaged over channels."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape[0], x.shape[1]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels per side")
    win = _gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    vals = []
    for ch in range(3):
        cx, cy = x[:, :, ch], y[:, :, ch]
        mx = _windowed_mean(cx, win)
        my = _windowed_mean(cy, win)
        mxx = _windowed_mean(cx * cx, win)
        myy = _windowed_mean(cy * cy, win)
        mxy = _windowed_mean(cx * cy, win)
        vx = mxx - mx * mx
        vy = myy - my * my
        cov = mxy - mx * my
        num = (2.0 * mx * my + c1) * (2.0 * cov + c2)
        den = (mx * mx + my * my + c1) * (vx + vy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))
