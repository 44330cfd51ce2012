"""Signal-domain image metrics on [0, 1] channels-first images."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal

PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class SignalConstants:
    # SSIM
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    ssim_k1: float = 0.01
    ssim_k2: float = 0.03
    data_range: float = 1.0
    # VIF (pixel domain); noise variance is in 8-bit units
    vif_scales: int = 4
    vif_noise_var: float = 2.0
    vif_eps: float = 1e-10


CONSTANTS = SignalConstants()

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


class MetricWarning(UserWarning):
    pass


def as_chw(image) -> np.ndarray:
    """Float64 ``(C, H, W)`` view of a tensor or array; 2-D input gets one channel."""
    if hasattr(image, "detach"):
        image = image.detach().cpu().numpy()
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {arr.shape}")
    return arr


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x, y = as_chw(x), as_chw(y)
    if x.shape != y.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {y.shape}")
    return x, y


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    # window is symmetric, so correlation and convolution agree
    return signal.convolve2d(img, window, mode="valid")


def psnr(x, y, max_luminance: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    x, y = _pair(x, y)
    mse = np.mean((x - y) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(max_luminance ** 2 / mse)


def tabular_psnr(value: float) -> float:
    return PSNR_CAP_DB if math.isinf(value) else value


def ssim(x, y, constants: SignalConstants = CONSTANTS) -> float:
    """Mean local SSIM with a Gaussian window, averaged over channels."""
    x, y = _pair(x, y)
    size = constants.ssim_window
    if min(x.shape[1:]) < size:
        raise ValueError(f"image {x.shape[1:]} is smaller than the {size}x{size} SSIM window")
    win = gaussian_window(size, constants.ssim_sigma)
    c1 = (constants.ssim_k1 * constants.data_range) ** 2
    c2 = (constants.ssim_k2 * constants.data_range) ** 2
    values = []
    for xc, yc in zip(x, y):
        mx, my = _filter_valid(xc, win), _filter_valid(yc, win)
        sxx = _filter_valid(xc * xc, win) - mx * mx
        syy = _filter_valid(yc * yc, win) - my * my
        sxy = _filter_valid(xc * yc, win) - mx * my
        smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        values.append(smap.mean())
    return float(np.mean(values))


def total_variation(x) -> float:
    """Anisotropic TV summed over channels, divided by the pixel count ``H * W``."""
    x = as_chw(x)
    tv = np.abs(np.diff(x, axis=1)).sum() + np.abs(np.diff(x, axis=2)).sum()
    return float(tv / (x.shape[1] * x.shape[2]))


def laplacian_response(x) -> np.ndarray:
    x = as_chw(x)
    return np.stack([_filter_valid(c, LAPLACIAN) for c in x])


def scc(x, y) -> float:
    """Pearson correlation of the Laplacian responses, averaged over channels."""
    x, y = _pair(x, y)
    if min(x.shape[1:]) < 3:
        raise ValueError("SCC needs images of at least 3x3 pixels")
    rx, ry = laplacian_response(x), laplacian_response(y)
    values = []
    for a, b in zip(rx, ry):
        a = a.ravel() - a.mean()
        b = b.ravel() - b.mean()
        na, nb = np.sqrt((a * a).sum()), np.sqrt((b * b).sum())
        if na == 0 or nb == 0:
            raise ValueError("flat high-pass response")
        values.append((a * b).sum() / (na * nb))
    return float(np.mean(values))


def rase(x, y) -> float:
    """Relative average spectral error (percent), anchored on the reference ``x``."""
    x, y = _pair(x, y)
    mu = x.mean()
    if mu == 0:
        raise ValueError("RASE is undefined for a reference with zero mean")
    rmse_sq = ((x - y) ** 2).mean(axis=(1, 2))
    return float(100.0 / mu * math.sqrt(rmse_sq.mean()))


def _vif_channel(ref: np.ndarray, dist: np.ndarray, c: SignalConstants) -> tuple[float, int]:
    eps, nsq = c.vif_eps, c.vif_noise_var
    num = den = 0.0
    used = 0
    for scale in range(1, c.vif_scales + 1):
        n = 2 ** (c.vif_scales - scale + 1) + 1
        win = gaussian_window(n, n / 5.0)
        if scale > 1:
            if min(ref.shape) < n:
                break
            ref = _filter_valid(ref, win)[::2, ::2]
            dist = _filter_valid(dist, win)[::2, ::2]
        if min(ref.shape) < n:
            break
        mu1, mu2 = _filter_valid(ref, win), _filter_valid(dist, win)
        s1 = np.maximum(_filter_valid(ref * ref, win) - mu1 * mu1, 0.0)
        s2 = np.maximum(_filter_valid(dist * dist, win) - mu2 * mu2, 0.0)
        s12 = _filter_valid(ref * dist, win) - mu1 * mu2

        g = s12 / (s1 + eps)
        sv = s2 - g * s12
        flat1 = s1 < eps
        g[flat1] = 0.0
        sv[flat1] = s2[flat1]
        s1[flat1] = 0.0
        flat2 = s2 < eps
        g[flat2] = 0.0
        sv[flat2] = 0.0
        neg = g < 0
        sv[neg] = s2[neg]
        g[neg] = 0.0
        sv[sv <= eps] = eps

        num += np.log10(1.0 + g * g * s1 / (sv + nsq)).sum()
        den += np.log10(1.0 + s1 / nsq).sum()
        used += 1
    if used == 0:
        raise ValueError(f"image {ref.shape} is too small for any VIF scale")
    return (num / den if den > 0 else math.nan), used


def vif(x, y, constants: SignalConstants = CONSTANTS, return_scales: bool = False):
    """Pixel-domain visual information fidelity of ``y`` against reference ``x``.

    Images are rescaled to 8-bit range so the classic noise variance applies.
    Each channel's information ratio is computed separately and averaged. When
    the image is too small for every scale, the feasible ones are used and a
    :class:`MetricWarning` is issued.
    """
    x, y = _pair(x, y)
    ratios, used = [], constants.vif_scales
    for xc, yc in zip(x, y):
        r, used = _vif_channel(xc * 255.0, yc * 255.0, constants)
        ratios.append(r)
    if used < constants.vif_scales:
        warnings.warn(f"VIF computed over {used} of {constants.vif_scales} scales for image {x.shape[1:]}",
                      MetricWarning, stacklevel=2)
    value = float(np.mean(ratios))
    return (value, used) if return_scales else value
