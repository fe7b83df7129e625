"""Translation-averaged wavelet scattering coefficients of images.

Order 0 is the image blurred by a Gaussian low-pass and subsampled.
Order 1 applies one complex Morlet wavelet, takes the modulus, then
blurs and subsamples.  Order 2 applies a second wavelet at a strictly
coarser scale before the final blur.  All convolutions are circular
(periodic boundary), carried out at full resolution; subsampling by
2^J happens only after the final averaging.

Filters follow the standard scattering construction: an oriented
Gabor with center frequency 3pi/4 / 2^j, Gaussian envelope bandwidth
sigma = 0.8 * 2^j, slant 0.5 for angular selectivity, with a scaled
envelope subtracted so each wavelet has exactly zero mean, and all
filters periodized onto the image grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor

XI0 = 3.0 * np.pi / 4.0   # center frequency at scale j = 0
SIGMA0 = 0.8              # envelope bandwidth at scale j = 0
SLANT = 0.5               # envelope aspect ratio across the oscillation


@dataclass(frozen=True)
class ScatteringConfig:
    """Geometry of the transform: scales, orientations, image shape."""

    J: int = 2
    L: int = 8
    image_height: int = 28
    image_width: int = 28
    channels: int = 1

    def __post_init__(self):
        if self.J < 1:
            raise ParameterError(f"J must be >= 1, got {self.J}")
        if self.L < 1:
            raise ParameterError(f"L must be >= 1, got {self.L}")
        if self.channels not in (1, 3):
            raise ParameterError(f"channels must be 1 or 3, got {self.channels}")
        block = 2 ** self.J
        if self.image_height % block or self.image_width % block:
            raise ParameterError(
                f"2^J = {block} must divide image size "
                f"{self.image_height}x{self.image_width}"
            )

    @property
    def output_height(self) -> int:
        return self.image_height // 2 ** self.J

    @property
    def output_width(self) -> int:
        return self.image_width // 2 ** self.J


@dataclass(frozen=True)
class ScatteringPath:
    """One coefficient channel: the (scale, orientation) sequence."""

    order: int
    j1: int = -1
    l1: int = -1
    j2: int = -1
    l2: int = -1

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ParameterError(f"path order must be 0, 1 or 2, got {self.order}")
        if self.order == 2 and not self.j2 > self.j1:
            raise ParameterError(f"order-2 path needs j2 > j1, got j1={self.j1}, j2={self.j2}")


@dataclass(frozen=True)
class FilterBank:
    """Spatial-domain filters: psi[j][l] complex Morlets, phi real low-pass."""

    psi: tuple  # psi[j][l]: complex (H, W) array
    phi: np.ndarray
    config: ScatteringConfig = field(compare=False)


def _gabor_2d(height: int, width: int, sigma: float, theta: float, xi: float,
              slant: float = 1.0) -> np.ndarray:
    """Oriented Gabor periodized onto the [0,H)x[0,W) grid, peak at (0,0)."""
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    diag = np.array([[1.0, 0.0], [0.0, slant * slant]])
    curv = rot @ diag @ rot.T / (2.0 * sigma * sigma)
    gab = np.zeros((height, width), dtype=np.complex128)
    for ex in (-2, -1, 0, 1, 2):
        for ey in (-2, -1, 0, 1, 2):
            xx, yy = np.mgrid[ex * height:(ex + 1) * height, ey * width:(ey + 1) * width]
            arg = -(curv[0, 0] * xx * xx + (curv[0, 1] + curv[1, 0]) * xx * yy
                    + curv[1, 1] * yy * yy) \
                + 1j * xi * (xx * np.cos(theta) + yy * np.sin(theta))
            gab += np.exp(arg)
    gab /= 2.0 * np.pi * sigma * sigma / slant
    return gab


def _morlet_2d(height: int, width: int, sigma: float, theta: float, xi: float,
               slant: float) -> np.ndarray:
    """Gabor minus a scaled envelope, so the filter has exactly zero mean."""
    wave = _gabor_2d(height, width, sigma, theta, xi, slant)
    envelope = _gabor_2d(height, width, sigma, theta, 0.0, slant)
    k = np.sum(wave) / np.sum(envelope)
    return wave - k * envelope


def build_filter_bank(config: ScatteringConfig) -> FilterBank:
    """Morlet wavelets at J scales and L orientations plus the low-pass.

    Orientation l points along theta = l * pi / L; scale j has bandwidth
    0.8 * 2^j and center frequency 3pi/4 / 2^j.  The low-pass is a unit-sum
    Gaussian at bandwidth 0.8 * 2^J.
    """
    height, width = config.image_height, config.image_width
    psi = []
    for j in range(config.J):
        row = []
        for l in range(config.L):
            theta = l * np.pi / config.L
            row.append(_morlet_2d(height, width, SIGMA0 * 2 ** j, theta,
                                  XI0 / 2 ** j, SLANT))
        psi.append(tuple(row))
    phi = _gabor_2d(height, width, SIGMA0 * 2 ** config.J, 0.0, 0.0).real
    phi /= phi.sum()
    return FilterBank(psi=tuple(psi), phi=phi, config=config)


def enumerate_paths(config: ScatteringConfig) -> list[ScatteringPath]:
    """All paths in canonical order: order 0, then 1 by (j1, l1), then 2."""
    paths = [ScatteringPath(order=0)]
    for j1 in range(config.J):
        for l1 in range(config.L):
            paths.append(ScatteringPath(order=1, j1=j1, l1=l1))
    for j1 in range(config.J):
        for l1 in range(config.L):
            for j2 in range(j1 + 1, config.J):
                for l2 in range(config.L):
                    paths.append(ScatteringPath(order=2, j1=j1, l1=l1, j2=j2, l2=l2))
    return paths


def path_count(config: ScatteringConfig) -> int:
    j, l = config.J, config.L
    return 1 + j * l + l * l * j * (j - 1) // 2


@dataclass
class ScatteringOutput:
    """Coefficient volume (B x channels*P x h x w) plus its path layout.

    The channel axis is ordered image-channel-major: entry c*P + p holds
    path ``path_index[p]`` of image channel c.
    """

    coefficients: Tensor
    path_index: list[ScatteringPath]


def _direct_circular_conv(images: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Spatial-domain periodic convolution of a stack with one filter.

    out[b, i, j] = sum_{u,v} images[b, u, v] * filt[(i-u) % H, (j-v) % W]
    evaluated as an explicit sum over a circulant copy of the filter.
    """
    h, w = images.shape[-2:]
    ii = (np.arange(h)[:, None] - np.arange(h)[None, :]) % h
    jj = (np.arange(w)[:, None] - np.arange(w)[None, :]) % w
    circulant = filt[ii[:, None, :, None], jj[None, :, None, :]]
    return np.einsum("buv,ijuv->bij", images, circulant)


class _Convolver:
    """Periodic convolution engine for one image shape, fft or direct."""

    def __init__(self, method: str):
        if method not in ("fft", "direct"):
            raise ParameterError(f"method must be 'fft' or 'direct', got {method!r}")
        self.method = method

    def convolve(self, images: np.ndarray, filt: np.ndarray) -> np.ndarray:
        """images: (B, H, W) real or complex; filt: (H, W)."""
        if self.method == "direct":
            return _direct_circular_conv(images, filt)
        return np.fft.ifft2(np.fft.fft2(images) * np.fft.fft2(filt))


def scatter(images, bank: FilterBank, config: ScatteringConfig | None = None,
            method: str = "fft", chunk_size: int = 512) -> ScatteringOutput:
    """Scattering coefficients of a batch of images.

    ``images`` is (B, channels, H, W) with pixel values in [0, 1].  The
    fft method and the direct spatial sum agree to high precision; fft
    is the default for speed.
    """
    if config is None:
        config = bank.config
    data = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
    if data.ndim != 4:
        raise DimensionError(f"scatter expects (B, C, H, W) input, got shape {data.shape}")
    batch, channels, height, width = data.shape
    if (channels, height, width) != (config.channels, config.image_height, config.image_width):
        raise DimensionError(
            f"input {channels}x{height}x{width} does not match config "
            f"{config.channels}x{config.image_height}x{config.image_width}"
        )
    if data.size and (data.min() < -1e-6 or data.max() > 1.0 + 1e-6):
        raise ParameterError(
            f"pixel values must lie in [0, 1], got range "
            f"[{data.min():.4g}, {data.max():.4g}]"
        )

    paths = enumerate_paths(config)
    n_paths = len(paths)
    step = 2 ** config.J
    out_h, out_w = config.output_height, config.output_width
    conv = _Convolver(method)
    phi = bank.phi
    coeffs = np.empty((batch, channels * n_paths, out_h, out_w), dtype=np.float64)

    order1_index = {(p.j1, p.l1): i for i, p in enumerate(paths) if p.order == 1}
    order2_index = {(p.j1, p.l1, p.j2, p.l2): i for i, p in enumerate(paths) if p.order == 2}

    def lowpass_subsample(stack: np.ndarray) -> np.ndarray:
        smoothed = conv.convolve(stack, phi)
        return smoothed.real[:, ::step, ::step]

    for c in range(channels):
        base = c * n_paths
        for start in range(0, batch, chunk_size):
            sl = slice(start, min(start + chunk_size, batch))
            x = data[sl, c]
            coeffs[sl, base + 0] = lowpass_subsample(x)
            for j1 in range(config.J):
                for l1 in range(config.L):
                    u1 = np.abs(conv.convolve(x, bank.psi[j1][l1]))
                    coeffs[sl, base + order1_index[(j1, l1)]] = lowpass_subsample(u1)
                    for j2 in range(j1 + 1, config.J):
                        for l2 in range(config.L):
                            u2 = np.abs(conv.convolve(u1, bank.psi[j2][l2]))
                            coeffs[sl, base + order2_index[(j1, l1, j2, l2)]] = \
                                lowpass_subsample(u2)

    return ScatteringOutput(coefficients=Tensor(coeffs), path_index=paths)


def flatten_coefficients(out: ScatteringOutput) -> Tensor:
    """Row-major flattening of the coefficient volume to (B, D).

    D = channels * P * h * w; within a row, the channel axis varies
    slowest and the spatial column fastest, so position
    ((c * P + p) * h + y) * w + x holds path p of channel c at (y, x).
    """
    data = out.coefficients.data
    return Tensor(data.reshape(data.shape[0], -1))
