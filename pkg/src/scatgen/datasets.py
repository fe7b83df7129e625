"""IDX image ingestion and a deterministic synthetic digit corpus.

load_idx_images reads the classic big-endian IDX3 container used by the
MNIST distribution: u32 magic 0x00000803, u32 image count, u32 rows, u32
columns, then one unsigned byte per pixel in row-major order.  Pixels are
rescaled from [0, 255] to [0.0, 1.0].

synthesize_digits draws MNIST-like glyphs from a fixed bank of prototype
renderings: 64 handwriting styles per digit class, each style a distinct
combination of affine pose, stroke bowing, pen width, ink pressure, and
faint scanner-like interference, rasterized through a distance field so
the strokes are smooth and anti-aliased.  A sample picks one prototype,
the way a real handwriting corpus mixes a large but finite population of
writers.  This keeps the corpus on a finite set of cluster centers, so it
clusters the way scanned handwriting does,
while the style diversity spreads population variance across many hundreds
of covariance directions.  write_idx_images serializes any image stack
back to the same IDX3 layout, which makes the synthetic corpus a drop-in
stand-in when no dataset file is available.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError, ParameterError

IDX_IMAGE_MAGIC = 0x00000803


def load_idx_images(path: str) -> np.ndarray:
    """Read an IDX3 image file into a float array of shape (n, 1, rows, cols).

    Values are scaled to [0, 1].  A wrong magic number or a byte count that
    does not match the declared dimensions raises FormatError.
    """
    with open(path, "rb") as handle:
        blob = handle.read()
    if len(blob) < 16:
        raise FormatError(
            f"idx header truncated: expected 16 bytes, file has {len(blob)}"
        )
    magic, count, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"bad idx magic: expected {IDX_IMAGE_MAGIC:#010x}, got {magic:#010x}"
        )
    expected = 16 + count * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"idx payload size mismatch: expected {expected} bytes "
            f"for {count} images of {rows}x{cols}, file has {len(blob)}"
        )
    pixels = np.frombuffer(blob, dtype=np.uint8, offset=16)
    images = pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0
    return images


def write_idx_images(path: str, images: np.ndarray) -> None:
    """Serialize images to the IDX3 layout, writing atomically.

    Accepts (n, rows, cols) or (n, 1, rows, cols); float input in [0, 1] is
    quantized to bytes, uint8 input is written as-is.
    """
    array = np.asarray(images)
    if array.ndim == 4:
        if array.shape[1] != 1:
            raise ParameterError(
                f"idx files hold single-channel images, got {array.shape[1]} channels"
            )
        array = array[:, 0]
    if array.ndim != 3:
        raise ParameterError(f"expected (n, rows, cols) images, got shape {array.shape}")
    if array.dtype != np.uint8:
        array = np.clip(np.round(array * 255.0), 0, 255).astype(np.uint8)
    count, rows, cols = array.shape
    header = struct.pack(">IIII", IDX_IMAGE_MAGIC, count, rows, cols)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(header)
            handle.write(np.ascontiguousarray(array).tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def _arc(cx, cy, radius_x, radius_y, start_deg, end_deg, n=14):
    angles = np.linspace(math.radians(start_deg), math.radians(end_deg), n)
    return np.stack([cx + radius_x * np.cos(angles), cy + radius_y * np.sin(angles)], axis=1)


def _line(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y1]], dtype=np.float64)


def _glyph_strokes(digit: int):
    """Stroke skeletons per digit class, in a unit box with y pointing down."""
    if digit == 0:
        return [_arc(0.5, 0.5, 0.32, 0.42, 0, 360, 24)]
    if digit == 1:
        return [_line(0.35, 0.25, 0.55, 0.1), _line(0.55, 0.1, 0.55, 0.9)]
    if digit == 2:
        return [
            _arc(0.5, 0.3, 0.3, 0.22, 170, -10),
            _line(0.78, 0.34, 0.25, 0.88),
            _line(0.25, 0.88, 0.8, 0.88),
        ]
    if digit == 3:
        return [
            _arc(0.45, 0.3, 0.3, 0.2, 160, -40),
            _arc(0.45, 0.7, 0.33, 0.22, 220, 40, 16),
        ]
    if digit == 4:
        return [
            _line(0.65, 0.1, 0.2, 0.62),
            _line(0.2, 0.62, 0.85, 0.62),
            _line(0.65, 0.1, 0.65, 0.9),
        ]
    if digit == 5:
        return [
            _line(0.75, 0.12, 0.3, 0.12),
            _line(0.3, 0.12, 0.28, 0.45),
            _arc(0.5, 0.65, 0.28, 0.25, 190, -60, 16),
        ]
    if digit == 6:
        return [
            _arc(0.62, 0.28, 0.42, 0.55, 235, 180, 12),
            _arc(0.5, 0.68, 0.26, 0.22, 0, 360, 20),
        ]
    if digit == 7:
        return [_line(0.22, 0.12, 0.8, 0.12), _line(0.8, 0.12, 0.42, 0.9)]
    if digit == 8:
        return [
            _arc(0.5, 0.3, 0.24, 0.19, 0, 360, 18),
            _arc(0.5, 0.69, 0.29, 0.22, 0, 360, 18),
        ]
    if digit == 9:
        return [
            _arc(0.48, 0.32, 0.26, 0.22, 0, 360, 20),
            _arc(0.4, 0.65, 0.42, 0.52, -60, 20, 10),
        ]
    raise ParameterError(f"digit class must be in [0, 9], got {digit}")


def _segment_distances(points: np.ndarray, starts: np.ndarray, ends: np.ndarray):
    """Distance from each point to the nearest of the given segments."""
    delta = ends - starts
    lengths_sq = np.maximum((delta * delta).sum(axis=1), 1e-12)
    offsets = points[:, None, :] - starts[None, :, :]
    t = (offsets * delta[None, :, :]).sum(axis=2) / lengths_sq[None, :]
    t = np.clip(t, 0.0, 1.0)
    nearest = starts[None, :, :] + t[:, :, None] * delta[None, :, :]
    gaps = points[:, None, :] - nearest
    return np.sqrt((gaps * gaps).sum(axis=2)).min(axis=1)


def _rasterize(strokes, size: int, radii, intensities) -> np.ndarray:
    """Render strokes as a soft distance field; each stroke carries its own
    radius and ink intensity, combined by maximum where strokes overlap."""
    margin = 0.15 * size
    scale = size - 2 * margin
    ys, xs = np.mgrid[0:size, 0:size]
    points = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1).astype(np.float64)
    canvas = np.zeros((size, size), dtype=np.float64)
    for poly, radius, intensity in zip(strokes, radii, intensities):
        starts = poly[:-1] * scale + margin
        ends = poly[1:] * scale + margin
        distance = _segment_distances(points, starts, ends).reshape(size, size)
        layer = intensity * np.clip(1.0 - (distance - radius) / 1.0, 0.0, 1.0)
        np.maximum(canvas, layer, out=canvas)
    return canvas


def _intensity_ramp(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth per-sample ink-intensity gradient, like uneven pen pressure."""
    direction = rng.uniform(-1.0, 1.0, size=2)
    base = rng.uniform(0.78, 1.0)
    coords = (np.arange(size) - size / 2.0) / size
    ramp = base + 0.35 * (direction[0] * coords[None, :] + direction[1] * coords[:, None])
    return np.clip(ramp, 0.5, 1.1)


def _ripple_field(rng: np.random.Generator, size: int, frequency: float) -> np.ndarray:
    """Sinusoidal interference pattern with random phase and angle.

    The continuous frequency sweep across the style bank covers a whole
    family of Fourier modes, so the population covariance keeps many small
    but structured eigendirections instead of cutting off sharply.
    """
    angle = rng.uniform(0.0, math.pi)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    coords = np.arange(size, dtype=np.float64)
    axis = (coords[None, :] * math.cos(angle) + coords[:, None] * math.sin(angle))
    return np.sin(2.0 * math.pi * frequency * axis + phase)


def _bow_stroke(rng: np.random.Generator, poly: np.ndarray) -> np.ndarray:
    """Bend a polyline along its normals with a half-sine profile.

    One amplitude and one lateral offset pair per stroke: a smooth,
    handwriting-like deformation that keeps the corpus on a
    low-dimensional manifold, unlike independent per-point jitter.
    """
    n = poly.shape[0]
    if n < 2:
        return poly
    tangents = np.gradient(poly, axis=0)
    lengths = np.maximum(np.hypot(tangents[:, 0], tangents[:, 1]), 1e-9)
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1) / lengths[:, None]
    profile = np.sin(np.pi * np.linspace(0.0, 1.0, n))
    bow = rng.normal(0.0, 0.03)
    offset = rng.normal(0.0, 0.012, size=2)
    return poly + bow * profile[:, None] * normals + offset


STYLES_PER_DIGIT = 64

_STYLE_PARAMS = 8


def _style_strata(corpus_seed: int, digit: int) -> np.ndarray:
    """Per-class Latin hypercube over the style axes.

    Each of the 8 stratified style parameters gets its own permutation of
    the 64 strata, so no two styles of a class share a stratum on any axis.
    This keeps prototypes evenly spread over the style box instead of
    letting independent draws produce near-duplicate styles.
    """
    rng = np.random.default_rng(np.random.SeedSequence([corpus_seed, digit, 1789]))
    return np.stack([rng.permutation(STYLES_PER_DIGIT) for _ in range(_STYLE_PARAMS)])


def _render_prototype(corpus_seed: int, mode: int, size: int) -> np.ndarray:
    """Render one prototype glyph for the style bank.

    Each prototype owns a child generator keyed by (corpus seed, mode), so
    a prototype's pixels depend only on those two numbers, never on how
    many samples were drawn before it.  The rendering is normalized to a
    common mean ink level, which keeps prototype energies comparable.
    """
    digit = mode % 10
    style = mode // 10
    strata = _style_strata(corpus_seed, digit)
    rng = np.random.default_rng(np.random.SeedSequence([corpus_seed, mode]))

    def stratified(param: int, lo: float, hi: float) -> float:
        cell = (strata[param, style] + rng.uniform(0.05, 0.95)) / STYLES_PER_DIGIT
        return lo + (hi - lo) * cell

    angle = stratified(0, -0.18, 0.18)
    scale = stratified(1, 0.85, 1.1)
    shear = stratified(2, -0.12, 0.12)
    base_radius = stratified(3, 0.55, 0.8) * size / 28.0
    shift = rng.uniform(-0.03, 0.03, size=2)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    transform = np.array(
        [[cos_a, -sin_a], [sin_a, cos_a]]
    ) @ np.array([[scale, shear * scale], [0.0, scale]])
    strokes, radii, intensities = [], [], []
    for poly in _glyph_strokes(digit):
        centered = poly - 0.5
        placed = centered @ transform.T + 0.5 + shift
        strokes.append(_bow_stroke(rng, placed))
        radii.append(base_radius * rng.uniform(0.8, 1.25))
        intensities.append(rng.uniform(0.82, 1.0))
    glyph = _rasterize(strokes, size, radii, intensities)
    glyph *= _intensity_ramp(rng, size)
    # faint interference: multiplicative shimmer on the ink plus an
    # additive global pattern, both smooth functions of a few factors
    shimmer = stratified(4, 0.02, 0.07)
    glyph *= 1.0 + shimmer * _ripple_field(rng, size, stratified(5, 0.08, 0.24))
    floor = stratified(6, 0.008, 0.028)
    field = floor * 0.5 * (1.0 + _ripple_field(rng, size, stratified(7, 0.04, 0.18)))
    image = glyph + field
    # equalize ink energy across the bank so no prototype dominates
    image *= np.clip(0.115 / max(image.mean(), 1e-6), 0.8, 1.3)
    return np.clip(image, 0.0, 1.0)


def synthesize_digits(count: int, seed: int = 0, size: int = 28):
    """Generate a deterministic MNIST-like corpus.

    Returns (images, labels) with images of shape (count, 1, size, size) in
    [0, 1] and labels cycling through the ten digit classes.  Each sample
    picks one of the 64 prototype styles for its class, so samples cluster
    by writing style the way scans of a finite writer population do.
    Prototypes are rendered lazily and memoized, which keeps small corpora
    cheap; the same seed reproduces the corpus exactly at any count.
    """
    if count < 1:
        raise ParameterError(f"count must be positive, got {count}")
    if size < 8:
        raise ParameterError(f"size must be at least 8, got {size}")
    rng = np.random.default_rng(seed)
    bank: dict = {}
    images = np.empty((count, 1, size, size), dtype=np.float64)
    labels = np.empty(count, dtype=np.int64)
    for index in range(count):
        digit = index % 10
        labels[index] = digit
        style = int(rng.integers(0, STYLES_PER_DIGIT))
        mode = style * 10 + digit
        if mode not in bank:
            bank[mode] = _render_prototype(seed, mode, size)
        images[index, 0] = bank[mode]
    return images, labels


def ensure_dataset(path: str, count: int, seed: int = 0, size: int = 28) -> str:
    """Create a synthetic IDX dataset at ``path`` if it does not exist yet."""
    if not os.path.exists(path):
        images, _ = synthesize_digits(count, seed=seed, size=size)
        write_idx_images(path, images)
    return path
