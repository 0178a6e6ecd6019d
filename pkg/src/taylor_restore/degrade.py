"""Synthetic degradation: rain streaks, blur + noise, and corpus files.

Rain adds a non-negative field of oriented line segments with Gaussian
cross-section to every channel; blur convolves with a normalized kernel
(replicate-edge padding, correlation orientation) and adds Gaussian noise.
In both cases the additive part is kept pre-clamp as the sample's residual,
so  degraded == clamp(base + residual, 0, 1)  reconstructs by construction
and exactly equals base + residual wherever no clamping occurred.

Every sample is generated from its own seed,
derive_stream(spec.seed, sample_index), so corpus content depends only on
(spec, index) -- never on generation order. Per-streak draws happen in a
fixed documented order: center x, center y, length, angle, intensity.
Angles are degrees; 0 points along +x (columns), 90 along +y (rows).

A corpus directory holds clean_%06d.ppm / degraded_%06d.ppm pairs plus
manifest.tsv (index, files, kind, per-sample seed, then the DegradationSpec
parameters as provenance columns). Clean inputs are quantized to the 8-bit
grid before degradation so the pair on disk is exactly degrade(clean).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor
from .errors import FormatError
from .ppm import write_ppm
from .prng import SplitMix64, derive_stream

KIND_RAIN = "rain"
KIND_BLUR = "blur"
KINDS = (KIND_RAIN, KIND_BLUR)

KERNEL_BOX = "box"
KERNEL_GAUSSIAN = "gaussian"
KERNEL_LINEAR_MOTION = "linear_motion"
KERNEL_KINDS = (KERNEL_BOX, KERNEL_GAUSSIAN, KERNEL_LINEAR_MOTION)

_CLEAN_STREAM_TAG = 0x636C65616E  # distinct child-stream family for clean images


@dataclass(frozen=True)
class RainParams:
    count_min: int = 4
    count_max: int = 10
    length_min: float = 8.0
    length_max: float = 20.0
    angle_min: float = 70.0
    angle_max: float = 110.0
    intensity_min: float = 0.15
    intensity_max: float = 0.6
    streak_sigma: float = 0.7

    def __post_init__(self):
        if self.count_min < 0 or self.count_max < self.count_min:
            raise ValueError(
                f"streak count range [{self.count_min}, {self.count_max}] is invalid"
            )
        if self.intensity_min < 0:
            raise ValueError(f"intensity must be >= 0, got {self.intensity_min}")
        if self.streak_sigma <= 0:
            raise ValueError(f"streak sigma must be positive, got {self.streak_sigma}")


@dataclass(frozen=True)
class BlurParams:
    kernel_kind: str = KERNEL_GAUSSIAN
    kernel_size: int = 9
    sigma: float = 1.5
    motion_length: float = 7.0
    motion_angle: float = 0.0
    noise_sigma: float = 0.01

    def __post_init__(self):
        if self.kernel_kind not in KERNEL_KINDS:
            raise ValueError(f"kernel kind must be one of {KERNEL_KINDS}, got {self.kernel_kind!r}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.noise_sigma}")


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = KIND_RAIN
    seed: int = 0
    rain: RainParams | None = None
    blur: BlurParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == KIND_RAIN and self.rain is None:
            object.__setattr__(self, "rain", RainParams())
        if self.kind == KIND_BLUR and self.blur is None:
            object.__setattr__(self, "blur", BlurParams())


@dataclass
class DegradationSample:
    clean: Tensor
    degraded: Tensor
    residual: Tensor  # additive part, recorded before clamping
    seed: int


def _streak_field(height: int, width: int, params: RainParams, rng: SplitMix64) -> np.ndarray:
    field = np.zeros((height, width))
    span = params.count_max - params.count_min + 1
    count = params.count_min + rng.randint(span)
    two_sigma_sq = 2.0 * params.streak_sigma * params.streak_sigma
    margin = 3.0 * params.streak_sigma + 1.0
    for _ in range(count):
        cx = rng.uniform(0.0, float(width))
        cy = rng.uniform(0.0, float(height))
        length = rng.uniform(params.length_min, params.length_max)
        angle = np.deg2rad(rng.uniform(params.angle_min, params.angle_max))
        intensity = rng.uniform(params.intensity_min, params.intensity_max)
        half = length / 2.0
        dx, dy = np.cos(angle) * half, np.sin(angle) * half
        ax, ay, bx, by = cx - dx, cy - dy, cx + dx, cy + dy
        x0 = max(int(np.floor(min(ax, bx) - margin)), 0)
        x1 = min(int(np.ceil(max(ax, bx) + margin)) + 1, width)
        y0 = max(int(np.floor(min(ay, by) - margin)), 0)
        y1 = min(int(np.ceil(max(ay, by) + margin)) + 1, height)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        seg_x, seg_y = bx - ax, by - ay
        seg_len_sq = seg_x * seg_x + seg_y * seg_y
        rel_x, rel_y = xs - ax, ys - ay
        if seg_len_sq > 0.0:
            t = np.clip((rel_x * seg_x + rel_y * seg_y) / seg_len_sq, 0.0, 1.0)
        else:
            t = np.zeros_like(rel_x)
        dist_x = rel_x - t * seg_x
        dist_y = rel_y - t * seg_y
        dist_sq = dist_x * dist_x + dist_y * dist_y
        field[y0:y1, x0:x1] += intensity * np.exp(-dist_sq / two_sigma_sq)
    return field


def synth_rain(clean: Tensor, spec: DegradationSpec) -> DegradationSample:
    """Add an oriented-streak field; residual is the field itself (>= 0)."""
    if spec.kind != KIND_RAIN:
        raise ValueError(f"synth_rain needs kind={KIND_RAIN!r}, got {spec.kind!r}")
    channels, height, width = clean.shape
    rng = SplitMix64(spec.seed)
    field = _streak_field(height, width, spec.rain, rng)
    residual = np.broadcast_to(field, (channels, height, width)).copy()
    degraded = np.clip(clean.data + residual, 0.0, 1.0)
    return DegradationSample(clean=clean, degraded=Tensor(degraded),
                             residual=Tensor(residual), seed=spec.seed)


def make_blur_kernel(params: BlurParams) -> Tensor:
    """Normalized 2-D kernel: box, Gaussian, or anti-aliased linear motion.

    Degenerate limits collapse to a delta kernel explicitly: Gaussian sigma
    below half a pixel, and motion length <= 1.
    """
    size = params.kernel_size
    if size < 1 or size % 2 != 1:
        raise ValueError(f"kernel size must be odd and positive, got {size}")
    center = (size - 1) // 2
    if params.kernel_kind == KERNEL_BOX:
        kernel = np.full((size, size), 1.0 / (size * size))
        return Tensor(kernel)
    if params.kernel_kind == KERNEL_GAUSSIAN:
        if params.sigma < 0.5:
            kernel = np.zeros((size, size))
            kernel[center, center] = 1.0
            return Tensor(kernel)
        coords = np.arange(size) - center
        grid = coords[:, None] ** 2 + coords[None, :] ** 2
        kernel = np.exp(-grid / (2.0 * params.sigma * params.sigma))
        return Tensor(kernel / kernel.sum())
    # linear motion
    length = params.motion_length
    if length <= 1.0:
        kernel = np.zeros((size, size))
        kernel[center, center] = 1.0
        return Tensor(kernel)
    if length > size:
        raise ValueError(f"motion length {length} exceeds kernel size {size}")
    angle = np.deg2rad(params.motion_angle)
    half = (length - 1.0) / 2.0
    ax, ay = center - half * np.cos(angle), center - half * np.sin(angle)
    bx, by = center + half * np.cos(angle), center + half * np.sin(angle)
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    seg_x, seg_y = bx - ax, by - ay
    seg_len_sq = seg_x * seg_x + seg_y * seg_y
    rel_x, rel_y = xs - ax, ys - ay
    t = np.clip((rel_x * seg_x + rel_y * seg_y) / seg_len_sq, 0.0, 1.0)
    dist = np.hypot(rel_x - t * seg_x, rel_y - t * seg_y)
    kernel = np.maximum(0.0, 1.0 - dist)  # one-pixel tent cross-section
    return Tensor(kernel / kernel.sum())


def _correlate_replicate(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 'same' correlation with replicate-edge padding."""
    radius = kernel.shape[0] // 2
    if radius:
        padded = np.pad(image, ((0, 0), (radius, radius), (radius, radius)), mode="edge")
    else:
        padded = image
    windows = sliding_window_view(padded, kernel.shape, axis=(1, 2))
    return np.tensordot(windows, kernel, axes=([3, 4], [0, 1]))


def synth_blur(clean: Tensor, spec: DegradationSpec) -> DegradationSample:
    """Blur with the configured kernel, add Gaussian noise; residual is the noise."""
    if spec.kind != KIND_BLUR:
        raise ValueError(f"synth_blur needs kind={KIND_BLUR!r}, got {spec.kind!r}")
    channels, height, width = clean.shape
    kernel = make_blur_kernel(spec.blur)
    blurred = _correlate_replicate(clean.data, kernel.data)
    rng = SplitMix64(spec.seed)
    noise = spec.blur.noise_sigma * rng.gaussians(channels * height * width).reshape(
        channels, height, width
    )
    degraded = np.clip(blurred + noise, 0.0, 1.0)
    return DegradationSample(clean=clean, degraded=Tensor(degraded),
                             residual=Tensor(noise), seed=spec.seed)


def synthesize_sample(clean: Tensor, spec: DegradationSpec) -> DegradationSample:
    if spec.kind == KIND_RAIN:
        return synth_rain(clean, spec)
    return synth_blur(clean, spec)


def generate_clean(height: int, width: int, seed: int) -> Tensor:
    """Procedural clean image: three octaves of bilinear value noise,
    min-max normalized into [0.05, 0.95]."""
    rng = SplitMix64(seed)
    image = np.zeros((3, height, width))
    for grid_size, amplitude in ((4, 1.0), (8, 0.5), (16, 0.25)):
        coarse = rng.uniforms(3 * grid_size * grid_size).reshape(3, grid_size, grid_size)
        image += amplitude * _bilinear_upsample(coarse, height, width)
    lo, hi = image.min(), image.max()
    if hi > lo:
        image = (image - lo) / (hi - lo) * 0.9 + 0.05
    else:
        image = np.full_like(image, 0.5)
    return Tensor(image)


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    grid = coarse.shape[1]
    ys = np.linspace(0.0, grid - 1.0, height)
    xs = np.linspace(0.0, grid - 1.0, width)
    y0 = np.minimum(ys.astype(int), grid - 2) if grid > 1 else np.zeros(height, int)
    x0 = np.minimum(xs.astype(int), grid - 2) if grid > 1 else np.zeros(width, int)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    v00 = coarse[:, y0][:, :, x0]
    v01 = coarse[:, y0][:, :, x0 + 1] if grid > 1 else v00
    v10 = coarse[:, y0 + 1][:, :, x0] if grid > 1 else v00
    v11 = coarse[:, y0 + 1][:, :, x0 + 1] if grid > 1 else v00
    top = v00 * (1.0 - fx) + v01 * fx
    bottom = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bottom * fy


def corpus_clean_seed(seed: int, index: int) -> int:
    """Seed for the index-th procedural clean image of a corpus."""
    return derive_stream(derive_stream(seed, _CLEAN_STREAM_TAG), index)


@dataclass
class ManifestEntry:
    index: int
    clean_file: str
    degraded_file: str
    kind: str
    seed: int


def _spec_columns(spec: DegradationSpec) -> tuple[list[str], list[str]]:
    if spec.kind == KIND_RAIN:
        p = spec.rain
        return (
            ["count_min", "count_max", "length_min", "length_max", "angle_min",
             "angle_max", "intensity_min", "intensity_max", "streak_sigma"],
            [str(p.count_min), str(p.count_max), repr(p.length_min), repr(p.length_max),
             repr(p.angle_min), repr(p.angle_max), repr(p.intensity_min),
             repr(p.intensity_max), repr(p.streak_sigma)],
        )
    p = spec.blur
    return (
        ["kernel_kind", "kernel_size", "sigma", "motion_length", "motion_angle",
         "noise_sigma"],
        [p.kernel_kind, str(p.kernel_size), repr(p.sigma), repr(p.motion_length),
         repr(p.motion_angle), repr(p.noise_sigma)],
    )


def _quantize_to_grid(image: Tensor) -> Tensor:
    return Tensor(np.floor(np.clip(image.data, 0.0, 1.0) * 255.0 + 0.5) / 255.0)


def make_corpus(cleans: list[Tensor], spec: DegradationSpec, count: int,
                out_dir: str | Path) -> Path:
    """Write `count` degraded pairs and a manifest; returns the directory.

    Sample i uses clean image cleans[i % len(cleans)] (snapped to the 8-bit
    grid first) and per-sample seed derive_stream(spec.seed, i).
    """
    if count < 1:
        raise ValueError(f"corpus count must be >= 1, got {count}")
    if not cleans:
        raise ValueError("make_corpus needs at least one clean image")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    param_names, param_values = _spec_columns(spec)
    lines = ["\t".join(["index", "clean", "degraded", "kind", "seed"] + param_names)]
    for index in range(count):
        sample_seed = derive_stream(spec.seed, index)
        clean = _quantize_to_grid(cleans[index % len(cleans)])
        sample = synthesize_sample(clean, replace(spec, seed=sample_seed))
        clean_name = f"clean_{index:06d}.ppm"
        degraded_name = f"degraded_{index:06d}.ppm"
        write_ppm(sample.clean, out_dir / clean_name)
        write_ppm(sample.degraded, out_dir / degraded_name)
        lines.append("\t".join(
            [str(index), clean_name, degraded_name, spec.kind, str(sample_seed)]
            + param_values
        ))
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="ascii")
    return out_dir


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: manifest not found") from exc
    lines = [line for line in text.splitlines() if line]
    if not lines:
        raise FormatError(f"{path}: empty manifest")
    header = lines[0].split("\t")
    if header[:5] != ["index", "clean", "degraded", "kind", "seed"]:
        raise FormatError(f"{path}: unrecognized manifest header")
    entries = []
    for line_no, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise FormatError(f"{path}:{line_no}: expected {len(header)} fields")
        try:
            entries.append(ManifestEntry(
                index=int(fields[0]), clean_file=fields[1], degraded_file=fields[2],
                kind=fields[3], seed=int(fields[4]),
            ))
        except ValueError as exc:
            raise FormatError(f"{path}:{line_no}: bad numeric field") from exc
    return entries
