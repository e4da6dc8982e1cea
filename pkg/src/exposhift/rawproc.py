"""Raw Bayer frames, the portable .cidraw container, and reference color.

The container keeps one mosaicked capture together with the Exif fields the
enhancement networks condition on.  Layout, little-endian throughout:

    magic "CIDR" | version u16=1 | width u32 | height u32 | cfa u8=0 (RGGB)
    | reserved u8=0 | black_level u16 | white_level u16 | iso f32
    | exposure_time f32 (s) | wb_gains 4*f32 (r,g,b,g2) | aperture f32
    | width*height u16 counts, row-major

Header is 48 bytes; total file size 48 + 2*width*height.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

__all__ = [
    "FormatError",
    "ExifMeta",
    "RawFrame",
    "CIDRAW_MAGIC",
    "CIDRAW_VERSION",
    "CIDRAW_HEADER_SIZE",
    "read_cidraw",
    "write_cidraw",
    "pack_bayer",
    "raw_to_rgb_reference",
    "rgb_to_gray",
    "brightness",
    "resize_nearest",
    "write_ppm",
]

CIDRAW_MAGIC = b"CIDR"
CIDRAW_VERSION = 1
_HEADER = struct.Struct("<4sHIIBBHHfffffff")
CIDRAW_HEADER_SIZE = _HEADER.size  # 48

GAMMA = 1.0 / 2.2


class FormatError(ValueError):
    """Malformed container bytes or field values."""


@dataclass(frozen=True)
class ExifMeta:
    """Capture parameters stored alongside the mosaic."""

    iso: float
    exposure_time: float
    wb_gains: tuple[float, float, float, float]
    aperture: float = 0.0  # 0 means unknown

    def __post_init__(self):
        if not (self.iso > 0.0 and np.isfinite(self.iso)):
            raise ValueError(f"ExifMeta: iso must be positive, got {self.iso}")
        if not (self.exposure_time > 0.0 and np.isfinite(self.exposure_time)):
            raise ValueError(
                f"ExifMeta: exposure_time must be positive, got {self.exposure_time}"
            )
        gains = tuple(float(g) for g in self.wb_gains)
        if len(gains) != 4 or any(not (g > 0.0 and np.isfinite(g)) for g in gains):
            raise ValueError(f"ExifMeta: wb_gains must be 4 positive reals, got {self.wb_gains}")
        object.__setattr__(self, "wb_gains", gains)
        if self.aperture < 0.0 or not np.isfinite(self.aperture):
            raise ValueError(f"ExifMeta: aperture must be >= 0, got {self.aperture}")


def _f32(x: float) -> float:
    return float(np.float32(x))


def meta_to_f32(meta: ExifMeta) -> ExifMeta:
    """Round all metadata fields to float32, the container's precision."""
    return ExifMeta(
        iso=_f32(meta.iso),
        exposure_time=_f32(meta.exposure_time),
        wb_gains=tuple(_f32(g) for g in meta.wb_gains),
        aperture=_f32(meta.aperture),
    )


@dataclass(frozen=True, eq=False)
class RawFrame:
    """One mosaicked sensor capture (RGGB pattern only)."""

    width: int
    height: int
    black_level: int
    white_level: int
    counts: np.ndarray  # (height, width) uint16, row-major
    meta: ExifMeta

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width % 2 or self.height % 2:
            raise ValueError(
                f"RawFrame: dimensions must be even and positive, got "
                f"{self.width}x{self.height}"
            )
        if not (0 <= self.black_level < self.white_level <= 65535):
            raise ValueError(
                f"RawFrame: need black_level < white_level <= 65535, got "
                f"{self.black_level}, {self.white_level}"
            )
        counts = np.ascontiguousarray(self.counts, dtype=np.uint16)
        if counts.shape != (self.height, self.width):
            raise ValueError(
                f"RawFrame: counts shape {counts.shape} does not match "
                f"{self.height}x{self.width}"
            )
        object.__setattr__(self, "counts", counts)


def write_cidraw(frame: RawFrame) -> bytes:
    header = _HEADER.pack(
        CIDRAW_MAGIC,
        CIDRAW_VERSION,
        frame.width,
        frame.height,
        0,  # cfa: RGGB
        0,  # reserved
        frame.black_level,
        frame.white_level,
        frame.meta.iso,
        frame.meta.exposure_time,
        *frame.meta.wb_gains,
        frame.meta.aperture,
    )
    return header + frame.counts.astype("<u2").tobytes()


def read_cidraw(data: bytes) -> RawFrame:
    if len(data) < CIDRAW_HEADER_SIZE:
        raise FormatError(
            f"cidraw: got {len(data)} bytes, header needs {CIDRAW_HEADER_SIZE}"
        )
    (
        magic,
        version,
        width,
        height,
        cfa,
        _reserved,
        black,
        white,
        iso,
        exposure,
        wr,
        wg,
        wb,
        wg2,
        aperture,
    ) = _HEADER.unpack_from(data, 0)
    if magic != CIDRAW_MAGIC:
        raise FormatError(f"cidraw: bad magic {magic!r} at byte 0")
    if version != CIDRAW_VERSION:
        raise FormatError(f"cidraw: unsupported version {version} at byte 4")
    if cfa != 0:
        raise FormatError(f"cidraw: unsupported CFA tag {cfa} at byte 14 (only RGGB)")
    expected = CIDRAW_HEADER_SIZE + 2 * width * height
    if len(data) != expected:
        raise FormatError(
            f"cidraw: payload truncated, expected {expected} bytes total, got {len(data)}"
        )
    if not black < white:
        raise FormatError(f"cidraw: black_level {black} >= white_level {white}")
    counts = np.frombuffer(
        data, dtype="<u2", count=width * height, offset=CIDRAW_HEADER_SIZE
    ).reshape(height, width)
    meta = ExifMeta(
        iso=float(iso),
        exposure_time=float(exposure),
        wb_gains=(float(wr), float(wg), float(wb), float(wg2)),
        aperture=float(aperture),
    )
    return RawFrame(
        width=width,
        height=height,
        black_level=black,
        white_level=white,
        counts=counts.copy(),
        meta=meta,
    )


def _normalized_counts(frame: RawFrame) -> np.ndarray:
    c = frame.counts.astype(np.float64)
    span = float(frame.white_level - frame.black_level)
    return np.clip((c - frame.black_level) / span, 0.0, 1.0)


def pack_bayer(frame: RawFrame) -> np.ndarray:
    """Black-subtract, normalize to [0,1], and split RGGB sites into 4 planes.

    Returns (4, h/2, w/2) in channel order R, G, B, G2.  White balance is
    deliberately not applied here; the gains reach the network only through
    the metadata planes.
    """
    n = _normalized_counts(frame)
    r = n[0::2, 0::2]
    g = n[0::2, 1::2]
    b = n[1::2, 1::2]
    g2 = n[1::2, 0::2]
    return np.stack([r, g, b, g2])


_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])
_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])


def _site_masks(height: int, width: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mr = np.zeros((height, width))
    mg = np.zeros((height, width))
    mb = np.zeros((height, width))
    mr[0::2, 0::2] = 1.0
    mg[0::2, 1::2] = 1.0
    mg[1::2, 0::2] = 1.0
    mb[1::2, 1::2] = 1.0
    return mr, mg, mb


def raw_to_rgb_reference(frame: RawFrame) -> np.ndarray:
    """Reference (target-side) conversion to a (3,H,W) image in [0,1].

    Per-site white-balance multiply, bilinear demosaic via normalized
    convolution (zero boundary), clamp, then gamma 1/2.2.  Deterministic and
    intentionally outside the differentiable path: it only produces training
    targets.
    """
    n = _normalized_counts(frame)
    wr, wg, wb, wg2 = frame.meta.wb_gains
    gains = np.empty_like(n)
    gains[0::2, 0::2] = wr
    gains[0::2, 1::2] = wg
    gains[1::2, 1::2] = wb
    gains[1::2, 0::2] = wg2
    m = n * gains

    mr, mg, mb = _site_masks(frame.height, frame.width)
    planes = []
    for mask, kernel in ((mr, _K_RB), (mg, _K_G), (mb, _K_RB)):
        num = ndimage.correlate(m * mask, kernel, mode="constant", cval=0.0)
        den = ndimage.correlate(mask, kernel, mode="constant", cval=0.0)
        planes.append(num / den)
    rgb = np.clip(np.stack(planes), 0.0, 1.0)
    return rgb**GAMMA


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Single-channel brightness image: per-pixel mean of the channels."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"rgb_to_gray: expected (C,H,W), got {image.shape}")
    return image.mean(axis=0)


def brightness(image: np.ndarray) -> float:
    """Mean value over all channels and pixels."""
    return float(np.asarray(image, dtype=np.float64).mean())


def resize_nearest(image: np.ndarray, height: int, width: int | None = None) -> np.ndarray:
    """Nearest-neighbor resize of a (C,H,W) image."""
    if width is None:
        width = height
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"resize_nearest: expected (C,H,W), got {image.shape}")
    _, h, w = image.shape
    ys = np.minimum((np.arange(height) + 0.5) * h / height, h - 1).astype(np.intp)
    xs = np.minimum((np.arange(width) + 0.5) * w / width, w - 1).astype(np.intp)
    return image[:, ys[:, None], xs[None, :]]


def write_ppm(image: np.ndarray) -> bytes:
    """Encode a (3,H,W) image in [0,1] as binary PPM (P6, maxval 255)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"write_ppm: expected (3,H,W), got {image.shape}")
    q = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = q.shape[1], q.shape[2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + q.transpose(1, 2, 0).tobytes()
