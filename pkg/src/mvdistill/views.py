"""Edge-enhanced and high-frequency-enhanced view construction, plus image I/O.

The edge view superposes a per-channel Canny edge map onto the normalized
image; the high-frequency view superposes the residual against a Gaussian
blur.  Both are clipped to [0,1].  Images travel as binary PPM (P6, maxval
255); float views travel as a raw little-endian float64 sidecar so training
never pays a quantization round-trip.

All border handling is reflect padding (mirror without repeating the edge
sample).  Canny internals are pinned: pre-smoothing sigma 1.4 / 5x5 kernel,
3x3 Sobel, L2 magnitude, 4-bin non-maximum suppression, double threshold
with 8-connected hysteresis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    """Invalid image contents or unusable dimensions."""


class ConfigError(ValueError):
    """Invalid view-generation parameters."""


class PpmParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


CANNY_SMOOTH_SIGMA = 1.4
CANNY_SMOOTH_KERNEL = 5

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)


@dataclass
class RgbImage:
    height: int
    width: int
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.uint8)
        if self.pixels.shape != (self.height, self.width, 3):
            raise ImageError(
                f"pixel array {self.pixels.shape} does not match "
                f"{self.height}x{self.width}x3"
            )


@dataclass
class ViewImage:
    height: int
    width: int
    values: np.ndarray  # (H, W, 3) float64 in [0, 1]
    view_kind: str  # rgb | edge | hf


@dataclass
class ViewGenConfig:
    canny_low: float = 100.0
    canny_high: float = 200.0
    alpha_e: float = 1.5
    alpha_hf: float = 1.5
    gaussian_sigma: float = 1.0
    gaussian_kernel: int = 5

    def __post_init__(self):
        if not (0 < self.canny_low < self.canny_high):
            raise ConfigError(
                f"need 0 < canny_low < canny_high, got "
                f"({self.canny_low}, {self.canny_high})"
            )
        if self.alpha_e < 0 or self.alpha_hf < 0:
            raise ConfigError("view weights must be nonnegative")
        if self.gaussian_kernel < 3 or self.gaussian_kernel % 2 == 0:
            raise ConfigError(f"gaussian kernel must be odd and >= 3, got {self.gaussian_kernel}")
        if self.gaussian_sigma <= 0:
            raise ConfigError("gaussian sigma must be positive")


def gaussian_kernel_1d(sigma: float, size: int) -> np.ndarray:
    c = size // 2
    k = np.exp(-((np.arange(size) - c) ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(channel: np.ndarray, sigma: float, kernel: int) -> np.ndarray:
    """Separable Gaussian convolution with reflect padding."""
    if kernel % 2 == 0:
        raise ConfigError(f"gaussian kernel must be odd, got {kernel}")
    if sigma <= 0:
        raise ConfigError("gaussian sigma must be positive")
    ch = np.asarray(channel, dtype=np.float64)
    k = gaussian_kernel_1d(sigma, kernel)
    pad = kernel // 2
    padded = np.pad(ch, ((pad, pad), (0, 0)), mode="reflect")
    rows = sum(k[i] * padded[i : i + ch.shape[0], :] for i in range(kernel))
    padded = np.pad(rows, ((0, 0), (pad, pad)), mode="reflect")
    return sum(k[i] * padded[:, i : i + ch.shape[1]] for i in range(kernel))


def _blur_residual(channel: np.ndarray, sigma: float, kernel: int) -> np.ndarray:
    """channel - blur(channel), written as sum(k_t*k_u*(x - x_shifted)).

    The rearranged form makes the residual exactly zero on constant images
    instead of leaving a one-ulp rounding remainder.
    """
    ch = np.asarray(channel, dtype=np.float64)
    k = gaussian_kernel_1d(sigma, kernel)
    pad = kernel // 2
    padded = np.pad(ch, pad, mode="reflect")
    h, w = ch.shape
    out = np.zeros_like(ch)
    for t in range(kernel):
        for u in range(kernel):
            out += k[t] * k[u] * (ch - padded[t : t + h, u : u + w])
    return out


def _conv3x3(channel: np.ndarray, kern: np.ndarray) -> np.ndarray:
    padded = np.pad(channel, 1, mode="reflect")
    out = np.zeros_like(channel)
    for di in range(3):
        for dj in range(3):
            out += kern[di, dj] * padded[di : di + channel.shape[0], dj : dj + channel.shape[1]]
    return out


def canny_channel(channel: np.ndarray, low: float, high: float) -> np.ndarray:
    """Full Canny pipeline on one channel; returns a {0, 255} edge map."""
    ch = np.asarray(channel, dtype=np.float64)
    h, w = ch.shape
    if h < 5 or w < 5:
        raise ImageError(f"canny needs at least 5x5, got {h}x{w}")

    smoothed = gaussian_blur(ch, CANNY_SMOOTH_SIGMA, CANNY_SMOOTH_KERNEL)
    gx = _conv3x3(smoothed, SOBEL_X)
    gy = _conv3x3(smoothed, SOBEL_Y)
    mag = np.hypot(gx, gy)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0

    # 4-bin non-maximum suppression; out-of-bounds neighbors count as 0.
    padded = np.pad(mag, 1, mode="constant")
    m = padded[1:-1, 1:-1]
    east, west = padded[1:-1, 2:], padded[1:-1, :-2]
    south, north = padded[2:, 1:-1], padded[:-2, 1:-1]
    ne, sw = padded[:-2, 2:], padded[2:, :-2]
    nw, se = padded[:-2, :-2], padded[2:, 2:]

    bin0 = (angle < 22.5) | (angle >= 157.5)
    bin1 = (angle >= 22.5) & (angle < 67.5)
    bin2 = (angle >= 67.5) & (angle < 112.5)
    bin3 = (angle >= 112.5) & (angle < 157.5)
    n1 = np.select([bin0, bin1, bin2, bin3], [east, ne, south, se])
    n2 = np.select([bin0, bin1, bin2, bin3], [west, sw, north, nw])
    nms = np.where((m >= n1) & (m >= n2), m, 0.0)

    strong = nms >= high
    weak = (nms >= low) & ~strong

    # hysteresis: keep weak pixels 8-connected to a strong pixel
    keep = strong.copy()
    frontier = list(zip(*np.nonzero(strong)))
    while frontier:
        i, j = frontier.pop()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                ii, jj = i + di, j + dj
                if 0 <= ii < h and 0 <= jj < w and weak[ii, jj] and not keep[ii, jj]:
                    keep[ii, jj] = True
                    frontier.append((ii, jj))
    return np.where(keep, 255.0, 0.0)


def edge_view(img: RgbImage, cfg: ViewGenConfig) -> ViewImage:
    base = img.pixels.astype(np.float64)
    edges = np.stack(
        [canny_channel(base[:, :, c], cfg.canny_low, cfg.canny_high) for c in range(3)],
        axis=-1,
    )
    values = np.clip(base / 255.0 + cfg.alpha_e * edges / 255.0, 0.0, 1.0)
    return ViewImage(img.height, img.width, values, "edge")


def hf_view(img: RgbImage, cfg: ViewGenConfig) -> ViewImage:
    base = img.pixels.astype(np.float64)
    residual = np.stack(
        [
            _blur_residual(base[:, :, c], cfg.gaussian_sigma, cfg.gaussian_kernel)
            for c in range(3)
        ],
        axis=-1,
    )
    values = np.clip(base / 255.0 + cfg.alpha_hf * residual / 255.0, 0.0, 1.0)
    return ViewImage(img.height, img.width, values, "hf")


def rgb_view(img: RgbImage) -> ViewImage:
    return ViewImage(img.height, img.width, img.pixels.astype(np.float64) / 255.0, "rgb")


def make_views(img: RgbImage, cfg: ViewGenConfig) -> dict[str, ViewImage]:
    return {"rgb": rgb_view(img), "edge": edge_view(img, cfg), "hf": hf_view(img, cfg)}


# ----------------------------------------------------------------- PPM I/O


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1].isspace():
            pos += 1
        elif buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos] != 0x0A:
                pos += 1
        else:
            break
    if pos >= n:
        raise PpmParseError("unexpected end of header", pos)
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(path) -> RgbImage:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P6":
        raise PpmParseError(f"expected magic P6, got {buf[:2]!r}", 0)
    pos = 2
    fields = []
    for _ in range(3):
        tok, pos = _next_token(buf, pos)
        if not tok.isdigit():
            raise PpmParseError(f"expected integer header field, got {tok!r}", pos - len(tok))
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval != 255:
        raise PpmParseError(f"unsupported maxval {maxval}, only 255 supported", pos - len(tok))
    if width <= 0 or height <= 0:
        raise PpmParseError(f"invalid dimensions {width}x{height}", 2)
    pos += 1  # single whitespace byte after maxval
    need = width * height * 3
    payload = buf[pos : pos + need]
    if len(payload) < need:
        raise PpmParseError(
            f"truncated payload: need {need} bytes, have {len(payload)}", pos + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3)
    return RgbImage(height, width, pixels.copy())


def write_ppm(img: RgbImage, path) -> None:
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        fh.write(img.pixels.astype(np.uint8).tobytes())


def quantize_view(view: ViewImage) -> RgbImage:
    pixels = np.rint(view.values * 255.0).astype(np.uint8)
    return RgbImage(view.height, view.width, pixels)


# ------------------------------------------------------------ f64 sidecar

SIDECAR_MAGIC = b"TMKV"
SIDECAR_VERSION = 1
VIEW_ORDER = ("rgb", "edge", "hf")


def write_views_sidecar(views: dict[str, ViewImage], path) -> None:
    first = views["rgb"]
    h, w = first.height, first.width
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        fh.write(struct.pack("<III", SIDECAR_VERSION, h, w))
        for kind in VIEW_ORDER:
            v = views[kind]
            fh.write(v.values.astype("<f8").tobytes())


def read_views_sidecar(path) -> dict[str, ViewImage]:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != SIDECAR_MAGIC:
        raise PpmParseError(f"bad sidecar magic {buf[:4]!r}", 0)
    version, h, w = struct.unpack_from("<III", buf, 4)
    if version != SIDECAR_VERSION:
        raise PpmParseError(f"unsupported sidecar version {version}", 4)
    plane = h * w * 3 * 8
    need = 16 + plane * len(VIEW_ORDER)
    if len(buf) < need:
        raise PpmParseError(f"truncated sidecar: need {need} bytes, have {len(buf)}", len(buf))
    out = {}
    for i, kind in enumerate(VIEW_ORDER):
        start = 16 + i * plane
        vals = np.frombuffer(buf[start : start + plane], dtype="<f8").reshape(h, w, 3)
        out[kind] = ViewImage(h, w, vals.copy(), kind)
    return out
