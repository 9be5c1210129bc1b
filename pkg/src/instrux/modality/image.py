"""Image IO and preprocessing: PPM files, resizing, patch features, the toy
per-patch code codec, and box overlays.

The code codec stands in for a learned discrete codec: a 256x256 image maps
to a 16x16 grid of codes, one per non-overlapping 16x16 patch, by rounding
the patch's mean gray intensity to the nearest of 256 levels.  Decoding
paints each patch with its level, so re-encoding a decoded image is stable.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadImage

PATCH_MEAN = 0.5
PATCH_STD = 0.5

CODE_RESOLUTION = 256
CODE_PATCH = 16
CODE_GRID = CODE_RESOLUTION // CODE_PATCH  # 16x16 grid -> 256 codes


# --- PPM (P6) ---------------------------------------------------------------

def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P6"):
        raise BadImage(f"{path}: not a P6 PPM file")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise BadImage(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise BadImage(f"{path}: only maxval 255 supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    if pixels.size != w * h * 3:
        raise BadImage(f"{path}: truncated pixel data")
    return pixels.reshape(h, w, 3).copy()


def write_ppm(path: str, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise BadImage(f"expected HxWx3 uint8 image, got {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


# --- resizing / normalization ----------------------------------------------

def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    img_f = img.astype(np.float64)
    top = img_f[y0][:, x0] * (1 - wx) + img_f[y0][:, x1] * wx
    bot = img_f[y1][:, x0] * (1 - wx) + img_f[y1][:, x1] * wx
    out = top * (1 - wy) + bot * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_center_mask(img: np.ndarray, mask_ratio: float) -> np.ndarray:
    """Zero a centered square whose side is ``mask_ratio`` of the image side."""
    if mask_ratio <= 0:
        return img
    out = img.copy()
    h, w = out.shape[:2]
    mh, mw = int(round(h * mask_ratio)), int(round(w * mask_ratio))
    y0, x0 = (h - mh) // 2, (w - mw) // 2
    out[y0:y0 + mh, x0:x0 + mw] = 0
    return out


def image_to_patches(img: np.ndarray, patch: int, resolution: int | None = None) -> np.ndarray:
    """Row-major patch features: L = (H/p)*(W/p), D = p*p*C, normalized."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None].repeat(3, axis=2)
    if img.ndim != 3:
        raise BadImage(f"expected HxWxC image, got shape {img.shape}")
    if resolution is not None:
        img = resize_bilinear(img, resolution, resolution)
    h, w, c = img.shape
    if h % patch or w % patch:
        raise BadImage(f"{h}x{w} not divisible by patch {patch}")
    gh, gw = h // patch, w // patch
    x = img.reshape(gh, patch, gw, patch, c).transpose(0, 2, 1, 3, 4)
    feats = x.reshape(gh * gw, patch * patch * c).astype(np.float32) / 255.0
    return (feats - PATCH_MEAN) / PATCH_STD


# --- toy discrete code codec -------------------------------------------------

def image_code_encode(img: np.ndarray) -> list[int]:
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    if img.ndim != 3:
        raise BadImage(f"expected HxW or HxWxC image, got shape {img.shape}")
    if img.shape[:2] != (CODE_RESOLUTION, CODE_RESOLUTION):
        img = resize_bilinear(img, CODE_RESOLUTION, CODE_RESOLUTION)
    gray = img.astype(np.float64).mean(axis=2)
    blocks = gray.reshape(CODE_GRID, CODE_PATCH, CODE_GRID, CODE_PATCH)
    means = blocks.mean(axis=(1, 3))
    codes = np.clip(np.rint(means), 0, 255).astype(int)
    return [int(c) for c in codes.flatten()]


def image_code_decode(codes) -> np.ndarray:
    codes = np.asarray(list(codes), dtype=np.int64)
    n = CODE_GRID * CODE_GRID
    if codes.size < n:
        codes = np.pad(codes, (0, n - codes.size))
    codes = np.clip(codes[:n].reshape(CODE_GRID, CODE_GRID), 0, 255)
    img = np.repeat(np.repeat(codes, CODE_PATCH, axis=0), CODE_PATCH, axis=1)
    return np.repeat(img[:, :, None], 3, axis=2).astype(np.uint8)


# --- overlays -----------------------------------------------------------------

def draw_box(img: np.ndarray, box, width: int = 2,
             color: tuple[int, int, int] = (255, 0, 0)) -> np.ndarray:
    """Copy of ``img`` with a ``width``-px rectangle along the box edges."""
    out = np.asarray(img, dtype=np.uint8).copy()
    h, w = out.shape[:2]
    x1 = int(np.clip(round(box.x1), 0, w - 1))
    x2 = int(np.clip(round(box.x2), 0, w - 1))
    y1 = int(np.clip(round(box.y1), 0, h - 1))
    y2 = int(np.clip(round(box.y2), 0, h - 1))
    col = np.array(color, dtype=np.uint8)
    out[y1:min(y1 + width, h), x1:x2 + 1] = col
    out[max(y2 - width + 1, 0):y2 + 1, x1:x2 + 1] = col
    out[y1:y2 + 1, x1:min(x1 + width, w)] = col
    out[y1:y2 + 1, max(x2 - width + 1, 0):x2 + 1] = col
    return out
