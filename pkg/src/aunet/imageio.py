"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255.

Float images live in [0,1]; quantization is round-half-up so a weight
of exactly 0.5 maps to pixel value 128.
"""

import numpy as np

from .errors import ShapeError


def quantize(arr):
    a = np.clip(np.asarray(arr, dtype=np.float64), 0.0, 1.0)
    return np.floor(a * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image):
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"PPM writer expects [H,W,3], got {image.shape}")
    data = quantize(image)
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        fh.write(data.tobytes())


def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2:
        raise ShapeError(f"PGM writer expects [H,W], got {image.shape}")
    data = quantize(image)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        fh.write(data.tobytes())


def _read_tokens(fh, count):
    """Read whitespace-separated header tokens, honoring # comments."""
    tokens = []
    while len(tokens) < count:
        ch = fh.read(1)
        if not ch:
            raise ShapeError("truncated image header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fh.read(1)
            continue
        if ch.isspace():
            continue
        tok = ch
        while True:
            ch = fh.read(1)
            if not ch or ch.isspace():
                break
            tok += ch
        tokens.append(tok)
    return tokens


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        if fh.read(2) != magic:
            raise ShapeError(f"{path}: not a binary {magic.decode()} file")
        w, h, maxval = (int(t) for t in _read_tokens(fh, 3))
        if maxval != 255:
            raise ShapeError(f"{path}: only maxval 255 is supported, got {maxval}")
        raw = fh.read(w * h * channels)
    if len(raw) != w * h * channels:
        raise ShapeError(f"{path}: truncated pixel data")
    shape = (h, w, channels) if channels > 1 else (h, w)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(shape)
    return arr.astype(np.float64) / 255.0


def read_ppm(path):
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1)
