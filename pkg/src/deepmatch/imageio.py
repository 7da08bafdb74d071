"""Raster image reading and writing.

Binary PGM (P5) and PPM (P6) are handled natively; PNG goes through Pillow
when it is installed. Loaded images are float64 arrays in [0, 1], shaped
(H, W) for gray and (H, W, 3) for RGB.
"""

import os

import numpy as np


class ImageFormatError(ValueError):
    pass


def _pnm_header(buf):
    """Parse a P5/P6 header. Returns (magic, width, height, maxval, offset)."""
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < 4:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed image: truncated header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    if pos >= n:
        raise ImageFormatError("malformed image: missing raster data")
    pos += 1
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("malformed image: non-numeric header field") from None
    return magic, width, height, maxval, pos


def read_pnm(buf):
    if buf[:2] not in (b"P5", b"P6"):
        raise ImageFormatError("unsupported format: expected binary PGM (P5) or PPM (P6)")
    magic, width, height, maxval, offset = _pnm_header(buf)
    if width <= 0 or height <= 0:
        raise ImageFormatError("zero-dimension image")
    if not 0 < maxval < 65536:
        raise ImageFormatError(f"malformed image: bad maxval {maxval}")
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    if len(buf) - offset < count * dtype.itemsize:
        raise ImageFormatError("malformed image: truncated raster data")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    img = data.astype(np.float64) / maxval
    shape = (height, width, 3) if channels == 3 else (height, width)
    return img.reshape(shape)


def load_image(path):
    """Read a PGM/PPM (or PNG, via Pillow) file into a float array in [0, 1]."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise ImageFormatError(f"unreadable file {path!r}: {exc}") from exc
    if buf[:2] in (b"P5", b"P6"):
        return read_pnm(buf)
    if buf[:8] == b"\x89PNG\r\n\x1a\n":
        return _read_png(path)
    raise ImageFormatError(f"unsupported format for {path!r}")


def _read_png(path):
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageFormatError("PNG support requires Pillow") from exc
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if "A" in im.mode or im.mode == "P" else "L")
            arr = np.asarray(im)
    except OSError as exc:
        raise ImageFormatError(f"malformed image: {exc}") from exc
    if arr.size == 0:
        raise ImageFormatError("zero-dimension image")
    return arr.astype(np.float64) / 255.0


def save_pnm(path, img):
    """Write a float image in [0, 1] (or uint8) as 8-bit PGM/PPM."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"cannot write image of shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr).tobytes())


def save_image(path, img):
    """Write ``img`` as PNG when the suffix asks for it, PNM otherwise."""
    if os.fspath(path).lower().endswith(".png"):
        from PIL import Image

        arr = np.asarray(img)
        if arr.dtype != np.uint8:
            arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(path)
    else:
        save_pnm(path, img)
