"""Binary PPM (P6) and PGM (P5) with 8-bit samples."""

import numpy as np


def _write(path, magic, arr, channels):
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{magic}\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_ppm(path, rgb):
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"PPM expects (H, W, 3), got {rgb.shape}")
    _write(path, "P6", rgb, 3)


def write_pgm(path, gray):
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError(f"PGM expects (H, W), got {gray.shape}")
    _write(path, "P5", gray, 1)


def _tokens(data, n):
    """First ``n`` header tokens and the offset of the raster."""
    out, i = [], 0
    while len(out) < n:
        while i < len(data) and data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j:j + 1].isspace():
            j += 1
        if j == i:
            raise ValueError("truncated PNM header")
        out.append(data[i:j])
        i = j
    return out, i + 1


def _read(path, magic, channels):
    with open(path, "rb") as f:
        data = f.read()
    (m, w, h, maxval), off = _tokens(data, 4)
    if m != magic.encode():
        raise ValueError(f"{path}: expected {magic} file, found {m!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit files are supported")
    n = w * h * channels
    raster = data[off:off + n]
    if len(raster) != n:
        raise ValueError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape((h, w, 3) if channels == 3 else (h, w)).copy()


def read_ppm(path):
    return _read(path, "P6", 3)


def read_pgm(path):
    return _read(path, "P5", 1)
