"""Binary PGM (P5) and PPM (P6) reading and writing, plus the min-max
quantizer used for exporting activation maps. No compression, maxval 255."""

import numpy as np


def to_uint8(arr):
    """Min-max normalize a float map to uint8. A constant map has no
    contrast to show and quantizes to mid-gray (128) rather than dividing
    by zero."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        return np.full(arr.shape, 128, dtype=np.uint8)
    return np.round((arr - lo) / (hi - lo) * 255.0).astype(np.uint8)


def write_pgm(path, img):
    img = np.asarray(img)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError(f"write_pgm wants a 2-D uint8 array, got {img.dtype} {img.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def write_ppm(path, img):
    """img: [H, W, 3] uint8, interleaved RGB."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"write_ppm wants [H, W, 3] uint8, got {img.dtype} {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        blob = fh.read()
    # header: magic, whitespace-separated width/height/maxval (comments allowed)
    if not blob.startswith(magic):
        raise ValueError(f"{path}: expected {magic.decode()} header")
    fields = []
    i = len(magic)
    while len(fields) < 3:
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        fields.append(int(blob[i:j]))
        i = j
    i += 1  # single whitespace byte after maxval
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    if len(blob) - i < h * w * channels:
        raise ValueError(f"{path}: truncated pixel payload")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * channels, offset=i)
    return data.reshape((h, w) if channels == 1 else (h, w, channels)).copy()


def read_pgm(path):
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path):
    return _read_netpbm(path, b"P6", 3)
