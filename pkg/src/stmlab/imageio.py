"""Probe-image ingestion: PGM/PPM (P2/P3/P5/P6) and raw float32 blobs.

Images come back as [3, H, W] float32 in [0, 1]; greyscale sources are
replicated across channels. The raw format is magic "STMF" + u32 C, H, W
(little-endian) + C*H*W float32 payload, for pre-normalized probes.

A `labels.csv` file ("filename,class_index" per line, no header) sitting
next to the images supplies classification labels.
"""

from __future__ import annotations

import os
import re
import struct

import numpy as np

RAW_MAGIC = b"STMF"
IMAGE_EXTENSIONS = (".pgm", ".ppm", ".stmf")


class ImageFormatError(ValueError):
    """Unreadable or malformed image file."""


def _read_netpbm(data: bytes, path: str) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ImageFormatError(f"{path}: unsupported netpbm magic {magic!r}")
    # header tokens: width, height, maxval; '#' comments allowed
    tokens: list[int] = []
    pos = 2
    while len(tokens) < 3:
        match = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
        if match is None:
            raise ImageFormatError(f"{path}: truncated header")
        tok = match.group(1)
        pos += match.end()
        if not tok.startswith(b"#"):
            tokens.append(int(tok))
    width, height, maxval = tokens
    if maxval <= 0 or maxval > 65535:
        raise ImageFormatError(f"{path}: bad maxval {maxval}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        pos += 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
        raw = data[pos : pos + count * dtype.itemsize]
        if len(raw) < count * dtype.itemsize:
            raise ImageFormatError(f"{path}: truncated pixel data")
        pix = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    else:
        values = data[pos:].split()
        if len(values) < count:
            raise ImageFormatError(f"{path}: truncated pixel data")
        pix = np.array(values[:count], dtype=np.float32)
    pix = pix.reshape(height, width, channels) / np.float32(maxval)
    if channels == 1:
        pix = np.repeat(pix, 3, axis=2)
    return np.ascontiguousarray(pix.transpose(2, 0, 1))


def _read_raw(data: bytes, path: str) -> np.ndarray:
    if data[:4] != RAW_MAGIC:
        raise ImageFormatError(f"{path}: bad raw magic {data[:4]!r}")
    if len(data) < 16:
        raise ImageFormatError(f"{path}: truncated raw header")
    c, h, w = struct.unpack("<III", data[4:16])
    count = c * h * w
    if len(data) < 16 + 4 * count:
        raise ImageFormatError(f"{path}: truncated raw payload")
    arr = np.frombuffer(data[16 : 16 + 4 * count], dtype="<f4").reshape(c, h, w)
    if c == 1:
        arr = np.repeat(arr, 3, axis=0)
    elif c != 3:
        raise ImageFormatError(f"{path}: raw blobs must have 1 or 3 channels")
    return np.ascontiguousarray(arr)


def read_image(path: str) -> np.ndarray:
    """[3, H, W] float32; netpbm pixels scaled to [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == RAW_MAGIC:
        return _read_raw(data, path)
    return _read_netpbm(data, path)


def write_pgm(path: str, gray: np.ndarray) -> None:
    """8-bit binary PGM; input is any 2D array, max-normalized."""
    m = np.asarray(gray, dtype=np.float64)
    peak = m.max()
    scaled = np.zeros_like(m) if peak <= 0 else np.clip(m / peak, 0.0, 1.0)
    pix = np.round(scaled * 255.0).astype(np.uint8)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{m.shape[1]} {m.shape[0]}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    os.replace(tmp, path)


def write_raw(path: str, img: np.ndarray) -> None:
    arr = np.ascontiguousarray(img, dtype="<f4")
    if arr.ndim != 3:
        raise ImageFormatError("raw blobs are [C, H, W]")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(RAW_MAGIC)
        fh.write(struct.pack("<III", *arr.shape))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def normalize(img: np.ndarray, mean, std) -> np.ndarray:
    """Per-channel (x - mean) / std."""
    mean = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
    return (np.asarray(img, dtype=np.float32) - mean) / std


def load_image_dir(directory: str):
    """Sorted probe images plus optional labels from labels.csv.

    Returns (images, labels_or_None, filenames).
    """
    names = sorted(
        f for f in os.listdir(directory)
        if os.path.splitext(f)[1].lower() in IMAGE_EXTENSIONS
    )
    if not names:
        raise ImageFormatError(f"no PGM/PPM/STMF images in {directory}")
    images = [read_image(os.path.join(directory, f)) for f in names]
    labels = None
    labels_path = os.path.join(directory, "labels.csv")
    if os.path.exists(labels_path):
        table = {}
        with open(labels_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                fname, _, cls = line.partition(",")
                table[fname.strip()] = int(cls)
        try:
            labels = np.array([table[f] for f in names], dtype=np.int64)
        except KeyError as exc:
            raise ImageFormatError(f"labels.csv is missing an entry for {exc}") from None
    return images, labels, names
