"""PGM/PPM/raw-blob ingestion and normalization."""

import numpy as np
import pytest

from stmlab.imageio import (
    ImageFormatError,
    load_image_dir,
    normalize,
    read_image,
    write_pgm,
    write_raw,
)


def test_binary_pgm_roundtrip(tmp_path):
    gray = np.arange(12, dtype=np.float64).reshape(3, 4)
    path = str(tmp_path / "g.pgm")
    write_pgm(path, gray)
    img = read_image(path)
    assert img.shape == (3, 3, 4)
    # write_pgm max-normalizes; brightest pixel reads back as 1.0
    assert img[0, 2, 3] == 1.0
    np.testing.assert_array_equal(img[0], img[1])


def test_binary_ppm(tmp_path):
    path = str(tmp_path / "c.ppm")
    pix = np.arange(2 * 2 * 3, dtype=np.uint8).reshape(2, 2, 3)
    with open(path, "wb") as fh:
        fh.write(b"P6\n2 2\n255\n" + pix.tobytes())
    img = read_image(path)
    assert img.shape == (3, 2, 2)
    assert img[2, 1, 1] == pytest.approx(11 / 255)


def test_ascii_pgm_with_comment(tmp_path):
    path = str(tmp_path / "a.pgm")
    with open(path, "w") as fh:
        fh.write("P2\n# a comment\n2 2\n255\n0 64\n128 255\n")
    img = read_image(path)
    assert img[0, 1, 1] == 1.0
    assert img[0, 0, 1] == pytest.approx(64 / 255)


def test_raw_blob_roundtrip(tmp_path):
    arr = np.random.default_rng(0).random((3, 5, 4)).astype(np.float32)
    path = str(tmp_path / "x.stmf")
    write_raw(path, arr)
    np.testing.assert_array_equal(read_image(path), arr)


def test_truncated_raw(tmp_path):
    path = str(tmp_path / "bad.stmf")
    with open(path, "wb") as fh:
        fh.write(b"STMF" + b"\x01\x00\x00\x00" * 3)
    with pytest.raises(ImageFormatError, match="truncated"):
        read_image(path)


def test_unknown_magic(tmp_path):
    path = str(tmp_path / "junk.pgm")
    with open(path, "wb") as fh:
        fh.write(b"GIF89a....")
    with pytest.raises(ImageFormatError):
        read_image(path)


def test_normalize():
    img = np.ones((3, 2, 2), np.float32)
    out = normalize(img, (0.5, 0.5, 1.0), (0.25, 0.5, 1.0))
    np.testing.assert_allclose(out[0], 2.0)
    np.testing.assert_allclose(out[1], 1.0)
    np.testing.assert_allclose(out[2], 0.0)


def test_load_dir_with_labels(tmp_path):
    for i in range(3):
        write_raw(str(tmp_path / f"img{i}.stmf"),
                  np.full((3, 4, 4), float(i), np.float32))
    (tmp_path / "labels.csv").write_text("img0.stmf,5\nimg1.stmf,2\nimg2.stmf,9\n")
    images, labels, names = load_image_dir(str(tmp_path))
    assert names == ["img0.stmf", "img1.stmf", "img2.stmf"]
    assert [im[0, 0, 0] for im in images] == [0.0, 1.0, 2.0]
    np.testing.assert_array_equal(labels, [5, 2, 9])


def test_load_dir_without_images(tmp_path):
    with pytest.raises(ImageFormatError):
        load_image_dir(str(tmp_path))
