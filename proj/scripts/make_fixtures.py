# SPDX-License-Identifier: Apache-2.0
"""Regenerates the bundled test images from scikit-image's sample data.

Writes:
  tests/data/photo64.png       64x64 center crop of the astronaut photo
  tests/data/patches/pNNN.png  64x64 random crops of the colour sample photos
  tests/data/fixtures/         tiny hand-authored PNGs for the decoder tests
"""
import os
import struct
import zlib

import numpy as np
import skimage.data as sd
from skimage.io import imsave
from skimage.transform import resize

ROOT = os.path.join(os.path.dirname(__file__), "..", "tests", "data")


def to_u8(img):
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def main():
    fixtures()
    os.makedirs(os.path.join(ROOT, "patches"), exist_ok=True)

    astro = sd.astronaut()
    h, w = astro.shape[:2]
    s = min(h, w)
    crop = astro[(h - s) // 2:(h - s) // 2 + s, (w - s) // 2:(w - s) // 2 + s]
    imsave(os.path.join(ROOT, "photo64.png"),
           to_u8(resize(crop, (64, 64), anti_aliasing=True)), check_contrast=False)

    left, right, _ = sd.stereo_motorcycle()
    sources = [sd.astronaut(), sd.coffee(), sd.chelsea(), sd.rocket(), left, right]
    rng = np.random.default_rng(2024)
    count = 240
    for i in range(count):
        src = sources[i % len(sources)]
        h, w = src.shape[:2]
        size = int(rng.integers(96, min(h, w) // 2 + 1))
        y = int(rng.integers(0, h - size + 1))
        x = int(rng.integers(0, w - size + 1))
        patch = resize(src[y:y + size, x:x + size], (64, 64), anti_aliasing=True)
        imsave(os.path.join(ROOT, "patches", f"p{i:03d}.png"), to_u8(patch),
               check_contrast=False)


# Bytes of rgb4x4.png, row-major RGB; tests repeat this table.
RGB4X4 = np.array([[(r * 64 + c * 16 + k * 5) % 256 for c in range(4) for k in range(3)]
                   for r in range(4)], dtype=np.uint8).reshape(4, 4, 3)


def write_png16(path, rgb):
    """Minimal 16-bit RGB PNG writer; Pillow cannot emit this format."""
    h, w, _ = rgb.shape
    raw = b"".join(b"\x00" + rgb[y].astype(">u2").tobytes() for y in range(h))

    def chunk(kind, data):
        body = kind + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body))

    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 16, 2, 0, 0, 0)))
        f.write(chunk(b"IDAT", zlib.compress(raw)))
        f.write(chunk(b"IEND", b""))


def fixtures():
    out = os.path.join(ROOT, "fixtures")
    os.makedirs(out, exist_ok=True)
    imsave(os.path.join(out, "rgb4x4.png"), RGB4X4, check_contrast=False)
    imsave(os.path.join(out, "black8x8.png"), np.zeros((8, 8, 3), np.uint8), check_contrast=False)
    imsave(os.path.join(out, "gray8x8.png"), np.full((8, 8), 77, np.uint8), check_contrast=False)
    write_png16(os.path.join(out, "rgb16.png"), np.full((8, 8, 3), 4000, np.uint16))
    with open(os.path.join(out, "not_a_png.png"), "w") as f:
        f.write("plain text\n")


if __name__ == "__main__":
    main()
