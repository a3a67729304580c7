#!/usr/bin/env python3
"""Regenerate src/deepcaptcha/assets/glyph_atlas.npz.

Rasterizes every charset symbol (digits, plus both cases of the letters)
from DejaVuSans into tight-cropped antialiased alpha bitmaps.  The npz is
committed as a data asset so the runtime renderer never touches font files;
rerun this only to change the glyph artwork.

Usage: python tools/make_glyph_atlas.py
"""

import os
import sys

import numpy as np
from PIL import Image, ImageDraw, ImageFont

DIGITS = "0123456789"
LETTERS = "abcdefghjkmnpqrstuvwxyz"  # charset letters: latin minus i, l, o
FONT_SIZE = 42  # digit glyphs come out ~30 px tall
CANVAS = 96


def find_font():
    import matplotlib

    path = os.path.join(
        os.path.dirname(matplotlib.__file__), "mpl-data", "fonts", "ttf", "DejaVuSans.ttf"
    )
    if not os.path.exists(path):
        sys.exit(f"DejaVuSans.ttf not found at {path}")
    return path


def render_glyph(font, ch):
    img = Image.new("L", (CANVAS, CANVAS), 0)
    ImageDraw.Draw(img).text((CANVAS // 4, CANVAS // 4), ch, fill=255, font=font)
    a = np.asarray(img)
    ys, xs = np.nonzero(a)
    if ys.size == 0:
        sys.exit(f"glyph {ch!r} rendered empty")
    return a[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1].copy()


def main():
    font = ImageFont.truetype(find_font(), FONT_SIZE)
    atlas = {}
    for ch in DIGITS:
        atlas[ch] = render_glyph(font, ch)
    for ch in LETTERS:
        atlas[ch] = render_glyph(font, ch)
        atlas[ch.upper()] = render_glyph(font, ch.upper())

    h0 = atlas["0"].shape[0]
    print(f"{len(atlas)} glyphs, digit height {h0} px")
    assert h0 >= 24, "atlas glyphs must be at least 24 px tall"

    out = os.path.join(
        os.path.dirname(__file__), "..", "src", "deepcaptcha", "assets", "glyph_atlas.npz"
    )
    os.makedirs(os.path.dirname(out), exist_ok=True)
    np.savez_compressed(out, **atlas)
    print(f"wrote {os.path.abspath(out)}")


if __name__ == "__main__":
    main()
