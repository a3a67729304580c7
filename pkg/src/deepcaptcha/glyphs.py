"""Embedded glyph atlas access.

The atlas ships with the package as an npz of tight-cropped antialiased
alpha bitmaps (uint8, 0 = transparent), one per digit and one per letter
case.  tools/make_glyph_atlas.py regenerates it.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np


@lru_cache(maxsize=1)
def load_atlas() -> dict:
    ref = resources.files("deepcaptcha").joinpath("assets/glyph_atlas.npz")
    with ref.open("rb") as f:
        data = np.load(f)
        return {name: data[name] for name in data.files}


def glyph_bitmap(symbol: str, case: str) -> np.ndarray:
    """Alpha bitmap for a charset symbol; case is 'upper', 'lower', or 'n/a'."""
    atlas = load_atlas()
    key = symbol.upper() if case == "upper" else symbol
    if key not in atlas:
        raise KeyError(f"no glyph for symbol {symbol!r} (case {case})")
    return atlas[key]
