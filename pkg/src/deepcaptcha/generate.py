"""Synthetic CAPTCHA rendering and dataset generation.

Every sample is a deterministic function of (label, config, seed): glyphs
from the embedded atlas get a random case, rotation, scale, and gray level,
are placed into jittered horizontal slots, then a crossing curve and
Gaussian-count pepper noise go on top.  Per-glyph ground truth is kept so a
trained solver's failures can be attributed to rendering conditions.

Dataset generation derives one seed per sample index from the master seed,
so results are byte-identical no matter how many workers render them.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .glyphs import glyph_bitmap
from .pgm import pgm_bytes
from .rng import SplitMix64, derive_seed

WIDTH = 135
HEIGHT = 50
MAX_LENGTH = 8

NUMERIC_SYMBOLS = "0123456789"
# digits and latin letters minus the confusable {i, l, 1, o, 0}; 31 symbols
ALPHANUMERIC_SYMBOLS = "23456789abcdefghjkmnpqrstuvwxyz"

MANIFEST_NAME = "manifest.tsv"
CONFIG_NAME = "gen-config.txt"


class GenError(ValueError):
    """Invalid generation request (bad label, charset, or count)."""


@dataclass(frozen=True)
class Charset:
    kind: str
    symbols: str

    def __post_init__(self):
        if self.kind == "numeric":
            expect = NUMERIC_SYMBOLS
        elif self.kind == "alphanumeric":
            expect = ALPHANUMERIC_SYMBOLS
        else:
            raise GenError(f"unknown charset kind {self.kind!r}")
        if self.symbols != expect:
            raise GenError(f"{self.kind} charset must be {expect!r}")

    @classmethod
    def from_kind(cls, kind: str) -> "Charset":
        kind = {"alnum": "alphanumeric"}.get(kind, kind)
        if kind == "numeric":
            return cls("numeric", NUMERIC_SYMBOLS)
        if kind == "alphanumeric":
            return cls("alphanumeric", ALPHANUMERIC_SYMBOLS)
        raise GenError(f"unknown charset kind {kind!r}")

    def index(self, symbol: str) -> int:
        i = self.symbols.find(symbol)
        if i < 0:
            raise GenError(f"symbol {symbol!r} not in {self.kind} charset")
        return i

    def __len__(self):
        return len(self.symbols)


@dataclass
class GenConfig:
    """All rendering knobs; serializable as a flat key=value file."""

    charset: str = "numeric"
    rotation_max_deg: float = 30.0
    scale_min: float = 0.8
    scale_max: float = 1.2
    glyph_gray_min: int = 0
    glyph_gray_max: int = 160
    x_jitter: float = 3.0
    y_jitter: float = 4.0
    curve_count: int = 1
    curve_gray_min: int = 0
    curve_gray_max: int = 120
    curve_thickness: int = 1
    curve_segment_px: float = 18.0
    dot_count_mean: float = 40.0
    dot_count_std: float = 10.0
    dot_gray_min: int = 0
    dot_gray_max: int = 128
    dot_size_min: int = 1
    dot_size_max: int = 2

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for fld in fields(self):
                f.write(f"{fld.name}={getattr(self, fld.name)}\n")

    @classmethod
    def load(cls, path) -> "GenConfig":
        kwargs = {}
        types = {fld.name: fld.type for fld in fields(cls)}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise GenError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, value = line.partition("=")
                key = key.strip()
                if key not in types:
                    raise GenError(f"{path}:{lineno}: unknown config key {key!r}")
                typ = {"str": str, "float": float, "int": int}[types[key]]
                kwargs[key] = typ(value.strip())
        return cls(**kwargs)


@dataclass
class GlyphMeta:
    symbol: str
    rotation_deg: float
    gray_level: int
    x_offset: int
    y_offset: int
    rendered_case: str  # upper | lower | n/a
    width: int  # rendered bitmap width, for overlap analysis

    def to_json_obj(self):
        return {
            "symbol": self.symbol,
            "rotation_deg": round(self.rotation_deg, 4),
            "gray_level": self.gray_level,
            "x_offset": self.x_offset,
            "y_offset": self.y_offset,
            "rendered_case": self.rendered_case,
            "width": self.width,
        }

    @classmethod
    def from_json_obj(cls, obj):
        return cls(
            obj["symbol"],
            obj["rotation_deg"],
            obj["gray_level"],
            obj["x_offset"],
            obj["y_offset"],
            obj["rendered_case"],
            obj["width"],
        )


@dataclass
class CaptchaSample:
    image: np.ndarray  # (HEIGHT, WIDTH) uint8, 255 = background
    label: str
    glyphs: list
    seed: int


def transform_glyph(alpha: np.ndarray, angle_deg: float, scale: float) -> np.ndarray:
    """Rotate (counter-clockwise for positive angles) and scale an alpha bitmap.

    Inverse-mapped bilinear resampling; output is the tight bounding box of
    the transformed glyph, zero-filled outside the source.
    """
    h, w = alpha.shape
    rad = math.radians(angle_deg)
    c, s = math.cos(rad), math.sin(rad)
    out_w = max(1, math.ceil((w * abs(c) + h * abs(s)) * scale))
    out_h = max(1, math.ceil((h * abs(c) + w * abs(s)) * scale))
    yy, xx = np.meshgrid(np.arange(out_h), np.arange(out_w), indexing="ij")
    xd = xx - (out_w - 1) / 2.0
    yd = yy - (out_h - 1) / 2.0
    # screen coordinates have y pointing down, so visual CCW is a clockwise
    # rotation of the (x, y) pairs; the inverse map rotates the other way
    sx = (xd * c - yd * s) / scale + (w - 1) / 2.0
    sy = (xd * s + yd * c) / scale + (h - 1) / 2.0
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    def sample(yi, xi):
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = alpha[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
        return np.where(inside, vals, 0.0)

    top = sample(y0, x0) * (1 - fx) + sample(y0, x0 + 1) * fx
    bot = sample(y0 + 1, x0) * (1 - fx) + sample(y0 + 1, x0 + 1) * fx
    out = np.rint(top * (1 - fy) + bot * fy).astype(np.uint8)
    return out


def _blit(canvas: np.ndarray, alpha: np.ndarray, gray: int, x0: int, y0: int):
    """Alpha-blend a glyph bitmap toward its gray level, clipped to the canvas."""
    gh, gw = alpha.shape
    cy0, cy1 = max(y0, 0), min(y0 + gh, HEIGHT)
    cx0, cx1 = max(x0, 0), min(x0 + gw, WIDTH)
    if cy0 >= cy1 or cx0 >= cx1:
        return
    a = alpha[cy0 - y0 : cy1 - y0, cx0 - x0 : cx1 - x0].astype(np.float64) / 255.0
    region = canvas[cy0:cy1, cx0:cx1]
    region[:] = np.rint(region * (1.0 - a) + gray * a).astype(np.uint8)


def _draw_segment(canvas, x0, y0, x1, y1, gray, thickness):
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, n)).astype(np.int64)
    ys = np.rint(np.linspace(y0, y1, n)).astype(np.int64)
    for t in range(thickness):
        yt = np.clip(ys + t, 0, HEIGHT - 1)
        xt = np.clip(xs, 0, WIDTH - 1)
        canvas[yt, xt] = np.minimum(canvas[yt, xt], gray)


def _draw_crossing_curve(canvas, rng: SplitMix64, cfg: GenConfig):
    """One quadratic curve across the glyph band, drawn as short segments.

    Breakpoints are spaced so no straight segment exceeds the configured cap
    (kept below one glyph width).
    """
    x0 = rng.uniform(0.0, 8.0)
    x2 = rng.uniform(WIDTH - 8.0, WIDTH - 1.0)
    y0 = rng.uniform(8.0, HEIGHT - 8.0)
    y2 = rng.uniform(8.0, HEIGHT - 8.0)
    xm = rng.uniform(WIDTH * 0.3, WIDTH * 0.7)
    ym = rng.uniform(4.0, HEIGHT - 4.0)
    gray = rng.randint(cfg.curve_gray_min, cfg.curve_gray_max)
    seg = max(4.0, min(cfg.curve_segment_px, 24.0))
    steps = max(4, int(math.ceil(2.2 * WIDTH / seg)))
    ts = np.linspace(0.0, 1.0, steps + 1)
    xs = (1 - ts) ** 2 * x0 + 2 * (1 - ts) * ts * xm + ts**2 * x2
    ys = (1 - ts) ** 2 * y0 + 2 * (1 - ts) * ts * ym + ts**2 * y2
    for i in range(steps):
        _draw_segment(canvas, xs[i], ys[i], xs[i + 1], ys[i + 1], gray, cfg.curve_thickness)


def pepper_dot_count(rng: SplitMix64, cfg: GenConfig) -> int:
    """Dot count for one image: rounded Gaussian draw, clamped at zero."""
    return max(0, int(round(rng.gauss(cfg.dot_count_mean, cfg.dot_count_std))))


def _add_pepper_noise(canvas, rng: SplitMix64, cfg: GenConfig):
    for _ in range(pepper_dot_count(rng, cfg)):
        x = rng.randint(0, WIDTH - 1)
        y = rng.randint(0, HEIGHT - 1)
        size = rng.randint(cfg.dot_size_min, cfg.dot_size_max)
        gray = rng.randint(cfg.dot_gray_min, cfg.dot_gray_max)
        region = canvas[y : y + size, x : x + size]
        region[:] = np.minimum(region, gray)


def render_sample(label: str, config: GenConfig, seed: int) -> CaptchaSample:
    """Render one CAPTCHA; a pure function of (label, config, seed)."""
    charset = Charset.from_kind(config.charset)
    if not 1 <= len(label) <= MAX_LENGTH:
        raise GenError(f"label length {len(label)} outside [1, {MAX_LENGTH}]")
    for sym in label:
        charset.index(sym)

    rng = SplitMix64(seed)
    canvas = np.full((HEIGHT, WIDTH), 255, np.uint8)
    L = len(label)
    margin = 6.0
    slot_w = (WIDTH - 2 * margin) / L
    glyphs = []
    for i, sym in enumerate(label):
        if sym.isalpha():
            case = "upper" if rng.uniform() < 0.5 else "lower"
        else:
            case = "n/a"
        rotation = rng.uniform(-config.rotation_max_deg, config.rotation_max_deg)
        scale = rng.uniform(config.scale_min, config.scale_max)
        gray = rng.randint(config.glyph_gray_min, config.glyph_gray_max)
        bitmap = transform_glyph(glyph_bitmap(sym, case), rotation, scale)
        gh, gw = bitmap.shape
        cx = margin + slot_w * (i + 0.5) + rng.uniform(-config.x_jitter, config.x_jitter)
        cy = HEIGHT / 2.0 + rng.uniform(-config.y_jitter, config.y_jitter)
        x0 = int(round(cx - gw / 2.0))
        y0 = int(round(cy - gh / 2.0))
        _blit(canvas, bitmap, gray, x0, y0)
        glyphs.append(GlyphMeta(sym, rotation, gray, x0, y0, case, gw))

    for _ in range(config.curve_count):
        _draw_crossing_curve(canvas, rng, config)
    _add_pepper_noise(canvas, rng, config)
    return CaptchaSample(canvas, label, glyphs, seed)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def balanced_label(perm_index: int, length: int, charset: Charset) -> str:
    """Label for permutation perm_index: base-D digits, most significant first."""
    D = len(charset)
    out = []
    v = perm_index
    for _ in range(length):
        out.append(charset.symbols[v % D])
        v //= D
    return "".join(reversed(out))


def _sample_label(sample_seed: int, length: int, charset: Charset) -> str:
    rng = SplitMix64(derive_seed(sample_seed, 0))
    return "".join(charset.symbols[rng.randint(0, len(charset) - 1)] for _ in range(length))


def _build_sample(args):
    index, label, config, render_seed = args
    sample = render_sample(label, config, render_seed)
    meta = json.dumps([g.to_json_obj() for g in sample.glyphs], sort_keys=True, separators=(",", ":"))
    fname = f"{index:08d}.pgm"
    line = f"{fname}\t{label}\t{meta}\t{render_seed}\n"
    return index, fname, pgm_bytes(sample.image), line


def generate_dataset(
    count: int,
    length: int,
    charset: Charset,
    config: GenConfig,
    master_seed: int,
    out_dir,
    balanced_k: int | None = None,
    workers: int = 1,
    progress=None,
) -> Path:
    """Write `count` samples plus manifest.tsv and the effective config; returns the manifest path.

    Uniform mode draws labels per sample; balanced mode emits exactly
    balanced_k images per label permutation, requiring count == k * D^length.
    """
    if count < 1:
        raise GenError(f"count must be >= 1, got {count}")
    if not 1 <= length <= MAX_LENGTH:
        raise GenError(f"length {length} outside [1, {MAX_LENGTH}]")
    cfg = replace(config, charset=charset.kind)
    D = len(charset)
    if balanced_k is not None:
        if balanced_k < 1:
            raise GenError(f"balanced k must be >= 1, got {balanced_k}")
        want = balanced_k * D**length
        if count != want:
            raise GenError(
                f"balanced mode needs count == k * D^L = {balanced_k} * {D}^{length} "
                f"= {want}, got {count}"
            )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(index):
        sample_seed = derive_seed(master_seed, index)
        if balanced_k is not None:
            label = balanced_label(index // balanced_k, length, charset)
        else:
            label = _sample_label(sample_seed, length, charset)
        return index, label, cfg, derive_seed(sample_seed, 1)

    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as mf:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(_build_sample, (job(i) for i in range(count)), chunksize=64)
                for index, fname, data, line in results:
                    (out_dir / fname).write_bytes(data)
                    mf.write(line)
                    if progress:
                        progress(index + 1, count)
        else:
            for i in range(count):
                index, fname, data, line = _build_sample(job(i))
                (out_dir / fname).write_bytes(data)
                mf.write(line)
                if progress:
                    progress(index + 1, count)
    cfg.save(out_dir / CONFIG_NAME)
    return manifest_path


@dataclass
class ManifestEntry:
    filename: str
    label: str
    glyphs: list  # GlyphMeta list, or None when metadata is absent
    seed: int


def load_manifest(manifest_path) -> list:
    entries = []
    with open(manifest_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise GenError(f"{manifest_path}:{lineno}: expected 4 tab-separated fields")
            fname, label, meta_json, seed = parts
            glyphs = None
            if meta_json and meta_json != "null":
                glyphs = [GlyphMeta.from_json_obj(o) for o in json.loads(meta_json)]
            entries.append(ManifestEntry(fname, label, glyphs, int(seed)))
    if not entries:
        raise GenError(f"{manifest_path}: manifest is empty")
    return entries
