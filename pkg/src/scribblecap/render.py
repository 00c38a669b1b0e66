"""Raster rendering of synthetic grid images for display clients.

The model never consumes these pixels; features come from the symbolic
grid. Rendering exists so the service can hand the UI something to draw
scribbles on, with cell geometry that matches the patch grid exactly.
"""
from __future__ import annotations

import io

from PIL import Image, ImageDraw

from .data import SyntheticImage

RGB = {
    "red": (220, 60, 50),
    "green": (70, 170, 90),
    "blue": (65, 105, 225),
    "yellow": (235, 200, 50),
    "purple": (150, 80, 200),
    "orange": (240, 140, 40),
}
BACKGROUND = (248, 248, 245)
GRIDLINE = (210, 210, 210)
FALLBACK = (120, 120, 120)


def _cell_box(r: int, c: int, cell_px: int, pad: int = 0) -> tuple[int, int, int, int]:
    return (c * cell_px + pad, r * cell_px + pad,
            (c + 1) * cell_px - 1 - pad, (r + 1) * cell_px - 1 - pad)


def _draw_shape(draw: ImageDraw.ImageDraw, shape: str, box, fill) -> None:
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    if shape == "circle":
        draw.ellipse(box, fill=fill)
    elif shape == "square":
        draw.rectangle(box, fill=fill)
    elif shape == "triangle":
        draw.polygon([(cx, y0), (x1, y1), (x0, y1)], fill=fill)
    elif shape == "diamond":
        draw.polygon([(cx, y0), (x1, cy), (cx, y1), (x0, cy)], fill=fill)
    elif shape == "cross":
        w = (x1 - x0) / 3
        draw.rectangle((cx - w / 2, y0, cx + w / 2, y1), fill=fill)
        draw.rectangle((x0, cy - w / 2, x1, cy + w / 2), fill=fill)
    else:  # unknown inventory entry: still visible, never invisible
        draw.rectangle(box, fill=fill)


def render_image(image: SyntheticImage, cell_px: int = 48) -> Image.Image:
    """Deterministic raster: gridlines plus one shape spanning each object's
    cell footprint. Canvas is (grid*cell_px) square, matching the patch grid
    so normalized UI coordinates map straight onto cells."""
    if cell_px < 8:
        raise ValueError(f"cell_px too small to draw shapes: {cell_px}")
    side = image.grid * cell_px
    img = Image.new("RGB", (side, side), BACKGROUND)
    draw = ImageDraw.Draw(img)
    for i in range(image.grid + 1):
        draw.line([(0, i * cell_px), (side, i * cell_px)], fill=GRIDLINE)
        draw.line([(i * cell_px, 0), (i * cell_px, side)], fill=GRIDLINE)
    for obj in image.objects:
        rows = [r for r, _ in obj.cells]
        cols = [c for _, c in obj.cells]
        x0, y0, _, _ = _cell_box(min(rows), min(cols), cell_px, pad=cell_px // 8)
        _, _, x1, y1 = _cell_box(max(rows), max(cols), cell_px, pad=cell_px // 8)
        _draw_shape(draw, obj.shape, (x0, y0, x1, y1), RGB.get(obj.color, FALLBACK))
    return img


def render_png(image: SyntheticImage, cell_px: int = 48) -> bytes:
    buf = io.BytesIO()
    render_image(image, cell_px).save(buf, format="PNG")
    return buf.getvalue()
