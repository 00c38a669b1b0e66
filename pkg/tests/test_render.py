"""Raster rendering: geometry, colors, determinism."""
import numpy as np
import pytest

from scribblecap.data import PlacedObject, SynthConfig, SyntheticImage, make_synthetic_dataset
from scribblecap.render import BACKGROUND, FALLBACK, RGB, render_image, render_png


def one_object_image(color="red", shape="square", cells=((1, 1),)):
    return SyntheticImage("img-x", 4, (PlacedObject(color, shape, tuple(cells)),))


class TestGeometry:
    def test_canvas_side_is_grid_times_cell(self):
        img = render_image(one_object_image(), cell_px=20)
        assert img.size == (80, 80)

    def test_object_cell_center_colored(self):
        img = render_image(one_object_image("blue", "square", ((2, 1),)), cell_px=20)
        # cell (row 2, col 1) center: x = 1.5*20, y = 2.5*20
        assert img.getpixel((30, 50)) == RGB["blue"]

    def test_empty_cell_is_background(self):
        img = render_image(one_object_image("blue", "square", ((2, 1),)), cell_px=20)
        assert img.getpixel((70, 10)) == BACKGROUND

    def test_multicell_footprint_spans_cells(self):
        img = render_image(one_object_image("green", "square", ((1, 1), (1, 2))),
                           cell_px=20)
        assert img.getpixel((30, 30)) == RGB["green"]
        assert img.getpixel((50, 30)) == RGB["green"]

    def test_every_shape_marks_its_center(self):
        for shape in ("circle", "square", "triangle", "diamond", "cross"):
            img = render_image(one_object_image("red", shape, ((0, 0),)), cell_px=24)
            center = img.getpixel((12, 12))
            # triangle's centroid sits below the box center; probe lower
            probe = img.getpixel((12, 16)) if shape == "triangle" else center
            assert probe == RGB["red"], shape

    def test_unknown_inventory_still_visible(self):
        img = render_image(one_object_image("magenta", "star", ((1, 1),)), cell_px=20)
        assert img.getpixel((30, 30)) == FALLBACK

    def test_tiny_cells_rejected(self):
        with pytest.raises(ValueError, match="cell_px"):
            render_image(one_object_image(), cell_px=4)


class TestDeterminism:
    def test_png_bytes_stable(self):
        dataset = make_synthetic_dataset(SynthConfig(n_images=3, grid=5, seed=3))
        for image in dataset.images.values():
            assert render_png(image) == render_png(image)

    def test_distinct_images_distinct_bytes(self):
        dataset = make_synthetic_dataset(SynthConfig(n_images=4, grid=5, seed=3))
        blobs = {render_png(img) for img in dataset.images.values()}
        assert len(blobs) > 1
