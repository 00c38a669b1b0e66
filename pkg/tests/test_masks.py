import numpy as np
import pytest

from scribblecap import masks as M


def grid(rows):
    return np.array(rows, dtype=bool)


class TestProposal:
    def test_basic(self):
        p = M.MaskProposal("img", grid([[0, 1], [0, 0]]))
        assert not p.is_empty
        assert p.area == 1

    def test_empty(self):
        p = M.MaskProposal("img", grid([[0, 0], [0, 0]]))
        assert p.is_empty

    def test_rejects_non_2d(self):
        with pytest.raises(M.MaskError):
            M.MaskProposal("img", np.zeros(3, dtype=bool))


class TestDilate:
    def test_radius_zero_is_copy(self):
        g = grid([[0, 1], [0, 0]])
        out = M.dilate_mask(g, 0)
        assert np.array_equal(out, g)
        assert out is not g

    def test_radius_one_square(self):
        g = np.zeros((5, 5), dtype=bool)
        g[2, 2] = True
        out = M.dilate_mask(g, 1)
        assert out.sum() == 9
        assert out[1:4, 1:4].all()

    def test_clips_at_border(self):
        g = np.zeros((3, 3), dtype=bool)
        g[0, 0] = True
        out = M.dilate_mask(g, 1)
        assert out.sum() == 4

    def test_radius_swallows_grid(self):
        g = np.zeros((4, 4), dtype=bool)
        g[1, 1] = True
        assert M.dilate_mask(g, 7).all()

    def test_negative_radius_rejected(self):
        with pytest.raises(M.MaskError):
            M.dilate_mask(np.zeros((2, 2), dtype=bool), -1)


class TestRLE:
    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            g = rng.uniform(size=(6, 7)) < 0.4
            runs = M.rle_encode(g)
            assert np.array_equal(M.rle_decode(runs, g.shape), g)

    def test_leading_zero_run(self):
        g = grid([[1, 1, 0], [0, 0, 0]])
        assert M.rle_encode(g) == [0, 2, 4]

    def test_all_zeros(self):
        g = np.zeros((2, 2), dtype=bool)
        assert M.rle_encode(g) == [4]

    def test_decode_length_mismatch(self):
        with pytest.raises(M.MaskError):
            M.rle_decode([0, 3], (2, 2))
