import numpy as np
import pytest

from scribblecap import points as P


class TestQuantize:
    def test_worked_values(self):
        assert P.quantize_coord(0.324) == 32
        assert P.quantize_coord(0.643) == 64
        assert P.quantize_coord(0.369) == 37
        assert P.quantize_coord(0.622) == 62

    def test_half_rounds_away_from_zero(self):
        assert P.quantize_coord(0.365) == 37
        assert P.quantize_coord(0.005) == 1
        assert P.quantize_coord(0.125) == 13

    def test_endpoints(self):
        assert P.quantize_coord(0.0) == 0
        assert P.quantize_coord(1.0) == 100

    def test_out_of_range_rejected(self):
        with pytest.raises(P.PointError):
            P.quantize_coord(-0.01)
        with pytest.raises(P.PointError):
            P.quantize_coord(1.5)

    def test_binary_float_near_half(self):
        # 0.145 * 100 is 14.499999... in binary; the decimal value still rounds up.
        assert P.quantize_coord(0.145) == 15


class TestCodec:
    def test_paper_example(self):
        s = P.Scribble.from_xy([(0.324, 0.643), (0.369, 0.622)])
        assert P.encode_points(s) == "[32 64] [37 62]"

    def test_empty_scribble_is_empty_string(self):
        assert P.encode_points(P.Scribble(())) == ""

    def test_decode_inverts(self):
        qs = P.decode_point_string("[32 64] [37 62]")
        assert [(q.xq, q.yq) for q in qs] == [(32, 64), (37, 62)]

    def test_decode_empty(self):
        assert P.decode_point_string("") == []

    def test_decode_rejects_malformed(self):
        for bad in ("[32 64", "[32  64]", "[32 64]  [1 2]", "[101 5]".replace("101", "abc"),
                    "[32 64] ", " [32 64]", "[320 64]"):
            with pytest.raises(P.PointParseError):
                P.decode_point_string(bad)

    def test_decode_error_names_offset(self):
        with pytest.raises(P.PointParseError) as ei:
            P.decode_point_string("[32 64] [37")
        assert ei.value.offset is not None

    def test_round_trip_random(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 12))
            pts = [(float(rng.uniform()), float(rng.uniform())) for _ in range(n)]
            s = P.Scribble.from_xy(pts)
            quantized = [P.QuantizedPoint(P.quantize_coord(x), P.quantize_coord(y)) for x, y in pts]
            assert P.decode_point_string(P.encode_points(s)) == quantized


class TestVocabTokens:
    def test_fixed_ids(self):
        v = P.point_vocab()
        assert (v.PAD, v.BOS, v.EOS) == (0, 1, 2)
        assert v.LBRACKET == 3 and v.RBRACKET == 4
        assert v.literal_id(0) == 5 and v.literal_id(100) == 105
        assert v.size == 106

    def test_tokenize_example_lengths(self):
        v = P.point_vocab()
        one = P.tokenize_points("[32 64]", v)
        two = P.tokenize_points("[32 64] [37 62]", v)
        assert len(one) == 4
        assert len(two) == 8
        assert one == [v.LBRACKET, v.literal_id(32), v.literal_id(64), v.RBRACKET]

    def test_detokenize_round_trip(self):
        v = P.point_vocab()
        s = "[0 100] [55 5]"
        assert P.detokenize_points(P.tokenize_points(s, v), v) == s

    def test_empty(self):
        v = P.point_vocab()
        assert P.tokenize_points("", v) == []
        assert P.detokenize_points([], v) == ""


class TestScribble:
    def test_timestamps_must_be_sorted(self):
        with pytest.raises(P.PointError):
            P.Scribble((P.Point2D(0.1, 0.1), P.Point2D(0.2, 0.2)), timestamps=(2.0, 1.0))

    def test_coordinates_validated(self):
        with pytest.raises(P.PointError):
            P.Point2D(1.2, 0.0)


class TestSampling:
    def test_sample_points_without_replacement_keeps_order(self):
        s = P.Scribble.from_xy([(i / 10, i / 10) for i in range(10)])
        rng = np.random.default_rng(0)
        out = P.sample_points(s, 4, rng)
        xs = [p.x for p in out.points]
        assert xs == sorted(xs)
        assert len(out.points) == 4

    def test_sample_points_with_replacement_when_short(self):
        s = P.Scribble.from_xy([(0.5, 0.5)])
        out = P.sample_points(s, 3, np.random.default_rng(0))
        assert len(out.points) == 3

    def test_sample_in_mask_hits_mask(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 2] = True
        out = P.sample_points_in_mask(mask, 5, np.random.default_rng(3))
        for p in out.points:
            assert (int(p.y * 4), int(p.x * 4)) == (1, 2)

    def test_sample_in_mask_rejects_empty(self):
        with pytest.raises(P.PointError):
            P.sample_points_in_mask(np.zeros((2, 2), dtype=bool), 1, np.random.default_rng(0))

    def test_sample_in_bbox_within(self):
        out = P.sample_points_in_bbox((0.2, 0.3, 0.4, 0.6), 20, np.random.default_rng(1))
        for p in out.points:
            assert 0.2 <= p.x <= 0.4 and 0.3 <= p.y <= 0.6

    def test_determinism(self):
        s = P.Scribble.from_xy([(i / 20, 0.5) for i in range(20)])
        a = P.sample_points(s, 6, np.random.default_rng(42))
        b = P.sample_points(s, 6, np.random.default_rng(42))
        assert a == b
