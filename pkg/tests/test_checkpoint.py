"""Checkpoint round-trip and corruption handling."""
import json
import struct

import numpy as np
import pytest

from scribblecap.checkpoint import (MAGIC, CheckpointError, Model, load_model,
                                    save_model)
from scribblecap.data import SynthConfig, Vocabulary, build_vocab
from scribblecap.lm import FrozenLM, LMConfig, build_frozen_lm
from scribblecap.qformer import QFormerConfig, VisualEncoder, init_qformer_params


@pytest.fixture(scope="module")
def model():
    synth = SynthConfig(n_images=4, grid=4, min_objects=1, max_objects=2,
                        min_scribble_points=3, max_scribble_points=5, seed=3)
    vocab = build_vocab(["red circle", "blue square 12"], max_words=16)
    qf_cfg = QFormerConfig(n_queries=3, width=16, d_visual=14, d_out=24,
                           n_layers=1, n_heads=2, ff_mult=2, max_point_tokens=32)
    qf_params = init_qformer_params(qf_cfg, np.random.default_rng(11))
    lm_cfg = LMConfig(vocab_size=vocab.size, d_model=24, n_layers=1, n_heads=2,
                      ff_mult=2, max_seq_len=48, seed=5)
    corpus = [vocab.encode("red circle") + [vocab.eos_id]]
    lm = build_frozen_lm(lm_cfg, corpus, warmup_steps=3, lr=1e-3, batch_size=2)
    visual = VisualEncoder(synth, d_visual=14, seed=21)
    return Model(synth=synth, vocab=vocab, visual=visual,
                 qf_cfg=qf_cfg, qf_params=qf_params, lm=lm)


@pytest.fixture()
def saved(model, tmp_path):
    path = str(tmp_path / "m.ckpt")
    save_model(model, path)
    return path


class TestRoundTrip:
    def test_all_arrays_and_configs_survive(self, model, saved):
        loaded = load_model(saved)
        assert loaded.qf_cfg == model.qf_cfg
        assert loaded.lm.cfg == model.lm.cfg
        assert loaded.synth == model.synth
        assert loaded.vocab.words == model.vocab.words
        for key, a in model.qf_params.items():
            np.testing.assert_array_equal(loaded.qf_params[key], a)
        for key, a in model.lm.params.items():
            np.testing.assert_array_equal(loaded.lm.params[key], a)
        np.testing.assert_array_equal(loaded.visual.weight, model.visual.weight)

    def test_loaded_lm_is_sealed_with_same_checksum(self, model, saved):
        loaded = load_model(saved)
        assert loaded.lm.sealed
        assert loaded.lm.seal_checksum == model.lm.seal_checksum
        loaded.lm.assert_frozen()

    def test_frozen_checksums_match(self, model, saved):
        assert load_model(saved).frozen_checksums() == model.frozen_checksums()

    def test_save_is_deterministic(self, model, tmp_path):
        a, b = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
        save_model(model, a)
        save_model(model, b)
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_refuses_unsealed_lm(self, model, tmp_path):
        loose = FrozenLM(model.lm.cfg)
        bad = Model(synth=model.synth, vocab=model.vocab, visual=model.visual,
                    qf_cfg=model.qf_cfg, qf_params=model.qf_params, lm=loose)
        with pytest.raises(CheckpointError, match="unsealed"):
            save_model(bad, str(tmp_path / "x.ckpt"))


def _split(raw: bytes):
    (hlen,) = struct.unpack("<Q", raw[8:16])
    return json.loads(raw[16:16 + hlen]), raw[16 + hlen:]


def _join(header: dict, payload: bytes) -> bytes:
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<Q", len(blob)) + blob + payload


class TestCorruption:
    def test_bad_magic(self, saved, tmp_path):
        raw = open(saved, "rb").read()
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTMAGIC" + raw[8:])
        with pytest.raises(CheckpointError, match="magic"):
            load_model(str(p))

    def test_truncated_payload(self, saved, tmp_path):
        raw = open(saved, "rb").read()
        p = tmp_path / "trunc.ckpt"
        p.write_bytes(raw[:-64])
        with pytest.raises(CheckpointError, match="truncated|declares"):
            load_model(str(p))

    def test_flipped_payload_byte(self, saved, tmp_path):
        raw = bytearray(open(saved, "rb").read())
        raw[-5] ^= 0xFF
        p = tmp_path / "flip.ckpt"
        p.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="hash"):
            load_model(str(p))

    def test_version_mismatch(self, saved, tmp_path):
        header, payload = _split(open(saved, "rb").read())
        header["version"] = 999
        p = tmp_path / "ver.ckpt"
        p.write_bytes(_join(header, payload))
        with pytest.raises(CheckpointError, match="version"):
            load_model(str(p))

    def test_shape_mismatch_against_config(self, saved, tmp_path):
        header, payload = _split(open(saved, "rb").read())
        for entry in header["arrays"]:
            if entry["group"] == "qformer" and entry["name"] == "queries":
                n, w = entry["shape"]
                entry["shape"] = [w, n]  # same byte count, wrong shape
        p = tmp_path / "shape.ckpt"
        p.write_bytes(_join(header, payload))
        with pytest.raises(CheckpointError, match="shape"):
            load_model(str(p))

    def test_missing_array(self, saved, tmp_path):
        header, payload = _split(open(saved, "rb").read())
        entry = header["arrays"][0]
        assert entry["name"] == "blocks.0.ca.bk" or entry["group"] == "qformer"
        n = 4 * int(np.prod(entry["shape"]))
        header["arrays"] = header["arrays"][1:]
        import hashlib

        payload = payload[n:]
        header["payload_sha256"] = hashlib.sha256(payload).hexdigest()
        p = tmp_path / "miss.ckpt"
        p.write_bytes(_join(header, payload))
        with pytest.raises(CheckpointError, match="missing"):
            load_model(str(p))

    def test_garbage_header_json(self, saved, tmp_path):
        raw = open(saved, "rb").read()
        (hlen,) = struct.unpack("<Q", raw[8:16])
        body = b"{" + b"\xff" * (hlen - 1)
        p = tmp_path / "gjson.ckpt"
        p.write_bytes(raw[:16] + body + raw[16 + hlen:])
        with pytest.raises(CheckpointError, match="header"):
            load_model(str(p))
