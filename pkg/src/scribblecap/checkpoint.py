"""Binary model bundle: magic, JSON header, little-endian float32 payload.

Layout::

    8 bytes   magic  b"SCAPCKP1"
    8 bytes   header length, little-endian uint64
    N bytes   header JSON (UTF-8, sorted keys): version, configs, vocab
              words, array declarations in payload order, payload sha256,
              seal checksums
    M bytes   concatenated arrays, float32 little-endian, declared order

Everything needed to rebuild the model travels in the file; loading
verifies the payload hash, every declared shape, and the frozen-component
checksums, and fails without partial state on truncation or corruption.
Checkpoints are float32 regardless of in-memory compute dtype.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import SynthConfig, Vocabulary
from .lm import FrozenLM, LMConfig
from .qformer import QFormerConfig, VisualEncoder, init_qformer_params

MAGIC = b"SCAPCKP1"
VERSION = 1

_GROUP_ORDER = ("qformer", "lm", "visual")


class CheckpointError(ValueError):
    pass


@dataclass
class Model:
    """Everything a downstream task needs: data config, vocab, all params."""

    synth: SynthConfig
    vocab: Vocabulary
    visual: VisualEncoder
    qf_cfg: QFormerConfig
    qf_params: dict[str, np.ndarray]
    lm: FrozenLM

    def frozen_checksums(self) -> dict[str, str]:
        return {"lm": self.lm.checksum(), "visual": self.visual.checksum()}


def _declared_arrays(model: Model) -> list[tuple[str, str, np.ndarray]]:
    out = []
    for name in sorted(model.qf_params):
        out.append(("qformer", name, model.qf_params[name]))
    for name in sorted(model.lm.params):
        out.append(("lm", name, model.lm.params[name]))
    out.append(("visual", "weight", model.visual.weight))
    return out


def save_model(model: Model, path: str) -> None:
    if not model.lm.sealed:
        raise CheckpointError("refusing to save an unsealed language model")
    arrays = _declared_arrays(model)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for _, _, a in arrays)
    header = {
        "version": VERSION,
        "qformer_config": model.qf_cfg.to_json(),
        "lm_config": model.lm.cfg.to_json(),
        "synth_config": model.synth.to_json(),
        "visual": {"seed": model.visual.seed, "d_visual": model.visual.d_visual,
                   "dtype": model.visual.dtype, "checksum": model.visual.checksum()},
        "lm_seal_checksum": model.lm.seal_checksum,
        "vocab_words": model.vocab.words,
        "arrays": [{"group": g, "name": n, "shape": list(a.shape)} for g, n, a in arrays],
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _expected_shapes(qf_cfg: QFormerConfig, lm_cfg: LMConfig,
                     visual: VisualEncoder) -> dict[tuple[str, str], tuple[int, ...]]:
    ref_q = init_qformer_params(qf_cfg, np.random.default_rng(0))
    lm_ref = FrozenLM(lm_cfg)
    shapes = {("qformer", k): v.shape for k, v in ref_q.items()}
    shapes.update({("lm", k): v.shape for k, v in lm_ref.params.items()})
    shapes[("visual", "weight")] = visual.weight.shape
    return shapes


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}, "
                              f"expected {VERSION}")

    payload = raw[16 + hlen:]
    declared = header["arrays"]
    expected_bytes = sum(4 * int(np.prod(d["shape"])) for d in declared)
    if len(payload) != expected_bytes:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, "
                              f"header declares {expected_bytes} (truncated or padded)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch (corrupt file)")

    qf_cfg = QFormerConfig.from_json(header["qformer_config"])
    lm_cfg = LMConfig.from_json(header["lm_config"])
    synth = SynthConfig.from_json(header["synth_config"])
    vis = header["visual"]

    arrays: dict[tuple[str, str], np.ndarray] = {}
    off = 0
    for d in declared:
        shape = tuple(int(s) for s in d["shape"])
        n = 4 * int(np.prod(shape))
        a = np.frombuffer(payload[off:off + n], dtype="<f4").reshape(shape)
        arrays[(d["group"], d["name"])] = a
        off += n

    visual_weight = arrays.get(("visual", "weight"))
    if visual_weight is None:
        raise CheckpointError(f"{path}: missing visual encoder weight")
    visual = VisualEncoder.from_weight(synth, int(vis["d_visual"]), int(vis["seed"]),
                                       str(vis["dtype"]), visual_weight)
    if visual.checksum() != vis["checksum"]:
        raise CheckpointError(f"{path}: visual encoder checksum mismatch")

    shapes = _expected_shapes(qf_cfg, lm_cfg, visual)
    for key, a in arrays.items():
        want = shapes.get(key)
        if want is None:
            raise CheckpointError(f"{path}: unexpected array {key[0]}.{key[1]}")
        if a.shape != want:
            raise CheckpointError(f"{path}: array {key[0]}.{key[1]} has shape "
                                  f"{a.shape}, config implies {want}")
    missing = set(shapes) - set(arrays)
    if missing:
        raise CheckpointError(f"{path}: missing arrays {sorted(missing)}")

    qf_dt = qf_cfg.np_dtype()
    qf_params = {name: np.array(arrays[("qformer", name)], dtype=qf_dt)
                 for group, name in arrays if group == "qformer"}
    lm_dt = lm_cfg.np_dtype()
    lm_params = {name: np.array(arrays[("lm", name)], dtype=lm_dt)
                 for group, name in arrays if group == "lm"}
    lm = FrozenLM(lm_cfg, lm_params)
    lm.seal()
    if lm.seal_checksum != header["lm_seal_checksum"]:
        raise CheckpointError(f"{path}: language model seal checksum mismatch")

    vocab = Vocabulary(header["vocab_words"])
    return Model(synth=synth, vocab=vocab, visual=visual,
                 qf_cfg=qf_cfg, qf_params=qf_params, lm=lm)
