"""JSON-over-HTTP service backing the scribble UI.

Thin wrappers over the same library calls the CLI uses, so the two can
never disagree. The server is stateless: dialogue history is echoed
through the client in full (soft rows included — JSON floats round-trip
exactly), and every request derives its RNG from (seed, image id, route),
so concurrent requests cannot influence each other's responses.

Every response body is exactly one of {"payload": ...} or {"error":
{"code", "message"}} — never both.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

import numpy as np

from .checkpoint import Model
from .data import SyntheticDataset, make_synthetic_dataset
from .lm import Prompt, SoftSegment, lm_generate
from .points import Point2D, PointError, Scribble, encode_points
from .qformer import cross_attention_map
from .render import render_png
from .seeding import derive_rng
from .tasks import (
    DialogueState,
    DialogueTurn,
    TaskError,
    dialogue_step,
    region_output,
)

MAX_BODY_BYTES = 1 << 20


class ApiError(Exception):
    """Maps straight onto an HTTP status + stable error code."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


def _bad_request(message: str) -> ApiError:
    return ApiError(400, "bad_request", message)


@dataclass
class Service:
    """Request-independent state: one read-only model and its dataset."""

    model: Model
    dataset: SyntheticDataset
    default_seed: int

    @classmethod
    def from_model(cls, model: Model, default_seed: int) -> "Service":
        return cls(model, make_synthetic_dataset(model.synth), default_seed)

    # ---- request field helpers

    def _image(self, body: dict):
        image_id = body.get("image_id")
        if not isinstance(image_id, str):
            raise _bad_request("image_id must be a string")
        image = self.dataset.images.get(image_id)
        if image is None:
            raise ApiError(404, "unknown_image", f"no image {image_id!r}")
        return image

    def _points(self, body: dict) -> list[Point2D]:
        raw = body.get("points", [])
        if not isinstance(raw, list):
            raise _bad_request("points must be a list of {x, y}")
        points = []
        for i, obj in enumerate(raw):
            if not isinstance(obj, dict) or "x" not in obj or "y" not in obj:
                raise _bad_request(f"points[{i}] must carry x and y")
            try:
                points.append(Point2D(float(obj["x"]), float(obj["y"])))
            except (TypeError, ValueError, PointError) as exc:
                raise _bad_request(f"points[{i}]: {exc}") from exc
        return points

    def _seed(self, body: dict) -> int:
        seed = body.get("seed", self.default_seed)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise _bad_request("seed must be an integer")
        return seed

    def _k(self, body: dict) -> int:
        k = body.get("k", 6)
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise _bad_request("k must be a positive integer")
        return k

    def _scribble(self, points: list[Point2D]) -> Optional[Scribble]:
        return Scribble(tuple(points)) if points else None

    # ---- endpoints

    def encode(self, body: dict) -> dict:
        return {"tokens": encode_points(self._points(body))}

    def caption(self, body: dict) -> dict:
        image = self._image(body)
        points = self._points(body)
        k = self._k(body)
        rng = derive_rng(self._seed(body), image.image_id)
        out = region_output(self.model, image, self._scribble(points), k, rng)
        ids = lm_generate(self.model.lm,
                          Prompt((SoftSegment(out.z_hat, "region"),)),
                          max_len=16, eos_id=self.model.vocab.eos_id)
        return {"caption": self.model.vocab.decode(ids),
                "tokens": encode_points(points)}

    def attention(self, body: dict) -> dict:
        image = self._image(body)
        points = self._points(body)
        k = self._k(body)
        layer = body.get("layer")
        head = body.get("head")
        for name, val in (("layer", layer), ("head", head)):
            if val is not None and (not isinstance(val, int) or isinstance(val, bool)):
                raise _bad_request(f"{name} must be an integer when given")
        rng = derive_rng(self._seed(body), image.image_id)
        out = region_output(self.model, image, self._scribble(points), k, rng)
        try:
            att = cross_attention_map(out, layer=layer, head=head)
        except ValueError as exc:
            raise _bad_request(str(exc)) from exc
        return {"rows": [float(v) for v in att.ravel()],
                "dims": [int(att.shape[0]), int(att.shape[1])],
                "grid": [image.grid, image.grid],
                "mean": [float(v) for v in att.mean(axis=0)],
                "tokens": encode_points(points)}

    def dialogue(self, body: dict) -> dict:
        image = self._image(body)
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise _bad_request("text must be a non-empty string")
        points = self._points(body)
        k = self._k(body)
        seed = self._seed(body)
        turns = self._history(body, image)
        rng = derive_rng(seed, image.image_id, "dialogue", str(len(turns)))
        try:
            reply, state = dialogue_step(self.model, image,
                                         DialogueState(turns), text,
                                         self._scribble(points), k, rng)
        except TaskError as exc:
            raise _bad_request(str(exc)) from exc
        return {"reply": reply,
                "truncated": state.truncated,
                "history": [self._turn_to_json(t) for t in state.turns]}

    def _history(self, body: dict, image) -> list[DialogueTurn]:
        raw = body.get("history", [])
        if not isinstance(raw, list):
            raise _bad_request("history must be a list of turns")
        d_model = self.model.lm.cfg.d_model
        # follow the model's precision: checkpoints run float32, in-process
        # training runs float64, and JSON round-trips float32 exactly
        dtype = self.model.lm.params["tok_emb"].dtype
        turns = []
        for i, obj in enumerate(raw):
            if not isinstance(obj, dict):
                raise _bad_request(f"history[{i}] must be an object")
            role = obj.get("role")
            text = obj.get("text")
            if role not in ("user", "model") or not isinstance(text, str):
                raise _bad_request(f"history[{i}] needs role user|model and text")
            scribble = None
            if obj.get("points"):
                scribble = Scribble(tuple(self._points(obj)))
            z_hat = None
            if obj.get("z") is not None:
                try:
                    z = np.asarray(obj["z"], dtype=dtype)
                except (TypeError, ValueError) as exc:
                    raise _bad_request(f"history[{i}].z: {exc}") from exc
                if z.ndim != 2 or z.shape[1] != d_model:
                    raise _bad_request(f"history[{i}].z must be rows of width "
                                       f"{d_model}")
                z_hat = z
            turns.append(DialogueTurn(role, text, scribble, z_hat))
        try:
            DialogueState(turns)
        except TaskError as exc:
            raise _bad_request(str(exc)) from exc
        return turns

    @staticmethod
    def _turn_to_json(turn: DialogueTurn) -> dict:
        out: dict = {"role": turn.role, "text": turn.text}
        if turn.scribble is not None and not turn.scribble.is_empty:
            out["points"] = [{"x": p.x, "y": p.y} for p in turn.scribble.points]
        if turn.z_hat is not None:
            out["z"] = [[float(v) for v in row] for row in np.asarray(turn.z_hat)]
        return out

    def health(self) -> dict:
        return {"status": "ok",
                "grid": self.model.synth.grid,
                "n_images": len(self.dataset.images),
                "n_queries": self.model.qf_cfg.n_queries,
                "colors": list(self.model.synth.colors),
                "shapes": list(self.model.synth.shapes)}

    def images(self, limit: int) -> dict:
        ids = sorted(self.dataset.images)
        return {"images": ids[:limit] if limit else ids}

    def image_png(self, image_id: str, cell_px: int) -> bytes:
        image = self.dataset.images.get(image_id)
        if image is None:
            raise ApiError(404, "unknown_image", f"no image {image_id!r}")
        try:
            return render_png(image, cell_px)
        except ValueError as exc:
            raise _bad_request(str(exc)) from exc


def _json_bytes(obj: dict) -> bytes:
    return (json.dumps(obj, sort_keys=True) + "\n").encode("utf-8")


class Handler(BaseHTTPRequestHandler):
    service: Service  # injected by make_server

    # ---- plumbing

    def log_message(self, fmt, *args):  # quiet: tests and UIs own the console
        pass

    def _send_json(self, status: int, obj: dict) -> None:
        data = _json_bytes(obj)
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _send_payload(self, payload: dict) -> None:
        self._send_json(200, {"payload": payload})

    def _send_error_obj(self, err: ApiError) -> None:
        self._send_json(err.status, {"error": {"code": err.code,
                                               "message": str(err)}})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise ApiError(413, "too_large", "request body too large")
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise ApiError(400, "bad_json", "empty request body")
        try:
            body = json.loads(raw)
        except ValueError as exc:
            raise ApiError(400, "bad_json", f"body is not valid JSON: {exc}") from exc
        if not isinstance(body, dict):
            raise ApiError(400, "bad_json", "body must be a JSON object")
        return body

    # ---- routing

    def do_OPTIONS(self):  # CORS preflight for the browser client
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.end_headers()

    def do_GET(self):
        url = urlsplit(self.path)
        query = parse_qs(url.query)
        try:
            if url.path == "/api/health":
                self._send_payload(self.service.health())
            elif url.path == "/api/images":
                limit = int(query.get("limit", ["0"])[0])
                self._send_payload(self.service.images(limit))
            elif url.path == "/api/image":
                image_id = query.get("id", [""])[0]
                cell_px = int(query.get("cell_px", ["48"])[0])
                data = self.service.image_png(image_id, cell_px)
                self.send_response(200)
                self.send_header("Content-Type", "image/png")
                self.send_header("Content-Length", str(len(data)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(data)
            else:
                raise ApiError(404, "not_found", f"no route {url.path}")
        except ApiError as err:
            self._send_error_obj(err)
        except ValueError as exc:
            self._send_error_obj(_bad_request(str(exc)))
        except Exception as exc:  # noqa: BLE001 — opaque 5xx by contract
            self._send_error_obj(ApiError(500, "internal", type(exc).__name__))

    def do_POST(self):
        url = urlsplit(self.path)
        routes = {"/api/encode": self.service.encode,
                  "/api/caption": self.service.caption,
                  "/api/attention": self.service.attention,
                  "/api/dialogue": self.service.dialogue}
        try:
            handler = routes.get(url.path)
            if handler is None:
                raise ApiError(404, "not_found", f"no route {url.path}")
            self._send_payload(handler(self._read_body()))
        except ApiError as err:
            self._send_error_obj(err)
        except Exception as exc:  # noqa: BLE001 — opaque 5xx by contract
            self._send_error_obj(ApiError(500, "internal", type(exc).__name__))


def make_server(model: Model, host: str = "127.0.0.1", port: int = 0,
                seed: int = 1234) -> ThreadingHTTPServer:
    """Bound but not yet serving; port 0 picks a free port (tests)."""
    service = Service.from_model(model, seed)
    handler = type("BoundHandler", (Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def run_server(model: Model, host: str, port: int, seed: int) -> None:
    server = make_server(model, host, port, seed)
    host_out, port_out = server.server_address[:2]
    print(f"serving on http://{host_out}:{port_out}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
