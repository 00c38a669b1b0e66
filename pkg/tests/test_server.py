"""HTTP service: endpoint contracts, error envelope, determinism."""
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from scribblecap.checkpoint import load_model
from scribblecap.server import make_server


@pytest.fixture(scope="module")
def base_url(micro_run):
    # serve the on-disk checkpoint: exercises the float32 load path end to end
    server = make_server(load_model(micro_run.checkpoint_path), port=0, seed=1234)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def get_raw(base_url, path):
    try:
        with urllib.request.urlopen(base_url + path) as r:
            return r.status, r.headers.get("Content-Type", ""), r.read()
    except urllib.error.HTTPError as e:
        return e.code, e.headers.get("Content-Type", ""), e.read()


def post_raw(base_url, path, data: bytes):
    req = urllib.request.Request(base_url + path, data=data, method="POST")
    try:
        with urllib.request.urlopen(req) as r:
            return r.status, r.read()
    except urllib.error.HTTPError as e:
        return e.code, e.read()


def post(base_url, path, body):
    status, raw = post_raw(base_url, path, json.dumps(body).encode())
    return status, json.loads(raw)


def get(base_url, path):
    status, _, raw = get_raw(base_url, path)
    return status, json.loads(raw)


@pytest.fixture(scope="module")
def image_id(base_url):
    return get(base_url, "/api/images?limit=1")[1]["payload"]["images"][0]


def assert_envelope(body):
    assert ("payload" in body) != ("error" in body)  # exactly one, never both


class TestEnvelope:
    def test_success_is_payload_only(self, base_url):
        status, body = get(base_url, "/api/health")
        assert status == 200
        assert_envelope(body)
        assert body["payload"]["status"] == "ok"

    def test_failure_is_error_only(self, base_url):
        status, body = post(base_url, "/api/caption", {"image_id": "zzz"})
        assert status == 404
        assert_envelope(body)
        assert body["error"]["code"] == "unknown_image"


class TestRoutes:
    def test_health_reports_model_shape(self, base_url, micro_model):
        body = get(base_url, "/api/health")[1]["payload"]
        assert body["grid"] == micro_model.synth.grid
        assert body["n_queries"] == micro_model.qf_cfg.n_queries
        assert body["n_images"] == micro_model.synth.n_images

    def test_images_listing_sorted(self, base_url):
        ids = get(base_url, "/api/images")[1]["payload"]["images"]
        assert ids == sorted(ids)
        assert get(base_url, "/api/images?limit=2")[1]["payload"]["images"] == ids[:2]

    def test_image_png(self, base_url, image_id, micro_model):
        status, ctype, raw = get_raw(base_url, f"/api/image?id={image_id}&cell_px=16")
        assert status == 200
        assert ctype == "image/png"
        assert raw[:8] == b"\x89PNG\r\n\x1a\n"

    def test_image_unknown_404(self, base_url):
        status, _, raw = get_raw(base_url, "/api/image?id=zzz")
        assert status == 404
        assert json.loads(raw)["error"]["code"] == "unknown_image"

    def test_unknown_route_404(self, base_url):
        status, body = post(base_url, "/api/nope", {})
        assert status == 404
        assert body["error"]["code"] == "not_found"
        status, body = get(base_url, "/api/nope")
        assert status == 404
        assert body["error"]["code"] == "not_found"


class TestEncode:
    def test_worked_example(self, base_url):
        status, body = post(base_url, "/api/encode",
                            {"points": [{"x": 0.324, "y": 0.643},
                                        {"x": 0.369, "y": 0.622}]})
        assert status == 200
        assert body["payload"]["tokens"] == "[32 64] [37 62]"

    def test_agrees_with_cli(self, base_url, capsys):
        from scribblecap.cli import main

        main(["encode", "0.5,0.25", "0.75,1.0"])
        cli_out = capsys.readouterr().out.strip()
        body = post(base_url, "/api/encode",
                    {"points": [{"x": 0.5, "y": 0.25}, {"x": 0.75, "y": 1.0}]})[1]
        assert body["payload"]["tokens"] == cli_out

    def test_empty_points_empty_string(self, base_url):
        assert post(base_url, "/api/encode", {"points": []})[1]["payload"]["tokens"] == ""

    def test_out_of_range_rejected(self, base_url):
        status, body = post(base_url, "/api/encode",
                            {"points": [{"x": 1.5, "y": 0.0}]})
        assert status == 400
        assert body["error"]["code"] == "bad_request"


class TestCaption:
    def test_deterministic_and_matches_cli(self, base_url, image_id,
                                           micro_run, capsys):
        from scribblecap.cli import main

        req = {"image_id": image_id, "k": 4, "seed": 7,
               "points": [{"x": 0.2, "y": 0.2}]}
        a = post(base_url, "/api/caption", req)[1]["payload"]
        b = post(base_url, "/api/caption", req)[1]["payload"]
        assert a == b
        main(["caption", "--checkpoint", micro_run.checkpoint_path,
              "--image-id", image_id, "--k", "4", "--seed", "7", "0.2,0.2"])
        assert capsys.readouterr().out.strip() == a["caption"]

    def test_missing_image_id(self, base_url):
        status, body = post(base_url, "/api/caption", {"points": []})
        assert status == 400
        assert body["error"]["code"] == "bad_request"


class TestAttention:
    def test_rows_stochastic_and_dims(self, base_url, image_id, micro_model):
        body = post(base_url, "/api/attention",
                    {"image_id": image_id, "k": 4, "seed": 3,
                     "points": [{"x": 0.4, "y": 0.4}]})[1]["payload"]
        n, p = body["dims"]
        grid = micro_model.synth.grid
        assert n == micro_model.qf_cfg.n_queries
        assert p == grid * grid
        assert body["grid"] == [grid, grid]
        rows = np.asarray(body["rows"]).reshape(n, p)
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-6)
        assert len(body["mean"]) == p
        np.testing.assert_allclose(np.asarray(body["mean"]).sum(), 1.0, atol=1e-6)

    def test_layer_head_selectors(self, base_url, image_id, micro_model):
        base = {"image_id": image_id, "k": 4, "seed": 3,
                "points": [{"x": 0.4, "y": 0.4}]}
        ok = post(base_url, "/api/attention", dict(base, layer=0, head=1))
        assert ok[0] == 200
        bad = post(base_url, "/api/attention",
                   dict(base, layer=micro_model.qf_cfg.n_layers + 5))
        assert bad[0] == 400
        assert bad[1]["error"]["code"] == "bad_request"


class TestDialogue:
    def test_two_turns_and_float32_z_round_trip(self, base_url, image_id):
        req = {"image_id": image_id, "text": "what is this", "k": 4, "seed": 5,
               "points": [{"x": 0.3, "y": 0.3}]}
        body = post(base_url, "/api/dialogue", req)[1]["payload"]
        assert [t["role"] for t in body["history"]] == ["user", "model"]
        assert body["history"][0]["z"]  # scribbled user turn carries its rows
        assert body["truncated"] is False
        # echo the returned history straight back (the UI's only job)
        follow = {"image_id": image_id, "text": "and this", "k": 4, "seed": 5,
                  "history": body["history"]}
        body2 = post(base_url, "/api/dialogue", follow)[1]["payload"]
        assert [t["role"] for t in body2["history"]] == ["user", "model",
                                                         "user", "model"]
        assert body2["history"][0]["text"] == "what is this"

    def test_byte_identical_responses(self, base_url, image_id):
        data = json.dumps({"image_id": image_id, "text": "describe", "k": 4,
                           "seed": 11}).encode()
        assert post_raw(base_url, "/api/dialogue", data) == \
            post_raw(base_url, "/api/dialogue", data)

    def test_bad_history_rejected(self, base_url, image_id):
        status, body = post(base_url, "/api/dialogue",
                            {"image_id": image_id, "text": "hi",
                             "history": [{"role": "user", "text": "a"},
                                         {"role": "user", "text": "b"}]})
        assert status == 400
        assert "alternate" in body["error"]["message"]

    def test_bad_z_shape_rejected(self, base_url, image_id):
        status, body = post(base_url, "/api/dialogue",
                            {"image_id": image_id, "text": "hi",
                             "history": [{"role": "user", "text": "a",
                                          "z": [[1.0, 2.0]]}]})
        assert status == 400
        assert "z" in body["error"]["message"]

    def test_empty_text_rejected(self, base_url, image_id):
        status, body = post(base_url, "/api/dialogue",
                            {"image_id": image_id, "text": "  "})
        assert status == 400


class TestMalformedBodies:
    def test_invalid_json(self, base_url):
        status, raw = post_raw(base_url, "/api/encode", b"{nope")
        assert status == 400
        assert json.loads(raw)["error"]["code"] == "bad_json"

    def test_empty_body(self, base_url):
        status, raw = post_raw(base_url, "/api/encode", b"")
        assert status == 400
        assert json.loads(raw)["error"]["code"] == "bad_json"

    def test_non_object_body(self, base_url):
        status, raw = post_raw(base_url, "/api/encode", b"[1,2]")
        assert status == 400
        assert json.loads(raw)["error"]["code"] == "bad_json"


class TestConcurrency:
    def test_parallel_requests_match_serial(self, base_url, image_id):
        req = json.dumps({"image_id": image_id, "k": 4, "seed": 21,
                          "points": [{"x": 0.6, "y": 0.6}]}).encode()
        serial = post_raw(base_url, "/api/caption", req)
        results = [None] * 8

        def hit(i):
            results[i] = post_raw(base_url, "/api/caption", req)

        threads = [threading.Thread(target=hit, args=(i,)) for i in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r == serial for r in results)
