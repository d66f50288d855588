import io
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest
from PIL import Image

from gloveseg import evalkit
from gloveseg.evalkit import SynthParams
from gloveseg.review import serve_review


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("review_corpus")
    m1 = evalkit.synth_corpus(root / "a", count=10, seed=60, params=SynthParams(width=64, height=48), sequence_id="seq-a")
    m2 = evalkit.synth_corpus(root / "b", count=4, seed=80, params=SynthParams(width=64, height=48), sequence_id="seq-b")
    return m1, m2


@pytest.fixture()
def server(corpus, tmp_path):
    decisions = tmp_path / "decisions.jsonl"
    srv = serve_review(list(corpus), decisions, host="127.0.0.1", port=0)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{srv.server_address[1]}"
    yield base, decisions
    srv.shutdown()
    srv.server_close()


def get(url):
    with urllib.request.urlopen(url, timeout=10) as resp:
        return resp.status, resp.headers.get("Content-Type"), resp.read()


def post_json(url, doc):
    req = urllib.request.Request(url, data=json.dumps(doc).encode(), headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=10) as resp:
        return resp.status, json.loads(resp.read())


class TestEndpoints:
    def test_sequence_list(self, server):
        base, _ = server
        status, ctype, body = get(base + "/api/sequences")
        assert status == 200 and ctype == "application/json"
        doc = json.loads(body)
        assert [(s["id"], s["frame_count"], s["labeled"]) for s in doc] == [("seq-a", 10, True), ("seq-b", 4, True)]

    def test_overlay_tints_labeled_pixels(self, server, corpus):
        base, _ = server
        status, ctype, body = get(base + "/api/sequences/seq-a/frames/0/overlay.png")
        assert status == 200 and ctype == "image/png"
        overlay = np.asarray(Image.open(io.BytesIO(body)))
        manifest = corpus[0]
        from gloveseg.imaging import load_color, load_label

        raw = load_color(manifest.resolve(manifest.frames[0].color_path)).pixels
        label = load_label(manifest.resolve(manifest.frames[0].label_path))
        assert overlay.shape == raw.shape
        left = label == 1
        assert (overlay[left][:, 0].astype(int) > raw[left][:, 0].astype(int)).mean() > 0.9
        assert np.array_equal(overlay[label == 0], raw[label == 0])

    def test_raw_and_depth_stream_source_files(self, server, corpus):
        base, _ = server
        manifest = corpus[0]
        _, _, raw = get(base + "/api/sequences/seq-a/frames/3/raw.png")
        assert raw == manifest.resolve(manifest.frames[3].color_path).read_bytes()
        _, _, depth = get(base + "/api/sequences/seq-a/frames/3/depth.png")
        assert depth == manifest.resolve(manifest.frames[3].depth_path).read_bytes()

    def test_unknown_sequence_404(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            get(base + "/api/sequences/ghost/frames/0/raw.png")
        assert err.value.code == 404

    def test_unknown_frame_404(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            get(base + "/api/sequences/seq-a/frames/99/raw.png")
        assert err.value.code == 404


class TestDecisions:
    def test_post_persists_durably_and_lists(self, server):
        base, decisions_path = server
        status, echoed = post_json(base + "/api/decisions",
                                   {"sequence_id": "seq-a", "start": 3, "end": 7, "verdict": "reject", "reviewer": "r1"})
        assert status == 201 and echoed["start"] == 3 and echoed["timestamp"]
        on_disk = evalkit.load_decisions(decisions_path)
        assert len(on_disk) == 1 and on_disk[0].verdict == "reject"
        _, _, body = get(base + "/api/decisions?sequence=seq-a")
        assert len(json.loads(body)) == 1
        _, _, body = get(base + "/api/decisions?sequence=seq-b")
        assert json.loads(body) == []

    def test_post_then_filter_round_trip(self, server, corpus):
        base, decisions_path = server
        post_json(base + "/api/decisions", {"sequence_id": "seq-a", "start": 3, "end": 7, "verdict": "reject"})
        filtered = evalkit.filter_dataset(corpus[0], evalkit.load_decisions(decisions_path))
        assert [f.index for f in filtered.frames] == [0, 1, 2, 8, 9]

    def test_bad_range_400(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            post_json(base + "/api/decisions", {"sequence_id": "seq-a", "start": 5, "end": 50, "verdict": "reject"})
        assert err.value.code == 400

    def test_bad_verdict_400(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            post_json(base + "/api/decisions", {"sequence_id": "seq-a", "start": 0, "end": 1, "verdict": "meh"})
        assert err.value.code == 400

    def test_unknown_sequence_404(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            post_json(base + "/api/decisions", {"sequence_id": "nope", "start": 0, "end": 1, "verdict": "reject"})
        assert err.value.code == 404

    def test_concurrent_posts_none_lost(self, server):
        base, decisions_path = server
        errors = []

        def reviewer(tag):
            try:
                for i in range(10):
                    post_json(base + "/api/decisions",
                              {"sequence_id": "seq-b", "start": i % 4, "end": i % 4,
                               "verdict": "reject", "reviewer": tag})
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

        threads = [threading.Thread(target=reviewer, args=(f"r{k}",)) for k in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        stored = [d for d in evalkit.load_decisions(decisions_path) if d.sequence_id == "seq-b"]
        assert len(stored) == 20
        assert sorted({d.reviewer for d in stored}) == ["r0", "r1"]


class TestStatic:
    def test_serves_ui_assets(self, corpus, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>review</body></html>")
        srv = serve_review(list(corpus), tmp_path / "d.jsonl", host="127.0.0.1", port=0, ui_dir=ui)
        thread = threading.Thread(target=srv.serve_forever, daemon=True)
        thread.start()
        try:
            base = f"http://127.0.0.1:{srv.server_address[1]}"
            status, ctype, body = get(base + "/")
            assert status == 200 and ctype == "text/html" and b"review" in body
            with pytest.raises(urllib.error.HTTPError):
                get(base + "/../secrets.txt")
        finally:
            srv.shutdown()
            srv.server_close()

    def test_no_ui_dir_404(self, server):
        base, _ = server
        with pytest.raises(urllib.error.HTTPError) as err:
            get(base + "/")
        assert err.value.code == 404
