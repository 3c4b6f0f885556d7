import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer
from types import SimpleNamespace

import numpy as np
import pytest

from gaitgender.faces import (
    AnalyzerUnavailable, FaceObservation, FixtureFaceAnalyzer, FixtureMissing, HttpFaceAnalyzer,
    Label, LabelSource, NoFaceFound, PseudoLabel, VideoFaceTrace, aggregate_face_labels,
    clip_bbox, label_dataset, read_face_fixture, write_face_fixture,
)


def obs(frame, w, h, score, conf=0.95, x=0.0, y=0.0):
    return FaceObservation(frame, (x, y, w, h), score, conf)


def random_trace(rng, n=None, scale=1.0):
    n = n or int(rng.integers(1, 12))
    W, H = 640.0 * scale, 480.0 * scale
    o = [FaceObservation(k, tuple(scale * v for v in (rng.uniform(0, 500), rng.uniform(0, 350),
                                                       rng.uniform(5, 120), rng.uniform(5, 120))),
                         float(rng.random()), 0.95)
         for k in range(n)]
    return VideoFaceTrace(W, H, o)


def test_two_face_worked_example():
    # area ratios 0.02 and 0.04 of a 100x100 frame
    t = VideoFaceTrace(100, 100, [obs(0, 10, 20, 0.8), obs(1, 20, 20, 0.6)])
    pl = aggregate_face_labels(t)
    assert abs(pl.score - 2.0 / 3.0) <= 1e-12
    assert round(pl.score, 4) == 0.6667
    assert pl.label is Label.FEMALE and pl.source is LabelSource.FACE


def test_single_face_and_threshold():
    pl = aggregate_face_labels(VideoFaceTrace(100, 100, [obs(0, 3, 7, 0.9)]))
    assert pl.score == pytest.approx(0.9, abs=1e-15) and pl.label is Label.FEMALE
    assert aggregate_face_labels(VideoFaceTrace(100, 100, [obs(0, 3, 7, 0.2)])).label is Label.MALE
    assert aggregate_face_labels(VideoFaceTrace(100, 100, [obs(0, 3, 7, 0.5)])).label is Label.FEMALE
    with pytest.raises(NoFaceFound):
        aggregate_face_labels(VideoFaceTrace(100, 100, [obs(0, 3, 7, 0.9, conf=0.5)]))
    with pytest.raises(NoFaceFound):
        aggregate_face_labels(VideoFaceTrace(100, 100, []))


def test_largest_face_per_frame_wins():
    t = VideoFaceTrace(100, 100, [obs(0, 5, 5, 0.1), obs(0, 20, 20, 0.9)])
    assert aggregate_face_labels(t).score == pytest.approx(0.9)


def test_weighted_mean_properties(rng):
    for _ in range(1000):
        t = random_trace(rng)
        s = aggregate_face_labels(t).score
        scores = [o.gender_score for o in t.observations]
        assert min(scores) - 1e-12 <= s <= max(scores) + 1e-12
        shuffled = VideoFaceTrace(t.frame_width, t.frame_height, list(rng.permutation(t.observations)))
        assert aggregate_face_labels(shuffled).score == pytest.approx(s, abs=1e-12)
        k = float(rng.uniform(0.2, 5))
        scaled = VideoFaceTrace(t.frame_width * k, t.frame_height * k,
                                [FaceObservation(o.frame_index, tuple(k * v for v in o.bbox), o.gender_score, o.det_conf)
                                 for o in t.observations])
        assert aggregate_face_labels(scaled).score == pytest.approx(s, abs=1e-12)
        # duplicating every observation in its own frame copy leaves the mean unchanged
        n = len(t.observations)
        dup = VideoFaceTrace(t.frame_width, t.frame_height, t.observations + [
            FaceObservation(o.frame_index + n, o.bbox, o.gender_score, o.det_conf) for o in t.observations])
        assert aggregate_face_labels(dup).score == pytest.approx(s, abs=1e-12)


def test_clipping():
    assert clip_bbox((-10, 90, 30, 30), 100, 100) == (0.0, 90.0, 20.0, 10.0)
    t = VideoFaceTrace(100, 100, [obs(0, 30, 30, 0.4, x=-10, y=90), obs(1, 5, 5, 0.9, x=200, y=0)])
    assert len(t.observations) == 1 and t.observations[0].area == 200.0
    with pytest.raises(ValueError):
        VideoFaceTrace(0, 100, [])


def test_pseudo_label_validation():
    with pytest.raises(ValueError):
        PseudoLabel(Label.MALE, 1.5, LabelSource.FACE)
    assert PseudoLabel(1, 0.2, "FACE").label is Label.MALE


def test_fixture_round_trip(tmp_path, rng):
    t = random_trace(rng, 5)
    p = tmp_path / "a.faces.csv"
    write_face_fixture(p, t)
    back = read_face_fixture(p)
    assert back.frame_width == t.frame_width and back.observations == t.observations
    write_face_fixture(tmp_path / "e.faces.csv", VideoFaceTrace(10, 10, []))
    assert read_face_fixture(tmp_path / "e.faces.csv").observations == []
    with pytest.raises(FixtureMissing):
        FixtureFaceAnalyzer(tmp_path).analyze("nothing")


def test_fixture_clips_on_read(tmp_path):
    p = tmp_path / "c.faces.csv"
    p.write_text("# frame_width=100 frame_height=50\nframe_index,x,y,w,h,gender_score,det_conf\n"
                 "0,90,40,20,20,0.3,0.99\n1,10,10,10,10,0.7,0.99\n")
    t = FixtureFaceAnalyzer(tmp_path).analyze("c")
    assert t.observations[0].bbox == (90.0, 40.0, 10.0, 10.0)
    assert len(t.observations) == 2


def test_label_dataset_front_views_only(tmp_path):
    entries = [SimpleNamespace(sequence_id=f"s-{a:03d}", view_angle_deg=a, label=None) for a in range(0, 181, 18)]
    entries.append(SimpleNamespace(sequence_id="blurry-000", view_angle_deg=0, label=None))
    entries.append(SimpleNamespace(sequence_id="nofile-000", view_angle_deg=0, label=None))
    write_face_fixture(tmp_path / "s-000.faces.csv", VideoFaceTrace(100, 100, [obs(0, 10, 10, 0.1)]))
    write_face_fixture(tmp_path / "blurry-000.faces.csv", VideoFaceTrace(100, 100, [obs(0, 10, 10, 0.9, conf=0.2)]))
    summary = label_dataset(SimpleNamespace(entries=entries), FixtureFaceAnalyzer(tmp_path))
    labelled = [e.sequence_id for e in entries if e.label is not None]
    assert labelled == ["s-000"]
    assert entries[0].label.label is Label.MALE
    assert (summary.labeled, summary.no_face, summary.missing, summary.skipped_view) == (1, 1, 1, 10)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        payload = {"frame_width": 100, "frame_height": 100, "observations": [
            {"frame_index": 0, "bbox": [0, 0, 10, 10], "gender_score": 0.25, "det_conf": 0.99}]}
        payload["echo"] = body["video"]
        payload["auth"] = self.headers.get("Authorization")
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


def test_http_analyzer_round_trip():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=server.serve_forever, daemon=True)
    th.start()
    try:
        url = f"http://127.0.0.1:{server.server_address[1]}/analyze"
        t = HttpFaceAnalyzer(url, token="abc", timeout=5).analyze("vid-1")
        assert len(t.observations) == 1
        assert aggregate_face_labels(t).label is Label.MALE
    finally:
        server.shutdown()


def test_http_analyzer_unavailable():
    with pytest.raises(AnalyzerUnavailable):
        HttpFaceAnalyzer("http://127.0.0.1:9/none", timeout=0.5).analyze("x")
