"""Face-analysis pseudo-labels for front-view walking videos.

An external face detector/classifier produces per-frame observations; this
module turns them into one gender label per video by averaging the female
probability with weights proportional to the face box area relative to the
frame.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DET_CONF = 0.9
FRONT_VIEW_ANGLES = (0,)


class Label(enum.IntEnum):
    FEMALE = 0
    MALE = 1


class LabelSource(str, enum.Enum):
    TRUE = "TRUE"
    FACE = "FACE"
    PROPAGATED = "PROPAGATED"


@dataclass(frozen=True)
class PseudoLabel:
    label: Label
    score: float  # P(FEMALE)
    source: LabelSource

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")
        object.__setattr__(self, "label", Label(self.label))
        object.__setattr__(self, "source", LabelSource(self.source))


class NoFaceFound(LookupError):
    pass


class AnalyzerUnavailable(RuntimeError):
    pass


class FixtureMissing(FileNotFoundError):
    pass


@dataclass(frozen=True)
class FaceObservation:
    frame_index: int
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    gender_score: float
    det_conf: float

    @property
    def area(self):
        return self.bbox[2] * self.bbox[3]


def clip_bbox(bbox, width, height):
    x, y, w, h = bbox
    x0, y0 = max(0.0, x), max(0.0, y)
    x1, y1 = min(float(width), x + w), min(float(height), y + h)
    return (x0, y0, max(0.0, x1 - x0), max(0.0, y1 - y0))


@dataclass
class VideoFaceTrace:
    frame_width: float
    frame_height: float
    observations: list = field(default_factory=list)

    def __post_init__(self):
        if self.frame_width <= 0 or self.frame_height <= 0:
            raise ValueError("frame dimensions must be positive")
        clipped = []
        for o in self.observations:
            bbox = clip_bbox(o.bbox, self.frame_width, self.frame_height)
            if bbox[2] <= 0 or bbox[3] <= 0:
                continue  # entirely outside the frame
            clipped.append(FaceObservation(o.frame_index, bbox, o.gender_score, o.det_conf))
        self.observations = clipped


def aggregate_face_labels(trace, det_threshold=DEFAULT_DET_CONF):
    """Area-weighted mean of the female score over confident detections.

    Only the largest box per frame is kept. Label is FEMALE iff score >= 0.5.
    """
    best = {}
    for o in trace.observations:
        if o.det_conf < det_threshold:
            continue
        cur = best.get(o.frame_index)
        if cur is None or o.area > cur.area:
            best[o.frame_index] = o
    if not best:
        raise NoFaceFound("no face detection passed the confidence threshold")
    frame_area = trace.frame_width * trace.frame_height
    obs = [best[k] for k in sorted(best)]
    w = np.array([o.area / frame_area for o in obs])
    s = np.array([o.gender_score for o in obs])
    score = float(np.clip((w * s).sum() / w.sum(), 0.0, 1.0))
    label = Label.FEMALE if score >= 0.5 else Label.MALE
    return PseudoLabel(label, score, LabelSource.FACE)


class FaceAnalyzer(Protocol):
    def analyze(self, video) -> VideoFaceTrace:
        ...


# fixture file layout (CSV):
#   # frame_width=<px> frame_height=<px>
#   frame_index,x,y,w,h,gender_score,det_conf
#   <one row per observation>
FIXTURE_COLUMNS = ("frame_index", "x", "y", "w", "h", "gender_score", "det_conf")
FIXTURE_SUFFIX = ".faces.csv"


def write_face_fixture(path, trace):
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# frame_width={trace.frame_width:g} frame_height={trace.frame_height:g}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIXTURE_COLUMNS)
        for o in trace.observations:
            writer.writerow([o.frame_index, *(repr(float(v)) for v in o.bbox),
                             repr(float(o.gender_score)), repr(float(o.det_conf))])


def read_face_fixture(path):
    path = Path(path)
    if not path.exists():
        raise FixtureMissing(str(path))
    with path.open(newline="") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValueError(f"{path}: missing '# frame_width=.. frame_height=..' header")
        dims = dict(kv.split("=", 1) for kv in header[1:].split())
        reader = csv.DictReader(fh)
        obs = [
            FaceObservation(
                int(row["frame_index"]),
                (float(row["x"]), float(row["y"]), float(row["w"]), float(row["h"])),
                float(row["gender_score"]),
                float(row["det_conf"]),
            )
            for row in reader
        ]
    return VideoFaceTrace(float(dims["frame_width"]), float(dims["frame_height"]), obs)


class FixtureFaceAnalyzer:
    """Offline analyser: ``video`` is a sequence id resolved inside ``fixture_dir``."""

    def __init__(self, fixture_dir):
        self.fixture_dir = Path(fixture_dir)

    def analyze(self, video):
        return read_face_fixture(self.fixture_dir / f"{video}{FIXTURE_SUFFIX}")


class HttpFaceAnalyzer:
    """Client for a face detection + attribute service.

    POSTs ``{"video": <id or path>}`` to ``endpoint`` and expects JSON
    ``{"frame_width", "frame_height", "observations": [{"frame_index",
    "bbox": [x, y, w, h], "gender_score", "det_conf"}, ...]}``. Requests are
    independent, so one client may be shared between threads.
    """

    def __init__(self, endpoint, token=None, timeout=30.0):
        self.endpoint = endpoint
        self.token = token
        self.timeout = timeout

    def analyze(self, video):
        body = json.dumps({"video": str(video)}).encode()
        req = urllib.request.Request(self.endpoint, data=body, method="POST")
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.load(resp)
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise AnalyzerUnavailable(f"{self.endpoint}: {exc}") from exc
        return trace_from_json(payload)


def trace_from_json(payload):
    obs = [
        FaceObservation(
            int(o["frame_index"]), tuple(float(v) for v in o["bbox"]),
            float(o["gender_score"]), float(o["det_conf"]),
        )
        for o in payload.get("observations", [])
    ]
    return VideoFaceTrace(float(payload["frame_width"]), float(payload["frame_height"]), obs)


@dataclass
class LabelingSummary:
    labeled: int = 0
    no_face: int = 0
    skipped_view: int = 0
    missing: int = 0


def label_dataset(manifest, analyzer, det_threshold=DEFAULT_DET_CONF, front_angles=FRONT_VIEW_ANGLES):
    """Attach FACE pseudo-labels to front-view manifest entries, in place.

    Entries at other angles are left untouched. Entries without a usable face
    stay unlabelled and are counted in the returned summary.
    """
    summary = LabelingSummary()
    for entry in manifest.entries:
        if entry.view_angle_deg not in front_angles:
            summary.skipped_view += 1
            continue
        try:
            trace = analyzer.analyze(entry.sequence_id)
            entry.label = aggregate_face_labels(trace, det_threshold)
            summary.labeled += 1
        except NoFaceFound:
            log.info("%s: no face passed the detection threshold", entry.sequence_id)
            summary.no_face += 1
        except FixtureMissing:
            log.warning("%s: no face trace fixture", entry.sequence_id)
            summary.missing += 1
    return summary
