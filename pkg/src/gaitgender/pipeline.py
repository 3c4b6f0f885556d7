"""Dataset manifest, file formats, configuration and pipeline stages.

Artifacts live next to the manifest::

    manifest.tsv             one row per sequence (see :class:`DatasetManifest`)
    poses/<id>.json          pose files in the ingest format
    faces/<id>.faces.csv     face traces for the offline analyser
    artifacts/normalized/    normalised sequences (.npy, shape (T, 17, 3))
    artifacts/tssi/          TSSI arrays (.npy, shape (33, frames, 3))
    artifacts/embeddings.txt embedding cache
    artifacts/...            propagation report, model, training log, metrics

Every stage rewrites its outputs from its inputs, so re-running a stage with
the same inputs and seed reproduces the same bytes.
"""
from __future__ import annotations

import contextlib
import csv
import enum
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import faces, propagation, synth, training
from .faces import Label, LabelSource, PseudoLabel
from .skeleton import (
    NUM_JOINTS, SequenceMeta, SequenceUnusable, SkeletonSequence, Variation,
    normalize_sequence, validate_sequence,
)
from .tssi import encode_tssi

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_MAGIC = "# gaitgender-manifest"
EMBEDDING_MAGIC = "# gaitgender-embeddings"
KEYPOINT_VALUES = 3 * NUM_JOINTS


class ParseError(ValueError):
    pass


class WrongKeypointCount(ParseError):
    pass


class ManifestError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    pass


class LockHeld(RuntimeError):
    pass


# -- pose files -------------------------------------------------------------
#
# A JSON list of detections, one object per person per frame:
#   {"image_id": "12.jpg" | 12, "keypoints": [x0, y0, c0, ..., x16, y16, c16],
#    "box": [x, y, w, h], "score": float}
# "frame" may replace "image_id". When a frame has several people the one with
# the largest box is kept (keypoint extent is used when "box" is missing).

_FRAME_NUMBER = re.compile(r"(\d+)")


def _frame_index(record, path, i):
    raw = record.get("frame", record.get("image_id"))
    if isinstance(raw, (int, np.integer)):
        return int(raw)
    if isinstance(raw, str):
        m = _FRAME_NUMBER.findall(Path(raw).stem)
        if m:
            return int(m[-1])
    raise ParseError(f"{path}: record {i}: no usable frame index (image_id/frame)")


def _box_area(record, kp):
    box = record.get("box")
    if box is not None and len(box) == 4:
        return float(box[2]) * float(box[3])
    xy = kp[:, :2]
    ext = xy.max(axis=0) - xy.min(axis=0)
    return float(ext[0] * ext[1])


def load_pose_sequence(path, fps=30.0, meta=None):
    """Read a pose file into a :class:`SkeletonSequence` ordered by frame."""
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except (OSError, ValueError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(records, list):
        raise ParseError(f"{path}: expected a JSON list of detections")
    best = {}
    for i, rec in enumerate(records):
        if not isinstance(rec, dict) or "keypoints" not in rec:
            raise ParseError(f"{path}: record {i}: missing 'keypoints'")
        vals = rec["keypoints"]
        if len(vals) != KEYPOINT_VALUES:
            raise WrongKeypointCount(
                f"{path}: record {i}: {len(vals)} values, expected {KEYPOINT_VALUES} (17 keypoints x 3)"
            )
        try:
            kp = np.asarray(vals, dtype=np.float64).reshape(NUM_JOINTS, 3)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: record {i}: {exc}") from exc
        f = _frame_index(rec, path, i)
        area = _box_area(rec, kp)
        if f not in best or area > best[f][0]:
            best[f] = (area, kp)
    frames = sorted(best)
    data = np.stack([best[f][1] for f in frames]) if frames else np.zeros((0, NUM_JOINTS, 3))
    return SkeletonSequence(data, fps=fps, meta=meta)


def write_pose_sequence(path, seq):
    records = []
    for f, frame in enumerate(seq.data):
        xy = frame[:, :2]
        lo, hi = xy.min(axis=0), xy.max(axis=0)
        records.append({
            "image_id": f"{f}.jpg",
            "keypoints": [float(v) for v in frame.ravel()],
            "box": [float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1])],
            "score": float(frame[:, 2].mean()),
        })
    Path(path).write_text(json.dumps(records, separators=(",", ":")) + "\n")


# -- manifest ------------------------------------------------------------------


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    VAL = "VAL"
    UNASSIGNED = "UNASSIGNED"


MANIFEST_COLUMNS = (
    "sequence_id", "pose_path", "subject_id", "view_angle_deg", "variation",
    "label", "score", "source", "gt_label", "split",
)


@dataclass
class ManifestEntry:
    sequence_id: str
    pose_path: str  # relative to the manifest directory
    subject_id: str
    view_angle_deg: int
    variation: Variation = Variation.OTHER
    label: PseudoLabel | None = None
    gt_label: int | None = None  # evaluation ground truth when known
    split: Split = Split.UNASSIGNED

    def __post_init__(self):
        self.variation = Variation(self.variation)
        self.split = Split(self.split)
        if "\t" in self.sequence_id or "\n" in self.sequence_id:
            raise ManifestError(f"bad sequence id {self.sequence_id!r}")

    def meta(self):
        return SequenceMeta(self.subject_id, self.view_angle_deg, self.variation, self.pose_path)


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    seed: int = 0
    root: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.sequence_id in seen:
                raise ManifestError(f"duplicate sequence id {e.sequence_id}")
            seen.add(e.sequence_id)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def by_id(self):
        return {e.sequence_id: e for e in self.entries}

    def pose_file(self, entry):
        return self.root / entry.pose_path

    def write(self, path):
        path = Path(path)
        rows = [f"{MANIFEST_MAGIC} v{MANIFEST_VERSION}", f"# seed={self.seed}", "\t".join(MANIFEST_COLUMNS)]
        for e in self.entries:
            lab = e.label
            rows.append("\t".join([
                e.sequence_id, e.pose_path, e.subject_id, str(e.view_angle_deg), e.variation.value,
                "" if lab is None else lab.label.name,
                "" if lab is None else repr(float(lab.score)),
                "" if lab is None else lab.source.value,
                "" if e.gt_label is None else Label(e.gt_label).name,
                e.split.value,
            ]))
        path.write_text("\n".join(rows) + "\n")

    @classmethod
    def read(cls, path):
        path = Path(path)
        if not path.exists():
            raise MissingArtifact(f"manifest {path} not found")
        lines = path.read_text().splitlines()
        if len(lines) < 3 or not lines[0].startswith(MANIFEST_MAGIC):
            raise ManifestError(f"{path}: not a manifest (missing '{MANIFEST_MAGIC}' header)")
        version = lines[0][len(MANIFEST_MAGIC):].strip()
        if version != f"v{MANIFEST_VERSION}":
            raise ManifestError(f"{path}: unsupported manifest version {version!r}")
        m = re.fullmatch(r"# seed=(-?\d+)", lines[1])
        if not m:
            raise ManifestError(f"{path}: line 2 must be '# seed=<int>'")
        if tuple(lines[2].split("\t")) != MANIFEST_COLUMNS:
            raise ManifestError(f"{path}: unexpected columns {lines[2]!r}")
        entries = []
        for n, line in enumerate(lines[3:], start=4):
            cols = line.split("\t")
            if len(cols) != len(MANIFEST_COLUMNS):
                raise ManifestError(f"{path}:{n}: expected {len(MANIFEST_COLUMNS)} fields, got {len(cols)}")
            row = dict(zip(MANIFEST_COLUMNS, cols))
            try:
                label = None
                if row["label"]:
                    label = PseudoLabel(Label[row["label"]], float(row["score"]), LabelSource(row["source"]))
                entries.append(ManifestEntry(
                    row["sequence_id"], row["pose_path"], row["subject_id"], int(row["view_angle_deg"]),
                    Variation(row["variation"]), label,
                    Label[row["gt_label"]].value if row["gt_label"] else None, Split(row["split"]),
                ))
            except (KeyError, ValueError) as exc:
                raise ManifestError(f"{path}:{n}: {exc}") from exc
        return cls(entries, int(m.group(1)), path.parent)


@contextlib.contextmanager
def manifest_lock(path):
    """Advisory lock file held while a command mutates the manifest."""
    lock = Path(str(path) + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockHeld(f"{lock} exists; another command is updating the manifest "
                       "(delete the file if that command died)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


# -- configuration -------------------------------------------------------------

# documented keys with their defaults; the value type follows the default
CONFIG_DEFAULTS = {
    "seed": 0,
    "fps": 30.0,
    "frames": 60,
    # propagation
    "mode": "spectral",
    "spectral_mode": "spreading",
    "k": 20,
    "alpha": 0.99,
    "k_vote": 5,
    "n_clusters": 0,
    "tau": 0.6,
    # faces
    "det_threshold": faces.DEFAULT_DET_CONF,
    "face_endpoint": "",
    "face_token_env": "GAITGENDER_FACE_TOKEN",
    # training
    "loss": "nflrce",
    "balance": "none",
    "epochs": 50,
    "patience": 10,
    "batch_size": 128,
    "learning_rate": 1e-4,
    "input_size": 64,
    "augment": True,
    # synthetic data
    "n_subjects": 20,
    "angles": "0,18,36,54,72,90,108,126,144,162,180",
    "variations": "NM",
    "noise_std": 0.02,
    "val_fraction": 0.3,
    "label_front_truth": False,
}


def _coerce(key, value, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        return type(default)(value.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from None


def load_config(path=None, overrides=None):
    """Defaults, then ``key=value`` lines from ``path``, then ``overrides``."""
    cfg = dict(CONFIG_DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        for n, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in CONFIG_DEFAULTS:
                raise ConfigError(f"{path}:{n}: unknown key {key!r}")
            cfg[key] = _coerce(key, value, CONFIG_DEFAULTS[key])
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        cfg[key] = _coerce(key, str(value), CONFIG_DEFAULTS[key]) if isinstance(value, str) else value
    return cfg


def write_config(path, cfg):
    Path(path).write_text("".join(f"{k}={_fmt(v)}\n" for k, v in cfg.items()))


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def train_config(cfg, **kw):
    params = dict(
        learning_rate=cfg["learning_rate"], batch_size=cfg["batch_size"], epochs=cfg["epochs"],
        patience=cfg["patience"], loss=cfg["loss"], balance=cfg["balance"], seed=cfg["seed"],
        frames=cfg["frames"], input_size=cfg["input_size"], augment=cfg["augment"],
    )
    params.update(kw)
    return training.TrainConfig(**params)


# -- embedding cache -----------------------------------------------------------
#
#   # gaitgender-embeddings v1 n=<rows> d=<dims> embedder=<name>
#   <sequence_id>\t<v_1> <v_2> ... <v_d>      (values as %.17g, exact round trip)


def write_embeddings(path, ids, matrix, embedder="handcrafted"):
    matrix = np.asarray(matrix, dtype=np.float64)
    n, d = matrix.shape
    lines = [f"{EMBEDDING_MAGIC} v1 n={n} d={d} embedder={embedder}"]
    for sid, row in zip(ids, matrix):
        lines.append(sid + "\t" + " ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_embeddings(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"embedding cache {path} not found; run `gaitgender embed` first")
    lines = path.read_text().splitlines()
    head = lines[0].split() if lines else []
    if len(head) < 5 or " ".join(head[:2]) != EMBEDDING_MAGIC:
        raise ParseError(f"{path}: missing embedding header")
    info = dict(kv.split("=", 1) for kv in head[3:])
    n, d = int(info["n"]), int(info["d"])
    ids, rows = [], []
    for k, line in enumerate(lines[1:], start=2):
        sid, _, vals = line.partition("\t")
        row = np.array(vals.split(), dtype=np.float64)
        if row.size != d:
            raise ParseError(f"{path}:{k}: {row.size} values, expected {d}")
        ids.append(sid)
        rows.append(row)
    if len(ids) != n:
        raise ParseError(f"{path}: header says {n} rows, found {len(ids)}")
    return ids, (np.stack(rows) if rows else np.zeros((0, d)))


# -- synthetic dataset -----------------------------------------------------------


def synth_config_from(cfg):
    return synth.SynthConfig(
        n_subjects=cfg["n_subjects"],
        angles=tuple(int(a) for a in str(cfg["angles"]).split(",") if a.strip()),
        variations=tuple(Variation(v.strip()) for v in str(cfg["variations"]).split(",") if v.strip()),
        frames=cfg["frames"],
        fps=cfg["fps"],
        noise_std=cfg["noise_std"],
        seed=cfg["seed"],
    )


def synthetic_face_trace(cfg, walk, rng, width=640.0, height=480.0):
    """Simulated face-analyser output for one front-view walk.

    The face box grows as the walker approaches. With probability
    ``cfg.face_error_rate`` the classifier is confidently wrong for the whole
    video; a few frames carry low-confidence detections or a smaller
    background face.
    """
    truth_female = walk.label == Label.FEMALE
    wrong = rng.random() < cfg.face_error_rate
    female = truth_female != wrong
    obs = []
    n = len(walk.sequence)
    for f in range(n):
        size = 30.0 + 50.0 * f / max(n - 1, 1) + rng.normal(0, 2)
        cx, cy = 320.0 + rng.normal(0, 5), 120.0 + rng.normal(0, 5)
        p_f = float(np.clip(rng.normal(0.85 if female else 0.15, 0.08), 0.0, 1.0))
        conf = float(rng.uniform(0.92, 1.0) if rng.random() > 0.1 else rng.uniform(0.5, 0.9))
        obs.append(faces.FaceObservation(f, (cx - size / 2, cy - size / 2, size, size), p_f, conf))
        if rng.random() < 0.1:
            s2 = 12.0
            obs.append(faces.FaceObservation(f, (rng.uniform(0, width - s2), rng.uniform(0, height - s2), s2, s2),
                                             float(rng.random()), float(rng.uniform(0.9, 1.0))))
    return faces.VideoFaceTrace(width, height, obs)


def sequence_id_for(subject_id, variation, angle):
    return f"{subject_id}-{Variation(variation).value}-{int(angle):03d}"


def assign_subject_splits(subjects, val_fraction, seed):
    """Seeded subject-level TRAIN/VAL assignment."""
    unique = sorted(set(subjects))
    rng = np.random.default_rng([seed, 5])
    n_val = int(round(val_fraction * len(unique)))
    val = set(rng.choice(unique, size=n_val, replace=False).tolist()) if n_val else set()
    return {s: (Split.VAL if s in val else Split.TRAIN) for s in unique}


def generate_synthetic_dataset(out_dir, cfg=None, scfg=None):
    """Write pose files, face fixtures and a manifest for the synthetic walker."""
    cfg = load_config(overrides=cfg or {})
    scfg = scfg or synth_config_from(cfg)
    out = Path(out_dir)
    (out / "poses").mkdir(parents=True, exist_ok=True)
    (out / "faces").mkdir(parents=True, exist_ok=True)
    walks = synth.synthesize_walks(scfg)
    subjects = [w.sequence.meta.subject_id for w in walks]
    splits = assign_subject_splits(subjects, cfg["val_fraction"], scfg.seed)
    entries = []
    for w in walks:
        m = w.sequence.meta
        sid = sequence_id_for(m.subject_id, m.variation, m.view_angle_deg)
        pose_rel = f"poses/{sid}.json"
        write_pose_sequence(out / pose_rel, w.sequence)
        label = None
        if m.view_angle_deg in faces.FRONT_VIEW_ANGLES:
            rng = np.random.default_rng([scfg.seed, 11, w.style, w.subject_index,
                                         scfg.variations.index(m.variation)])
            faces.write_face_fixture(out / "faces" / f"{sid}{faces.FIXTURE_SUFFIX}",
                                     synthetic_face_trace(scfg, w, rng))
            if cfg["label_front_truth"]:
                label = PseudoLabel(Label(w.label), 1.0 if w.label == Label.FEMALE else 0.0, LabelSource.TRUE)
        entries.append(ManifestEntry(sid, pose_rel, m.subject_id, m.view_angle_deg, m.variation,
                                     label, int(w.label), splits[m.subject_id]))
    manifest = DatasetManifest(entries, scfg.seed, out)
    manifest.write(out / "manifest.tsv")
    return manifest


# -- stages ----------------------------------------------------------------------


def artifacts_dir(manifest):
    d = manifest.root / "artifacts"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _npy_path(manifest, kind, sid):
    return manifest.root / "artifacts" / kind / f"{sid}.npy"


def _save_npy(path, arr):
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, np.ascontiguousarray(arr, dtype=np.float64), allow_pickle=False)


def _load_npy(path, stage):
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `gaitgender {stage}` first")
    return np.load(path, allow_pickle=False)


def ingest_directory(pose_dir, manifest_path, seed=0):
    """Build a manifest from pose files named ``<subject>_<variation>_<angle>.json``."""
    pose_dir = Path(pose_dir)
    root = Path(manifest_path).parent
    pattern = re.compile(r"(?P<subject>.+)_(?P<variation>[A-Z]+)_(?P<angle>\d{1,3})")
    entries = []
    for p in sorted(pose_dir.glob("*.json")):
        m = pattern.fullmatch(p.stem)
        if not m:
            raise ManifestError(f"{p.name}: expected <subject>_<variation>_<angle>.json")
        var = m["variation"] if m["variation"] in Variation.__members__ else Variation.OTHER
        sid = sequence_id_for(m["subject"], var, m["angle"])
        entries.append(ManifestEntry(sid, os.path.relpath(p, root), m["subject"], int(m["angle"]), var))
    manifest = DatasetManifest(entries, seed, root)
    manifest.write(manifest_path)
    return manifest


def ingest_report(manifest, cfg):
    """Validate every referenced pose file; returns ``{sequence_id: ValidationReport}``."""
    reports = {}
    for e in manifest:
        seq = load_pose_sequence(manifest.pose_file(e), cfg["fps"], e.meta())
        reports[e.sequence_id] = validate_sequence(seq)
    lines = ["sequence_id\tframes\tflags"]
    for sid, r in reports.items():
        lines.append(f"{sid}\t{r.n_frames}\t{','.join(sorted(r.flags)) or 'clean'}")
    (artifacts_dir(manifest) / "ingest_report.tsv").write_text("\n".join(lines) + "\n")
    return reports


def annotate_faces(manifest, analyzer, cfg):
    return faces.label_dataset(manifest, analyzer, cfg["det_threshold"])


def normalize_stage(manifest, cfg):
    """Normalise every pose file; unusable sequences are skipped and returned."""
    skipped = []
    for e in manifest:
        seq = load_pose_sequence(manifest.pose_file(e), cfg["fps"], e.meta())
        try:
            norm = normalize_sequence(seq)
        except SequenceUnusable as exc:
            log.warning("%s: %s", e.sequence_id, exc)
            skipped.append(e.sequence_id)
            _npy_path(manifest, "normalized", e.sequence_id).unlink(missing_ok=True)
            continue
        _save_npy(_npy_path(manifest, "normalized", e.sequence_id), norm.data)
    return skipped


def load_normalized(manifest, entry, cfg):
    data = _load_npy(_npy_path(manifest, "normalized", entry.sequence_id), "normalize")
    return SkeletonSequence(data, fps=cfg["fps"], meta=entry.meta(), normalized=True)


def usable_entries(manifest):
    return [e for e in manifest if _npy_path(manifest, "normalized", e.sequence_id).exists()]


def encode_stage(manifest, cfg):
    for e in usable_entries(manifest):
        img = encode_tssi(load_normalized(manifest, e, cfg), cfg["frames"])
        _save_npy(_npy_path(manifest, "tssi", e.sequence_id), img)


def embed_stage(manifest, cfg, embedder=None):
    embedder = embedder or propagation.HandcraftedEmbedder()
    entries = usable_entries(manifest)
    if not entries:
        raise MissingArtifact("no normalised sequences; run `gaitgender normalize` first")
    mat = np.stack([embedder.embed(load_normalized(manifest, e, cfg)) for e in entries])
    name = type(embedder).__name__.replace("Embedder", "").lower() or "custom"
    path = artifacts_dir(manifest) / "embeddings.txt"
    write_embeddings(path, [e.sequence_id for e in entries], mat, name)
    return path


def _source_labels(manifest, ids):
    by_id = manifest.by_id()
    out = np.full(len(ids), -1, dtype=np.intp)
    for i, sid in enumerate(ids):
        lab = by_id[sid].label
        if lab is not None and lab.source in (LabelSource.TRUE, LabelSource.FACE):
            out[i] = int(lab.label)
    return out


def propagate_stage(manifest, cfg, mode=None):
    """Propagate front-view labels to the other sequences in the embedding cache.

    Previous PROPAGATED labels are replaced. Returns the result, the ids it
    refers to and the per-angle report (None without ground truth).
    """
    ids, emb = read_embeddings(artifacts_dir(manifest) / "embeddings.txt")
    for e in manifest:
        if e.label is not None and e.label.source is LabelSource.PROPAGATED:
            e.label = None
    labels = _source_labels(manifest, ids)
    mode = mode or cfg["mode"]
    if mode == "nn":
        result = propagation.propagate_nn(emb, labels, cfg["k_vote"])
    elif mode == "spectral":
        graph = propagation.build_knn_graph(emb, k=min(cfg["k"], len(ids) - 1))
        result = propagation.propagate_spectral(
            graph, labels, cfg["spectral_mode"], alpha=cfg["alpha"], n_clusters=cfg["n_clusters"] or None,
            embeddings=emb, k_vote=cfg["k_vote"], seed=cfg["seed"],
        )
    else:
        raise ConfigError(f"mode must be 'nn' or 'spectral', got {mode!r}")
    by_id = manifest.by_id()
    for sid, pl in zip(ids, result.pseudo_labels(0.0)):
        if pl is not None:
            by_id[sid].label = pl
    report = None
    gt = [by_id[s].gt_label for s in ids]
    if all(g is not None for g in gt):
        table, mean = propagation.pseudo_label_report(result, np.array(gt), [by_id[s].view_angle_deg for s in ids])
        report = (table, mean)
        lines = ["angle\taccuracy"] + [f"{a}\t{'' if v is None else repr(v)}" for a, v in table.items()]
        lines.append(f"Mean\t{mean!r}")
        (artifacts_dir(manifest) / "propagation_report.tsv").write_text("\n".join(lines) + "\n")
    return result, ids, report


def label_confidence(label):
    return max(label.score, 1.0 - label.score)


def training_set(manifest, cfg, tau=None, include_propagated=True, split=Split.TRAIN):
    """Entries and labels used for training.

    Front-view TRUE/FACE labels are always used; PROPAGATED labels only when
    their confidence is at least ``tau``. Without split assignments every
    entry is eligible.
    """
    tau = cfg["tau"] if tau is None else tau
    assigned = any(e.split is not Split.UNASSIGNED for e in manifest)
    chosen, labels = [], []
    for e in usable_entries(manifest):
        if assigned and e.split is not split:
            continue
        lab = e.label
        if lab is None:
            continue
        if lab.source is LabelSource.PROPAGATED and (not include_propagated or label_confidence(lab) < tau):
            continue
        chosen.append(e)
        labels.append(int(lab.label))
    return chosen, np.array(labels, dtype=np.intp)


def train_stage(manifest, cfg, tau=None, include_propagated=True, name="model"):
    entries, labels = training_set(manifest, cfg, tau, include_propagated)
    if not entries:
        raise ManifestError("no labelled training entries; run annotate-faces / propagate first")
    samples = [load_normalized(manifest, e, cfg) for e in entries]
    result = training.train(samples, labels, train_config(cfg))
    out = artifacts_dir(manifest)
    result.model.save(out / f"{name}.pt")
    (out / f"{name}_train_log.tsv").write_text(result.log_lines())
    return result


def eval_stage(manifest, cfg, group_by="angle", model_name="model", split=Split.VAL):
    """Score a saved model against ``gt_label`` on ``split`` (all entries if unassigned)."""
    model_path = artifacts_dir(manifest) / f"{model_name}.pt"
    if not model_path.exists():
        raise MissingArtifact(f"{model_path} not found; run `gaitgender train` first")
    model = training.ModelHandle.load(model_path)
    assigned = any(e.split is not Split.UNASSIGNED for e in manifest)
    entries = [e for e in usable_entries(manifest)
               if e.gt_label is not None and (not assigned or e.split is split)]
    if not entries:
        raise ManifestError("no evaluation entries with ground-truth labels")
    samples = [load_normalized(manifest, e, cfg) for e in entries]
    y = np.array([e.gt_label for e in entries])
    if group_by == "angle":
        groups = [e.view_angle_deg for e in entries]
        expected = sorted(set(groups))
    elif group_by == "variation":
        groups = [e.variation.value for e in entries]
        expected = [v for v in ("WS", "CB", "CL", "CBG", "NM", "BG", "OTHER") if v in set(groups)]
    elif group_by in (None, "none"):
        groups, expected = None, None
    else:
        raise ConfigError(f"group_by must be angle, variation or none, got {group_by!r}")
    metrics = training.evaluate_f1(model, samples, y, groups, expected)
    write_metrics(artifacts_dir(manifest) / f"metrics_{model_name}_{group_by}.tsv", metrics)
    return metrics


def write_metrics(path, metrics):
    lines = ["group\tf1"]
    for k, v in metrics.per_group.items():
        lines.append(f"{k}\t{'' if v is None else repr(v)}")
    lines.append(f"Mean\t{'' if metrics.group_mean is None else repr(metrics.group_mean)}")
    lines.append(f"All\t{metrics.f1!r}")
    lines.append(f"accuracy\t{metrics.accuracy!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path} not found; run `gaitgender eval` first")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))[1:]
    return {k: (float(v) if v else None) for k, v in rows}
