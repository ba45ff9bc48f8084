"""Sample records, label schemes, manifests, splits, and synthetic data.

On-disk layout of a dataset directory:

    manifest.json    {version, task_scheme, dims:{t,c,h,w}, au_vocabulary,
                      records:[{sample_id, subject_id, path, emotion_raw,
                      au_bits}], meta?}
    *.bin            one tensor file per sample, binary layout below

Tensor file: 32-byte header then a raw little-endian row-major payload.

    bytes  0..3   magic  b"MEDN"
    byte   4      dtype code (0 = float32)
    bytes  5..7   reserved, zero
    bytes  8..23  four little-endian u32 dims
    bytes 24..31  reserved, zero

Flow tensors are stored as (t-1, c, h, w) against the manifest dims, i.e. a
manifest declaring t=8 points at files of shape (7, 2, h, w).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateDataset, InfeasibleConfig, NonFiniteValues, ShapeMismatch, UnknownLabel

MANIFEST_VERSION = 1
TENSOR_MAGIC = b"MEDN"
_DTYPE_CODES = {0: np.dtype("<f4")}

# Class groupings for the supported task schemes.  The 3-class scheme is the
# MEGC2019 composite mapping (Negative / Positive / Surprise); 4-class appends
# Other; 7-class keeps the native seven labels.  Lookup is case-insensitive.
_NEGATIVE_RAW = ["repression", "anger", "contempt", "disgust", "fear", "sadness"]

TASK_SCHEMES: dict[str, dict] = {
    "3-class": {
        "classes": ["Negative", "Positive", "Surprise"],
        "mapping": {**{name: 0 for name in _NEGATIVE_RAW}, "happiness": 1, "surprise": 2},
    },
    "4-class": {
        "classes": ["Negative", "Positive", "Surprise", "Other"],
        "mapping": {**{name: 0 for name in _NEGATIVE_RAW}, "happiness": 1, "surprise": 2, "others": 3},
    },
    "7-class": {
        "classes": ["happiness", "disgust", "surprise", "fear", "anger", "sadness", "others"],
        "mapping": {
            "happiness": 0,
            "disgust": 1,
            "surprise": 2,
            "fear": 3,
            "anger": 4,
            "sadness": 5,
            "others": 6,
        },
    },
}


def num_classes(scheme: str) -> int:
    return len(TASK_SCHEMES[scheme]["classes"])


def map_emotion(raw_name: str, scheme: str) -> int:
    """Map a raw emotion name to its class id under a task scheme."""
    if scheme not in TASK_SCHEMES:
        raise UnknownLabel(f"unknown task scheme {scheme!r}")
    mapping = TASK_SCHEMES[scheme]["mapping"]
    key = raw_name.strip().lower()
    if key not in mapping:
        raise UnknownLabel(f"emotion {raw_name!r} is not in the {scheme} vocabulary")
    return mapping[key]


# ---------------------------------------------------------------------------
# Records and manifests
# ---------------------------------------------------------------------------


@dataclass
class SampleRecord:
    sample_id: str
    subject_id: str
    path: str  # tensor file, relative to the manifest directory
    emotion_raw: str
    au_bits: str  # e.g. "010010", aligned with the manifest AU vocabulary

    def au_vector(self) -> np.ndarray:
        return np.array([int(ch) for ch in self.au_bits], dtype=np.int64)

    def class_id(self, scheme: str) -> int:
        return map_emotion(self.emotion_raw, scheme)


@dataclass
class DatasetManifest:
    task_scheme: str
    dims: dict  # {"t": T, "c": C, "h": H, "w": W}; flow files are (t-1, c, h, w)
    au_vocabulary: list[str]
    records: list[SampleRecord]
    root: Path = field(default_factory=Path)
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return num_classes(self.task_scheme)

    @property
    def flow_shape(self) -> tuple[int, int, int, int]:
        d = self.dims
        return (d["t"] - 1, d["c"], d["h"], d["w"])

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.records})

    def class_ids(self) -> np.ndarray:
        return np.array([r.class_id(self.task_scheme) for r in self.records], dtype=np.int64)

    def record_by_id(self, sample_id: str) -> SampleRecord:
        for rec in self.records:
            if rec.sample_id == sample_id:
                return rec
        raise KeyError(sample_id)

    def load_flow(self, record: SampleRecord) -> np.ndarray:
        flow = read_tensor(self.root / record.path)
        validate_flow(flow, self.dims)
        return flow

    def to_dict(self) -> dict:
        doc = {
            "version": MANIFEST_VERSION,
            "task_scheme": self.task_scheme,
            "dims": dict(self.dims),
            "au_vocabulary": list(self.au_vocabulary),
            "records": [
                {
                    "sample_id": r.sample_id,
                    "subject_id": r.subject_id,
                    "path": r.path,
                    "emotion_raw": r.emotion_raw,
                    "au_bits": r.au_bits,
                }
                for r in self.records
            ],
        }
        if self.meta:
            doc["meta"] = self.meta
        return doc

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def _check_record(rec: SampleRecord, vocab_size: int) -> None:
    if not rec.subject_id:
        raise ShapeMismatch(f"record {rec.sample_id}: empty subject_id")
    if len(rec.au_bits) != vocab_size or any(ch not in "01" for ch in rec.au_bits):
        raise ShapeMismatch(
            f"record {rec.sample_id}: au_bits {rec.au_bits!r} does not match vocabulary size {vocab_size}"
        )


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != MANIFEST_VERSION:
        raise ShapeMismatch(f"unsupported manifest version {doc.get('version')!r}")
    if doc["task_scheme"] not in TASK_SCHEMES:
        raise UnknownLabel(f"unknown task scheme {doc['task_scheme']!r}")
    records = [
        SampleRecord(
            sample_id=r["sample_id"],
            subject_id=r["subject_id"],
            path=r["path"],
            emotion_raw=r["emotion_raw"],
            au_bits=r["au_bits"],
        )
        for r in doc["records"]
    ]
    manifest = DatasetManifest(
        task_scheme=doc["task_scheme"],
        dims=doc["dims"],
        au_vocabulary=list(doc["au_vocabulary"]),
        records=records,
        root=path.parent,
        meta=doc.get("meta", {}),
    )
    for rec in records:
        _check_record(rec, len(manifest.au_vocabulary))
        map_emotion(rec.emotion_raw, manifest.task_scheme)  # reject unknown labels at load
    return manifest


# ---------------------------------------------------------------------------
# Tensor files
# ---------------------------------------------------------------------------


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    if arr.ndim != 4:
        raise ShapeMismatch(f"tensor files hold 4-d arrays, got shape {arr.shape}")
    header = TENSOR_MAGIC + struct.pack("<B3x4I8x", 0, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32 or header[:4] != TENSOR_MAGIC:
            raise ShapeMismatch(f"{path}: not a tensor file (bad magic)")
        code = header[4]
        if code not in _DTYPE_CODES:
            raise ShapeMismatch(f"{path}: unknown dtype code {code}")
        dims = struct.unpack("<4I", header[8:24])
        payload = fh.read()
    dtype = _DTYPE_CODES[code]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise ShapeMismatch(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


def validate_flow(flow: np.ndarray, dims: dict) -> None:
    """Check a flow tensor against manifest dims; raises on violation."""
    expected = (dims["t"] - 1, dims["c"], dims["h"], dims["w"])
    if tuple(flow.shape) != expected:
        raise ShapeMismatch(f"flow shape {tuple(flow.shape)} != expected {expected}")
    if not np.issubdtype(flow.dtype, np.floating):
        raise ShapeMismatch(f"flow dtype {flow.dtype} is not floating point")
    if not np.all(np.isfinite(flow)):
        raise NonFiniteValues("flow contains NaN or Inf")


# ---------------------------------------------------------------------------
# Splits and audits
# ---------------------------------------------------------------------------


def loso_splits(manifest: DatasetManifest) -> list[tuple[list[str], list[str]]]:
    """Leave-one-subject-out folds: one per subject, ordered by subject id.

    Returns (train_sample_ids, test_sample_ids) per fold; the test set of
    fold k is exactly the k-th subject's samples.
    """
    subjects = manifest.subjects()
    if len(subjects) < 2:
        raise DegenerateDataset(f"LOSO needs >=2 subjects, found {len(subjects)}")
    folds = []
    for subject in subjects:
        test = [r.sample_id for r in manifest.records if r.subject_id == subject]
        train = [r.sample_id for r in manifest.records if r.subject_id != subject]
        folds.append((train, test))
    return folds


def hard_sample_audit(manifest: DatasetManifest) -> tuple[int, int, float]:
    """Count samples whose AU pattern also occurs with a different class.

    Returns (total, hard_count, proportion).  A sample is hard iff at least
    one other sample shares its exact AU bit pattern but carries a different
    class id under the manifest's task scheme.
    """
    groups: dict[str, set[int]] = {}
    for rec in manifest.records:
        groups.setdefault(rec.au_bits, set()).add(rec.class_id(manifest.task_scheme))
    hard = sum(1 for rec in manifest.records if len(groups[rec.au_bits]) >= 2)
    total = len(manifest.records)
    return total, hard, (hard / total if total else 0.0)


def hard_sample_ids(manifest: DatasetManifest) -> set[str]:
    groups: dict[str, set[int]] = {}
    for rec in manifest.records:
        groups.setdefault(rec.au_bits, set()).add(rec.class_id(manifest.task_scheme))
    return {rec.sample_id for rec in manifest.records if len(groups[rec.au_bits]) >= 2}


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    subjects: int = 6
    samples_per_subject: int = 50
    task_scheme: str = "3-class"
    au_vocabulary: list[str] = field(default_factory=lambda: [f"AU{i}" for i in (1, 2, 4, 6, 12, 15)])
    shared_patterns: int = 3
    hard_proportion: float = 0.85
    t: int = 8
    height: int = 144
    width: int = 144
    noise_sigma: float = 0.05
    envelope_jitter: float = 0.08
    subject_amplitude_jitter: float = 0.06

    @property
    def n_classes(self) -> int:
        return num_classes(self.task_scheme)


# One raw-name cycle per class so the generator exercises the grouping in
# map_emotion instead of always emitting a single representative.
_RAW_CYCLES = {
    "3-class": [_NEGATIVE_RAW, ["happiness"], ["surprise"]],
    "4-class": [_NEGATIVE_RAW, ["happiness"], ["surprise"], ["others"]],
    "7-class": [[name] for name in TASK_SCHEMES["7-class"]["classes"]],
}


def _class_envelope(class_id: int, length: int) -> np.ndarray:
    """Temporal activation profile for a class.

    All classes reorder the *same* multiset of values, so any statistic that
    is invariant to temporal permutation (in particular the time-averaged
    flow field) carries no class information; only the ordering does.
    """
    base = np.linspace(1.0, 0.25, length)  # descending
    if class_id == 0:
        return base[::-1].copy()  # rising onset
    if class_id == 1:
        return base.copy()  # falling from onset
    order = np.argsort(np.abs(np.arange(length) - (length - 1) / 2.0), kind="stable")
    tent = np.empty(length)
    tent[order] = base  # peak in the middle, decaying outward
    if class_id == 2:
        return tent
    if class_id == 3:
        return tent[::-1].copy() if length % 2 == 0 else np.roll(tent, length // 2)
    return np.roll(base, class_id)  # distinct rotations for 7-class


def _au_templates(rng: np.random.Generator, n_au: int, height: int, width: int) -> np.ndarray:
    """Per-AU displacement blobs, shape (n_au, 2, h, w)."""
    ys, xs = np.mgrid[0:height, 0:width]
    templates = np.zeros((n_au, 2, height, width), dtype=np.float64)
    for i in range(n_au):
        cy = rng.uniform(0.2, 0.8) * height
        cx = rng.uniform(0.2, 0.8) * width
        sigma = rng.uniform(0.10, 0.20) * min(height, width)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        blob = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2.0 * sigma**2))
        templates[i, 0] = np.cos(theta) * blob
        templates[i, 1] = np.sin(theta) * blob
    return templates


def _distinct_patterns(rng: np.random.Generator, n_patterns: int, n_au: int) -> list[str]:
    if n_patterns > 2**n_au - 1:
        raise InfeasibleConfig(
            f"cannot draw {n_patterns} distinct non-empty AU patterns from {n_au} AUs"
        )
    seen: list[str] = []
    attempts = 0
    while len(seen) < n_patterns:
        attempts += 1
        if attempts > 10000:
            raise InfeasibleConfig("failed to draw distinct AU patterns")
        bits = rng.integers(0, 2, size=n_au)
        if bits.sum() == 0:
            continue
        key = "".join(str(b) for b in bits)
        if key not in seen:
            seen.append(key)
    return seen


def generate_synthetic(cfg: SynthConfig, seed: int, out_dir: str | Path) -> DatasetManifest:
    """Generate a dataset whose hard samples differ only in temporal dynamics.

    Each sample's flow is an AU-pattern spatial template (shared by every
    sample with that AU vector) modulated by a class-specific temporal
    envelope, plus Gaussian noise.  Samples assigned to shared patterns are
    mutually hard: identical AUs, identical time-averaged motion, different
    emotion class.  Deterministic in (cfg, seed).
    """
    if cfg.task_scheme not in TASK_SCHEMES:
        raise InfeasibleConfig(f"unknown task scheme {cfg.task_scheme!r}")
    n_classes = cfg.n_classes
    total = cfg.subjects * cfg.samples_per_subject
    if total <= 0:
        raise InfeasibleConfig("empty dataset requested")
    if not 0.0 <= cfg.hard_proportion <= 1.0:
        raise InfeasibleConfig("hard_proportion must be in [0, 1]")

    n_hard = int(round(cfg.hard_proportion * total))
    n_hard -= n_hard % n_classes  # full class blocks keep every shared pattern multi-class
    if cfg.hard_proportion > 0 and n_hard == 0:
        raise InfeasibleConfig("requested hard proportion yields no complete hard group")
    if abs(n_hard / total - cfg.hard_proportion) > 0.05:
        raise InfeasibleConfig(
            f"hard proportion {cfg.hard_proportion} not reachable within 0.05 "
            f"for {total} samples and {n_classes} classes"
        )
    n_shared = cfg.shared_patterns if n_hard > 0 else 0
    if n_hard > 0 and n_hard < n_classes * n_shared:
        n_shared = max(1, n_hard // n_classes)
    n_exclusive = n_classes if n_hard < total else 0
    patterns_needed = n_shared + n_exclusive
    if patterns_needed == 0:
        raise InfeasibleConfig("no AU patterns required; config is degenerate")

    rng = np.random.default_rng(seed)
    patterns = _distinct_patterns(rng, patterns_needed, len(cfg.au_vocabulary))
    shared = patterns[:n_shared]
    exclusive = patterns[n_shared:]
    templates = _au_templates(rng, len(cfg.au_vocabulary), cfg.height, cfg.width)

    def pattern_field(bits: str) -> np.ndarray:
        active = [i for i, b in enumerate(bits) if b == "1"]
        return templates[active].sum(axis=0)

    # Per-sample (class, pattern) assignments: hard samples cycle classes in
    # blocks over the shared patterns so every shared pattern hosts all
    # classes; the remainder uses one exclusive pattern per class.
    assignments: list[tuple[int, str]] = []
    for i in range(n_hard):
        assignments.append((i % n_classes, shared[(i // n_classes) % n_shared]))
    for i in range(total - n_hard):
        assignments.append((i % n_classes, exclusive[i % n_classes]))
    order = rng.permutation(total)
    assignments = [assignments[i] for i in order]

    subject_amp = 1.0 + cfg.subject_amplitude_jitter * rng.standard_normal(cfg.subjects)
    raw_cycles = _RAW_CYCLES[cfg.task_scheme]
    raw_counters = [0] * n_classes
    t_steps = cfg.t - 1
    fields = {bits: pattern_field(bits) for bits in patterns}

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records: list[SampleRecord] = []
    for idx, (class_id, bits) in enumerate(assignments):
        subject = idx // cfg.samples_per_subject
        envelope = _class_envelope(class_id, t_steps) * subject_amp[subject]
        envelope = envelope * (1.0 + cfg.envelope_jitter * rng.standard_normal(t_steps))
        flow = envelope[:, None, None, None] * fields[bits][None]
        flow = flow + rng.normal(0.0, cfg.noise_sigma, size=flow.shape)
        cycle = raw_cycles[class_id]
        raw_name = cycle[raw_counters[class_id] % len(cycle)]
        raw_counters[class_id] += 1
        sample_id = f"s{subject:02d}_e{idx:04d}"
        path = f"{sample_id}.bin"
        write_tensor(out_dir / path, flow.astype(np.float32))
        records.append(
            SampleRecord(
                sample_id=sample_id,
                subject_id=f"subj{subject:02d}",
                path=path,
                emotion_raw=raw_name,
                au_bits=bits,
            )
        )

    manifest = DatasetManifest(
        task_scheme=cfg.task_scheme,
        dims={"t": cfg.t, "c": 2, "h": cfg.height, "w": cfg.width},
        au_vocabulary=list(cfg.au_vocabulary),
        records=records,
        root=out_dir,
    )
    total_n, hard_n, realized = hard_sample_audit(manifest)
    manifest.meta = {
        "generator": "synthetic",
        "seed": seed,
        "hard_proportion_target": cfg.hard_proportion,
        "hard_proportion_realized": realized,
        "noise_sigma": cfg.noise_sigma,
    }
    manifest.save(out_dir / "manifest.json")
    return manifest


def directory_digest(root: str | Path) -> str:
    """SHA-256 over sorted file names and contents; used by determinism checks."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()
