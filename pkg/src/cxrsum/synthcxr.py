"""Procedural corpus of synthetic chest-study records.

Each record pairs a rendered 64x64 grayscale image with a findings narrative,
an impression summary, and the ground-truth label set. The sentence grammar is
closed over a fixed keyword lexicon so a rule-based labeler can invert it
exactly; the image primitives are placed in disjoint zones so per-kind pixel
statistics recover presence reliably.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = (
    "cardiomegaly",
    "device",
    "effusion",
    "fracture",
    "no_finding",
    "nodule",
    "opacity",
    "pneumothorax",
)
LATERALITIES = ("left", "right", "bilateral", "none")
SEVERITIES = ("mild", "moderate", "severe", "none")

# generator conventions: which kinds carry which modifiers
LATERAL_KINDS = frozenset({"opacity", "effusion", "nodule", "pneumothorax", "fracture"})
SEVERITY_KINDS = frozenset({"opacity", "effusion", "cardiomegaly"})

# shared lexicon: every surface form any template can emit for a kind
KIND_KEYWORDS: dict[str, tuple[str, ...]] = {
    "opacity": ("opacity", "opacification"),
    "effusion": ("effusion",),
    "cardiomegaly": ("cardiomegaly", "enlarged cardiac silhouette"),
    "nodule": ("nodule",),
    "pneumothorax": ("pneumothorax",),
    "device": ("device", "catheter"),
    "fracture": ("fracture",),
}
NO_FINDING_PHRASE = "no acute cardiopulmonary process"
NEGATION_CUES = ("no", "without", "absence of", "negative for", "resolved", "free of")
LATERALITY_WORDS = ("left", "right", "bilateral")
SEVERITY_WORDS = ("mild", "moderate", "severe")

P_POSITIVE = 0.25  # marginal probability of each non-normal kind

IMAGE_SIZE = 64
BACKGROUND_MEAN = 40.0
BACKGROUND_SIGMA = 8.0


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Finding:
    kind: str
    laterality: str = "none"
    severity: str = "none"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GeneratorError(f"unknown finding kind {self.kind!r}")
        if self.laterality not in LATERALITIES:
            raise GeneratorError(f"unknown laterality {self.laterality!r}")
        if self.severity not in SEVERITIES:
            raise GeneratorError(f"unknown severity {self.severity!r}")
        if self.kind == "no_finding" and (self.laterality != "none" or self.severity != "none"):
            raise GeneratorError("no_finding carries no laterality or severity")


def validate_label_set(labels) -> frozenset[Finding]:
    labels = frozenset(labels)
    kinds = {f.kind for f in labels}
    if "no_finding" in kinds and len(kinds) > 1:
        raise GeneratorError("no_finding cannot coexist with other findings")
    return labels


def sorted_findings(labels) -> list[Finding]:
    """Canonical (kind, laterality, severity) order; use before iterating sets."""
    return sorted(labels)


@dataclass
class StudyRecord:
    id: str
    image: np.ndarray  # (64, 64) uint8
    findings_text: str
    impression_text: str
    labels: frozenset[Finding]
    image_only: frozenset[Finding]


@dataclass
class CorpusConfig:
    n_train: int = 2000
    n_val: int = 200
    n_test: int = 400
    seed: int = 0
    p_img_only: float = 0.15
    p_filler: float = 0.25

    def __post_init__(self):
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 1:
                raise GeneratorError(f"{name} must be >= 1")
        for name in ("p_img_only", "p_filler"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise GeneratorError(f"{name} must lie in [0, 1]")


# ---------------------------------------------------------------------------
# image rendering
# ---------------------------------------------------------------------------

_OPACITY_RADIUS = {"mild": 4.0, "moderate": 5.5, "severe": 7.0}
_OPACITY_CENTERS = {"left": (21, 16), "right": (21, 48)}
_NODULE_CENTERS = {"left": (6, 16), "right": (6, 48)}
_FRACTURE_COLS = {"left": (9, 19), "right": (45, 55)}
_CARDIO_AXES = {"mild": (7.0, 11.0), "moderate": (8.0, 13.0), "severe": (10.0, 16.0)}
_EFFUSION_TOP = {"mild": 59, "moderate": 57, "severe": 55}
_EFFUSION_COLS = {"left": (4, 31), "right": (32, 59), "bilateral": (4, 59)}


def _sides(laterality: str) -> list[str]:
    return ["left", "right"] if laterality == "bilateral" else [laterality]


def _disk_mask(center: tuple[int, int], radius: float) -> np.ndarray:
    rr, cc = np.ogrid[:IMAGE_SIZE, :IMAGE_SIZE]
    return (rr - center[0]) ** 2 + (cc - center[1]) ** 2 <= radius**2


def _ellipse_mask(center: tuple[int, int], axes: tuple[float, float]) -> np.ndarray:
    rr, cc = np.ogrid[:IMAGE_SIZE, :IMAGE_SIZE]
    return ((rr - center[0]) / axes[0]) ** 2 + ((cc - center[1]) / axes[1]) ** 2 <= 1.0


def render_image(labels, seed: int) -> np.ndarray:
    """Deterministic composition of per-kind primitives over Gaussian noise."""
    labels = validate_label_set(labels)
    rng = np.random.default_rng(seed)
    canvas = rng.normal(BACKGROUND_MEAN, BACKGROUND_SIGMA, size=(IMAGE_SIZE, IMAGE_SIZE))
    for f in sorted_findings(labels):
        if f.kind == "opacity":
            for side in _sides(f.laterality):
                canvas[_disk_mask(_OPACITY_CENTERS[side], _OPACITY_RADIUS[f.severity])] += 70.0
        elif f.kind == "nodule":
            for side in _sides(f.laterality):
                canvas[_disk_mask(_NODULE_CENTERS[side], 2.0)] += 190.0
        elif f.kind == "fracture":
            for side in _sides(f.laterality):
                lo, hi = _FRACTURE_COLS[side]
                canvas[10:13, lo : hi + 1] += 140.0
        elif f.kind == "cardiomegaly":
            canvas[_ellipse_mask((36, 32), _CARDIO_AXES[f.severity])] += 80.0
        elif f.kind == "effusion":
            for side in _sides(f.laterality):
                lo, hi = _EFFUSION_COLS[side]
                canvas[_EFFUSION_TOP[f.severity] :, lo : hi + 1] += 90.0
        elif f.kind == "device":
            canvas[12:53, 31:33] += 180.0
    for f in sorted_findings(labels):
        if f.kind == "pneumothorax":
            for side in _sides(f.laterality):
                for row in range(8, 41):
                    width = int(round(1.5 + 2.5 * np.sin(np.pi * (row - 8) / 32.0)))
                    if width <= 0:
                        continue
                    if side == "left":
                        canvas[row, :width] = 4.0
                    else:
                        canvas[row, IMAGE_SIZE - width :] = 4.0
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


# per-kind presence detectors over fixed zones; thresholds sit midway between
# the empty-zone noise mean (~40) and the weakest primitive's lift
_CLASSIFIER_THRESHOLDS = {
    "opacity": 47.0,
    "nodule": 150.0,
    "fracture": 110.0,
    "cardiomegaly": 49.0,
    "effusion": 65.0,
    "device": 80.0,
    "pneumothorax": 25.0,
}


def classify_image(image: np.ndarray) -> set[str]:
    """Kinds present according to fixed pixel-statistic thresholds."""
    img = image.astype(np.float64)
    thr = _CLASSIFIER_THRESHOLDS
    present: set[str] = set()
    if max(img[14:29, 8:25].mean(), img[14:29, 40:57].mean()) > thr["opacity"]:
        present.add("opacity")
    if max(img[4:9, 12:21].max(), img[4:9, 44:53].max()) > thr["nodule"]:
        present.add("nodule")
    if max(img[13:16, 9:20].mean(), img[13:16, 45:56].mean()) > thr["fracture"]:
        present.add("fracture")
    cardio_zone = np.concatenate([img[28:45, 18:30].ravel(), img[28:45, 34:47].ravel()])
    if cardio_zone.mean() > thr["cardiomegaly"]:
        present.add("cardiomegaly")
    if max(img[56:, 4:32].mean(), img[56:, 32:60].mean()) > thr["effusion"]:
        present.add("effusion")
    if img[12:53, 31:33].mean() - img[12:53, 25:27].mean() > thr["device"]:
        present.add("device")
    if min(img[8:41, 0:4].mean(), img[8:41, 60:64].mean()) < thr["pneumothorax"]:
        present.add("pneumothorax")
    if not present:
        present.add("no_finding")
    return present


# ---------------------------------------------------------------------------
# text generation
# ---------------------------------------------------------------------------

_FINDINGS_TEMPLATES: dict[str, tuple[str, ...]] = {
    "opacity": (
        "There is a {sev} opacity in the {lat} lung.",
        "A {sev} {lat} opacity is seen.",
        "Patchy {sev} opacification is present in the {lat} lung.",
    ),
    "effusion": (
        "There is a {sev} {lat} pleural effusion.",
        "A {sev} effusion is present in the {lat} hemithorax.",
        "The {lat} costophrenic angle shows a {sev} effusion.",
    ),
    "cardiomegaly": (
        "There is {sev} cardiomegaly.",
        "{Sev} cardiomegaly is present.",
        "There is an enlarged cardiac silhouette, {sev} in degree.",
    ),
    "nodule": (
        "A nodule is seen in the {lat} lung.",
        "There is a {lat} nodule.",
        "A small nodule projects over the {lat} mid lung.",
    ),
    "pneumothorax": (
        "There is a {lat} pneumothorax.",
        "A {lat} apical pneumothorax is present.",
        "Pneumothorax is seen at the {lat} apex.",
    ),
    "device": (
        "A support device is in place.",
        "A monitoring device projects over the chest.",
        "There is a catheter in place.",
    ),
    "fracture": (
        "There is a {lat} rib fracture.",
        "A fracture is seen in a {lat} rib.",
        "An acute fracture involves the {lat} ribs.",
    ),
    "no_finding": (
        "There is no acute cardiopulmonary process.",
        "No acute cardiopulmonary process is identified.",
        "The lungs are clear with no acute cardiopulmonary process.",
    ),
}

_IMPRESSION_TEMPLATES: dict[str, tuple[str, ...]] = {
    "opacity": ("{Sev} {lat} opacity.", "{Lat} {sev} opacity."),
    "effusion": ("{Sev} {lat} effusion.", "{Lat} {sev} pleural effusion."),
    "cardiomegaly": ("{Sev} cardiomegaly.", "Cardiomegaly, {sev} in degree."),
    "nodule": ("{Lat} nodule.", "{Lat} pulmonary nodule."),
    "pneumothorax": ("{Lat} pneumothorax.", "{Lat} apical pneumothorax."),
    "device": ("Support device in place.", "Device present."),
    "fracture": ("{Lat} rib fracture.", "{Lat} fracture."),
    "no_finding": ("No acute cardiopulmonary process.",),
}

_NEGATION_TEMPLATES = (
    "No evidence of {kw}.",
    "There is no {kw}.",
    "The study is free of {kw}.",
    "Negative for {kw}.",
)

_FILLER_SENTENCES = (
    "Lung volumes are adequate.",
    "The trachea is midline.",
    "Imaged osseous structures are intact.",
    "The upper abdomen is unremarkable.",
    "Patient positioning is slightly rotated.",
)


def _fill(template: str, finding: Finding) -> str:
    return template.format(
        sev=finding.severity,
        Sev=finding.severity.capitalize(),
        lat=finding.laterality,
        Lat=finding.laterality.capitalize(),
    )


def _choice(rng: np.random.Generator, options):
    return options[int(rng.integers(0, len(options)))]


def generate_findings_text(labels, image_only, rng: np.random.Generator, p_filler: float = 0.25) -> str:
    """Narrative: one sentence per reported finding, negations for two absent
    kinds, optional filler; sentence order is shuffled."""
    labels = validate_label_set(labels)
    image_only = frozenset(image_only)
    if not image_only <= labels:
        raise GeneratorError("image_only must be a subset of labels")
    sentences: list[str] = []
    for f in sorted_findings(labels):
        if f in image_only:
            continue
        sentences.append(_fill(_choice(rng, _FINDINGS_TEMPLATES[f.kind]), f))
    present_kinds = {f.kind for f in labels}
    absent = [k for k in KINDS if k not in present_kinds and k != "no_finding"]
    n_negations = min(2, len(absent))
    for idx in rng.permutation(len(absent))[:n_negations]:
        kind = absent[int(idx)]
        sentences.append(_choice(rng, _NEGATION_TEMPLATES).format(kw=KIND_KEYWORDS[kind][0]))
    for _ in range(2):
        if rng.random() < p_filler:
            sentences.append(_choice(rng, _FILLER_SENTENCES))
    return _shuffle_join(sentences, rng)


def _shuffle_join(sentences: list[str], rng: np.random.Generator) -> str:
    order = rng.permutation(len(sentences))
    return " ".join(sentences[int(i)] for i in order)


def generate_impression_text(labels, rng: np.random.Generator) -> str:
    """Compact clause per positive finding, covering all labels; no filler."""
    labels = validate_label_set(labels)
    clauses = [_fill(_choice(rng, _IMPRESSION_TEMPLATES[f.kind]), f) for f in sorted_findings(labels)]
    return " ".join(clauses)


# ---------------------------------------------------------------------------
# record and corpus assembly
# ---------------------------------------------------------------------------


def record_seed(corpus_seed: int, record_id: str) -> int:
    digest = hashlib.sha256(f"{corpus_seed}:{record_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def sample_labels(rng: np.random.Generator) -> frozenset[Finding]:
    found: list[Finding] = []
    for kind in KINDS:
        if kind == "no_finding":
            continue
        if rng.random() >= P_POSITIVE:
            continue
        laterality = _choice(rng, LATERALITY_WORDS) if kind in LATERAL_KINDS else "none"
        severity = _choice(rng, SEVERITY_WORDS) if kind in SEVERITY_KINDS else "none"
        found.append(Finding(kind, laterality, severity))
    if not found:
        return frozenset({Finding("no_finding")})
    return frozenset(found)


def make_record(record_id: str, corpus_seed: int, config: CorpusConfig) -> StudyRecord:
    rs = record_seed(corpus_seed, record_id)
    rng = np.random.default_rng(np.random.SeedSequence([rs, 1]))
    labels = sample_labels(rng)
    image_only = frozenset(
        f for f in sorted_findings(labels) if f.kind != "no_finding" and rng.random() < config.p_img_only
    )
    findings_text = generate_findings_text(labels, image_only, rng, p_filler=config.p_filler)
    impression_text = generate_impression_text(labels, rng)
    image = render_image(labels, rs)
    return StudyRecord(
        id=record_id,
        image=image,
        findings_text=findings_text,
        impression_text=impression_text,
        labels=labels,
        image_only=image_only,
    )


def write_pgm(path: Path, image: np.ndarray) -> None:
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE) or image.dtype != np.uint8:
        raise GeneratorError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE} uint8 image, got {image.shape} {image.dtype}")
    path.write_bytes(b"P5\n64 64\n255\n" + image.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    header = b"P5\n64 64\n255\n"
    if not blob.startswith(header):
        raise GeneratorError(f"{path}: not a 64x64 binary PGM")
    return np.frombuffer(blob[len(header) :], dtype=np.uint8).reshape(IMAGE_SIZE, IMAGE_SIZE).copy()


def _finding_to_json(f: Finding) -> dict:
    return {"kind": f.kind, "laterality": f.laterality, "severity": f.severity}


def _finding_from_json(obj: dict) -> Finding:
    return Finding(obj["kind"], obj["laterality"], obj["severity"])


def record_to_json(record: StudyRecord, image_path: str) -> str:
    payload = {
        "id": record.id,
        "image_path": image_path,
        "findings": record.findings_text,
        "impression": record.impression_text,
        "labels": [_finding_to_json(f) for f in sorted_findings(record.labels)],
        "image_only": [_finding_to_json(f) for f in sorted_findings(record.image_only)],
    }
    return json.dumps(payload)


def generate_corpus(config: CorpusConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write train/val/test JSONL files plus PGM images; returns split paths."""
    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    try:
        images_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IOError(f"cannot create corpus directory {out_dir}: {e}") from e
    splits = {"train": config.n_train, "val": config.n_val, "test": config.n_test}
    paths: dict[str, Path] = {}
    for split, count in splits.items():
        lines = []
        for i in range(count):
            rid = f"{split}-{i:05d}"
            record = make_record(rid, config.seed, config)
            rel = f"images/{rid}.pgm"
            write_pgm(images_dir / f"{rid}.pgm", record.image)
            lines.append(record_to_json(record, rel))
        path = out_dir / f"{split}.jsonl"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[split] = path
    return paths


def load_corpus(corpus_dir: str | Path, split: str, with_images: bool = True) -> list[StudyRecord]:
    corpus_dir = Path(corpus_dir)
    path = corpus_dir / f"{split}.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"missing corpus split file {path}")
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        obj = json.loads(line)
        image = read_pgm(corpus_dir / obj["image_path"]) if with_images else np.zeros((IMAGE_SIZE, IMAGE_SIZE), np.uint8)
        records.append(
            StudyRecord(
                id=obj["id"],
                image=image,
                findings_text=obj["findings"],
                impression_text=obj["impression"],
                labels=frozenset(_finding_from_json(o) for o in obj["labels"]),
                image_only=frozenset(_finding_from_json(o) for o in obj["image_only"]),
            )
        )
    return records
