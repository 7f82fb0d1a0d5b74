"""Case / slide / patch hierarchy, manifest I/O, splits, patch decoding and vote sets."""

from __future__ import annotations

import enum
import json
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    DuplicateIdError,
    InconsistentRecordError,
    ManifestError,
    MissingRecordError,
    PatchCountError,
    PatchImageError,
    SplitError,
    UnknownCategoryError,
    VoteSetError,
)

PATCH_SIZE = 100
PATCHES_PER_SLIDE = 40
SLIDES_PER_CASE = 2
VOTES_PER_SET = 5
SPLITS = ("train", "val", "test")
# 2160 / 240 / 320 of 2720 images
DEFAULT_FRACTIONS = (2160 / 2720, 240 / 2720, 320 / 2720)


class DiagnosticCategory(enum.IntEnum):
    NEGATIVE = 0
    ITC = 1
    MICROMETASTASIS = 2
    MACROMETASTASIS = 3

    @property
    def is_positive(self) -> bool:
        return grouped(self)

    @property
    def short_name(self) -> str:
        return ("Negative", "ITC", "Micro Met", "Macro Met")[self]


def category(code) -> DiagnosticCategory:
    if isinstance(code, bool) or not isinstance(code, (int, np.integer)):
        raise UnknownCategoryError(f"category code must be an integer 0-3, got {code!r}")
    try:
        return DiagnosticCategory(int(code))
    except ValueError:
        raise UnknownCategoryError(f"unknown category code {code!r} (expected 0-3)") from None


def grouped(code) -> bool:
    """Clinical grouping: Negative/ITC are negative, micro/macro metastasis positive."""
    return category(code) >= DiagnosticCategory.MICROMETASTASIS


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    diagnosis: DiagnosticCategory
    slide_ids: tuple[str, ...]


@dataclass(frozen=True)
class SlideRecord:
    slide_id: str
    case_id: str
    role: str  # "involved" | "uninvolved"
    patch_ids: tuple[str, ...]


@dataclass(frozen=True)
class PatchRecord:
    patch_id: str
    slide_id: str
    path: str
    observed_dx: DiagnosticCategory
    split: str | None = None


@dataclass(frozen=True)
class VoteSet:
    set_id: str
    slide_id: str
    patch_ids: tuple[str, ...]
    observed_dx: DiagnosticCategory


@dataclass
class Corpus:
    cases: dict[str, CaseRecord]
    slides: dict[str, SlideRecord]
    patches: dict[str, PatchRecord]
    root: Path = field(default_factory=Path)
    label_mode: str = "case"

    def case_of(self, patch: PatchRecord) -> CaseRecord:
        return self.cases[self.slides[patch.slide_id].case_id]

    def split_patches(self, split: str) -> list[PatchRecord]:
        return [p for pid, p in sorted(self.patches.items()) if p.split == split]

    def split_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for p in self.patches.values():
            if p.split in counts:
                counts[p.split] += 1
        return counts

    def patch_path(self, patch: PatchRecord) -> Path:
        return self.root / patch.path


def expected_label(case: CaseRecord, slide: SlideRecord, label_mode: str) -> DiagnosticCategory:
    """Case labelling (default) gives every patch its case diagnosis; slide
    labelling marks patches on uninvolved slides negative."""
    if label_mode == "case" or slide.role == "involved":
        return case.diagnosis
    return DiagnosticCategory.NEGATIVE


def validate(corpus: Corpus, patches_per_slide: int = PATCHES_PER_SLIDE) -> None:
    if corpus.label_mode not in ("case", "slide"):
        raise ManifestError(f"label mode must be 'case' or 'slide', got {corpus.label_mode!r}")
    for case in corpus.cases.values():
        if len(case.slide_ids) != SLIDES_PER_CASE:
            raise InconsistentRecordError(
                f"case {case.case_id}: expected {SLIDES_PER_CASE} slides, got {len(case.slide_ids)}"
            )
        roles = []
        for sid in case.slide_ids:
            slide = corpus.slides.get(sid)
            if slide is None:
                raise MissingRecordError(f"case {case.case_id}: slide {sid} not found")
            if slide.case_id != case.case_id:
                raise InconsistentRecordError(f"slide {sid} claims case {slide.case_id}, listed by {case.case_id}")
            roles.append(slide.role)
        want = ["involved", "uninvolved"] if case.diagnosis.is_positive else ["uninvolved", "uninvolved"]
        if sorted(roles) != want:
            raise InconsistentRecordError(
                f"case {case.case_id} (dx {int(case.diagnosis)}): slide roles {sorted(roles)}, expected {want}"
            )
    for slide in corpus.slides.values():
        case = corpus.cases.get(slide.case_id)
        if case is None:
            raise MissingRecordError(f"slide {slide.slide_id}: case {slide.case_id} not found")
        if slide.slide_id not in case.slide_ids:
            raise InconsistentRecordError(f"slide {slide.slide_id} not listed by case {case.case_id}")
        if len(slide.patch_ids) != patches_per_slide:
            raise PatchCountError(
                f"slide {slide.slide_id}: expected {patches_per_slide} patches, got {len(slide.patch_ids)}"
            )
        for pid in slide.patch_ids:
            patch = corpus.patches.get(pid)
            if patch is None:
                raise MissingRecordError(f"slide {slide.slide_id}: patch {pid} not found")
            if patch.slide_id != slide.slide_id:
                raise InconsistentRecordError(f"patch {pid} claims slide {patch.slide_id}, listed by {slide.slide_id}")
    for patch in corpus.patches.values():
        slide = corpus.slides.get(patch.slide_id)
        if slide is None:
            raise MissingRecordError(f"patch {patch.patch_id}: slide {patch.slide_id} not found")
        if patch.patch_id not in slide.patch_ids:
            raise PatchCountError(f"patch {patch.patch_id} not listed by slide {slide.slide_id}")
        want = expected_label(corpus.cases[slide.case_id], slide, corpus.label_mode)
        if patch.observed_dx != want:
            raise InconsistentRecordError(
                f"patch {patch.patch_id}: observed_dx {int(patch.observed_dx)} but "
                f"{corpus.label_mode} labelling implies {int(want)}"
            )
        if patch.split is not None and patch.split not in SPLITS:
            raise InconsistentRecordError(f"patch {patch.patch_id}: unknown split {patch.split!r}")


# -- manifest I/O -----------------------------------------------------------


def _field(rec: dict, name: str, lineno: int):
    try:
        return rec[name]
    except KeyError:
        raise ManifestError(f"line {lineno}: {rec.get('kind')} record missing field {name!r}") from None


def _record_category(rec: dict, name: str, lineno: int, rid: str) -> DiagnosticCategory:
    try:
        return category(_field(rec, name, lineno))
    except UnknownCategoryError as exc:
        raise UnknownCategoryError(f"line {lineno}: {rec['kind']} {rid}: {exc}") from None


def parse_manifest(lines: Iterable[str], root: Path = Path(), patches_per_slide: int = PATCHES_PER_SLIDE,
                   label_mode: str = "case") -> Corpus:
    cases: dict[str, CaseRecord] = {}
    slides: dict[str, SlideRecord] = {}
    patches: dict[str, PatchRecord] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(rec, dict):
            raise ManifestError(f"line {lineno}: expected a JSON object")
        kind = rec.get("kind")
        if kind == "case":
            cid = str(_field(rec, "case_id", lineno))
            if cid in cases:
                raise DuplicateIdError(f"line {lineno}: duplicate case_id {cid}")
            cases[cid] = CaseRecord(cid, _record_category(rec, "diagnosis", lineno, cid),
                                    tuple(_field(rec, "slide_ids", lineno)))
        elif kind == "slide":
            sid = str(_field(rec, "slide_id", lineno))
            if sid in slides:
                raise DuplicateIdError(f"line {lineno}: duplicate slide_id {sid}")
            role = _field(rec, "role", lineno)
            if role not in ("involved", "uninvolved"):
                raise ManifestError(f"line {lineno}: slide {sid}: unknown role {role!r}")
            pids = tuple(_field(rec, "patch_ids", lineno))
            if len(set(pids)) != len(pids):
                raise DuplicateIdError(f"line {lineno}: slide {sid} lists a patch twice")
            slides[sid] = SlideRecord(sid, str(_field(rec, "case_id", lineno)), role, pids)
        elif kind == "patch":
            pid = str(_field(rec, "patch_id", lineno))
            if pid in patches:
                raise DuplicateIdError(f"line {lineno}: duplicate patch_id {pid}")
            patches[pid] = PatchRecord(
                pid,
                str(_field(rec, "slide_id", lineno)),
                str(_field(rec, "path", lineno)),
                _record_category(rec, "observed_dx", lineno, pid),
                rec.get("split"),
            )
        else:
            raise ManifestError(f"line {lineno}: unknown record kind {kind!r}")
    corpus = Corpus(cases, slides, patches, root)
    validate(corpus, patches_per_slide)
    if label_mode != "case":
        corpus = relabel(corpus, label_mode)
    return corpus


def load_manifest(path, patches_per_slide: int = PATCHES_PER_SLIDE, label_mode: str = "case") -> Corpus:
    """Parse and fully validate a JSON Lines manifest.

    The stored labels must follow case labelling; ``label_mode='slide'``
    relabels after validation.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        try:
            return parse_manifest(fh, path.parent, patches_per_slide, label_mode)
        except ManifestError as exc:
            raise type(exc)(f"{path}: {exc}") from None


def relabel(corpus: Corpus, label_mode: str) -> Corpus:
    if label_mode not in ("case", "slide"):
        raise ManifestError(f"label mode must be 'case' or 'slide', got {label_mode!r}")
    patches = {}
    for pid, p in corpus.patches.items():
        slide = corpus.slides[p.slide_id]
        patches[pid] = replace(p, observed_dx=expected_label(corpus.cases[slide.case_id], slide, label_mode))
    return Corpus(corpus.cases, corpus.slides, patches, corpus.root, label_mode)


def manifest_lines(corpus: Corpus) -> list[str]:
    out = []
    for c in corpus.cases.values():
        out.append(json.dumps({"kind": "case", "case_id": c.case_id, "diagnosis": int(c.diagnosis),
                               "slide_ids": list(c.slide_ids)}))
    for s in corpus.slides.values():
        out.append(json.dumps({"kind": "slide", "slide_id": s.slide_id, "case_id": s.case_id,
                               "role": s.role, "patch_ids": list(s.patch_ids)}))
    for p in corpus.patches.values():
        out.append(json.dumps({"kind": "patch", "patch_id": p.patch_id, "slide_id": p.slide_id,
                               "path": p.path, "observed_dx": int(p.observed_dx), "split": p.split}))
    return out


def write_manifest(corpus: Corpus, path) -> None:
    Path(path).write_text("\n".join(manifest_lines(corpus)) + "\n", encoding="utf-8")


# -- splits -----------------------------------------------------------------


def _split_sizes(n_units: int, fractions, unit: str, per_unit: int) -> tuple[int, int, int]:
    raw = [f * n_units for f in fractions]
    nearest = [round(r) for r in raw]
    nearest[0] = n_units - nearest[1] - nearest[2]
    if any(abs(r - n) > 1e-6 for r, n in zip(raw, nearest)):
        raise SplitError(
            f"fractions {tuple(fractions)} are not achievable with {n_units} {unit}s; nearest achievable "
            f"image counts (train, val, test) = {tuple(n * per_unit for n in nearest)}"
        )
    return tuple(nearest)


def assign_splits(
    corpus: Corpus,
    fractions=DEFAULT_FRACTIONS,
    seed: int = 0,
    policy: str = "slide",
    case_coherent: bool = True,
) -> Corpus:
    """Assign train/val/test labels.

    ``policy='slide'`` keeps every patch of a slide together (and, with
    ``case_coherent``, both slides of a case).  ``policy='image'`` splits
    individual patches.  Held-out splits are filled round-robin over the
    diagnostic categories so each category is represented evenly; the order
    within a category is a seeded shuffle.
    """
    if abs(sum(fractions) - 1) > 1e-9 or len(fractions) != 3 or min(fractions) < 0:
        raise SplitError(f"split fractions must be three non-negative values summing to 1, got {tuple(fractions)}")
    if policy == "slide" and case_coherent:
        units = {c.case_id: [pid for sid in sorted(c.slide_ids) for pid in corpus.slides[sid].patch_ids]
                 for c in corpus.cases.values()}
        unit_name = "case"
    elif policy == "slide":
        units = {s.slide_id: list(s.patch_ids) for s in corpus.slides.values()}
        unit_name = "slide"
    elif policy == "image":
        units = {pid: [pid] for pid in corpus.patches}
        unit_name = "image"
    else:
        raise SplitError(f"split policy must be 'slide' or 'image', got {policy!r}")

    sizes_per_unit = {len(v) for v in units.values()}
    per_unit = sizes_per_unit.pop() if len(sizes_per_unit) == 1 else 1
    n_train, n_val, n_test = _split_sizes(len(units), fractions, unit_name, per_unit)

    rng = np.random.default_rng(seed)
    by_cat: dict[int, list[str]] = defaultdict(list)
    for uid in sorted(units):
        if unit_name == "case":
            by_cat[int(corpus.cases[uid].diagnosis)].append(uid)
        else:
            by_cat[int(corpus.patches[units[uid][0]].observed_dx)].append(uid)
    queues = {cat: list(rng.permutation(by_cat[cat])) for cat in sorted(by_cat)}

    assignment: dict[str, str] = {}
    cats = sorted(queues)
    pos = 0

    def take(n: int, split: str):
        nonlocal pos
        while n:
            cat = cats[pos % len(cats)]
            pos += 1
            if queues[cat]:
                assignment[queues[cat].pop(0)] = split
                n -= 1

    take(n_test, "test")
    take(n_val, "val")
    for cat in cats:
        for uid in queues[cat]:
            assignment[uid] = "train"
    assert len(assignment) == len(units)

    patches = dict(corpus.patches)
    for uid, split in assignment.items():
        for pid in units[uid]:
            patches[pid] = replace(patches[pid], split=split)
    return Corpus(corpus.cases, corpus.slides, patches, corpus.root, corpus.label_mode)


# -- patch images -----------------------------------------------------------


def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    h, w, _ = image.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_ppm(path) -> np.ndarray:
    """Decode a binary PPM (P6, maxval 255) into an ``[H, W, 3]`` uint8 array."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PatchImageError(f"{path}: malformed PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise PatchImageError(f"{path}: malformed PPM header (magic {tokens[0][:8]!r}, expected P6)")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise PatchImageError(f"{path}: malformed PPM header (non-integer field)") from None
    if maxval != 255:
        raise PatchImageError(f"{path}: unsupported maxval {maxval} (expected 255)")
    pos += 1  # single whitespace byte before the raster
    raster = data[pos:]
    if len(raster) != width * height * 3:
        raise PatchImageError(f"{path}: raster has {len(raster)} bytes, header implies {width * height * 3}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def load_patch_pixels(path) -> np.ndarray:
    pixels = read_ppm(path)
    if pixels.shape != (PATCH_SIZE, PATCH_SIZE, 3):
        raise PatchImageError(
            f"{path}: wrong dimensions {pixels.shape[1]}x{pixels.shape[0]} (expected {PATCH_SIZE}x{PATCH_SIZE})"
        )
    return pixels


def load_patch_image(record: PatchRecord | str | Path, root: Path | None = None) -> np.ndarray:
    """Decode a patch to a float32 ``[100, 100, 3]`` tensor scaled to [0, 1]."""
    path = Path(record.path) if isinstance(record, PatchRecord) else Path(record)
    if root is not None:
        path = Path(root) / path
    return load_patch_pixels(path).astype(np.float32) / 255.0


# -- vote sets --------------------------------------------------------------


def chunk_vote_sets(items: Iterable[tuple[str, str, int]]) -> list[VoteSet]:
    """Group ``(patch_id, slide_id, observed_dx)`` rows into per-slide sets of five.

    Slides are visited in slide_id order and patches chunked in patch_id order.
    """
    by_slide: dict[str, list[tuple[str, int]]] = defaultdict(list)
    for pid, sid, dx in items:
        by_slide[sid].append((pid, int(dx)))
    sets = []
    for sid in sorted(by_slide):
        rows = sorted(by_slide[sid])
        if len(rows) % VOTES_PER_SET:
            raise VoteSetError(
                f"slide {sid}: {len(rows)} patches is not a multiple of {VOTES_PER_SET}"
            )
        for n, start in enumerate(range(0, len(rows), VOTES_PER_SET)):
            chunk = rows[start : start + VOTES_PER_SET]
            labels = {dx for _, dx in chunk}
            if len(labels) != 1:
                raise VoteSetError(f"slide {sid}: vote set {n} mixes observed diagnoses {sorted(labels)}")
            sets.append(VoteSet(f"{sid}-V{n:02d}", sid, tuple(pid for pid, _ in chunk), category(labels.pop())))
    return sets


def build_vote_sets(corpus: Corpus, split: str = "test") -> list[VoteSet]:
    return chunk_vote_sets((p.patch_id, p.slide_id, p.observed_dx) for p in corpus.split_patches(split))
