"""Procedural stand-in for H&E lymph-node patches.

Each patch is a pink eosin-like background with smooth stain variation and
dark hematoxylin "cell" blobs.  Blob count and radius grow with the
diagnostic category, so the label is an ordinal texture signal: Negative vs
ITC and micro vs macro metastasis overlap heavily, the two clinical groups
much less.  Every slide gets its own stain jitter and density multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import (
    DEFAULT_FRACTIONS,
    PATCH_SIZE,
    CaseRecord,
    Corpus,
    DiagnosticCategory,
    PatchRecord,
    SlideRecord,
    assign_splits,
    write_manifest,
    write_ppm,
)

# per category 0..3
BLOB_MEAN_COUNT = (20.0, 30.0, 50.0, 62.0)
BLOB_MEAN_RADIUS = (1.8, 2.2, 2.6, 3.0)
BLOB_RADIUS_SD = 0.35
SLIDE_DENSITY_SD = 0.08

BACKGROUND_RGB = np.array([0.93, 0.74, 0.84])
NUCLEUS_RGB = np.array([0.32, 0.20, 0.50])


@dataclass(frozen=True)
class SyntheticLayout:
    """Case counts per category (Negative, ITC, Micro, Macro) and slide geometry."""

    cases_per_category: tuple[int, int, int, int] = (10, 6, 8, 10)
    patches_per_slide: int = 40
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS
    policy: str = "slide"
    case_coherent: bool = True


@dataclass(frozen=True)
class SlideStyle:
    background: np.ndarray
    nucleus: np.ndarray
    density: float


def sample_slide_style(rng: np.random.Generator) -> SlideStyle:
    return SlideStyle(
        background=np.clip(BACKGROUND_RGB + rng.normal(0, 0.03, 3), 0, 1),
        nucleus=np.clip(NUCLEUS_RGB + rng.normal(0, 0.04, 3), 0, 1),
        density=float(np.exp(rng.normal(0, SLIDE_DENSITY_SD))),
    )


def sample_blobs(rng: np.random.Generator, dx: int, density: float = 1.0):
    """Blob centres ``[n, 2]`` and radii ``[n]`` for one patch of category ``dx``."""
    n = int(rng.poisson(BLOB_MEAN_COUNT[dx] * density))
    centres = rng.uniform(0, PATCH_SIZE, (n, 2))
    radii = np.maximum(rng.normal(BLOB_MEAN_RADIUS[dx], BLOB_RADIUS_SD, n), 1.0)
    return centres, radii


_GRID = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE].astype(np.float64) + 0.5


def render_patch(rng: np.random.Generator, dx: int, style: SlideStyle) -> np.ndarray:
    centres, radii = sample_blobs(rng, dx, style.density)
    # low-frequency stain variation, bilinearly upsampled from an 6x6 lattice
    coarse = rng.normal(0, 0.04, (6, 6))
    idx = np.linspace(0, 5, PATCH_SIZE)
    i0 = np.minimum(idx.astype(int), 4)
    f = idx - i0
    rows = coarse[i0] * (1 - f)[:, None] + coarse[i0 + 1] * f[:, None]
    smooth = rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]
    image = style.background[None, None, :] + smooth[..., None]

    if len(radii):
        d2 = (_GRID[0][None] - centres[:, 0, None, None]) ** 2 + (_GRID[1][None] - centres[:, 1, None, None]) ** 2
        alpha = np.exp(-d2 / (2 * radii[:, None, None] ** 2)).max(axis=0) * 0.9
        image = image * (1 - alpha[..., None]) + style.nucleus[None, None, :] * alpha[..., None]

    image = image + rng.normal(0, 0.02, image.shape)
    return np.clip(np.round(image * 255), 0, 255).astype(np.uint8)


def generate_synthetic_corpus(out_dir, seed: int = 0, layout: SyntheticLayout = SyntheticLayout()) -> Corpus:
    """Write ``manifest.jsonl`` plus one PPM per patch under ``out_dir``.

    Splits are assigned with ``layout.policy`` using the same seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    diagnoses = [dx for dx, n in enumerate(layout.cases_per_category) for _ in range(n)]
    diagnoses = [int(d) for d in rng.permutation(diagnoses)]
    width = max(2, len(str(len(diagnoses))))
    pwidth = max(2, len(str(layout.patches_per_slide)))

    cases, slides, patches = {}, {}, {}
    for n, dx in enumerate(diagnoses, 1):
        dx = DiagnosticCategory(dx)
        cid = f"C{n:0{width}d}"
        slide_ids = (f"{cid}-S1", f"{cid}-S2")
        cases[cid] = CaseRecord(cid, dx, slide_ids)
        for k, sid in enumerate(slide_ids):
            role = "involved" if dx.is_positive and k == 0 else "uninvolved"
            style = sample_slide_style(rng)
            (out_dir / "patches" / sid).mkdir(parents=True, exist_ok=True)
            pids = []
            for j in range(1, layout.patches_per_slide + 1):
                pid = f"{sid}-P{j:0{pwidth}d}"
                rel = f"patches/{sid}/P{j:0{pwidth}d}.ppm"
                write_ppm(out_dir / rel, render_patch(rng, int(dx), style))
                patches[pid] = PatchRecord(pid, sid, rel, dx)
                pids.append(pid)
            slides[sid] = SlideRecord(sid, cid, role, tuple(pids))

    corpus = Corpus(cases, slides, patches, out_dir)
    corpus = assign_splits(corpus, layout.fractions, seed, layout.policy, layout.case_coherent)
    write_manifest(corpus, out_dir / "manifest.jsonl")
    return corpus


def permute_case_labels(corpus: Corpus, seed: int) -> Corpus:
    """Null-model corpus: case diagnoses shuffled across cases, images untouched.

    Slide roles and patch labels follow the shuffled diagnosis.
    """
    from dataclasses import replace

    rng = np.random.default_rng(seed)
    ids = sorted(corpus.cases)
    shuffled = [corpus.cases[i].diagnosis for i in ids]
    shuffled = [shuffled[i] for i in rng.permutation(len(ids))]
    cases, slides, patches = {}, {}, {}
    for cid, dx in zip(ids, shuffled):
        case = replace(corpus.cases[cid], diagnosis=DiagnosticCategory(int(dx)))
        cases[cid] = case
        for k, sid in enumerate(case.slide_ids):
            role = "involved" if case.diagnosis.is_positive and k == 0 else "uninvolved"
            slides[sid] = replace(corpus.slides[sid], role=role)
            for pid in slides[sid].patch_ids:
                patches[pid] = replace(corpus.patches[pid], observed_dx=case.diagnosis, split=None)
    return Corpus(cases, slides, patches, corpus.root, corpus.label_mode)
