"""Synthetic (reference, stitched) pair generator with a severity knob.

A stitched image is simulated by alpha-blending a homography-warped copy of
the source onto its right side: the warp produces seam misalignment, the
blend produces ghost doubling. Severity 1..5 scales both, which gives the
pipeline an ordered test set with known ground truth and synthetic
"subjective" scores, so correlation runs need no human raters.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import Rng
from .errors import (
    DegenerateQuad,
    ParseError,
    SourceTooSmall,
    TooFewSources,
)
from .imagecore import Image, load_image, save_image

# substream namespaces under the bundle seed
NS_LADDER_DISP = 10
NS_LADDER_JITTER = 11

_MIN_SOURCE_SIDE = 64
SEVERITIES = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class DistortionRecipe:
    severity: int
    misalignment: float
    ghost_opacity: float
    seam_position: float = 0.5

    def __post_init__(self):
        if not 1 <= self.severity <= 5:
            raise ParseError(f"severity must be 1..5, got {self.severity}")
        if self.misalignment < 0.0:
            raise ParseError("misalignment must be >= 0")
        if not 0.0 <= self.ghost_opacity <= 1.0:
            raise ParseError("ghost_opacity must lie in [0, 1]")
        if not 0.0 < self.seam_position < 1.0:
            raise ParseError("seam_position must lie in (0, 1)")

    @classmethod
    def from_severity(cls, level: int) -> "DistortionRecipe":
        return cls(severity=level, misalignment=2.0 * level, ghost_opacity=0.1 * level)


def _corners(w: int, h: int) -> np.ndarray:
    return np.array(
        [[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]]
    )


def _check_convex(quad: np.ndarray) -> None:
    crosses = []
    for i in range(4):
        a = quad[(i + 1) % 4] - quad[i]
        b = quad[(i + 2) % 4] - quad[(i + 1) % 4]
        crosses.append(a[0] * b[1] - a[1] * b[0])
    crosses = np.array(crosses)
    if np.any(crosses == 0.0) or not (np.all(crosses > 0) or np.all(crosses < 0)):
        raise DegenerateQuad("displaced corners do not form a convex quadrilateral")


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map with H[2,2] = 1 from four point correspondences."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y])
        rhs.append(u)
        rows.append([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y])
        rhs.append(v)
    try:
        h = np.linalg.solve(np.array(rows), np.array(rhs))
    except np.linalg.LinAlgError as exc:
        raise DegenerateQuad(f"homography system is singular: {exc}") from exc
    return np.array(
        [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]
    )


def warp_homography(img: Image, corner_displacements) -> Image:
    """Warp so each corner lands on corner + displacement; outside is black."""
    disp = np.asarray(corner_displacements, dtype=np.float64)
    if disp.shape != (4, 2):
        raise ParseError(f"expected (4, 2) corner displacements, got {disp.shape}")
    h, w = img.height, img.width
    src = _corners(w, h)
    dst = src + disp
    _check_convex(dst)
    hom = _homography(src, dst)
    try:
        inv = np.linalg.inv(hom)
    except np.linalg.LinAlgError as exc:
        raise DegenerateQuad(f"homography is not invertible: {exc}") from exc

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom

    valid = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    sxc = np.clip(sx, 0.0, w - 1.0)
    syc = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sxc).astype(np.intp)
    y0 = np.floor(syc).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = (sxc - x0)[:, :, None]
    wy = (syc - y0)[:, :, None]

    d = img.data
    top = d[y0, x0] * (1.0 - wx) + d[y0, x1] * wx
    bot = d[y1, x0] * (1.0 - wx) + d[y1, x1] * wx
    out = top * (1.0 - wy) + bot * wy
    out[~valid] = 0.0
    return Image(np.clip(out, 0.0, 1.0))


def _compose_stitched(source: Image, displacements: np.ndarray, recipe: DistortionRecipe) -> Image:
    warped = warp_homography(source, displacements)
    seam_col = int(round(source.width * recipe.seam_position))
    seam_col = min(max(seam_col, 1), source.width - 1)
    out = source.data.copy()
    g = recipe.ghost_opacity
    out[:, seam_col:] = (1.0 - g) * source.data[:, seam_col:] + g * warped.data[:, seam_col:]
    return Image(np.clip(out, 0.0, 1.0))


def make_stitched_pair(source: Image, recipe: DistortionRecipe, rng: Rng) -> tuple[Image, Image]:
    """(reference, stitched) with random corner displacements <= misalignment."""
    if min(source.height, source.width) < _MIN_SOURCE_SIDE:
        raise SourceTooSmall(
            f"source must be >= {_MIN_SOURCE_SIDE} px per side, "
            f"got {source.height}x{source.width}"
        )
    unit = rng.gen.uniform(-1.0, 1.0, size=(4, 2))
    stitched = _compose_stitched(source, unit * recipe.misalignment, recipe)
    return source, stitched


@dataclass(frozen=True)
class EvalGroup:
    """One scoring unit: a reference set and the stitched set judged against it."""

    group_id: str
    reference_ids: tuple[str, ...]
    stitched_ids: tuple[str, ...]


@dataclass
class EvalBundle:
    """Images plus grouping, ground-truth labels, and per-image scores."""

    images: dict[str, Image]
    groups: list[EvalGroup]
    subjective: dict[str, float]
    labels: dict[str, int] = field(default_factory=dict)
    source_ids: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    @property
    def reference_ids(self) -> list[str]:
        seen: list[str] = []
        for group in self.groups:
            for rid in group.reference_ids:
                if rid not in seen:
                    seen.append(rid)
        return seen

    @property
    def stitched_ids(self) -> list[str]:
        out: list[str] = []
        for group in self.groups:
            out.extend(group.stitched_ids)
        return out


def build_severity_ladder(sources, seed: int, jitter_amplitude: float = 3.0) -> EvalBundle:
    """Five severity groups per source with synthetic subjective scores.

    The corner displacement direction is drawn once per source and scaled by
    severity, so each source's five stitched variants degrade along one path
    and pixel error grows strictly with severity.
    """
    sources = list(sources)
    if len(sources) < 2:
        raise TooFewSources(f"need >= 2 sources, got {len(sources)}")
    root = Rng(seed)
    images: dict[str, Image] = {}
    subjective: dict[str, float] = {}
    labels: dict[str, int] = {}
    source_ids: dict[str, str] = {}
    ref_ids = []
    per_severity: dict[int, list[str]] = {s: [] for s in SEVERITIES}

    for i, src in enumerate(sources):
        if min(src.height, src.width) < _MIN_SOURCE_SIDE:
            raise SourceTooSmall(
                f"source {i} must be >= {_MIN_SOURCE_SIDE} px per side"
            )
        ref_id = f"ref_{i:03d}"
        images[ref_id] = src
        ref_ids.append(ref_id)
        unit = root.substream(NS_LADDER_DISP, i).gen.uniform(-1.0, 1.0, size=(4, 2))
        for sev in SEVERITIES:
            recipe = DistortionRecipe.from_severity(sev)
            stitched = _compose_stitched(src, unit * recipe.misalignment, recipe)
            st_id = f"st_{i:03d}_s{sev}"
            images[st_id] = stitched
            labels[st_id] = sev
            source_ids[st_id] = ref_id
            jitter = 0.0
            if jitter_amplitude > 0.0:
                jitter = float(
                    root.substream(NS_LADDER_JITTER, i, sev).gen.uniform(
                        -jitter_amplitude, jitter_amplitude
                    )
                )
            subjective[st_id] = 100.0 - 20.0 * (sev - 1) + jitter
            per_severity[sev].append(st_id)

    groups = [
        EvalGroup(
            group_id=f"sev{sev}",
            reference_ids=tuple(ref_ids),
            stitched_ids=tuple(per_severity[sev]),
        )
        for sev in SEVERITIES
    ]
    return EvalBundle(
        images=images,
        groups=groups,
        subjective=subjective,
        labels=labels,
        source_ids=source_ids,
        seed=seed,
    )


def write_bundle(bundle: EvalBundle, out_dir) -> Path:
    """sources/, references/, stitched/, labels.csv, synthetic_subjective.csv."""
    out_dir = Path(out_dir)
    (out_dir / "sources").mkdir(parents=True, exist_ok=True)
    (out_dir / "references").mkdir(exist_ok=True)
    (out_dir / "stitched").mkdir(exist_ok=True)
    for rid in bundle.reference_ids:
        save_image(bundle.images[rid], out_dir / "references" / f"{rid}.png")
        save_image(bundle.images[rid], out_dir / "sources" / f"{rid}.png")
    for sid in bundle.stitched_ids:
        save_image(bundle.images[sid], out_dir / "stitched" / f"{sid}.png")
    with open(out_dir / "labels.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "source_id", "severity"])
        for sid in bundle.stitched_ids:
            writer.writerow([sid, bundle.source_ids.get(sid, ""), bundle.labels[sid]])
    with open(out_dir / "synthetic_subjective.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "subjective_score", "n_raters"])
        for sid in bundle.stitched_ids:
            writer.writerow([sid, f"{bundle.subjective[sid]:.17g}", 0])
    return out_dir


def load_bundle(bundle_dir) -> EvalBundle:
    """Rebuild a bundle written by write_bundle; groups come from labels.csv."""
    bundle_dir = Path(bundle_dir)
    labels_path = bundle_dir / "labels.csv"
    if not labels_path.exists():
        raise ParseError(f"{bundle_dir} has no labels.csv")
    labels: dict[str, int] = {}
    source_ids: dict[str, str] = {}
    with open(labels_path, newline="") as fh:
        for row in csv.DictReader(fh):
            labels[row["image_id"]] = int(row["severity"])
            source_ids[row["image_id"]] = row["source_id"]
    subjective: dict[str, float] = {}
    subj_path = bundle_dir / "synthetic_subjective.csv"
    if subj_path.exists():
        with open(subj_path, newline="") as fh:
            for row in csv.DictReader(fh):
                subjective[row["image_id"]] = float(row["subjective_score"])

    images: dict[str, Image] = {}
    ref_ids = []
    for path in sorted((bundle_dir / "references").glob("*.png")):
        images[path.stem] = load_image(path)
        ref_ids.append(path.stem)
    for path in sorted((bundle_dir / "stitched").glob("*.png")):
        images[path.stem] = load_image(path)

    severities = sorted(set(labels.values()))
    groups = [
        EvalGroup(
            group_id=f"sev{sev}",
            reference_ids=tuple(ref_ids),
            stitched_ids=tuple(sorted(sid for sid, s in labels.items() if s == sev)),
        )
        for sev in severities
    ]
    return EvalBundle(
        images=images,
        groups=groups,
        subjective=subjective,
        labels=labels,
        source_ids=source_ids,
    )
