"""Critic score ingestion, z-score normalization, and per-image aggregation.

Two normalization modes ship. "per_critic" (default) z-scores each critic's
ratings across the images they rated, which debiases rater scale/offset and
keeps the per-image mean informative. "per_image_literal" z-scores each
image's column across critics; averaging those z-scores afterwards gives
exactly zero for every image, so the mode exists to document that degeneracy,
not to produce usable aggregates.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateRating,
    NoRatingsForImage,
    ParseError,
    ScoreOutOfRange,
    TooFewRatings,
    ZeroVariance,
)

NORMALIZE_MODES = ("per_critic", "per_image_literal")


@dataclass(frozen=True)
class ScoreTable:
    """critics x images score matrix; NaN marks a missing rating."""

    critics: tuple[str, ...]
    images: tuple[str, ...]
    raw: np.ndarray

    def __post_init__(self):
        critics = tuple(self.critics)
        images = tuple(self.images)
        raw = np.asarray(self.raw, dtype=np.float64)
        if raw.shape != (len(critics), len(images)):
            raise ParseError(
                f"matrix shape {raw.shape} does not match "
                f"{len(critics)} critics x {len(images)} images"
            )
        present = raw[~np.isnan(raw)]
        if present.size and (present.min() < 0.0 or present.max() > 100.0):
            raise ScoreOutOfRange("scores must lie in [0, 100]")
        raw = raw.copy()
        raw.flags.writeable = False
        object.__setattr__(self, "critics", critics)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "raw", raw)

    @property
    def n_critics(self) -> int:
        return len(self.critics)

    @property
    def n_images(self) -> int:
        return len(self.images)


@dataclass(frozen=True)
class SubjectiveScore:
    image_id: str
    value: float
    n_raters: int


@dataclass(frozen=True)
class NormalizedTable:
    """Same layout as ScoreTable but values are z-scores (unbounded)."""

    critics: tuple[str, ...]
    images: tuple[str, ...]
    values: np.ndarray
    mode: str


def _zscore_rows(raw: np.ndarray, axis: int, who: list[str], label: str) -> np.ndarray:
    """z-score along `axis` groups, skipping NaN; each group needs >= 2 entries."""
    out = np.full(raw.shape, np.nan)
    n_groups = raw.shape[1 - axis]
    for g in range(n_groups):
        row = raw[g, :] if axis == 1 else raw[:, g]
        mask = ~np.isnan(row)
        vals = row[mask]
        if vals.size < 2:
            raise TooFewRatings(f"{label} {who[g]!r} has {vals.size} ratings, need >= 2")
        std = float(np.std(vals, ddof=1))
        if std == 0.0:
            raise ZeroVariance(f"{label} {who[g]!r} gave identical scores")
        z = (vals - vals.mean()) / std
        if axis == 1:
            out[g, mask] = z
        else:
            out[mask, g] = z
    return out


def normalize(table: ScoreTable, mode: str = "per_critic") -> NormalizedTable:
    if mode not in NORMALIZE_MODES:
        raise ParseError(f"mode must be one of {NORMALIZE_MODES}")
    if table.n_critics < 2 or table.n_images < 2:
        raise TooFewRatings(
            f"normalization needs >= 2 critics and >= 2 images, "
            f"got {table.n_critics}x{table.n_images}"
        )
    if mode == "per_critic":
        values = _zscore_rows(table.raw, axis=1, who=list(table.critics), label="critic")
    else:
        values = _zscore_rows(table.raw, axis=0, who=list(table.images), label="image")
    return NormalizedTable(
        critics=table.critics, images=table.images, values=values, mode=mode
    )


def aggregate(table: NormalizedTable) -> list[SubjectiveScore]:
    """Mean normalized score per image over the critics who rated it."""
    out = []
    for j, image_id in enumerate(table.images):
        col = table.values[:, j]
        mask = ~np.isnan(col)
        n = int(mask.sum())
        if n == 0:
            raise NoRatingsForImage(f"image {image_id!r} has no ratings")
        out.append(SubjectiveScore(image_id=image_id, value=float(col[mask].mean()), n_raters=n))
    return out


def ingest_csv(path) -> ScoreTable:
    """Read (critic_id, image_id, score) rows into a dense table."""
    path = Path(path)
    entries: dict[tuple[str, str], float] = {}
    critics: list[str] = []
    images: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"critic_id", "image_id", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(f"ratings CSV must have columns {sorted(required)}")
        for lineno, row in enumerate(reader, start=2):
            critic = (row["critic_id"] or "").strip()
            image = (row["image_id"] or "").strip()
            if not critic or not image or row["score"] is None:
                raise ParseError(f"line {lineno}: incomplete row")
            try:
                score = float(row["score"])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad score {row['score']!r}") from exc
            if not 0.0 <= score <= 100.0:
                raise ScoreOutOfRange(f"line {lineno}: score {score} outside [0, 100]")
            key = (critic, image)
            if key in entries:
                raise DuplicateRating(f"line {lineno}: duplicate rating for {key}")
            entries[key] = score
            if critic not in critics:
                critics.append(critic)
            if image not in images:
                images.append(image)
    if not entries:
        raise ParseError(f"no ratings in {path}")
    raw = np.full((len(critics), len(images)), np.nan)
    for (critic, image), score in entries.items():
        raw[critics.index(critic), images.index(image)] = score
    return ScoreTable(critics=tuple(critics), images=tuple(images), raw=raw)


def write_aggregate_csv(scores: list[SubjectiveScore], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "subjective_score", "n_raters"])
        for s in scores:
            writer.writerow([s.image_id, f"{s.value:.17g}", s.n_raters])
