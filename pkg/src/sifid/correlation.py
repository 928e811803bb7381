"""Correlation machinery: PCC, SROCC with midranks, per-epoch correlation
curves, positive/negative noise classification, indicator selection, and the
mean/variance comparison across indicators.

Distance-style scores (lower is better) are negated before correlating so a
positive coefficient always means agreement with the subjective scores.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import NoiseSpec, catalog_by_tag
from .encoder import forward, preprocess
from .errors import (
    EmptyTestSet,
    IncompleteCurve,
    IncompleteScores,
    LengthMismatch,
    MissingSubjective,
    NoPositiveNoise,
    ParseError,
    TooFewSamples,
    ZeroVariance,
)
from .fid import score_features


def _as_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 3:
        raise TooFewSamples(f"need >= 3 samples, got {x.size}")
    return x, y


def pcc(x, y) -> float:
    """Pearson correlation, sample convention in numerator and denominator."""
    x, y = _as_vectors(x, y)
    sx = float(np.std(x, ddof=1))
    sy = float(np.std(y, ddof=1))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("correlation undefined for a constant vector")
    dx = x - x.mean()
    dy = y - y.mean()
    r = float(dx @ dy) / ((x.size - 1) * sx * sy)
    return float(np.clip(r, -1.0, 1.0))


def midranks(v) -> np.ndarray:
    """1-based ranks; tied entries share the average of their positions."""
    v = np.asarray(v, dtype=np.float64).ravel()
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def srocc(x, y) -> float:
    """Spearman rank correlation with midranks for ties.

    Tie-free data uses 1 - 6*sum(d^2)/(n(n^2-1)); with ties that identity no
    longer holds, so the Pearson correlation of the midrank vectors is used
    (the two coincide exactly when there are no ties).
    """
    x, y = _as_vectors(x, y)
    rx = midranks(x)
    ry = midranks(y)
    n = x.size
    tie_free = np.unique(x).size == n and np.unique(y).size == n
    if tie_free:
        d = rx - ry
        return float(1.0 - 6.0 * float(d @ d) / (n * (n * n - 1.0)))
    return pcc(rx, ry)


@dataclass(frozen=True)
class CorrelationCurve:
    """Per-epoch correlation values; entry 0 is the untrained baseline."""

    noise: NoiseSpec
    pcc: np.ndarray
    srocc: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pcc, dtype=np.float64)
        s = np.asarray(self.srocc, dtype=np.float64)
        if p.ndim != 1 or p.shape != s.shape:
            raise LengthMismatch("pcc and srocc tracks must be equal-length 1-D")
        if p.size < 1:
            raise IncompleteCurve("curve must have at least the epoch-0 entry")
        object.__setattr__(self, "pcc", p)
        object.__setattr__(self, "srocc", s)

    @property
    def epochs(self) -> int:
        return self.pcc.size - 1

    @property
    def mean_track(self) -> np.ndarray:
        return 0.5 * (self.pcc + self.srocc)


@dataclass(frozen=True)
class NoiseVerdict:
    noise: NoiseSpec
    positive: bool
    slope: float
    final_gain: float
    roughness: float

    @property
    def label(self) -> str:
        return "positive" if self.positive else "negative"


@dataclass(frozen=True)
class SiFidSelection:
    noise: NoiseSpec
    epoch: int
    checkpoint_name: str
    verdict: NoiseVerdict


def _group_subjective(groups, subjective) -> list[float]:
    """Mean subjective score per group; every stitched image must be scored."""
    if hasattr(subjective, "items"):
        lookup = dict(subjective)
    else:
        lookup = {s.image_id: s.value for s in subjective}
    out = []
    for group in groups:
        vals = []
        for sid in group.stitched_ids:
            if sid not in lookup:
                raise MissingSubjective(f"no subjective score for image {sid!r}")
            vals.append(lookup[sid])
        out.append(float(np.mean(vals)))
    return out


def build_curve(series, testset, subjective) -> CorrelationCurve:
    """Correlate negated distance scores with subjective scores per epoch.

    Epoch 0 uses the untrained initial parameters, so the first entry is the
    plain feature-distance baseline.
    """
    groups = list(testset.groups)
    if not groups:
        raise EmptyTestSet("test set has no scoring groups")
    subj = _group_subjective(groups, subjective)

    needed: list[str] = []
    for group in groups:
        for iid in (*group.reference_ids, *group.stitched_ids):
            if iid not in needed:
                needed.append(iid)

    side = series.config.encoder.input_side
    prepped = {iid: preprocess(testset.images[iid], side) for iid in needed}

    pcc_track = []
    srocc_track = []
    for epoch in range(series.epochs + 1):
        enc = series.encoder_at(epoch)
        feats = {iid: forward(enc, prepped[iid]) for iid in needed}
        objective = []
        for group in groups:
            ref = np.stack([feats[i] for i in group.reference_ids])
            sti = np.stack([feats[i] for i in group.stitched_ids])
            objective.append(-score_features(ref, sti))
        pcc_track.append(pcc(objective, subj))
        srocc_track.append(srocc(objective, subj))
    return CorrelationCurve(
        noise=series.config.noise,
        pcc=np.array(pcc_track),
        srocc=np.array(srocc_track),
    )


def classify_noise(
    curve: CorrelationCurve,
    slope_threshold: float = 0.0,
    gain_threshold: float = 0.0,
    tail: int = 10,
) -> NoiseVerdict:
    """Positive iff the mean PCC/SROCC track trends up and ends above epoch 0.

    slope: least-squares fit over trained epochs 1..E. final_gain: mean of the
    last `tail` entries minus the epoch-0 value. roughness: std of the first
    differences of the whole track (used only for ranking, not the verdict).
    """
    m = curve.mean_track
    if not np.all(np.isfinite(m)):
        raise IncompleteCurve("curve contains non-finite entries")
    if curve.epochs < 1:
        raise IncompleteCurve("curve has no trained epochs")
    xs = np.arange(1, curve.epochs + 1, dtype=np.float64)
    ys = m[1:]
    dx = xs - xs.mean()
    denom = float(dx @ dx)
    slope = float(dx @ (ys - ys.mean())) / denom if denom > 0.0 else 0.0
    final_gain = float(np.mean(m[-min(tail, curve.epochs):]) - m[0])
    roughness = float(np.std(np.diff(m)))
    positive = slope > slope_threshold and final_gain > gain_threshold
    return NoiseVerdict(
        noise=curve.noise,
        positive=positive,
        slope=slope,
        final_gain=final_gain,
        roughness=roughness,
    )


def select_si_fid(
    curves,
    slope_threshold: float = 0.0,
    gain_threshold: float = 0.0,
) -> SiFidSelection:
    """Among positive curves pick (highest gain, then smoothest), then the
    best epoch on the winner's mean track; all tiebreaks are total."""
    curves = list(curves)
    scored: list[tuple[NoiseVerdict, CorrelationCurve]] = []
    for curve in curves:
        verdict = classify_noise(curve, slope_threshold, gain_threshold)
        if verdict.positive:
            scored.append((verdict, curve))
    if not scored:
        raise NoPositiveNoise("no curve classified positive")
    scored.sort(key=lambda vc: (-vc[0].final_gain, vc[0].roughness, vc[0].noise.tag))
    verdict, winner = scored[0]
    epoch = int(np.argmax(winner.mean_track))
    return SiFidSelection(
        noise=winner.noise,
        epoch=epoch,
        checkpoint_name=f"{winner.noise.tag}_{epoch:03d}.ckpt",
        verdict=verdict,
    )


def compare_indicators(scores, subjective, orientations) -> dict[str, dict]:
    """Mean and sample variance of per-group PCC/SROCC for each indicator.

    scores: {indicator: {group_id: per-image values}}; subjective:
    {group_id: per-image values}; orientations: {indicator: orientation}.
    Indicators are ranked by mean SROCC, best first.
    """
    group_ids = sorted(subjective)
    if len(group_ids) < 2:
        raise IncompleteScores("need >= 2 groups for a variance report")
    report: dict[str, dict] = {}
    for indicator in sorted(scores):
        orient = orientations.get(indicator)
        if orient not in ("lower_better", "higher_better"):
            raise IncompleteScores(f"no orientation for indicator {indicator!r}")
        per_group = scores[indicator]
        pccs = []
        sroccs = []
        for gid in group_ids:
            if gid not in per_group:
                raise IncompleteScores(f"indicator {indicator!r} missing group {gid!r}")
            vals = np.asarray(per_group[gid], dtype=np.float64)
            subj = np.asarray(subjective[gid], dtype=np.float64)
            if vals.size != subj.size:
                raise LengthMismatch(
                    f"indicator {indicator!r} group {gid!r}: "
                    f"{vals.size} scores vs {subj.size} subjective"
                )
            oriented = vals if orient == "higher_better" else -vals
            pccs.append(pcc(oriented, subj))
            sroccs.append(srocc(oriented, subj))
        report[indicator] = {
            "mean_pcc": float(np.mean(pccs)),
            "var_pcc": float(np.var(pccs, ddof=1)),
            "mean_srocc": float(np.mean(sroccs)),
            "var_srocc": float(np.var(sroccs, ddof=1)),
        }
    ranking = sorted(report, key=lambda k: (-report[k]["mean_srocc"], k))
    for rank, indicator in enumerate(ranking, start=1):
        report[indicator]["rank"] = rank
    return report


# ---------------------------------------------------------------------------
# file formats


def write_curve_csv(curve: CorrelationCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["noise_tag", "epoch", "pcc", "srocc"])
        for epoch in range(curve.epochs + 1):
            writer.writerow(
                [curve.noise.tag, epoch, f"{curve.pcc[epoch]:.17g}", f"{curve.srocc[epoch]:.17g}"]
            )


def read_curve_csv(path) -> CorrelationCurve:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"noise_tag", "epoch", "pcc", "srocc"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ParseError(f"curve CSV must have columns {sorted(required)}")
        for row in reader:
            rows.append(row)
    if not rows:
        raise IncompleteCurve(f"curve CSV {path} is empty")
    tag = rows[0]["noise_tag"]
    if any(r["noise_tag"] != tag for r in rows):
        raise ParseError("curve CSV mixes noise tags")
    try:
        noise = catalog_by_tag(tag)
    except KeyError as exc:
        raise ParseError(f"unknown noise tag {tag!r}") from exc
    rows.sort(key=lambda r: int(r["epoch"]))
    expected = list(range(len(rows)))
    if [int(r["epoch"]) for r in rows] != expected:
        raise IncompleteCurve("curve CSV epochs are not contiguous from 0")
    return CorrelationCurve(
        noise=noise,
        pcc=np.array([float(r["pcc"]) for r in rows]),
        srocc=np.array([float(r["srocc"]) for r in rows]),
    )


def verdict_to_dict(verdict: NoiseVerdict) -> dict:
    return {
        "noise_tag": verdict.noise.tag,
        "class": verdict.label,
        "slope": verdict.slope,
        "final_gain": verdict.final_gain,
        "roughness": verdict.roughness,
    }


def write_verdicts_json(verdicts, path) -> None:
    payload = [verdict_to_dict(v) for v in verdicts]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_report_json(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
