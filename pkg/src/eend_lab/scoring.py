"""RTTM I/O and diarization error rate with a reference-boundary collar.

Scoring runs on a 1 ms grid. Instant ``i`` stands for [i, i+1) ms; a segment
[start, end) covers instants round(1000*start) .. round(1000*end) - 1. A
collar of ``c`` seconds removes [b - c, b + c) around every reference
segment boundary ``b`` from scoring for both sides. Overlapped speech is
scored.
"""

import itertools
import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal

import numpy as np
from scipy.optimize import linear_sum_assignment

from eend_lab.annotation import Annotation, Segment
from eend_lab.errors import ConfigurationError, InputError, ParseError

log = logging.getLogger(__name__)

GRID = 1000  # instants per second


@dataclass
class DERReport:
    scored_speech: float
    missed: float
    false_alarm: float
    confusion: float
    mapping: dict = field(default_factory=dict)

    @property
    def errors(self):
        return self.missed + self.false_alarm + self.confusion

    @property
    def der(self):
        if self.scored_speech == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return 100.0 * self.errors / self.scored_speech


def parse_rttm_text(text, source="<rttm>"):
    """Map recording id -> Annotation from RTTM text; non-SPEAKER lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields_ = line.split()
        if not fields_ or fields_[0] != "SPEAKER":
            continue
        if len(fields_) < 8:
            raise ParseError(f"{source}: expected at least 8 fields, got {len(fields_)}", lineno)
        rec, speaker = fields_[1], fields_[7]
        try:
            onset = float(fields_[3])
            dur = float(fields_[4])
        except ValueError as exc:
            raise ParseError(f"{source}: bad onset/duration ({exc})", lineno) from exc
        if not (np.isfinite(onset) and np.isfinite(dur)) or onset < 0:
            raise ParseError(f"{source}: bad onset {fields_[3]}", lineno)
        if dur < 0:
            raise ParseError(f"{source}: negative duration {fields_[4]}", lineno)
        ann = out.setdefault(rec, Annotation(rec))
        if dur > 0:
            ann.segments.append(Segment(speaker, onset, onset + dur))
    return out


def parse_rttm(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return parse_rttm_text(text, str(path))


def _fmt3(x):
    return str(Decimal(repr(float(x))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def emit_rttm(annotations):
    """RTTM text, one SPEAKER line per segment, sorted by (recording, onset, speaker)."""
    if isinstance(annotations, dict):
        annotations = annotations.values()
    rows = []
    for ann in annotations:
        for seg in ann.segments:
            rows.append((ann.recording, seg.start, seg.speaker, seg.end - seg.start))
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return "".join(
        f"SPEAKER {rec} 1 {_fmt3(onset)} {_fmt3(dur)} <NA> <NA> {spk} <NA> <NA>\n"
        for rec, onset, spk, dur in rows)


def _idx(t):
    return int(round(t * GRID))


def _activity(ann, n):
    speakers = ann.speakers
    act = np.zeros((len(speakers), n), dtype=bool)
    for row, spk in enumerate(speakers):
        for seg in ann.segments:
            if seg.speaker == spk:
                act[row, _idx(seg.start):_idx(seg.end)] = True
    return speakers, act


def _best_mapping(overlap):
    """Injective ref->hyp assignment maximising total overlap."""
    n_ref, n_hyp = overlap.shape
    if n_ref == 0 or n_hyp == 0:
        return []
    if max(n_ref, n_hyp) <= 3:
        best, best_pairs = -1, []
        if n_ref <= n_hyp:
            for perm in itertools.permutations(range(n_hyp), n_ref):
                score = sum(overlap[r, h] for r, h in enumerate(perm))
                if score > best:
                    best, best_pairs = score, list(enumerate(perm))
        else:
            for perm in itertools.permutations(range(n_ref), n_hyp):
                score = sum(overlap[r, h] for h, r in enumerate(perm))
                if score > best:
                    best, best_pairs = score, sorted((r, h) for h, r in enumerate(perm))
        return best_pairs
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return list(zip(rows.tolist(), cols.tolist()))


def der(ref, hyp, collar=0.25):
    if collar < 0:
        raise ConfigurationError(f"collar must be >= 0, got {collar}")
    ends = [s.end for s in ref.segments] + [s.end for s in hyp.segments]
    n = max((_idx(e) for e in ends), default=0)
    ref_spk, ref_act = _activity(ref, n)
    hyp_spk, hyp_act = _activity(hyp, n)
    scored = np.ones(n, dtype=bool)
    c = _idx(collar)
    if c > 0:
        for seg in ref.segments:
            for b in (_idx(seg.start), _idx(seg.end)):
                scored[max(0, b - c):max(0, b + c)] = False
    ref_s = ref_act[:, scored]
    hyp_s = hyp_act[:, scored]
    n_ref = ref_s.sum(axis=0, dtype=np.int64)
    n_hyp = hyp_s.sum(axis=0, dtype=np.int64)
    missed = int(np.maximum(n_ref - n_hyp, 0).sum())
    false_alarm = int(np.maximum(n_hyp - n_ref, 0).sum())
    overlap = ref_s.astype(np.int64) @ hyp_s.T.astype(np.int64)
    pairs = _best_mapping(overlap)
    correct = int(sum(overlap[r, h] for r, h in pairs))
    confusion = int(np.minimum(n_ref, n_hyp).sum()) - correct
    return DERReport(
        scored_speech=int(n_ref.sum()) / GRID,
        missed=missed / GRID,
        false_alarm=false_alarm / GRID,
        confusion=confusion / GRID,
        mapping={ref_spk[r]: hyp_spk[h] for r, h in pairs},
    )


def score_corpus(ref, hyp, collar=0.25, skip_missing=False):
    """Per-recording reports and a pooled report from summed time components.

    ``ref`` and ``hyp`` map recording id -> Annotation. Recording sets must
    match unless ``skip_missing`` is set, in which case unmatched recordings
    are logged and skipped.
    """
    ref_ids, hyp_ids = set(ref), set(hyp)
    common = sorted(ref_ids & hyp_ids)
    if ref_ids != hyp_ids:
        if not skip_missing:
            raise InputError(
                f"recording sets differ: only in ref {sorted(ref_ids - hyp_ids)[:5]}, "
                f"only in hyp {sorted(hyp_ids - ref_ids)[:5]}")
        for rec in sorted(ref_ids ^ hyp_ids):
            log.warning("skipping recording %s (present on one side only)", rec)
    if not common:
        raise InputError("no recordings in common between reference and hypothesis")
    reports = {rec: der(ref[rec], hyp[rec], collar) for rec in common}
    pooled = DERReport(
        scored_speech=sum(r.scored_speech for r in reports.values()),
        missed=sum(r.missed for r in reports.values()),
        false_alarm=sum(r.false_alarm for r in reports.values()),
        confusion=sum(r.confusion for r in reports.values()),
    )
    return reports, pooled


def format_der_table(reports, pooled=None):
    lines = ["recording\tscored\tmiss\tfa\tconf\tder"]
    items = list(reports.items())
    if pooled is not None:
        items.append(("ALL", pooled))
    for rec, r in items:
        lines.append(f"{rec}\t{r.scored_speech:.3f}\t{r.missed:.3f}\t{r.false_alarm:.3f}"
                     f"\t{r.confusion:.3f}\t{r.der:.2f}")
    return "\n".join(lines) + "\n"
