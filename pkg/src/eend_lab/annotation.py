"""Speaker segment annotations shared by the simulator, scorer and turn-taking analysis."""

from dataclasses import dataclass, field

from eend_lab.errors import InputError


@dataclass(frozen=True, order=True)
class Segment:
    speaker: str
    start: float
    end: float

    @property
    def duration(self):
        return self.end - self.start


@dataclass
class Annotation:
    """Segments of one recording; ``duration`` is the recording length in seconds.

    ``duration`` may be ``None`` for annotations parsed from RTTM, in which case
    the end of the last segment is used.
    """

    recording: str
    segments: list = field(default_factory=list)
    duration: float | None = None

    @property
    def speakers(self):
        return sorted({s.speaker for s in self.segments})

    @property
    def length(self):
        end = max((s.end for s in self.segments), default=0.0)
        return end if self.duration is None else max(self.duration, end)

    def by_speaker(self):
        out = {}
        for seg in self.segments:
            out.setdefault(seg.speaker, []).append((seg.start, seg.end))
        for spans in out.values():
            spans.sort()
        return out

    def validate(self):
        for seg in self.segments:
            if not (0.0 <= seg.start < seg.end):
                raise InputError(
                    f"{self.recording}: bad segment {seg.speaker} [{seg.start}, {seg.end})")
            if self.duration is not None and seg.end > self.duration + 1e-9:
                raise InputError(
                    f"{self.recording}: segment end {seg.end} exceeds duration {self.duration}")
        return self


def merge_intervals(spans):
    """Union of (start, end) intervals as a sorted list of disjoint intervals."""
    merged = []
    for start, end in sorted(spans):
        if merged and start <= merged[-1][1]:
            if end > merged[-1][1]:
                merged[-1][1] = end
        else:
            merged.append([start, end])
    return [(a, b) for a, b in merged]


def activity_profile(annotation, duration=None):
    """Piecewise-constant count of active speakers.

    Each speaker's own segments are merged first, so a speaker never counts
    twice. Returns a list of (start, end, n_active) pieces covering
    [0, duration] with adjacent equal counts coalesced.
    """
    if duration is None:
        duration = annotation.length
    events = {}
    for spans in annotation.by_speaker().values():
        for start, end in merge_intervals(spans):
            events[start] = events.get(start, 0) + 1
            events[end] = events.get(end, 0) - 1
    points = sorted(set(events) | {0.0, duration})
    pieces = []
    count = 0
    for left, right in zip(points, points[1:]):
        count += events.get(left, 0)
        if right <= left:
            continue
        if pieces and pieces[-1][2] == count and pieces[-1][1] == left:
            pieces[-1] = (pieces[-1][0], right, count)
        else:
            pieces.append((left, right, count))
    return pieces
