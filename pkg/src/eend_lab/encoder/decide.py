import numpy as np
from scipy.ndimage import median_filter

from eend_lab.annotation import Annotation, Segment
from eend_lab.errors import ConfigurationError


def speaker_label(s):
    return f"spk{s}"


def decide(z, threshold=0.5, median_window=1, recording="rec"):
    """Threshold posteriors into speaker segments.

    ``median_window`` (odd, 1 = off) smooths each speaker's posterior track
    with edge replication before thresholding. Frame ``t`` spans
    [t*shift, (t+1)*shift).
    """
    if median_window < 1 or median_window % 2 == 0:
        raise ConfigurationError(f"median_window must be odd and >= 1, got {median_window}")
    values = np.asarray(z.values, dtype=np.float64)
    shift = z.frame_shift
    if median_window > 1:
        values = median_filter(values, size=(median_window, 1), mode="nearest")
    active = values >= threshold
    segments = []
    n_t = active.shape[0]
    for s in range(active.shape[1]):
        padded = np.concatenate(([False], active[:, s], [False])).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        for start, end in zip(edges[0::2], edges[1::2]):
            segments.append(Segment(speaker_label(s), round(start * shift, 6), round(end * shift, 6)))
    segments.sort(key=lambda seg: (seg.start, seg.speaker))
    return Annotation(recording, segments, round(n_t * shift, 6))
