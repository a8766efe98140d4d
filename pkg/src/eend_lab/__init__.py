"""Desk-scale end-to-end neural diarization lab.

Transformer- and Conformer-based EEND models with hand-written gradients,
a two-speaker conversation simulator, turn-taking similarity and a DER
scorer.
"""

__version__ = "0.1.0"
