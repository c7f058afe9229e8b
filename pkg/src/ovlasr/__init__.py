"""Overlap-aware streaming ASR at desk scale.

Speaker-independent decoding by default, speaker-conditioned fan-out over the
most recent speakers whenever an overlap detector fires.
"""

__version__ = "0.1.0"
