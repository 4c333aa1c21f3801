"""Reproducible noise streams for parallel Monte Carlo."""

from __future__ import annotations

from ._backend import BACKEND, NoiseStream
from ._families import TAG_AVG, TAG_B, TAG_W

_TAGS = {"W": TAG_W, "B": TAG_B, "AVG": TAG_AVG}


def make_noise_stream(seed: int, path_index: int, stream_tag) -> NoiseStream:
    """Counter-based gaussian stream for one path.

    Draws depend only on (seed, path_index, stream_tag, draw counter), so
    any scheduling of paths across workers reproduces the same numbers.
    ``stream_tag`` separates the slow (W) from the fast (B) Brownian motion,
    which is what makes common-random-number reuse across perturbed runs
    possible: rerunning with the same key yields the same noise.
    """
    if isinstance(stream_tag, str):
        tag = _TAGS.get(stream_tag.upper())
        if tag is None:
            raise ValueError(f"unknown stream tag {stream_tag!r}; use W, B, AVG or an int")
    else:
        tag = int(stream_tag)
    if tag < 0:
        raise ValueError("stream_tag must be non-negative")
    if path_index < 0:
        raise ValueError("path_index must be non-negative")
    return NoiseStream(seed, path_index, tag)


__all__ = ["make_noise_stream", "NoiseStream", "BACKEND"]
