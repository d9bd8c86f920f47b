"""2D-2D feature matches and their lifting to 2D-3D correspondences.

Matches arrive from an external feature matcher as pixel pairs between a
real image and a rendering. Lifting reads the rendered depth under each
rendered-image pixel and unprojects it, keeping the real-image pixel as
the 2D observation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import EmptyMatches, ParseError
from .geometry import Camera, Pose, unproject
from .ioutil import atomic_write
from .render import DepthMap

MATCH_MAGIC = "match-v1"


@dataclass(frozen=True)
class MatchSet:
    """Pixel pairs (u in the real image, u_r in the rendered image)."""

    image_id: str
    render_id: str
    pairs: np.ndarray  # (N, 4): u_x u_y ur_x ur_y

    def __post_init__(self):
        p = np.asarray(self.pairs, dtype=float).reshape(-1, 4)
        if not np.all(np.isfinite(p)):
            raise ValueError("match coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "pairs", p)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def image_pixels(self) -> np.ndarray:
        return self.pairs[:, 0:2]

    @property
    def render_pixels(self) -> np.ndarray:
        return self.pairs[:, 2:4]


@dataclass(frozen=True)
class Corr2D3D:
    """2D observations paired with model-frame 3D points."""

    pixels: np.ndarray  # (N, 2)
    points: np.ndarray  # (N, 3)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float).reshape(-1, 2)
        pt = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(px) != len(pt):
            raise ValueError("pixel and point counts differ")
        px.setflags(write=False)
        pt.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "points", pt)

    def __len__(self) -> int:
        return len(self.pixels)

    def subset(self, index) -> "Corr2D3D":
        return Corr2D3D(self.pixels[index], self.points[index])

    @staticmethod
    def concatenate(parts: Iterable["Corr2D3D"]) -> "Corr2D3D":
        parts = list(parts)
        if not parts:
            return Corr2D3D(np.empty((0, 2)), np.empty((0, 3)))
        return Corr2D3D(
            np.concatenate([p.pixels for p in parts]),
            np.concatenate([p.points for p in parts]),
        )


def load_matches(source) -> MatchSet:
    """Parse a match file; raises ParseError / EmptyMatches.

    Format: header line ``match-v1 <image_id> <render_id>`` followed by one
    whitespace-separated ``u_x u_y ur_x ur_y`` line per match.
    """
    if hasattr(source, "read"):
        lines = source.read().splitlines()
        path = getattr(source, "name", "<stream>")
    else:
        path = os.fspath(source)
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.read().splitlines()

    if not lines:
        raise ParseError("missing header line", line=1, path=path)
    header = lines[0].split()
    if len(header) != 3 or header[0] != MATCH_MAGIC:
        raise ParseError(
            f"expected '{MATCH_MAGIC} <image_id> <render_id>' header", line=1, path=path
        )
    _, image_id, render_id = header

    pairs = []
    for lineno, raw in enumerate(lines[1:], start=2):
        text = raw.strip()
        if not text:
            continue
        fields = text.split()
        if len(fields) != 4:
            raise ParseError(
                f"expected 4 fields, got {len(fields)}", line=lineno, path=path
            )
        try:
            pairs.append([float(f) for f in fields])
        except ValueError:
            raise ParseError(f"non-numeric token in '{text}'", line=lineno, path=path)

    if not pairs:
        raise EmptyMatches(f"{path}: no match pairs after header")
    return MatchSet(image_id, render_id, np.array(pairs))


def write_matches(matches: MatchSet, path) -> None:
    with atomic_write(path) as fh:
        fh.write(f"{MATCH_MAGIC} {matches.image_id} {matches.render_id}\n")
        for ux, uy, rx, ry in matches.pairs:
            fh.write(f"{ux:.17g} {uy:.17g} {rx:.17g} {ry:.17g}\n")


def lift(matches: MatchSet, dm: DepthMap, pose: Pose, cam: Camera) -> Corr2D3D:
    """Back-project rendered-image pixels through the depth map.

    ``dm`` must be rendered at exactly (pose, cam). Pairs whose rendered
    pixel has no valid depth are dropped silently; the caller can compare
    lengths to count drops.
    """
    pixels = []
    points = []
    for ux, uy, rx, ry in matches.pairs:
        d = dm.value_at((rx, ry))
        if d is None:
            continue
        pixels.append((ux, uy))
        points.append(unproject((rx, ry), d, pose, cam))
    return Corr2D3D(
        np.array(pixels).reshape(-1, 2), np.array(points).reshape(-1, 3)
    )


def lift_all(
    match_sets: Iterable[MatchSet], dm: DepthMap, pose: Pose, cam: Camera
) -> Corr2D3D:
    """Lift several match sets for one image and concatenate the results."""
    return Corr2D3D.concatenate(lift(m, dm, pose, cam) for m in match_sets)
