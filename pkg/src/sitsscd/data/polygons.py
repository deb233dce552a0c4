"""Even-odd scanline fill of building footprints into binary masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import InputError


@dataclass
class Polygon:
    """One or more closed rings in pixel coordinates (x right, y down)."""

    rings: list

    def __post_init__(self):
        rings = []
        for ring in self.rings:
            arr = np.asarray(ring, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2:
                raise InputError(f"ring must be a list of (x, y) pairs, got shape {arr.shape}")
            if len(arr) > 1 and np.array_equal(arr[0], arr[-1]):
                arr = arr[:-1]
            if len(arr) < 3:
                raise InputError("degenerate ring: fewer than 3 vertices")
            if not np.all(np.isfinite(arr)):
                raise InputError("ring coordinates must be finite")
            rings.append(arr)
        self.rings = rings


def rasterize_polygons(polys: Sequence[Polygon], height: int, width: int) -> np.ndarray:
    """Boolean mask of pixels whose centre lies inside an odd number of ring crossings.

    All rings of all polygons share one parity, so a ring nested in
    another carves a hole. Geometry outside the canvas is clipped.
    """
    mask = np.zeros((height, width), dtype=bool)
    edges = []
    for poly in polys:
        for ring in poly.rings:
            nxt = np.roll(ring, -1, axis=0)
            for (x0, y0), (x1, y1) in zip(ring, nxt):
                if y0 != y1:
                    edges.append((x0, y0, x1, y1))
    if not edges:
        return mask
    e = np.asarray(edges)
    x0, y0, x1, y1 = e.T
    ymin, ymax = np.minimum(y0, y1), np.maximum(y0, y1)
    centres_x = np.arange(width) + 0.5
    for row in range(height):
        yc = row + 0.5
        # half-open rule so shared vertices are counted once
        hit = (ymin <= yc) & (yc < ymax)
        if not hit.any():
            continue
        t = (yc - y0[hit]) / (y1[hit] - y0[hit])
        xs = np.sort(x0[hit] + t * (x1[hit] - x0[hit]))
        # crossings to the left of each centre
        counts = np.searchsorted(xs, centres_x, side="right")
        mask[row] = counts % 2 == 1
    return mask


def polygons_from_json(source) -> list[Polygon]:
    """Parse a JSON list of polygons, each a list of rings of ``[x, y]`` pairs.

    A bare list of rings (one polygon per ring) is also accepted.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        data = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        data = json.loads(source)
    else:
        data = source
    polys = []
    for item in data:
        arr = item
        depth = 0
        while isinstance(arr, list) and arr:
            arr = arr[0]
            depth += 1
        polys.append(Polygon(item if depth == 3 else [item]))
    return polys
