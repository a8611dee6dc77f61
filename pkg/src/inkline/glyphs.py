"""Parametric stroke glyphs for the synthetic corpus renderer.

Each glyph is a list of polylines in em coordinates: x grows right from 0,
y grows up from the baseline.  x-height is 0.5, ascenders reach ~0.8,
descenders ~-0.3.  Shapes are single-stroke skeletons; the renderer applies
per-author slant, thickness, width scale, and jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Glyph:
    strokes: tuple
    advance: float


def _arc(cx, cy, rx, ry, a0, a1, n=10):
    """Polyline along an ellipse arc; angles in degrees, CCW."""
    pts = []
    for i in range(n + 1):
        a = math.radians(a0 + (a1 - a0) * i / n)
        pts.append((cx + rx * math.cos(a), cy + ry * math.sin(a)))
    return tuple(pts)


def _line(*pts):
    return tuple(pts)


_X = 0.5       # x-height
_ASC = 0.8     # ascender height
_DESC = -0.3   # descender depth
_R = 0.24      # default bowl radius


def _bowl(cx=0.26, cy=_X / 2, rx=_R, ry=_X / 2):
    return _arc(cx, cy, rx, ry, 0, 360, 14)


GLYPHS: dict[str, Glyph] = {
    "a": Glyph((_bowl(), _line((0.50, _X), (0.50, 0.0), (0.56, 0.06))), 0.62),
    "b": Glyph((_line((0.04, _ASC), (0.04, 0.0)), _arc(0.28, _X / 2, _R, _X / 2, 90, -90, 10),
                _line((0.04, _X), (0.10, _X)), _line((0.04, 0.0), (0.10, 0.0))), 0.60),
    "c": Glyph((_arc(0.28, _X / 2, _R, _X / 2, 45, 315, 12),), 0.56),
    "d": Glyph((_bowl(), _line((0.50, _ASC), (0.50, 0.0))), 0.62),
    "e": Glyph((_line((0.04, _X / 2), (0.48, _X / 2)), _arc(0.26, _X / 2, 0.22, _X / 2, 0, 305, 12)), 0.58),
    "f": Glyph((_arc(0.38, 0.68, 0.16, 0.12, 90, 180, 6), _line((0.22, 0.68), (0.22, 0.0)),
                _line((0.06, _X), (0.40, _X))), 0.48),
    "g": Glyph((_bowl(), _line((0.50, _X), (0.50, _DESC + 0.06)),
                _arc(0.30, _DESC + 0.08, 0.20, 0.12, 0, -120, 6)), 0.62),
    "h": Glyph((_line((0.05, _ASC), (0.05, 0.0)), _arc(0.27, 0.28, 0.22, 0.22, 180, 0, 8),
                _line((0.49, 0.28), (0.49, 0.0))), 0.60),
    "i": Glyph((_line((0.10, _X), (0.10, 0.0)), _line((0.08, 0.66), (0.12, 0.70))), 0.26),
    "j": Glyph((_line((0.22, _X), (0.22, _DESC + 0.06)), _arc(0.06, _DESC + 0.08, 0.16, 0.12, 0, -90, 5),
                _line((0.20, 0.66), (0.24, 0.70))), 0.36),
    "k": Glyph((_line((0.05, _ASC), (0.05, 0.0)), _line((0.44, _X), (0.05, 0.20)),
                _line((0.20, 0.30), (0.46, 0.0))), 0.56),
    "l": Glyph((_line((0.10, _ASC), (0.10, 0.04), (0.18, 0.0)),), 0.28),
    "m": Glyph((_line((0.05, _X), (0.05, 0.0)), _arc(0.22, 0.30, 0.17, 0.20, 180, 0, 7),
                _line((0.39, 0.30), (0.39, 0.0)), _arc(0.56, 0.30, 0.17, 0.20, 180, 0, 7),
                _line((0.73, 0.30), (0.73, 0.0))), 0.84),
    "n": Glyph((_line((0.05, _X), (0.05, 0.0)), _arc(0.26, 0.28, 0.21, 0.22, 180, 0, 8),
                _line((0.47, 0.28), (0.47, 0.0))), 0.58),
    "o": Glyph((_bowl(0.27),), 0.60),
    "p": Glyph((_line((0.05, _X), (0.05, _DESC)), _arc(0.29, _X / 2, _R, _X / 2, 90, -90, 10),
                _line((0.05, _X), (0.11, _X)), _line((0.05, 0.0), (0.11, 0.0))), 0.62),
    "q": Glyph((_bowl(), _line((0.50, _X), (0.50, _DESC), (0.58, _DESC + 0.10))), 0.62),
    "r": Glyph((_line((0.06, _X), (0.06, 0.0)), _arc(0.28, 0.30, 0.20, 0.18, 180, 20, 7)), 0.44),
    "s": Glyph((_arc(0.26, 0.36, 0.17, 0.13, 60, 270, 8), _arc(0.24, 0.13, 0.17, 0.13, 90, -110, 8)), 0.54),
    "t": Glyph((_line((0.20, 0.74), (0.20, 0.06), (0.32, 0.0)), _line((0.04, _X), (0.38, _X))), 0.44),
    "u": Glyph((_line((0.05, _X), (0.05, 0.20)), _arc(0.26, 0.20, 0.21, 0.20, 180, 360, 8),
                _line((0.47, _X), (0.47, 0.0))), 0.58),
    "v": Glyph((_line((0.02, _X), (0.22, 0.0), (0.42, _X)),), 0.50),
    "w": Glyph((_line((0.02, _X), (0.18, 0.0), (0.33, 0.38), (0.48, 0.0), (0.64, _X)),), 0.72),
    "x": Glyph((_line((0.02, _X), (0.44, 0.0)), _line((0.44, _X), (0.02, 0.0))), 0.52),
    "y": Glyph((_line((0.04, _X), (0.24, 0.02)), _line((0.46, _X), (0.12, _DESC))), 0.52),
    "z": Glyph((_line((0.04, _X), (0.42, _X), (0.04, 0.0), (0.44, 0.0)),), 0.52),
    "0": Glyph((_arc(0.26, 0.33, 0.22, 0.36, 0, 360, 14),), 0.60),
    "1": Glyph((_line((0.08, 0.52), (0.22, 0.68), (0.22, 0.0)),), 0.40),
    "2": Glyph((_arc(0.24, 0.50, 0.18, 0.18, 160, -20, 8), _line((0.40, 0.42), (0.05, 0.0), (0.45, 0.0))), 0.56),
    "3": Glyph((_arc(0.24, 0.51, 0.16, 0.17, 150, -70, 8), _arc(0.24, 0.17, 0.19, 0.17, 70, -150, 8)), 0.56),
    "4": Glyph((_line((0.34, 0.0), (0.34, 0.68), (0.04, 0.20), (0.48, 0.20)),), 0.58),
    "5": Glyph((_line((0.42, 0.68), (0.08, 0.68), (0.06, 0.40)), _arc(0.24, 0.22, 0.20, 0.22, 110, -140, 9)), 0.56),
    "6": Glyph((_arc(0.40, 0.60, 0.30, 0.45, 90, 160, 6), _arc(0.25, 0.20, 0.20, 0.20, 0, 360, 12)), 0.58),
    "7": Glyph((_line((0.04, 0.68), (0.46, 0.68), (0.16, 0.0)),), 0.54),
    "8": Glyph((_arc(0.25, 0.49, 0.16, 0.15, 0, 360, 12), _arc(0.25, 0.17, 0.19, 0.17, 0, 360, 12)), 0.56),
    "9": Glyph((_arc(0.25, 0.48, 0.20, 0.20, 0, 360, 12), _arc(0.10, 0.10, 0.30, 0.45, 270, 340, 6)), 0.58),
    " ": Glyph((), 0.50),
}


def has_glyph(char: str) -> bool:
    return char in GLYPHS


def missing_glyphs(text: str) -> set[str]:
    return {c for c in text if c not in GLYPHS}
