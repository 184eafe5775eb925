"""Necrosis percentage, the 1-5 severity scale, and the red/green overlay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoRootDetected, RangeError
from .imgmask import NECROSIS, ROOT, LabelMask, RgbImage

# Upper bounds (inclusive) of severity 1..4; anything above the last is 5.
SEVERITY_UPPER_BOUNDS = (2.0, 5.0, 10.0, 25.0)

OVERLAY_COLORS = np.array([(0, 0, 0), (0, 255, 0), (255, 0, 0)], dtype=np.uint8)


@dataclass(frozen=True)
class NecrosisScore:
    p_nec: int
    p_root: int
    percentage: float
    severity: int

    def to_json(self, image: str | None = None) -> dict:
        doc = {"image": image} if image is not None else {}
        doc.update(percentage=self.percentage, severity=self.severity, p_nec=self.p_nec, p_root=self.p_root)
        return doc


def necrosis_percentage(mask: LabelMask) -> float:
    """100 * necrosis / (necrosis + root); background pixels play no part."""
    p_nec, p_root = mask.count(NECROSIS), mask.count(ROOT)
    if p_nec + p_root == 0:
        raise NoRootDetected("mask contains no root or necrosis pixels")
    return 100.0 * p_nec / (p_nec + p_root)


def severity_score(percentage: float) -> int:
    """Map a necrosis percentage onto the 1-5 scale.

    Intervals are closed on the right: [0, 2] -> 1, (2, 5] -> 2, (5, 10] -> 3,
    (10, 25] -> 4, (25, 100] -> 5.
    """
    if not 0.0 <= percentage <= 100.0:
        raise RangeError(f"percentage must lie in [0, 100], got {percentage}")
    for level, upper in enumerate(SEVERITY_UPPER_BOUNDS, start=1):
        if percentage <= upper:
            return level
    return 5


def score_mask(mask: LabelMask) -> NecrosisScore:
    pct = necrosis_percentage(mask)
    return NecrosisScore(mask.count(NECROSIS), mask.count(ROOT), pct, severity_score(pct))


def render_overlay(mask: LabelMask) -> RgbImage:
    """Black canvas with root pixels green and necrotic pixels red."""
    return RgbImage(OVERLAY_COLORS[mask.classes])
