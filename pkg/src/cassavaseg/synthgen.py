"""Seeded synthetic root cross-sections with exact ground-truth masks.

A sample is a flesh-colored disc on a darker background carrying circular
lesions. Lesion geometry is sampled per category:

    many    5-9 well separated lesions
    few     1-2 lesions
    large   one lesion with radius >= 0.4 R
    small   1-3 lesions with radius <= 0.1 R
    center  lesion(s) near the disc center
    edge    lesion(s) straddling the disc rim
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .imgmask import BACKGROUND, NECROSIS, ROOT, LabelMask, RgbImage

FLESH_COLOR = (235, 225, 190)
LESION_COLOR = (120, 80, 40)
BACKGROUND_COLOR = (45, 45, 50)
COLOR_JITTER = 15
DEFAULT_NOISE = 8.0

CATEGORIES = ("many", "few", "large", "small", "center", "edge")


class Placement(enum.Enum):
    CENTER = "center"
    EDGE = "edge"


@dataclass(frozen=True)
class LesionSpec:
    center: tuple[float, float]
    radius: float
    color: tuple[int, int, int] = LESION_COLOR
    placement: Placement = Placement.CENTER

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"lesion radius must be >= 1, got {self.radius}")


@dataclass(frozen=True)
class DiscSpec:
    image_side: int
    disc_center: tuple[float, float]
    disc_radius: float
    flesh_color: tuple[int, int, int] = FLESH_COLOR
    background_color: tuple[int, int, int] = BACKGROUND_COLOR
    lesions: tuple[LesionSpec, ...] = field(default_factory=tuple)
    noise_stddev: float = DEFAULT_NOISE

    def __post_init__(self):
        if self.image_side < 1:
            raise ValueError("image_side must be >= 1")
        if not 0 <= self.noise_stddev <= 32:
            raise ValueError(f"noise_stddev must lie in [0, 32], got {self.noise_stddev}")
        cx, cy = self.disc_center
        fit = min(cx, cy, self.image_side - cx, self.image_side - cy)
        if fit <= 0:
            raise ValueError("disc center lies outside the image")
        object.__setattr__(self, "disc_radius", float(min(self.disc_radius, fit)))
        for les in self.lesions:
            gap = math.hypot(les.center[0] - cx, les.center[1] - cy)
            if gap >= self.disc_radius + les.radius:
                raise ValueError(f"lesion at {les.center} does not intersect the disc")


def _circle(side: int, center, radius) -> np.ndarray:
    c = np.arange(side, dtype=np.float64) + 0.5
    dx = c[None, :] - center[0]
    dy = c[:, None] - center[1]
    return dx * dx + dy * dy <= radius * radius


def render_mask(spec: DiscSpec) -> LabelMask:
    """Ground truth straight from the geometry (no noise involved)."""
    side = spec.image_side
    disc = _circle(side, spec.disc_center, spec.disc_radius)
    classes = np.full((side, side), BACKGROUND, dtype=np.uint8)
    classes[disc] = ROOT
    for les in spec.lesions:
        classes[disc & _circle(side, les.center, les.radius)] = NECROSIS
    return LabelMask(classes)


def generate_disc(spec: DiscSpec, seed: int) -> tuple[RgbImage, LabelMask]:
    mask = render_mask(spec)
    side = spec.image_side
    img = np.empty((side, side, 3), dtype=np.float64)
    img[:] = spec.background_color
    disc = _circle(side, spec.disc_center, spec.disc_radius)
    img[disc] = spec.flesh_color
    for les in spec.lesions:
        img[disc & _circle(side, les.center, les.radius)] = les.color
    if spec.noise_stddev > 0:
        rng = np.random.default_rng(seed)
        img += rng.normal(0.0, spec.noise_stddev, size=img.shape)
    return RgbImage(np.clip(np.rint(img), 0, 255).astype(np.uint8)), mask


def _jitter(rng: np.random.Generator, color) -> tuple[int, int, int]:
    shifted = np.asarray(color) + rng.integers(-COLOR_JITTER, COLOR_JITTER + 1, size=3)
    return tuple(int(v) for v in np.clip(shifted, 0, 255))


def _point_at(rng, cx, cy, dist):
    theta = rng.uniform(0.0, 2 * math.pi)
    return (cx + dist * math.cos(theta), cy + dist * math.sin(theta))


def _lesions_for(category: str, rng: np.random.Generator, cx, cy, big_r) -> list[LesionSpec]:
    color = _jitter(rng, LESION_COLOR)

    def lesion(dist, radius, placement=Placement.CENTER):
        return LesionSpec(_point_at(rng, cx, cy, dist), max(1.0, radius), color, placement)

    if category == "many":
        count = int(rng.integers(5, 10))
        out: list[LesionSpec] = []
        for _ in range(5000):
            if len(out) == count:
                break
            radius = max(1.5, big_r * rng.uniform(0.07, 0.16))
            cand = lesion(rng.uniform(0, big_r - radius - 1), radius)
            # keep lesions apart so each stays a separate component
            if all(math.dist(cand.center, o.center) > cand.radius + o.radius + 2 for o in out):
                out.append(cand)
        return out
    if category == "few":
        return [lesion(rng.uniform(0, 0.75 * big_r), big_r * rng.uniform(0.1, 0.3))
                for _ in range(int(rng.integers(1, 3)))]
    if category == "large":
        radius = big_r * rng.uniform(0.4, 0.55)
        return [lesion(rng.uniform(0, big_r - radius), radius)]
    if category == "small":
        return [lesion(rng.uniform(0, 0.85 * big_r), big_r * rng.uniform(0.05, 0.1))
                for _ in range(int(rng.integers(1, 4)))]
    if category == "center":
        return [lesion(rng.uniform(0, 0.2 * big_r), big_r * rng.uniform(0.12, 0.35))
                for _ in range(int(rng.integers(1, 3)))]
    if category == "edge":
        return [lesion(big_r * rng.uniform(0.8, 1.0), big_r * rng.uniform(0.12, 0.3), Placement.EDGE)
                for _ in range(int(rng.integers(1, 3)))]
    raise ValueError(f"unknown category {category!r}")


def random_disc_spec(category: str, rng: np.random.Generator, side: int = 128,
                     noise_stddev: float = DEFAULT_NOISE) -> DiscSpec:
    big_r = side * rng.uniform(0.3, 0.44)
    margin = side / 2 - big_r
    cx = side / 2 + rng.uniform(-margin, margin) * 0.8
    cy = side / 2 + rng.uniform(-margin, margin) * 0.8
    return DiscSpec(
        image_side=side,
        disc_center=(cx, cy),
        disc_radius=big_r,
        flesh_color=_jitter(rng, FLESH_COLOR),
        background_color=_jitter(rng, BACKGROUND_COLOR),
        lesions=tuple(_lesions_for(category, rng, cx, cy, big_r)),
        noise_stddev=noise_stddev,
    )


def sample_category_suite(seed: int, per_category: int, side: int = 128,
                          noise_stddev: float = DEFAULT_NOISE) -> list[tuple[RgbImage, LabelMask, str]]:
    """``per_category`` samples for every category, ordered category-major."""
    if per_category < 1:
        raise ValueError("per_category must be >= 1")
    samples = []
    for ci, category in enumerate(CATEGORIES):
        for k in range(per_category):
            ss = np.random.SeedSequence([seed, ci, k])
            geom_seed, noise_seed = ss.spawn(2)
            spec = random_disc_spec(category, np.random.default_rng(geom_seed), side, noise_stddev)
            img, mask = generate_disc(spec, int(noise_seed.generate_state(1)[0]))
            samples.append((img, mask, category))
    return samples
