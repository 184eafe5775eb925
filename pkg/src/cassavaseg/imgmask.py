"""Image and label-mask data model.

Covers raster I/O, the JSON polygon annotation format, even-odd scanline
rasterization of polygons into class masks, and palette remapping of
color-coded mask files.

Class indices are fixed: 0 = background, 1 = root, 2 = necrosis.
"""

from __future__ import annotations

import enum
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .errors import DegeneratePolygon, ParseError, ShapeError, UnknownLabel, UnmappedColor

BACKGROUND, ROOT, NECROSIS = 0, 1, 2
CLASS_NAMES = ("background", "root", "necrosis")

# Stand-in for the original annotation palette, which is not recoverable.
DEFAULT_PALETTE: dict[tuple[int, int, int], int] = {
    (0, 0, 0): BACKGROUND,
    (0, 128, 0): ROOT,
    (128, 0, 0): NECROSIS,
}
OVERLAY_PALETTE: dict[tuple[int, int, int], int] = {
    (0, 0, 0): BACKGROUND,
    (0, 255, 0): ROOT,
    (255, 0, 0): NECROSIS,
}


class RasterizeWarning(UserWarning):
    """A polygon was skipped because it lies entirely outside the image."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class RgbImage:
    """8-bit RGB raster stored as an (H, W, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ShapeError(f"RgbImage needs an (H, W, 3) array, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ShapeError("RgbImage must be at least 1x1")
        if px.dtype != np.uint8:
            raise ShapeError(f"RgbImage must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, RgbImage) and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class LabelMask:
    """Per-pixel class map, an (H, W) uint8 array with values in {0, 1, 2}."""

    classes: np.ndarray

    def __post_init__(self):
        cl = np.asarray(self.classes)
        if cl.ndim != 2:
            raise ShapeError(f"LabelMask needs an (H, W) array, got {cl.shape}")
        if cl.shape[0] < 1 or cl.shape[1] < 1:
            raise ShapeError("LabelMask must be at least 1x1")
        if cl.size and int(cl.max()) > NECROSIS or (cl.size and int(cl.min()) < 0):
            raise ValueError("LabelMask values must lie in {0, 1, 2}")
        object.__setattr__(self, "classes", _frozen(cl.astype(np.uint8)))

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def count(self, cls: int) -> int:
        return int(np.count_nonzero(self.classes == cls))

    def __eq__(self, other):
        return isinstance(other, LabelMask) and np.array_equal(self.classes, other.classes)

    __hash__ = None


class Label(enum.Enum):
    ROOT = "root"
    NECROSIS = "necrosis"

    @property
    def class_index(self) -> int:
        return ROOT if self is Label.ROOT else NECROSIS


@dataclass(frozen=True)
class PolygonAnnotation:
    label: Label
    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.vertices) < 3:
            raise DegeneratePolygon(f"{self.label.value} polygon has {len(self.vertices)} vertices, need >= 3")


@dataclass(frozen=True)
class AnnotationFile:
    image_path: str
    image_width: int
    image_height: int
    polygons: tuple[PolygonAnnotation, ...] = field(default_factory=tuple)


def parse_annotation(data: bytes | str) -> AnnotationFile:
    """Parse the JSON annotation schema.

    ``{"image": path, "width": W, "height": H,
    "shapes": [{"label": "root|necrosis", "points": [[x, y], ...]}]}``
    """
    try:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"annotation is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("annotation root must be a JSON object")

    try:
        width, height = doc["width"], doc["height"]
        shapes = doc.get("shapes", [])
        image = doc.get("image", "")
    except KeyError as exc:
        raise ParseError(f"missing key {exc}") from exc
    if not (isinstance(width, int) and isinstance(height, int)) or width < 1 or height < 1:
        raise ParseError(f"width/height must be positive integers, got {width!r}x{height!r}")
    if not isinstance(shapes, list):
        raise ParseError("'shapes' must be a list")

    polygons = []
    for i, shape in enumerate(shapes):
        if not isinstance(shape, dict) or "label" not in shape or "points" not in shape:
            raise ParseError(f"shape {i} needs 'label' and 'points'")
        raw_label = str(shape["label"]).strip().lower()
        try:
            label = Label(raw_label)
        except ValueError:
            raise UnknownLabel(f"shape {i}: unknown label {shape['label']!r}") from None
        try:
            verts = tuple((float(p[0]), float(p[1])) for p in shape["points"])
        except (TypeError, ValueError, IndexError) as exc:
            raise ParseError(f"shape {i}: points must be [x, y] pairs") from exc
        polygons.append(PolygonAnnotation(label, verts))

    has_root = any(p.label is Label.ROOT for p in polygons)
    if not has_root and any(p.label is Label.NECROSIS for p in polygons):
        raise ParseError("necrosis polygons present without any root polygon")
    return AnnotationFile(str(image), width, height, tuple(polygons))


def load_annotation(path: str | Path) -> AnnotationFile:
    return parse_annotation(Path(path).read_bytes())


def _fill_polygon(canvas: np.ndarray, vertices: Sequence[tuple[float, float]], value: int) -> bool:
    """Even-odd scanline fill sampled at pixel centers. Returns False if nothing overlaps."""
    h, w = canvas.shape
    pts = np.asarray(vertices, dtype=np.float64)
    x0, y0 = pts[:, 0], pts[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)

    if pts[:, 0].max() < 0 or pts[:, 1].max() < 0 or pts[:, 0].min() > w or pts[:, 1].min() > h:
        return False

    centers_x = np.arange(w, dtype=np.float64) + 0.5
    row_lo = max(0, int(np.floor(pts[:, 1].min())) - 1)
    row_hi = min(h, int(np.ceil(pts[:, 1].max())) + 1)
    for row in range(row_lo, row_hi):
        yc = row + 0.5
        crosses = (y0 > yc) != (y1 > yc)
        if not crosses.any():
            continue
        xa, ya, xb, yb = x0[crosses], y0[crosses], x1[crosses], y1[crosses]
        xs = np.sort((xb - xa) * (yc - ya) / (yb - ya) + xa)
        # crossings strictly to the right of each center; odd count = inside
        right = xs.size - np.searchsorted(xs, centers_x, side="right")
        inside = (right & 1).astype(bool)
        canvas[row, inside] = value
    return True


def rasterize(ann: AnnotationFile) -> LabelMask:
    """Paint background, then every root polygon, then every necrosis polygon."""
    canvas = np.zeros((ann.image_height, ann.image_width), dtype=np.uint8)
    ordered = [p for p in ann.polygons if p.label is Label.ROOT]
    ordered += [p for p in ann.polygons if p.label is Label.NECROSIS]
    for poly in ordered:
        if not _fill_polygon(canvas, poly.vertices, poly.label.class_index):
            warnings.warn(
                f"{poly.label.value} polygon lies outside the {ann.image_width}x{ann.image_height} image; skipped",
                RasterizeWarning,
                stacklevel=2,
            )
    return LabelMask(canvas)


def _pack_rgb(arr: np.ndarray) -> np.ndarray:
    arr = arr.astype(np.uint32)
    return (arr[..., 0] << 16) | (arr[..., 1] << 8) | arr[..., 2]


def mask_from_color_png(img: RgbImage, palette: Mapping[tuple[int, int, int], int] = DEFAULT_PALETTE) -> LabelMask:
    keys = np.array(sorted(_pack_rgb(np.array(c, dtype=np.uint8)) for c in palette), dtype=np.uint32)
    lut = {int(_pack_rgb(np.array(c, dtype=np.uint8))): v for c, v in palette.items()}
    values = np.array([lut[int(k)] for k in keys], dtype=np.uint8)

    packed = _pack_rgb(img.pixels)
    idx = np.searchsorted(keys, packed)
    idx_clipped = np.minimum(idx, keys.size - 1)
    known = keys[idx_clipped] == packed
    if not known.all():
        y, x = np.argwhere(~known)[0]
        raise UnmappedColor(img.pixels[y, x], int(x), int(y))
    return LabelMask(values[idx_clipped])


def mask_to_color(mask: LabelMask, palette: Mapping[tuple[int, int, int], int] = DEFAULT_PALETTE) -> RgbImage:
    colors = np.zeros((3, 3), dtype=np.uint8)
    for color, cls in palette.items():
        colors[cls] = color
    return RgbImage(colors[mask.classes])


def _bilinear_axis(n_in: int, n_out: int):
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_image(img: RgbImage, width: int, height: int) -> RgbImage:
    """Bilinear resize with half-pixel centers."""
    if (width, height) == (img.width, img.height):
        return img
    px = img.pixels.astype(np.float64)
    y0, y1, fy = _bilinear_axis(img.height, height)
    x0, x1, fx = _bilinear_axis(img.width, width)
    fy, fx = fy[:, None, None], fx[None, :, None]
    top = px[y0][:, x0] * (1 - fx) + px[y0][:, x1] * fx
    bottom = px[y1][:, x0] * (1 - fx) + px[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return RgbImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_mask(mask: LabelMask, width: int, height: int) -> LabelMask:
    """Nearest-neighbor resize; class values are never interpolated."""
    if (width, height) == (mask.width, mask.height):
        return mask
    ys = np.minimum(((np.arange(height) + 0.5) * mask.height / height).astype(np.intp), mask.height - 1)
    xs = np.minimum(((np.arange(width) + 0.5) * mask.width / width).astype(np.intp), mask.width - 1)
    return LabelMask(mask.classes[ys][:, xs])


def resize_pair(img: RgbImage, mask: LabelMask, side: int) -> tuple[RgbImage, LabelMask]:
    if side < 8:
        raise ValueError(f"side must be >= 8, got {side}")
    if (img.width, img.height) != (mask.width, mask.height):
        raise ShapeError(f"image {img.width}x{img.height} and mask {mask.width}x{mask.height} differ")
    return resize_image(img, side, side), resize_mask(mask, side, side)


# --- file I/O -----------------------------------------------------------------


def read_image(path: str | Path) -> RgbImage:
    with Image.open(path) as im:
        return RgbImage(np.asarray(im.convert("RGB")))


def write_image(img: RgbImage, path: str | Path) -> None:
    Image.fromarray(np.ascontiguousarray(img.pixels), mode="RGB").save(path, format="PNG")


def read_mask(path: str | Path, palette: Mapping[tuple[int, int, int], int] = DEFAULT_PALETTE) -> LabelMask:
    """Read a class-index PNG, or a color-coded RGB PNG through ``palette``."""
    with Image.open(path) as im:
        if im.mode in ("L", "P", "I", "I;16"):
            arr = np.asarray(im if im.mode != "P" else im.convert("L"))
            return LabelMask(arr.astype(np.uint8))
        return mask_from_color_png(RgbImage(np.asarray(im.convert("RGB"))), palette)


def write_mask(mask: LabelMask, path: str | Path) -> None:
    Image.fromarray(np.ascontiguousarray(mask.classes), mode="L").save(path, format="PNG")


def read_manifest(path: str | Path) -> list[dict]:
    """Newline-delimited JSON; relative paths are resolved against the manifest's folder."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        for key in ("image", "mask"):
            if key in rec and not Path(rec[key]).is_absolute():
                rec[key] = str(path.parent / rec[key])
        records.append(rec)
    return records


def write_manifest(records: Sequence[Mapping], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(dict(rec), sort_keys=True) + "\n")
