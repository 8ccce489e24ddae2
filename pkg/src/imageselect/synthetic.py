"""Catalog-style synthetic product images.

Scenes are described in normalised coordinates so one scene can be rendered
at any resolution; renders of the same scene at different sizes are natural
near-duplicates. Every render is a pure function of the scene and size.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .descriptor import resize_luma

WHITE = (255, 255, 255)


@dataclass(frozen=True)
class Shape:
    kind: str  # "rect", "ellipse" or "capsule"
    geom: tuple[float, ...]
    color: tuple[int, int, int]


@dataclass(frozen=True)
class Scene:
    shapes: tuple[Shape, ...]
    background: tuple[int, int, int] = WHITE
    texture_seed: int = 0
    texture_amp: float = 10.0
    shading: float = 0.15
    extras: dict = field(default_factory=dict, compare=False)

    def with_shapes(self, *more: Shape) -> "Scene":
        return replace(self, shapes=self.shapes + tuple(more))


def _mask(shape: Shape, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    g = shape.geom
    if shape.kind == "rect":
        x0, y0, x1, y1 = g
        return (xx >= x0) & (xx <= x1) & (yy >= y0) & (yy <= y1)
    if shape.kind == "ellipse":
        cx, cy, rx, ry = g
        return ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    if shape.kind == "capsule":
        x0, y0, x1, y1, r = g
        dx, dy = x1 - x0, y1 - y0
        t = np.clip(((xx - x0) * dx + (yy - y0) * dy) / (dx * dx + dy * dy), 0.0, 1.0)
        return (xx - (x0 + t * dx)) ** 2 + (yy - (y0 + t * dy)) ** 2 <= r * r
    raise ValueError(f"unknown shape kind {shape.kind!r}")


def _texture(seed: int, width: int, height: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    base = rng.normal(0.0, 1.0, size=(48, 48))
    # upsample a fixed-size field so texture is scale-consistent across renders
    return (resize_luma(base * 40 + 127.5, width, height) - 127.5) / 40


def render(scene: Scene, width: int, height: int) -> np.ndarray:
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    xx, yy = np.meshgrid(xs, ys)
    out = np.empty((height, width, 3), dtype=np.float64)
    out[...] = scene.background
    objmask = np.zeros((height, width), dtype=bool)
    for shape in scene.shapes:
        m = _mask(shape, xx, yy)
        out[m] = shape.color
        objmask |= m
    if scene.shading:
        out[objmask] *= (1.0 - scene.shading * (yy[objmask] - 0.5))[:, None]
    if scene.texture_amp:
        tex = _texture(scene.texture_seed, width, height) * scene.texture_amp
        out[objmask] += tex[objmask][:, None]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def random_color(rng: np.random.Generator, lo: int = 30, hi: int = 220) -> tuple[int, int, int]:
    return tuple(int(v) for v in rng.integers(lo, hi, size=3))


def random_product(seed: int) -> Scene:
    """A random object (one to three bodies plus details) on a plain backdrop."""
    rng = np.random.default_rng(seed)
    # near-white backdrop; tints stay clear of histogram bin edges
    background = WHITE if rng.random() < 0.7 else tuple(int(v) for v in 245 + rng.integers(0, 11, size=3))
    shapes = []
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(0.25, 0.75, size=2)
        bw, bh = rng.uniform(0.1, 0.3, size=2)
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        geom = (cx - bw, cy - bh, cx + bw, cy + bh) if kind == "rect" else (cx, cy, bw * 1.1, bh * 1.1)
        shapes.append(Shape(kind, geom, random_color(rng)))
        for _ in range(int(rng.integers(1, 4))):
            px, py = cx + rng.uniform(-bw, bw), cy + rng.uniform(-bh, bh)
            sx, sy = rng.uniform(0.03, 0.12, size=2)
            detail = ("rect", "ellipse", "capsule")[int(rng.integers(0, 3))]
            if detail == "rect":
                g = (px - sx, py - sy, px + sx, py + sy)
            elif detail == "ellipse":
                g = (px, py, sx, sy)
            else:
                ang = rng.uniform(0, np.pi)
                g = (px - sx * np.cos(ang), py - sx * np.sin(ang), px + sx * np.cos(ang), py + sx * np.sin(ang), sy / 3)
            shapes.append(Shape(detail, g, random_color(rng, 0, 256)))
    return Scene(tuple(shapes), background=background, texture_seed=seed, texture_amp=float(rng.uniform(6, 14)))


# Device-like views used by the type-classification and selection fixtures.
VIEW_LABELS = ("front", "back", "side", "left_facing", "multiview", "accessory")


def device_view(view: str, color=(40, 60, 150), seed: int = 0, jitter: float = 0.0) -> Scene:
    """A stylised device photographed from one of ``VIEW_LABELS``.

    ``jitter`` moves geometry by up to that fraction (per seed), which gives
    distinct-but-same-type images.
    """
    rng = np.random.default_rng(seed)
    dx, dy = rng.uniform(-jitter, jitter, size=2) if jitter else (0.0, 0.0)
    color = tuple(int(c) for c in color)
    dark = (20, 20, 24)
    light = tuple(min(255, c + 70) for c in color)
    if view == "front":
        shapes = (
            Shape("rect", (0.25 + dx, 0.12 + dy, 0.75 + dx, 0.88 + dy), color),
            Shape("rect", (0.29 + dx, 0.17 + dy, 0.71 + dx, 0.80 + dy), dark),
            Shape("ellipse", (0.5 + dx, 0.84 + dy, 0.025, 0.018), light),
        )
    elif view == "back":
        shapes = (
            Shape("rect", (0.25 + dx, 0.12 + dy, 0.75 + dx, 0.88 + dy), color),
            Shape("ellipse", (0.33 + dx, 0.2 + dy, 0.04, 0.03), dark),
            Shape("ellipse", (0.5 + dx, 0.5 + dy, 0.09, 0.07), light),
        )
    elif view == "side":
        shapes = (
            Shape("rect", (0.06 + dx, 0.40 + dy, 0.94 + dx, 0.60 + dy), color),
            Shape("rect", (0.3 + dx, 0.46 + dy, 0.36 + dx, 0.54 + dy), dark),
            Shape("rect", (0.6 + dx, 0.47 + dy, 0.64 + dx, 0.53 + dy), dark),
        )
    elif view == "left_facing":
        shapes = (
            Shape("rect", (0.35 + dx, 0.15 + dy, 0.62 + dx, 0.85 + dy), color),
            Shape("rect", (0.30 + dx, 0.18 + dy, 0.36 + dx, 0.82 + dy), light),
            Shape("rect", (0.39 + dx, 0.2 + dy, 0.58 + dx, 0.78 + dy), dark),
        )
    elif view == "multiview":
        shapes = (
            Shape("rect", (0.06 + dx, 0.25 + dy, 0.44 + dx, 0.75 + dy), color),
            Shape("rect", (0.09 + dx, 0.29 + dy, 0.41 + dx, 0.68 + dy), dark),
            Shape("rect", (0.56 + dx, 0.25 + dy, 0.94 + dx, 0.75 + dy), color),
            Shape("ellipse", (0.75 + dx, 0.5 + dy, 0.06, 0.05), light),
        )
    elif view == "accessory":
        shapes = (
            Shape("rect", (0.15 + dx, 0.55 + dy, 0.85 + dx, 0.85 + dy), light),
            Shape("capsule", (0.2 + dx, 0.45 + dy, 0.8 + dx, 0.15 + dy, 0.06), color),
            Shape("capsule", (0.72 + dx, 0.19 + dy, 0.8 + dx, 0.15 + dy, 0.04), dark),
        )
    else:
        raise ValueError(f"unknown view {view!r}; expected one of {VIEW_LABELS}")
    return Scene(shapes, texture_seed=seed, texture_amp=8.0)


def add_stylus(scene: Scene, color=(200, 30, 30)) -> Scene:
    """Overlay a long stylus across the object (a genuinely different picture)."""
    return scene.with_shapes(
        Shape("capsule", (0.12, 0.9, 0.88, 0.1, 0.035), color),
        Shape("capsule", (0.8, 0.19, 0.88, 0.1, 0.02), (230, 230, 230)),
    )


def recolor(scene: Scene, mapping: dict) -> Scene:
    """Swap shape colours (same product in another colourway)."""
    return replace(scene, shapes=tuple(replace(s, color=mapping.get(s.color, s.color)) for s in scene.shapes))


def view_training_set(labels=VIEW_LABELS, per_label: int = 8, size: int = 256, seed: int = 100):
    """Labelled (image, view) examples in assorted colours for training a type model."""
    out = []
    for k, label in enumerate(labels):
        for s in range(per_label):
            rng = np.random.default_rng(seed + 97 * k + s)
            out.append((render(device_view(label, random_color(rng), seed + s, jitter=0.03), size, size), label))
    return out
