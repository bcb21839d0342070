"""Synthetic street scenes: rasterised images plus matching geometric paths.

The base station and camera share the origin.  The antenna array lies along
the x axis and the camera looks down +y, so a point ``(x, y)`` appears at
image column ``cx + f * x / y`` and arrives at the array from azimuth
``atan2(x, y)``.  The beam label is therefore a function of the user's
column alone.

The scene is at night.  Street lamps light the user vehicle with a single
hue that depends on its bearing, so the colour of the only saturated object
in the frame encodes the beam.  Global average pooling throws away where an
object sits in the frame; the hue survives it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .beamforming import Codebook, optimal_beam
from .channel import (
    MMWAVE,
    SPEED_OF_LIGHT,
    SUB6,
    ChannelConfig,
    ChannelPath,
    FrequencyChannel,
    generate_channel,
)

ABSENT, UNBLOCKED, BLOCKED = -1, 0, 1
LINK_STATUSES = (ABSENT, UNBLOCKED, BLOCKED)

BLOCKAGE_LOSS_DB = 30.0
REFLECTION_GAIN = 0.1

# night palette: only the lamp-lit user carries saturated colour
SKY = np.array([12.0, 14.0, 30.0])
FACADE = np.array([40.0, 34.0, 32.0])
ROAD = np.array([26.0, 26.0, 30.0])
BLOCKER_COLOR = np.array([70.0, 72.0, 80.0])


@dataclass(frozen=True)
class SceneGeometry:
    """Fixed camera / street layout shared by every scene."""

    height: int = 64
    width: int = 64
    focal_px: float = 64.0
    horizon_row: float = 24.0
    camera_height: float = 2.5
    facade_rows: int = 8
    street_x: tuple = (-1.8, 1.8)
    user_lane_y: tuple = (8.0, 10.0)
    blocker_lane_y: tuple = (4.0, 6.0)
    blocker_x: tuple = (-6.0, 6.0)
    user_size: tuple = (6.0, 2.5)  # length along the street, height (m)
    blocker_size: tuple = (5.0, 4.0)
    wall_x: float = 25.0
    mmw_carrier: float = 28e9
    sub6_carrier: float = 3.5e9
    # pixel clearance between user and blocker footprints in sampled scenes
    margin_px: float = 1.5

    @property
    def center_col(self) -> float:
        return self.width / 2.0

    def column(self, x: float, y: float) -> float:
        return self.center_col + self.focal_px * x / y

    def row(self, height_above_ground: float, y: float) -> float:
        return self.horizon_row + self.focal_px * (self.camera_height - height_above_ground) / y

    @property
    def sin_range(self) -> tuple:
        """sin(bearing) range spanned by user centres on the street."""
        lo, hi = self.street_x
        y0 = self.user_lane_y[0]
        return (lo / math.hypot(lo, y0), hi / math.hypot(hi, y0))


DEFAULT_GEOMETRY = SceneGeometry()


@dataclass(frozen=True)
class SceneSpec:
    user_present: bool
    user_x: float = 0.0
    user_y: float = 12.0
    blocker_present: bool = False
    blocker_x: float = 0.0
    blocker_y: float = 6.0
    appearance_seed: int = 0

    def without_user(self) -> "SceneSpec":
        return replace(self, user_present=False)


def _check_spec(spec: SceneSpec, geom: SceneGeometry) -> None:
    if spec.user_present and not (spec.user_y > 0 and abs(spec.user_x) <= geom.wall_x):
        raise ValueError("user must stand in front of the array, between the walls")
    if spec.blocker_present and not spec.blocker_y > 0:
        raise ValueError("blocker must be in front of the camera")


# ---------------------------------------------------------------- rendering


def lamp_tint(x: float, y: float, geom: SceneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """RGB tint in [0, 1] of the street light over ``(x, y)``; hue tracks sin(bearing)."""
    s = x / math.hypot(x, y)
    lo, hi = geom.sin_range
    hue = (5.0 / 3.0) * math.pi * (s - lo) / (hi - lo)
    phases = np.array([0.0, 2.0, 4.0]) * math.pi / 3.0
    return 0.5 + 0.5 * np.cos(hue - phases)


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel interval ``[i, i+1)`` inside ``[lo, hi]``."""
    edges = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(edges + 1.0, hi) - np.maximum(edges, lo), 0.0, 1.0)


def _object_box(x: float, y: float, size: tuple, geom: SceneGeometry):
    w, h = size
    half = geom.focal_px * w / (2.0 * y)
    c = geom.column(x, y)
    return c - half, c + half, geom.row(h, y), geom.row(0.0, y)


def _object_coverage(x, y, size, geom):
    left, right, top, bottom = _object_box(x, y, size, geom)
    return np.outer(_coverage(top, bottom, geom.height), _coverage(left, right, geom.width))


def user_color(spec: SceneSpec) -> float:
    """Brightness jitter in [0.9, 1.0] drawn from the appearance seed."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.appearance_seed, 7])))
    return float(0.9 + 0.1 * rng.random())


def background(geom: SceneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    rows = np.arange(geom.height)[:, None, None]
    img = np.where(rows < geom.horizon_row - geom.facade_rows, SKY,
                   np.where(rows < geom.horizon_row, FACADE, ROAD))
    return np.broadcast_to(img, (geom.height, geom.width, 3)).astype(np.float64)


def _layers(spec: SceneSpec, geom: SceneGeometry):
    """(coverage, colour) pairs drawn back to front."""
    layers = []
    if spec.user_present:
        cov = _object_coverage(spec.user_x, spec.user_y, geom.user_size, geom)
        color = 255.0 * user_color(spec) * lamp_tint(spec.user_x, spec.user_y, geom)
        layers.append((spec.user_y, cov, color))
    if spec.blocker_present:
        cov = _object_coverage(spec.blocker_x, spec.blocker_y, geom.blocker_size, geom)
        layers.append((spec.blocker_y, cov, BLOCKER_COLOR))
    layers.sort(key=lambda l: -l[0])
    return [(cov, color) for _, cov, color in layers]


def render_scene(spec: SceneSpec, geom: SceneGeometry = DEFAULT_GEOMETRY) -> np.ndarray:
    """Rasterise a scene to an ``H x W x 3`` uint8 image (area-weighted edges)."""
    _check_spec(spec, geom)
    img = background(geom)
    for cov, color in _layers(spec, geom):
        c = cov[:, :, None]
        img = c * color + (1.0 - c) * img
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def visible_user_pixels(spec: SceneSpec, geom: SceneGeometry = DEFAULT_GEOMETRY) -> int:
    """Pixels where some fraction of the user survives occlusion."""
    if not spec.user_present:
        return 0
    cov = _object_coverage(spec.user_x, spec.user_y, geom.user_size, geom)
    if spec.blocker_present and spec.blocker_y < spec.user_y:
        cov = cov * (1.0 - _object_coverage(spec.blocker_x, spec.blocker_y, geom.blocker_size, geom))
    return int(np.count_nonzero(cov > 0))


# ---------------------------------------------------------------- geometry -> paths


def occludes(spec: SceneSpec, geom: SceneGeometry = DEFAULT_GEOMETRY) -> bool:
    """Whether the blocker cuts the line of sight from the array to the user."""
    if not (spec.user_present and spec.blocker_present and spec.blocker_y < spec.user_y):
        return False
    half = geom.blocker_size[0] / 2.0
    t = spec.user_x / spec.user_y
    return (spec.blocker_x - half) / spec.blocker_y <= t <= (spec.blocker_x + half) / spec.blocker_y


def link_status(spec: SceneSpec, geom: SceneGeometry = DEFAULT_GEOMETRY) -> int:
    if not spec.user_present:
        return ABSENT
    return BLOCKED if occludes(spec, geom) else UNBLOCKED


def _path(x: float, y: float, carrier: float, scale: float) -> ChannelPath:
    dist = math.hypot(x, y)
    wavelength = SPEED_OF_LIGHT / carrier
    amp = scale * wavelength / (4.0 * math.pi * dist)
    phase = -2.0 * math.pi * ((dist / wavelength) % 1.0)
    return ChannelPath(amp * complex(math.cos(phase), math.sin(phase)), dist / SPEED_OF_LIGHT, math.atan2(x, y))


def scene_to_paths(spec: SceneSpec, band: str, geom: SceneGeometry = DEFAULT_GEOMETRY) -> List[ChannelPath]:
    """LOS path plus two side-wall reflections (image-source method)."""
    _check_spec(spec, geom)
    if not spec.user_present:
        return []
    carrier = geom.mmw_carrier if band == MMWAVE else geom.sub6_carrier
    los_scale = 10.0 ** (-BLOCKAGE_LOSS_DB / 20.0) if occludes(spec, geom) else 1.0
    x, y = spec.user_x, spec.user_y
    paths = [_path(x, y, carrier, los_scale)]
    for wall in (geom.wall_x, -geom.wall_x):
        paths.append(_path(2.0 * wall - x, y, carrier, REFLECTION_GAIN))
    return paths


def scene_channel(spec: SceneSpec, config: ChannelConfig, geom: SceneGeometry = DEFAULT_GEOMETRY) -> FrequencyChannel:
    paths = scene_to_paths(spec, config.band, geom)
    if not paths:
        return FrequencyChannel.zeros(config)
    return generate_channel(paths, config)


# ---------------------------------------------------------------- labelling


@dataclass
class LabeledSample:
    image: np.ndarray
    mmw_channel: FrequencyChannel
    sub6_channel: FrequencyChannel
    beam_label: Optional[int]
    link_status: int
    spec: Optional[SceneSpec] = None

    def __post_init__(self):
        if self.link_status not in LINK_STATUSES:
            raise ValueError(f"invalid link status {self.link_status}")
        if (self.beam_label is None) != (self.link_status == ABSENT):
            raise ValueError("beam label must be present exactly when the user is")

    def one_hot(self, num_beams: int) -> np.ndarray:
        t = np.zeros(num_beams)
        if self.beam_label is not None:
            t[self.beam_label - 1] = 1.0
        return t


def label_sample(
    spec: SceneSpec,
    codebook: Codebook,
    mmw_config: ChannelConfig,
    sub6_config: ChannelConfig,
    geom: SceneGeometry = DEFAULT_GEOMETRY,
) -> LabeledSample:
    status = link_status(spec, geom)
    mmw = scene_channel(spec, mmw_config, geom)
    sub6 = scene_channel(spec, sub6_config, geom)
    beam = None if status == ABSENT else optimal_beam(mmw, codebook)
    return LabeledSample(render_scene(spec, geom), mmw, sub6, beam, status, spec)


# ---------------------------------------------------------------- scene sampling


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _place_blocker(rng, geom: SceneGeometry, user_x, user_y, cover: bool):
    """Blocker that either fully hides the user or stays clear of it (in tan-space)."""
    yb = rng.uniform(*geom.blocker_lane_y)
    hb = geom.blocker_size[0] / (2.0 * yb)
    if user_x is None:
        return rng.uniform(*geom.blocker_x), yb
    tu = user_x / user_y
    hu = geom.user_size[0] / (2.0 * user_y) + geom.margin_px / geom.focal_px
    if cover:
        return (tu + rng.uniform(-1.0, 1.0) * (hb - hu)) * yb, yb
    lo, hi = geom.blocker_x
    for _ in range(1000):
        xb = rng.uniform(lo, hi)
        if abs(xb / yb - tu) >= hb + hu:
            return xb, yb
    return None


def sample_scene(scenario: str, seed: int, index: int, geom: SceneGeometry = DEFAULT_GEOMETRY) -> SceneSpec:
    """Scene ``index`` of a seeded dataset; depends only on (scenario, seed, index)."""
    rng = _sample_rng(seed, index)
    appearance = int(rng.integers(0, 2 ** 31))
    ux = rng.uniform(*geom.street_x)
    uy = rng.uniform(*geom.user_lane_y)
    if scenario == "beam":
        return SceneSpec(True, ux, uy, appearance_seed=appearance)
    if scenario != "blockage":
        raise ValueError(f"unknown scenario {scenario!r}")
    status = int(rng.integers(-1, 2))
    if status == BLOCKED:
        bx, by = _place_blocker(rng, geom, ux, uy, cover=True)
        return SceneSpec(True, ux, uy, True, bx, by, appearance)
    with_blocker = rng.random() < 0.5
    if status == ABSENT:
        if with_blocker:
            bx, by = _place_blocker(rng, geom, None, None, cover=False)
            return SceneSpec(False, blocker_present=True, blocker_x=bx, blocker_y=by, appearance_seed=appearance)
        return SceneSpec(False, appearance_seed=appearance)
    placed = _place_blocker(rng, geom, ux, uy, cover=False) if with_blocker else None
    if placed is None:
        return SceneSpec(True, ux, uy, appearance_seed=appearance)
    return SceneSpec(True, ux, uy, True, placed[0], placed[1], appearance)
