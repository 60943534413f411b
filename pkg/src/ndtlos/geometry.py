"""Box-city scene model and image-method specular tracer.

World frame: x east, y north, z up, meters.  Angles reported for a path are
the arrival direction at the receiving end (the base station in the uplink),
expressed in the station's local frame: azimuth is measured clockwise from the
array boresight bearing, elevation is positive above the horizon.
"""
from __future__ import annotations

import functools
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError

SPEED_OF_LIGHT = 299_792_458.0
SCENE_FORMAT = "ndtlos-scene"
SCENE_VERSION = 1

# slab-test tolerance, in units of the segment parameter t
_SEG_EPS = 1e-9
_SIDE_EPS = 1e-9


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    def __post_init__(self):
        if len(self.lo) != 3 or len(self.hi) != 3:
            raise InvalidInputError("box corners must be 3-vectors")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise InvalidInputError(f"box {self.lo}..{self.hi} has non-positive extent")


@dataclass(frozen=True)
class Scene:
    """Immutable city description.

    ``extent`` is the (xmin, ymin, xmax, ymax) rectangle used for UE grids.
    """

    buildings: tuple[Box, ...]
    bs_position: tuple[float, float, float]
    extent: tuple[float, float, float, float]
    ground_z: float = 0.0
    bs_bearing: float = 0.0
    reflection_coeff: float = 0.6
    max_bounces: int = 2

    def __post_init__(self):
        object.__setattr__(self, "buildings", tuple(self.buildings))
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if not 0.0 < self.reflection_coeff <= 1.0:
            raise InvalidInputError("reflection_coeff must lie in (0, 1]")
        if self.max_bounces < 0:
            raise InvalidInputError("max_bounces must be >= 0")
        if self.bs_position[2] <= self.ground_z:
            raise InvalidInputError("base station must be above ground")
        x0, y0, x1, y1 = self.extent
        if x1 <= x0 or y1 <= y0:
            raise InvalidInputError("scene extent must have positive area")

    @functools.cached_property
    def box_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.buildings:
            return np.zeros((0, 3)), np.zeros((0, 3))
        lo = np.array([b.lo for b in self.buildings], dtype=float)
        hi = np.array([b.hi for b in self.buildings], dtype=float)
        return lo, hi

    @functools.cached_property
    def reflectors(self) -> tuple["_Face", ...]:
        faces = [_Face(2, self.ground_z, 1.0, (-math.inf, math.inf), (-math.inf, math.inf))]
        for b in self.buildings:
            for axis in range(3):
                u, v = _other_axes(axis)
                bu, bv = (b.lo[u], b.hi[u]), (b.lo[v], b.hi[v])
                if axis != 2 or b.lo[2] > self.ground_z:
                    faces.append(_Face(axis, b.lo[axis], -1.0, bu, bv))
                faces.append(_Face(axis, b.hi[axis], 1.0, bu, bv))
        return tuple(faces)


@dataclass(frozen=True)
class _Face:
    axis: int
    coord: float
    sign: float  # outward normal direction along ``axis``
    bounds_u: tuple[float, float]
    bounds_v: tuple[float, float]


def _other_axes(axis):
    return [(1, 2), (0, 2), (0, 1)][axis]


@dataclass(frozen=True)
class PathComponent:
    gain: float
    delay: float
    azimuth: float
    elevation: float
    bounces: int
    # reflection points, tx side first; kept for validation, not persisted
    vertices: tuple = field(default=(), compare=False, repr=False)
    faces: tuple = field(default=(), compare=False, repr=False)


@dataclass
class MultipathSet:
    """Paths for one UE.  ``estimated`` sets come from channel estimates and
    carry no LoS knowledge (``is_los`` False, bounce counts unset at 0)."""

    paths: list[PathComponent]
    is_los: bool
    ue_position: tuple[float, float, float]
    estimated: bool = False

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=float)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def azimuths(self) -> np.ndarray:
        return np.array([p.azimuth for p in self.paths], dtype=float)

    @property
    def elevations(self) -> np.ndarray:
        return np.array([p.elevation for p in self.paths], dtype=float)

    def as_array(self) -> np.ndarray:
        """Rows of (gain, delay, azimuth, elevation, bounces)."""
        if not self.paths:
            return np.zeros((0, 5))
        return np.array(
            [[p.gain, p.delay, p.azimuth, p.elevation, p.bounces] for p in self.paths],
            dtype=float,
        )

    @classmethod
    def from_array(cls, rows, is_los, ue_position) -> "MultipathSet":
        rows = np.asarray(rows, dtype=float).reshape(-1, 5)
        paths = [PathComponent(r[0], r[1], r[2], r[3], int(round(r[4]))) for r in rows]
        return cls(paths, bool(is_los), tuple(float(v) for v in ue_position))


# --------------------------------------------------------------------------
# segment / box intersection
# --------------------------------------------------------------------------

def _blocked(origins, ends, lo, hi):
    """Boolean (S,) mask: segment s passes through the open interior of any box."""
    origins = np.atleast_2d(origins)
    ends = np.atleast_2d(ends)
    if lo.shape[0] == 0:
        return np.zeros(origins.shape[0], dtype=bool)
    o = origins[:, None, :]
    d = (ends - origins)[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo[None] - o) / d
        t2 = (hi[None] - o) / d
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    flat = d == 0.0
    inside = (o > lo[None]) & (o < hi[None])
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(flat, np.where(inside, np.inf, -np.inf), tmax)
    enter = np.maximum(tmin.max(axis=2), 0.0)
    leave = np.minimum(tmax.min(axis=2), 1.0)
    return ((leave - enter) > _SEG_EPS).any(axis=1)


def los_test(scene: Scene, tx: Sequence[float], rx: Sequence[float]) -> bool:
    """True when the open segment tx->rx crosses no building interior."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if np.array_equal(tx, rx):
        raise InvalidInputError("degenerate segment: tx == rx")
    if tx[2] < scene.ground_z or rx[2] < scene.ground_z:
        raise InvalidInputError("endpoints must be above ground")
    lo, hi = scene.box_arrays
    return not bool(_blocked(tx[None], rx[None], lo, hi)[0])


# --------------------------------------------------------------------------
# image method
# --------------------------------------------------------------------------

def _mirror(points, face):
    out = np.array(points, dtype=float, copy=True)
    out[..., face.axis] = 2.0 * face.coord - out[..., face.axis]
    return out


@functools.lru_cache(maxsize=8)
def _image_table(scene: Scene, rx: tuple[float, float, float], order: int):
    """Face index sequences of length ``order`` and the matching receiver images.

    Returns (seq (S, order) int, images (S, order, 3)) where images[:, i] is the
    point the segment leaving reflection i aims at.
    """
    faces = scene.reflectors
    seqs = [s for s in itertools.product(range(len(faces)), repeat=order)
            if all(a != b for a, b in zip(s, s[1:]))]
    if not seqs:
        return np.zeros((0, order), dtype=int), np.zeros((0, order, 3))
    seqs = np.array(seqs, dtype=int)
    rxv = np.asarray(rx, dtype=float)
    images = np.zeros((len(seqs), order, 3))
    # images[:, order-1] = mirror(rx, f_last); images[:, i-1] = mirror(images[:, i], f_i)
    axes = np.array([f.axis for f in faces])
    coords = np.array([f.coord for f in faces])
    cur = np.broadcast_to(rxv, (len(seqs), 3)).copy()
    for i in range(order - 1, -1, -1):
        f = seqs[:, i]
        nxt = cur.copy()
        rows = np.arange(len(seqs))
        nxt[rows, axes[f]] = 2.0 * coords[f] - cur[rows, axes[f]]
        images[:, i] = nxt
        cur = nxt
    return seqs, images


def _face_arrays(scene: Scene):
    faces = scene.reflectors
    axes = np.array([f.axis for f in faces])
    coords = np.array([f.coord for f in faces])
    signs = np.array([f.sign for f in faces])
    bu = np.array([f.bounds_u for f in faces])
    bv = np.array([f.bounds_v for f in faces])
    uax = np.array([_other_axes(f.axis)[0] for f in faces])
    vax = np.array([_other_axes(f.axis)[1] for f in faces])
    return axes, coords, signs, bu, bv, uax, vax


def _reflected_paths(scene: Scene, tx: np.ndarray, rx: np.ndarray, order: int):
    """All valid specular paths with exactly ``order`` reflections.

    Yields (vertices (S, order, 3), seq (S, order), unfolded length (S,)).
    """
    seqs, images = _image_table(scene, tuple(rx.tolist()), order)
    if len(seqs) == 0:
        return np.zeros((0, order, 3)), seqs, np.zeros(0)
    axes, coords, signs, bu, bv, uax, vax = _face_arrays(scene)
    S = len(seqs)
    rows = np.arange(S)
    ok = np.ones(S, dtype=bool)
    verts = np.zeros((S, order, 3))
    prev = np.broadcast_to(tx, (S, 3)).copy()
    for i in range(order):
        f = seqs[:, i]
        a = axes[f]
        target = images[:, i]
        side = signs[f] * (prev[rows, a] - coords[f])
        denom = target[rows, a] - prev[rows, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (coords[f] - prev[rows, a]) / denom
        ok &= (side > _SIDE_EPS) & (denom != 0.0) & (t > 0.0) & (t < 1.0)
        t = np.where(ok, t, 0.0)
        p = prev + t[:, None] * (target - prev)
        p[rows, a] = coords[f]
        pu = p[rows, uax[f]]
        pv = p[rows, vax[f]]
        ok &= (pu >= bu[f, 0]) & (pu <= bu[f, 1]) & (pv >= bv[f, 0]) & (pv <= bv[f, 1])
        verts[:, i] = p
        prev = p
    lo, hi = scene.box_arrays
    idx = np.flatnonzero(ok)
    if idx.size and lo.shape[0]:
        chain = np.concatenate(
            [np.broadcast_to(tx, (idx.size, 1, 3)), verts[idx],
             np.broadcast_to(rx, (idx.size, 1, 3))], axis=1)
        clear = np.ones(idx.size, dtype=bool)
        for k in range(order + 1):
            clear &= ~_blocked(chain[:, k], chain[:, k + 1], lo, hi)
        idx = idx[clear]
    verts = verts[idx]
    length = np.linalg.norm(images[idx, 0] - tx, axis=1)
    return verts, seqs[idx], length


def _arrival_angles(scene: Scene, rx: np.ndarray, towards: np.ndarray):
    v = np.atleast_2d(towards) - rx
    world_az = np.arctan2(v[:, 0], v[:, 1])
    az = world_az - scene.bs_bearing
    az = np.mod(az + np.pi, 2 * np.pi) - np.pi
    az = np.where(az <= -np.pi, az + 2 * np.pi, az)
    el = np.arctan2(v[:, 2], np.hypot(v[:, 0], v[:, 1]))
    return az, el


def trace_paths(scene: Scene, tx, rx, fc: float = 28e9) -> MultipathSet:
    """Specular multipath between ``tx`` (UE) and ``rx`` (base station side).

    Direct path plus every unobstructed reflection sequence up to
    ``scene.max_bounces`` over building faces and the ground plane, sorted by
    delay.  ``fc`` sets the free-space wavelength used in the path gain.
    """
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    los = los_test(scene, tx, rx)
    lam = SPEED_OF_LIGHT / fc
    faces = scene.reflectors
    paths: list[PathComponent] = []
    if los:
        d = float(np.linalg.norm(tx - rx))
        az, el = _arrival_angles(scene, rx, tx)
        paths.append(PathComponent(lam / (4 * math.pi * d), d / SPEED_OF_LIGHT,
                                   float(az[0]), float(el[0]), 0))
    for order in range(1, scene.max_bounces + 1):
        verts, seqs, length = _reflected_paths(scene, tx, rx, order)
        if len(length) == 0:
            continue
        az, el = _arrival_angles(scene, rx, verts[:, -1])
        gain = lam / (4 * math.pi * length) * scene.reflection_coeff ** order
        for k in range(len(length)):
            paths.append(PathComponent(
                float(gain[k]), float(length[k] / SPEED_OF_LIGHT), float(az[k]), float(el[k]),
                order, tuple(map(tuple, verts[k])), tuple(faces[j] for j in seqs[k])))
    paths.sort(key=lambda p: (p.delay, p.bounces))
    return MultipathSet(paths, los, tuple(tx.tolist()))


def ue_grid(scene: Scene, cell_size: float, ue_height: float = 1.5) -> list[tuple[float, float, float]]:
    """Cell centers over the scene extent, row-major (x fastest), outside buildings."""
    if cell_size <= 0:
        raise InvalidInputError("cell_size must be positive")
    x0, y0, x1, y1 = scene.extent
    nx = int(math.floor((x1 - x0) / cell_size + 1e-9))
    ny = int(math.floor((y1 - y0) / cell_size + 1e-9))
    z = scene.ground_z + ue_height
    pts = []
    for j in range(ny):
        y = y0 + (j + 0.5) * cell_size
        for i in range(nx):
            x = x0 + (i + 0.5) * cell_size
            if not _inside_building(scene, x, y, z):
                pts.append((x, y, z))
    return pts


def _inside_building(scene, x, y, z):
    for b in scene.buildings:
        if b.lo[0] <= x <= b.hi[0] and b.lo[1] <= y <= b.hi[1] and b.lo[2] <= z <= b.hi[2]:
            return True
    return False


# --------------------------------------------------------------------------
# scene files
# --------------------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    return {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "extent": list(scene.extent),
        "ground_z": scene.ground_z,
        "base_station": {
            "position": list(scene.bs_position),
            "bearing_deg": math.degrees(scene.bs_bearing),
        },
        "material": {"reflection_coeff": scene.reflection_coeff},
        "max_bounces": scene.max_bounces,
        "buildings": [{"min": list(b.lo), "max": list(b.hi)} for b in scene.buildings],
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("format") != SCENE_FORMAT:
        raise ConfigError(f"expected format {SCENE_FORMAT!r}", "format")
    if doc.get("version") != SCENE_VERSION:
        raise ConfigError(f"unsupported scene version {doc.get('version')!r}", "version")
    try:
        bs = doc["base_station"]
        buildings = tuple(Box(tuple(map(float, b["min"])), tuple(map(float, b["max"])))
                          for b in doc.get("buildings", []))
        return Scene(
            buildings=buildings,
            bs_position=tuple(map(float, bs["position"])),
            extent=tuple(map(float, doc["extent"])),
            ground_z=float(doc.get("ground_z", 0.0)),
            bs_bearing=math.radians(float(bs.get("bearing_deg", 0.0))),
            reflection_coeff=float(doc.get("material", {}).get("reflection_coeff", 0.6)),
            max_bounces=int(doc.get("max_bounces", 2)),
        )
    except KeyError as exc:
        raise ConfigError("missing required key", str(exc.args[0])) from exc
    except InvalidInputError as exc:
        raise ConfigError(str(exc), "buildings") from exc


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2) + "\n")


def load_scene(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene file: {exc}", str(path)) from exc
    return scene_from_dict(doc)


def scene_hash(scene: Scene) -> str:
    blob = json.dumps(scene_to_dict(scene), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def toy_city(seed: int = 0, blocks: int = 3, block_size: float = 30.0,
             street: float = 14.0, heights: tuple[float, float] = (6.0, 18.0),
             bs_height: float = 30.0, bs_site: str = "corner") -> Scene:
    """Seeded Manhattan-style grid of boxes with a rooftop base station.

    ``bs_site="corner"`` mounts a sector mast on the north-west building facing
    south-east (bearing 135 deg), so every UE lies in front of the array;
    ``"centre"`` uses the building nearest the middle of the grid.
    """
    rng = np.random.default_rng(seed)
    pitch = block_size + street
    size = blocks * pitch
    buildings = []
    for i in range(blocks):
        for j in range(blocks):
            x0 = i * pitch + street / 2
            y0 = j * pitch + street / 2
            # each block holds one or two buildings with random setbacks
            if rng.random() < 0.5:
                sx = rng.uniform(0, 6, 2)
                sy = rng.uniform(0, 6, 2)
                h = rng.uniform(*heights)
                buildings.append(Box((x0 + sx[0], y0 + sy[0], 0.0),
                                     (x0 + block_size - sx[1], y0 + block_size - sy[1], h)))
            else:
                split = rng.uniform(0.35, 0.65) * block_size
                for a, b in ((0.0, split - 2.0), (split + 2.0, block_size)):
                    h = rng.uniform(*heights)
                    buildings.append(Box((x0 + a, y0 + rng.uniform(0, 5), 0.0),
                                         (x0 + b, y0 + block_size - rng.uniform(0, 5), h)))
    if bs_site == "centre":
        dist = [np.hypot((b.lo[0] + b.hi[0]) / 2 - size / 2, (b.lo[1] + b.hi[1]) / 2 - size / 2)
                for b in buildings]
        host = buildings[int(np.argmin(dist))]
        xy = ((host.lo[0] + host.hi[0]) / 2, (host.lo[1] + host.hi[1]) / 2)
    elif bs_site == "corner":
        dist = [np.hypot(b.lo[0], size - b.hi[1]) for b in buildings]
        host = buildings[int(np.argmin(dist))]
        xy = (host.lo[0] + 1.0, host.hi[1] - 1.0)
    else:
        raise InvalidInputError(f"unknown bs_site {bs_site!r}")
    bs = (xy[0], xy[1], max(bs_height, host.hi[2] + 1.0))
    return Scene(buildings=tuple(buildings), bs_position=bs, extent=(0.0, 0.0, size, size),
                 ground_z=0.0, bs_bearing=math.radians(135.0))
