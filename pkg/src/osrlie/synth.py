"""Labeled synthetic scenes: noisy planar terrain, volumetric trees, planar shells.

Ground points follow ``z = b0 + b1*x + b2*y + eps`` with Gaussian ``eps`` of
standard deviation ``roughness``.  Trees are uniform samples inside
ellipsoids floating above the terrain; human-made objects are uniform samples
on planar faces (a single roof plane or the top and walls of a prism).
Every nonground point sits strictly above the noiseless terrain plane.

Scenes are pure functions of their spec, so the same spec always produces the
same cloud.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .cloud import Label, PointCloud
from .errors import ConfigError, EmptyInput

SCENES_VERSION = 1

# intensity marks: (mean, std) per class, no physical meaning
_INTENSITY = {Label.GROUND: (45.0, 12.0), Label.TREE: (35.0, 10.0), Label.HUMAN_MADE: (60.0, 10.0)}


@dataclass(frozen=True)
class TreeSpec:
    center: tuple[float, float]
    crown_radius: float
    height_range: tuple[float, float]
    count: int

    def validate(self):
        lo, hi = self.height_range
        if self.crown_radius <= 0 or not 0 < lo < hi or self.count < 0:
            raise ConfigError(f"invalid tree spec {self}")


@dataclass(frozen=True)
class ObjectSpec:
    """A human-made surface shell.

    ``roof-plane``: one planar face over ``footprint`` at ``elevation`` above
    the local terrain, tilted by ``pitch`` (dz/dx, dz/dy relative to the
    terrain) about the footprint centroid.  ``box-shell``: the same top plus
    vertical walls along every footprint edge down to ``wall_base`` above the
    terrain.
    """

    kind: str
    footprint: tuple[tuple[float, float], ...]
    elevation: float
    count: int
    pitch: tuple[float, float] = (0.0, 0.0)
    wall_base: float = 1.0
    noise: float = 0.02

    def validate(self):
        if self.kind not in ("roof-plane", "box-shell"):
            raise ConfigError(f"unknown object kind {self.kind!r}")
        if len(self.footprint) < 3 or _polygon_area(np.asarray(self.footprint, float)) <= 0:
            raise ConfigError("object footprint must be a polygon with positive area")
        if self.elevation <= 0 or self.count < 0 or self.noise < 0:
            raise ConfigError(f"invalid object spec {self}")
        if self.kind == "box-shell" and not 0 < self.wall_base < self.elevation:
            raise ConfigError("box-shell wall_base must lie in (0, elevation)")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    extent: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax (ft)
    ground_density: float
    plane: tuple[float, float, float]
    roughness: float
    trees: tuple[TreeSpec, ...] = ()
    objects: tuple[ObjectSpec, ...] = ()
    name: Optional[str] = None

    def validate(self):
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("scene extent must have positive area")
        if not self.ground_density > 0:
            raise ConfigError("ground density must be positive")
        if not self.roughness >= 0:
            raise ConfigError("roughness must be nonnegative")
        for t in self.trees:
            t.validate()
        for o in self.objects:
            o.validate()

    @property
    def area(self) -> float:
        x0, x1, y0, y1 = self.extent
        return (x1 - x0) * (y1 - y0)

    @property
    def ground_count(self) -> int:
        return int(round(self.ground_density * self.area))

    def terrain(self, x, y):
        b0, b1, b2 = self.plane
        return b0 + b1 * np.asarray(x) + b2 * np.asarray(y)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "extent": list(self.extent),
            "ground_density": self.ground_density,
            "plane": list(self.plane),
            "roughness": self.roughness,
            "trees": [{"center": list(t.center), "crown_radius": t.crown_radius,
                       "height_range": list(t.height_range), "count": t.count} for t in self.trees],
            "objects": [{"kind": o.kind, "footprint": [list(p) for p in o.footprint],
                         "elevation": o.elevation, "count": o.count, "pitch": list(o.pitch),
                         "wall_base": o.wall_base, "noise": o.noise} for o in self.objects],
            **({"name": self.name} if self.name else {}),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            trees = tuple(TreeSpec(tuple(t["center"]), float(t["crown_radius"]),
                                   tuple(t["height_range"]), int(t["count"]))
                          for t in d.get("trees", ()))
            objects = tuple(ObjectSpec(o["kind"], tuple(tuple(p) for p in o["footprint"]),
                                       float(o["elevation"]), int(o["count"]),
                                       tuple(o.get("pitch", (0.0, 0.0))),
                                       float(o.get("wall_base", 1.0)),
                                       float(o.get("noise", 0.02)))
                            for o in d.get("objects", ()))
            spec = cls(int(d["seed"]), tuple(float(v) for v in d["extent"]),
                       float(d["ground_density"]), tuple(float(v) for v in d["plane"]),
                       float(d["roughness"]), trees, objects, d.get("name"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scene spec: {exc}") from exc
        if len(spec.extent) != 4 or len(spec.plane) != 3:
            raise ConfigError("extent needs 4 values and plane needs 3")
        spec.validate()
        return spec


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _in_polygon(px, py, poly: np.ndarray) -> np.ndarray:
    inside = np.zeros(px.shape, dtype=bool)
    xs, ys = poly[:, 0], poly[:, 1]
    for (xa, ya), (xb, yb) in zip(zip(xs, ys), zip(np.roll(xs, -1), np.roll(ys, -1))):
        crosses = (ya > py) != (yb > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (px < xint)
    return inside


def _uniform_in_polygon(rng, poly: np.ndarray, count: int) -> np.ndarray:
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    out = np.empty((0, 2))
    while out.shape[0] < count:
        cand = rng.uniform(lo, hi, size=(2 * count + 16, 2))
        out = np.vstack([out, cand[_in_polygon(cand[:, 0], cand[:, 1], poly)]])
    return out[:count]


def _sample_tree(rng, spec: SceneSpec, tree: TreeSpec) -> np.ndarray:
    lo, hi = tree.height_range
    semi = np.array([tree.crown_radius, tree.crown_radius, 0.5 * (hi - lo)])
    # uniform in the unit ball via direction * radius^(1/3)
    d = rng.standard_normal((tree.count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = rng.uniform(size=(tree.count, 1)) ** (1.0 / 3.0)
    pts = d * r * semi
    pts[:, 0] += tree.center[0]
    pts[:, 1] += tree.center[1]
    pts[:, 2] += spec.terrain(pts[:, 0], pts[:, 1]) + 0.5 * (lo + hi)
    return pts


def object_faces(spec: SceneSpec, obj: ObjectSpec):
    """Faces of ``obj`` as ``(kind, data, area)`` tuples.

    ``("top", (poly, cx, cy, pitch))`` or ``("wall", (a, b))``; heights are
    resolved against the terrain when sampling.  Raises ConfigError when the
    pitched top would dip to or below ``wall_base`` (or the terrain).
    """
    poly = np.asarray(obj.footprint, dtype=float)
    cx, cy = poly.mean(axis=0)
    px, py = obj.pitch
    # offsets are affine over the footprint, so the vertices bound them
    lowest = obj.elevation + np.min(px * (poly[:, 0] - cx) + py * (poly[:, 1] - cy))
    floor = obj.wall_base if obj.kind == "box-shell" else 0.0
    if lowest <= floor:
        raise ConfigError(f"pitched top of {obj.kind} dips to {lowest:.3g} ft above ground")
    faces = [("top", (poly, cx, cy, obj.pitch), _polygon_area(poly))]
    if obj.kind == "box-shell":
        for a, b in zip(poly, np.roll(poly, -1, axis=0)):
            length = float(np.hypot(*(b - a)))
            mid = obj.elevation + px * (0.5 * (a[0] + b[0]) - cx) + py * (0.5 * (a[1] + b[1]) - cy)
            faces.append(("wall", (a, b), length * (mid - obj.wall_base)))
    return faces


def _top_offset(obj: ObjectSpec, xy, cx, cy):
    px, py = obj.pitch
    return obj.elevation + px * (xy[:, 0] - cx) + py * (xy[:, 1] - cy)


def _sample_object(rng, spec: SceneSpec, obj: ObjectSpec) -> np.ndarray:
    faces = object_faces(spec, obj)
    areas = np.array([f[2] for f in faces])
    per_face = rng.multinomial(obj.count, areas / areas.sum())
    poly = np.asarray(obj.footprint, dtype=float)
    cx, cy = poly.mean(axis=0)
    chunks = []
    for (kind, data, _), m in zip(faces, per_face):
        if m == 0:
            continue
        if kind == "top":
            xy = _uniform_in_polygon(rng, data[0], m)
            z = spec.terrain(xy[:, 0], xy[:, 1]) + _top_offset(obj, xy, cx, cy)
        else:
            a, b = data
            t = rng.uniform(size=(m, 1))
            xy = a + t * (b - a)
            top = _top_offset(obj, xy, cx, cy)
            z = spec.terrain(xy[:, 0], xy[:, 1]) + obj.wall_base + rng.uniform(size=m) * (top - obj.wall_base)
        chunks.append(np.column_stack([xy, z]))
    pts = np.vstack(chunks) if chunks else np.empty((0, 3))
    if obj.noise > 0:
        pts = pts + rng.normal(0.0, obj.noise, size=pts.shape)
    return pts


def generate(spec: SceneSpec) -> PointCloud:
    """Sample the scene described by ``spec``.

    Records are shuffled so that row order carries no label information.
    """
    spec.validate()
    n_ground = spec.ground_count
    total = n_ground + sum(t.count for t in spec.trees) + sum(o.count for o in spec.objects)
    if total == 0:
        raise EmptyInput("scene spec produces no points")
    rng = np.random.default_rng(spec.seed)
    x0, x1, y0, y1 = spec.extent

    gx = rng.uniform(x0, x1, n_ground)
    gy = rng.uniform(y0, y1, n_ground)
    gz = spec.terrain(gx, gy) + rng.normal(0.0, spec.roughness, n_ground)
    parts = [np.column_stack([gx, gy, gz])]
    labels = [np.full(n_ground, Label.GROUND, dtype=np.int8)]
    for tree in spec.trees:
        parts.append(_sample_tree(rng, spec, tree))
        labels.append(np.full(tree.count, Label.TREE, dtype=np.int8))
    for obj in spec.objects:
        parts.append(_sample_object(rng, spec, obj))
        labels.append(np.full(obj.count, Label.HUMAN_MADE, dtype=np.int8))

    xyz = np.vstack(parts)
    truth = np.concatenate(labels)
    intensity = np.empty(total)
    for label, (mean, std) in _INTENSITY.items():
        sel = truth == label
        intensity[sel] = rng.normal(mean, std, sel.sum())
    np.clip(intensity, 0.0, None, out=intensity)

    order = rng.permutation(total)
    return PointCloud(xyz[order], intensity=intensity[order], truth=truth[order])


# default fixtures ----------------------------------------------------------------


def _rect(cx, cy, w, d, angle=0.0):
    c, s = math.cos(angle), math.sin(angle)
    corners = [(-w / 2, -d / 2), (w / 2, -d / 2), (w / 2, d / 2), (-w / 2, d / 2)]
    return tuple((cx + c * u - s * v, cy + s * u + c * v) for u, v in corners)


def scatter_layout(seed, extent, n_trees, n_roofs, tree_points=150, roof_points=600,
                   roof_size=(50.0, 40.0), gap=8.0):
    """Random non-overlapping placement of compact crowns and large roofs.

    Crowns have horizontal radius 3-4.5 ft, vertical half-height 4-6 ft and
    bottoms 14-20 ft above the terrain; roofs sit 6.6-13 ft up and every third
    one is pitched by at most 0.05, so no roof point is below 5 ft.  Items keep ``gap`` ft of clearance between footprints.
    """
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = extent
    roof_radius = 0.5 * math.hypot(*roof_size)
    placed, trees, objects = [], [], []
    for k in range(n_roofs + n_trees):
        is_roof = k < n_roofs
        radius = roof_radius if is_roof else rng.uniform(3.0, 4.5)
        if 2 * radius >= min(x1 - x0, y1 - y0):
            raise ConfigError("scene extent too small for the requested layout")
        for _ in range(10_000):
            cx, cy = rng.uniform(x0 + radius, x1 - radius), rng.uniform(y0 + radius, y1 - radius)
            if all(math.hypot(cx - px, cy - py) >= radius + pr + gap for px, py, pr in placed):
                break
        else:
            raise ConfigError("could not place all trees and roofs without overlap")
        placed.append((cx, cy, radius))
        if is_roof:
            fp = _rect(cx, cy, roof_size[0], roof_size[1], rng.uniform(0.0, math.pi))
            elev = rng.uniform(6.6, 13.0)
            pitch = tuple(rng.uniform(-0.05, 0.05, 2)) if k % 3 == 2 else (0.0, 0.0)
            objects.append(ObjectSpec("roof-plane", fp, elev, roof_points, pitch=pitch))
        else:
            lo = rng.uniform(14.0, 20.0)
            half = rng.uniform(4.0, 6.0)
            trees.append(TreeSpec((cx, cy), radius, (lo, min(lo + 2 * half, 30.0)), tree_points))
    return tuple(trees), tuple(objects)


def random_scene(seed, extent, ground_density, plane, roughness, n_trees, n_roofs,
                 layout_seed=None, **layout) -> SceneSpec:
    trees, objects = scatter_layout(seed if layout_seed is None else layout_seed,
                                    extent, n_trees, n_roofs, **layout)
    return SceneSpec(seed, tuple(extent), ground_density, tuple(plane), roughness, trees, objects)


# layout seeds of the default fixtures
_FIXTURE_LAYOUTS = {"flat": 0, "inclined": 0, "lakeside-gradient": 0}


def default_scenes() -> dict[str, SceneSpec]:
    """Named fixture scenes (version ``SCENES_VERSION``).

    The labeled scenes hold 14000 ground and 6000 nonground points (30%),
    with nonground returns 5-30 ft above the terrain.
    """
    box = (-125.0, 125.0, -100.0, 100.0)
    density = 0.28  # 14000 ground points over 250 x 200 ft

    def scene(name, seed, plane, roughness, empty=False):
        trees, objects = ((), ()) if empty else scatter_layout(_FIXTURE_LAYOUTS[name], box, 20, 5)
        return SceneSpec(seed, box, density, plane, roughness, trees, objects, name)

    return {
        "flat": scene("flat", 3, (250.0, 0.0, 0.0), 0.5),
        "inclined": scene("inclined", 7, (600.0, 0.06, -0.04), 1.0),
        "lakeside-gradient": scene("lakeside-gradient", 11, (520.0, -0.12, 0.08), 1.0),
        "flat-empty": scene("flat-empty", 5, (250.0, 0.0, 0.0), 0.5, empty=True),
    }
