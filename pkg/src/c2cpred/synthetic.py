"""Synthetic co-registered (reference, scan) cloud pairs with planted errors.

A scene is a set of surface primitives (planes, boxes, vertical cylinders,
thin rods) sampled uniformly by area at a per-primitive density. The scan
cloud is a thinned copy of the reference whose points are displaced by an
isotropic Gaussian whose scale varies over the scene::

    sigma(p) [mm] = sigma0 + a * range(p) + b / rho(p) + c * z(p)

with ``range`` the distance to a virtual scanner position, ``rho`` a k-NN
planar density estimate (points/m^2) evaluated on the cloud being corrupted,
and ``z`` the height. Because scan points originate from reference points,
the cloud-to-cloud distance of a scan point never exceeds its planted
displacement magnitude.

Every random draw derives from the scene seed through named substreams, one
per primitive, so generation is reproducible and order-independent.

Scene files are INI-style (see :func:`parse_scene_config`); section names
are ``[scene]``, ``[error]``, ``[mls]``, and one ``[<kind> <name>]`` section
per primitive.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloudio import PointCloud
from .rng import generator
from .spatial import build_kdtree


class SceneConfigError(ValueError):
    """Invalid scene configuration (names the offending section/key)."""


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Plane:
    """Parallelogram patch: origin + a*u + b*v for a, b in [0, 1)."""

    origin: tuple[float, float, float]
    u: tuple[float, float, float]
    v: tuple[float, float, float]

    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.u, self.v)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        ab = rng.random((n, 2))
        return (np.asarray(self.origin)
                + ab[:, :1] * np.asarray(self.u)
                + ab[:, 1:] * np.asarray(self.v))


@dataclass(frozen=True)
class Box:
    """Axis-aligned box surface (all six faces)."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]

    def _faces(self) -> list[Plane]:
        cx, cy, cz = self.center
        sx, sy, sz = self.size
        x0, y0, z0 = cx - sx / 2, cy - sy / 2, cz - sz / 2
        x1, y1, z1 = cx + sx / 2, cy + sy / 2, cz + sz / 2
        return [
            Plane((x0, y0, z0), (sx, 0, 0), (0, sy, 0)),   # bottom
            Plane((x0, y0, z1), (sx, 0, 0), (0, sy, 0)),   # top
            Plane((x0, y0, z0), (sx, 0, 0), (0, 0, sz)),   # y = y0
            Plane((x0, y1, z0), (sx, 0, 0), (0, 0, sz)),   # y = y1
            Plane((x0, y0, z0), (0, sy, 0), (0, 0, sz)),   # x = x0
            Plane((x1, y0, z0), (0, sy, 0), (0, 0, sz)),   # x = x1
        ]

    def area(self) -> float:
        return sum(f.area() for f in self._faces())

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        faces = self._faces()
        areas = np.array([f.area() for f in faces])
        face_of = rng.choice(len(faces), size=n, p=areas / areas.sum())
        out = np.empty((n, 3))
        for i, f in enumerate(faces):
            rows = np.flatnonzero(face_of == i)
            if len(rows):
                out[rows] = f.sample(len(rows), rng)
        return out


@dataclass(frozen=True)
class Cylinder:
    """Lateral surface of a vertical cylinder."""

    center_xy: tuple[float, float]
    z0: float
    height: float
    radius: float

    def area(self) -> float:
        return float(2.0 * np.pi * self.radius * self.height)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        theta = rng.random(n) * 2.0 * np.pi
        z = self.z0 + rng.random(n) * self.height
        return np.column_stack([
            self.center_xy[0] + self.radius * np.cos(theta),
            self.center_xy[1] + self.radius * np.sin(theta),
            z,
        ])


@dataclass(frozen=True)
class Rod:
    """Thin cylinder between two endpoints (line-like feature)."""

    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    radius: float = 0.02

    def area(self) -> float:
        length = float(np.linalg.norm(np.asarray(self.p1) - np.asarray(self.p0)))
        return float(2.0 * np.pi * self.radius * length)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p0 = np.asarray(self.p0, dtype=np.float64)
        axis = np.asarray(self.p1, dtype=np.float64) - p0
        length = np.linalg.norm(axis)
        axis = axis / length
        pick = np.zeros(3)
        pick[np.argmin(np.abs(axis))] = 1.0
        n1 = np.cross(axis, pick)
        n1 /= np.linalg.norm(n1)
        n2 = np.cross(axis, n1)
        t = rng.random(n) * length
        theta = rng.random(n) * 2.0 * np.pi
        return (p0 + t[:, None] * axis
                + self.radius * np.cos(theta)[:, None] * n1
                + self.radius * np.sin(theta)[:, None] * n2)


PRIMITIVE_KINDS = {"plane": Plane, "box": Box, "cylinder": Cylinder, "rod": Rod}


@dataclass(frozen=True)
class ScenePrimitive:
    name: str
    shape: object
    density: float  # points / m^2


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple[ScenePrimitive, ...]
    seed: int = 0

    def validate(self) -> None:
        if not self.primitives:
            raise SceneConfigError("scene has no primitives")
        for prim in self.primitives:
            if prim.density <= 0:
                raise SceneConfigError(f"primitive {prim.name!r}: density must be positive")
            if prim.shape.area() <= 0:
                raise SceneConfigError(f"primitive {prim.name!r}: degenerate (zero area)")

    def total_area(self) -> float:
        return sum(p.shape.area() for p in self.primitives)

    def expected_points(self) -> float:
        return sum(p.density * p.shape.area() for p in self.primitives)


@dataclass(frozen=True)
class ErrorLaw:
    """Planted per-point noise scale, all coefficients in millimeters."""

    sigma0_mm: float = 0.5
    range_coeff: float = 0.15      # mm per meter of scanner range
    density_coeff: float = 400.0   # mm * (points/m^2); contributes b / rho
    height_coeff: float = 5.0      # mm per meter of height
    scanner: tuple[float, float, float] = (10.0, 10.0, 1.5)
    density_k: int = 15
    truncate_mm: float | None = 80.0

    def validate(self) -> None:
        if self.density_k < 1:
            raise SceneConfigError("error.density_k must be >= 1")
        if self.truncate_mm is not None and self.truncate_mm <= 0:
            raise SceneConfigError("error.truncate_mm must be positive")


def generate_reference(spec: SceneSpec) -> PointCloud:
    """Uniform area sampling of every primitive; Poisson point counts."""
    spec.validate()
    parts = []
    for i, prim in enumerate(spec.primitives):
        rng = generator(spec.seed, f"scene.{i}.{prim.name}")
        n = int(rng.poisson(prim.density * prim.shape.area()))
        if n > 0:
            parts.append(prim.shape.sample(n, rng))
    if not parts:
        raise SceneConfigError("scene produced no points; increase density")
    return PointCloud(np.vstack(parts))


def subsample(cloud: PointCloud, fraction: float, seed: int) -> PointCloud:
    """Seeded thinning; keeps points in original order."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n_keep = max(1, int(round(fraction * len(cloud))))
    rng = generator(seed, "subsample")
    keep = np.sort(rng.choice(len(cloud), size=n_keep, replace=False))
    return PointCloud(cloud.xyz[keep],
                      {k: v[keep] for k, v in cloud.scalars.items()})


def sigma_field(cloud: PointCloud, law: ErrorLaw, workers: int = 1) -> np.ndarray:
    """Planted noise scale sigma(p) in mm for every point of the cloud."""
    law.validate()
    xyz = cloud.xyz
    rng_term = np.linalg.norm(xyz - np.asarray(law.scanner), axis=1)
    k = min(law.density_k, len(cloud) - 1)
    if k >= 1 and law.density_coeff != 0.0:
        tree = build_kdtree(cloud)
        _, dist = tree.knn_batch(xyz, k + 1, workers=workers)
        r_k = dist[:, -1]
        density_term = law.density_coeff * (np.pi * r_k**2) / (k + 1)
    else:
        density_term = np.zeros(len(cloud))
    sigma = (law.sigma0_mm
             + law.range_coeff * rng_term
             + density_term
             + law.height_coeff * xyz[:, 2])
    return np.maximum(sigma, 0.0)


def corrupt(cloud: PointCloud, law: ErrorLaw, seed: int,
            workers: int = 1) -> tuple[PointCloud, np.ndarray]:
    """Displace each point by an isotropic Gaussian of scale sigma(p).

    Returns the displaced cloud and the displacement magnitudes in mm. The
    magnitude upper-bounds any later C2C label against the original cloud's
    parent scene. Displacements larger than ``truncate_mm`` are scaled back
    onto that radius.
    """
    sigma_mm = sigma_field(cloud, law, workers=workers)
    rng = generator(seed, "corrupt")
    disp = rng.standard_normal((len(cloud), 3)) * (sigma_mm[:, None] / 1000.0)
    mag_mm = np.linalg.norm(disp, axis=1) * 1000.0
    if law.truncate_mm is not None:
        over = mag_mm > law.truncate_mm
        if over.any():
            disp[over] *= (law.truncate_mm / mag_mm[over])[:, None]
            mag_mm[over] = law.truncate_mm
    corrupted = PointCloud(cloud.xyz + disp, dict(cloud.scalars))
    return corrupted.with_scalars(true_error_mm=mag_mm), mag_mm


# ---------------------------------------------------------------------------
# Default acceptance scene
# ---------------------------------------------------------------------------

def default_scene(seed: int = 0) -> SceneSpec:
    """Indoor hall stand-in: floor, walls, boxes, cylinders, thin rods.

    Roughly 300k reference points at the configured densities; rich enough
    to exercise planar, linear and scattered neighborhoods.
    """
    prims = [
        ScenePrimitive("floor", Plane((0, 0, 0), (20, 0, 0), (0, 20, 0)), 500.0),
        ScenePrimitive("wall_s", Plane((0, 0, 0), (20, 0, 0), (0, 0, 3)), 350.0),
        ScenePrimitive("wall_n", Plane((0, 20, 0), (20, 0, 0), (0, 0, 3)), 350.0),
        ScenePrimitive("wall_w", Plane((0, 0, 0), (0, 20, 0), (0, 0, 3)), 350.0),
        ScenePrimitive("wall_e", Plane((20, 0, 0), (0, 20, 0), (0, 0, 3)), 350.0),
        ScenePrimitive("box_a", Box((4.0, 4.5, 0.5), (1.0, 1.0, 1.0)), 450.0),
        ScenePrimitive("box_b", Box((15.5, 3.5, 0.4), (1.2, 0.8, 0.8)), 450.0),
        ScenePrimitive("box_c", Box((9.0, 14.0, 0.6), (1.0, 1.4, 1.2)), 450.0),
        ScenePrimitive("box_d", Box((3.0, 16.0, 0.45), (0.9, 0.9, 0.9)), 450.0),
        ScenePrimitive("box_e", Box((16.5, 16.5, 0.5), (1.1, 1.1, 1.0)), 450.0),
        ScenePrimitive("cyl_a", Cylinder((7.0, 8.0), 0.0, 2.5, 0.3), 250.0),
        ScenePrimitive("cyl_b", Cylinder((12.5, 11.0), 0.0, 2.2, 0.25), 250.0),
        ScenePrimitive("cyl_c", Cylinder((17.5, 8.5), 0.0, 2.8, 0.35), 250.0),
        ScenePrimitive("rod_a", Rod((2.0, 2.0, 0.2), (4.5, 2.6, 2.2), 0.025), 120.0),
        ScenePrimitive("rod_b", Rod((11.0, 17.5, 0.3), (13.5, 18.5, 2.4), 0.03), 120.0),
    ]
    return SceneSpec(tuple(prims), seed=seed)


DEFAULT_MLS_FRACTION = 0.5


# ---------------------------------------------------------------------------
# Scene config files
# ---------------------------------------------------------------------------

_SCENE_KEYS = {"seed", "density"}
_ERROR_KEYS = {"sigma0_mm", "range_coeff", "density_coeff", "height_coeff",
               "scanner", "density_k", "truncate_mm"}
_MLS_KEYS = {"fraction"}
_PRIM_KEYS = {
    "plane": {"origin", "u", "v", "density"},
    "box": {"center", "size", "density"},
    "cylinder": {"center", "z", "height", "radius", "density"},
    "rod": {"p0", "p1", "radius", "density"},
}


def _floats(section: str, key: str, text: str, n: int) -> tuple[float, ...]:
    parts = text.split()
    if len(parts) != n:
        raise SceneConfigError(f"[{section}] {key}: expected {n} numbers, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise SceneConfigError(f"[{section}] {key}: malformed number") from None


def _float(section: str, key: str, text: str) -> float:
    return _floats(section, key, text, 1)[0]


def parse_scene_config(path) -> tuple[SceneSpec, ErrorLaw, float]:
    """Read a scene file; returns (scene, error law, scan thinning fraction).

    Unknown sections and keys are errors that name the offender.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(Path(path), "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise SceneConfigError(f"{path}: {exc}") from None

    seed = 0
    base_density = None
    law_kwargs: dict = {}
    fraction = DEFAULT_MLS_FRACTION
    prims: list[ScenePrimitive] = []

    for section in parser.sections():
        items = dict(parser.items(section))
        if section == "scene":
            _reject_unknown(section, items, _SCENE_KEYS)
            if "seed" in items:
                seed = int(_float(section, "seed", items["seed"]))
            if "density" in items:
                base_density = _float(section, "density", items["density"])
            continue
        if section == "error":
            _reject_unknown(section, items, _ERROR_KEYS)
            for key in ("sigma0_mm", "range_coeff", "density_coeff", "height_coeff"):
                if key in items:
                    law_kwargs[key] = _float(section, key, items[key])
            if "scanner" in items:
                law_kwargs["scanner"] = _floats(section, "scanner", items["scanner"], 3)
            if "density_k" in items:
                law_kwargs["density_k"] = int(_float(section, "density_k", items["density_k"]))
            if "truncate_mm" in items:
                t = _float(section, "truncate_mm", items["truncate_mm"])
                law_kwargs["truncate_mm"] = None if t <= 0 else t
            continue
        if section == "mls":
            _reject_unknown(section, items, _MLS_KEYS)
            if "fraction" in items:
                fraction = _float(section, "fraction", items["fraction"])
            continue

        parts = section.split(None, 1)
        kind = parts[0].lower()
        if kind not in PRIMITIVE_KINDS:
            raise SceneConfigError(f"unknown section [{section}]")
        name = parts[1] if len(parts) > 1 else f"{kind}_{len(prims)}"
        _reject_unknown(section, items, _PRIM_KEYS[kind])
        density = (_float(section, "density", items["density"])
                   if "density" in items else base_density)
        if density is None:
            raise SceneConfigError(
                f"[{section}]: no density and no [scene] density default")
        shape = _build_primitive(kind, section, items)
        prims.append(ScenePrimitive(name, shape, density))

    spec = SceneSpec(tuple(prims), seed=seed)
    spec.validate()
    law = ErrorLaw(**law_kwargs)
    law.validate()
    if not 0.0 < fraction <= 1.0:
        raise SceneConfigError("[mls] fraction must be in (0, 1]")
    return spec, law, fraction


def _reject_unknown(section: str, items: dict, allowed: set[str]) -> None:
    for key in items:
        if key not in allowed:
            raise SceneConfigError(f"unknown key {key!r} in section [{section}]")


def _require(section: str, items: dict, key: str) -> str:
    if key not in items:
        raise SceneConfigError(f"[{section}]: missing required key {key!r}")
    return items[key]


def _build_primitive(kind: str, section: str, items: dict):
    if kind == "plane":
        return Plane(
            _floats(section, "origin", _require(section, items, "origin"), 3),
            _floats(section, "u", _require(section, items, "u"), 3),
            _floats(section, "v", _require(section, items, "v"), 3),
        )
    if kind == "box":
        return Box(
            _floats(section, "center", _require(section, items, "center"), 3),
            _floats(section, "size", _require(section, items, "size"), 3),
        )
    if kind == "cylinder":
        return Cylinder(
            _floats(section, "center", _require(section, items, "center"), 2),
            _float(section, "z", items.get("z", "0")),
            _float(section, "height", _require(section, items, "height")),
            _float(section, "radius", _require(section, items, "radius")),
        )
    return Rod(
        _floats(section, "p0", _require(section, items, "p0"), 3),
        _floats(section, "p1", _require(section, items, "p1"), 3),
        _float(section, "radius", items.get("radius", "0.02")),
    )


def default_scene_config_text() -> str:
    """The default scene as an editable config file."""
    lines = ["[scene]", "seed = 0", "", "[error]"]
    law = ErrorLaw()
    lines += [
        f"sigma0_mm = {law.sigma0_mm}",
        f"range_coeff = {law.range_coeff}",
        f"density_coeff = {law.density_coeff}",
        f"height_coeff = {law.height_coeff}",
        "scanner = {} {} {}".format(*law.scanner),
        f"density_k = {law.density_k}",
        f"truncate_mm = {law.truncate_mm}",
        "",
        "[mls]",
        f"fraction = {DEFAULT_MLS_FRACTION}",
        "",
    ]
    for prim in default_scene().primitives:
        shape = prim.shape
        if isinstance(shape, Plane):
            lines.append(f"[plane {prim.name}]")
            lines.append("origin = {} {} {}".format(*shape.origin))
            lines.append("u = {} {} {}".format(*shape.u))
            lines.append("v = {} {} {}".format(*shape.v))
        elif isinstance(shape, Box):
            lines.append(f"[box {prim.name}]")
            lines.append("center = {} {} {}".format(*shape.center))
            lines.append("size = {} {} {}".format(*shape.size))
        elif isinstance(shape, Cylinder):
            lines.append(f"[cylinder {prim.name}]")
            lines.append("center = {} {}".format(*shape.center_xy))
            lines.append(f"z = {shape.z0}")
            lines.append(f"height = {shape.height}")
            lines.append(f"radius = {shape.radius}")
        else:
            lines.append(f"[rod {prim.name}]")
            lines.append("p0 = {} {} {}".format(*shape.p0))
            lines.append("p1 = {} {} {}".format(*shape.p1))
            lines.append(f"radius = {shape.radius}")
        lines.append(f"density = {prim.density}")
        lines.append("")
    return "\n".join(lines)
