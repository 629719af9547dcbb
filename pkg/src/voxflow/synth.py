"""Deterministic synthetic lidar scenes with exact ground-truth flow.

Randomness comes from a counter-based SplitMix64 stream: the ``i``-th draw of
stream ``key`` is ``splitmix64(key + (i + 1) * 0x9E3779B97F4A7C15)``, mapped
to [0, 1) by its top 53 bits. Stream keys are derived from
(seed, frame, element, face) by chaining the same mixer, so any
implementation of the mixer reproduces the clouds bit for bit.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .geometry import Aabb, Frame, PointCloud, SequenceManifest, save_cloud, save_manifest
from .metrics import split_dynamic

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1

STATIC_LABEL = 0


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64(key: int, count: int) -> np.ndarray:
    """``count`` raw 64-bit outputs of the stream identified by ``key``."""
    with np.errstate(over="ignore"):
        ctr = np.arange(1, count + 1, dtype=np.uint64) * GOLDEN
        return _mix(np.uint64(key & _MASK) + ctr)


def uniform(key: int, count: int) -> np.ndarray:
    return (splitmix64(key, count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53


def derive_key(*parts: int) -> int:
    key = 0
    for part in parts:
        key = int(splitmix64((key ^ (int(part) & _MASK)) & _MASK, 1)[0])
    return key


@dataclass(frozen=True)
class SceneBox:
    box: Aabb
    density: float = 40.0          # points per m^2 of surface
    label: int = STATIC_LABEL


@dataclass(frozen=True)
class Actor:
    box: Aabb                      # pose at frame 0
    velocity: tuple[float, float, float]
    label: int = 1
    density: float = 40.0


@dataclass(frozen=True)
class SceneSpec:
    static_elements: tuple[SceneBox, ...] = ()
    actors: tuple[Actor, ...] = ()
    sensor_origin: tuple[float, float, float] = (0.0, 0.0, 2.0)
    frames: int = 5
    seed: int = 0
    occlusion: bool = True
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.frames < 2:
            raise InvalidSpec(f"need at least 2 frames, got {self.frames}")
        if self.noise_sigma < 0:
            raise InvalidSpec("noise_sigma must be non-negative")
        for el in (*self.static_elements, *self.actors):
            if not el.density > 0:
                raise InvalidSpec("surface densities must be positive")
        for a in self.actors:
            if len(a.velocity) != 3 or not np.all(np.isfinite(a.velocity)):
                raise InvalidSpec("actor velocities must be finite 3-vectors")

    @property
    def reference_index(self) -> int:
        return self.frames // 2

    def replace(self, **changes) -> "SceneSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class SynthFrame:
    cloud: PointCloud
    t: int
    visible_per_actor: list[int] = field(default_factory=list)


def sample_box_surface(box: Aabb, density: float, key: int) -> np.ndarray:
    """Uniform samples on the six faces, round(area * density) per face."""
    lo, hi = box.min, box.max
    ext = hi - lo
    chunks = []
    for axis in range(3):
        u_ax, v_ax = [a for a in range(3) if a != axis]
        area = ext[u_ax] * ext[v_ax]
        n = int(round(area * density))
        for side, plane in enumerate((lo[axis], hi[axis])):
            if n == 0:
                continue
            r = uniform(derive_key(key, axis, side), 2 * n).reshape(n, 2)
            pts = np.empty((n, 3))
            pts[:, axis] = plane
            pts[:, u_ax] = lo[u_ax] + r[:, 0] * ext[u_ax]
            pts[:, v_ax] = lo[v_ax] + r[:, 1] * ext[v_ax]
            chunks.append(pts)
    return np.concatenate(chunks) if chunks else np.zeros((0, 3))


def segment_hits_box(origin: np.ndarray, pts: np.ndarray, box: Aabb) -> np.ndarray:
    """True where the open segment origin -> pt passes through ``box``.

    Endpoints lying on the box surface do not count as hits.
    """
    d = pts - origin
    d = np.where(d == 0.0, 1e-300, d)
    with np.errstate(divide="ignore", over="ignore"):
        t1 = (box.min - origin) / d
        t2 = (box.max - origin) / d
    t_in = np.minimum(t1, t2).max(axis=1)
    t_out = np.maximum(t1, t2).min(axis=1)
    t_in = np.maximum(t_in, 0.0)
    return (t_in < t_out) & (t_in < 1.0 - 1e-9)


def occluded(origin, pts: np.ndarray, boxes) -> np.ndarray:
    origin = np.asarray(origin, dtype=np.float64)
    hit = np.zeros(len(pts), dtype=bool)
    for b in boxes:
        hit |= segment_hits_box(origin, pts, b)
    return hit


def actor_box_at(a: Actor, t: float) -> Aabb:
    shift = np.asarray(a.velocity, dtype=np.float64) * t
    return Aabb(a.box.min + shift, a.box.max + shift)


def generate(spec: SceneSpec) -> list[SynthFrame]:
    frames = []
    for t in range(spec.frames):
        boxes = [s.box for s in spec.static_elements] + [actor_box_at(a, t) for a in spec.actors]
        elements = [(s.box, s.density, s.label, np.zeros(3)) for s in spec.static_elements]
        elements += [
            (boxes[len(spec.static_elements) + k], a.density, a.label, np.asarray(a.velocity, float))
            for k, a in enumerate(spec.actors)
        ]
        pts, labels, flows, counts = [], [], [], []
        for e, (box, density, label, vel) in enumerate(elements):
            p = sample_box_surface(box, density, derive_key(spec.seed, t, e))
            if spec.occlusion and len(p):
                p = p[~occluded(spec.sensor_origin, p, boxes)]
            if spec.noise_sigma > 0 and len(p):
                p = p + spec.noise_sigma * _gaussian(derive_key(spec.seed, t, e, 7), p.shape)
            pts.append(p)
            labels.append(np.full(len(p), label, dtype=np.int64))
            flows.append(np.tile(vel, (len(p), 1)))
            counts.append(len(p))
        gt = np.concatenate(flows)
        cloud = PointCloud(
            np.concatenate(pts),
            labels=np.concatenate(labels),
            gt_flow=gt,
            dynamic_mask=split_dynamic(gt),
        )
        frames.append(SynthFrame(cloud, t, counts[len(spec.static_elements):]))
    return frames


def _gaussian(key: int, shape) -> np.ndarray:
    n = int(np.prod(shape))
    u = uniform(key, 2 * n).reshape(2, n)
    u1 = np.maximum(u[0], 2.0 ** -53)
    z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u[1])
    return z.reshape(shape)


# --- scenario library ---------------------------------------------------------


def _box(lo, hi) -> Aabb:
    return Aabb(np.asarray(lo, float), np.asarray(hi, float))


def _background() -> tuple[SceneBox, ...]:
    return (
        # building fronts separated by alleys
        SceneBox(_box((-12.0, 12.0, 0.0), (-7.5, 12.4, 3.0)), density=20.0),
        SceneBox(_box((-6.0, 12.6, 0.0), (-1.0, 13.0, 3.5)), density=20.0),
        SceneBox(_box((0.5, 12.0, 0.0), (5.5, 12.4, 3.0)), density=20.0),
        SceneBox(_box((7.0, 12.3, 0.0), (12.0, 12.7, 2.8)), density=20.0),
        SceneBox(_box((-9.0, 3.5, 0.0), (-5.0, 5.3, 1.5))),                    # parked car
        SceneBox(_box((6.0, 4.0, 0.0), (6.3, 4.3, 3.0))),                      # pole
        SceneBox(_box((8.0, -8.0, 0.0), (10.0, -6.0, 2.5))),                   # kiosk
    )


def scenario_library() -> dict[str, SceneSpec]:
    car = (4.0, 1.8, 1.5)
    lib = {}
    lib["static_only"] = SceneSpec(static_elements=_background())
    lib["single_mover"] = SceneSpec(
        static_elements=_background(),
        actors=(Actor(_box((-3.0, 6.5, 0.2), (-3.0 + car[0], 6.5 + car[1], 0.2 + car[2])),
                      (0.5, 0.0, 0.0), label=1),),
    )
    lib["opposite_movers"] = SceneSpec(
        static_elements=_background(),
        actors=(
            Actor(_box((-3.0, 5.5, 0.2), (1.0, 7.3, 1.7)), (0.5, 0.0, 0.0), label=1),
            Actor(_box((-1.0, 9.3, 0.2), (3.0, 11.1, 1.7)), (-0.5, 0.0, 0.0), label=1),
        ),
    )
    lib["near_point_trap"] = SceneSpec(
        static_elements=_background() + (
            SceneBox(_box((-0.15, 8.6, 0.0), (0.15, 8.9, 3.0))),
        ),
        actors=(Actor(_box((-2.5, 6.4, 0.2), (1.5, 8.2, 1.7)), (0.25, 0.0, 0.0), label=1),),
    )
    lib["occluded_shadow"] = SceneSpec(
        static_elements=_background() + (
            SceneBox(_box((0.515, 3.875, 0.0), (0.725, 4.125, 4.0))),          # pillar
        ),
        actors=(Actor(_box((-0.45, 7.9, 0.2), (-0.05, 8.1, 1.9)), (0.5, 0.0, 0.0), label=2),),
    )
    return lib


def write_sequence(frames: list[SynthFrame], out_dir, reference_index: int,
                   frame_dt: float = 0.1):
    """Write ``frame_XXX.ply`` files plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in frames:
        name = f"frame_{f.t:03d}.ply"
        save_cloud(f.cloud, out / name, "ply_ascii")
        entries.append(Frame(name, round(f.t * frame_dt, 9)))
    manifest = SequenceManifest(entries, reference_index, base_dir=out)
    path = out / "manifest.json"
    save_manifest(manifest, path)
    return path


def spec_from_json(doc: dict) -> SceneSpec:
    """Build a SceneSpec from its JSON form (boxes as ``{"min": [...], "max": [...]}``)."""
    try:
        statics = tuple(
            SceneBox(_box(s["min"], s["max"]), float(s.get("density", 40.0)), int(s.get("label", 0)))
            for s in doc.get("static_elements", [])
        )
        actors = tuple(
            Actor(_box(a["min"], a["max"]), tuple(float(v) for v in a["velocity"]),
                  int(a.get("label", 1)), float(a.get("density", 40.0)))
            for a in doc.get("actors", [])
        )
        return SceneSpec(
            static_elements=statics,
            actors=actors,
            sensor_origin=tuple(float(v) for v in doc.get("sensor_origin", (0.0, 0.0, 2.0))),
            frames=int(doc.get("frames", 5)),
            seed=int(doc.get("seed", 0)),
            occlusion=bool(doc.get("occlusion", True)),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"malformed scene spec: {exc}") from exc
