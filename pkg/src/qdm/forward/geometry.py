"""Wire geometry of the chip power network and ring-oscillator current loads.

Lengths are in metres and currents in amperes. The top metal layer lies in
the plane ``z = 0`` and the package substrate below it at negative ``z``;
sensing planes sit at positive ``z``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from ..errors import ConfigError, UsageError

LAYERS = ("top_metal", "substrate", "via")
RO_STATES = (0, 1, 5, 10, 50, 100, 200)


@dataclass(frozen=True)
class WireSegment:
    """Straight line current from ``p0`` to ``p1``."""

    p0: tuple
    p1: tuple
    current: float
    layer: str = "top_metal"
    net: str = ""

    def __post_init__(self):
        p0 = tuple(float(v) for v in self.p0)
        p1 = tuple(float(v) for v in self.p1)
        if len(p0) != 3 or len(p1) != 3:
            raise UsageError("segment end points must be 3-D")
        if p0 == p1:
            raise UsageError("segment end points coincide")
        if not np.isfinite(self.current) or not all(np.isfinite(p0 + p1)):
            raise UsageError("segment geometry and current must be finite")
        if self.layer not in LAYERS:
            raise UsageError(f"unknown layer {self.layer!r}")
        object.__setattr__(self, "p0", p0)
        object.__setattr__(self, "p1", p1)
        object.__setattr__(self, "current", float(self.current))


@dataclass(frozen=True)
class CurrentLayout:
    segments: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    def __len__(self):
        return len(self.segments)

    def arrays(self):
        """``(starts, ends, currents)`` as arrays of shape (n, 3), (n, 3), (n,)."""
        if not self.segments:
            return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)
        a = np.array([s.p0 for s in self.segments])
        b = np.array([s.p1 for s in self.segments])
        i = np.array([s.current for s in self.segments])
        return a, b, i

    def scaled(self, factor):
        return CurrentLayout(tuple(WireSegment(s.p0, s.p1, s.current * factor, s.layer, s.net)
                                   for s in self.segments))

    def merged(self, other):
        return CurrentLayout(self.segments + other.segments)

    def nets(self):
        out = {}
        for s in self.segments:
            out.setdefault(s.net, []).append(s)
        return out

    def junction_imbalance(self, decimals=12):
        """Largest net current into any node shared by two or more segments of a net.

        Free ends of a net (nodes touched by a single segment) are terminals
        and are not counted.
        """
        worst = 0.0
        for segs in self.nets().values():
            flow, touch = {}, {}
            for s in segs:
                k0 = tuple(np.round(s.p0, decimals))
                k1 = tuple(np.round(s.p1, decimals))
                flow[k0] = flow.get(k0, 0.0) - s.current
                flow[k1] = flow.get(k1, 0.0) + s.current
                touch[k0] = touch.get(k0, 0) + 1
                touch[k1] = touch.get(k1, 0) + 1
            for k, v in flow.items():
                if touch[k] >= 2:
                    worst = max(worst, abs(v))
        return worst

    def supply_current(self):
        """Total current carried up the top-metal supply wires (flowing +y)."""
        return float(sum(s.current for s in self.segments
                         if s.layer == "top_metal" and s.net.endswith("supply")
                         and s.p1[1] > s.p0[1]))


@dataclass(frozen=True)
class Region:
    name: str
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x1 >= self.x0 and self.y1 >= self.y0):
            raise ConfigError(f"region {self.name} has inverted extents")

    @property
    def area(self):
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def overlaps(self, other):
        return (self.x0 < other.x1 and other.x0 < self.x1
                and self.y0 < other.y1 and other.y0 < self.y1)

    def to_dict(self):
        return {"x": [self.x0, self.x1], "y": [self.y0, self.y1]}


def _default_regions():
    mm = 1e-3
    return (
        Region("R1", 0.55 * mm, 1.45 * mm, -0.9 * mm, 0.9 * mm),
        Region("R2", -1.45 * mm, -0.55 * mm, -0.9 * mm, 0.9 * mm),
        Region("R3", -1.45 * mm, -0.55 * mm, 2.3 * mm, 3.5 * mm),
        Region("R4", 0.55 * mm, 1.45 * mm, 2.3 * mm, 3.5 * mm),
    )


@dataclass(frozen=True)
class DiePlan:
    """Placement of the ring-oscillator regions and the wire layers.

    ``substrate_depth`` is the distance from the top metal down to the
    substrate feed wires; ``feed_offset`` is how far beyond the region edge
    (in +x for regions right of centre, -x otherwise) the feeds run before
    closing on the supply.
    """

    regions: tuple = field(default_factory=_default_regions)
    top_pitch: float = 34.3e-6
    top_width: float = 21.6e-6
    substrate_pitch: float = 200e-6
    substrate_width: float = 100e-6
    substrate_depth: float = 300e-6
    die_thickness: float = 300e-6
    feed_offset: float = 1.0e-3
    min_pairs: int = 4
    min_length: float = 200e-6
    full_state: int = 200

    def __post_init__(self):
        regs = tuple(r if isinstance(r, Region) else Region(**r) for r in self.regions)
        object.__setattr__(self, "regions", regs)
        names = [r.name for r in regs]
        if len(set(names)) != len(names):
            raise ConfigError("region names must be unique")
        for i, a in enumerate(regs):
            for b in regs[i + 1:]:
                if a.overlaps(b):
                    raise ConfigError(f"regions {a.name} and {b.name} overlap")
        if not self.top_pitch > self.top_width > 0:
            raise ConfigError("top metal pitch must exceed its width, which must be positive")
        if not self.substrate_pitch > self.substrate_width > 0:
            raise ConfigError("substrate pitch must exceed its width, which must be positive")
        if not (self.substrate_depth > 0 and self.die_thickness > 0):
            raise ConfigError("substrate depth and die thickness must be positive")
        if self.min_pairs < 1 or not self.min_length > 0 or self.full_state < 1:
            raise ConfigError("cluster sizing parameters must be positive")

    def region(self, name):
        for r in self.regions:
            if r.name == name:
                return r
        raise UsageError(f"region {name!r} is not in the die plan")

    def to_dict(self):
        return {
            "regions": {r.name: r.to_dict() for r in self.regions},
            "top_metal": {"pitch": self.top_pitch, "width": self.top_width},
            "substrate": {"pitch": self.substrate_pitch, "width": self.substrate_width,
                          "depth": self.substrate_depth},
            "die_thickness": self.die_thickness,
            "feed_offset": self.feed_offset,
            "cluster": {"min_pairs": self.min_pairs, "min_length": self.min_length,
                        "full_state": self.full_state},
            "units": "m",
        }

    @classmethod
    def from_dict(cls, d):
        """Build a plan from a JSON-style document (see ``die_plan.schema.json``)."""
        validate_plan_document(d)
        kw = {}
        if "regions" in d:
            kw["regions"] = tuple(Region(k, v["x"][0], v["x"][1], v["y"][0], v["y"][1])
                                  for k, v in d["regions"].items())
        tm = d.get("top_metal", {})
        kw.update({k2: tm[k] for k, k2 in (("pitch", "top_pitch"), ("width", "top_width"))
                   if k in tm})
        sb = d.get("substrate", {})
        kw.update({k2: sb[k] for k, k2 in (("pitch", "substrate_pitch"),
                                            ("width", "substrate_width"),
                                            ("depth", "substrate_depth")) if k in sb})
        for k in ("die_thickness", "feed_offset"):
            if k in d:
                kw[k] = d[k]
        kw.update({k: d["cluster"][k] for k in ("min_pairs", "min_length", "full_state")
                   if k in d.get("cluster", {})})
        return cls(**kw)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"die plan {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def plan_schema():
    return json.loads(resources.files("qdm").joinpath("die_plan.schema.json").read_text())


def validate_plan_document(doc):
    import jsonschema

    try:
        jsonschema.validate(doc, plan_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"die plan invalid at {where}: {exc.message}") from None


@dataclass(frozen=True)
class ChipState:
    region: str = "R1"
    n_ros: int = 0

    def __post_init__(self):
        if int(self.n_ros) != self.n_ros or self.n_ros < 0:
            raise UsageError(f"n_ros must be a non-negative integer, got {self.n_ros}")
        object.__setattr__(self, "n_ros", int(self.n_ros))


@dataclass(frozen=True)
class StandoffConfig:
    """Height of the sensing plane above the top metal, m."""

    height: float

    def __post_init__(self):
        if not self.height > 0:
            raise UsageError("stand-off height must be positive")

    @classmethod
    def preset(cls, scenario):
        try:
            return cls(STANDOFF_PRESETS[scenario])
        except KeyError:
            raise UsageError(f"unknown scenario {scenario!r}") from None


STANDOFF_PRESETS = {"decapped": 10e-6, "intact": 800e-6}


def _cluster_geometry(plan, region, n_ros):
    frac = min(1.0, np.sqrt(n_ros / plan.full_state))
    width = region.x1 - region.x0
    height = region.y1 - region.y0
    n_pairs = max(plan.min_pairs, int(np.floor(frac * width / (2.0 * plan.top_pitch))))
    length = min(height, max(plan.min_length, frac * height))
    xc = 0.5 * (region.x0 + region.x1)
    yc = 0.5 * (region.y0 + region.y1)
    x_start = xc - 0.5 * (2 * n_pairs - 1) * plan.top_pitch
    return n_pairs, x_start, yc - 0.5 * length, yc + 0.5 * length


def ro_current_layout(plan, state, per_ro_current=50e-6):
    """Closed current loops feeding an active ring-oscillator cluster.

    The cluster spans a centred sub-rectangle of the region whose sides grow
    as ``sqrt(n_ros / full_state)``. It is served by adjacent top-metal wire
    pairs with alternating bias: current rises on the supply wire (+y),
    crosses the cluster, and returns on the neighbouring wire (-y). Each
    pair is fed through vias from substrate runs that reach out to the
    package supply, which closes the loop. The total supply current is
    ``n_ros * per_ro_current``, shared equally by the pairs.
    """
    if state.n_ros == 0:
        return CurrentLayout()
    region = plan.region(state.region)
    if not region.area > 0:
        raise UsageError(f"region {region.name} has zero area")
    if not per_ro_current > 0:
        raise UsageError("per_ro_current must be positive")
    n_pairs, x_start, ya, yb = _cluster_geometry(plan, region, state.n_ros)
    i_pair = state.n_ros * per_ro_current / n_pairs
    zt, zs = 0.0, -plan.substrate_depth
    centre = 0.5 * (region.x0 + region.x1)
    outward = 1.0 if centre >= 0 else -1.0
    x_feed = (region.x1 + plan.feed_offset) if outward > 0 else (region.x0 - plan.feed_offset)
    y_ret = ya - plan.substrate_pitch
    segs = []
    for k in range(n_pairs):
        xs = x_start + 2 * k * plan.top_pitch
        xr = xs + plan.top_pitch
        net = f"{region.name}.pair{k}"
        path = [
            ((x_feed, y_ret, zs), (x_feed, ya, zs), "substrate", "supply"),
            ((x_feed, ya, zs), (xs, ya, zs), "substrate", "supply"),
            ((xs, ya, zs), (xs, ya, zt), "via", "supply"),
            ((xs, ya, zt), (xs, yb, zt), "top_metal", "supply"),
            ((xs, yb, zt), (xr, yb, zt), "top_metal", "load"),
            ((xr, yb, zt), (xr, ya, zt), "top_metal", "return"),
            ((xr, ya, zt), (xr, ya, zs), "via", "return"),
            ((xr, ya, zs), (xr, y_ret, zs), "substrate", "return"),
            ((xr, y_ret, zs), (x_feed, y_ret, zs), "substrate", "return"),
        ]
        for p0, p1, layer, role in path:
            segs.append(WireSegment(p0, p1, i_pair, layer, f"{net}.{role}"))
    return CurrentLayout(tuple(segs))


def fea_reference_layout(n_top=60, n_substrate=10, length=2e-3, current=10e-3):
    """Two-layer reference array of straight wires with alternating bias.

    Top metal: 21.6 um wires with 12.7 um gaps (34.3 um pitch) at ``z = 0``.
    Substrate: 100 um wires with 100 um gaps (200 um pitch) 300 um below.
    All wires run along y, are centred on the origin and carry
    ``current`` with alternating sign.
    """
    top_pitch = 21.6e-6 + 12.7e-6
    sub_pitch = 100e-6 + 100e-6
    segs = []
    for layer, n, pitch, z in (("top_metal", n_top, top_pitch, 0.0),
                               ("substrate", n_substrate, sub_pitch, -300e-6)):
        x0 = -0.5 * (n - 1) * pitch
        for k in range(n):
            x = x0 + k * pitch
            sign = 1.0 if k % 2 == 0 else -1.0
            segs.append(WireSegment((x, -0.5 * length, z), (x, 0.5 * length, z), sign * current,
                                    layer, f"{layer}.{k}"))
    return CurrentLayout(tuple(segs))


FEA_GEOMETRY = {
    "top_width": 21.6e-6,
    "top_gap": 12.7e-6,
    "top_pitch": 34.3e-6,
    "substrate_width": 100e-6,
    "substrate_gap": 100e-6,
    "substrate_pitch": 200e-6,
    "layer_gap": 300e-6,
    "current": 10e-3,
}


def temperature_of_state(n_ros, coefficient=0.0075):
    """Die temperature rise, K, linear in the number of active ring oscillators."""
    n = np.asarray(n_ros, dtype=float)
    if np.any(n < 0):
        raise UsageError("n_ros must be non-negative")
    out = coefficient * n
    return float(out) if out.ndim == 0 else out
