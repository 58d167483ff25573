"""Analytic domain families and their rasterization.

Every family is rasterized on the global lattice of cell centers
((i + 1/2) h, (j + 1/2) h), so symmetric shapes come out symmetric and a
refinement h -> h/2 samples a nested lattice. A cell belongs to the domain
when its center satisfies the (open) analytic inequality; a few families
then do cell surgery (removing a puncture cell or a Cantor-type slit).

Families and parameters:
    disk            radius (1.0), center ((0, 0))
    square          side (1.0), corner ((0, 0))
    annulus         r_inner (0.5), r_outer (1.0)
    power_cusp      alpha >= 1: {(x, y): 0 < x < 1, |y| < x^alpha}
    rooms_corridors width (0.1) >= 2h, room (1.0), corridor_len (0.4)
    punctured_disk  radius (1.0): disk minus the cell at (h/2, h/2)
    cantor_slit     p in (1, 2]: ball of radius 2 minus a Cantor set on
                    [0, 1] x {0} of box dimension 2 - p
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Union

import numpy as np

from .errors import Unsupported
from .grid import GridDomain

_MARGIN = 2  # empty cells kept around the bounding box


@dataclass(frozen=True)
class DomainSpec:
    """Serializable recipe: analytic family, parameters, grid spacing."""

    family: str
    params: dict = field(default_factory=dict)
    h: float = 1.0 / 64

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise Unsupported(
                f"unknown family {self.family!r}; choose from {sorted(_FAMILIES)}"
            )
        allowed = _PARAM_KEYS[self.family]
        extra = set(self.params) - allowed
        if extra:
            raise Unsupported(f"{self.family} does not take params {sorted(extra)}")
        if not (self.h > 0):
            raise Unsupported(f"spacing must be positive, got {self.h}")

    def to_json(self) -> str:
        return json.dumps({"family": self.family, "params": self.params, "h": self.h})

    @staticmethod
    def from_json(text: Union[str, bytes, Path]) -> "DomainSpec":
        if isinstance(text, Path):
            text = text.read_text()
        obj = json.loads(text)
        return DomainSpec(
            family=obj["family"], params=obj.get("params", {}), h=float(obj["h"])
        )


def _lattice(bbox: tuple[float, float, float, float], h: float):
    """Index window of the global center lattice covering bbox plus margin."""
    x0, x1, y0, y1 = bbox
    ia = math.floor(x0 / h) - _MARGIN
    ib = math.ceil(x1 / h) + _MARGIN
    ja = math.floor(y0 / h) - _MARGIN
    jb = math.ceil(y1 / h) + _MARGIN
    cx = (np.arange(ia, ib) + 0.5) * h
    cy = (np.arange(ja, jb) + 0.5) * h
    origin = (ia * h, ja * h)
    return cx, cy, origin


def _raster_indicator(
    inside: Callable[[np.ndarray, np.ndarray], np.ndarray],
    bbox: tuple[float, float, float, float],
    h: float,
    tag: str,
) -> tuple[np.ndarray, tuple[float, float]]:
    cx, cy, origin = _lattice(bbox, h)
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    return inside(X, Y), origin


def _disk(params: dict, h: float):
    r = float(params.get("radius", 1.0))
    cx0, cy0 = params.get("center", (0.0, 0.0))
    if r <= 0:
        raise Unsupported("disk radius must be positive")
    mask, origin = _raster_indicator(
        lambda X, Y: (X - cx0) ** 2 + (Y - cy0) ** 2 < r * r,
        (cx0 - r, cx0 + r, cy0 - r, cy0 + r),
        h,
        "disk",
    )
    return mask, origin


def _square(params: dict, h: float):
    side = float(params.get("side", 1.0))
    ax, ay = params.get("corner", (0.0, 0.0))
    if side <= 0:
        raise Unsupported("square side must be positive")
    mask, origin = _raster_indicator(
        lambda X, Y: (ax < X) & (X < ax + side) & (ay < Y) & (Y < ay + side),
        (ax, ax + side, ay, ay + side),
        h,
        "square",
    )
    return mask, origin


def _annulus(params: dict, h: float):
    ri = float(params.get("r_inner", 0.5))
    ro = float(params.get("r_outer", 1.0))
    if not (0 < ri < ro):
        raise Unsupported("annulus needs 0 < r_inner < r_outer")
    mask, origin = _raster_indicator(
        lambda X, Y: (ri * ri < X * X + Y * Y) & (X * X + Y * Y < ro * ro),
        (-ro, ro, -ro, ro),
        h,
        "annulus",
    )
    return mask, origin


def _power_cusp(params: dict, h: float):
    alpha = float(params.get("alpha", 2.0))
    if alpha < 1:
        raise Unsupported(f"cusp exponent must satisfy alpha >= 1, got {alpha}")
    mask, origin = _raster_indicator(
        lambda X, Y: (0.0 < X) & (X < 1.0) & (np.abs(Y) < X ** alpha),
        (0.0, 1.0, -1.0, 1.0),
        h,
        "power_cusp",
    )
    return mask, origin


def _rooms_corridors(params: dict, h: float):
    width = float(params.get("width", 0.1))
    room = float(params.get("room", 1.0))
    lenc = float(params.get("corridor_len", 0.4))
    if width < 2 * h:
        raise Unsupported(f"corridor width {width} is below 2h = {2 * h}")
    if room <= 0 or lenc <= 0:
        raise Unsupported("room size and corridor length must be positive")
    x1 = room + lenc  # right room starts here
    ylo, yhi = room / 2 - width / 2, room / 2 + width / 2

    def inside(X, Y):
        left = (0.0 < X) & (X < room) & (0.0 < Y) & (Y < room)
        right = (x1 < X) & (X < x1 + room) & (0.0 < Y) & (Y < room)
        corridor = (room / 2 < X) & (X < x1 + room / 2) & (ylo < Y) & (Y < yhi)
        return left | right | corridor

    mask, origin = _raster_indicator(inside, (0.0, x1 + room, 0.0, room), h, "rooms")
    return mask, origin


def _punctured_disk(params: dict, h: float):
    mask, origin = _disk(params, h)
    # remove the cell whose center is (h/2, h/2): a one-cell puncture
    # standing in for the removed origin
    i = int(round(-origin[0] / h))
    j = int(round(-origin[1] / h))
    if not mask[i, j]:
        raise Unsupported("puncture cell fell outside the disk")
    mask = mask.copy()
    mask[i, j] = False
    return mask, origin


def _cantor_intervals(dim: float, h: float) -> list[tuple[float, float]]:
    """Middle-interval Cantor construction on [0, 1] refined to grid scale.

    Each step keeps the two end intervals of relative length r. Uniform
    r = 2^(-1/dim) gives box dimension dim; for dim = 0 the ratio shrinks
    with the generation (r_k = 2^-k) so only finitely many cells survive
    at any fixed h."""
    intervals = [(0.0, 1.0)]
    gen = 0
    while True:
        longest = max(b - a for a, b in intervals)
        if longest <= h or len(intervals) > 1 << 14:
            return intervals
        gen += 1
        r = 2.0 ** (-1.0 / dim) if dim > 0 else 2.0 ** (-gen)
        nxt = []
        for a, b in intervals:
            ln = (b - a) * r
            nxt.append((a, a + ln))
            nxt.append((b - ln, b))
        intervals = nxt


def _cantor_slit(params: dict, h: float):
    p = float(params.get("p", 2.0))
    if not (1.0 < p <= 2.0):
        raise Unsupported(f"cantor_slit exponent must lie in (1, 2], got {p}")
    dim = 2.0 - p
    mask, origin = _disk({"radius": 2.0}, h)
    mask = mask.copy()
    j = int(round(-origin[1] / h))  # row of centers at y = h/2, nearest the slit line
    for a, b in _cantor_intervals(dim, h):
        ia = int(math.floor((a - origin[0]) / h))
        ib = int(math.floor((b - origin[0]) / h))
        mask[ia : ib + 1, j] = False
    return mask, origin


_FAMILIES: dict[str, Callable[[dict, float], tuple[np.ndarray, tuple[float, float]]]] = {
    "disk": _disk,
    "square": _square,
    "annulus": _annulus,
    "power_cusp": _power_cusp,
    "rooms_corridors": _rooms_corridors,
    "punctured_disk": _punctured_disk,
    "cantor_slit": _cantor_slit,
}

_PARAM_KEYS: dict[str, set] = {
    "disk": {"radius", "center"},
    "square": {"side", "corner"},
    "annulus": {"r_inner", "r_outer"},
    "power_cusp": {"alpha"},
    "rooms_corridors": {"width", "room", "corridor_len"},
    "punctured_disk": {"radius", "center"},
    "cantor_slit": {"p"},
}


def rasterize(spec: DomainSpec, h: float | None = None) -> GridDomain:
    """Rasterize the analytic family of spec at spacing h (default spec.h)."""
    hh = float(h) if h is not None else spec.h
    if not (hh > 0):
        raise Unsupported(f"spacing must be positive, got {hh}")
    mask, origin = _FAMILIES[spec.family](spec.params, hh)
    return GridDomain(mask=mask, h=hh, origin=origin, family_tag=spec.family)


def generate(spec: DomainSpec) -> GridDomain:
    """Alias for rasterize at the spacing recorded in the spec."""
    return rasterize(spec)


def slit_cells(dom: GridDomain) -> np.ndarray:
    """For a cantor_slit domain, the removed cells as a boolean array:
    complement cells on the slit row inside the ball of radius 2."""
    if dom.family_tag != "cantor_slit":
        raise Unsupported("slit_cells applies to cantor_slit domains")
    j = int(round(-dom.origin[1] / dom.h))
    out = np.zeros(dom.shape, dtype=bool)
    cx = dom.origin[0] + (np.arange(dom.shape[0]) + 0.5) * dom.h
    on_seg = (cx >= -dom.h) & (cx <= 1.0 + dom.h)
    out[:, j] = ~dom.mask[:, j] & on_seg
    return out
