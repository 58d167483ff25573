"""Uniform-grid domains, distance fields, and discrete vector calculus.

A domain is a boolean occupancy mask on a square grid of spacing h: cell
(i, j) is inside when its center origin + h*(i+1/2, j+1/2) is. Arrays are
indexed [ix, iy]. The discrete gradient is the forward difference with zero
extension outside the array and the divergence is the backward difference,
so that summation by parts

    sum v . grad(g) h^2 = - sum div(v) g h^2

holds exactly (to rounding) for arbitrary arrays. Vector fields live on the
same cell lattice but their zero-trace condition is face-based: component
vx at (i, j) represents flux between cells (i, j) and (i+1, j) and is free
exactly when both cells are occupied. With that convention the divergence
operator restricted to zero-trace fields hits every mean-zero right-hand
side on a connected mask, which the solvers rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np
from scipy import ndimage

from .errors import DisconnectedRaster, EmptyRaster, GridMismatch, Unsupported

FREE = "free"
ZERO_TRACE = "zero-trace"

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def _validate_mask(mask: np.ndarray) -> np.ndarray:
    if mask.ndim != 2:
        raise Unsupported(f"only planar grids are implemented, got ndim={mask.ndim}")
    mask = np.ascontiguousarray(mask.astype(bool))
    if not mask.any():
        raise EmptyRaster("occupancy mask has no cells")
    _, ncomp = ndimage.label(mask, structure=_STRUCT4)
    if ncomp != 1:
        raise DisconnectedRaster(f"mask splits into {ncomp} 4-connected components")
    return mask


def _has_margin(mask: np.ndarray) -> bool:
    return not (
        mask[0, :].any() or mask[-1, :].any() or mask[:, 0].any() or mask[:, -1].any()
    )


@dataclass(frozen=True)
class GridDomain:
    """Immutable occupancy-grid domain.

    mask       -- bool array, True on cells whose center lies in the domain
    h          -- grid spacing (cells are h-by-h squares)
    origin     -- physical coordinates of the lower-left corner of cell (0, 0)
    family_tag -- optional provenance label ("disk", "power_cusp", ...)
    """

    mask: np.ndarray
    h: float
    origin: tuple[float, float] = (0.0, 0.0)
    family_tag: str = ""

    def __post_init__(self):
        mask = _validate_mask(self.mask)
        if not _has_margin(mask):
            # keep a one-cell empty margin so stencils never wrap or clip
            mask = np.pad(mask, 1)
            ox = self.origin[0] - self.h
            oy = self.origin[1] - self.h
            object.__setattr__(self, "origin", (ox, oy))
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if not (self.h > 0):
            raise Unsupported(f"grid spacing must be positive, got {self.h}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @cached_property
    def cell_count(self) -> int:
        return int(self.mask.sum())

    @property
    def area(self) -> float:
        return self.cell_count * self.h * self.h

    @cached_property
    def trace_layer(self) -> np.ndarray:
        """Cells of the domain 4-adjacent to at least one outside cell."""
        eroded = ndimage.binary_erosion(self.mask, structure=_STRUCT4)
        layer = self.mask & ~eroded
        layer.setflags(write=False)
        return layer

    @cached_property
    def free_faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Face masks (fx, fy): fx[i, j] is True when cells (i, j) and
        (i+1, j) are both occupied, likewise fy in the y direction. A
        zero-trace vector field may be nonzero only on free faces."""
        m = self.mask
        fx = np.zeros_like(m)
        fy = np.zeros_like(m)
        fx[:-1, :] = m[:-1, :] & m[1:, :]
        fy[:, :-1] = m[:, :-1] & m[:, 1:]
        fx.setflags(write=False)
        fy.setflags(write=False)
        return fx, fy

    def cell_center(self, i: int, j: int) -> tuple[float, float]:
        return (
            self.origin[0] + (i + 0.5) * self.h,
            self.origin[1] + (j + 0.5) * self.h,
        )

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.shape
        cx = self.origin[0] + (np.arange(nx) + 0.5) * self.h
        cy = self.origin[1] + (np.arange(ny) + 0.5) * self.h
        return cx, cy

    def nearest_cell(self, point: tuple[float, float]) -> tuple[int, int]:
        i = int(np.clip(round((point[0] - self.origin[0]) / self.h - 0.5), 0, self.shape[0] - 1))
        j = int(np.clip(round((point[1] - self.origin[1]) / self.h - 0.5), 0, self.shape[1] - 1))
        return i, j

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape, dtype=np.float64)

    def same_grid(self, other: "GridDomain") -> bool:
        return (
            self.shape == other.shape
            and self.h == other.h
            and self.origin == other.origin
        )

    # ---- raster I/O -------------------------------------------------

    def to_pgm(self, path: Union[str, Path], binary: bool = True) -> None:
        """Write the mask as PGM (P5 when binary, P2 otherwise), 255 = inside.

        Rows of the image run along decreasing y so viewers show the domain
        with the usual orientation."""
        img = (self.mask.T[::-1, :] * np.uint8(255))
        nx, ny = self.shape
        path = Path(path)
        meta = f"# h={self.h!r} origin={self.origin[0]!r},{self.origin[1]!r} family={self.family_tag}"
        if binary:
            with open(path, "wb") as fh:
                fh.write(f"P5\n{meta}\n{nx} {ny}\n255\n".encode())
                fh.write(img.tobytes())
        else:
            with open(path, "w") as fh:
                fh.write(f"P2\n{meta}\n{nx} {ny}\n255\n")
                for row in img:
                    fh.write(" ".join(str(int(v)) for v in row) + "\n")

    @staticmethod
    def from_pgm(path: Union[str, Path], h: float | None = None,
                 origin: tuple[float, float] | None = None) -> "GridDomain":
        """Read a P2 or P5 PGM; any nonzero sample counts as inside.

        Spacing and origin are taken from the comment line written by
        to_pgm when present, else from the arguments (default h = 1)."""
        data = Path(path).read_bytes()
        if not data.startswith(b"P2") and not data.startswith(b"P5"):
            raise Unsupported("only P2/P5 PGM rasters are supported")
        magic = data[:2].decode()
        meta_h, meta_origin, meta_family = None, None, ""
        tokens: list[bytes] = []
        pos = 2
        while len(tokens) < 3:
            if pos >= len(data):
                raise EmptyRaster(f"truncated PGM header in {path}")
            ch = data[pos:pos + 1]
            if ch == b"#":
                eol = data.index(b"\n", pos)
                comment = data[pos + 1:eol].decode(errors="replace").strip()
                for part in comment.split():
                    if part.startswith("h="):
                        meta_h = float(part[2:])
                    elif part.startswith("origin="):
                        ox, oy = part[7:].split(",")
                        meta_origin = (float(ox), float(oy))
                    elif part.startswith("family="):
                        meta_family = part[7:]
                pos = eol + 1
            elif ch.isspace():
                pos += 1
            else:
                end = pos
                while end < len(data) and not data[end:end + 1].isspace():
                    end += 1
                tokens.append(data[pos:end])
                pos = end
        nx, ny = int(tokens[0]), int(tokens[1])
        if magic == "P5":
            raw = np.frombuffer(data[pos + 1:pos + 1 + nx * ny], dtype=np.uint8)
        else:
            raw = np.array(data[pos:].split(), dtype=np.int64)
        if raw.size != nx * ny:
            raise EmptyRaster(f"PGM payload has {raw.size} samples, expected {nx * ny}")
        img = raw.reshape(ny, nx)
        mask = (img[::-1, :].T > 0)
        return GridDomain(
            mask=mask,
            h=h if h is not None else (meta_h if meta_h is not None else 1.0),
            origin=origin if origin is not None else (meta_origin if meta_origin is not None else (0.0, 0.0)),
            family_tag=meta_family,
        )


@dataclass(frozen=True)
class DistanceField:
    """Distance to the complement, sampled at cell centers (0 outside)."""

    domain: GridDomain
    rho: np.ndarray

    def __post_init__(self):
        if self.rho.shape != self.domain.shape:
            raise GridMismatch("distance array shape does not match the domain")
        self.rho.setflags(write=False)

    @cached_property
    def incenter(self) -> tuple[int, int]:
        """Cell index of a deepest cell (ties broken by array order)."""
        flat = int(np.argmax(self.rho))
        return np.unravel_index(flat, self.rho.shape)  # type: ignore[return-value]

    @property
    def inradius(self) -> float:
        return float(self.rho[self.incenter])


def distance_transform(domain: GridDomain) -> DistanceField:
    """Exact Euclidean distance from each inside cell center to the nearest
    outside cell center, scaled by h. Outside cells get 0."""
    rho = ndimage.distance_transform_edt(domain.mask, sampling=domain.h)
    return DistanceField(domain=domain, rho=np.asarray(rho, dtype=np.float64))


@dataclass(frozen=True)
class ScalarField:
    """Cell-centered scalar samples; zero-trace means vanishing on the
    layer of cells touching the complement."""

    values: np.ndarray
    h: float
    bc: str = FREE

    def __post_init__(self):
        if self.values.ndim != 2:
            raise Unsupported("scalar fields are planar arrays")
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class VectorField:
    """Vector samples (vx, vy) on the cell lattice. Under the face reading,
    vx[i, j] is the flux coefficient on the face between cells (i, j) and
    (i+1, j); zero-trace fields vanish off the free faces of the domain."""

    vx: np.ndarray
    vy: np.ndarray
    h: float
    bc: str = FREE

    def __post_init__(self):
        if self.vx.shape != self.vy.shape:
            raise GridMismatch("vector components have different shapes")
        if self.vx.ndim != 2:
            raise Unsupported("vector fields are planar arrays")
        object.__setattr__(self, "vx", np.ascontiguousarray(self.vx, dtype=np.float64))
        object.__setattr__(self, "vy", np.ascontiguousarray(self.vy, dtype=np.float64))

    @property
    def shape(self) -> tuple[int, int]:
        return self.vx.shape


Field = Union[ScalarField, VectorField]


@dataclass(frozen=True)
class WeightedNorm:
    """Norm descriptor ||g||: integrate |g|^p against dist(x, complement)^b."""

    p: float
    b: float = 0.0
    field: "DistanceField | None" = None

    def __post_init__(self):
        if not (self.p >= 1):
            raise Unsupported(f"exponent p must be >= 1, got {self.p}")
        if self.b < 0:
            raise Unsupported(f"weight power b must be >= 0, got {self.b}")


def _magnitude(g) -> np.ndarray:
    if isinstance(g, ScalarField):
        return np.abs(g.values)
    if isinstance(g, VectorField):
        return np.hypot(g.vx, g.vy)
    arr = np.asarray(g, dtype=np.float64)
    if arr.ndim == 2:
        return np.abs(arr)
    # stacked components, e.g. the four entries of a Jacobian
    return np.sqrt((arr * arr).sum(axis=0))


def weighted_lp_norm(g, norm: WeightedNorm, dist: DistanceField | None = None) -> float:
    """(sum_{cells in domain} |g|^p rho^b h^2)^(1/p).

    The sum runs over occupied cells only; with b = 0 the weight is 1 there.
    """
    d = dist if dist is not None else norm.field
    if d is None:
        raise GridMismatch("weighted norm needs a distance field")
    mag = _magnitude(g)
    if mag.shape != d.rho.shape:
        raise GridMismatch("field and distance grid shapes differ")
    m = d.domain.mask
    vals = mag[m] ** norm.p
    if norm.b != 0.0:
        vals = vals * d.rho[m] ** norm.b
    total = float(vals.sum()) * d.domain.h ** 2
    return total ** (1.0 / norm.p)


# ---- difference operators -------------------------------------------


def gradient(u: ScalarField) -> VectorField:
    """Forward difference with zero extension past the array edge."""
    a = u.values
    h = u.h
    gx = np.empty_like(a)
    gy = np.empty_like(a)
    gx[:-1, :] = a[1:, :] - a[:-1, :]
    gx[-1, :] = -a[-1, :]
    gy[:, :-1] = a[:, 1:] - a[:, :-1]
    gy[:, -1] = -a[:, -1]
    gx /= h
    gy /= h
    return VectorField(vx=gx, vy=gy, h=h, bc=FREE)


def divergence(v: VectorField) -> ScalarField:
    """Backward difference with zero extension; exact negative adjoint of
    gradient under the plain grid inner product."""
    h = v.h
    dx = np.empty_like(v.vx)
    dy = np.empty_like(v.vy)
    dx[0, :] = v.vx[0, :]
    dx[1:, :] = v.vx[1:, :] - v.vx[:-1, :]
    dy[:, 0] = v.vy[:, 0]
    dy[:, 1:] = v.vy[:, 1:] - v.vy[:, :-1]
    out = (dx + dy) / h
    return ScalarField(values=out, h=h, bc=FREE)


def masked_gradient(u: ScalarField, domain: GridDomain) -> VectorField:
    """Forward differences kept only on faces interior to the domain.

    This is the natural-boundary energy: no difference is taken across the
    boundary, so constants cost nothing. Used by the Poincare estimators."""
    g = gradient(u)
    fx, fy = domain.free_faces
    return VectorField(vx=np.where(fx, g.vx, 0.0), vy=np.where(fy, g.vy, 0.0), h=u.h, bc=FREE)


def jacobian(v: VectorField) -> np.ndarray:
    """Forward-difference Jacobian, stacked (4, nx, ny): rows dvx/dx,
    dvx/dy, dvy/dx, dvy/dy with zero extension."""
    ax = gradient(ScalarField(values=v.vx, h=v.h))
    ay = gradient(ScalarField(values=v.vy, h=v.h))
    return np.stack([ax.vx, ax.vy, ay.vx, ay.vy])


def grid_inner(a: np.ndarray, b: np.ndarray, h: float) -> float:
    if a.shape != b.shape:
        raise GridMismatch("inner product of arrays with different shapes")
    return float((a * b).sum()) * h * h


def integrate(u: ScalarField, domain: GridDomain) -> float:
    if u.shape != domain.shape:
        raise GridMismatch("field and domain shapes differ")
    return float(u.values[domain.mask].sum()) * domain.h ** 2


def mean_value(u: ScalarField, domain: GridDomain) -> float:
    if u.shape != domain.shape:
        raise GridMismatch("field and domain shapes differ")
    return float(u.values[domain.mask].mean())


def project_mean_zero(u: ScalarField, domain: GridDomain) -> ScalarField:
    """Subtract the domain average inside, zero outside."""
    vals = np.where(domain.mask, u.values - mean_value(u, domain), 0.0)
    return ScalarField(values=vals, h=u.h, bc=u.bc)


def zero_trace_scalar(u: ScalarField, domain: GridDomain) -> ScalarField:
    """Zero the values off the domain and on its trace layer."""
    keep = domain.mask & ~domain.trace_layer
    return ScalarField(values=np.where(keep, u.values, 0.0), h=u.h, bc=ZERO_TRACE)


def zero_trace_vector(v: VectorField, domain: GridDomain) -> VectorField:
    """Zero every component off the free faces of the domain."""
    fx, fy = domain.free_faces
    return VectorField(
        vx=np.where(fx, v.vx, 0.0),
        vy=np.where(fy, v.vy, 0.0),
        h=v.h,
        bc=ZERO_TRACE,
    )


def is_zero_trace(v: VectorField, domain: GridDomain) -> bool:
    fx, fy = domain.free_faces
    return bool((v.vx[~fx] == 0.0).all() and (v.vy[~fy] == 0.0).all())
