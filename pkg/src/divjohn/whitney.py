"""Whitney cover of a grid domain, the chain tree, and mean-zero splitting.

The cover is built by quadtree descent over a min-pyramid of the distance
field: a dyadic block is accepted when ell(Q) <= min_Q rho (which forces
Q inside the domain since rho > 0 there), otherwise it splits, down to
single cells. Accepted cubes tile every occupied cell exactly once and
satisfy the two-sided proportionality ell <= dist(Q, complement) <= 4
sqrt(2) ell, the upper bound because the rejected parent either touches
the complement or has dist < 2 ell.

Dilations use sigma = 9/8 realized as an integer collar of max(1, s/16)
cells per side, so even one-cell cubes carry a halo; the halo is clipped
to the connected component of the domain containing the cube, which keeps
local solves on connected sets.

The right-hand-side splitting starts from f restricted to each cube and
pushes cube means toward the root through uniform bumps on two-column
strips across shared faces. Each strip lies in both dilated cubes, so
supports stay inside sigma Q_j, the cellwise sum is preserved exactly,
and every non-root piece ends with zero mean.
"""

from __future__ import annotations

import json
import heapq
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Union

import numpy as np
from scipy import ndimage

from .errors import (
    DecompositionFailed,
    GridMismatch,
    MeanNotZero,
    OverlapTooSmall,
    UnreachableCube,
)
from .grid import DistanceField, GridDomain, ScalarField

SIGMA = 9.0 / 8.0

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class WhitneyCube:
    """Dyadic block of the quadtree: side 2^-level times the padded base."""

    level: int
    anchor: tuple[int, int]  # lower-left cell index
    side_cells: int
    h: float
    sigma: float = SIGMA

    @property
    def ell(self) -> float:
        return self.side_cells * self.h

    @property
    def collar(self) -> int:
        # sigma = 9/8 means s/16 cells per side; floor at one cell so small
        # cubes still overlap their neighbors
        return max(1, self.side_cells // 16)

    @property
    def slices(self) -> tuple[slice, slice]:
        i, j = self.anchor
        s = self.side_cells
        return slice(i, i + s), slice(j, j + s)

    def center(self, dom: GridDomain) -> tuple[float, float]:
        i, j = self.anchor
        s = self.side_cells
        return (
            dom.origin[0] + (i + s / 2.0) * dom.h,
            dom.origin[1] + (j + s / 2.0) * dom.h,
        )

    def dilated_window(self, shape: tuple[int, int]) -> tuple[int, int, int, int]:
        """Index window of sigma Q clipped to the array: (i0, i1, j0, j1)."""
        c = self.collar
        i, j = self.anchor
        s = self.side_cells
        return (
            max(0, i - c),
            min(shape[0], i + s + c),
            max(0, j - c),
            min(shape[1], j + s + c),
        )


def _pyramid(base: np.ndarray, op) -> list[np.ndarray]:
    """Pyramid of 2x2 block reductions, coarsest last."""
    levels = [base]
    cur = base
    while cur.shape[0] > 1:
        n = cur.shape[0] // 2
        cur = op(cur.reshape(n, 2, n, 2), (1, 3))
        levels.append(cur)
    return levels


def whitney_decompose(dom: GridDomain, rho: DistanceField) -> list[WhitneyCube]:
    """Quadtree Whitney cover: accept a block when ell <= min rho over it."""
    if rho.domain is not dom and not dom.same_grid(rho.domain):
        raise GridMismatch("distance field was computed on a different grid")
    nx, ny = dom.shape
    size = 1
    while size < max(nx, ny):
        size *= 2
    padded = np.zeros((size, size), dtype=np.float64)
    padded[:nx, :ny] = rho.rho
    minpyr = _pyramid(padded, np.ndarray.min)
    maxpyr = _pyramid(padded, np.ndarray.max)
    nlevels = len(minpyr)  # pyramid[k] has blocks of side 2^k

    cubes: list[WhitneyCube] = []
    # stack of (k, I, J): block of side 2^k anchored at (I<<k, J<<k)
    stack = [(nlevels - 1, 0, 0)]
    while stack:
        k, bi, bj = stack.pop()
        s = 1 << k
        if minpyr[k][bi, bj] >= s * dom.h:
            cubes.append(
                WhitneyCube(
                    level=nlevels - 1 - k,
                    anchor=(bi << k, bj << k),
                    side_cells=s,
                    h=dom.h,
                )
            )
        elif k > 0 and maxpyr[k][bi, bj] > 0.0:
            # mixed block: descend (children with no domain cells prune here)
            for ci in (2 * bi, 2 * bi + 1):
                for cj in (2 * bj, 2 * bj + 1):
                    stack.append((k - 1, ci, cj))
        # else: block is entirely outside, or a single outside cell
    # deterministic order: coarse to fine, then lexicographic anchor
    cubes.sort(key=lambda q: (q.level, q.anchor))
    return cubes


def cell_owner_map(dom: GridDomain, cubes: list[WhitneyCube]) -> np.ndarray:
    """Index of the covering cube per cell, -1 outside the domain."""
    owner = np.full(dom.shape, -1, dtype=np.int32)
    for idx, q in enumerate(cubes):
        si, sj = q.slices
        owner[si, sj] = idx
    owner[~dom.mask] = -1
    return owner


def sigma_region(dom: GridDomain, cube: WhitneyCube):
    """Dilated cube intersected with the domain, restricted to the
    connected component containing the cube. Returns (window, local mask)."""
    i0, i1, j0, j1 = cube.dilated_window(dom.shape)
    local = dom.mask[i0:i1, j0:j1].copy()
    labels, n = ndimage.label(local, structure=_STRUCT4)
    if n > 1:
        seed = labels[cube.anchor[0] - i0, cube.anchor[1] - j0]
        local = labels == seed
    return (i0, i1, j0, j1), local


def overlap_constant(dom: GridDomain, cubes: list[WhitneyCube]) -> int:
    """Max over cells of how many dilated cubes cover the cell."""
    counts = np.zeros(dom.shape, dtype=np.int32)
    for q in cubes:
        (i0, i1, j0, j1), local = sigma_region(dom, q)
        counts[i0:i1, j0:j1] += local
    return int(counts.max())


@dataclass
class WhitneyTree:
    """Cubes rooted at the one containing x0; parent edges cross shared faces."""

    domain: GridDomain
    cubes: list[WhitneyCube]
    parent: np.ndarray  # parent index per cube, -1 at the root
    root: int
    depth: np.ndarray  # edges to the root per cube

    @cached_property
    def owner(self) -> np.ndarray:
        return cell_owner_map(self.domain, self.cubes)

    @cached_property
    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in self.cubes]
        for j, p in enumerate(self.parent):
            if p >= 0:
                kids[p].append(j)
        return kids

    def chain(self, j: int) -> list[int]:
        """Cube indices from j to the root, inclusive."""
        out = [j]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def max_depth(self) -> int:
        return int(self.depth.max())

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        payload = {
            "h": self.domain.h,
            "sigma": self.cubes[0].sigma if self.cubes else SIGMA,
            "root": self.root,
            "cubes": [
                {"level": q.level, "anchor": list(q.anchor), "side_cells": q.side_cells}
                for q in self.cubes
            ],
            "parent": [int(p) for p in self.parent],
        }
        text = json.dumps(payload)
        if path is not None:
            Path(path).write_text(text)
        return text

    @staticmethod
    def from_json(text: Union[str, Path], dom: GridDomain) -> "WhitneyTree":
        if isinstance(text, Path):
            text = text.read_text()
        obj = json.loads(text)
        cubes = [
            WhitneyCube(
                level=c["level"],
                anchor=tuple(c["anchor"]),
                side_cells=c["side_cells"],
                h=obj["h"],
                sigma=obj.get("sigma", SIGMA),
            )
            for c in obj["cubes"]
        ]
        parent = np.asarray(obj["parent"], dtype=np.int64)
        depth = _depths(parent, obj["root"])
        return WhitneyTree(
            domain=dom, cubes=cubes, parent=parent, root=obj["root"], depth=depth
        )


def _depths(parent: np.ndarray, root: int) -> np.ndarray:
    depth = np.full(len(parent), -1, dtype=np.int64)
    depth[root] = 0
    for j in range(len(parent)):
        if depth[j] >= 0:
            continue
        trail = []
        k = j
        while k >= 0 and depth[k] < 0:
            trail.append(k)
            k = int(parent[k])
        if k < 0:
            continue  # disconnected from the root: depth stays -1
        base = int(depth[k])
        for off, node in enumerate(reversed(trail)):
            depth[node] = base + off + 1
    return depth


def _face_adjacency(dom: GridDomain, cubes: list[WhitneyCube], owner: np.ndarray):
    """Neighbor sets across shared cube faces (corner contact excluded)."""
    nbrs: list[set] = [set() for _ in cubes]
    nx, ny = dom.shape
    for idx, q in enumerate(cubes):
        i, j = q.anchor
        s = q.side_cells
        strips = []
        if i + s < nx:
            strips.append(owner[i + s, j : j + s])
        if i > 0:
            strips.append(owner[i - 1, j : j + s])
        if j + s < ny:
            strips.append(owner[i : i + s, j + s])
        if j > 0:
            strips.append(owner[i : i + s, j - 1])
        for strip in strips:
            for other in np.unique(strip):
                if other >= 0 and other != idx:
                    nbrs[idx].add(int(other))
    return nbrs


def build_tree(dom: GridDomain, cubes: list[WhitneyCube], x0: tuple[float, float]) -> WhitneyTree:
    """Root the cover at the cube containing x0 and pick parents along
    shortest cube-graph paths, edges weighted by the mean of 1/ell."""
    owner = cell_owner_map(dom, cubes)
    ci, cj = dom.nearest_cell(x0)
    root = int(owner[ci, cj])
    if root < 0:
        raise UnreachableCube(f"x0 = {x0} does not lie in any cube")
    nbrs = _face_adjacency(dom, cubes, owner)

    n = len(cubes)
    dist = np.full(n, np.inf)
    parent = np.full(n, -1, dtype=np.int64)
    dist[root] = 0.0
    heap = [(0.0, root)]
    inv_ell = np.array([1.0 / q.ell for q in cubes])
    done = np.zeros(n, dtype=bool)
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v in sorted(nbrs[u]):
            if done[v]:
                continue
            nd = d + 0.5 * dom.h * (inv_ell[u] + inv_ell[v])
            if nd < dist[v] - 1e-15:
                dist[v] = nd
                parent[v] = u
                heapq.heappush(heap, (nd, v))
    if not done.all():
        missing = int(np.flatnonzero(~done)[0])
        raise UnreachableCube(
            f"cube {missing} at {cubes[missing].anchor} cannot reach the root"
        )
    depth = _depths(parent, root)
    tree = WhitneyTree(domain=dom, cubes=cubes, parent=parent, root=root, depth=depth)
    tree.__dict__["owner"] = owner
    return tree


def _transfer_support(a: WhitneyCube, b: WhitneyCube, shape: tuple[int, int]):
    """Support of the mass-transfer bump between face-adjacent cubes: the
    overlap of the two dilated windows restricted to the cubes themselves,
    so it stays inside both dilations, inside the domain, and inside the
    cubes' own component. Returns a boolean patch with its window, or None
    when the cubes do not touch."""
    ai0, ai1, aj0, aj1 = a.dilated_window(shape)
    bi0, bi1, bj0, bj1 = b.dilated_window(shape)
    i0, i1 = max(ai0, bi0), min(ai1, bi1)
    j0, j1 = max(aj0, bj0), min(aj1, bj1)
    if i0 >= i1 or j0 >= j1:
        return None
    patch = np.zeros((i1 - i0, j1 - j0), dtype=bool)
    for q in (a, b):
        qi, qj = q.anchor
        s = q.side_cells
        lo_i, hi_i = max(i0, qi), min(i1, qi + s)
        lo_j, hi_j = max(j0, qj), min(j1, qj + s)
        if lo_i < hi_i and lo_j < hi_j:
            patch[lo_i - i0 : hi_i - i0, lo_j - j0 : hi_j - j0] = True
    if not patch.any():
        return None
    return (i0, i1, j0, j1), patch


@dataclass
class RhsDecomposition:
    """Windowed pieces, one per cube, each supported in its dilated cube."""

    tree: WhitneyTree
    windows: list[tuple[int, int, int, int]]
    arrays: list[np.ndarray]
    stability_p: float
    c_stab: float

    def piece(self, j: int) -> ScalarField:
        full = np.zeros(self.tree.domain.shape)
        i0, i1, j0, j1 = self.windows[j]
        full[i0:i1, j0:j1] = self.arrays[j]
        return ScalarField(values=full, h=self.tree.domain.h)

    def sum_field(self) -> ScalarField:
        total = np.zeros(self.tree.domain.shape)
        for (i0, i1, j0, j1), arr in zip(self.windows, self.arrays):
            total[i0:i1, j0:j1] += arr
        return ScalarField(values=total, h=self.tree.domain.h)

    def piece_integral(self, j: int) -> float:
        return float(self.arrays[j].sum()) * self.tree.domain.h ** 2

    def piece_norm(self, j: int, p: float) -> float:
        h = self.tree.domain.h
        return float((np.abs(self.arrays[j]) ** p).sum() * h * h) ** (1.0 / p)

    def __len__(self) -> int:
        return len(self.arrays)


def decompose_rhs(f: ScalarField, tree: WhitneyTree, p: float = 2.0) -> RhsDecomposition:
    """Split a mean-zero f into per-cube mean-zero pieces summing back to f.

    Children are handled before their tree parents (depth-descending order,
    ties by level then anchor, so runs are reproducible); each piece's mass
    is moved to the parent through a uniform bump on the shared-face strip,
    which leaves the cellwise sum of pieces untouched."""
    dom = tree.domain
    if f.shape != dom.shape:
        raise GridMismatch("field and domain shapes differ")
    h = dom.h
    total = float(f.values[dom.mask].sum()) * h * h
    abs_total = float(np.abs(f.values[dom.mask]).sum()) * h * h
    if abs(total) > 1e-10 * max(abs_total, 1e-300):
        raise MeanNotZero(f"integral of f is {total:.3e}, |f| integral {abs_total:.3e}")

    windows = [q.dilated_window(dom.shape) for q in tree.cubes]
    arrays: list[np.ndarray] = []
    for q, (i0, i1, j0, j1) in zip(tree.cubes, windows):
        arr = np.zeros((i1 - i0, j1 - j0))
        si, sj = q.slices
        sub = np.where(dom.mask[si, sj], f.values[si, sj], 0.0)
        arr[si.start - i0 : si.stop - i0, sj.start - j0 : sj.stop - j0] = sub
        arrays.append(arr)

    order = sorted(
        range(len(tree.cubes)),
        key=lambda j: (-int(tree.depth[j]), tree.cubes[j].level, tree.cubes[j].anchor),
    )
    for j in order:
        pj = int(tree.parent[j])
        if pj < 0:
            continue
        mass = float(arrays[j].sum()) * h * h
        if mass == 0.0:
            continue
        support = _transfer_support(tree.cubes[j], tree.cubes[pj], dom.shape)
        if support is None:
            raise OverlapTooSmall(
                f"cube {j} shares no transfer region with its parent {pj}"
            )
        (oi0, oi1, oj0, oj1), patch = support
        density = mass / (float(patch.sum()) * h * h)
        bump = np.where(patch, density, 0.0)
        # subtract the bump from piece j, add it to the parent piece
        for idx, sign in ((j, -1.0), (pj, 1.0)):
            i0, i1, j0, j1 = windows[idx]
            arrays[idx][oi0 - i0 : oi1 - i0, oj0 - j0 : oj1 - j0] += sign * bump

    # verify the advertised invariants before returning
    f_norm_p = float((np.abs(f.values[dom.mask]) ** p).sum()) * h * h
    stab = 0.0
    for j, arr in enumerate(arrays):
        piece_int = float(arr.sum()) * h * h
        if j != tree.root and abs(piece_int) > 1e-10 * max(abs_total, 1e-300):
            raise DecompositionFailed(
                f"piece {j} kept mean {piece_int:.3e} after transfers"
            )
        stab += float((np.abs(arr) ** p).sum()) * h * h
    c_stab = stab / f_norm_p if f_norm_p > 0 else 0.0
    return RhsDecomposition(
        tree=tree, windows=windows, arrays=arrays, stability_p=p, c_stab=c_stab
    )
