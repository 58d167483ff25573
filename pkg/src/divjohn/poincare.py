"""Weighted Poincare and Hardy constants, approached from below.

The best constant in

    (integral |u - u_mean|^q)^(p/q)  <=  C * integral |grad u|^p rho^b

is the maximum of a Rayleigh-type quotient over discrete scalar fields.
For p = q = 2 the maximizer solves a generalized symmetric eigenproblem
and inverse power iteration nails it; for general exponents we run
projected gradient ascent from many starts. Explicit trial fields built
from the domain geometry (ramps over annuli around a removed ball) give
certified lower bounds by pure evaluation.

Gradient energies live on interior faces: the difference across a face is
weighted by the mean of rho^b at the two adjacent cell centers, and no
difference is taken across the boundary, so constants cost nothing.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from .errors import (
    MeanNotZero,
    NotASobolevTriple,
    PreconditionResidual,
    Unsupported,
)
from .grid import (
    DistanceField,
    GridDomain,
    ScalarField,
    VectorField,
    divergence,
    gradient,
    grid_inner,
    is_zero_trace,
    mean_value,
)

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

Point = tuple[float, float]


# ------------------------------------------------------------- exponents


@dataclass(frozen=True)
class SobolevTriple:
    """Exponents (p, q) with the weight power b = p(n/q + 1 - n/p).

    diagnostic marks triples built outside the admissibility relations
    (only the unweighted b = 0, p = q = 2 eigensolver check uses this).
    """

    p: float
    q: float
    b: float
    n: int = 2
    diagnostic: bool = False

    @property
    def p_star(self) -> float:
        """Sobolev conjugate np/(n-p); inf when p >= n."""
        if self.p >= self.n:
            return math.inf
        return self.n * self.p / (self.n - self.p)

    @property
    def p_prime(self) -> float:
        """Holder conjugate p/(p-1); inf when p = 1."""
        if self.p == 1.0:
            return math.inf
        return self.p / (self.p - 1.0)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "b": self.b,
            "n": self.n,
            "diagnostic": self.diagnostic,
        }


def validate_triple(p: float, q: float, n: int = 2) -> SobolevTriple:
    """Accept (p, q) with 1 <= p <= q < inf and n/q + 1 - n/p >= 0."""
    if n != 2:
        raise Unsupported(f"only the planar case n = 2 is implemented, got n = {n}")
    if not (p >= 1.0):
        raise NotASobolevTriple(f"p must satisfy p >= 1, got {p}")
    if not (p <= q):
        raise NotASobolevTriple(f"need p <= q, got p = {p}, q = {q}")
    if not math.isfinite(q):
        raise NotASobolevTriple("q must be finite")
    gap = n / q + 1.0 - n / p
    if gap < 0:
        raise NotASobolevTriple(
            f"(p, q) = ({p}, {q}) lies beyond the Sobolev range: n/q + 1 - n/p = {gap:.4g} < 0"
        )
    return SobolevTriple(p=float(p), q=float(q), b=float(p) * gap, n=n)


def unweighted_diagnostic() -> SobolevTriple:
    """p = q = 2 with the weight forced off; not a Sobolev triple.

    Exists to validate the eigensolver against the classical Neumann
    constant 1/pi^2 on the unit square."""
    return SobolevTriple(p=2.0, q=2.0, b=0.0, n=2, diagnostic=True)


# ------------------------------------------------------------- estimates


@dataclass
class ConstantEstimate:
    """A lower estimate of a best constant, with its achieving field.

    kind 'lower_bound_certified' means value is the pure evaluation of the
    recorded trial (re-check by plugging it in); 'ascent_estimate' means an
    optimizer produced the trial (value is still its evaluated quotient)."""

    value: float
    kind: str
    trial: ScalarField
    iterations: int
    residual: float
    converged: bool = True
    seed: Optional[int] = None


# ------------------------------------------------- discrete energy forms


def _face_weights(dom: GridDomain, rho: DistanceField, b: float):
    """Mean of rho^b at the two cells of each interior face (0 elsewhere)."""
    fx, fy = dom.free_faces
    if b == 0.0:
        return fx.astype(np.float64), fy.astype(np.float64)
    rb = np.where(dom.mask, rho.rho, 0.0) ** b
    wx = np.zeros(dom.shape)
    wy = np.zeros(dom.shape)
    wx[:-1, :] = 0.5 * (rb[:-1, :] + rb[1:, :])
    wy[:, :-1] = 0.5 * (rb[:, :-1] + rb[:, 1:])
    return np.where(fx, wx, 0.0), np.where(fy, wy, 0.0)


def _face_diffs(dom: GridDomain, u: np.ndarray):
    fx, fy = dom.free_faces
    dx = np.zeros(dom.shape)
    dy = np.zeros(dom.shape)
    dx[:-1, :] = u[1:, :] - u[:-1, :]
    dy[:, :-1] = u[:, 1:] - u[:, :-1]
    return np.where(fx, dx, 0.0), np.where(fy, dy, 0.0)


def gradient_energy(
    dom: GridDomain, rho: DistanceField, u, p: float, b: float
) -> float:
    """sum over interior faces of h^2 * w_face * |du/h|^p."""
    if isinstance(u, ScalarField):
        u = u.values
    wx, wy = _face_weights(dom, rho, b)
    dx, dy = _face_diffs(dom, u)
    h = dom.h
    tot = (wx * np.abs(dx) ** p).sum() + (wy * np.abs(dy) ** p).sum()
    return float(tot) * h ** (2.0 - p)


def _resolve_cube(dom: GridDomain, cube) -> np.ndarray:
    """Cube argument -> boolean cell mask, checked compactly inside."""
    if cube is None:
        raise Unsupported("zero_on_cube mode needs a cube")
    if hasattr(cube, "slices"):
        si, sj = cube.slices
        q = np.zeros(dom.shape, dtype=bool)
        q[si, sj] = True
    elif isinstance(cube, tuple) and len(cube) == 2 and isinstance(cube[0], slice):
        q = np.zeros(dom.shape, dtype=bool)
        q[cube[0], cube[1]] = True
    elif isinstance(cube, tuple) and len(cube) == 4:
        x0, y0, x1, y1 = cube
        cx, cy = dom.centers
        q = ((cx[:, None] >= x0) & (cx[:, None] <= x1)
             & (cy[None, :] >= y0) & (cy[None, :] <= y1))
    else:
        raise Unsupported("cube must have .slices, be a slice pair, or a rect tuple")
    if not q.any():
        raise Unsupported("cube contains no cells")
    if not (q <= dom.mask).all() or (q & dom.trace_layer).any():
        raise Unsupported("cube must sit compactly inside the domain")
    return q


def evaluate_quotient(
    dom: GridDomain,
    rho: DistanceField,
    triple: SobolevTriple,
    u: ScalarField,
    mode: str = "mean_zero",
    cube=None,
) -> float:
    """The Rayleigh quotient ||u - u_mean||_q^p / integral |grad u|^p rho^b.

    In zero_on_cube mode the numerator is ||u||_q^p and u is read as zero
    on the cube. Returns 0.0 on degenerate input (constant fields)."""
    vals = np.where(dom.mask, u.values, 0.0)
    if mode == "mean_zero":
        v = np.where(dom.mask, vals - vals[dom.mask].mean(), 0.0)
    elif mode == "zero_on_cube":
        q_mask = _resolve_cube(dom, cube)
        v = np.where(q_mask, 0.0, vals)
    else:
        raise Unsupported(f"unknown mode {mode!r}")
    h = dom.h
    num = float((np.abs(v[dom.mask]) ** triple.q).sum()) * h * h
    den = gradient_energy(dom, rho, v, triple.p, triple.b)
    if den <= 0.0 or num <= 0.0:
        return 0.0
    return num ** (triple.p / triple.q) / den


# --------------------------------------------------- eigen path (p=q=2)


def _assemble_stiffness(dom: GridDomain, rho: DistanceField, b: float, keep: np.ndarray):
    """Quadratic form sum_faces w_f (u_B - u_A)^2 on the kept cells.

    Faces whose other cell is inside the domain but not kept pin the kept
    side (the dropped value reads as 0)."""
    idx = -np.ones(dom.shape, dtype=np.int64)
    nk = int(keep.sum())
    idx[keep] = np.arange(nk)
    wx, wy = _face_weights(dom, rho, b)
    rows, cols, vals = [], [], []
    for w, shift in ((wx, (1, 0)), (wy, (0, 1))):
        fi, fj = np.nonzero(w)
        a = idx[fi, fj]
        bb = idx[fi + shift[0], fj + shift[1]]
        wf = w[fi, fj]
        both = (a >= 0) & (bb >= 0)
        rows += [a[both], bb[both], a[both], bb[both]]
        cols += [a[both], bb[both], bb[both], a[both]]
        vals += [wf[both], wf[both], -wf[both], -wf[both]]
        for side, other in ((a, bb), (bb, a)):
            pin = (side >= 0) & (other < 0)
            rows.append(side[pin])
            cols.append(side[pin])
            vals.append(wf[pin])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    K = coo_matrix((vals, (rows, cols)), shape=(nk, nk)).tocsc()
    return K, idx


def _inverse_power_max(K, m, project_constants: bool, tol: float, max_iter: int):
    """Largest lambda of  m-weighted mass vs K:  max x'Mx / x'Kx.

    Power iteration on (K + eps M)^(-1) M; the shift leaves eigenvectors
    unchanged and keeps the factorization nonsingular when constants span
    the K-nullspace (project_constants then holds the iterate mean-zero)."""
    nk = len(m)
    eps = 1e-6 * float(K.diagonal().mean() / m.mean()) if project_constants else 0.0
    shifted = K + coo_matrix((eps * m, (np.arange(nk), np.arange(nk)))).tocsc()
    lu = splu(shifted)
    rng = np.random.default_rng(12345)
    x = rng.standard_normal(nk)
    lam_prev = 0.0
    mw = m / m.sum()
    iterations = 0
    residual = math.inf
    converged = False
    for iterations in range(1, max_iter + 1):
        if project_constants:
            x = x - (mw * x).sum() / mw.sum() * np.ones(nk)
        x = lu.solve(m * x)
        if project_constants:
            x = x - (mw * x).sum() / mw.sum() * np.ones(nk)
        x /= np.linalg.norm(x)
        kx = K @ x
        lam = float((m * x * x).sum() / (x @ kx))
        residual = abs(lam - lam_prev) / max(abs(lam), 1e-300)
        lam_prev = lam
        if residual <= tol:
            converged = True
            break
    return x, lam_prev, iterations, residual, converged


# --------------------------------------------------------- ascent path


def _make_preconditioner(dom: GridDomain, rho: DistanceField, b: float, keep: np.ndarray):
    """Inverse of the p = 2 stiffness with weight rho^b on the kept cells.

    Ascent directions run through this solve (a Sobolev-gradient step), so
    the search moves in the energy's own geometry; for p = q = 2 the
    preconditioned ascent recovers inverse-power behavior. When nothing
    pins the form (mean-zero mode keeps every cell) a small mass shift
    keeps the factorization nonsingular."""
    K, _ = _assemble_stiffness(dom, rho, b, keep)
    nk = int(keep.sum())
    pinned = bool(keep.sum() < dom.mask.sum())
    if not pinned:
        m = np.full(nk, dom.h * dom.h)
        eps = 1e-6 * float(K.diagonal().mean() / m.mean())
        K = (K + coo_matrix((eps * m, (np.arange(nk), np.arange(nk))),
                            shape=(nk, nk))).tocsc()
    lu = splu(K)

    def apply(arr: np.ndarray) -> np.ndarray:
        out = np.zeros_like(arr)
        out[keep] = lu.solve(arr[keep])
        return out

    return apply


def _ascend(u0, num_fn, den_fn, grad_fn, project, max_iter, tol, precond=None):
    """Backtracking gradient ascent on num/den; returns the best field.

    The direction is the (optionally preconditioned) gradient of
    log(num/den), re-projected onto the constraint set; the step grows on
    success and halves on failure, and convergence means the quotient
    moved by less than tol for 10 straight iterations."""
    u = project(np.asarray(u0, dtype=np.float64))
    nrm = np.linalg.norm(u)
    if nrm == 0.0:
        return u, 0.0, 0, math.inf, True
    u = u / nrm
    num, den = num_fn(u), den_fn(u)
    if den <= 0.0 or num <= 0.0:
        return u, 0.0, 0, math.inf, True
    ratio = num / den
    step = 0.5
    streak = 0
    iterations = 0
    rel = math.inf
    for iterations in range(1, max_iter + 1):
        g = grad_fn(u, num, den)
        if precond is not None:
            g = precond(g)
        g = project(g)
        gn = np.linalg.norm(g)
        if gn == 0.0:
            streak = 10
            rel = 0.0
            break
        improved = False
        for _ in range(40):
            cand = project(u + step * g / gn)
            cn = np.linalg.norm(cand)
            if cn == 0.0:
                step *= 0.5
                continue
            cand /= cn
            cnum, cden = num_fn(cand), den_fn(cand)
            if cden > 0.0 and cnum / cden > ratio:
                rel = (cnum / cden - ratio) / ratio
                u, num, den, ratio = cand, cnum, cden, cnum / cden
                step = min(step * 1.3, 1e3)
                improved = True
                break
            step *= 0.5
        if not improved:
            rel = 0.0
        streak = streak + 1 if rel < tol else 0
        if streak >= 10:
            break
    return u, ratio, iterations, rel, streak >= 10


def _run_starts(starts, one_start, parallel=False):
    """Optimize every start; deterministic best-by-value, ties to the
    earliest start. Serial by default: the starts share one factorized
    preconditioner, whose solve is not reentrant."""
    if parallel and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=min(8, len(starts))) as pool:
            results = list(pool.map(one_start, starts))
    else:
        results = [one_start(s) for s in starts]
    best = max(range(len(results)), key=lambda k: (results[k][1], -k))
    return results[best]


# ------------------------------------------------------------ poincare


def poincare_constant(
    dom: GridDomain,
    rho: DistanceField,
    triple: SobolevTriple,
    mode: str = "mean_zero",
    cube=None,
    method: str = "auto",
    starts: Optional[Sequence[ScalarField]] = None,
    n_starts: int = 20,
    seed: int = 0,
    max_iter: int = 100000,
    tol: float = 1e-8,
) -> ConstantEstimate:
    """Best constant of the weighted Poincare inequality on the grid.

    p = q = 2 (method 'auto' or 'eigen'): inverse power iteration on the
    generalized eigenproblem of the rho^b-weighted stiffness against the
    mass, with the mean-zero or cube-zero constraint; eigenvalue tolerance
    tol. Otherwise: projected gradient ascent from n_starts random fields
    plus any provided trial starts, quotient-change tolerance tol held for
    10 iterations, total iteration budget max_iter split across starts.
    The returned value is always the evaluated quotient of the returned
    trial, so it is a lower bound on the discrete best constant."""
    if mode not in ("mean_zero", "zero_on_cube"):
        raise Unsupported(f"unknown mode {mode!r}")
    q_mask = _resolve_cube(dom, cube) if mode == "zero_on_cube" else None
    use_eigen = method != "ascent" and triple.p == 2.0 and triple.q == 2.0
    if method == "eigen" and not use_eigen:
        raise Unsupported("the eigen path needs p = q = 2")

    h = dom.h
    if use_eigen:
        keep = dom.mask if q_mask is None else (dom.mask & ~q_mask)
        K, idx = _assemble_stiffness(dom, rho, triple.b, keep)
        m = np.full(int(keep.sum()), h * h)
        x, _, iters, res, conv = _inverse_power_max(
            K, m, project_constants=(mode == "mean_zero"), tol=tol, max_iter=1000
        )
        vals = np.zeros(dom.shape)
        vals[keep] = x
        trial = ScalarField(values=vals, h=h)
        value = evaluate_quotient(dom, rho, triple, trial, mode=mode, cube=cube)
        return ConstantEstimate(
            value=value,
            kind="ascent_estimate",
            trial=trial,
            iterations=iters,
            residual=res,
            converged=conv,
            seed=seed,
        )

    mask = dom.mask
    p, q = triple.p, triple.q
    wx, wy = _face_weights(dom, rho, triple.b)
    hp = h ** (2.0 - p)

    if mode == "mean_zero":
        def project(u):
            out = np.where(mask, u, 0.0)
            return np.where(mask, out - out[mask].mean(), 0.0)
    else:
        live = mask & ~q_mask

        def project(u):
            return np.where(live, u, 0.0)

    def num_fn(u):
        # the quotient's numerator ||u||_q^p, so num/den is scale-invariant
        s = float((np.abs(u[mask]) ** q).sum()) * h * h
        return s ** (p / q)

    def den_fn(u):
        dx, dy = _face_diffs(dom, u)
        return (float((wx * np.abs(dx) ** p).sum())
                + float((wy * np.abs(dy) ** p).sum())) * hp

    def grad_fn(u, num, den):
        s = num ** (q / p)  # raw q-integral
        gn = np.where(mask, np.abs(u) ** (q - 1.0) * np.sign(u), 0.0)
        gn *= p * h * h / s  # d log(s^(p/q)) / du
        dx, dy = _face_diffs(dom, u)
        ex = wx * np.abs(dx) ** (p - 1.0) * np.sign(dx)
        ey = wy * np.abs(dy) ** (p - 1.0) * np.sign(dy)
        ge = np.zeros(dom.shape)
        ge[1:, :] += ex[:-1, :]
        ge[:-1, :] -= ex[:-1, :]
        ge[:, 1:] += ey[:, :-1]
        ge[:, :-1] -= ey[:, :-1]
        ge *= p * hp / den
        return gn - ge

    rng = np.random.default_rng(seed)
    start_fields = [rng.standard_normal(dom.shape) for _ in range(n_starts)]
    if starts:
        start_fields += [np.asarray(s.values, dtype=np.float64) for s in starts]
    per_start = min(max_iter, max(1000, max_iter // max(1, len(start_fields))))
    keep = mask if mode == "mean_zero" else (mask & ~q_mask)
    precond = _make_preconditioner(dom, rho, triple.b, keep)

    def one(u0):
        return _ascend(u0, num_fn, den_fn, grad_fn, project, per_start, tol, precond)

    u, _, iters, res, conv = _run_starts(start_fields, one)
    trial = ScalarField(values=np.where(mask, u, 0.0), h=h)
    # report the quotient in the inequality's own normalization
    value = evaluate_quotient(dom, rho, triple, trial, mode=mode, cube=cube)
    return ConstantEstimate(
        value=value,
        kind="ascent_estimate",
        trial=trial,
        iterations=iters,
        residual=res,
        converged=conv,
        seed=seed,
    )


def certified_lower_bound(
    dom: GridDomain,
    rho: DistanceField,
    triple: SobolevTriple,
    trials: Sequence[ScalarField],
    mode: str = "mean_zero",
    cube=None,
) -> ConstantEstimate:
    """Best quotient among explicit trial fields; pure evaluation."""
    if not trials:
        raise Unsupported("need at least one trial field")
    values = [
        evaluate_quotient(dom, rho, triple, t, mode=mode, cube=cube) for t in trials
    ]
    k = int(np.argmax(values))
    return ConstantEstimate(
        value=values[k],
        kind="lower_bound_certified",
        trial=trials[k],
        iterations=0,
        residual=0.0,
        converged=True,
    )


# ------------------------------------------------------- trial functions


def _components_off_ball(dom: GridDomain, w: Point, d: float):
    cx, cy = dom.centers
    dist = np.hypot(cx[:, None] - w[0], cy[None, :] - w[1])
    rest = dom.mask & (dist >= d)
    labels, n = ndimage.label(rest, structure=_STRUCT4)
    return dist, labels, n


def halving_radii(
    dom: GridDomain, w: Point, d: float, max_halvings: int = 30
) -> list[list[float]]:
    """Per component T of the domain minus B(w, d): radii r_0 = 2d < r_1 < ...
    with |T(r_j)| = 2^-j |T(2d)| within one cell's area, where T(r) is the
    part of T beyond distance r from w. Components with empty T(2d) get []."""
    if d <= 0:
        raise Unsupported("d must be positive")
    dist, labels, n = _components_off_ball(dom, w, d)
    h2 = dom.h * dom.h
    out: list[list[float]] = []
    for comp in range(1, n + 1):
        tmask = labels == comp
        dvals = np.sort(dist[tmask])
        area0 = float((dvals >= 2 * d).sum()) * h2
        if area0 <= 0.0:
            out.append([])
            continue
        # ties (symmetric grids) force splits between distinct values only
        vals, counts = np.unique(dvals, return_counts=True)
        suffix = np.cumsum(counts[::-1])[::-1]
        radii = [2.0 * d]
        for j in range(1, max_halvings + 1):
            target = area0 / (1 << j)
            if target < h2:
                break
            want = target / h2
            k = int(np.argmin(np.abs(suffix - want)))
            if k <= 0:
                break
            r = float(0.5 * (vals[k - 1] + vals[k]))
            if r <= radii[-1]:
                break
            achieved = float(suffix[k]) * h2
            if abs(achieved - target) > h2:
                break
            radii.append(r)
        out.append(radii)
    return out


def proof_trial_functions(
    dom: GridDomain, rho: DistanceField, w: Point, d: float
) -> list[ScalarField]:
    """Explicit Poincare trial fields from the geometry around B(w, d).

    For every component T of the domain minus B(w, d) whose far part T(2d)
    is nonempty: first the ramp cutoff (0 off T, distance-to-ball ramp up
    to 1 on T(2d)), then one annulus cutoff per consecutive pair of the
    halving radii (0 below r_{j-1}, 1 beyond r_j). All fields are supported
    on a single component and evaluate to certified lower bounds."""
    if d <= 0:
        raise Unsupported("d must be positive")
    dist, labels, n = _components_off_ball(dom, w, d)
    radii_per_comp = halving_radii(dom, w, d)
    fields: list[ScalarField] = []
    for comp in range(1, n + 1):
        radii = radii_per_comp[comp - 1]
        if not radii:
            continue
        tmask = labels == comp
        ramp = np.clip((dist - d) / d, 0.0, 1.0)
        fields.append(ScalarField(values=np.where(tmask, ramp, 0.0), h=dom.h))
        for r_lo, r_hi in zip(radii[:-1], radii[1:]):
            ann = np.clip((dist - r_lo) / (r_hi - r_lo), 0.0, 1.0)
            fields.append(ScalarField(values=np.where(tmask, ann, 0.0), h=dom.h))
    return fields


# ---------------------------------------------------------------- hardy


def hardy_quotient(dom: GridDomain, rho: DistanceField, u: ScalarField, p: float) -> float:
    """||u/rho||_p^p / ||grad u||_p^p for a zero-trace scalar field."""
    live = dom.mask & ~dom.trace_layer
    vals = np.where(live, u.values, 0.0)
    h = dom.h
    num = float((np.abs(vals[live]) ** p / rho.rho[live] ** p).sum()) * h * h
    den = gradient_energy(dom, rho, vals, p, 0.0)
    if den <= 0.0 or num <= 0.0:
        return 0.0
    return num / den


def hardy_constant(
    dom: GridDomain,
    rho: DistanceField,
    p: float,
    method: str = "auto",
    n_starts: int = 20,
    seed: int = 0,
    max_iter: int = 100000,
    tol: float = 1e-8,
) -> ConstantEstimate:
    """Best constant of ||v/rho||_p^p <= C ||grad v||_p^p over zero-trace v.

    Fields vanish on the trace layer; differences to that layer still count
    in the energy, which is the discrete zero-boundary condition. p = 2 via
    inverse power iteration, otherwise multi-start projected ascent."""
    if not (p > 1.0):
        raise Unsupported(f"the Hardy quotient needs p > 1, got {p}")
    live = dom.mask & ~dom.trace_layer
    if not live.any():
        raise Unsupported("domain has no cells beyond its trace layer")
    h = dom.h
    use_eigen = method != "ascent" and p == 2.0
    if method == "eigen" and not use_eigen:
        raise Unsupported("the eigen path needs p = 2")

    if use_eigen:
        K, idx = _assemble_stiffness(dom, rho, 0.0, live)
        m = h * h / rho.rho[live] ** 2
        x, _, iters, res, conv = _inverse_power_max(
            K, m, project_constants=False, tol=tol, max_iter=1000
        )
        vals = np.zeros(dom.shape)
        vals[live] = x
        trial = ScalarField(values=vals, h=h)
        value = hardy_quotient(dom, rho, trial, p)
        return ConstantEstimate(
            value=value,
            kind="ascent_estimate",
            trial=trial,
            iterations=iters,
            residual=res,
            converged=conv,
            seed=seed,
        )

    wx, wy = _face_weights(dom, rho, 0.0)
    hp = h ** (2.0 - p)
    omega = np.where(live, 1.0 / np.where(live, rho.rho, 1.0) ** p, 0.0)

    def project(u):
        return np.where(live, u, 0.0)

    def num_fn(u):
        return float((np.abs(u) ** p * omega).sum()) * h * h

    def den_fn(u):
        dx, dy = _face_diffs(dom, u)
        return (float((wx * np.abs(dx) ** p).sum())
                + float((wy * np.abs(dy) ** p).sum())) * hp

    def grad_fn(u, num, den):
        gn = p * np.abs(u) ** (p - 1.0) * np.sign(u) * omega * h * h / num
        dx, dy = _face_diffs(dom, u)
        ex = wx * np.abs(dx) ** (p - 1.0) * np.sign(dx)
        ey = wy * np.abs(dy) ** (p - 1.0) * np.sign(dy)
        ge = np.zeros(dom.shape)
        ge[1:, :] += ex[:-1, :]
        ge[:-1, :] -= ex[:-1, :]
        ge[:, 1:] += ey[:, :-1]
        ge[:, :-1] -= ey[:, :-1]
        ge *= p * hp / den
        return gn - ge

    rng = np.random.default_rng(seed)
    start_fields = [rng.standard_normal(dom.shape) for _ in range(n_starts)]
    start_fields.append(np.where(live, rho.rho, 0.0))  # the distance ramp
    per_start = min(max_iter, max(1000, max_iter // len(start_fields)))
    precond = _make_preconditioner(dom, rho, 0.0, live)

    def one(u0):
        return _ascend(u0, num_fn, den_fn, grad_fn, project, per_start, tol, precond)

    u, _, iters, res, conv = _run_starts(start_fields, one)
    trial = ScalarField(values=np.where(live, u, 0.0), h=h)
    value = hardy_quotient(dom, rho, trial, p)
    return ConstantEstimate(
        value=value,
        kind="ascent_estimate",
        trial=trial,
        iterations=iters,
        residual=res,
        converged=conv,
        seed=seed,
    )


# -------------------------------------------------------------- duality


@dataclass
class DualityReport:
    """Both sides of the pairing identity and the Holder chain."""

    lhs: float  # |<f, u - u_mean>|
    rhs: float  # |<v, grad u>|
    identity_rel_err: float
    identity_ok: bool
    holder_bound: float  # ||v/rho||_p * ||grad u * rho||_p'
    holder_ok: bool
    slack_ratio: float
    p: float

    def to_json(self, path: Union[str, Path, None] = None) -> str:
        payload = {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "identity_rel_err": self.identity_rel_err,
            "identity_ok": self.identity_ok,
            "holder_bound": self.holder_bound,
            "holder_ok": self.holder_ok,
            "slack_ratio": self.slack_ratio,
            "p": self.p,
        }
        text = json.dumps(payload)
        if path is not None:
            Path(path).write_text(text)
        return text


def duality_check(
    dom: GridDomain,
    rho: DistanceField,
    v: VectorField,
    f: ScalarField,
    u: ScalarField,
    p: float = 2.0,
) -> DualityReport:
    """Verify |<f, u - u_mean>| = |<v, grad u>| and its Holder majorant.

    Needs div v = f to 1e-8 relative and f mean-zero; the identity is then
    exact adjointness of the grid divergence and gradient. The Holder side
    pairs v/rho against (grad u) rho face by face with rho averaged onto
    faces, so the inequality holds exactly in exact arithmetic."""
    if not (p > 1.0):
        raise Unsupported(f"the Holder chain needs p > 1, got {p}")
    if not is_zero_trace(v, dom):
        raise Unsupported("v must vanish off the interior faces of the domain")
    h = dom.h
    divv = divergence(v).values
    fv = np.where(dom.mask, f.values, 0.0)
    scale = float(np.abs(fv).max()) + 1e-30
    resid = float(np.sqrt(((divv - fv)[dom.mask] ** 2).sum())
                  / max(np.sqrt((fv[dom.mask] ** 2).sum()), 1e-30))
    if resid > 1e-8 and float(np.abs((divv - fv)[dom.mask]).max()) > 1e-10 * scale:
        raise PreconditionResidual(
            f"div v differs from f: relative residual {resid:.3g}"
        )
    fmean = float(fv[dom.mask].mean())
    if abs(fmean) > 1e-8 * scale:
        raise MeanNotZero(f"f has mean {fmean:.3g}")

    ubar = mean_value(u, dom)
    uc = np.where(dom.mask, u.values - ubar, 0.0)
    lhs = abs(float((fv * uc).sum()) * h * h)
    gu = gradient(u)
    rhs = abs(grid_inner(v.vx, gu.vx, h) + grid_inner(v.vy, gu.vy, h))
    denom = max(lhs, rhs)
    rel = abs(lhs - rhs) / denom if denom > 0 else 0.0

    fx, fy = dom.free_faces
    rr = np.where(dom.mask, rho.rho, 0.0)
    rfx = np.where(fx, 0.5 * (rr + np.roll(rr, -1, axis=0)), 0.0)
    rfy = np.where(fy, 0.5 * (rr + np.roll(rr, -1, axis=1)), 0.0)
    pp = p / (p - 1.0)
    a_p = ((np.abs(v.vx[fx]) / rfx[fx]) ** p).sum() + (
        (np.abs(v.vy[fy]) / rfy[fy]) ** p
    ).sum()
    b_pp = ((np.abs(gu.vx[fx]) * rfx[fx]) ** pp).sum() + (
        (np.abs(gu.vy[fy]) * rfy[fy]) ** pp
    ).sum()
    bound = float(a_p * h * h) ** (1.0 / p) * float(b_pp * h * h) ** (1.0 / pp)
    holder_ok = lhs <= bound * (1.0 + 1e-9) + 1e-30
    return DualityReport(
        lhs=lhs,
        rhs=rhs,
        identity_rel_err=rel,
        identity_ok=rel <= 1e-9,
        holder_bound=bound,
        holder_ok=holder_ok,
        slack_ratio=bound / lhs if lhs > 0 else math.inf,
        p=p,
    )
