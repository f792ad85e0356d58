"""Linear torus flows against shrinking targets.

A scene fixes the flow start and direction, k target normal directions and
centers, and the target cross-sections, all as expression families of the
parameter s.  Hits are enumerated in closed form per lattice translate by
covering the flow segment with unit sub-segments; an independent
time-stepping oracle (march, bracket the rotated first coordinate, bisect)
verifies the event sets on the same scenes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import BudgetError, ConfigError, DegenerateInputError
from .funcspec import FuncFamily, evaluate, parse, vector_family
from .groups import rotation_to_e1
from .regions import Ball, Box, LinearImage, Region

TANGENT_TOL = 1e-9
_TIE = 1e-12


@dataclass(frozen=True)
class RegionSpec:
    """Box or ball in the cross-section, with s-dependent size expressions."""

    kind: str
    lo: tuple | None = None
    hi: tuple | None = None
    center: tuple | None = None
    radius: object | None = None

    @staticmethod
    def from_dict(data: dict, n_vars: int, dim: int) -> "RegionSpec":
        kind = data.get("type")
        if kind == "box":
            extra = set(data) - {"type", "lo", "hi"}
            if extra:
                raise ConfigError(f"unknown region keys {sorted(extra)}")
            lo = tuple(parse(t, n_vars) for t in data["lo"])
            hi = tuple(parse(t, n_vars) for t in data["hi"])
            if len(lo) != dim or len(hi) != dim:
                raise ConfigError(f"box bounds must have dimension {dim}")
            return RegionSpec("box", lo=lo, hi=hi)
        if kind == "ball":
            extra = set(data) - {"type", "center", "radius"}
            if extra:
                raise ConfigError(f"unknown region keys {sorted(extra)}")
            center = tuple(parse(t, n_vars) for t in data["center"])
            if len(center) != dim:
                raise ConfigError(f"ball center must have dimension {dim}")
            return RegionSpec("ball", center=center, radius=parse(data["radius"], n_vars))
        raise ConfigError(f"unknown region type {kind!r}")

    def region_at(self, s) -> Region:
        if self.kind == "box":
            return Box([evaluate(e, s) for e in self.lo], [evaluate(e, s) for e in self.hi])
        return Ball([evaluate(e, s) for e in self.center], evaluate(self.radius, s))


@dataclass(frozen=True)
class Scene:
    """d-torus flow scene over a parameter box in R^{d-1}."""

    d: int
    k: int
    lo: np.ndarray
    hi: np.ndarray
    theta: FuncFamily
    f: FuncFamily
    u: tuple
    phi: tuple
    omega: tuple

    def __post_init__(self):
        if not (2 <= self.d <= 6):
            raise ConfigError(f"d={self.d} outside supported range [2, 6]")
        if not (1 <= self.k == len(self.u) == len(self.phi) == len(self.omega)):
            raise ConfigError("k must match the number of targets")

    @property
    def n_vars(self) -> int:
        return self.d - 1

    def at(self, s) -> "SceneAt":
        s = np.atleast_1d(np.asarray(s, dtype=float))
        fv = self.f.vector(s)
        uv = [u.vector(s) for u in self.u]
        omegas = []
        for j, (u_j, spec) in enumerate(zip(uv, self.omega)):
            dot = float(u_j @ fv)
            if dot <= TANGENT_TOL:
                raise DegenerateInputError(f"target {j} tangential: u.f = {dot:.3e} <= {TANGENT_TOL}")
            region = spec.region_at(s)
            if region.volume() <= 0:
                raise DegenerateInputError(f"target {j} has empty cross-section")
            omegas.append(region)
        return SceneAt(
            s=s,
            d=self.d,
            k=self.k,
            theta=self.theta.vector(s),
            f=fv,
            u=tuple(uv),
            phi=tuple(p.vector(s) for p in self.phi),
            omega=tuple(omegas),
        )


@dataclass(frozen=True)
class SceneAt:
    s: np.ndarray
    d: int
    k: int
    theta: np.ndarray
    f: np.ndarray
    u: tuple
    phi: tuple
    omega: tuple


def scene_from_dict(data: dict) -> Scene:
    allowed = {"d", "k", "domain", "theta", "f", "targets"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown scene keys {sorted(extra)}")
    try:
        d = int(data["d"])
        k = int(data["k"])
        dom = data["domain"]
        if set(dom) - {"lo", "hi"}:
            raise ConfigError(f"unknown domain keys {sorted(set(dom) - {'lo', 'hi'})}")
        lo = np.asarray(dom["lo"], dtype=float)
        hi = np.asarray(dom["hi"], dtype=float)
        n_vars = d - 1
        theta = vector_family(data["theta"], n_vars)
        f = vector_family(data["f"], n_vars, normalize=True)
        targets = data["targets"]
        if len(targets) != k:
            raise ConfigError(f"expected {k} targets, got {len(targets)}")
        us, phis, omegas = [], [], []
        for tgt in targets:
            if set(tgt) - {"u", "phi", "omega"}:
                raise ConfigError(f"unknown target keys {sorted(set(tgt) - {'u', 'phi', 'omega'})}")
            us.append(vector_family(tgt["u"], n_vars, normalize=True))
            phis.append(vector_family(tgt["phi"], n_vars))
            omegas.append(RegionSpec.from_dict(tgt["omega"], n_vars, d - 1))
    except KeyError as exc:
        raise ConfigError(f"missing scene key {exc}") from exc
    if lo.shape != (n_vars,) or hi.shape != (n_vars,) or np.any(hi <= lo):
        raise ConfigError("scene domain must be a nondegenerate box in R^{d-1}")
    if any(fam.shape != (d, 1) for fam in [theta, f] + us + phis):
        raise ConfigError("theta, f, u_j, phi_j must all be d-vectors of expressions")
    return Scene(d, k, lo, hi, theta, f, tuple(us), tuple(phis), tuple(omegas))


# ---------------------------------------------------------------------------
# normalization geometry


def mean_return_sigma(at: SceneAt) -> float:
    """1 / sum_j |Omega_j| (u_j . f): the cross-section flux normalizer."""
    total = sum(region.volume() * float(u @ at.f) for region, u in zip(at.omega, at.u))
    if total <= 0:
        raise DegenerateInputError("zero total flux through the targets")
    return 1.0 / total


def target_rotation(at: SceneAt, j: int) -> np.ndarray:
    """(d-1)-square block of R_f R_u^{-1} acting on target-local coordinates."""
    full = rotation_to_e1(at.f) @ rotation_to_e1(at.u[j]).T
    return full[1:, 1:]


def normalized_target(at: SceneAt, j: int) -> Region:
    """The flux-normalized rotated cross-section; the k of them tile a unit
    of volume: sum_j |normalized_target(j)| = 1."""
    sigma = mean_return_sigma(at)
    scale = sigma ** (1.0 / (at.d - 1))
    return LinearImage(scale * target_rotation(at, j), at.omega[j])


# ---------------------------------------------------------------------------
# hit enumeration


@dataclass(frozen=True)
class HitSeries:
    """Hitting events sorted by time (ties within 1e-12 ordered by target)."""

    times: np.ndarray
    targets: np.ndarray
    locals: np.ndarray
    kvecs: np.ndarray

    def __len__(self) -> int:
        return len(self.times)


def _sorted_series(times, targets, locs, kvecs, d) -> HitSeries:
    times = np.asarray(times, dtype=float)
    targets = np.asarray(targets, dtype=np.int64)
    locs = np.asarray(locs, dtype=float).reshape(len(times), d - 1)
    kvecs = np.asarray(kvecs, dtype=np.int64).reshape(len(times), d)
    order = np.lexsort((targets, times))
    times, targets, locs, kvecs = times[order], targets[order], locs[order], kvecs[order]
    # near-simultaneous hits (within 1e-12) are ordered by target index
    i = 0
    while i + 1 < len(times):
        if times[i + 1] - times[i] <= _TIE * max(1.0, abs(times[i])) and targets[i + 1] < targets[i]:
            for arr in (times, targets, locs, kvecs):
                arr[[i, i + 1]] = arr[[i + 1, i]]
            i = max(i - 1, 0)
        else:
            i += 1
    return HitSeries(times, targets, locs, kvecs)


def _segment_candidates(start, direction, t_max, radius, budget):
    """Integer points within ``radius`` of {start + t direction : 0 <= t <= t_max}."""
    d = start.shape[0]
    n_seg = max(1, int(math.ceil(t_max)))
    seg_len = t_max / n_seg
    mids = start[None, :] + ((np.arange(n_seg) + 0.5) * seg_len)[:, None] * direction[None, :]
    reach = radius + 0.5 * seg_len * float(np.linalg.norm(direction)) + 1e-9
    los = np.ceil(mids - reach).astype(np.int64)
    his = np.floor(mids + reach).astype(np.int64)
    width = int((his - los).max() + 1) if n_seg else 0
    per_box = width**d
    if n_seg * per_box > budget:
        raise BudgetError(f"candidate enumeration {n_seg * per_box} exceeds budget {budget}")
    offs = np.stack(np.meshgrid(*([np.arange(width)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    cand = (los[:, None, :] + offs[None, :, :]).reshape(-1, d)
    keep = np.all(cand <= his[:, None, :].repeat(len(offs), axis=1).reshape(-1, d), axis=1)
    return np.unique(cand[keep], axis=0)


def hit_times(scene: Scene, s, l: float, t_max: float, budget: int = 10**7) -> HitSeries:
    """All hits of the flow against the level-l targets up to time ``t_max``.

    Per target j and lattice translate k the crossing time is
    t(k) = u . (phi + k - theta) / (u . f); the hit is accepted when
    0 < t(k) <= t_max and the rescaled transverse coordinate lands in the
    cross-section.  Candidates k come from covering the flow segment with
    unit sub-segments.
    """
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    at = scene.at(s)
    all_t, all_j, all_x, all_k = [], [], [], []
    for j in range(scene.k):
        u = at.u[j]
        denom = float(u @ at.f)
        rot = rotation_to_e1(u)
        centre, rad = at.omega[j].bounding_sphere()
        rho = math.exp(-l) * (float(np.linalg.norm(centre)) + rad) + 1e-9
        cand = _segment_candidates(at.theta - at.phi[j], at.f, t_max, rho, budget)
        if cand.size == 0:
            continue
        t_cand = (cand + (at.phi[j] - at.theta)[None, :]) @ u / denom
        mask = (t_cand > 0) & (t_cand <= t_max)
        cand, t_cand = cand[mask], t_cand[mask]
        disp = (at.theta - at.phi[j])[None, :] + t_cand[:, None] * at.f[None, :] - cand
        x_loc = math.exp(l) * (disp @ rot.T)[:, 1:]
        inside = at.omega[j].contains_many(x_loc)
        all_t.append(t_cand[inside])
        all_j.append(np.full(int(inside.sum()), j, dtype=np.int64))
        all_x.append(x_loc[inside])
        all_k.append(cand[inside])
        if sum(len(a) for a in all_t) > budget:
            raise BudgetError(f"event count exceeded budget {budget}")
    if not all_t:
        return HitSeries(np.zeros(0), np.zeros(0, np.int64), np.zeros((0, scene.d - 1)), np.zeros((0, scene.d), np.int64))
    return _sorted_series(
        np.concatenate(all_t), np.concatenate(all_j), np.concatenate(all_x), np.concatenate(all_k), scene.d
    )


def hit_times_stepping(scene: Scene, s, l: float, t_max: float, window: int = 1 << 16) -> HitSeries:
    """Time-stepping oracle for ``hit_times``.

    Marches with step e^{-l}/(8 |f|), collects the integer cells the
    trajectory visits, brackets the sign change of the rotated first
    coordinate per cell, bisects for the crossing time, and applies the
    same transverse acceptance test.  Independent of the segment-covering
    enumeration; used to cross-validate event sets.
    """
    at = scene.at(s)
    dt = math.exp(-l) / (8.0 * float(np.linalg.norm(at.f)))
    n_steps = int(math.ceil(t_max / dt))
    events = {}
    for j in range(scene.k):
        u = at.u[j]
        denom = float(u @ at.f)
        rot = rotation_to_e1(u)
        centre, rad = at.omega[j].bounding_sphere()
        rho_eff = math.exp(-l) * (float(np.linalg.norm(centre)) + rad)
        noff = int(math.floor(rho_eff + 0.5 * dt + 0.5 + 1e-9))
        offs_axis = np.arange(-noff, noff + 1)
        offs = np.stack(np.meshgrid(*([offs_axis] * scene.d), indexing="ij"), axis=-1).reshape(-1, scene.d)
        base = at.theta - at.phi[j]
        for w_start in range(0, n_steps, window):
            w_end = min(w_start + window, n_steps)
            ts = np.arange(w_start, w_end + 1) * dt
            ts[-1] = min(ts[-1], t_max)
            pos = base[None, :] + ts[:, None] * at.f[None, :]
            cells = np.unique(np.round(pos).astype(np.int64), axis=0)
            cand = np.unique((cells[:, None, :] + offs[None, :, :]).reshape(-1, scene.d), axis=0)
            h_lo = (base - cand) @ u + ts[0] * denom
            h_hi = (base - cand) @ u + ts[-1] * denom
            bracket = (h_lo < 0) & (h_hi >= 0)
            cand = cand[bracket]
            if cand.size == 0:
                continue
            t_lo = np.full(len(cand), ts[0])
            t_hi = np.full(len(cand), ts[-1])
            hb = (base - cand) @ u
            for _ in range(64):
                mid = 0.5 * (t_lo + t_hi)
                below = hb + mid * denom < 0
                t_lo = np.where(below, mid, t_lo)
                t_hi = np.where(below, t_hi, mid)
            t_star = t_hi
            ok = (t_star > 0) & (t_star <= t_max)
            disp = base[None, :] + t_star[:, None] * at.f[None, :] - cand
            x_loc = math.exp(l) * (disp @ rot.T)[:, 1:]
            ok &= at.omega[j].contains_many(x_loc)
            for idx in np.nonzero(ok)[0]:
                events[(j, tuple(int(v) for v in cand[idx]))] = (float(t_star[idx]), x_loc[idx])
    if not events:
        return HitSeries(np.zeros(0), np.zeros(0, np.int64), np.zeros((0, scene.d - 1)), np.zeros((0, scene.d), np.int64))
    keys = list(events.keys())
    times = [events[key][0] for key in keys]
    locs = [events[key][1] for key in keys]
    return _sorted_series(times, [key[0] for key in keys], locs, [key[1] for key in keys], scene.d)


def normalized_times(series: HitSeries, scene: Scene, s, l: float) -> np.ndarray:
    """Hit times divided by the mean return time e^{(d-1)l} sigma(s)."""
    sigma = mean_return_sigma(scene.at(s))
    return series.times / (math.exp((scene.d - 1) * l) * sigma)


# ---------------------------------------------------------------------------
# rational-relation screening


def rational_relation_witness(f_value, height: int, tol: float = 1e-10):
    """Integer vector q with sup-norm at most ``height`` and |q.f| < tol ||q||,
    or None when no such relation exists within the bound.

    The d = 2 search is exhaustive (for each q1 the optimal q2 is the
    nearest integer; denominators arise along the continued-fraction
    convergents of the slope).  For d >= 3 the coefficient box is enumerated
    exhaustively while it fits the budget; beyond that a lattice-reduction
    search is used, which can miss relations and is documented as a
    screening heuristic only.
    """
    if height > 10**6:
        raise ValueError("height bound capped at 1e6")
    f = np.asarray(f_value, dtype=float)
    d = f.shape[0]
    scale = float(np.linalg.norm(f))
    if scale == 0:
        raise ValueError("zero direction vector")
    f = f / scale
    for i in range(d):
        if abs(f[i]) < tol:
            q = np.zeros(d, dtype=np.int64)
            q[i] = 1
            return q
    if d == 2:
        i, j = (0, 1) if abs(f[0]) <= abs(f[1]) else (1, 0)
        alpha = f[i] / f[j]  # |alpha| <= 1
        q1 = np.arange(1, height + 1, dtype=np.int64)
        q2 = -np.round(q1 * alpha).astype(np.int64)
        ok = np.abs(q2) <= height
        resid = np.abs(q1 * f[i] + q2 * f[j])
        norms = np.hypot(q1, q2)
        hits = np.nonzero(ok & (resid < tol * norms))[0]
        if hits.size == 0:
            return None
        best = hits[0]
        q = np.zeros(2, dtype=np.int64)
        q[i], q[j] = q1[best], q2[best]
        return q
    if (2 * height + 1) ** d <= 2 * 10**6:
        axis = np.arange(-height, height + 1)
        grids = np.meshgrid(*([axis] * d), indexing="ij")
        qs = np.stack([g.ravel() for g in grids], axis=1)
        qs = qs[np.any(qs != 0, axis=1)]
        resid = np.abs(qs @ f)
        norms = np.linalg.norm(qs, axis=1)
        hits = np.nonzero(resid < tol * norms)[0]
        if hits.size == 0:
            return None
        best = hits[np.argmin(norms[hits])]
        return qs[best].astype(np.int64)
    from .lattice import lll_reduce

    scaling = 10.0 / tol
    basis = np.vstack([np.eye(d), scaling * f[None, :]])  # columns span {(q, N q.f)}
    _, trans = lll_reduce(basis)
    for col in range(trans.shape[1]):
        q = trans[:, col].astype(np.int64)
        if np.any(q) and np.abs(q).max() <= height:
            if abs(float(q @ f)) < tol * float(np.linalg.norm(q)):
                return q
    return None
